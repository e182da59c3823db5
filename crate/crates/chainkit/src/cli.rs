//! Config-driven command-line front end.
//!
//! The config format is line-oriented `key = value` text with `[level j]`
//! and `[coupling j]` sections (1-based). Top-level keys come first:
//! levels, particles, basis (all|even|odd), order, truncation, seed, tol,
//! steps, thin. Inside `[level j]`: space (`interval a b` or
//! `discrete x1:w1,x2:w2,...`), potential (`quadratic`, `quartic c2 c4`,
//! `custom-poly c0 c1 ...`), order, and the repeatable operation inputs `set`
//! (`weight : interval a b` or `weight : nodes i j ...`), `atom`
//! (`weight : location`), `region` (`interval a b` or `nodes i j ...`),
//! and `point` (one coordinate). Inside `[coupling j]`: `kind =
//! exponential | cosh | sinh | power-law z a | series r1 r2 ...`.
//! Missing spaces and potentials default to a Gaussian on
//! [-truncation, truncation]; interval boundaries of regions and rho sets
//! split quadrature panels so indicators align with panel edges.
//!
//! Exit codes: 0 success, 1 computation failure, 2 config error,
//! 3 identity violation beyond tolerance. Errors raised before the chain
//! is built count as config errors. Output is CSV with 17 significant
//! digits, built in memory and written in one piece so identical inputs
//! give byte-identical results.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::chain_model::{BasisFamily, ChainSpec, Coupling, Parity, Potential, PotentialForm};
use crate::kernel::Ensemble;
use crate::measure::{composite_rule, discrete_space};
use crate::oracle;
use crate::statistics::{
    self, Atom, LevelRho, Region, RhoSpec, WeightedSet,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum SpaceDef {
    Interval(f64, f64),
    Discrete(Vec<(f64, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialDef {
    Quadratic,
    Quartic(f64, f64),
    Poly(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CouplingDef {
    Exponential,
    Cosh,
    Sinh,
    PowerLaw(f64, f64),
    Series(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegionDef {
    Interval(f64, f64),
    Nodes(Vec<usize>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelConfig {
    pub space: Option<SpaceDef>,
    pub potential: Option<PotentialDef>,
    pub order: Option<usize>,
    pub sets: Vec<(f64, RegionDef)>,
    pub atoms: Vec<(f64, f64)>,
    pub regions: Vec<RegionDef>,
    pub points: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub levels: usize,
    pub particles: usize,
    pub basis: BasisFamily,
    pub order: usize,
    pub truncation: f64,
    pub seed: u64,
    pub tol: f64,
    pub steps: u64,
    pub thin: u64,
    pub level: Vec<LevelConfig>,
    pub couplings: Vec<CouplingDef>,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            levels: 1,
            particles: 1,
            basis: BasisFamily::AllMonomials,
            order: 64,
            truncation: 8.0,
            seed: 0,
            tol: 1e-8,
            steps: 200_000,
            thin: 1_000,
            level: vec![LevelConfig::default()],
            couplings: vec![],
        }
    }
}

fn config_err(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {message}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, token: &str, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| config_err(line, format!("cannot parse {what} from '{token}'")))
}

fn parse_floats(line: usize, text: &str, what: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| parse_num(line, t, what))
        .collect()
}

fn parse_region(line: usize, text: &str) -> Result<RegionDef> {
    let (head, rest) = text
        .trim()
        .split_once(char::is_whitespace)
        .ok_or_else(|| config_err(line, "region needs 'interval a b' or 'nodes i j ...'"))?;
    match head {
        "interval" => {
            let v = parse_floats(line, rest, "interval endpoint")?;
            if v.len() != 2 {
                return Err(config_err(line, "interval takes two endpoints"));
            }
            Ok(RegionDef::Interval(v[0], v[1]))
        }
        "nodes" => {
            let idx: Vec<usize> = rest
                .split_whitespace()
                .map(|t| parse_num(line, t, "node index"))
                .collect::<Result<_>>()?;
            if idx.is_empty() {
                return Err(config_err(line, "nodes needs at least one index"));
            }
            Ok(RegionDef::Nodes(idx))
        }
        other => Err(config_err(line, format!("unknown region kind '{other}'"))),
    }
}

enum SectionRef {
    Top,
    Level(usize),
    Coupling(usize),
}

pub fn parse_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut levels_seen: Option<usize> = None;
    let mut level_sections: Vec<(usize, LevelConfig)> = Vec::new();
    let mut coupling_sections: Vec<(usize, CouplingDef)> = Vec::new();
    let mut section = SectionRef::Top;
    // Scalar keys reject repeats; the booleans track what the current
    // section has consumed.
    let mut seen_space = false;
    let mut seen_potential = false;
    let mut seen_order = false;
    let mut seen_kind = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| config_err(line, "unterminated section header"))?
                .trim();
            let (kind, idx) = name
                .split_once(char::is_whitespace)
                .ok_or_else(|| config_err(line, format!("bad section '[{name}]'")))?;
            let j: usize = parse_num(line, idx.trim(), "section index")?;
            if j == 0 {
                return Err(config_err(line, "sections are numbered from 1"));
            }
            section = match kind {
                "level" => {
                    level_sections.push((j - 1, LevelConfig::default()));
                    SectionRef::Level(level_sections.len() - 1)
                }
                "coupling" => {
                    coupling_sections.push((j - 1, CouplingDef::Exponential));
                    SectionRef::Coupling(coupling_sections.len() - 1)
                }
                other => return Err(config_err(line, format!("unknown section '{other}'"))),
            };
            seen_space = false;
            seen_potential = false;
            seen_order = false;
            seen_kind = false;
            continue;
        }

        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, "expected 'key = value'"))?;
        let key = key.trim();
        let value = value.trim();

        match section {
            SectionRef::Top => match key {
                "levels" => {
                    cfg.levels = parse_num(line, value, "levels")?;
                    if cfg.levels == 0 {
                        return Err(config_err(line, "levels must be at least 1"));
                    }
                    levels_seen = Some(cfg.levels);
                }
                "particles" => {
                    cfg.particles = parse_num(line, value, "particles")?;
                    if cfg.particles == 0 {
                        return Err(config_err(line, "particles must be at least 1"));
                    }
                }
                "basis" => {
                    cfg.basis = match value {
                        "all" => BasisFamily::AllMonomials,
                        "even" => BasisFamily::EvenMonomials,
                        "odd" => BasisFamily::OddMonomials,
                        other => {
                            return Err(config_err(
                                line,
                                format!("basis must be all, even, or odd, not '{other}'"),
                            ))
                        }
                    };
                }
                "order" => cfg.order = parse_num(line, value, "order")?,
                "truncation" => cfg.truncation = parse_num(line, value, "truncation")?,
                "seed" => cfg.seed = parse_num(line, value, "seed")?,
                "tol" => cfg.tol = parse_num(line, value, "tol")?,
                "steps" => cfg.steps = parse_num(line, value, "steps")?,
                "thin" => cfg.thin = parse_num(line, value, "thin")?,
                other => {
                    return Err(config_err(line, format!("unknown key '{other}'")))
                }
            },
            SectionRef::Level(slot) => {
                let level = &mut level_sections[slot].1;
                match key {
                    "space" => {
                        if seen_space {
                            return Err(config_err(line, "space already set"));
                        }
                        seen_space = true;
                        level.space = Some(parse_space(line, value)?);
                    }
                    "potential" => {
                        if seen_potential {
                            return Err(config_err(line, "potential already set"));
                        }
                        seen_potential = true;
                        level.potential = Some(parse_potential(line, value)?);
                    }
                    "order" => {
                        if seen_order {
                            return Err(config_err(line, "order already set"));
                        }
                        seen_order = true;
                        level.order = Some(parse_num(line, value, "order")?);
                    }
                    "set" => {
                        let (w, region) = value.split_once(':').ok_or_else(|| {
                            config_err(line, "set needs 'weight : region'")
                        })?;
                        level.sets.push((
                            parse_num(line, w.trim(), "set weight")?,
                            parse_region(line, region)?,
                        ));
                    }
                    "atom" => {
                        let (w, x) = value.split_once(':').ok_or_else(|| {
                            config_err(line, "atom needs 'weight : location'")
                        })?;
                        level.atoms.push((
                            parse_num(line, w.trim(), "atom weight")?,
                            parse_num(line, x.trim(), "atom location")?,
                        ));
                    }
                    "region" => level.regions.push(parse_region(line, value)?),
                    "point" => level.points.push(parse_num(line, value, "point")?),
                    other => {
                        return Err(config_err(
                            line,
                            format!("unknown key '{other}' in [level]"),
                        ))
                    }
                }
            }
            SectionRef::Coupling(slot) => match key {
                "kind" => {
                    if seen_kind {
                        return Err(config_err(line, "kind already set"));
                    }
                    seen_kind = true;
                    coupling_sections[slot].1 = parse_coupling(line, value)?;
                }
                other => {
                    return Err(config_err(
                        line,
                        format!("unknown key '{other}' in [coupling]"),
                    ))
                }
            },
        }
    }

    if levels_seen.is_none() && !level_sections.is_empty() {
        cfg.levels = level_sections.iter().map(|(j, _)| j + 1).max().unwrap();
    }
    cfg.level = vec![LevelConfig::default(); cfg.levels];
    for (j, level) in level_sections {
        if j >= cfg.levels {
            return Err(Error::Config(format!(
                "[level {}] exceeds levels = {}",
                j + 1,
                cfg.levels
            )));
        }
        cfg.level[j] = level;
    }
    cfg.couplings = Vec::new();
    let mut provided = vec![None; cfg.levels.saturating_sub(1)];
    for (j, c) in coupling_sections {
        if j + 1 >= cfg.levels {
            return Err(Error::Config(format!(
                "[coupling {}] exceeds the {} couplings of a {}-level chain",
                j + 1,
                cfg.levels.saturating_sub(1),
                cfg.levels
            )));
        }
        provided[j] = Some(c);
    }
    for (j, c) in provided.into_iter().enumerate() {
        match c {
            Some(c) => cfg.couplings.push(c),
            None => {
                return Err(Error::Config(format!(
                    "missing [coupling {}] section for a {}-level chain",
                    j + 1,
                    cfg.levels
                )))
            }
        }
    }
    Ok(cfg)
}

fn parse_space(line: usize, value: &str) -> Result<SpaceDef> {
    let (head, rest) = value
        .split_once(char::is_whitespace)
        .ok_or_else(|| config_err(line, "space needs 'interval a b' or 'discrete ...'"))?;
    match head {
        "interval" => {
            let v = parse_floats(line, rest, "interval endpoint")?;
            if v.len() != 2 {
                return Err(config_err(line, "interval takes two endpoints"));
            }
            Ok(SpaceDef::Interval(v[0], v[1]))
        }
        "discrete" => {
            let mut pairs = Vec::new();
            for item in rest.split(',') {
                let (x, w) = item.trim().split_once(':').ok_or_else(|| {
                    config_err(line, format!("discrete entry '{item}' needs x:w"))
                })?;
                pairs.push((
                    parse_num(line, x.trim(), "node")?,
                    parse_num(line, w.trim(), "node weight")?,
                ));
            }
            Ok(SpaceDef::Discrete(pairs))
        }
        other => Err(config_err(line, format!("unknown space kind '{other}'"))),
    }
}

fn parse_potential(line: usize, value: &str) -> Result<PotentialDef> {
    let mut it = value.split_whitespace();
    match it.next() {
        Some("quadratic") => Ok(PotentialDef::Quadratic),
        Some("quartic") => {
            let rest: Vec<f64> = it
                .map(|t| parse_num(line, t, "quartic coefficient"))
                .collect::<Result<_>>()?;
            if rest.len() != 2 {
                return Err(config_err(line, "quartic takes c2 c4"));
            }
            Ok(PotentialDef::Quartic(rest[0], rest[1]))
        }
        Some("custom-poly") => {
            let rest: Vec<f64> = it
                .map(|t| parse_num(line, t, "poly coefficient"))
                .collect::<Result<_>>()?;
            Ok(PotentialDef::Poly(rest))
        }
        _ => Err(config_err(line, format!("unknown potential '{value}'"))),
    }
}

fn parse_coupling(line: usize, value: &str) -> Result<CouplingDef> {
    let mut it = value.split_whitespace();
    match it.next() {
        Some("exponential") => Ok(CouplingDef::Exponential),
        Some("cosh") => Ok(CouplingDef::Cosh),
        Some("sinh") => Ok(CouplingDef::Sinh),
        Some("power-law") => {
            let rest: Vec<f64> = it
                .map(|t| parse_num(line, t, "power-law parameter"))
                .collect::<Result<_>>()?;
            if rest.len() != 2 {
                return Err(config_err(line, "power-law takes z a"));
            }
            Ok(CouplingDef::PowerLaw(rest[0], rest[1]))
        }
        Some("series") => {
            let rest: Vec<f64> = it
                .map(|t| parse_num(line, t, "series coefficient"))
                .collect::<Result<_>>()?;
            if rest.is_empty() {
                return Err(config_err(line, "series needs coefficients"));
            }
            Ok(CouplingDef::Series(rest))
        }
        _ => Err(config_err(line, format!("unknown coupling '{value}'"))),
    }
}

/// Canonical text form; `parse_config(emit_config(c)) == c`.
pub fn emit_config(cfg: &Config) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "levels = {}", cfg.levels);
    let _ = writeln!(out, "particles = {}", cfg.particles);
    let basis = match cfg.basis {
        BasisFamily::AllMonomials => "all",
        BasisFamily::EvenMonomials => "even",
        BasisFamily::OddMonomials => "odd",
    };
    let _ = writeln!(out, "basis = {basis}");
    let _ = writeln!(out, "order = {}", cfg.order);
    let _ = writeln!(out, "truncation = {}", cfg.truncation);
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "tol = {}", cfg.tol);
    let _ = writeln!(out, "steps = {}", cfg.steps);
    let _ = writeln!(out, "thin = {}", cfg.thin);
    let region_text = |r: &RegionDef| -> String {
        match r {
            RegionDef::Interval(a, b) => format!("interval {a} {b}"),
            RegionDef::Nodes(idx) => {
                let list: Vec<String> = idx.iter().map(|q| q.to_string()).collect();
                format!("nodes {}", list.join(" "))
            }
        }
    };
    for (j, level) in cfg.level.iter().enumerate() {
        let _ = writeln!(out, "\n[level {}]", j + 1);
        if let Some(space) = &level.space {
            match space {
                SpaceDef::Interval(a, b) => {
                    let _ = writeln!(out, "space = interval {a} {b}");
                }
                SpaceDef::Discrete(pairs) => {
                    let items: Vec<String> =
                        pairs.iter().map(|(x, w)| format!("{x}:{w}")).collect();
                    let _ = writeln!(out, "space = discrete {}", items.join(","));
                }
            }
        }
        if let Some(potential) = &level.potential {
            match potential {
                PotentialDef::Quadratic => {
                    let _ = writeln!(out, "potential = quadratic");
                }
                PotentialDef::Quartic(c2, c4) => {
                    let _ = writeln!(out, "potential = quartic {c2} {c4}");
                }
                PotentialDef::Poly(c) => {
                    let list: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(out, "potential = custom-poly {}", list.join(" "));
                }
            }
        }
        if let Some(order) = level.order {
            let _ = writeln!(out, "order = {order}");
        }
        for (w, region) in &level.sets {
            let _ = writeln!(out, "set = {w} : {}", region_text(region));
        }
        for (w, x) in &level.atoms {
            let _ = writeln!(out, "atom = {w} : {x}");
        }
        for region in &level.regions {
            let _ = writeln!(out, "region = {}", region_text(region));
        }
        for point in &level.points {
            let _ = writeln!(out, "point = {point}");
        }
    }
    for (j, coupling) in cfg.couplings.iter().enumerate() {
        let _ = writeln!(out, "\n[coupling {}]", j + 1);
        let text = match coupling {
            CouplingDef::Exponential => "exponential".into(),
            CouplingDef::Cosh => "cosh".into(),
            CouplingDef::Sinh => "sinh".into(),
            CouplingDef::PowerLaw(z, a) => format!("power-law {z} {a}"),
            CouplingDef::Series(r) => {
                let list: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                format!("series {}", list.join(" "))
            }
        };
        let _ = writeln!(out, "kind = {text}");
    }
    out
}

impl Config {
    /// Builds the chain: defaults filled in, quadrature panels split at the
    /// interval boundaries of this config's regions and rho sets.
    pub fn to_chain(&self) -> Result<ChainSpec> {
        let parity = if self.basis.requires_symmetry() {
            Parity::Even
        } else {
            Parity::Any
        };
        let mut spaces = Vec::with_capacity(self.levels);
        let mut potentials = Vec::with_capacity(self.levels);
        for level in &self.level {
            let order = level.order.unwrap_or(self.order);
            let mut cuts: Vec<f64> = Vec::new();
            for (_, r) in &level.sets {
                if let RegionDef::Interval(a, b) = r {
                    cuts.push(*a);
                    cuts.push(*b);
                }
            }
            for r in &level.regions {
                if let RegionDef::Interval(a, b) = r {
                    cuts.push(*a);
                    cuts.push(*b);
                }
            }
            let space = match &level.space {
                None => composite_rule(order, &[(-self.truncation, self.truncation)], 1)?,
                Some(SpaceDef::Interval(a, b)) => composite_rule(order, &[(*a, *b)], 1)?,
                Some(SpaceDef::Discrete(pairs)) => {
                    let (xs, ws): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                    discrete_space(&xs, &ws)?
                }
            };
            spaces.push(space.with_boundaries(&cuts)?);
            let form = match level.potential.clone().unwrap_or(PotentialDef::Quadratic) {
                PotentialDef::Quadratic => PotentialForm::Quadratic,
                PotentialDef::Quartic(c2, c4) => PotentialForm::Quartic { c2, c4 },
                PotentialDef::Poly(c) => PotentialForm::Polynomial(c),
            };
            potentials.push(Potential::new(form, parity)?);
        }
        let couplings = self
            .couplings
            .iter()
            .map(|c| match c {
                CouplingDef::Exponential => Coupling::Exponential,
                CouplingDef::Cosh => Coupling::Cosh,
                CouplingDef::Sinh => Coupling::Sinh,
                CouplingDef::PowerLaw(z, a) => Coupling::PowerLaw {
                    z: *z,
                    a: *a,
                    n: self.particles,
                },
                CouplingDef::Series(r) => Coupling::Series { coefficients: r.clone() },
            })
            .collect();
        ChainSpec {
            levels: self.levels,
            particles: self.particles,
            spaces,
            potentials,
            couplings,
            basis: self.basis,
        }
        .validate()
    }

    fn region_of(def: &RegionDef) -> Region {
        match def {
            RegionDef::Interval(a, b) => Region::Intervals(vec![(*a, *b)]),
            RegionDef::Nodes(idx) => Region::Nodes(idx.clone()),
        }
    }

    pub fn rho(&self) -> RhoSpec {
        RhoSpec {
            levels: self
                .level
                .iter()
                .map(|l| LevelRho {
                    atoms: l
                        .atoms
                        .iter()
                        .map(|&(weight, location)| Atom { weight, location })
                        .collect(),
                    sets: l
                        .sets
                        .iter()
                        .map(|(weight, r)| WeightedSet {
                            weight: *weight,
                            region: Config::region_of(r),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// One union region per level for gap and janossy. Levels may use
    /// either interval or node regions, not both at once.
    pub fn gap_regions(&self) -> Result<Vec<Region>> {
        self.level
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let mut intervals = Vec::new();
                let mut nodes = Vec::new();
                for r in &l.regions {
                    match r {
                        RegionDef::Interval(a, b) => intervals.push((*a, *b)),
                        RegionDef::Nodes(idx) => nodes.extend_from_slice(idx),
                    }
                }
                if !intervals.is_empty() && !nodes.is_empty() {
                    return Err(Error::Config(format!(
                        "level {}: cannot union interval and node regions",
                        j + 1
                    )));
                }
                if nodes.is_empty() {
                    Ok(Region::Intervals(intervals))
                } else {
                    nodes.sort_unstable();
                    nodes.dedup();
                    Ok(Region::Nodes(nodes))
                }
            })
            .collect()
    }

    /// Each region line is one labeled counting variable.
    pub fn count_regions(&self) -> Vec<Vec<Region>> {
        self.level
            .iter()
            .map(|l| l.regions.iter().map(Config::region_of).collect())
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.level.iter().map(|l| l.points.clone()).collect()
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "chainkit",
    about = "Determinantal statistics of coupled random-matrix chains",
    version
)]
pub struct Cli {
    /// Chain and operation description; defaults to a one-level Gaussian.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the result table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the byte-reproducible reference mode.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override the config tolerance (verify-identity threshold).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Override the default quadrature order.
    #[arg(long = "quad-order")]
    pub quad_order: Option<usize>,
    /// Override the truncation half-width of defaulted spaces.
    #[arg(long)]
    pub truncation: Option<f64>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Clone, Copy, Debug)]
pub enum Cmd {
    /// Check det(G) against det(I - K rho) for the configured rho.
    VerifyIdentity,
    /// Probability of no points in the configured regions.
    Gap,
    /// Correlation intensity at the configured points.
    Correlator,
    /// Relative and absolute Janossy densities at the configured points.
    Janossy,
    /// Joint occupation-count distribution over the configured regions.
    Counts,
    /// One-point intensity at every grid node.
    Density,
    /// Exhaustive configuration masses of a discrete chain.
    Enumerate,
    /// Metropolis sample stream of configurations.
    Sample,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs one command against a parsed config. Returns the exit code with
/// the stdout and stderr payloads; pure so tests can drive it directly.
pub fn run_command(cmd: Cmd, cfg: &Config) -> (i32, String, String) {
    match execute(cmd, cfg) {
        Ok((code, out, err)) => (code, out, err),
        Err(e) => {
            let code = match e {
                Error::Config(_)
                | Error::InvalidChain(_)
                | Error::InvalidSpace(_)
                | Error::InvalidQuadrature(_)
                | Error::PotentialParity(_)
                | Error::CouplingPole(_)
                | Error::InvalidRho(_)
                | Error::InvalidPoints(_)
                | Error::OverlappingRegions(_) => 2,
                _ => 1,
            };
            (code, String::new(), format!("error: {e}\n"))
        }
    }
}

fn execute(cmd: Cmd, cfg: &Config) -> Result<(i32, String, String)> {
    let ensemble = Ensemble::build(cfg.to_chain()?)?;
    let mut out = String::new();
    let mut err = String::new();
    let mut code = 0;
    match cmd {
        Cmd::VerifyIdentity => {
            let report = statistics::verify_identity(&ensemble, &cfg.rho())?;
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt(report.lhs),
                fmt(report.rhs),
                fmt(report.rel_diff)
            );
            if report.rel_diff > cfg.tol {
                let _ = writeln!(
                    err,
                    "identity violated: rel_diff {} exceeds tolerance {}",
                    fmt(report.rel_diff),
                    cfg.tol
                );
                code = 3;
            }
        }
        Cmd::Gap => {
            let gap = statistics::gap_probability(&ensemble, &cfg.gap_regions()?)?;
            let _ = writeln!(out, "{}", fmt(gap));
        }
        Cmd::Correlator => {
            let value = statistics::correlator(&ensemble, &cfg.points())?;
            let _ = writeln!(out, "{}", fmt(value));
        }
        Cmd::Janossy => {
            let j =
                statistics::janossy_density(&ensemble, &cfg.gap_regions()?, &cfg.points())?;
            let _ = writeln!(out, "{},{}", fmt(j.relative), fmt(j.absolute));
        }
        Cmd::Counts => {
            let gen =
                statistics::counting_generating_function(&ensemble, cfg.count_regions())?;
            let dist = gen.count_probabilities()?;
            let per_axis = ensemble.particles() + 1;
            for (flat, p) in dist.values.iter().enumerate() {
                let mut counts = vec![0usize; dist.axes.len()];
                let mut rest = flat;
                for ax in (0..dist.axes.len()).rev() {
                    counts[ax] = rest % per_axis;
                    rest /= per_axis;
                }
                let cols: Vec<String> = counts.iter().map(|k| k.to_string()).collect();
                let _ = writeln!(out, "{},{}", cols.join(","), fmt(*p));
            }
        }
        Cmd::Density => {
            for j in 0..ensemble.levels() {
                let space = &ensemble.spec().spaces[j];
                for (q, &x) in space.nodes().iter().enumerate() {
                    let value = ensemble.kernel().kcheck_blocks[j][j][(q, q)];
                    let _ = writeln!(out, "{},{},{}", j + 1, fmt(x), fmt(value));
                }
            }
        }
        Cmd::Enumerate => {
            let table = oracle::enumerate(ensemble.spec(), ensemble.bio())?;
            for (config, mass) in &table.configurations {
                let levels: Vec<String> = config
                    .iter()
                    .map(|c| {
                        let idx: Vec<String> = c.iter().map(|q| q.to_string()).collect();
                        idx.join(" ")
                    })
                    .collect();
                let _ = writeln!(out, "{},{}", levels.join(","), fmt(*mass));
            }
            let _ = writeln!(err, "total mass {}", fmt(table.total_mass));
        }
        Cmd::Sample => {
            let thin = cfg.thin.max(1);
            let mut counter = 0u64;
            let stats = {
                let out_ref = &mut out;
                oracle::mcmc_sample(
                    ensemble.spec(),
                    ensemble.bio(),
                    cfg.steps,
                    cfg.seed,
                    move |state| {
                        if counter % thin == 0 {
                            for (j, level) in state.iter().enumerate() {
                                for (a, &x) in level.iter().enumerate() {
                                    let _ =
                                        writeln!(out_ref, "{},{},{}", j + 1, a + 1, fmt(x));
                                }
                            }
                        }
                        counter += 1;
                        0.0
                    },
                )?
            };
            let _ = writeln!(
                err,
                "acceptance {:.3}, negative fraction {:.5}",
                stats.acceptance, stats.negative_fraction
            );
        }
    }
    Ok((code, out, err))
}

/// Full CLI driver: load config, apply flag overrides, dispatch, write.
pub fn run(cli: Cli) -> i32 {
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return 2;
            }
        },
        None => String::new(),
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tol) = cli.tol {
        cfg.tol = tol;
    }
    if let Some(order) = cli.quad_order {
        cfg.order = order;
    }
    if let Some(truncation) = cli.truncation {
        cfg.truncation = truncation;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: threads must be at least 1");
            return 2;
        }
    }
    let (code, out, err) = run_command(cli.command, &cfg);
    if !err.is_empty() {
        eprint!("{err}");
    }
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, out) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return 1;
            }
        }
        None => print!("{out}"),
    }
    code
}
