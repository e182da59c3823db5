//! Occupation statistics of a built chain and the determinant identity
//! connecting them.
//!
//! Everything here revolves around one object: the per-level perturbation
//! rho (point masses plus weighted indicator sets). The weighted pairing
//! matrix G threads (1 - rho_j) factors between transfers, while the block
//! kernel side forms det(I - Kcheck o rho) on the discretized direct sum.
//! The two are equal as finite linear algebra, so the identity holds to
//! roundoff on any fixed grid; gap probabilities, occupation counts, and
//! Janossy densities are all specializations of the rho determinant.

use nalgebra::DMatrix;

use crate::chain_model::ChainSpec;
use crate::kernel::Ensemble;
use crate::linalg;
use crate::measure::{MeasureSpace, SpaceKind};
use crate::{Error, Result};

/// Where an indicator lives: open intervals (endpoints excluded, so panel
/// alignment keeps quadrature nodes unambiguous) or an explicit node subset.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Intervals(Vec<(f64, f64)>),
    Nodes(Vec<usize>),
}

impl Region {
    pub fn contains_node(&self, space: &MeasureSpace, q: usize) -> bool {
        match self {
            Region::Intervals(list) => {
                let x = space.nodes()[q];
                list.iter().any(|&(a, b)| a < x && x < b)
            }
            Region::Nodes(set) => set.contains(&q),
        }
    }

    /// Containment for arbitrary coordinates; a node-subset region contains
    /// a coordinate only when it coincides with a member node.
    pub fn contains_coord(&self, space: &MeasureSpace, x: f64) -> bool {
        match self {
            Region::Intervals(list) => list.iter().any(|&(a, b)| a < x && x < b),
            Region::Nodes(set) => match space.node_index(x, 1e-12) {
                Some(q) => set.contains(&q),
                None => false,
            },
        }
    }

    fn check(&self, space: &MeasureSpace) -> Result<()> {
        match self {
            Region::Intervals(list) => {
                for &(a, b) in list {
                    if a.is_nan() || b.is_nan() || a >= b {
                        return Err(Error::InvalidRho(format!(
                            "interval ({a}, {b}) is empty or not ordered"
                        )));
                    }
                }
            }
            Region::Nodes(set) => {
                for &q in set {
                    if q >= space.len() {
                        return Err(Error::InvalidRho(format!(
                            "node index {q} out of range for a {}-node space",
                            space.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One weighted indicator term of rho.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSet {
    pub weight: f64,
    pub region: Region,
}

/// One weighted point mass of rho. On discrete spaces the location must sit
/// on a node; on quadrature spaces it is handled by rank-one bordering.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub location: f64,
}

/// rho restricted to a single level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelRho {
    pub atoms: Vec<Atom>,
    pub sets: Vec<WeightedSet>,
}

/// The full per-level perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoSpec {
    pub levels: Vec<LevelRho>,
}

impl RhoSpec {
    pub fn zero(levels: usize) -> RhoSpec {
        RhoSpec { levels: vec![LevelRho::default(); levels] }
    }

    /// Indicator-only rho: each level gets its region with weight 1.
    pub fn from_regions(regions: &[Region]) -> RhoSpec {
        RhoSpec {
            levels: regions
                .iter()
                .map(|r| LevelRho {
                    atoms: vec![],
                    sets: vec![WeightedSet { weight: 1.0, region: r.clone() }],
                })
                .collect(),
        }
    }

    pub fn validate(&self, spec: &ChainSpec) -> Result<()> {
        if self.levels.len() != spec.levels {
            return Err(Error::InvalidRho(format!(
                "rho covers {} levels, chain has {}",
                self.levels.len(),
                spec.levels
            )));
        }
        for (j, level) in self.levels.iter().enumerate() {
            let space = &spec.spaces[j];
            for (i, atom) in level.atoms.iter().enumerate() {
                if !atom.location.is_finite() || !atom.weight.is_finite() {
                    return Err(Error::InvalidRho(format!(
                        "level {}: atom ({}, {}) is not finite",
                        j + 1,
                        atom.weight,
                        atom.location
                    )));
                }
                for other in &level.atoms[..i] {
                    if (atom.location - other.location).abs()
                        <= 1e-12 * 1.0_f64.max(atom.location.abs())
                    {
                        return Err(Error::InvalidRho(format!(
                            "level {}: duplicate atom location {}",
                            j + 1,
                            atom.location
                        )));
                    }
                }
                if space.kind() == SpaceKind::Discrete
                    && space.node_index(atom.location, 1e-12).is_none()
                {
                    return Err(Error::InvalidRho(format!(
                        "level {}: atom at {} does not sit on a node of the discrete space",
                        j + 1,
                        atom.location
                    )));
                }
            }
            for set in &level.sets {
                if !set.weight.is_finite() {
                    return Err(Error::InvalidRho(format!(
                        "level {}: set weight {} is not finite",
                        j + 1,
                        set.weight
                    )));
                }
                set.region.check(space)?;
            }
        }
        Ok(())
    }

    /// Total indicator weight acting at a node.
    fn set_value(&self, spec: &ChainSpec, level: usize, q: usize) -> f64 {
        let space = &spec.spaces[level];
        self.levels[level]
            .sets
            .iter()
            .filter(|s| s.region.contains_node(space, q))
            .map(|s| s.weight)
            .sum()
    }
}

/// Both sides of the determinant identity for one rho.
#[derive(Clone, Debug)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
    pub levels: usize,
    pub particles: usize,
    pub level_sizes: Vec<usize>,
}

/// Joint density of a full configuration in the product-of-determinants
/// form: det(psi at level-1 points) det(phi at level-m points) times one
/// transfer determinant per coupling.
pub fn joint_density_product(e: &Ensemble, points: &[Vec<f64>]) -> Result<f64> {
    check_full_points(e, points)?;
    let n = e.particles();
    let m = e.levels();
    let spec = e.spec();

    let psi_cols: Vec<Vec<f64>> =
        points[0].iter().map(|&x| e.psi_values_at(0, x)).collect::<Result<_>>()?;
    let phi_cols: Vec<Vec<f64>> =
        points[m - 1].iter().map(|&x| e.phi_values_at(m - 1, x)).collect::<Result<_>>()?;
    let psi_end = DMatrix::from_fn(n, n, |a, b| psi_cols[b][a]);
    let phi_end = DMatrix::from_fn(n, n, |a, b| phi_cols[b][a]);

    let mut value = linalg::det(&psi_end) * linalg::det(&phi_end);
    for j in 0..m - 1 {
        let mut t = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                t[(a, b)] = spec.effective_coupling(j, points[j + 1][a], points[j][b])?;
            }
        }
        value *= linalg::det(&t);
    }
    Ok(value)
}

/// The same joint density as a single (N m) x (N m) determinant of the
/// conditioning kernel, points ordered level-major.
pub fn joint_density_kernel(e: &Ensemble, points: &[Vec<f64>]) -> Result<f64> {
    check_full_points(e, points)?;
    Ok(linalg::det(&kcheck_points_matrix(e, points)?))
}

/// Correlation intensity for k_j marked points per level: the bare
/// determinant of Kcheck over the marked points (standard intensity
/// convention; configuration-sum comparisons carry the ordered-selection
/// multiplicity separately).
pub fn correlator(e: &Ensemble, points: &[Vec<f64>]) -> Result<f64> {
    if points.len() != e.levels() {
        return Err(Error::InvalidPoints(format!(
            "{} point lists for {} levels",
            points.len(),
            e.levels()
        )));
    }
    for (j, pts) in points.iter().enumerate() {
        if pts.len() > e.particles() {
            return Err(Error::InvalidPoints(format!(
                "level {}: {} points exceed the particle count {}",
                j + 1,
                pts.len(),
                e.particles()
            )));
        }
    }
    Ok(linalg::det(&kcheck_points_matrix(e, points)?))
}

fn check_full_points(e: &Ensemble, points: &[Vec<f64>]) -> Result<()> {
    if points.len() != e.levels() {
        return Err(Error::InvalidPoints(format!(
            "{} point lists for {} levels",
            points.len(),
            e.levels()
        )));
    }
    for (j, pts) in points.iter().enumerate() {
        if pts.len() != e.particles() {
            return Err(Error::InvalidPoints(format!(
                "level {}: {} points, expected {}",
                j + 1,
                pts.len(),
                e.particles()
            )));
        }
    }
    Ok(())
}

/// Kcheck evaluated on an arbitrary marked-point family, level-major.
fn kcheck_points_matrix(e: &Ensemble, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = e.levels();
    let n_pts: usize = points.iter().map(|p| p.len()).sum();
    let mut psi_vals = Vec::with_capacity(m);
    let mut phi_vals = Vec::with_capacity(m);
    for (j, pts) in points.iter().enumerate() {
        let psi_j: Vec<Vec<f64>> =
            pts.iter().map(|&x| e.psi_values_at(j, x)).collect::<Result<_>>()?;
        let phi_j: Vec<Vec<f64>> =
            pts.iter().map(|&x| e.phi_values_at(j, x)).collect::<Result<_>>()?;
        psi_vals.push(psi_j);
        phi_vals.push(phi_j);
    }

    let mut mat = DMatrix::zeros(n_pts, n_pts);
    let mut row = 0;
    for i in 0..m {
        for a in 0..points[i].len() {
            let mut col = 0;
            for j in 0..m {
                for b in 0..points[j].len() {
                    let mut k = 0.0;
                    for t in 0..e.particles() {
                        k += psi_vals[i][a][t] * phi_vals[j][b][t];
                    }
                    let w = e.w_at(i, j, points[i][a], points[j][b])?;
                    mat[(row, col)] = k - w;
                    col += 1;
                }
            }
            row += 1;
        }
    }
    Ok(mat)
}

/// The weighted pairing matrix: G_ab threads every (1 - rho_j) factor
/// between the transfers, evaluated by sequential sweeps. Carrier points at
/// each level are the grid nodes plus that level's atom locations; nodes
/// integrate with (1 - set weight) times the node weight, atoms subtract
/// weight times the value at the location.
pub fn weighted_g(e: &Ensemble, rho: &RhoSpec) -> Result<DMatrix<f64>> {
    let spec = e.spec();
    rho.validate(spec)?;
    let n = e.particles();
    let m = e.levels();

    let carrier = |j: usize| -> Vec<f64> {
        let mut pts = spec.spaces[j].nodes().to_vec();
        pts.extend(rho.levels[j].atoms.iter().map(|a| a.location));
        pts
    };
    // Weight of each carrier point inside the level-j functional.
    let functional = |j: usize| -> Vec<f64> {
        let space = &spec.spaces[j];
        let mut w: Vec<f64> = (0..space.len())
            .map(|q| (1.0 - rho.set_value(spec, j, q)) * space.weights()[q])
            .collect();
        w.extend(rho.levels[j].atoms.iter().map(|a| -a.weight));
        w
    };

    // Values of the carried functions at level-0 carrier points.
    let pts0 = carrier(0);
    let psi0: Vec<Vec<f64>> =
        pts0.iter().map(|&x| e.psi_values_at(0, x)).collect::<Result<_>>()?;
    let mut values = DMatrix::from_fn(n, pts0.len(), |a, c| psi0[c][a]);

    let mut weights = functional(0);
    let mut pts = pts0;
    for j in 0..m - 1 {
        let next_pts = carrier(j + 1);
        let mut next: DMatrix<f64> = DMatrix::zeros(n, next_pts.len());
        for (c_next, &x) in next_pts.iter().enumerate() {
            for (c, &y) in pts.iter().enumerate() {
                let t = spec.effective_coupling(j, x, y)? * weights[c];
                for a in 0..n {
                    next[(a, c_next)] += values[(a, c)] * t;
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::TransferOverflow { level: j + 1 });
        }
        values = next;
        pts = next_pts;
        weights = functional(j + 1);
    }

    let mut g = DMatrix::zeros(n, n);
    for (c, &y) in pts.iter().enumerate() {
        let phi = e.phi_values_at(m - 1, y)?;
        for a in 0..n {
            for b in 0..n {
                g[(a, b)] += values[(a, c)] * weights[c] * phi[b];
            }
        }
    }
    Ok(g)
}

/// Flat offsets of each level inside the direct-sum grid space.
fn level_offsets(e: &Ensemble) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(e.levels());
    let mut total = 0;
    for j in 0..e.levels() {
        offsets.push(total);
        total += e.spec().spaces[j].len();
    }
    (offsets, total)
}

/// Kcheck_{i j}(x, node) for a fixed level i and arbitrary x, flattened
/// over the direct sum (level-major).
fn kcheck_row_at(e: &Ensemble, i: usize, x: f64) -> Result<Vec<f64>> {
    let psi = e.psi_values_at(i, x)?;
    let (_, total) = level_offsets(e);
    let mut row = Vec::with_capacity(total);
    for j in 0..e.levels() {
        let phi = &e.propagated().phi[j];
        for q in 0..e.spec().spaces[j].len() {
            let mut k = 0.0;
            for a in 0..e.particles() {
                k += psi[a] * phi[(a, q)];
            }
            let w = e.w_at(i, j, x, e.spec().spaces[j].nodes()[q])?;
            row.push(k - w);
        }
    }
    Ok(row)
}

/// Kcheck_{i j}(node, y) for a fixed level j and arbitrary y, flattened.
fn kcheck_col_at(e: &Ensemble, j: usize, y: f64) -> Result<Vec<f64>> {
    let phi = e.phi_values_at(j, y)?;
    let (_, total) = level_offsets(e);
    let mut col = Vec::with_capacity(total);
    for i in 0..e.levels() {
        let psi = &e.propagated().psi[i];
        for p in 0..e.spec().spaces[i].len() {
            let mut k = 0.0;
            for a in 0..e.particles() {
                k += psi[(a, p)] * phi[a];
            }
            let w = e.w_at(i, j, e.spec().spaces[i].nodes()[p], y)?;
            col.push(k - w);
        }
    }
    Ok(col)
}

/// I - Kcheck o rho on the direct-sum space. Indicator weights and
/// discrete-space atoms act on the diagonal; quadrature atoms border the
/// matrix with one extra coordinate each (their column carries the atom
/// weight with no node weight, their row is the kernel evaluated at the
/// location).
fn fredholm_matrix(e: &Ensemble, rho: &RhoSpec) -> Result<DMatrix<f64>> {
    let spec = e.spec();
    rho.validate(spec)?;
    let m = e.levels();
    let (offsets, grid_total) = level_offsets(e);

    // Diagonal rho action at the nodes.
    let mut diag = vec![0.0; grid_total];
    for j in 0..m {
        let space = &spec.spaces[j];
        for q in 0..space.len() {
            diag[offsets[j] + q] = rho.set_value(spec, j, q) * space.weights()[q];
        }
        if space.kind() == SpaceKind::Discrete {
            for atom in &rho.levels[j].atoms {
                let q = space
                    .node_index(atom.location, 1e-12)
                    .expect("validated discrete atom");
                diag[offsets[j] + q] += atom.weight;
            }
        }
    }

    // Quadrature atoms become bordering coordinates.
    let mut border: Vec<(usize, &Atom)> = Vec::new();
    for j in 0..m {
        if spec.spaces[j].kind() == SpaceKind::Quadrature {
            for atom in &rho.levels[j].atoms {
                border.push((j, atom));
            }
        }
    }
    let total = grid_total + border.len();

    let mut mat = DMatrix::zeros(total, total);
    for i in 0..m {
        for j in 0..m {
            let block = &e.kernel().kcheck_blocks[i][j];
            for p in 0..block.nrows() {
                for q in 0..block.ncols() {
                    let d = diag[offsets[j] + q];
                    if d != 0.0 {
                        mat[(offsets[i] + p, offsets[j] + q)] = block[(p, q)] * d;
                    }
                }
            }
        }
    }
    for (bi, &(j, atom)) in border.iter().enumerate() {
        let col = kcheck_col_at(e, j, atom.location)?;
        for (r, v) in col.iter().enumerate() {
            mat[(r, grid_total + bi)] = v * atom.weight;
        }
    }
    for (bi, &(i, atom)) in border.iter().enumerate() {
        let row = kcheck_row_at(e, i, atom.location)?;
        for (c, v) in row.iter().enumerate() {
            mat[(grid_total + bi, c)] = v * diag[c];
        }
        for (bj, &(j, other)) in border.iter().enumerate() {
            let v = e.kcheck_at(i, j, atom.location, other.location)?;
            mat[(grid_total + bi, grid_total + bj)] = v * other.weight;
        }
    }

    let eye = DMatrix::identity(total, total);
    Ok(eye - mat)
}

/// det(I - Kcheck o rho) on the discretized direct-sum space.
pub fn fredholm_det(e: &Ensemble, rho: &RhoSpec) -> Result<f64> {
    Ok(linalg::det(&fredholm_matrix(e, rho)?))
}

/// Log-magnitude and sign variant for underflow-prone determinants.
pub fn fredholm_det_log(e: &Ensemble, rho: &RhoSpec) -> Result<(f64, f64)> {
    Ok(linalg::det_log_abs_sign(&fredholm_matrix(e, rho)?))
}

/// Runs both sides of the identity det(G) = det(I - Kcheck o rho) on the
/// same rho.
pub fn verify_identity(e: &Ensemble, rho: &RhoSpec) -> Result<IdentityReport> {
    let lhs = linalg::det(&weighted_g(e, rho)?);
    let rhs = fredholm_det(e, rho)?;
    let abs_diff = (lhs - rhs).abs();
    Ok(IdentityReport {
        lhs,
        rhs,
        abs_diff,
        rel_diff: abs_diff / 1.0_f64.max(lhs.abs()),
        levels: e.levels(),
        particles: e.particles(),
        level_sizes: e.kernel().level_sizes.clone(),
    })
}

/// Probability of finding no points in the given per-level regions. The
/// normalization constant is exactly 1: the biorthogonalized systems make
/// the joint density a probability measure.
pub fn gap_probability(e: &Ensemble, regions: &[Region]) -> Result<f64> {
    if regions.len() != e.levels() {
        return Err(Error::InvalidRho(format!(
            "{} regions for {} levels",
            regions.len(),
            e.levels()
        )));
    }
    fredholm_det(e, &RhoSpec::from_regions(regions))
}

/// Generating function of joint occupation counts over labeled disjoint
/// regions: F(z) = det(I - Kcheck o rho(z)) with rho_j(z) = sum_l z_{jl}
/// chi_{J_{jl}}.
pub struct CountingGenerator<'a> {
    ensemble: &'a Ensemble,
    regions: Vec<Vec<Region>>,
}

/// Joint distribution of occupation counts, one axis per labeled region,
/// each axis running 0..=N.
pub struct CountDistribution {
    /// (level, region index within level) per axis, level-major.
    pub axes: Vec<(usize, usize)>,
    /// Probabilities in odometer order, last axis fastest.
    pub values: Vec<f64>,
    per_axis: usize,
}

impl CountDistribution {
    /// P(exactly counts[j][l] points in region l of level j, jointly).
    pub fn probability(&self, counts: &[Vec<usize>]) -> Result<f64> {
        let n = self.per_axis - 1;
        let mut idx = 0;
        for &(j, l) in &self.axes {
            let k = *counts
                .get(j)
                .and_then(|row| row.get(l))
                .ok_or_else(|| Error::InvalidRho("count vector shape mismatch".into()))?;
            if k > n {
                return Err(Error::DegreeOverflow { requested: k, max: n });
            }
            idx = idx * self.per_axis + k;
        }
        Ok(self.values[idx])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn counting_generating_function<'a>(
    e: &'a Ensemble,
    regions: Vec<Vec<Region>>,
) -> Result<CountingGenerator<'a>> {
    if regions.len() != e.levels() {
        return Err(Error::InvalidRho(format!(
            "{} region lists for {} levels",
            regions.len(),
            e.levels()
        )));
    }
    for (j, list) in regions.iter().enumerate() {
        let space = &e.spec().spaces[j];
        for r in list {
            r.check(space)?;
        }
        for (a, ra) in list.iter().enumerate() {
            for rb in &list[a + 1..] {
                if regions_overlap(space, ra, rb) {
                    return Err(Error::OverlappingRegions(format!(
                        "level {}: {:?} and {:?}",
                        j + 1,
                        ra,
                        rb
                    )));
                }
            }
        }
    }
    Ok(CountingGenerator { ensemble: e, regions })
}

fn regions_overlap(space: &MeasureSpace, a: &Region, b: &Region) -> bool {
    match (a, b) {
        (Region::Intervals(u), Region::Intervals(v)) => u
            .iter()
            .any(|&(a0, a1)| v.iter().any(|&(b0, b1)| a0 < b1 && b0 < a1)),
        (Region::Nodes(u), Region::Nodes(v)) => u.iter().any(|q| v.contains(q)),
        (Region::Intervals(ivs), Region::Nodes(set))
        | (Region::Nodes(set), Region::Intervals(ivs)) => set.iter().any(|&q| {
            let x = space.nodes()[q];
            ivs.iter().any(|&(lo, hi)| lo < x && x < hi)
        }),
    }
}

impl CountingGenerator<'_> {
    /// Region list per level (the variables of the generating function).
    pub fn regions(&self) -> &[Vec<Region>] {
        &self.regions
    }

    fn rho_at(&self, z: &[Vec<f64>]) -> Result<RhoSpec> {
        if z.len() != self.regions.len()
            || z.iter().zip(&self.regions).any(|(zs, rs)| zs.len() != rs.len())
        {
            return Err(Error::InvalidRho("z vector shape mismatch".into()));
        }
        Ok(RhoSpec {
            levels: self
                .regions
                .iter()
                .zip(z)
                .map(|(rs, zs)| LevelRho {
                    atoms: vec![],
                    sets: rs
                        .iter()
                        .zip(zs)
                        .map(|(r, &w)| WeightedSet { weight: w, region: r.clone() })
                        .collect(),
                })
                .collect(),
        })
    }

    /// F(z) = det(I - Kcheck o rho(z)).
    pub fn eval(&self, z: &[Vec<f64>]) -> Result<f64> {
        fredholm_det(self.ensemble, &self.rho_at(z)?)
    }

    /// Extracts P(k) for every joint count vector by per-variable polynomial
    /// interpolation: F is a polynomial of degree <= N in each z variable,
    /// sampled at N+1 Chebyshev points of [0, 2] per axis and transformed to
    /// coefficients in t = 1 - z, whose monomials are exactly the count
    /// probabilities.
    pub fn count_probabilities(&self) -> Result<CountDistribution> {
        let n = self.ensemble.particles();
        let per_axis = n + 1;
        let axes: Vec<(usize, usize)> = self
            .regions
            .iter()
            .enumerate()
            .flat_map(|(j, rs)| (0..rs.len()).map(move |l| (j, l)))
            .collect();
        let v = axes.len();

        // Chebyshev points of [0, 2]; t = 1 - z lands in (-1, 1).
        let z_samples: Vec<f64> = (0..per_axis)
            .map(|i| {
                1.0 - ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * per_axis) as f64).cos()
            })
            .collect();
        let t_samples: Vec<f64> = z_samples.iter().map(|z| 1.0 - z).collect();

        let total = per_axis.pow(v as u32);
        let mut values = vec![0.0; total.max(1)];
        let mut z = vec![0.0; v];
        for (flat, slot) in values.iter_mut().enumerate() {
            let mut rest = flat;
            for ax in (0..v).rev() {
                z[ax] = z_samples[rest % per_axis];
                rest /= per_axis;
            }
            let z_shaped: Vec<Vec<f64>> = {
                let mut out = Vec::with_capacity(self.regions.len());
                let mut it = z.iter();
                for rs in &self.regions {
                    out.push(it.by_ref().take(rs.len()).copied().collect());
                }
                out
            };
            *slot = self.eval(&z_shaped)?;
        }

        // Vandermonde in t, factored once, applied along every axis.
        let vand = DMatrix::from_fn(per_axis, per_axis, |r, c| t_samples[r].powi(c as i32));
        let lu = vand.lu();
        let mut scratch = DMatrix::zeros(per_axis, 1);
        for ax in (0..v).rev() {
            let stride = per_axis.pow((v - 1 - ax) as u32);
            let outer = total / (stride * per_axis);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * stride * per_axis + s;
                    for i in 0..per_axis {
                        scratch[(i, 0)] = values[base + i * stride];
                    }
                    let coef = lu
                        .solve(&scratch)
                        .ok_or_else(|| Error::InvalidRho("degenerate interpolation".into()))?;
                    for i in 0..per_axis {
                        values[base + i * stride] = coef[(i, 0)];
                    }
                }
            }
        }

        Ok(CountDistribution { axes, values, per_axis })
    }
}

/// Relative and absolute Janossy densities for marked points inside the
/// per-level conditioning regions J.
#[derive(Clone, Debug)]
pub struct JanossyDensity {
    pub relative: f64,
    pub absolute: f64,
}

/// Janossy densities through the masked resolvent: solve
/// (I - Kcheck o chi_J) X = Kcheck o chi_J on the grid, evaluate the
/// resolvent kernel at the marked points, and scale by the gap determinant.
/// Points outside J are annihilated by the mask, matching the convention
/// that the density describes configurations meeting J exactly at the
/// marked points.
pub fn janossy_density(
    e: &Ensemble,
    regions: &[Region],
    points: &[Vec<f64>],
) -> Result<JanossyDensity> {
    let m = e.levels();
    if regions.len() != m {
        return Err(Error::InvalidRho(format!("{} regions for {m} levels", regions.len())));
    }
    if points.len() != m {
        return Err(Error::InvalidPoints(format!(
            "{} point lists for {m} levels",
            points.len()
        )));
    }
    let spec = e.spec();
    let (offsets, grid_total) = level_offsets(e);

    // chi column mask and the gap matrix I - Kcheck o (chi mu).
    let mut chi_mu = vec![0.0; grid_total];
    for j in 0..m {
        let space = &spec.spaces[j];
        for q in 0..space.len() {
            if regions[j].contains_node(space, q) {
                chi_mu[offsets[j] + q] = space.weights()[q];
            }
        }
    }
    let mut gap_matrix = DMatrix::zeros(grid_total, grid_total);
    for i in 0..m {
        for j in 0..m {
            let block = &e.kernel().kcheck_blocks[i][j];
            for p in 0..block.nrows() {
                for q in 0..block.ncols() {
                    let d = chi_mu[offsets[j] + q];
                    if d != 0.0 {
                        gap_matrix[(offsets[i] + p, offsets[j] + q)] = -block[(p, q)] * d;
                    }
                }
            }
        }
    }
    for r in 0..grid_total {
        gap_matrix[(r, r)] += 1.0;
    }

    let gap = linalg::det(&gap_matrix);
    // Gap probabilities live in [0, 1]; below roundoff scale the resolvent
    // carries no information.
    if gap.abs() <= 1e-12 || !gap.is_finite() {
        return Err(Error::SingularGap);
    }

    let k_total: usize = points.iter().map(|p| p.len()).sum();
    if k_total == 0 {
        return Ok(JanossyDensity { relative: 1.0, absolute: gap });
    }

    // Masked kernel columns at the marked points.
    let mut rhs = DMatrix::zeros(grid_total, k_total);
    let mut masked_col = vec![false; k_total];
    {
        let mut c = 0;
        for j in 0..m {
            for &y in &points[j] {
                if regions[j].contains_coord(&spec.spaces[j], y) {
                    let col = kcheck_col_at(e, j, y)?;
                    for (r, v) in col.iter().enumerate() {
                        rhs[(r, c)] = *v;
                    }
                } else {
                    masked_col[c] = true;
                }
                c += 1;
            }
        }
    }
    let solved = linalg::solve(&gap_matrix, &rhs).ok_or(Error::SingularGap)?;

    // Resolvent kernel at the marked points: the direct masked term plus
    // the grid correction row.
    let mut r_points = DMatrix::zeros(k_total, k_total);
    let mut row_idx = 0;
    for i in 0..m {
        for &x in &points[i] {
            let row = kcheck_row_at(e, i, x)?;
            let mut col_idx = 0;
            for j in 0..m {
                for &y in &points[j] {
                    let v = if masked_col[col_idx] {
                        0.0
                    } else {
                        let direct = e.kcheck_at(i, j, x, y)?;
                        let mut correction = 0.0;
                        for g in 0..grid_total {
                            correction += row[g] * chi_mu[g] * solved[(g, col_idx)];
                        }
                        direct + correction
                    };
                    r_points[(row_idx, col_idx)] = v;
                    col_idx += 1;
                }
            }
            row_idx += 1;
        }
    }

    let relative = linalg::det(&r_points);
    Ok(JanossyDensity { relative, absolute: relative * gap })
}
