//! Ensemble declaration: level count, particle count, per-level potentials
//! and measure spaces, nearest-neighbour couplings, and the monomial basis
//! family seeding the end-level polynomials.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::measure::MeasureSpace;
use crate::{Error, Result, ValidationReport, Violation};

/// Symmetry tag for potentials. Even potentials are mandatory for the
/// even/odd basis families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Any,
    Even,
}

/// Closed potential forms keep configs round-trippable; `Custom` admits any
/// evaluator.
#[derive(Clone)]
pub enum PotentialForm {
    /// V(x) = x^2
    Quadratic,
    /// V(x) = c2 x^2 + c4 x^4
    Quartic { c2: f64, c4: f64 },
    /// V(x) = c_0 + c_1 x + ... in ascending powers
    Polynomial(Vec<f64>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for PotentialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialForm::Quadratic => write!(f, "Quadratic"),
            PotentialForm::Quartic { c2, c4 } => write!(f, "Quartic {{ c2: {c2}, c4: {c4} }}"),
            PotentialForm::Polynomial(c) => write!(f, "Polynomial({c:?})"),
            PotentialForm::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Confinement potential V_j for one level.
#[derive(Clone, Debug)]
pub struct Potential {
    form: PotentialForm,
    parity: Parity,
}

/// Points where a declared-even potential is probed at construction.
fn parity_probe_points() -> impl Iterator<Item = f64> {
    (1..=24).map(|k| k as f64 * 0.37)
}

impl Potential {
    /// Builds a potential, checking a declared Even parity on a symmetric
    /// probe grid (tolerance 1e-12).
    pub fn new(form: PotentialForm, parity: Parity) -> Result<Potential> {
        let p = Potential { form, parity };
        if parity == Parity::Even {
            for x in parity_probe_points() {
                let (a, b) = (p.eval(x), p.eval(-x));
                if (a - b).abs() > 1e-12 * 1.0_f64.max(a.abs().max(b.abs())) {
                    return Err(Error::PotentialParity(format!(
                        "V({x}) = {a} but V({}) = {b}",
                        -x
                    )));
                }
            }
        }
        Ok(p)
    }

    /// The Gaussian-ensemble potential V(x) = x^2.
    pub fn quadratic() -> Potential {
        Potential {
            form: PotentialForm::Quadratic,
            parity: Parity::Even,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.form {
            PotentialForm::Quadratic => x * x,
            PotentialForm::Quartic { c2, c4 } => {
                let x2 = x * x;
                c2 * x2 + c4 * x2 * x2
            }
            PotentialForm::Polynomial(coeffs) => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            PotentialForm::Custom(f) => f(x),
        }
    }

    /// e^{-V(x)/2}, the half weight carried by end functions and transfers.
    pub fn half_weight(&self, x: f64) -> f64 {
        (-0.5 * self.eval(x)).exp()
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn form(&self) -> &PotentialForm {
        &self.form
    }
}

/// Nearest-neighbour coupling w(x, y). Every variant is a function of the
/// product x*y, hence symmetric in its arguments.
#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    /// e^{xy}, the Hermitian chain transfer.
    Exponential,
    /// 2 cosh(xy), pairs with even polynomial bases.
    Cosh,
    /// 2 sinh(xy), pairs with odd polynomial bases.
    Sinh,
    /// (1 - z x y)^{n - a - 1}; n is tied to the particle count at
    /// validation. Requires |z x y| < 1.
    PowerLaw { z: f64, a: f64, n: usize },
    /// 1 + sum_k r(1)...r(k) (xy)^k, truncated at the coefficient list
    /// length. The leading 1 fixes f(0) = 1.
    Series { coefficients: Vec<f64> },
}

impl Coupling {
    /// Raw coupling value. Errors when a power-law argument leaves |zxy| < 1
    /// or a truncated series stops being finite.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let u = x * y;
        match self {
            Coupling::Exponential => Ok(u.exp()),
            Coupling::Cosh => Ok(2.0 * u.cosh()),
            Coupling::Sinh => Ok(2.0 * u.sinh()),
            Coupling::PowerLaw { z, a, n } => {
                let zu = z * u;
                if !(zu.abs() < 1.0) {
                    return Err(Error::CouplingPole(zu.abs()));
                }
                Ok((1.0 - zu).powf(*n as f64 - a - 1.0))
            }
            Coupling::Series { coefficients } => {
                let mut val = 1.0;
                let mut coeff = 1.0;
                let mut power = 1.0;
                for r in coefficients {
                    coeff *= r;
                    power *= u;
                    val += coeff * power;
                    if !val.is_finite() {
                        return Err(Error::CouplingOverflow(u));
                    }
                }
                Ok(val)
            }
        }
    }

    /// (ln|w|, sign). The exponential variants are evaluated analytically in
    /// log space so transfer assembly can subtract half potentials before
    /// exponentiating; a zero value reports sign 0 with ln = -inf.
    pub fn log_abs_sign(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let u = x * y;
        match self {
            Coupling::Exponential => Ok((u, 1.0)),
            Coupling::Cosh => Ok((u.abs() + (-2.0 * u.abs()).exp().ln_1p(), 1.0)),
            Coupling::Sinh => {
                if u == 0.0 {
                    return Ok((f64::NEG_INFINITY, 0.0));
                }
                Ok((u.abs() + (-(-2.0 * u.abs()).exp()).ln_1p(), u.signum()))
            }
            Coupling::PowerLaw { z, a, n } => {
                let zu = z * u;
                if !(zu.abs() < 1.0) {
                    return Err(Error::CouplingPole(zu.abs()));
                }
                Ok(((*n as f64 - a - 1.0) * (-zu).ln_1p(), 1.0))
            }
            Coupling::Series { .. } => {
                let v = self.eval(x, y)?;
                if v == 0.0 {
                    return Ok((f64::NEG_INFINITY, 0.0));
                }
                Ok((v.abs().ln(), v.signum()))
            }
        }
    }

    /// Grid-span problems for this coupling: power-law pole inside the grid
    /// rectangle, or a series whose truncation tail at the extremes exceeds
    /// 1e-14 relative accuracy.
    fn grid_problem(&self, max_hi: f64, max_lo: f64) -> Option<String> {
        let u = max_hi * max_lo;
        match self {
            Coupling::PowerLaw { z, .. } => {
                let zu = (z * u).abs();
                if zu >= 1.0 {
                    return Some(format!(
                        "power-law coupling has |z*x*y| = {zu} at the grid extremes, must stay below 1"
                    ));
                }
                None
            }
            Coupling::Series { coefficients } => {
                let val = match self.eval(max_hi, max_lo) {
                    Ok(v) => v,
                    Err(_) => {
                        return Some(format!(
                            "series coupling is not finite at the grid extremes (x*y = {u})"
                        ))
                    }
                };
                let tail = coefficients.iter().fold(1.0, |c, r| c * r).abs()
                    * u.abs().powi(coefficients.len() as i32);
                if tail > 1e-14 * 1.0_f64.max(val.abs()) {
                    return Some(format!(
                        "series truncation term {tail:e} at the grid extremes exceeds the 1e-14 tolerance"
                    ));
                }
                None
            }
            _ => None,
        }
    }
}

/// Monomial degree schedule for the end-level polynomial seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisFamily {
    /// Degrees 0, 1, 2, ...
    AllMonomials,
    /// Degrees 0, 2, 4, ...; requires even potentials and symmetric spaces.
    EvenMonomials,
    /// Degrees 1, 3, 5, ...; same symmetry requirements.
    OddMonomials,
}

impl BasisFamily {
    /// Degree of the a-th seed monomial, a = 1..N.
    pub fn degree(&self, a: usize) -> usize {
        debug_assert!(a >= 1);
        match self {
            BasisFamily::AllMonomials => a - 1,
            BasisFamily::EvenMonomials => 2 * (a - 1),
            BasisFamily::OddMonomials => 2 * a - 1,
        }
    }

    pub fn requires_symmetry(&self) -> bool {
        !matches!(self, BasisFamily::AllMonomials)
    }
}

/// Full ensemble definition. `validate` must pass before the spec is handed
/// to the downstream builders.
#[derive(Clone, Debug)]
pub struct ChainSpec {
    pub levels: usize,
    pub particles: usize,
    pub spaces: Vec<MeasureSpace>,
    pub potentials: Vec<Potential>,
    pub couplings: Vec<Coupling>,
    pub basis: BasisFamily,
}

impl ChainSpec {
    /// Checks every structural invariant, collecting all violations rather
    /// than stopping at the first. Power-law couplings get their exponent
    /// tied to the particle count here.
    pub fn validate(mut self) -> Result<ChainSpec> {
        let mut violations = Vec::new();
        let m = self.levels;
        if m == 0 {
            violations.push(Violation {
                level: None,
                message: "at least one level is required".into(),
            });
        }
        if self.particles == 0 {
            violations.push(Violation {
                level: None,
                message: "particle count must be at least 1".into(),
            });
        }
        if self.spaces.len() != m {
            violations.push(Violation {
                level: None,
                message: format!("{} spaces given, expected m = {}", self.spaces.len(), m),
            });
        }
        if self.potentials.len() != m {
            violations.push(Violation {
                level: None,
                message: format!(
                    "{} potentials given, expected m = {}",
                    self.potentials.len(),
                    m
                ),
            });
        }
        if self.couplings.len() + 1 != m.max(1) {
            violations.push(Violation {
                level: None,
                message: format!(
                    "couplings length must be m-1 = {}, got {}",
                    m.saturating_sub(1),
                    self.couplings.len()
                ),
            });
        }

        // The exponent of every power-law coupling follows the particle
        // count.
        for c in &mut self.couplings {
            if let Coupling::PowerLaw { n, .. } = c {
                *n = self.particles;
            }
        }

        let per_level = self.spaces.len() == m && self.potentials.len() == m;
        if per_level {
            for j in 0..m {
                let space = &self.spaces[j];
                let pot = &self.potentials[j];
                if space.len() < self.particles {
                    violations.push(Violation {
                        level: Some(j),
                        message: format!(
                            "space has {} nodes, fewer than the particle count {}",
                            space.len(),
                            self.particles
                        ),
                    });
                }
                if self.basis.requires_symmetry() {
                    if pot.parity() != Parity::Even {
                        violations.push(Violation {
                            level: Some(j),
                            message: "even/odd basis families need potentials declared Even".into(),
                        });
                    }
                    if !space.is_symmetric(1e-12) {
                        violations.push(Violation {
                            level: Some(j),
                            message: "even/odd basis families need a space symmetric about 0".into(),
                        });
                    }
                }
                for &x in space.nodes() {
                    let h = pot.half_weight(x);
                    if !h.is_finite() {
                        violations.push(Violation {
                            level: Some(j),
                            message: format!("weight e^(-V/2) is not finite at node {x}"),
                        });
                        break;
                    }
                }
            }
            if self.couplings.len() + 1 == m {
                for j in 0..self.couplings.len() {
                    let hi = self.spaces[j + 1].max_abs_node();
                    let lo = self.spaces[j].max_abs_node();
                    if let Some(msg) = self.couplings[j].grid_problem(hi, lo) {
                        violations.push(Violation {
                            level: Some(j),
                            message: msg,
                        });
                    }
                }
            }
        }

        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidChain(ValidationReport { violations }))
        }
    }

    /// Effective transfer weight from level j to level j+1 (0-based):
    /// w(x, y) e^{-(V_{j+1}(x) + V_j(y))/2}, assembled in log space so
    /// exponential couplings never overflow when the potentials confine.
    pub(crate) fn effective_coupling(&self, j: usize, x_hi: f64, y_lo: f64) -> Result<f64> {
        let (logw, sign) = self.couplings[j].log_abs_sign(x_hi, y_lo)?;
        if sign == 0.0 {
            return Ok(0.0);
        }
        let exponent =
            logw - 0.5 * self.potentials[j + 1].eval(x_hi) - 0.5 * self.potentials[j].eval(y_lo);
        Ok(sign * exponent.exp())
    }

    /// Dense effective transfer from level j's grid to level j+1's grid;
    /// entry (p, q) couples target node p to source node q. Node weights are
    /// not folded in.
    pub(crate) fn transfer_matrix(&self, j: usize) -> Result<DMatrix<f64>> {
        let hi = &self.spaces[j + 1];
        let lo = &self.spaces[j];
        let mut t = DMatrix::zeros(hi.len(), lo.len());
        for p in 0..hi.len() {
            for q in 0..lo.len() {
                let v = self.effective_coupling(j, hi.nodes()[p], lo.nodes()[q])?;
                if !v.is_finite() {
                    return Err(Error::TransferOverflow { level: j + 1 });
                }
                t[(p, q)] = v;
            }
        }
        Ok(t)
    }
}
