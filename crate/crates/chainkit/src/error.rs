use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// One failed chain invariant, tagged with the level it concerns when that
/// is meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub level: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.level {
            Some(j) => write!(f, "level {}: {}", j + 1, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Every violation found while validating a chain, reported together rather
/// than one at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid quadrature rule: {0}")]
    InvalidQuadrature(String),

    #[error("invalid discrete space: {0}")]
    InvalidSpace(String),

    #[error("potential declared even is not: {0}")]
    PotentialParity(String),

    #[error("invalid chain specification:\n{0}")]
    InvalidChain(ValidationReport),

    #[error("power-law coupling pole crossed: |z*x*y| = {0} is not < 1")]
    CouplingPole(f64),

    #[error("series coupling not finite at x*y = {0}")]
    CouplingOverflow(f64),

    #[error("transfer assembly produced non-finite values at level {level}")]
    TransferOverflow { level: usize },

    #[error(
        "leading principal minor {index} of the chain moment matrix is numerically zero; \
         the ensemble is degenerate for this particle count"
    )]
    DegenerateMinor { index: usize },

    #[error("invalid rho perturbation: {0}")]
    InvalidRho(String),

    #[error("invalid point configuration: {0}")]
    InvalidPoints(String),

    #[error("I - K*chi is numerically singular: the conditioning gap probability vanishes")]
    SingularGap,

    #[error("counting regions overlap: {0}")]
    OverlappingRegions(String),

    #[error("requested occupation {requested} exceeds the per-level particle count {max}")]
    DegreeOverflow { requested: usize, max: usize },

    #[error("enumeration space has {size} configurations, limit is {limit}")]
    StateSpaceTooLarge { size: u128, limit: u128 },

    #[error("exhaustive enumeration requires a discrete space at every level")]
    NotDiscrete,

    #[error("configuration mass {mass:e} is negative beyond tolerance (scale {scale:e}); not a probability ensemble")]
    NegativeMass { mass: f64, scale: f64 },

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
