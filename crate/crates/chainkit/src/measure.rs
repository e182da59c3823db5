//! Finite measure spaces: each level of a chain lives on a weighted node set,
//! either user-supplied discrete points or a composite Gauss-Legendre
//! discretization of a union of intervals.

use crate::{Error, Result};

/// Tag distinguishing exact discrete measures from quadrature discretizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    Discrete,
    Quadrature,
}

#[derive(Clone, Debug)]
enum Source {
    Discrete,
    /// Per-panel rule order plus the final panel list, kept so the space can
    /// be rebuilt with extra panel boundaries (region alignment).
    Quadrature { order: usize, panels: Vec<(f64, f64)> },
}

/// A level's state space with measure, as ordered nodes and positive weights.
///
/// Invariants: nodes strictly increasing, weights strictly positive, equal
/// lengths. Immutable after construction.
#[derive(Clone, Debug)]
pub struct MeasureSpace {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    source: Source,
}

impl MeasureSpace {
    pub fn kind(&self) -> SpaceKind {
        match self.source {
            Source::Discrete => SpaceKind::Discrete,
            Source::Quadrature { .. } => SpaceKind::Quadrature,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature panel list; empty for discrete spaces.
    pub fn panels(&self) -> &[(f64, f64)] {
        match &self.source {
            Source::Discrete => &[],
            Source::Quadrature { panels, .. } => panels,
        }
    }

    /// Integral of `f` against the measure. Summation runs in ascending node
    /// order so results are bitwise reproducible.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += f(*x) * w;
        }
        acc
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest node magnitude, used for coupling domain checks.
    pub fn max_abs_node(&self) -> f64 {
        self.nodes.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// True when the node set is closed under negation with matching weights.
    /// Required by the even/odd basis families.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.nodes.len();
        for i in 0..n {
            let (x, y) = (self.nodes[i], self.nodes[n - 1 - i]);
            let scale = 1.0_f64.max(x.abs());
            if (x + y).abs() > tol * scale {
                return false;
            }
            let (u, v) = (self.weights[i], self.weights[n - 1 - i]);
            if (u - v).abs() > tol * u.abs().max(v.abs()) {
                return false;
            }
        }
        true
    }

    /// Index of the node equal to `x` within `tol`, for placing atoms on
    /// discrete spaces.
    pub fn node_index(&self, x: f64, tol: f64) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| (n - x).abs() <= tol * 1.0_f64.max(n.abs()))
    }

    /// Rebuilds a quadrature space with panel boundaries inserted at `cuts`,
    /// so indicator regions with endpoints at the cuts are resolved exactly.
    /// Cuts outside the panels are ignored; discrete spaces are returned
    /// unchanged.
    pub fn with_boundaries(&self, cuts: &[f64]) -> Result<MeasureSpace> {
        let (order, panels) = match &self.source {
            Source::Discrete => return Ok(self.clone()),
            Source::Quadrature { order, panels } => (*order, panels),
        };
        let mut split = Vec::with_capacity(panels.len() + cuts.len());
        for &(a, b) in panels {
            let mut inner: Vec<f64> = cuts
                .iter()
                .copied()
                .filter(|c| c.is_finite() && *c > a && *c < b)
                .collect();
            inner.sort_by(|p, q| p.partial_cmp(q).unwrap());
            inner.dedup();
            let mut lo = a;
            for c in inner {
                split.push((lo, c));
                lo = c;
            }
            split.push((lo, b));
        }
        Ok(from_panels(order, split))
    }
}

/// Gauss-Legendre rule of the given order on a single interval.
///
/// Exact for polynomial integrands of degree at most 2*order-1; the weights
/// sum to b-a.
pub fn gauss_legendre_rule(order: usize, a: f64, b: f64) -> Result<MeasureSpace> {
    composite_rule(order, &[(a, b)], 1)
}

/// Panel-wise Gauss-Legendre rule over a union of intervals, each interval
/// subdivided into `panels` equal panels. Nodes come out sorted ascending.
pub fn composite_rule(order: usize, intervals: &[(f64, f64)], panels: usize) -> Result<MeasureSpace> {
    if order == 0 {
        return Err(Error::InvalidQuadrature("rule order must be positive".into()));
    }
    if panels == 0 {
        return Err(Error::InvalidQuadrature("panel count must be positive".into()));
    }
    if intervals.is_empty() {
        return Err(Error::InvalidQuadrature("interval list is empty".into()));
    }
    let mut sorted = intervals.to_vec();
    for &(a, b) in &sorted {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidQuadrature(format!(
                "interval ({a}, {b}) is not finite"
            )));
        }
        if a >= b {
            return Err(Error::InvalidQuadrature(format!(
                "interval ({a}, {b}) has non-positive length"
            )));
        }
    }
    sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
    for pair in sorted.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::InvalidQuadrature(format!(
                "intervals ({}, {}) and ({}, {}) overlap",
                pair[0].0, pair[0].1, pair[1].0, pair[1].1
            )));
        }
    }
    let mut panel_list = Vec::with_capacity(sorted.len() * panels);
    for (a, b) in sorted {
        let h = (b - a) / panels as f64;
        for k in 0..panels {
            let lo = a + h * k as f64;
            let hi = if k + 1 == panels { b } else { a + h * (k + 1) as f64 };
            panel_list.push((lo, hi));
        }
    }
    Ok(from_panels(order, panel_list))
}

/// Exact discrete measure on user-given points.
pub fn discrete_space(points: &[f64], weights: &[f64]) -> Result<MeasureSpace> {
    if points.len() != weights.len() {
        return Err(Error::InvalidSpace(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if points.is_empty() {
        return Err(Error::InvalidSpace("at least one point is required".into()));
    }
    for &x in points {
        if !x.is_finite() {
            return Err(Error::InvalidSpace(format!("point {x} is not finite")));
        }
    }
    for &w in weights {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidSpace(format!("weight {w} is not strictly positive")));
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].partial_cmp(&points[j]).unwrap());
    let nodes: Vec<f64> = order.iter().map(|&i| points[i]).collect();
    for pair in nodes.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::InvalidSpace(format!("duplicate point {}", pair[0])));
        }
    }
    Ok(MeasureSpace {
        weights: order.iter().map(|&i| weights[i]).collect(),
        nodes,
        source: Source::Discrete,
    })
}

fn from_panels(order: usize, panels: Vec<(f64, f64)>) -> MeasureSpace {
    let (ref_nodes, ref_weights) = legendre_reference(order);
    let mut nodes = Vec::with_capacity(order * panels.len());
    let mut weights = Vec::with_capacity(order * panels.len());
    for &(a, b) in &panels {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (t, w) in ref_nodes.iter().zip(&ref_weights) {
            nodes.push(mid + half * t);
            weights.push(half * w);
        }
    }
    MeasureSpace {
        nodes,
        weights,
        source: Source::Quadrature { order, panels },
    }
}

/// Legendre polynomial value and derivative at `x` from the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    // Derivative identity valid away from x = +-1; Gauss nodes are interior.
    let dp = (n as f64) * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

const NEWTON_TOL: f64 = 1e-15;

/// Reference nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence. Only the positive half is solved; the rule is
/// mirrored so symmetric node sets are exact under negation.
fn legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n / 2 {
        // Chebyshev-based initial guess for the i-th largest root.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            let dz = p / d;
            z -= dz;
            if dz.abs() <= NEWTON_TOL {
                break;
            }
        }
        // Derivative at the converged node gives the weight.
        let (_, dp) = legendre_with_derivative(n, z);
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        let (_, dp) = legendre_with_derivative(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}
