//! Thin dense-matrix helpers shared by the kernel, statistics, and oracle
//! modules. Factorizations come from nalgebra; only the conventions live
//! here (empty determinants are 1, log-determinants carry an explicit sign).

use nalgebra::DMatrix;

/// Determinant through LU with partial pivoting. The empty matrix has
/// determinant 1.
pub(crate) fn det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    if n == 0 {
        return 1.0;
    }
    let lu = m.clone().lu();
    let mut d: f64 = lu.p().determinant();
    for i in 0..n {
        d *= lu.u()[(i, i)];
    }
    d
}

/// (ln|det|, sign) with sign in {-1, 0, 1}; singular matrices give
/// (-inf, 0).
pub(crate) fn det_log_abs_sign(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    if n == 0 {
        return (0.0, 1.0);
    }
    let lu = m.clone().lu();
    let mut sign: f64 = lu.p().determinant();
    let mut log = 0.0;
    for i in 0..n {
        let d = lu.u()[(i, i)];
        if d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        log += d.abs().ln();
        sign *= d.signum();
    }
    (log, sign)
}

/// Solves a X = b, or None when a is singular.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().lu().solve(b)
}

/// Largest absolute entry, 0 for empty matrices.
pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinant_conventions() {
        assert_eq!(det(&DMatrix::zeros(0, 0)), 1.0);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!((det(&m) + 2.0).abs() <= 1e-14);
    }

    #[test]
    fn log_determinant_tracks_sign() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (log, sign) = det_log_abs_sign(&m);
        assert_eq!(sign, -1.0);
        assert!((log - 2.0_f64.ln()).abs() <= 1e-14);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let (log, sign) = det_log_abs_sign(&singular);
        assert_eq!(sign, 0.0);
        assert!(log.is_infinite());
    }

    #[test]
    fn solve_round_trip() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[5.0, 10.0]);
        let x = solve(&a, &b).unwrap();
        let r = &a * &x - &b;
        assert!(max_abs(&r) <= 1e-12);
    }
}
