//! Perron roots of nonnegative irreducible matrices and the spectral abscissa
//! of `diag(beta) A - diag(delta)`.
//!
//! `diag(beta) A - diag(delta)` is Metzler (nonnegative off the diagonal), so
//! adding `(max delta + 1) I` gives a nonnegative irreducible matrix with a
//! strictly positive diagonal. Its Perron root minus the shift is the
//! eigenvalue with largest real part of the original matrix.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::netgraph::ContactNetwork;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has a negative or non-finite entry at ({0}, {1})")]
    NegativeEntry(usize, usize),
    #[error("matrix is reducible (its digraph is not strongly connected)")]
    Reducible,
    #[error("power iteration did not reach residual {tol:e} within {iterations} iterations (last {residual:e})")]
    NoConvergence { tol: f64, iterations: usize, residual: f64 },
    #[error("expected {expected} rates, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("rates must be positive and finite")]
    BadRate,
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// Dominant eigen-triple of a nonnegative irreducible matrix.
///
/// `right` has unit Euclidean norm and `left` is scaled so that
/// `left . right = 1`; both are entrywise positive.
#[derive(Debug, Clone)]
pub struct PerronPair {
    pub rho: f64,
    pub right: DVector<f64>,
    pub left: DVector<f64>,
    /// Max of the relative right and left residuals reached.
    pub residual: f64,
    pub iterations: usize,
}

fn check_nonnegative(m: &DMatrix<f64>) -> Result<(), SpectralError> {
    if m.nrows() != m.ncols() {
        return Err(SpectralError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let x = m[(i, j)];
            if !(x.is_finite() && x >= 0.0) {
                return Err(SpectralError::NegativeEntry(i, j));
            }
        }
    }
    Ok(())
}

/// Strong connectivity of the digraph with an edge `j -> i` wherever
/// `m[(i, j)] > 0`. Self-loops are irrelevant except for the 1x1 case.
pub fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if n == 0 {
        return false;
    }
    if n == 1 {
        return m[(0, 0)] > 0.0;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let entry = if forward { m[(v, u)] } else { m[(u, v)] };
                if entry > 0.0 && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    };
    reach(true) && reach(false)
}

/// Perron root with right and left Perron vectors by simultaneous power
/// iteration on `M + cI`, `c` the max row sum, which is primitive even when
/// `M` is periodic.
pub fn perron(m: &DMatrix<f64>, tol: f64) -> Result<PerronPair, SpectralError> {
    let n = m.nrows();
    let start = DVector::from_element(n, 1.0 / (n.max(1) as f64).sqrt());
    perron_from(m, tol, start.clone(), start)
}

/// [`perron`] warm-started from the given positive vectors.
pub fn perron_from(
    m: &DMatrix<f64>,
    tol: f64,
    mut v: DVector<f64>,
    mut w: DVector<f64>,
) -> Result<PerronPair, SpectralError> {
    if !(tol > 0.0) {
        return Err(SpectralError::BadTolerance);
    }
    check_nonnegative(m)?;
    if !is_irreducible(m) {
        return Err(SpectralError::Reducible);
    }
    let n = m.nrows();
    let shift = (0..n).map(|i| m.row(i).sum()).fold(0.0, f64::max);
    let mt = m.transpose();

    v /= v.norm();
    w /= w.norm();
    let mut mv = m * &v;
    let mut mtw = &mt * &w;
    let mut residual = f64::INFINITY;
    for it in 0..MAX_ITERATIONS {
        let rho = w.dot(&mv) / w.dot(&v);
        let rv = (&mv - &v * rho).amax() / rho;
        let rw = (&mtw - &w * rho).amax() / rho;
        residual = rv.max(rw);
        if residual <= tol {
            return finish(rho, v, w, residual, it);
        }
        v = &mv + &v * shift;
        v /= v.norm();
        w = &mtw + &w * shift;
        w /= w.norm();
        mv = m * &v;
        mtw = &mt * &w;
    }
    Err(SpectralError::NoConvergence { tol, iterations: MAX_ITERATIONS, residual })
}

fn finish(
    rho: f64,
    right: DVector<f64>,
    mut left: DVector<f64>,
    residual: f64,
    iterations: usize,
) -> Result<PerronPair, SpectralError> {
    if right.iter().chain(left.iter()).any(|&x| !(x > 0.0)) || !(rho > 0.0) {
        // A zero component in a converged iterate means the matrix was reducible.
        return Err(SpectralError::Reducible);
    }
    left /= left.dot(&right);
    Ok(PerronPair { rho, right, left, residual, iterations })
}

/// Gelfand estimate `||M^k||^(1/k)` with `k = 2^k_max`, by repeated squaring
/// with per-step normalization. Independent of [`perron`]; for testing.
pub fn perron_oracle(m: &DMatrix<f64>, k_max: u32) -> f64 {
    let norm = |x: &DMatrix<f64>| x.norm();
    let n0 = norm(m);
    if n0 == 0.0 {
        return 0.0;
    }
    let mut b = m / n0;
    let mut log_norm = n0.ln();
    for _ in 0..k_max {
        let sq = &b * &b;
        let s = norm(&sq);
        if s == 0.0 {
            return 0.0;
        }
        log_norm = 2.0 * log_norm + s.ln();
        b = sq / s;
    }
    (log_norm / 2f64.powi(k_max as i32)).exp()
}

fn check_rates(n: usize, beta: &[f64], delta: &[f64]) -> Result<(), SpectralError> {
    for r in [beta, delta] {
        if r.len() != n {
            return Err(SpectralError::LengthMismatch { expected: n, got: r.len() });
        }
    }
    if beta.iter().chain(delta).any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(SpectralError::BadRate);
    }
    Ok(())
}

/// `diag(beta) A - diag(delta) + (max delta + 1) I`, together with the shift.
pub fn shifted_system(a: &DMatrix<f64>, beta: &[f64], delta: &[f64]) -> (DMatrix<f64>, f64) {
    let n = a.nrows();
    let shift = delta.iter().copied().fold(0.0, f64::max) + 1.0;
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= beta[i];
        }
        m[(i, i)] += shift - delta[i];
    }
    (m, shift)
}

/// Perron pair of the shifted system for an arbitrary adjacency matrix.
pub fn metzler_perron(
    a: &DMatrix<f64>,
    beta: &[f64],
    delta: &[f64],
    tol: f64,
) -> Result<(PerronPair, f64), SpectralError> {
    check_rates(a.nrows(), beta, delta)?;
    let (m, shift) = shifted_system(a, beta, delta);
    Ok((perron(&m, tol)?, shift))
}

/// Largest real part of an eigenvalue of `diag(beta) A - diag(delta)`.
pub fn metzler_abscissa(
    a: &DMatrix<f64>,
    beta: &[f64],
    delta: &[f64],
    tol: f64,
) -> Result<f64, SpectralError> {
    let (pair, shift) = metzler_perron(a, beta, delta, tol)?;
    Ok(pair.rho - shift)
}

pub fn spectral_abscissa(
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    tol: f64,
) -> Result<f64, SpectralError> {
    metzler_abscissa(&net.adjacency(), beta, delta, tol)
}

/// Gradients of the spectral abscissa with respect to every `beta_k` and
/// `delta_k`, from the first-order perturbation `w^T dM v` with `w^T v = 1`.
#[derive(Debug, Clone)]
pub struct AbscissaGradient {
    pub abscissa: f64,
    pub d_beta: Vec<f64>,
    pub d_delta: Vec<f64>,
}

pub fn abscissa_gradient(
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    tol: f64,
) -> Result<AbscissaGradient, SpectralError> {
    let a = net.adjacency();
    let (pair, shift) = metzler_perron(&a, beta, delta, tol)?;
    let av = &a * &pair.right;
    let d_beta = (0..a.nrows()).map(|k| pair.left[k] * av[k]).collect();
    let d_delta = (0..a.nrows()).map(|k| -pair.left[k] * pair.right[k]).collect();
    Ok(AbscissaGradient { abscissa: pair.rho - shift, d_beta, d_delta })
}

/// `d lambda_1 / d beta_k = w_k (a_k . v)`, `a_k` the k-th row of `A`.
pub fn sensitivity_beta(
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    k: usize,
    tol: f64,
) -> Result<f64, SpectralError> {
    check_index(net, k)?;
    Ok(abscissa_gradient(net, beta, delta, tol)?.d_beta[k])
}

/// `d lambda_1 / d delta_k = -w_k v_k`.
pub fn sensitivity_delta(
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    k: usize,
    tol: f64,
) -> Result<f64, SpectralError> {
    check_index(net, k)?;
    Ok(abscissa_gradient(net, beta, delta, tol)?.d_delta[k])
}

fn check_index(net: &ContactNetwork, k: usize) -> Result<(), SpectralError> {
    if k >= net.node_count() {
        return Err(SpectralError::LengthMismatch { expected: net.node_count(), got: k + 1 });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::Edge;
    use approx::assert_relative_eq;

    fn two_cycle() -> ContactNetwork {
        ContactNetwork::new(
            2,
            vec![Edge { src: 0, dst: 1, weight: 1.0 }, Edge { src: 1, dst: 0, weight: 1.0 }],
        )
        .unwrap()
    }

    #[test]
    fn perron_two_by_two() {
        // lambda^2 = 16; v = (1, 2)/sqrt5, w proportional to (2, 1).
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 8.0, 0.0]);
        let p = perron(&m, DEFAULT_TOL).unwrap();
        assert_relative_eq!(p.rho, 4.0, epsilon = 1e-10);
        assert_relative_eq!(p.right[1] / p.right[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(p.left[0] / p.left[1], 2.0, epsilon = 1e-9);
        assert_relative_eq!(p.right.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.left.dot(&p.right), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn perron_unit_three_cycle() {
        let m = DMatrix::from_row_slice(3, 3, &[0., 0., 1., 1., 0., 0., 0., 1., 0.]);
        let p = perron(&m, DEFAULT_TOL).unwrap();
        assert_relative_eq!(p.rho, 1.0, epsilon = 1e-10);
        for i in 0..3 {
            assert_relative_eq!(p.right[i], 1.0 / 3f64.sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn perron_swap_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_relative_eq!(perron(&m, DEFAULT_TOL).unwrap().rho, 1.0, epsilon = 1e-10);
        assert_relative_eq!(perron_oracle(&m, 40), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn perron_rejects_bad_input() {
        let path = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(perron(&path, DEFAULT_TOL).unwrap_err(), SpectralError::Reducible);
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(matches!(perron(&neg, DEFAULT_TOL), Err(SpectralError::NegativeEntry(0, 1))));
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(perron(&rect, DEFAULT_TOL), Err(SpectralError::NotSquare { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(perron(&m, 0.0).unwrap_err(), SpectralError::BadTolerance);
    }

    #[test]
    fn oracle_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 8.0, 0.0]);
        assert_relative_eq!(perron_oracle(&m, 40), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn abscissa_homogeneous_two_cycle() {
        let a = spectral_abscissa(&two_cycle(), &[0.5, 0.5], &[0.2, 0.2], DEFAULT_TOL).unwrap();
        assert_relative_eq!(a, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn abscissa_heterogeneous_two_cycle() {
        // Eigenvalues of [[0, 1], [4, 0]] are +-2.
        let a = spectral_abscissa(&two_cycle(), &[1.0, 4.0], &[1e-9, 1e-9], DEFAULT_TOL).unwrap();
        assert_relative_eq!(a, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn abscissa_rejects_bad_rates() {
        let g = two_cycle();
        assert_eq!(
            spectral_abscissa(&g, &[1.0], &[1.0, 1.0], DEFAULT_TOL).unwrap_err(),
            SpectralError::LengthMismatch { expected: 2, got: 1 }
        );
        assert_eq!(
            spectral_abscissa(&g, &[1.0, 0.0], &[1.0, 1.0], DEFAULT_TOL).unwrap_err(),
            SpectralError::BadRate
        );
    }

    #[test]
    fn sensitivities_on_two_cycle() {
        let g = two_cycle();
        let delta = [1e-9, 1e-9];
        // d sqrt(b1 b2) / d b1 = sqrt(b2 / b1) / 2 = 1 at (1, 4).
        let sb = sensitivity_beta(&g, &[1.0, 4.0], &delta, 0, DEFAULT_TOL).unwrap();
        assert_relative_eq!(sb, 1.0, epsilon = 1e-6);
        let sb = sensitivity_beta(&g, &[0.7, 0.7], &delta, 0, DEFAULT_TOL).unwrap();
        assert_relative_eq!(sb, 0.5, epsilon = 1e-6);
        // lambda = (-d1 + sqrt(d1^2 + 16)) / 2 near d1 = 0 has slope -1/2.
        let sd = sensitivity_delta(&g, &[1.0, 4.0], &delta, 0, DEFAULT_TOL).unwrap();
        assert_relative_eq!(sd, -0.5, epsilon = 1e-6);
    }

    #[test]
    fn delta_sensitivities_average_to_minus_one_over_n() {
        let g = crate::netgraph::generate_cycle_plus_random(5, 0, (1.0, 1.0), 0).unwrap();
        let grad = abscissa_gradient(&g, &[0.3; 5], &[0.2; 5], DEFAULT_TOL).unwrap();
        let mean: f64 = grad.d_delta.iter().sum::<f64>() / 5.0;
        assert_relative_eq!(mean, -0.2, epsilon = 1e-9);
        assert!(grad.d_beta.iter().all(|&x| x > 0.0));
    }
}
