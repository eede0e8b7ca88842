//! Closed-form predictions for kernels at initialization, used as oracles
//! for Monte Carlo estimates.

use crate::gram::data_gram;
use crate::linalg::{hadamard, LinalgError, Matrix};
use crate::network::NetConfig;

/// Which closed form produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionSource {
    /// `E[K₀] = d σ^(2(d-1)) (xᵀx) ⊙ λ`.
    KernelAtInit,
    /// `E[K^a₀] = σ^(2d) (xᵀx) ⊙ δ`.
    GateKernelAtInit,
    /// Diagonal 1, off-diagonal `μ^(d-1)`.
    IdealFrg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryPrediction {
    pub expected_gram: Matrix,
    /// Order-of-magnitude bound on the entry variance (constant taken as 1).
    pub variance_bound: Option<f64>,
    pub source: PredictionSource,
}

/// Bundles the expected kernel with its variance bound for one config.
pub fn predict_kernel_at_init(
    xs: &[Vec<f64>],
    lambda: &Matrix,
    config: &NetConfig,
) -> Result<TheoryPrediction, LinalgError> {
    Ok(TheoryPrediction {
        expected_gram: expected_gram(xs, lambda, config.depth, config.sigma)?,
        variance_bound: Some(variance_bound(config.d_in, config.sigma, config.depth, config.width)),
        source: PredictionSource::KernelAtInit,
    })
}

/// `d · σ^(2(d-1)) · (xᵀx ⊙ λ)`.
pub fn expected_gram(xs: &[Vec<f64>], lambda: &Matrix, d: usize, sigma: f64) -> Result<Matrix, LinalgError> {
    Ok(hadamard(&data_gram(xs), lambda)?.scale(d as f64 * sigma.powi(2 * (d as i32 - 1))))
}

/// Expected strength kernel of a soft-GaLU net with the gating weights held
/// fixed: every path contributes through each of its `d` weights, which
/// gives the same depth factor as the full kernel of a frozen-gate net.
pub fn expected_kw(xs: &[Vec<f64>], lambda: &Matrix, d: usize, sigma: f64) -> Result<Matrix, LinalgError> {
    expected_gram(xs, lambda, d, sigma)
}

/// `σ^(2(d-1)) · (xᵀx ⊙ λ)`, the strength-kernel expectation without the
/// depth factor. Kept for comparison with [`expected_kw`].
pub fn expected_kw_no_depth_factor(
    xs: &[Vec<f64>],
    lambda: &Matrix,
    d: usize,
    sigma: f64,
) -> Result<Matrix, LinalgError> {
    Ok(hadamard(&data_gram(xs), lambda)?.scale(sigma.powi(2 * (d as i32 - 1))))
}

/// `σ^(2d) · (xᵀx ⊙ δ)`.
pub fn expected_ka(xs: &[Vec<f64>], delta: &Matrix, d: usize, sigma: f64) -> Result<Matrix, LinalgError> {
    Ok(hadamard(&data_gram(xs), delta)?.scale(sigma.powi(2 * d as i32)))
}

/// Expected overlap of fixed random gates: `((μw)^(d-1), (μ²w)^(d-1))`
/// for an example with itself and for two distinct examples.
pub fn frg_lambda_bar(mu: f64, w: usize, d: usize) -> (f64, f64) {
    let e = d as i32 - 1;
    ((mu * w as f64).powi(e), (mu * mu * w as f64).powi(e))
}

/// n×n matrix with `λ̄_self` on the diagonal and `λ̄_cross` elsewhere.
pub fn frg_lambda_bar_matrix(n: usize, mu: f64, w: usize, d: usize) -> Matrix {
    let (own, cross) = frg_lambda_bar(mu, w, d);
    Matrix::from_fn(n, n, |s, t| if s == t { own } else { cross })
}

/// Diagonal 1, off-diagonal `μ^(d-1)`.
pub fn ideal_frg_gram(n: usize, mu: f64, d: usize) -> Matrix {
    let off = mu.powi(d as i32 - 1);
    Matrix::from_fn(n, n, |s, t| if s == t { 1.0 } else { off })
}

/// Ascending eigenvalues of [`ideal_frg_gram`]: `1 - μ^(d-1)` with
/// multiplicity `n-1`, then `1 + (n-1) μ^(d-1)`.
pub fn ideal_frg_spectrum(n: usize, mu: f64, d: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let off = mu.powi(d as i32 - 1);
    let mut v = vec![1.0 - off; n - 1];
    v.push(1.0 + (n as f64 - 1.0) * off);
    v
}

/// `d_in² σ^(4(d-1)) max{d² w^(2(d-2)+1), d³ w^(2(d-2))}`.
pub fn variance_bound(d_in: usize, sigma: f64, d: usize, w: usize) -> f64 {
    let (d, w) = (d as f64, w as f64);
    let e = 2.0 * (d - 2.0);
    let a = d * d * w.powf(e + 1.0);
    let b = d * d * d * w.powf(e);
    (d_in as f64).powi(2) * sigma.powf(4.0 * (d - 1.0)) * a.max(b)
}

/// `√(1/(μw))`, which makes `σ² μ w = 1`.
pub fn choice_of_sigma(mu: f64, w: usize) -> f64 {
    (1.0 / (mu * w as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;

    #[test]
    fn lambda_bar_values() {
        assert_eq!(frg_lambda_bar(0.5, 100, 3), (2500.0, 625.0));
        assert_eq!(frg_lambda_bar(0.3, 10, 2), (3.0, 0.3f64 * 0.3 * 10.0));
    }

    #[test]
    fn ideal_gram_and_spectrum() {
        let g = ideal_frg_gram(2, 0.5, 2);
        assert_eq!(g, Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap());
        assert_eq!(ideal_frg_gram(1, 0.5, 4), Matrix::identity(1));
        assert_eq!(ideal_frg_spectrum(3, 0.5, 2), vec![0.5, 0.5, 2.0]);
        let deep = ideal_frg_gram(4, 0.5, 200);
        assert!(deep.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-50);
        assert!(ideal_frg_spectrum(5, 1e-300, 3).iter().all(|&v| v == 1.0));
        for (n, mu, d) in [(5, 0.3, 6), (50, 0.5, 2)] {
            let e = sym_eigen(&ideal_frg_gram(n, mu, d)).unwrap();
            let want = ideal_frg_spectrum(n, mu, d);
            assert!(e.values.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
            assert!((want.iter().sum::<f64>() - n as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_bound_values() {
        let w = 100;
        let v = variance_bound(1, (1.0 / w as f64).sqrt(), 4, w);
        assert!((v - 0.16).abs() < 1e-12);
        let wide = variance_bound(1, (1.0 / 1e6f64).sqrt(), 4, 1_000_000);
        assert!(wide < 1e-4);
    }

    #[test]
    fn sigma_choices() {
        assert!((choice_of_sigma(0.5, 2) - 1.0).abs() < 1e-15);
        assert!((choice_of_sigma(0.5, 500) - (2.0f64 / 500.0).sqrt()).abs() < 1e-15);
        assert!((choice_of_sigma(1.0, 100) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dln_corollary() {
        for d in 2..7 {
            for w in [1usize, 3, 10] {
                let sigma = (1.0 / w as f64).sqrt();
                let lam = Matrix::filled(1, 1, (w as f64).powi(d as i32 - 1));
                let k = expected_gram(&[vec![1.0]], &lam, d, sigma).unwrap();
                assert!((k[(0, 0)] - d as f64).abs() < 1e-9 * d as f64);
            }
        }
    }

    #[test]
    fn frg_expected_gram_is_ideal_times_depth() {
        let (n, mu, w, d) = (4, 0.5, 30, 5);
        let sigma = choice_of_sigma(mu, w);
        let xs = vec![vec![1.0]; n];
        let k = expected_gram(&xs, &frg_lambda_bar_matrix(n, mu, w, d), d, sigma).unwrap();
        let ideal = ideal_frg_gram(n, mu, d);
        assert!(k.scale(1.0 / d as f64).sub(&ideal).unwrap().max_abs() < 1e-12);
        assert_eq!(expected_gram(&xs, &Matrix::zeros(n, n), d, sigma).unwrap(), Matrix::zeros(n, n));
    }
}
