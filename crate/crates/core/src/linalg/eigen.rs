//! Symmetric eigendecomposition (cyclic Jacobi) and ridge-regularized solves.

use super::{LinalgError, Matrix};

/// Relative symmetry tolerance accepted on input.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Sweeps stop once every off-diagonal entry is below this fraction of `‖A‖_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

/// Eigen-pairs of a symmetric matrix, eigenvalues ascending.
///
/// Column `k` of `vectors` is the unit eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    /// `QΛQᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)])
                .sum()
        })
    }
}

pub fn sym_eigen(a: &Matrix) -> Result<SymEigen, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.shape()));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(LinalgError::NotSymmetric);
    }
    let n = a.rows();
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    // Work on the exactly symmetrized copy.
    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let tol = OFF_DIAGONAL_TOL * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..=MAX_SWEEPS {
        if max_off_diagonal(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: MAX_SWEEPS,
            off_diagonal: max_off_diagonal(&m),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&k| m[(k, k)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(SymEigen { values, vectors })
}

fn max_off_diagonal(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max(m[(i, j)].abs());
        }
    }
    worst
}

/// One Jacobi rotation annihilating `m[p][q]`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = m.rows();
    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Solves `(a + jitter·I) v = y` through a Cholesky factorization.
pub fn regularized_solve(a: &Matrix, y: &[f64], jitter: f64) -> Result<Vec<f64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.shape()));
    }
    let n = a.rows();
    if y.len() != n {
        return Err(LinalgError::DimensionMismatch {
            op: "regularized_solve",
            left: a.shape(),
            right: (y.len(), 1),
        });
    }
    if jitter < 0.0 || !jitter.is_finite() {
        return Err(LinalgError::InvalidJitter(jitter));
    }
    let l = cholesky(a, jitter)?;

    // L z = y, then Lᵀ v = z.
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * z[k]).sum();
        z[i] = (y[i] - s) / l[(i, i)];
    }
    let mut v = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[(k, i)] * v[k]).sum();
        v[i] = (z[i] - s) / l[(i, i)];
    }
    Ok(v)
}

fn cholesky(a: &Matrix, jitter: f64) -> Result<Matrix, LinalgError> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = 0.5 * (a[(i, j)] + a[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matmul, Prng};

    /// Orthonormal matrix via Gram-Schmidt on a random square matrix.
    fn random_orthonormal(n: usize, rng: &mut Prng) -> Matrix {
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            for c in &cols {
                let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= proj * ci;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Matrix::from_fn(n, n, |i, j| cols[j][i])
    }

    fn random_symmetric(n: usize, rng: &mut Prng) -> Matrix {
        let b = Matrix::from_fn(n, n, |_, _| rng.uniform_in(-1.0, 1.0));
        b.add(&b.transpose()).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let e = sym_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn ideal_frg_three_by_three() {
        // diag 1, off-diagonal μ^{d-1} = 0.5
        let a = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.5 });
        let e = sym_eigen(&a).unwrap();
        for (got, want) in e.values.iter().zip([0.5, 0.5, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn constructed_spectrum_is_recovered() {
        let mut rng = Prng::new(11);
        let q = random_orthonormal(4, &mut rng);
        let lambda = Matrix::diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let a = matmul(&matmul(&q, &lambda).unwrap(), &q.transpose()).unwrap();
        let a = Matrix::from_fn(4, 4, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
        let e = sym_eigen(&a).unwrap();
        for (got, want) in e.values.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn orthonormal_and_reconstructs() {
        let mut rng = Prng::new(5);
        for n in [1, 2, 7, 20] {
            let a = random_symmetric(n, &mut rng);
            let e = sym_eigen(&a).unwrap();
            let qtq = matmul(&e.vectors.transpose(), &e.vectors).unwrap();
            assert!(qtq.sub(&Matrix::identity(n)).unwrap().max_abs() < 1e-10);
            let err = e.reconstruct().sub(&a).unwrap().frobenius_norm();
            assert!(err <= 1e-9 * a.frobenius_norm());
            let sum: f64 = e.values.iter().sum();
            assert!((sum - a.trace()).abs() <= 1e-9 * a.frobenius_norm());
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_non_symmetric() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&a), Err(LinalgError::NotSymmetric)));
    }

    #[test]
    fn solve_cases() {
        let v = regularized_solve(&Matrix::identity(2), &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(v, vec![1.0, 1.0]);
        let v = regularized_solve(&Matrix::identity(2).scale(2.0), &[2.0, 4.0], 0.0).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_solve_with_jitter() {
        let a = Matrix::filled(2, 2, 1.0);
        let j = 1e-8;
        let v = regularized_solve(&a, &[1.0, 1.0], j).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
        let r0 = (1.0 + j) * v[0] + v[1] - 1.0;
        let r1 = v[0] + (1.0 + j) * v[1] - 1.0;
        assert!((r0 * r0 + r1 * r1).sqrt() < 1e-6);
        assert!(regularized_solve(&a, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn solve_agrees_with_spectral_inverse() {
        let mut rng = Prng::new(21);
        let b = Matrix::from_fn(6, 6, |_, _| rng.uniform_in(-1.0, 1.0));
        let a = matmul(&b.transpose(), &b)
            .unwrap()
            .add(&Matrix::identity(6))
            .unwrap();
        let y: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let v = regularized_solve(&a, &y, 0.0).unwrap();
        let e = sym_eigen(&a).unwrap();
        for i in 0..6 {
            let mut w = 0.0;
            for k in 0..6 {
                let u = e.vector(k);
                let uy: f64 = u.iter().zip(&y).map(|(a, b)| a * b).sum();
                w += u[i] * uy / e.values[k];
            }
            assert!((w - v[i]).abs() < 1e-8);
        }
    }
}
