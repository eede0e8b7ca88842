//! Tangent-feature kernels: the NTF matrix Ψ, the Gram `K = ΨᵀΨ` and its
//! soft-GaLU split, the gate overlap λ, the feature Gram `M = (xᵀx) ⊙ λ`,
//! gate-overlap statistics, spectrum ECDFs and the ν diagnostic.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, dot, gram_of_columns, hadamard, LinalgError, Matrix, SymEigen};
use crate::network::{Backprop, Example, GatingVariant, Network, NetworkError};

#[derive(Debug, Error)]
pub enum GramError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("the strength/gate split needs a soft-galu net with both parameter sets trainable, got {0}")]
    NoSplit(GatingVariant),
    #[error("example {example} has no active gates in layer {layer}; η is undefined")]
    DeadLayer { example: usize, layer: usize },
    #[error("matrix trace must be positive, got {0}")]
    NonPositiveTrace(f64),
    #[error("empty input")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramKind {
    Full,
    Strength,
    Gate,
    Feature,
    Overlap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub kind: GramKind,
    pub matrix: Matrix,
}

impl GramMatrix {
    pub fn new(kind: GramKind, matrix: Matrix) -> Self {
        Self { kind, matrix }
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn spectrum(&self) -> Result<SymEigen, GramError> {
        Ok(linalg::sym_eigen(&self.matrix)?)
    }
}

/// `Ψ` with one column per example; soft-GaLU stacks the strength rows over
/// the gating rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NtfMatrix {
    pub psi: Matrix,
    pub strength_rows: usize,
    pub gating_rows: usize,
    pub variant: GatingVariant,
}

fn examples(xs: &[Vec<f64>]) -> impl Iterator<Item = Example<'_>> {
    xs.iter().enumerate().map(|(s, x)| Example::indexed(s, x))
}

/// Explicit `Ψ`; memory is `trainable × n`, so keep to small nets.
pub fn ntf_matrix(net: &Network, xs: &[Vec<f64>]) -> Result<NtfMatrix, GramError> {
    let cols = examples(xs)
        .map(|ex| net.ntf_column(ex))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = net.trainable_len();
    let psi = Matrix::from_fn(rows, xs.len(), |m, s| cols[s][m]);
    let d_net = net.config().d_net();
    let strength_rows = if net.config().train_strength { d_net } else { 0 };
    Ok(NtfMatrix {
        psi,
        strength_rows,
        gating_rows: rows - strength_rows,
        variant: net.config().variant,
    })
}

/// `K = ΨᵀΨ`.
pub fn gram(ntf: &NtfMatrix) -> GramMatrix {
    GramMatrix::new(GramKind::Full, gram_of_columns(&ntf.psi))
}

fn block_gram(psi: &Matrix, rows: std::ops::Range<usize>) -> Matrix {
    let n = psi.cols();
    let mut k = Matrix::zeros(n, n);
    for m in rows {
        let r = psi.row(m);
        for s in 0..n {
            if r[s] == 0.0 {
                continue;
            }
            for t in 0..n {
                k.as_mut_slice()[s * n + t] += r[s] * r[t];
            }
        }
    }
    k
}

/// `(K^w, K^a)` from the strength and gating blocks of a soft-GaLU `Ψ`.
pub fn gram_split_soft_galu(ntf: &NtfMatrix) -> Result<(GramMatrix, GramMatrix), GramError> {
    if ntf.variant != GatingVariant::SoftGalu || ntf.strength_rows == 0 || ntf.gating_rows == 0 {
        return Err(GramError::NoSplit(ntf.variant));
    }
    let kw = block_gram(&ntf.psi, 0..ntf.strength_rows);
    let ka = block_gram(&ntf.psi, ntf.strength_rows..ntf.strength_rows + ntf.gating_rows);
    Ok((GramMatrix::new(GramKind::Strength, kw), GramMatrix::new(GramKind::Gate, ka)))
}

/// Kernel computed without materializing `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    /// Gram of the strength-weight gradients. For soft-ReLU these already
    /// include the gate-derivative flow, since the parameters are shared.
    pub strength: Option<Matrix>,
    /// Gram of the soft-GaLU gating-weight gradients.
    pub gate: Option<Matrix>,
}

impl Kernel {
    pub fn total(&self) -> Matrix {
        match (&self.strength, &self.gate) {
            (Some(a), Some(b)) => a.add(b).expect("same shape"),
            (Some(a), None) | (None, Some(a)) => a.clone(),
            (None, None) => Matrix::zeros(0, 0),
        }
    }

    pub fn full(&self) -> GramMatrix {
        GramMatrix::new(GramKind::Full, self.total())
    }
}

fn factored_gram(bps: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)]) -> Matrix {
    let n = bps.len();
    let mut k = Matrix::zeros(n, n);
    for s in 0..n {
        for t in s..n {
            let (zs, ds) = &bps[s];
            let (zt, dt) = &bps[t];
            let v: f64 = (0..zs.len()).map(|l| dot(&zs[l], &zt[l]) * dot(&ds[l], &dt[l])).sum();
            k.as_mut_slice()[s * n + t] = v;
            k.as_mut_slice()[t * n + s] = v;
        }
    }
    k
}

/// `K` via the per-layer factorization of each gradient
/// (`∂ŷ/∂Θ(l) = z(l-1) δq(l)ᵀ`), so `⟨ψ_s, ψ_t⟩ = Σ_l ⟨z_s, z_t⟩⟨δ_s, δ_t⟩`.
/// Examples are processed in parallel; the result is order-independent.
pub fn kernel(net: &Network, xs: &[Vec<f64>]) -> Result<Kernel, GramError> {
    let bps: Vec<Backprop> = xs
        .par_iter()
        .enumerate()
        .map(|(s, x)| {
            let cache = net.forward(Example::indexed(s, x))?;
            Ok(net.backward(&cache))
        })
        .collect::<Result<_, NetworkError>>()?;
    let config = net.config();
    let strength = config.train_strength.then(|| {
        let parts: Vec<_> = bps
            .iter()
            .map(|b| (b.strength.inputs.clone(), b.strength.deltas.clone()))
            .collect();
        factored_gram(&parts)
    });
    let gate = (config.train_gating && config.variant == GatingVariant::SoftGalu).then(|| {
        let parts: Vec<_> = bps
            .iter()
            .map(|b| {
                let g = b.gating.as_ref().expect("soft-galu backprop has a gating block");
                (g.inputs.clone(), g.deltas.clone())
            })
            .collect();
        factored_gram(&parts)
    });
    Ok(Kernel { strength, gate })
}

/// Gate tensors for every example, `(d-1) × w` each.
pub fn gate_tensors(net: &Network, xs: &[Vec<f64>]) -> Result<Vec<Matrix>, GramError> {
    xs.par_iter()
        .enumerate()
        .map(|(s, x)| net.compute_gates(Example::indexed(s, x)).map_err(GramError::from))
        .collect()
}

/// `λ(s,s') = Π_l Σ_j G_s(l,j) G_s'(l,j)`.
pub fn lambda_matrix(gates: &[Matrix]) -> GramMatrix {
    let n = gates.len();
    let mut lam = Matrix::filled(n, n, 1.0);
    for s in 0..n {
        for t in s..n {
            let v: f64 = (0..gates[s].rows())
                .map(|l| dot(gates[s].row(l), gates[t].row(l)))
                .product();
            lam.as_mut_slice()[s * n + t] = v;
            lam.as_mut_slice()[t * n + s] = v;
        }
    }
    GramMatrix::new(GramKind::Overlap, lam)
}

/// `xᵀx` for examples stored as rows.
pub fn data_gram(xs: &[Vec<f64>]) -> Matrix {
    let n = xs.len();
    Matrix::from_fn(n, n, |s, t| dot(&xs[s], &xs[t]))
}

/// `M = (xᵀx) ⊙ λ`.
pub fn feature_gram(xs: &[Vec<f64>], lambda: &GramMatrix) -> Result<GramMatrix, GramError> {
    Ok(GramMatrix::new(GramKind::Feature, hadamard(&data_gram(xs), &lambda.matrix)?))
}

/// Per-layer gate overlaps and the decay rate bound.
#[derive(Debug, Clone, PartialEq)]
pub struct TauEta {
    /// `tau[l]` is the n×n table of `τ(s,s',l+1)`.
    pub tau: Vec<Matrix>,
    pub eta: f64,
    /// `λ(s,s')/λ(s,s)`.
    pub lambda_ratio: Matrix,
    /// `η^(d-1)`.
    pub bound: f64,
}

impl TauEta {
    /// Every off-diagonal ratio respects the `η^(d-1)` bound.
    pub fn bound_holds(&self, slack: f64) -> bool {
        let n = self.lambda_ratio.rows();
        (0..n).all(|s| (0..n).all(|t| s == t || self.lambda_ratio[(s, t)] <= self.bound + slack))
    }
}

/// `τ(s,s',l) = Σ_i G_s(l,i) G_s'(l,i)` and `η = max_s max_{s'≠s, l} τ(s,s',l)/τ(s,s,l)`.
pub fn tau_eta(gates: &[Matrix]) -> Result<TauEta, GramError> {
    let n = gates.len();
    if n == 0 {
        return Err(GramError::Empty);
    }
    let layers = gates[0].rows();
    let tau: Vec<Matrix> = (0..layers)
        .map(|l| Matrix::from_fn(n, n, |s, t| dot(gates[s].row(l), gates[t].row(l))))
        .collect();
    let mut eta = 0.0f64;
    for (l, t) in tau.iter().enumerate() {
        for s in 0..n {
            let own = t[(s, s)];
            if own <= 0.0 {
                return Err(GramError::DeadLayer { example: s, layer: l + 1 });
            }
            for s2 in (0..n).filter(|&s2| s2 != s) {
                eta = eta.max(t[(s, s2)] / own);
            }
        }
    }
    if n == 1 {
        eta = 1.0;
    }
    let lam = lambda_matrix(gates).matrix;
    let lambda_ratio = Matrix::from_fn(n, n, |s, t| lam[(s, t)] / lam[(s, s)]);
    Ok(TauEta { tau, eta, lambda_ratio, bound: eta.powi(layers as i32) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    ByMax,
    ByTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub ecdf: Vec<f64>,
    pub normalization: Normalization,
}

/// Ascending eigenvalues and their running sums, optionally rescaled by the
/// largest eigenvalue or by the trace.
pub fn ecdf(eigenvalues: &[f64], normalization: Normalization) -> Result<SpectrumReport, GramError> {
    if eigenvalues.is_empty() {
        return Err(GramError::Empty);
    }
    let mut ev = eigenvalues.to_vec();
    ev.sort_by(f64::total_cmp);
    let scale = match normalization {
        Normalization::None => 1.0,
        Normalization::ByMax => *ev.last().unwrap(),
        Normalization::ByTrace => ev.iter().sum(),
    };
    if scale <= 0.0 {
        return Err(GramError::NonPositiveTrace(scale));
    }
    for v in &mut ev {
        *v /= scale;
    }
    let ecdf = ev
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    Ok(SpectrumReport { eigenvalues: ev, ecdf, normalization })
}

/// Largest pointwise gap between two ECDF curves of equal length.
pub fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative ridge used when no jitter is given: `1e-8 · trace/n` of the
/// (possibly normalized) matrix.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-8;

/// `ν = yᵀ(Ĥ + jitter·I)⁻¹y`, with `Ĥ = H/trace(H)` when `normalize`.
pub fn nu(h: &Matrix, y: &[f64], normalize: bool, jitter: Option<f64>) -> Result<f64, GramError> {
    let n = h.rows();
    if y.len() != n {
        return Err(GramError::Shape(format!("y has {} entries, H is {n}×{n}", y.len())));
    }
    let tr = h.trace();
    if !(tr > 0.0) {
        return Err(GramError::NonPositiveTrace(tr));
    }
    let hh = if normalize { h.scale(1.0 / tr) } else { h.clone() };
    let jitter = jitter.unwrap_or(DEFAULT_RELATIVE_JITTER * hh.trace() / n as f64);
    let v = linalg::regularized_solve(&hh, y, jitter)?;
    Ok(dot(y, &v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Prng;
    use crate::network::NetConfig;

    #[test]
    fn ecdf_examples() {
        let r = ecdf(&[1.0, 1.0, 1.0], Normalization::None).unwrap();
        assert_eq!(r.ecdf, vec![1.0, 2.0, 3.0]);
        let r = ecdf(&[2.0, 0.5, 0.5], Normalization::None).unwrap();
        assert_eq!(r.ecdf, vec![0.5, 1.0, 3.0]);
        let r = ecdf(&[3.0, 1.0, 2.0], Normalization::ByTrace).unwrap();
        assert!((r.ecdf[2] - 1.0).abs() < 1e-15);
        let r = ecdf(&[3.0, 1.0, 2.0], Normalization::ByMax).unwrap();
        assert_eq!(r.eigenvalues[2], 1.0);
        assert!(ecdf(&[], Normalization::None).is_err());
    }

    #[test]
    fn nu_examples() {
        let i = Matrix::identity(2);
        assert!((nu(&i, &[1.0, 1.0], false, Some(0.0)).unwrap() - 2.0).abs() < 1e-15);
        assert!((nu(&i, &[1.0, 1.0], true, Some(0.0)).unwrap() - 4.0).abs() < 1e-14);
        assert!(nu(&Matrix::zeros(2, 2), &[1.0, 1.0], true, None).is_err());
    }

    #[test]
    fn tau_eta_examples() {
        let g = Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0]]).unwrap();
        let same = tau_eta(&[g.clone(), g.clone()]).unwrap();
        assert_eq!(same.eta, 1.0);
        let h = Matrix::from_rows(&[[0.0, 1.0, 1.0, 0.0]]).unwrap();
        let half = tau_eta(&[g.clone(), h]).unwrap();
        assert_eq!(half.eta, 0.5);
        assert_eq!(half.tau[0][(0, 1)], 1.0);
        let dead = Matrix::zeros(1, 4);
        assert!(matches!(tau_eta(&[g, dead]), Err(GramError::DeadLayer { example: 1, layer: 1 })));
    }

    #[test]
    fn lambda_on_dln_is_constant() {
        let mut rng = Prng::new(1);
        let net = Network::init(NetConfig::new(GatingVariant::Dln, 2, 3, 4), &mut rng).unwrap();
        let xs = vec![vec![1.0, 0.0], vec![0.3, -2.0]];
        let lam = lambda_matrix(&gate_tensors(&net, &xs).unwrap());
        assert!(lam.matrix.as_slice().iter().all(|&v| v == 27.0));
    }

    #[test]
    fn split_requires_soft_galu() {
        let mut rng = Prng::new(1);
        let net = Network::init(NetConfig::new(GatingVariant::SoftRelu, 1, 2, 3), &mut rng).unwrap();
        let ntf = ntf_matrix(&net, &[vec![1.0]]).unwrap();
        assert!(matches!(gram_split_soft_galu(&ntf), Err(GramError::NoSplit(_))));
    }
}
