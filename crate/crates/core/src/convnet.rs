//! One-dimensional gated circular convolutions with global average pooling.
//!
//! Layer `l` maps `in ↦ out[i] = G_l[i] · Σ_k θ_l(k) · in[(i+k) mod d_in]`;
//! the head averages the last layer. A path is a start node plus one tap per
//! layer, so its node sequence is `p(l) = p(l-1) - k_l (mod d_in)`. Paths
//! with the same taps form a bundle: the `d_in` cyclic translates sharing one
//! strength `Π_l θ_l(k_l) / d_in`.

use thiserror::Error;

use crate::linalg::{mean_and_se, Matrix, Prng};
use crate::paths::PathBudget;

#[derive(Debug, Error)]
pub enum ConvError {
    #[error("invalid conv config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bundle enumeration needs {needed} paths, budget is {limit}")]
    BudgetExceeded { needed: u64, limit: u64 },
    #[error("no fixed random gates stored for example {0}")]
    UnregisteredInput(usize),
}

/// Where the per-node gates of the conv layers come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvGating {
    AllOnes,
    /// Bernoulli(μ) gates drawn per example and frozen.
    Random { mu: f64 },
    /// 0/1 pattern of a frozen twin conv network with its own taps.
    GaluFrozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvConfig {
    pub d_in: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    pub sigma: f64,
    pub gating: ConvGating,
}

impl ConvConfig {
    pub fn new(d_in: usize, kernel: usize, conv_layers: usize) -> Self {
        Self { d_in, kernel, conv_layers, sigma: 1.0, gating: ConvGating::AllOnes }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_gating(mut self, gating: ConvGating) -> Self {
        self.gating = gating;
        self
    }

    /// Weighted layers: the conv layers plus the pooling head.
    pub fn depth(&self) -> usize {
        self.conv_layers + 1
    }

    pub fn validate(&self) -> Result<(), ConvError> {
        let bad = |m: &str| Err(ConvError::InvalidConfig(m.into()));
        if !(self.kernel > 0 && self.kernel < self.d_in) {
            return bad("kernel size must satisfy 0 < kernel < d_in");
        }
        if self.conv_layers == 0 {
            return bad("need at least one conv layer");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if let ConvGating::Random { mu } = self.gating {
            if !(mu > 0.0 && mu < 1.0) {
                return bad("mu must lie in (0, 1)");
            }
        }
        Ok(())
    }

    pub fn num_bundles(&self) -> Result<u64, ConvError> {
        (self.kernel as u64)
            .checked_pow(self.conv_layers as u32)
            .ok_or(ConvError::BudgetExceeded { needed: u64::MAX, limit: 0 })
    }
}

/// Taps of every conv layer: `taps[l][k] = θ_l(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub taps: Vec<Vec<f64>>,
}

impl ConvParams {
    pub fn init(config: &ConvConfig, rng: &mut Prng) -> Self {
        let taps = (0..config.conv_layers)
            .map(|_| (0..config.kernel).map(|_| rng.sym_bernoulli(config.sigma)).collect())
            .collect();
        Self { taps }
    }

    fn check(&self, config: &ConvConfig) -> Result<(), ConvError> {
        if self.taps.len() != config.conv_layers || self.taps.iter().any(|t| t.len() != config.kernel) {
            return Err(ConvError::Shape(format!(
                "expected {} layers of {} taps",
                config.conv_layers, config.kernel
            )));
        }
        Ok(())
    }
}

/// `out[i] = Σ_k θ(k) · x[(i+k) mod n]`.
pub fn circ_conv(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| taps.iter().enumerate().map(|(k, t)| t * x[(i + k) % n]).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvForward {
    /// Gated outputs of each conv layer.
    pub layers: Vec<Vec<f64>>,
    /// The pooled scalar output.
    pub output: f64,
}

/// Runs the conv stack with the given `L × d_in` gates.
pub fn circ_conv_forward(
    config: &ConvConfig,
    params: &ConvParams,
    gates: &Matrix,
    x: &[f64],
) -> Result<ConvForward, ConvError> {
    params.check(config)?;
    if x.len() != config.d_in || gates.shape() != (config.conv_layers, config.d_in) {
        return Err(ConvError::Shape("input or gate tensor".into()));
    }
    let mut cur = x.to_vec();
    let mut layers = Vec::with_capacity(config.conv_layers);
    for (l, taps) in params.taps.iter().enumerate() {
        let q = circ_conv(taps, &cur);
        cur = q.iter().zip(gates.row(l)).map(|(a, g)| a * g).collect();
        layers.push(cur.clone());
    }
    let output = cur.iter().sum::<f64>() / config.d_in as f64;
    Ok(ConvForward { layers, output })
}

/// `1{q > 0}` pattern of an ungated-by-itself ReLU conv net with `taps`.
pub fn relu_conv_gates(taps: &ConvParams, x: &[f64]) -> Matrix {
    let n = x.len();
    let mut gates = Matrix::zeros(taps.taps.len(), n);
    let mut cur = x.to_vec();
    for (l, t) in taps.taps.iter().enumerate() {
        let q = circ_conv(t, &cur);
        for (j, &v) in q.iter().enumerate() {
            gates.row_mut(l)[j] = if v > 0.0 { 1.0 } else { 0.0 };
        }
        cur = q.iter().map(|&v| v.max(0.0)).collect();
    }
    gates
}

/// A conv net's gate source for a fixed set of examples.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvGateSource {
    AllOnes,
    Random(Vec<Matrix>),
    Galu(ConvParams),
}

impl ConvGateSource {
    pub fn init(config: &ConvConfig, n: usize, rng: &mut Prng) -> Self {
        match config.gating {
            ConvGating::AllOnes => Self::AllOnes,
            ConvGating::Random { mu } => Self::Random(
                (0..n)
                    .map(|_| {
                        Matrix::from_fn(config.conv_layers, config.d_in, |_, _| {
                            if rng.bernoulli(mu) {
                                1.0
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect(),
            ),
            ConvGating::GaluFrozen => Self::Galu(ConvParams::init(config, rng)),
        }
    }

    /// Gates for example `s` with input `x`.
    pub fn gates(&self, config: &ConvConfig, s: usize, x: &[f64]) -> Result<Matrix, ConvError> {
        match self {
            Self::AllOnes => Ok(Matrix::filled(config.conv_layers, config.d_in, 1.0)),
            Self::Random(g) => g.get(s).cloned().ok_or(ConvError::UnregisteredInput(s)),
            Self::Galu(p) => Ok(relu_conv_gates(p, x)),
        }
    }
}

/// Tap sequence of bundle `k`, first layer most significant.
pub fn bundle_taps(config: &ConvConfig, mut k: u64) -> Vec<usize> {
    let mut taps = vec![0; config.conv_layers];
    for l in (0..config.conv_layers).rev() {
        taps[l] = (k % config.kernel as u64) as usize;
        k /= config.kernel as u64;
    }
    taps
}

/// Node sequence `p(0..L)` of the path starting at `start` with `taps`.
pub fn bundle_path(config: &ConvConfig, taps: &[usize], start: usize) -> Vec<usize> {
    let n = config.d_in;
    let mut nodes = Vec::with_capacity(taps.len() + 1);
    nodes.push(start);
    let mut cur = start;
    for &k in taps {
        cur = (cur + n - k % n) % n;
        nodes.push(cur);
    }
    nodes
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub id: u64,
    pub taps: Vec<usize>,
    /// Member paths as node sequences, one per start node; path index is
    /// `id · d_in + start`.
    pub paths: Vec<Vec<usize>>,
}

pub fn enumerate_bundles(config: &ConvConfig, budget: PathBudget) -> Result<Vec<Bundle>, ConvError> {
    config.validate()?;
    let b = config.num_bundles()?;
    let needed = b.saturating_mul(config.d_in as u64);
    if needed > budget.max_paths {
        return Err(ConvError::BudgetExceeded { needed, limit: budget.max_paths });
    }
    Ok((0..b)
        .map(|id| {
            let taps = bundle_taps(config, id);
            let paths = (0..config.d_in).map(|s| bundle_path(config, &taps, s)).collect();
            Bundle { id, taps, paths }
        })
        .collect())
}

/// `Π_l θ_l(k_l) / d_in`.
pub fn bundle_strength(config: &ConvConfig, params: &ConvParams, taps: &[usize]) -> f64 {
    taps.iter().enumerate().map(|(l, &k)| params.taps[l][k]).product::<f64>() / config.d_in as f64
}

/// Strength of a single path, read edge by edge from the circulant weights.
pub fn path_strength(config: &ConvConfig, params: &ConvParams, nodes: &[usize]) -> f64 {
    let n = config.d_in;
    let mut s = 1.0;
    for l in 0..config.conv_layers {
        // Edge p(l) → p(l+1) carries tap k with p(l) = p(l+1) + k.
        let k = (nodes[l] + n - nodes[l + 1]) % n;
        s *= if k < config.kernel { params.taps[l][k] } else { 0.0 };
    }
    s / n as f64
}

fn activation(gates: &Matrix, nodes: &[usize]) -> f64 {
    (1..nodes.len()).map(|l| gates[(l - 1, nodes[l])]).product()
}

/// `Σ_k Σ_{p ∈ b_k} x(p(0)) A(x,p) · strength(b_k)`.
pub fn output_via_bundles(
    config: &ConvConfig,
    params: &ConvParams,
    gates: &Matrix,
    x: &[f64],
    budget: PathBudget,
) -> Result<f64, ConvError> {
    let mut total = 0.0;
    for b in enumerate_bundles(config, budget)? {
        let f: f64 = b.paths.iter().map(|p| x[p[0]] * activation(gates, p)).sum();
        total += f * bundle_strength(config, params, &b.taps);
    }
    Ok(total)
}

/// `(σ^(2L)/d_in²) Σ_k F_k(s) F_k(s')` with `F_k = Σ_{p∈b_k} x(p(0)) A(x,p)`:
/// the expected product of the two pooled outputs over the tap weights.
pub fn invariance_expectation(
    config: &ConvConfig,
    gates_s: &Matrix,
    gates_t: &Matrix,
    x_s: &[f64],
    x_t: &[f64],
    budget: PathBudget,
) -> Result<f64, ConvError> {
    let bundles = enumerate_bundles(config, budget)?;
    let mut total = 0.0;
    for b in &bundles {
        let fs: f64 = b.paths.iter().map(|p| x_s[p[0]] * activation(gates_s, p)).sum();
        let ft: f64 = b.paths.iter().map(|p| x_t[p[0]] * activation(gates_t, p)).sum();
        total += fs * ft;
    }
    let n = config.d_in as f64;
    Ok(config.sigma.powi(2 * config.conv_layers as i32) / (n * n) * total)
}

/// Clockwise rotation: `out[j] = x[(j - i) mod d_in]`.
pub fn rotate_input(x: &[f64], i: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let i = i % n;
    (0..n).map(|j| x[(j + n - i) % n]).collect()
}

/// Rotates each row of a gate tensor like [`rotate_input`].
pub fn rotate_gates(g: &Matrix, i: usize) -> Matrix {
    let mut out = Matrix::zeros(g.rows(), g.cols());
    for l in 0..g.rows() {
        out.row_mut(l).copy_from_slice(&rotate_input(g.row(l), i));
    }
    out
}

/// Monte Carlo mean and standard error of `y(x_s) y(x_t)` over fresh tap
/// draws, with gates held fixed.
pub fn mc_output_product(
    config: &ConvConfig,
    gates_s: &Matrix,
    gates_t: &Matrix,
    x_s: &[f64],
    x_t: &[f64],
    draws: usize,
    rng: &mut Prng,
) -> Result<(f64, f64), ConvError> {
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let p = ConvParams::init(config, rng);
        let a = circ_conv_forward(config, &p, gates_s, x_s)?.output;
        let b = circ_conv_forward(config, &p, gates_t, x_t)?.output;
        samples.push(a * b);
    }
    Ok(mean_and_se(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ConvConfig {
        ConvConfig::new(3, 2, 2)
    }

    #[test]
    fn delta_kernel_passes_signal() {
        let c = cfg();
        let p = ConvParams { taps: vec![vec![1.0, 0.0]; 2] };
        let ones = Matrix::filled(2, 3, 1.0);
        let x = [1.0, 2.0, 6.0];
        let f = circ_conv_forward(&c, &p, &ones, &x).unwrap();
        assert_eq!(f.layers[1], x.to_vec());
        assert!((f.output - 3.0).abs() < 1e-15);
        let shift = ConvParams { taps: vec![vec![0.0, 1.0]; 2] };
        let f = circ_conv_forward(&c, &shift, &ones, &x).unwrap();
        assert_eq!(f.layers[0], vec![2.0, 6.0, 1.0]);
    }

    #[test]
    fn constant_input_is_eigenvector() {
        let c = cfg();
        let p = ConvParams { taps: vec![vec![0.3, -1.2], vec![2.0, 0.5]] };
        let f = circ_conv_forward(&c, &p, &Matrix::filled(2, 3, 1.0), &[2.0; 3]).unwrap();
        let want = 2.0 * (0.3 - 1.2) * 2.5;
        assert!(f.layers[1].iter().all(|v| (v - want).abs() < 1e-14));
        assert!((f.output - want).abs() < 1e-14);
    }

    #[test]
    fn bundles_partition_paths() {
        let c = ConvConfig::new(3, 2, 3);
        let bundles = enumerate_bundles(&c, PathBudget::default()).unwrap();
        assert_eq!(bundles.len(), 8);
        let mut all: Vec<Vec<usize>> = bundles.iter().flat_map(|b| b.paths.clone()).collect();
        assert_eq!(all.len(), 24);
        all.sort();
        all.dedup();
        // Distinct tap sequences can reach the same node sequence only when
        // taps coincide modulo d_in, which cannot happen for kernel < d_in.
        assert_eq!(all.len(), 24);
    }

    #[test]
    fn rotation_group() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rotate_input(&x, 0), x.to_vec());
        assert_eq!(rotate_input(&x, 4), x.to_vec());
        assert_eq!(rotate_input(&x, 1), vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(rotate_input(&rotate_input(&x, 1), 3), x.to_vec());
    }

    #[test]
    fn invariance_zero_input() {
        let c = cfg();
        let g = Matrix::filled(2, 3, 1.0);
        let v = invariance_expectation(&c, &g, &g, &[0.0; 3], &[1.0, 2.0, 3.0], PathBudget::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn invalid_configs() {
        assert!(ConvConfig::new(3, 3, 2).validate().is_err());
        assert!(ConvConfig::new(3, 0, 2).validate().is_err());
        assert!(ConvConfig::new(3, 2, 0).validate().is_err());
    }
}
