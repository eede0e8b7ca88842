//! Brute-force path view of a gated network: every input-to-output path,
//! its strength, activation and feature, the per-weight sensitivities, the
//! κ overlap and the gate-derivative overlap δ.
//!
//! Paths are enumerated lexicographically with the input node most
//! significant; a path's index is its mixed-radix value `(p(0), …, p(d-1))`.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::network::{Example, NetConfig, Network, NetworkError, ParamSet, WeightIndex};

pub const DEFAULT_MAX_PATHS: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("path enumeration needs {needed} items, budget is {limit}")]
    BudgetExceeded { needed: u64, limit: u64 },
    #[error("path count overflows u64")]
    Overflow,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Cap on enumerated paths (and on path pairs for κ / δ).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathBudget {
    pub max_paths: u64,
}

impl Default for PathBudget {
    fn default() -> Self {
        Self { max_paths: DEFAULT_MAX_PATHS }
    }
}

impl PathBudget {
    pub fn check(&self, needed: u64) -> Result<(), PathError> {
        if needed > self.max_paths {
            Err(PathError::BudgetExceeded { needed, limit: self.max_paths })
        } else {
            Ok(())
        }
    }
}

/// Nodes `p(0) ∈ [d_in]` then `p(1..d-1) ∈ [w]`; the output node is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub nodes: Vec<usize>,
}

impl Path {
    pub fn input(&self) -> usize {
        self.nodes[0]
    }

    /// Endpoint of weight layer `k` (the output node is 0).
    fn to_node(&self, k: usize) -> usize {
        self.nodes.get(k + 1).copied().unwrap_or(0)
    }

    /// The weight traversed in layer `k`.
    pub fn weight(&self, k: usize) -> WeightIndex {
        WeightIndex { layer: k, row: self.nodes[k], col: self.to_node(k) }
    }

    pub fn traverses(&self, m: WeightIndex) -> bool {
        m.layer < self.nodes.len() && self.weight(m.layer) == m
    }
}

/// `d_in · w^(d-1)`.
pub fn num_paths(config: &NetConfig) -> Result<u64, PathError> {
    let mut n = config.d_in as u64;
    for _ in 1..config.depth {
        n = n.checked_mul(config.width as u64).ok_or(PathError::Overflow)?;
    }
    Ok(n)
}

/// Paths starting at one fixed input node: `w^(d-1)`.
pub fn paths_per_input(config: &NetConfig) -> Result<u64, PathError> {
    (config.width as u64)
        .checked_pow((config.depth - 1) as u32)
        .ok_or(PathError::Overflow)
}

/// The path at lexicographic position `index`.
pub fn path_at(config: &NetConfig, mut index: u64) -> Path {
    let d = config.depth;
    let mut nodes = vec![0; d];
    for k in (1..d).rev() {
        nodes[k] = (index % config.width as u64) as usize;
        index /= config.width as u64;
    }
    nodes[0] = index as usize;
    Path { nodes }
}

/// All paths in enumeration order.
pub fn enumerate(config: &NetConfig, budget: PathBudget) -> Result<Vec<Path>, PathError> {
    let n = num_paths(config)?;
    budget.check(n)?;
    Ok((0..n).map(|i| path_at(config, i)).collect())
}

/// Paths whose input node is `i`, in enumeration order.
pub fn paths_from(config: &NetConfig, i: usize, budget: PathBudget) -> Result<Vec<Path>, PathError> {
    let per = paths_per_input(config)?;
    budget.check(per)?;
    Ok((0..per).map(|k| path_at(config, i as u64 * per + k)).collect())
}

/// Product of the `d` weights along the path.
pub fn path_strength(params: &ParamSet, p: &Path) -> f64 {
    (0..params.depth()).map(|k| params.get(p.weight(k))).product()
}

/// Product of the `d-1` gates along the path.
pub fn path_activation(gates: &Matrix, p: &Path) -> f64 {
    (1..p.nodes.len()).map(|l| gates[(l - 1, p.nodes[l])]).product()
}

/// `x(p(0)) · A(x, p)` for every path.
pub fn feature_vector(
    x: &[f64],
    gates: &Matrix,
    config: &NetConfig,
    budget: PathBudget,
) -> Result<Vec<f64>, PathError> {
    Ok(enumerate(config, budget)?
        .iter()
        .map(|p| x[p.input()] * path_activation(gates, p))
        .collect())
}

/// Strength of every path.
pub fn strength_vector(params: &ParamSet, config: &NetConfig, budget: PathBudget) -> Result<Vec<f64>, PathError> {
    Ok(enumerate(config, budget)?.iter().map(|p| path_strength(params, p)).collect())
}

/// `Σ_p φ(p) · strength(p)`.
pub fn output_via_paths(
    x: &[f64],
    gates: &Matrix,
    params: &ParamSet,
    config: &NetConfig,
    budget: PathBudget,
) -> Result<f64, PathError> {
    let paths = enumerate(config, budget)?;
    let terms: Vec<f64> = paths
        .iter()
        .map(|p| x[p.input()] * path_activation(gates, p) * path_strength(params, p))
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Strength with weight `m` left out when the path traverses it, else 0.
pub fn path_sensitivity(params: &ParamSet, p: &Path, m: WeightIndex) -> f64 {
    if !p.traverses(m) {
        return 0.0;
    }
    (0..params.depth())
        .filter(|&k| k != m.layer)
        .map(|k| params.get(p.weight(k)))
        .product()
}

/// `⟨φ_p1, φ_p2⟩` summed over the weights both paths share.
pub fn sensitivity_overlap(params: &ParamSet, p1: &Path, p2: &Path) -> f64 {
    let d = params.depth();
    let w1: Vec<f64> = (0..d).map(|k| params.get(p1.weight(k))).collect();
    let w2: Vec<f64> = (0..d).map(|k| params.get(p2.weight(k))).collect();
    let mut total = 0.0;
    for k in 0..d {
        if p1.weight(k) == p2.weight(k) {
            let a: f64 = (0..d).filter(|&l| l != k).map(|l| w1[l]).product();
            let b: f64 = (0..d).filter(|&l| l != k).map(|l| w2[l]).product();
            total += a * b;
        }
    }
    total
}

/// κ between examples with gates `gates_s`, `gates_t` over path pairs that
/// both start at input node `i`.
pub fn kappa(
    params: &ParamSet,
    gates_s: &Matrix,
    gates_t: &Matrix,
    config: &NetConfig,
    i: usize,
    budget: PathBudget,
) -> Result<f64, PathError> {
    kappa_cross(params, gates_s, gates_t, config, i, i, budget)
}

/// κ over path pairs starting at input nodes `i` and `i2` respectively.
pub fn kappa_cross(
    params: &ParamSet,
    gates_s: &Matrix,
    gates_t: &Matrix,
    config: &NetConfig,
    i: usize,
    i2: usize,
    budget: PathBudget,
) -> Result<f64, PathError> {
    let per = paths_per_input(config)?;
    budget.check(per.checked_mul(per).ok_or(PathError::Overflow)?)?;
    let ps = paths_from(config, i, budget)?;
    let qs = paths_from(config, i2, budget)?;
    let a_t: Vec<f64> = qs.iter().map(|q| path_activation(gates_t, q)).collect();
    let mut total = 0.0;
    for p in &ps {
        let a_s = path_activation(gates_s, p);
        if a_s == 0.0 {
            continue;
        }
        for (q, &a) in qs.iter().zip(&a_t) {
            if a != 0.0 {
                total += a_s * a * sensitivity_overlap(params, p, q);
            }
        }
    }
    Ok(total)
}

/// `Σ_i x(i,s) x(i,s') κ(s,s',i)`: the reconstruction that keeps only path
/// pairs sharing their input node.
pub fn gram_from_kappa(
    params: &ParamSet,
    xs: &[Vec<f64>],
    gates: &[Matrix],
    config: &NetConfig,
    budget: PathBudget,
) -> Result<Matrix, PathError> {
    gram_from_kappa_impl(params, xs, gates, config, budget, false)
}

/// `Σ_{i,i'} x(i,s) x(i',s') κ(s,s',i,i')`: equals the strength part of
/// `ΨᵀΨ` exactly, for any input dimension.
pub fn gram_from_kappa_cross(
    params: &ParamSet,
    xs: &[Vec<f64>],
    gates: &[Matrix],
    config: &NetConfig,
    budget: PathBudget,
) -> Result<Matrix, PathError> {
    gram_from_kappa_impl(params, xs, gates, config, budget, true)
}

fn gram_from_kappa_impl(
    params: &ParamSet,
    xs: &[Vec<f64>],
    gates: &[Matrix],
    config: &NetConfig,
    budget: PathBudget,
    cross: bool,
) -> Result<Matrix, PathError> {
    let n = xs.len();
    let mut k = Matrix::zeros(n, n);
    for s in 0..n {
        for t in s..n {
            let mut v = 0.0;
            for i in 0..config.d_in {
                let partners: Vec<usize> = if cross { (0..config.d_in).collect() } else { vec![i] };
                for i2 in partners {
                    let c = xs[s][i] * xs[t][i2];
                    if c != 0.0 {
                        v += c * kappa_cross(params, &gates[s], &gates[t], config, i, i2, budget)?;
                    }
                }
            }
            k.as_mut_slice()[s * n + t] = v;
            k.as_mut_slice()[t * n + s] = v;
        }
    }
    Ok(k)
}

/// `λ(s,s') = Σ_p A(x_s,p) A(x_s',p)` over the paths from one input node.
pub fn lambda_by_paths(gates: &[Matrix], config: &NetConfig, budget: PathBudget) -> Result<Matrix, PathError> {
    let paths = paths_from(config, 0, budget)?;
    let acts: Vec<Vec<f64>> = gates
        .iter()
        .map(|g| paths.iter().map(|p| path_activation(g, p)).collect())
        .collect();
    let n = gates.len();
    Ok(Matrix::from_fn(n, n, |s, t| crate::linalg::dot(&acts[s], &acts[t])))
}

/// `∂A(x,p)/∂θ^g(m)` for every path from input node 0 (gates do not
/// depend on the input node) and every gating weight: a `w^(d-1) × d_net`
/// matrix.
fn activation_gradients(
    net: &Network,
    ex: Example<'_>,
    budget: PathBudget,
) -> Result<Matrix, PathError> {
    let config = net.config();
    let jac = net.gate_jacobian(ex)?;
    let gates = net.compute_gates(ex)?;
    let d_net = config.d_net();
    let per = paths_per_input(config)?;
    budget.check(per.checked_mul(d_net as u64).ok_or(PathError::Overflow)?)?;
    let paths = paths_from(config, 0, budget)?;
    let w = config.width;
    let mut out = Matrix::zeros(paths.len(), d_net);
    for (r, p) in paths.iter().enumerate() {
        let row = out.row_mut(r);
        for l in 1..config.depth {
            let others: f64 = (1..config.depth)
                .filter(|&l2| l2 != l)
                .map(|l2| gates[(l2 - 1, p.nodes[l2])])
                .product();
            if others == 0.0 {
                continue;
            }
            let jrow = jac.row((l - 1) * w + p.nodes[l]);
            for (o, &j) in row.iter_mut().zip(jrow) {
                *o += j * others;
            }
        }
    }
    Ok(out)
}

/// `∂A(x,p)/∂θ^g(m)`: each gate's derivative times the other gates on `p`.
pub fn activation_sensitivity<'a>(
    net: &Network,
    ex: impl Into<Example<'a>>,
    p: &Path,
    m: WeightIndex,
) -> Result<f64, PathError> {
    let ex = ex.into();
    let config = net.config();
    let jac = net.gate_jacobian(ex)?;
    let gates = net.compute_gates(ex)?;
    let col = net
        .gate_source_params()
        .expect("soft variants define gates by weights")
        .flat_index(m);
    let mut total = 0.0;
    for l in 1..config.depth {
        let others: f64 = (1..config.depth)
            .filter(|&l2| l2 != l)
            .map(|l2| gates[(l2 - 1, p.nodes[l2])])
            .product();
        total += jac[((l - 1) * config.width + p.nodes[l], col)] * others;
    }
    Ok(total)
}

/// `δ(s,s') = Σ_{p from one input node} Σ_m ∂A_s(p)/∂θ^g(m) · ∂A_s'(p)/∂θ^g(m)`.
///
/// Hard-gate networks have no gate derivative; their δ is the zero matrix.
pub fn delta_matrix(net: &Network, xs: &[Vec<f64>], budget: PathBudget) -> Result<Matrix, PathError> {
    let n = xs.len();
    if !net.config().variant.is_soft() {
        return Ok(Matrix::zeros(n, n));
    }
    let grads = xs
        .iter()
        .enumerate()
        .map(|(s, x)| activation_gradients(net, Example::indexed(s, x), budget))
        .collect::<Result<Vec<_>, _>>()?;
    let mut delta = Matrix::zeros(n, n);
    for s in 0..n {
        for t in s..n {
            let v = crate::linalg::dot(grads[s].as_slice(), grads[t].as_slice());
            delta.as_mut_slice()[s * n + t] = v;
            delta.as_mut_slice()[t * n + s] = v;
        }
    }
    Ok(delta)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}
