//! Active and sensitive gates of soft-gated networks.
//!
//! A gate is active when its value exceeds `τ_A` and sensitive when some
//! gating weight moves it faster than `τ_S`.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::network::{Example, Network, NetworkError};

/// Largest `gates × d_net` Jacobian evaluated per example.
pub const JACOBIAN_BUDGET: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum GateError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("active threshold {tau} must lie in (0, {ceiling})")]
    ThresholdRange { tau: f64, ceiling: f64 },
    #[error("gate Jacobian needs {needed} entries per example, budget is {limit}")]
    BudgetExceeded { needed: u64, limit: u64 },
}

/// Slope of the soft gate, as a function of its pre-activation, at the
/// point where the gate value equals `tau_active`: `β τ_A (1 - τ_A/(1+ε))`.
pub fn compatibility_bound(beta: f64, epsilon: f64, tau_active: f64) -> Result<f64, GateError> {
    let ceiling = 1.0 + epsilon;
    if !(tau_active > 0.0 && tau_active < ceiling) {
        return Err(GateError::ThresholdRange { tau: tau_active, ceiling });
    }
    Ok(beta * tau_active * (1.0 - tau_active / ceiling))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateThresholds {
    pub tau_active: f64,
    pub tau_sensitive: f64,
    /// `τ_S` exceeds [`compatibility_bound`] at `τ_A`.
    pub compatible: bool,
}

impl GateThresholds {
    pub fn new(beta: f64, epsilon: f64, tau_active: f64, tau_sensitive: f64) -> Result<Self, GateError> {
        let bound = compatibility_bound(beta, epsilon, tau_active)?;
        Ok(Self { tau_active, tau_sensitive, compatible: tau_sensitive > bound })
    }

    /// `τ_A = 0.9(1+ε)`, `τ_S` twice the compatibility bound.
    pub fn defaults(beta: f64, epsilon: f64) -> Self {
        let tau_active = 0.9 * (1.0 + epsilon);
        let bound = compatibility_bound(beta, epsilon, tau_active).expect("0.9 of the ceiling is in range");
        Self { tau_active, tau_sensitive: 2.0 * bound, compatible: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateRecord {
    pub example: usize,
    /// 1-based hidden layer.
    pub layer: usize,
    pub node: usize,
    pub value: f64,
    pub active: bool,
    pub sensitive: bool,
    /// `max_m |∂G/∂θ^g(m)|`.
    pub max_dg: f64,
    /// `max_m |∂q/∂θ^g(m)|` for the gate's own pre-activation.
    pub max_dq: f64,
    /// `dG/dq` at the gate's pre-activation.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateClassification {
    pub thresholds: GateThresholds,
    pub n: usize,
    pub layers: usize,
    pub width: usize,
    /// Ordered by example, then layer, then node.
    pub records: Vec<GateRecord>,
}

impl GateClassification {
    pub fn record(&self, example: usize, layer: usize, node: usize) -> &GateRecord {
        &self.records[(example * self.layers + layer - 1) * self.width + node]
    }

    /// Gates that are both active and sensitive.
    pub fn overlap(&self) -> Vec<&GateRecord> {
        self.records.iter().filter(|r| r.active && r.sensitive).collect()
    }
}

/// Per-gate values, derivative magnitudes and flags for every example.
pub fn classify_gates(
    net: &Network,
    xs: &[Vec<f64>],
    thresholds: GateThresholds,
) -> Result<GateClassification, GateError> {
    let config = net.config();
    let (layers, width) = (config.depth - 1, config.width);
    let needed = (layers * width) as u64 * config.d_net() as u64;
    if needed > JACOBIAN_BUDGET {
        return Err(GateError::BudgetExceeded { needed, limit: JACOBIAN_BUDGET });
    }
    let mut records = Vec::with_capacity(xs.len() * layers * width);
    for (s, x) in xs.iter().enumerate() {
        let ex = Example::indexed(s, x);
        let jac = net.gate_jacobian(ex)?;
        let cache = net.forward(ex)?;
        let q = cache.gating.as_ref().map_or(&cache.q, |t| &t.q);
        for l in 0..layers {
            for j in 0..width {
                let value = cache.gates[(l, j)];
                let slope = config.soft_gate_slope(q[l][j]);
                let max_dg = jac.row(l * width + j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let max_dq = if slope > 0.0 { max_dg / slope } else { f64::INFINITY };
                records.push(GateRecord {
                    example: s,
                    layer: l + 1,
                    node: j,
                    value,
                    active: value > thresholds.tau_active,
                    sensitive: max_dg > thresholds.tau_sensitive,
                    max_dg,
                    max_dq,
                    slope,
                });
            }
        }
    }
    Ok(GateClassification { thresholds, n: xs.len(), layers, width, records })
}

/// Active gates whose derivative still exceeds the bound scaled by how
/// strongly a single gating weight moves the pre-activation.
///
/// An active gate (with `τ_A ≥ (1+ε)/2`) has slope at most the
/// compatibility bound, so `max_dg ≤ bound · max_dq`; this returns the gates
/// that break that relation, which should be none.
pub fn scaled_violations(c: &GateClassification, beta: f64, epsilon: f64) -> Result<Vec<GateRecord>, GateError> {
    let bound = compatibility_bound(beta, epsilon, c.thresholds.tau_active)?;
    Ok(c
        .records
        .iter()
        .filter(|r| r.active && r.max_dg > bound * r.max_dq * (1.0 + 1e-12))
        .copied()
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetSummary {
    pub example: usize,
    pub active_per_layer: Vec<usize>,
    pub sensitive_per_layer: Vec<usize>,
    /// Paths whose gates are all active: `Π_l active_l`.
    pub active_paths: u128,
    /// Paths with one sensitive gate and the rest active:
    /// `Σ_l sensitive_l Π_{l'≠l} active_l'`.
    pub sensitive_paths: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetReport {
    pub per_example: Vec<SubnetSummary>,
    /// `overlap[l][(s,s')]`: gates active for both examples in hidden layer `l+1`.
    pub overlap: Vec<Matrix>,
}

pub fn subnetwork_summary(c: &GateClassification) -> SubnetReport {
    let per_example: Vec<SubnetSummary> = (0..c.n)
        .map(|s| {
            let count = |f: fn(&GateRecord) -> bool| -> Vec<usize> {
                (1..=c.layers)
                    .map(|l| (0..c.width).filter(|&j| f(c.record(s, l, j))).count())
                    .collect()
            };
            let active = count(|r| r.active);
            let sensitive = count(|r| r.sensitive);
            let active_paths = active.iter().map(|&a| a as u128).product();
            let sensitive_paths = (0..c.layers)
                .map(|l| {
                    sensitive[l] as u128
                        * (0..c.layers).filter(|&k| k != l).map(|k| active[k] as u128).product::<u128>()
                })
                .sum();
            SubnetSummary {
                example: s,
                active_per_layer: active,
                sensitive_per_layer: sensitive,
                active_paths,
                sensitive_paths,
            }
        })
        .collect();
    let overlap = (1..=c.layers)
        .map(|l| {
            Matrix::from_fn(c.n, c.n, |s, t| {
                (0..c.width)
                    .filter(|&j| c.record(s, l, j).active && c.record(t, l, j).active)
                    .count() as f64
            })
        })
        .collect();
    SubnetReport { per_example, overlap }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Prng;
    use crate::network::{GatingVariant, NetConfig};
    use crate::paths::{enumerate, PathBudget};

    #[test]
    fn bound_values() {
        assert!((compatibility_bound(1.0, 0.0, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(compatibility_bound(1.0, 0.0, 1.0 - 1e-9).unwrap() < 1e-8);
        let a = compatibility_bound(2.0, 0.3, 0.7).unwrap();
        let b = compatibility_bound(6.0, 0.3, 0.7).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-14);
        assert!(compatibility_bound(1.0, 0.0, 1.2).is_err());
    }

    #[test]
    fn bound_is_slope_at_threshold_level() {
        let c = NetConfig::new(GatingVariant::SoftRelu, 1, 1, 2).with_soft(3.0, 0.25);
        let tau = 0.8;
        // q where the gate equals τ, inverted by hand.
        let q = -((1.0 + c.epsilon) / tau - 1.0).ln() / c.beta;
        assert!((c.soft_gate(q) - tau).abs() < 1e-14);
        let h = 1e-6;
        let fd = (c.soft_gate(q + h) - c.soft_gate(q - h)) / (2.0 * h);
        assert!((fd - compatibility_bound(3.0, 0.25, tau).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn low_threshold_makes_everything_active() {
        let mut rng = Prng::new(5);
        let net = Network::init(NetConfig::new(GatingVariant::SoftGalu, 2, 3, 3), &mut rng).unwrap();
        let th = GateThresholds::new(4.0, 0.0, 1e-300, 1.0).unwrap();
        let c = classify_gates(&net, &[vec![0.3, -0.2]], th).unwrap();
        assert!(c.records.iter().all(|r| r.active));
    }

    #[test]
    fn saturated_gates_are_active_not_sensitive() {
        let c = NetConfig::new(GatingVariant::SoftRelu, 1, 2, 3).with_soft(50.0, 0.0);
        let p = crate::network::ParamSet::constant(&c, 1.0);
        let net = Network::from_parts(c, p, crate::network::Gating::Intrinsic).unwrap();
        let th = GateThresholds::defaults(50.0, 0.0);
        let cls = classify_gates(&net, &[vec![1.0]], th).unwrap();
        assert!(cls.records.iter().all(|r| r.active && !r.sensitive));
        let rep = subnetwork_summary(&cls);
        assert_eq!(rep.per_example[0].active_paths, 4);
        assert_eq!(rep.per_example[0].sensitive_paths, 0);
    }

    #[test]
    fn counts_match_path_enumeration() {
        let mut rng = Prng::new(17);
        for _ in 0..10 {
            let config = NetConfig::new(GatingVariant::SoftGalu, 1, 3, 4).with_sigma(1.0).with_soft(2.0, 0.0);
            let net = Network::init(config.clone(), &mut rng).unwrap();
            let xs = vec![vec![rng.uniform_in(-1.0, 1.0)], vec![rng.uniform_in(-1.0, 1.0)]];
            let th = GateThresholds::new(2.0, 0.0, 0.6, 0.05).unwrap();
            let cls = classify_gates(&net, &xs, th).unwrap();
            let rep = subnetwork_summary(&cls);
            for s in 0..2 {
                let (mut act, mut sens) = (0u128, 0u128);
                for p in enumerate(&config, PathBudget::default()).unwrap() {
                    let on = |l: usize| cls.record(s, l, p.nodes[l]).active;
                    if (1..4).all(on) {
                        act += 1;
                    }
                    for l in 1..4 {
                        if cls.record(s, l, p.nodes[l]).sensitive && (1..4).filter(|&k| k != l).all(on) {
                            sens += 1;
                        }
                    }
                }
                assert_eq!(rep.per_example[s].active_paths, act);
                assert_eq!(rep.per_example[s].sensitive_paths, sens);
            }
        }
    }

    #[test]
    fn one_sensitive_gate_in_first_layer() {
        // Hand-built classification: w=3, d=4, all active except one
        // sensitive gate in layer 1.
        let th = GateThresholds::defaults(4.0, 0.0);
        let mut records = Vec::new();
        for l in 1..=3 {
            for j in 0..3 {
                let special = l == 1 && j == 0;
                records.push(GateRecord {
                    example: 0,
                    layer: l,
                    node: j,
                    value: if special { 0.5 } else { 0.99 },
                    active: !special,
                    sensitive: special,
                    max_dg: 0.0,
                    max_dq: 0.0,
                    slope: 0.0,
                });
            }
        }
        let c = GateClassification { thresholds: th, n: 1, layers: 3, width: 3, records };
        let rep = subnetwork_summary(&c);
        assert_eq!(rep.per_example[0].sensitive_paths, 9);
        assert_eq!(rep.per_example[0].active_paths, 2 * 9);
    }
}
