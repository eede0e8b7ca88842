//! Full-batch training on the squared loss `L = Σ_s (ŷ(x_s) - y_s)²` with
//! plain gradient steps or RMSprop, recording the error trajectory and
//! periodic kernel snapshots.

use rayon::prelude::*;
use thiserror::Error;

use crate::gram::{self, GramError};
use crate::linalg::{sym_eigen, LinalgError, Matrix};
use crate::network::{Example, Network, NetworkError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dataset is empty")]
    EmptyData,
    #[error("{xs} inputs but {ys} targets")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("invalid optimizer: {0}")]
    InvalidOptimizer(String),
    #[error("largest eigenvalue must be positive, got {0}")]
    NonPositiveSpectrum(f64),
    #[error("training diverged at step {step}: loss {loss:e} exceeds {factor:e} × initial {initial:e}")]
    Diverged { step: usize, loss: f64, initial: f64, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
}

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_STABILIZER: f64 = 1e-8;

/// `step` multiplies the raw loss gradient `∇L = Σ_s 2 e_s ψ_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: f64,
    pub decay: f64,
    pub stabilizer: f64,
}

impl Optimizer {
    pub fn sgd(step: f64) -> Self {
        Self { kind: OptimizerKind::Sgd, step, decay: RMSPROP_DECAY, stabilizer: RMSPROP_STABILIZER }
    }

    /// Gradient steps whose error dynamics are `e ← (I - αK) e` to first
    /// order: the raw step is `α/2` because `∇L` carries a factor 2.
    pub fn sgd_effective(alpha: f64) -> Self {
        Self::sgd(alpha / 2.0)
    }

    pub fn rmsprop(step: f64) -> Self {
        Self { kind: OptimizerKind::RmsProp, ..Self::sgd(step) }
    }

    /// The α of `e_{t+1} = e_t - α K e_t` for plain gradient steps.
    pub fn effective_alpha(&self) -> f64 {
        2.0 * self.step
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(TrainError::InvalidOptimizer(format!("step {} must be >= 0", self.step)));
        }
        if self.kind == OptimizerKind::RmsProp {
            if !(self.decay > 0.0 && self.decay < 1.0) {
                return Err(TrainError::InvalidOptimizer(format!("decay {} not in (0,1)", self.decay)));
            }
            if !(self.stabilizer > 0.0) {
                return Err(TrainError::InvalidOptimizer("stabilizer must be positive".into()));
            }
        }
        Ok(())
    }
}

/// RMSprop second-moment accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsState {
    pub v: Vec<f64>,
}

impl RmsState {
    pub fn new(len: usize) -> Self {
        Self { v: vec![0.0; len] }
    }
}

/// `v ← ρv + (1-ρ)g²; θ ← θ - α g/(√v + ε)`.
pub fn rmsprop_step(params: &mut [f64], state: &mut RmsState, grad: &[f64], opt: &Optimizer) {
    for ((p, v), &g) in params.iter_mut().zip(&mut state.v).zip(grad) {
        *v = opt.decay * *v + (1.0 - opt.decay) * g * g;
        *p -= opt.step * g / (v.sqrt() + opt.stabilizer);
    }
}

/// RMSprop direction without touching the weights: the `θ` increment.
fn rmsprop_delta(state: &mut RmsState, grad: &[f64], opt: &Optimizer) -> Vec<f64> {
    let mut delta = vec![0.0; grad.len()];
    rmsprop_step(&mut delta, state, grad, opt);
    delta
}

/// Which matrix ν is evaluated on at snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuKernel {
    /// The trace-normalized tangent kernel `K_t`.
    Ntk,
    /// The soft-GaLU gate kernel `K^a_t`, unnormalized.
    Gate,
    /// `K^a_t` normalized by its trace.
    GateNormalized,
    /// The trace-normalized feature Gram `M_t = (xᵀx) ⊙ λ_t`.
    Feature,
}

impl std::str::FromStr for NuKernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ntk" => Ok(NuKernel::Ntk),
            "gate" => Ok(NuKernel::Gate),
            "gate-normalized" => Ok(NuKernel::GateNormalized),
            "feature" => Ok(NuKernel::Feature),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

impl NuKernel {
    pub fn name(self) -> &'static str {
        match self {
            NuKernel::Ntk => "ntk",
            NuKernel::Gate => "gate",
            NuKernel::GateNormalized => "gate-normalized",
            NuKernel::Feature => "feature",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    /// Record a kernel snapshot every this many steps (and at step 0).
    pub snapshot_every: Option<usize>,
    pub nu_kernel: NuKernel,
    /// Cyclic contiguous minibatches; `None` is full batch.
    pub batch_size: Option<usize>,
    pub divergence_factor: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 100,
            snapshot_every: None,
            nu_kernel: NuKernel::Feature,
            batch_size: None,
            divergence_factor: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// `‖e_t‖² / ‖e_0‖²` (0 when the initial loss is 0).
    pub residual_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub rho_max: f64,
    pub rho_min: f64,
    pub trace: f64,
    pub nu: f64,
    pub mean_gate: f64,
    /// Mean `|G_t - G_0|` over all examples, layers and nodes.
    pub gate_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub optimizer: Optimizer,
}

impl TrajectoryRecord {
    pub fn residual_at(&self, step: usize) -> Option<f64> {
        self.steps.iter().find(|r| r.step == step).map(|r| r.residual_ratio)
    }

    pub fn final_loss(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |r| r.loss)
    }
}

fn check_data(xs: &[Vec<f64>], ys: &[f64]) -> Result<(), TrainError> {
    if xs.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if xs.len() != ys.len() {
        return Err(TrainError::LengthMismatch { xs: xs.len(), ys: ys.len() });
    }
    Ok(())
}

/// Residuals `e_s = ŷ(x_s) - y_s`.
pub fn residuals(net: &Network, xs: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>, TrainError> {
    check_data(xs, ys)?;
    xs.par_iter()
        .zip(ys)
        .enumerate()
        .map(|(s, (x, y))| Ok(net.output(Example::indexed(s, x))? - y))
        .collect()
}

const CHUNK: usize = 8;

/// Loss, residuals and `∇L` (trainable order) over the examples in `batch`.
///
/// Examples are reduced in fixed chunks summed in order, so the result does
/// not depend on the thread count.
pub fn loss_and_gradient(
    net: &Network,
    xs: &[Vec<f64>],
    ys: &[f64],
    batch: &[usize],
) -> Result<(f64, Vec<f64>), TrainError> {
    let len = net.trainable_len();
    let train_strength = net.config().train_strength;
    let train_gating = net.trainable_len() > if train_strength { net.config().d_net() } else { 0 };
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; len];
            let mut loss = 0.0;
            for &s in chunk {
                let cache = net.forward(Example::indexed(s, &xs[s]))?;
                let e = cache.output - ys[s];
                loss += e * e;
                let bp = net.backward(&cache);
                let mut off = 0;
                let mut blocks = Vec::new();
                if train_strength {
                    blocks.push(&bp.strength);
                }
                if train_gating {
                    blocks.push(bp.gating.as_ref().expect("soft-galu gating gradient"));
                }
                for lg in blocks {
                    for (z, dq) in lg.inputs.iter().zip(&lg.deltas) {
                        for &zi in z {
                            let c = 2.0 * e * zi;
                            let row = &mut grad[off..off + dq.len()];
                            if c != 0.0 {
                                for (g, &d) in row.iter_mut().zip(dq) {
                                    *g += c * d;
                                }
                            }
                            off += dq.len();
                        }
                    }
                }
            }
            Ok((loss, grad))
        })
        .collect::<Result<_, NetworkError>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; len];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

fn snapshot(
    net: &Network,
    xs: &[Vec<f64>],
    ys: &[f64],
    step: usize,
    nu_kernel: NuKernel,
    gates0: &[Matrix],
) -> Result<Snapshot, TrainError> {
    let kernel = gram::kernel(net, xs)?;
    let k = kernel.total();
    let spec = sym_eigen(&k)?;
    let gates = gram::gate_tensors(net, xs)?;
    let gate_kernel = || {
        kernel
            .gate
            .clone()
            .ok_or(GramError::NoSplit(net.config().variant))
    };
    let (nu_matrix, normalize) = match nu_kernel {
        NuKernel::Ntk => (k.clone(), true),
        NuKernel::Gate => (gate_kernel()?, false),
        NuKernel::GateNormalized => (gate_kernel()?, true),
        NuKernel::Feature => (gram::feature_gram(xs, &gram::lambda_matrix(&gates))?.matrix, true),
    };
    let nu = gram::nu(&nu_matrix, ys, normalize, None)?;
    let count: usize = gates.iter().map(|g| g.as_slice().len()).sum();
    let mean_gate = gates.iter().flat_map(|g| g.as_slice()).sum::<f64>() / count as f64;
    let gate_drift = gates
        .iter()
        .zip(gates0)
        .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()))
        .sum::<f64>()
        / count as f64;
    Ok(Snapshot {
        step,
        rho_max: spec.max(),
        rho_min: spec.min(),
        trace: k.trace(),
        nu,
        mean_gate,
        gate_drift,
    })
}

/// Trains `net` in place. Frozen parameter sets and fixed gates are never
/// written.
pub fn train(
    net: &mut Network,
    xs: &[Vec<f64>],
    ys: &[f64],
    opt: &Optimizer,
    settings: &TrainSettings,
) -> Result<TrajectoryRecord, TrainError> {
    train_with(net, xs, ys, opt, settings, |_, _| Ok(()))
}

/// [`train`], calling `observe(t, net)` with the weights of every step
/// `t = 0..=steps` before they are updated.
pub fn train_with(
    net: &mut Network,
    xs: &[Vec<f64>],
    ys: &[f64],
    opt: &Optimizer,
    settings: &TrainSettings,
    mut observe: impl FnMut(usize, &Network) -> Result<(), TrainError>,
) -> Result<TrajectoryRecord, TrainError> {
    check_data(xs, ys)?;
    opt.validate()?;
    let n = xs.len();
    let full: Vec<usize> = (0..n).collect();
    let batches: Vec<Vec<usize>> = match settings.batch_size {
        Some(b) if b > 0 && b < n => full.chunks(b).map(<[usize]>::to_vec).collect(),
        _ => vec![full.clone()],
    };
    let gates0 = match settings.snapshot_every {
        Some(_) => gram::gate_tensors(net, xs)?,
        None => Vec::new(),
    };
    let mut rms = RmsState::new(net.trainable_len());
    let mut steps = Vec::with_capacity(settings.steps + 1);
    let mut snapshots = Vec::new();
    let (initial, _) = loss_and_gradient(net, xs, ys, &full)?;
    let ratio = |loss: f64| if initial > 0.0 { loss / initial } else { 0.0 };
    for t in 0..=settings.steps {
        let (loss, grad) = if batches.len() == 1 {
            loss_and_gradient(net, xs, ys, &full)?
        } else {
            let loss = residuals(net, xs, ys)?.iter().map(|e| e * e).sum();
            let (_, grad) = loss_and_gradient(net, xs, ys, &batches[t % batches.len()])?;
            (loss, grad)
        };
        if !loss.is_finite() || loss > settings.divergence_factor * initial.max(f64::MIN_POSITIVE) {
            return Err(TrainError::Diverged {
                step: t,
                loss,
                initial,
                factor: settings.divergence_factor,
            });
        }
        steps.push(StepRecord { step: t, loss, residual_ratio: ratio(loss) });
        if let Some(every) = settings.snapshot_every {
            if every > 0 && t % every == 0 {
                snapshots.push(snapshot(net, xs, ys, t, settings.nu_kernel, &gates0)?);
            }
        }
        observe(t, net)?;
        if t == settings.steps {
            break;
        }
        match opt.kind {
            OptimizerKind::Sgd => net.add_to_trainable(&grad, -opt.step),
            OptimizerKind::RmsProp => {
                let delta = rmsprop_delta(&mut rms, &grad, opt);
                net.add_to_trainable(&delta, 1.0);
            }
        }
    }
    Ok(TrajectoryRecord { steps, snapshots, optimizer: *opt })
}

/// `factor / ρ_max(K)`.
pub fn step_from_spectrum(k: &Matrix, factor: f64) -> Result<f64, TrainError> {
    let rho = sym_eigen(k)?.max();
    if !(rho > 0.0) {
        return Err(TrainError::NonPositiveSpectrum(rho));
    }
    Ok(factor / rho)
}

/// `‖e_t‖²/‖e_0‖²` under `e ← (I - αK) e` with `K` frozen, for `t = 0..=steps`.
pub fn predict_linear_dynamics(k: &Matrix, alpha: f64, e0: &[f64], steps: usize) -> Vec<f64> {
    let norm0: f64 = e0.iter().map(|v| v * v).sum();
    let mut e = e0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(if norm0 > 0.0 { 1.0 } else { 0.0 });
    for _ in 0..steps {
        let ke = k.mul_vec(&e).expect("K is n×n");
        for (a, b) in e.iter_mut().zip(&ke) {
            *a -= alpha * b;
        }
        let norm: f64 = e.iter().map(|v| v * v).sum();
        out.push(if norm0 > 0.0 { norm / norm0 } else { 0.0 });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Prng;
    use crate::network::{Gating, GatingVariant, NetConfig, ParamSet};

    #[test]
    fn rmsprop_hand_values() {
        let opt = Optimizer::rmsprop(1e-3);
        let mut p = vec![1.0, 2.0];
        let mut st = RmsState::new(2);
        rmsprop_step(&mut p, &mut st, &[0.0, 0.0], &opt);
        assert_eq!(p, vec![1.0, 2.0]);
        let mut p = vec![0.0];
        let mut st = RmsState::new(1);
        rmsprop_step(&mut p, &mut st, &[50.0], &opt);
        assert!((p[0] + 1e-3 / 0.1f64.sqrt()).abs() < 1e-9);
        let mut p = vec![0.0];
        let mut st = RmsState::new(1);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p[0];
            rmsprop_step(&mut p, &mut st, &[3.0], &opt);
            last = before - p[0];
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn step_from_spectrum_examples() {
        assert!((step_from_spectrum(&Matrix::identity(3), 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!((step_from_spectrum(&Matrix::identity(3).scale(2.0), 0.1).unwrap() - 0.05).abs() < 1e-15);
        let k = crate::theory::ideal_frg_gram(200, 0.5, 4);
        let want = 0.1 / (1.0 + 199.0 * 0.125);
        assert!((step_from_spectrum(&k, 0.1).unwrap() - want).abs() < 1e-12 * want);
        assert!(step_from_spectrum(&Matrix::zeros(2, 2), 0.1).is_err());
    }

    #[test]
    fn linear_dynamics_examples() {
        let r = predict_linear_dynamics(&Matrix::identity(2), 0.1, &[1.0, -2.0], 1);
        assert!((r[1] - 0.81).abs() < 1e-15);
        let k = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let r = predict_linear_dynamics(&k, 0.05, &[1.0, 1.0], 4);
        for (t, v) in r.iter().enumerate() {
            assert!((v - (1.0 - 0.05 * 3.0f64).powi(2 * t as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn one_sgd_step_by_hand() {
        let c = NetConfig::new(GatingVariant::Dln, 1, 1, 2);
        let p = ParamSet::from_flat(&c, &[0.5, -0.4]).unwrap();
        let mut net = Network::from_parts(c, p, Gating::Intrinsic).unwrap();
        let (x, y) = (vec![vec![2.0]], vec![1.0]);
        let e = 2.0 * 0.5 * -0.4 - 1.0;
        let psi = [2.0 * -0.4, 2.0 * 0.5];
        let alpha = 0.01;
        let settings = TrainSettings { steps: 1, ..Default::default() };
        train(&mut net, &x, &y, &Optimizer::sgd(alpha), &settings).unwrap();
        let got = net.strength().flatten();
        for (g, (w0, ps)) in got.iter().zip([0.5, -0.4].iter().zip(psi)) {
            assert!((g - (w0 - alpha * ps * 2.0 * e)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_step_keeps_everything() {
        let mut rng = Prng::new(4);
        let mut net = Network::init(NetConfig::new(GatingVariant::Relu, 2, 4, 3), &mut rng).unwrap();
        let before = net.clone();
        let xs = vec![vec![1.0, 0.5], vec![-0.3, 0.2]];
        let ys = vec![1.0, -1.0];
        let settings = TrainSettings { steps: 5, ..Default::default() };
        let tr = train(&mut net, &xs, &ys, &Optimizer::sgd(0.0), &settings).unwrap();
        assert_eq!(net, before);
        assert!(tr.steps.iter().all(|r| r.residual_ratio == 1.0));
        assert_eq!(tr.steps.len(), 6);
    }

    #[test]
    fn divergence_is_caught() {
        let c = NetConfig::new(GatingVariant::Dln, 1, 4, 3);
        let mut net = Network::init(c, &mut Prng::new(1)).unwrap();
        let xs = vec![vec![1.0]];
        let ys = vec![1.0];
        let settings = TrainSettings { steps: 200, ..Default::default() };
        let err = train(&mut net, &xs, &ys, &Optimizer::sgd(50.0), &settings).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { .. }));
    }
}
