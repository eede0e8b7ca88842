//! Runs that follow a net through training: the deep linear scalar
//! problem, ν snapshots, and the paired gate comparisons.

use rayon::prelude::*;

use super::sweeps::push_trajectory;
use super::{
    init_network, mean_series, Artifacts, Check, ExperimentSpec, STREAM_NET, STREAM_RANDOM_GATES, STREAM_SOURCE,
    STREAM_TRANSPLANT,
};
use crate::data;
use crate::gates::{self, GateThresholds};
use crate::gram;
use crate::linalg::{mean_and_se, Prng};
use crate::network::{self, init_params, Example, Gating, GatingVariant, Network};
use crate::report::{Plot, Series, Table};
use crate::train::{self, TrainError};
use crate::Error;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct DlnRun {
    k0: f64,
    losses: Vec<f64>,
    kernel: Vec<f64>,
    theta_norm: Vec<f64>,
    frozen: Vec<f64>,
}

/// Deep linear net on the single example `x = y = 1`: `K₀` per depth over
/// seeds against `d (wσ²)^(d-1)`, then gradient descent with `α = factor/d`
/// (or the given α) recording the error ratio, `K_t` and `‖Θ_t‖`.
pub fn run_dln_dynamics(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let xs = vec![vec![1.0]];
    let ys = vec![1.0];
    let width = spec.net.width;
    let settings = train::TrainSettings { steps: spec.steps, ..Default::default() };
    let mut k0_table = Table::new(&["d", "seed_count", "mc_mean", "mc_se", "theory"]);
    let mut dyn_table = Table::new(&[
        "d",
        "step",
        "residual_ratio",
        "step_ratio",
        "frozen_ratio",
        "k_t",
        "theta_norm",
    ]);
    let mut plot = Plot::new("deep linear net error", "step", "e_t^2 / e_0^2").log_y(true);
    let mut out = Artifacts::default();
    for &depth in &spec.depths {
        let config = spec.net.config(GatingVariant::Dln, 1, width, depth);
        let alpha = spec.opt.alpha.unwrap_or(spec.opt.alpha_factor / depth as f64);
        let opt = spec.opt.with_alpha(alpha);
        let runs = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut net = init_network(config.clone(), &xs, seed)?;
                let k0 = gram::kernel(&net, &xs)?.total();
                let e0 = train::residuals(&net, &xs, &ys)?;
                let frozen = train::predict_linear_dynamics(&k0, alpha, &e0, spec.steps);
                let mut kernel = Vec::with_capacity(spec.steps + 1);
                let mut theta_norm = Vec::with_capacity(spec.steps + 1);
                let record = train::train_with(&mut net, &xs, &ys, &opt, &settings, |_, n| {
                    kernel.push(gram::kernel(n, &xs)?.total()[(0, 0)]);
                    theta_norm.push(norm(&n.trainable_flat()));
                    Ok(())
                })?;
                Ok(DlnRun {
                    k0: k0[(0, 0)],
                    losses: record.steps.iter().map(|r| r.loss).collect(),
                    kernel,
                    theta_norm,
                    frozen,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let k0s: Vec<f64> = runs.iter().map(|r| r.k0).collect();
        let (mean, se) = mean_and_se(&k0s);
        let se = if se.is_finite() { se } else { 0.0 };
        let theory = depth as f64 * (width as f64 * config.sigma * config.sigma).powi(depth as i32 - 1);
        k0_table.push(vec![depth.into(), runs.len().into(), mean.into(), se.into(), theory.into()]);
        out.checks.push(Check::near(format!("dln_k0_d{depth}"), mean, theory, 0.1 * theory));

        let ratio = |l: &[f64], t: usize| if l[0] > 0.0 { l[t] / l[0] } else { 0.0 };
        let step_ratio = |l: &[f64], t: usize| if l[t - 1] > 0.0 { l[t] / l[t - 1] } else { 0.0 };
        let frozen = mean_series(&runs.iter().map(|r| r.frozen.clone()).collect::<Vec<_>>());
        let kernel = mean_series(&runs.iter().map(|r| r.kernel.clone()).collect::<Vec<_>>());
        let theta = mean_series(&runs.iter().map(|r| r.theta_norm.clone()).collect::<Vec<_>>());
        let mut residual = vec![1.0];
        let mut steps_ratio = Vec::new();
        for t in 1..=spec.steps {
            let r = runs.iter().map(|run| ratio(&run.losses, t)).sum::<f64>() / runs.len() as f64;
            let s = runs.iter().map(|run| step_ratio(&run.losses, t)).sum::<f64>() / runs.len() as f64;
            residual.push(r);
            steps_ratio.push(s);
            dyn_table.push(vec![
                depth.into(),
                t.into(),
                r.into(),
                s.into(),
                frozen[t].into(),
                kernel[t].into(),
                theta[t].into(),
            ]);
        }
        let early = &steps_ratio[..steps_ratio.len().min(5)];
        if !early.is_empty() {
            let early_mean = early.iter().sum::<f64>() / early.len() as f64;
            out.checks.push(Check::near(format!("dln_early_step_ratio_d{depth}"), early_mean, 0.81, 0.05));
        }
        if spec.steps > 0 {
            out.checks.push(
                Check::at_most(format!("dln_faster_than_frozen_kernel_d{depth}"), residual[spec.steps], frozen[spec.steps])
                    .report_only(),
            );
        }
        out.summary.push(format!(
            "d={depth}: K0 {mean:.3} ± {se:.3} (theory {theory:.3}), residual after {} steps {:.3e} vs frozen-kernel {:.3e}",
            spec.steps,
            residual[spec.steps],
            frozen[spec.steps]
        ));
        let steps: Vec<f64> = (0..=spec.steps).map(|t| t as f64).collect();
        plot = plot
            .with(Series::new(format!("d={depth}"), steps.clone(), residual))
            .with(Series::new(format!("d={depth} frozen K"), steps, frozen));
    }
    out.tables.push(("dln_k0.csv".into(), k0_table));
    out.tables.push(("dln.csv".into(), dyn_table));
    out.plots.push(("dln.svg".into(), plot));
    Ok(out)
}

/// Trains with kernel snapshots and records `ν_t` for the configured
/// kernel. Labels must be `±1`.
pub fn run_nu_track(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let every = spec
        .snapshot_every
        .ok_or_else(|| Error::Usage("nu-track needs train.snapshot_every > 0".into()))?;
    let mut settings = spec.train_settings();
    settings.snapshot_every = Some(every);
    let runs = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let ds = spec.data.load(seed)?;
            if !ds.is_binary() {
                return Err(Error::Usage(format!("nu-track needs ±1 labels; {} has others", ds.name)));
            }
            let mut net = spec.net.build(ds.d_in(), spec.net.width, spec.net.depth, &ds.xs, seed)?;
            let opt = spec.opt.resolve(|| Ok(gram::kernel(&net, &ds.xs)?.total()))?;
            let record = train::train(&mut net, &ds.xs, &ds.ys, &opt, &settings)?;
            Ok((seed, ds.name, record))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut out = Artifacts::default();
    let mut table = Table::new(&["seed", "step", "kernel", "nu", "rho_max", "rho_min", "mean_gate", "gate_drift"]);
    let mut plot = Plot::new(&format!("nu for the {} kernel", spec.nu_kernel.name()), "step", "nu");
    let mut all_ok = true;
    for (seed, name, record) in &runs {
        for s in &record.snapshots {
            all_ok &= s.nu.is_finite() && s.nu > 0.0;
            table.push(vec![
                (*seed).into(),
                s.step.into(),
                spec.nu_kernel.name().into(),
                s.nu.into(),
                s.rho_max.into(),
                s.rho_min.into(),
                s.mean_gate.into(),
                s.gate_drift.into(),
            ]);
        }
        let first = record.snapshots.first().map_or(f64::NAN, |s| s.nu);
        let last = record.snapshots.last().map_or(f64::NAN, |s| s.nu);
        out.summary.push(format!("seed {seed} on {name}: nu {first:.4} -> {last:.4}"));
        plot = plot.with(Series::new(
            format!("seed {seed}"),
            record.snapshots.iter().map(|s| s.step as f64).collect(),
            record.snapshots.iter().map(|s| s.nu).collect(),
        ));
        if spec.net.variant.gates_frozen() && spec.nu_kernel == train::NuKernel::Feature {
            let spread = record.snapshots.iter().map(|s| (s.nu - first).abs()).fold(0.0, f64::max);
            out.checks.push(Check::at_most(format!("nu_constant_frozen_gates_seed{seed}"), spread, 1e-9 * first.abs()));
        }
        push_trajectory(&mut out, &format!("runs/s{seed}"), record);
    }
    out.checks.push(Check::flag("nu_finite_positive", all_ok));
    out.tables.insert(0, ("nu.csv".into(), table));
    out.plots.push(("nu.svg".into(), plot));
    Ok(out)
}

const ARMS: [&str; 4] = ["adaptive", "frozen", "transplant", "random"];

/// Per-snapshot (train mse, test mse, ν on the training feature Gram).
type Curve = Vec<(usize, f64, f64, f64)>;

fn mse(net: &Network, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64, TrainError> {
    let e = train::residuals(net, xs, ys)?;
    Ok(e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64)
}

fn train_arm(
    mut net: Network,
    train_set: &data::Dataset,
    test_set: &data::Dataset,
    spec: &ExperimentSpec,
    every: usize,
) -> Result<(Network, Curve), Error> {
    let opt = spec.opt.resolve(|| Ok(gram::kernel(&net, &train_set.xs)?.total()))?;
    let settings = train::TrainSettings { steps: spec.steps, batch_size: spec.batch, ..Default::default() };
    let mut curve = Vec::new();
    train::train_with(&mut net, &train_set.xs, &train_set.ys, &opt, &settings, |t, n| {
        if t % every == 0 || t == spec.steps {
            let lambda = gram::lambda_matrix(&gram::gate_tensors(n, &train_set.xs)?);
            let m = gram::feature_gram(&train_set.xs, &lambda)?;
            let nu = gram::nu(&m.matrix, &train_set.ys, true, None)?;
            curve.push((t, mse(n, &train_set.xs, &train_set.ys)?, mse(n, &test_set.xs, &test_set.ys)?, nu));
        }
        Ok(())
    })?;
    Ok((net, curve))
}

struct SeedComparison {
    curves: Vec<Curve>,
    transplant_matches: bool,
    frozen_untouched: bool,
    adaptive: Network,
}

fn compare_seed(
    spec: &ExperimentSpec,
    train_set: &data::Dataset,
    test_set: &data::Dataset,
    seed: u64,
    every: usize,
) -> Result<SeedComparison, Error> {
    let (d_in, w, d) = (train_set.d_in(), spec.net.width, spec.net.depth);
    let xs = &train_set.xs;

    let mut soft = spec.net.config(GatingVariant::SoftGalu, d_in, w, d);
    soft.train_gating = true;
    let adaptive = Network::init(soft.clone(), &mut Prng::derive(seed, STREAM_NET))?;
    let mut frozen_cfg = soft;
    frozen_cfg.train_gating = false;
    let frozen = Network::from_parts(frozen_cfg, adaptive.strength().clone(), adaptive.gating().clone())?;
    let gating_before = frozen.gating_params().cloned();

    let relu_cfg = spec.net.config(GatingVariant::Relu, d_in, w, d);
    let source = Network::init(relu_cfg, &mut Prng::derive(seed, STREAM_SOURCE))?;
    let (source, _) = train_arm(source, train_set, test_set, spec, every)?;
    let galu_cfg = spec.net.config(GatingVariant::GaluFrozen, d_in, w, d);
    let transplant = network::transplant_gates(&source, galu_cfg.clone(), &mut Prng::derive(seed, STREAM_TRANSPLANT))?;
    let random_gates = init_params(&galu_cfg, &mut Prng::derive(seed, STREAM_RANDOM_GATES));
    let random = Network::from_parts(galu_cfg, transplant.strength().clone(), Gating::Separate(random_gates))?;

    let mut transplant_matches = true;
    for (s, x) in xs.iter().enumerate() {
        let ex = Example::indexed(s, x);
        transplant_matches &= source.compute_gates(ex)? == transplant.compute_gates(ex)?;
    }

    let mut curves = Vec::with_capacity(4);
    let (adaptive, c) = train_arm(adaptive, train_set, test_set, spec, every)?;
    curves.push(c);
    let (frozen, c) = train_arm(frozen, train_set, test_set, spec, every)?;
    curves.push(c);
    let frozen_untouched = frozen.gating_params().cloned() == gating_before;
    for net in [transplant, random] {
        curves.push(train_arm(net, train_set, test_set, spec, every)?.1);
    }
    Ok(SeedComparison { curves, transplant_matches, frozen_untouched, adaptive })
}

/// Soft-GaLU with trained vs frozen gating weights, and frozen GaLU nets
/// whose gates come from a trained ReLU net vs from random weights. All
/// arms share the split, step count and optimizer; `net.variant` is not
/// used. Results are reported, only the mechanics are checked.
pub fn run_gate_comparison(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let every = spec.snapshot_every.unwrap_or(spec.steps.max(1));
    let ds = spec.data.load(spec.seeds[0])?;
    let (train_set, test_set) = data::shuffle_split(&ds, spec.data.test_fraction, spec.data.seed_for(spec.seeds[0]))?;
    let results = spec
        .seeds
        .par_iter()
        .map(|&seed| compare_seed(spec, &train_set, &test_set, seed, every))
        .collect::<Result<Vec<_>, Error>>()?;

    let mut header = vec!["step".to_string(), "seed_count".to_string()];
    for arm in ARMS {
        for col in ["train", "test", "nu"] {
            header.push(format!("{col}_{arm}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header_refs);
    let points = results[0].curves[0].len();
    let mut test_plot = Plot::new("held-out mean squared error", "step", "mse");
    let mut nu_plot = Plot::new("nu on the training feature Gram", "step", "nu");
    let mut cols: Vec<[Vec<f64>; 3]> = vec![Default::default(); ARMS.len()];
    let mut steps = Vec::with_capacity(points);
    for i in 0..points {
        let step = results[0].curves[0][i].0;
        steps.push(step as f64);
        let mut row = vec![step.into(), results.len().into()];
        for (a, col) in cols.iter_mut().enumerate() {
            let mean = |f: fn(&(usize, f64, f64, f64)) -> f64| {
                results.iter().map(|r| f(&r.curves[a][i])).sum::<f64>() / results.len() as f64
            };
            let vals = [mean(|p| p.1), mean(|p| p.2), mean(|p| p.3)];
            for (c, v) in col.iter_mut().zip(vals) {
                c.push(v);
                row.push(v.into());
            }
        }
        table.push(row);
    }
    let mut out = Artifacts::default();
    for (arm, col) in ARMS.iter().zip(&cols) {
        test_plot = test_plot.with(Series::new(*arm, steps.clone(), col[1].clone()));
        nu_plot = nu_plot.with(Series::new(*arm, steps.clone(), col[2].clone()));
        out.summary.push(format!(
            "{arm:>10}: train mse {:.4}, test mse {:.4}, nu {:.4} -> {:.4}",
            col[0].last().unwrap(),
            col[1].last().unwrap(),
            col[2][0],
            col[2].last().unwrap()
        ));
    }
    out.tables.push(("gate_compare.csv".into(), table));
    out.plots.push(("gate_compare_test.svg".into(), test_plot));
    out.plots.push(("gate_compare_nu.svg".into(), nu_plot));
    out.checks.push(Check::flag("transplanted_gates_match_source", results.iter().all(|r| r.transplant_matches)));
    out.checks.push(Check::flag("frozen_gating_weights_untouched", results.iter().all(|r| r.frozen_untouched)));

    let adaptive = &results[0].adaptive;
    let c = adaptive.config();
    let thresholds = GateThresholds::defaults(c.beta, c.epsilon);
    let classes = gates::classify_gates(adaptive, &train_set.xs, thresholds)?;
    out.checks.push(Check::at_most(
        "active_and_sensitive_overlap",
        classes.overlap().len() as f64,
        if thresholds.compatible { 0.0 } else { f64::INFINITY },
    ));
    let mut gates_table = Table::new(&["example", "layer", "node", "G", "active", "sensitive", "max_dG"]);
    for r in &classes.records {
        gates_table.push(vec![
            r.example.into(),
            r.layer.into(),
            r.node.into(),
            r.value.into(),
            r.active.into(),
            r.sensitive.into(),
            r.max_dg.into(),
        ]);
    }
    out.tables.push(("gates.csv".into(), gates_table));
    let summary = gates::subnetwork_summary(&classes);
    let mut sub = Table::new(&["example", "layer", "active", "sensitive", "active_paths", "sensitive_paths"]);
    for e in &summary.per_example {
        for (l, (a, s)) in e.active_per_layer.iter().zip(&e.sensitive_per_layer).enumerate() {
            sub.push(vec![
                e.example.into(),
                (l + 1).into(),
                (*a).into(),
                (*s).into(),
                (e.active_paths as f64).into(),
                (e.sensitive_paths as f64).into(),
            ]);
        }
    }
    out.tables.push(("subnetworks.csv".into(), sub));
    Ok(out)
}
