//! Kernels at initialization across depth and width, and training
//! convergence across depth.

use rayon::prelude::*;

use super::{mean_series, Artifacts, ExperimentSpec};
use crate::gram::{self, Normalization};
use crate::linalg::{mean_and_se, sym_eigen, Matrix};
use crate::network::{GatingVariant, Network};
use crate::report::{Plot, Series, Table};
use crate::theory;
use crate::train;
use crate::Error;

fn kernel_at_init(net: &Network, xs: &[Vec<f64>]) -> Result<Matrix, Error> {
    Ok(gram::kernel(net, xs)?.total())
}

/// Expected `λ` for gates that do not depend on the weights.
fn expected_lambda(spec: &ExperimentSpec, n: usize, width: usize, depth: usize) -> Result<Matrix, Error> {
    match spec.net.variant {
        GatingVariant::Frg => Ok(theory::frg_lambda_bar_matrix(n, spec.net.mu, width, depth)),
        GatingVariant::Dln => Ok(Matrix::filled(n, n, (width as f64).powi(depth as i32 - 1))),
        v => Err(Error::Usage(format!("gram-trace needs frg or dln gates, got {v}"))),
    }
}

/// Monte Carlo mean and standard error of `K₀(0,0)` and `K₀(0,1)` per depth,
/// next to `d σ^(2(d-1)) (xᵀx ⊙ λ̄)`.
pub fn run_gram_trace(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let ds = spec.data.load(spec.seeds[0])?;
    let n = ds.n();
    let width = spec.net.width;
    let mut table = Table::new(&["d", "entry_kind", "mc_mean", "mc_se", "theory"]);
    let mut plot = Plot::new("K0 entries at initialization", "depth", "entry");
    let mut curves: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut summary = Vec::new();
    for &depth in &spec.depths {
        let lambda = expected_lambda(spec, n, width, depth)?;
        let config = spec.net.config(spec.net.variant, ds.d_in(), width, depth);
        let expected = theory::expected_gram(&ds.xs, &lambda, depth, config.sigma)?;
        let ks = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                let xs = spec.data.load(seed)?.xs;
                let net = spec.net.build(ds.d_in(), width, depth, &xs, seed)?;
                kernel_at_init(&net, &xs)
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let mut entries = vec![("diagonal", 0usize, 0usize)];
        if n > 1 {
            entries.push(("off_diagonal", 0, 1));
        }
        for (kind, s, t) in entries {
            let samples: Vec<f64> = ks.iter().map(|k| k[(s, t)]).collect();
            let (mean, se) = mean_and_se(&samples);
            let se = if se.is_finite() { se } else { 0.0 };
            table.push(vec![depth.into(), kind.into(), mean.into(), se.into(), expected[(s, t)].into()]);
            summary.push(format!("d={depth} {kind}: mean {mean:.4} ± {se:.4}, theory {:.4}", expected[(s, t)]));
            let label = kind.to_string();
            match curves.iter_mut().find(|(l, _, _)| *l == label) {
                Some((_, mc, th)) => {
                    mc.push(mean);
                    th.push(expected[(s, t)]);
                }
                None => curves.push((label, vec![mean], vec![expected[(s, t)]])),
            }
        }
    }
    let xs: Vec<f64> = spec.depths.iter().map(|&d| d as f64).collect();
    for (label, mc, th) in curves {
        plot = plot
            .with(Series::new(format!("{label} (mc)"), xs.clone(), mc))
            .with(Series::new(format!("{label} (theory)"), xs.clone(), th));
    }
    Ok(Artifacts {
        tables: vec![("gram_trace.csv".into(), table)],
        plots: vec![("gram_trace.svg".into(), plot)],
        summary,
        ..Default::default()
    })
}

/// Per (depth, width): the seed-averaged ECDF of the spectrum of `K₀/d`
/// against the ECDF of the ideal FRG matrix, plus the largest gap.
pub fn run_ecdf_sweep(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    if spec.net.variant != GatingVariant::Frg {
        return Err(Error::Usage(format!("spectrum compares against the FRG ideal; got {}", spec.net.variant)));
    }
    let ds = spec.data.load(spec.seeds[0])?;
    let n = ds.n();
    let mut table = Table::new(&["d", "w", "seed_count", "index", "actual_cum", "ideal_cum"]);
    let mut gaps = Table::new(&["d", "w", "seed_count", "sup_gap"]);
    let mut plot = Plot::new("cumulative eigenvalues of K0/d", "index", "cumulative sum");
    let mut summary = Vec::new();
    let index: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    for &depth in &spec.depths {
        let ideal = gram::ecdf(&theory::ideal_frg_spectrum(n, spec.net.mu, depth), Normalization::None)?.ecdf;
        plot = plot.with(Series::new(format!("ideal d={depth}"), index.clone(), ideal.clone()));
        for &width in &spec.widths {
            let curves = spec
                .seeds
                .par_iter()
                .map(|&seed| {
                    let xs = spec.data.load(seed)?.xs;
                    let net = spec.net.build(ds.d_in(), width, depth, &xs, seed)?;
                    let k = kernel_at_init(&net, &xs)?.scale(1.0 / depth as f64);
                    Ok(gram::ecdf(&sym_eigen(&k)?.values, Normalization::None)?.ecdf)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let actual = mean_series(&curves);
            let gap = gram::sup_gap(&actual, &ideal);
            for (i, (a, b)) in actual.iter().zip(&ideal).enumerate() {
                table.push(vec![depth.into(), width.into(), spec.seeds.len().into(), i.into(), (*a).into(), (*b).into()]);
            }
            gaps.push(vec![depth.into(), width.into(), spec.seeds.len().into(), gap.into()]);
            summary.push(format!("d={depth} w={width}: sup gap {gap:.4}"));
            plot = plot.with(Series::new(format!("d={depth} w={width}"), index.clone(), actual));
        }
    }
    Ok(Artifacts {
        tables: vec![("ecdf.csv".into(), table), ("ecdf_gap.csv".into(), gaps)],
        plots: vec![("ecdf.svg".into(), plot)],
        summary,
        ..Default::default()
    })
}

struct RunResult {
    depth: usize,
    width: usize,
    seed: u64,
    alpha: f64,
    record: train::TrajectoryRecord,
    linear: Vec<f64>,
    net: Network,
}

fn trajectory_tables(record: &train::TrajectoryRecord) -> (Table, Option<Table>) {
    let mut t = Table::new(&["step", "loss", "residual_ratio"]);
    for r in &record.steps {
        t.push(vec![r.step.into(), r.loss.into(), r.residual_ratio.into()]);
    }
    if record.snapshots.is_empty() {
        return (t, None);
    }
    let mut s = Table::new(&[
        "step",
        "loss",
        "residual_ratio",
        "nu",
        "rho_max",
        "rho_min",
        "trace",
        "mean_gate",
        "gate_drift",
    ]);
    for snap in &record.snapshots {
        let r = record.steps[snap.step];
        s.push(vec![
            snap.step.into(),
            r.loss.into(),
            r.residual_ratio.into(),
            snap.nu.into(),
            snap.rho_max.into(),
            snap.rho_min.into(),
            snap.trace.into(),
            snap.mean_gate.into(),
            snap.gate_drift.into(),
        ]);
    }
    (t, Some(s))
}

/// Adds `trajectory.csv` (every step) and `snapshots.csv` (kernel snapshot
/// steps) for one run under `dir`.
pub(crate) fn push_trajectory(out: &mut Artifacts, dir: &str, record: &train::TrajectoryRecord) {
    let (t, s) = trajectory_tables(record);
    out.tables.push((format!("{dir}/trajectory.csv"), t));
    if let Some(s) = s {
        out.tables.push((format!("{dir}/snapshots.csv"), s));
    }
}

/// Trains one net per (depth, width, seed) and averages `‖e_t‖²/‖e_0‖²`
/// over seeds. With `opt.alpha = auto` each run uses
/// `alpha_factor / ρ_max(K₀)`.
pub fn run_convergence_sweep(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let d_in = spec.data.load(spec.seeds[0])?.d_in();
    let mut jobs = Vec::new();
    for &depth in &spec.depths {
        for &width in &spec.widths {
            for &seed in &spec.seeds {
                jobs.push((depth, width, seed));
            }
        }
    }
    let settings = spec.train_settings();
    let runs = jobs
        .par_iter()
        .map(|&(depth, width, seed)| {
            let ds = spec.data.load(seed)?;
            let mut net = spec.net.build(d_in, width, depth, &ds.xs, seed)?;
            let k0 = kernel_at_init(&net, &ds.xs)?;
            let opt = spec.opt.resolve(|| Ok(k0.clone()))?;
            let e0 = train::residuals(&net, &ds.xs, &ds.ys)?;
            let linear = train::predict_linear_dynamics(&k0, opt.effective_alpha(), &e0, spec.steps);
            let record = train::train(&mut net, &ds.xs, &ds.ys, &opt, &settings)?;
            Ok(RunResult { depth, width, seed, alpha: opt.effective_alpha(), record, linear, net })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut out = Artifacts::default();
    let mut table = Table::new(&["d", "w", "step", "seed_count", "mean_ratio", "se_ratio", "linear_ratio"]);
    let mut plot = Plot::new("training residual", "step", "|e_t|^2 / |e_0|^2").log_y(true);
    for &depth in &spec.depths {
        for &width in &spec.widths {
            let group: Vec<&RunResult> = runs.iter().filter(|r| r.depth == depth && r.width == width).collect();
            let linear = mean_series(&group.iter().map(|r| r.linear.clone()).collect::<Vec<_>>());
            let mut mean = Vec::with_capacity(spec.steps + 1);
            for t in 0..=spec.steps {
                let v: Vec<f64> = group.iter().map(|r| r.record.steps[t].residual_ratio).collect();
                let (m, se) = mean_and_se(&v);
                let se = if se.is_finite() { se } else { 0.0 };
                table.push(vec![
                    depth.into(),
                    width.into(),
                    t.into(),
                    group.len().into(),
                    m.into(),
                    se.into(),
                    linear[t].into(),
                ]);
                mean.push(m);
            }
            out.summary.push(format!(
                "d={depth} w={width}: mean residual ratio at step {} = {:.6}",
                spec.steps,
                mean[spec.steps]
            ));
            let steps: Vec<f64> = (0..=spec.steps).map(|t| t as f64).collect();
            plot = plot.with(Series::new(format!("d={depth} w={width}"), steps, mean));
        }
    }
    out.tables.push(("convergence.csv".into(), table));
    out.plots.push(("convergence.svg".into(), plot));
    let mut alphas = Table::new(&["d", "w", "seed", "alpha", "final_loss"]);
    for r in runs {
        let dir = format!("runs/d{}_w{}_s{}", r.depth, r.width, r.seed);
        push_trajectory(&mut out, &dir, &r.record);
        alphas.push(vec![r.depth.into(), r.width.into(), r.seed.into(), r.alpha.into(), r.record.final_loss().into()]);
        out.nets.push((format!("{dir}/net.dgn"), r.net));
    }
    out.tables.push(("runs.csv".into(), alphas));
    Ok(out)
}
