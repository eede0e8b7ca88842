//! Rotation invariance of the pooled circular-conv output.

use super::{Artifacts, Check, ExperimentSpec, STREAM_INPUTS};
use crate::convnet::{self, ConvConfig, ConvGating, ConvParams};
use crate::linalg::{mean_and_se, Matrix, Prng};
use crate::paths::PathBudget;
use crate::report::{Plot, Series, Table};
use crate::Error;

/// Streams for the Monte Carlo draws of each shift start here, so every
/// shift uses independent draws.
const STREAM_SHIFT: u64 = 100;
const STREAM_FIXED_GATES: u64 = 6;

fn conv_config(spec: &ExperimentSpec) -> Result<ConvConfig, Error> {
    let c = &spec.conv;
    let gating = match c.gating.as_str() {
        "ones" => ConvGating::AllOnes,
        "frg" => ConvGating::Random { mu: c.mu },
        "galu" => ConvGating::GaluFrozen,
        other => return Err(Error::Usage(format!("unknown conv.gating `{other}` (ones | frg | galu)"))),
    };
    let config = ConvConfig::new(c.d_in, c.kernel, c.layers).with_sigma(c.sigma).with_gating(gating);
    config.validate()?;
    Ok(config)
}

struct ShiftResult {
    analytic: f64,
    mean: f64,
    se: f64,
}

/// For gates fixed per example (all-ones or random), the analytic value is
/// exact and the Monte Carlo redraws the taps. For GaLU gates every draw
/// takes fresh gating taps and fresh strength taps; the analytic column is
/// then the draw-average of the expectation given the gates.
fn shift_result(
    config: &ConvConfig,
    fixed: Option<(&Matrix, &Matrix)>,
    x_s: &[f64],
    x_t: &[f64],
    shift: usize,
    draws: usize,
    rng: &mut Prng,
) -> Result<ShiftResult, Error> {
    let (xs, xt) = (convnet::rotate_input(x_s, shift), convnet::rotate_input(x_t, shift));
    let budget = PathBudget::default();
    match fixed {
        Some((gs, gt)) => {
            let (gs, gt) = (convnet::rotate_gates(gs, shift), convnet::rotate_gates(gt, shift));
            let analytic = convnet::invariance_expectation(config, &gs, &gt, &xs, &xt, budget)?;
            let (mean, se) = convnet::mc_output_product(config, &gs, &gt, &xs, &xt, draws, rng)?;
            Ok(ShiftResult { analytic, mean, se })
        }
        None => {
            let mut conditional = Vec::with_capacity(draws);
            let mut products = Vec::with_capacity(draws);
            for _ in 0..draws {
                let gating = ConvParams::init(config, rng);
                let gs = convnet::relu_conv_gates(&gating, &xs);
                let gt = convnet::relu_conv_gates(&gating, &xt);
                conditional.push(convnet::invariance_expectation(config, &gs, &gt, &xs, &xt, budget)?);
                let taps = ConvParams::init(config, rng);
                let a = convnet::circ_conv_forward(config, &taps, &gs, &xs)?.output;
                let b = convnet::circ_conv_forward(config, &taps, &gt, &xt)?.output;
                products.push(a * b);
            }
            let (analytic, _) = mean_and_se(&conditional);
            let (mean, se) = mean_and_se(&products);
            Ok(ShiftResult { analytic, mean, se })
        }
    }
}

/// `E[y(x_s) y(x_t)]` for every cyclic shift of both inputs: the
/// closed-form bundle sum and a Monte Carlo estimate, plus bundle checks.
pub fn run_conv_invariance(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let config = conv_config(spec)?;
    let draws = spec.conv.draws.max(2);
    let mut table = Table::new(&["gating", "shift", "analytic", "mc_mean", "mc_se", "draws"]);
    let mut out = Artifacts::default();
    let gating_name = spec.conv.gating.as_str();
    let n = config.d_in;
    for &seed in &spec.seeds {
        let mut inputs = Prng::derive(spec.data.seed_for(seed), STREAM_INPUTS);
        let x_s: Vec<f64> = (0..n).map(|_| inputs.normal()).collect();
        let x_t: Vec<f64> = (0..n).map(|_| inputs.normal()).collect();
        let fixed = match config.gating {
            ConvGating::GaluFrozen => None,
            _ => {
                let source = convnet::ConvGateSource::init(&config, 2, &mut Prng::derive(seed, STREAM_FIXED_GATES));
                Some((source.gates(&config, 0, &x_s)?, source.gates(&config, 1, &x_t)?))
            }
        };
        let mut results = Vec::with_capacity(n);
        for shift in 0..n {
            let mut rng = Prng::derive(seed, STREAM_SHIFT + shift as u64);
            let r = shift_result(&config, fixed.as_ref().map(|(a, b)| (a, b)), &x_s, &x_t, shift, draws, &mut rng)?;
            table.push(vec![
                gating_name.into(),
                shift.into(),
                r.analytic.into(),
                r.mean.into(),
                r.se.into(),
                draws.into(),
            ]);
            results.push(r);
        }
        let base = &results[0];
        let analytic_spread = results.iter().map(|r| (r.analytic - base.analytic).abs()).fold(0.0, f64::max);
        if fixed.is_some() {
            let tol = 1e-12 * base.analytic.abs().max(1.0);
            out.checks.push(Check::at_most(format!("analytic_shift_invariant_seed{seed}"), analytic_spread, tol));
        }
        let worst_z = results
            .iter()
            .map(|r| (r.mean - base.mean).abs() / (r.se * r.se + base.se * base.se).sqrt().max(f64::MIN_POSITIVE))
            .skip(1)
            .fold(0.0, f64::max);
        out.checks.push(Check::at_most(format!("mc_shift_invariant_seed{seed}_z"), worst_z, 3.0));
        let mc_vs_analytic = results
            .iter()
            .map(|r| (r.mean - r.analytic).abs() / r.se.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        out.checks.push(Check::at_most(format!("mc_matches_analytic_seed{seed}_z"), mc_vs_analytic, 3.0));
        out.summary.push(format!(
            "seed {seed} ({gating_name}): analytic {:.6} (spread {analytic_spread:.2e}), mc {:.6} ± {:.6}, worst shift z {worst_z:.2}",
            base.analytic, base.mean, base.se
        ));
    }

    let bundles = convnet::enumerate_bundles(&config, PathBudget::default())?;
    let expected = (config.kernel as u64).pow(config.conv_layers as u32);
    out.checks.push(Check::near("bundle_count", bundles.len() as f64, expected as f64, 0.0));
    let params = ConvParams::init(&config, &mut Prng::derive(spec.seeds[0], STREAM_SHIFT - 1));
    let mut mismatch = 0.0f64;
    for b in &bundles {
        let s = convnet::bundle_strength(&config, &params, &b.taps);
        for p in &b.paths {
            mismatch = mismatch.max((convnet::path_strength(&config, &params, p) - s).abs());
        }
    }
    out.checks.push(Check::at_most("bundle_strength_equal", mismatch, 0.0));

    let shifts: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let plot = Plot::new("pooled output product under rotation", "shift", "E[y_s y_t]")
        .with(Series::new("analytic", shifts.clone(), table.column("analytic")[..n].to_vec()))
        .with(Series::new("monte carlo", shifts, table.column("mc_mean")[..n].to_vec()));
    out.tables.push(("conv_invariance.csv".into(), table));
    out.plots.push(("conv_invariance.svg".into(), plot));
    Ok(out)
}
