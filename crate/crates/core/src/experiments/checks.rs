//! Check suites: layerwise computations against brute-force path sums, and
//! closed-form predictions against exact or Monte Carlo values.

use rayon::prelude::*;

use super::{init_network, Artifacts, Check, ExperimentSpec, STREAM_INPUTS, STREAM_NET, STREAM_RANDOM_GATES};
use crate::data;
use crate::gram;
use crate::linalg::{mean_and_se, sym_eigen, Matrix, Prng};
use crate::network::{init_params, Example, Gating, GatingVariant, NetConfig, Network};
use crate::paths::{self, PathBudget};
use crate::report::{Cell, Table};
use crate::theory;
use crate::Error;

/// Which architectures the oracle suite sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleGrid {
    /// `d ∈ {2,3,4}`, `w ∈ {1..4}`, `d_in ∈ {1..3}`, every variant.
    Tiny,
    /// `d ∈ {2,3}`, `w ∈ {1,2}`, `d_in ∈ {1,2}`, every variant.
    Quick,
}

impl OracleGrid {
    pub fn configs(self) -> Vec<(GatingVariant, usize, usize, usize)> {
        let (depths, widths, dims): (&[usize], &[usize], &[usize]) = match self {
            OracleGrid::Tiny => (&[2, 3, 4], &[1, 2, 3, 4], &[1, 2, 3]),
            OracleGrid::Quick => (&[2, 3], &[1, 2], &[1, 2]),
        };
        let mut out = Vec::new();
        for v in GatingVariant::ALL {
            for &d in depths {
                for &w in widths {
                    for &d_in in dims {
                        out.push((v, d, w, d_in));
                    }
                }
            }
        }
        out
    }
}

/// Worst errors found for one network of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub variant: GatingVariant,
    pub depth: usize,
    pub width: usize,
    pub d_in: usize,
    /// `|forward − path sum| / Σ_p |term_p|`.
    pub forward_err: f64,
    /// Relative NTF error: against central differences for soft variants,
    /// against path-sensitivity sums otherwise.
    pub ntf_err: f64,
    /// Layerwise-product λ against the path sum; exact zero expected for
    /// hard gates.
    pub lambda_err: f64,
    /// `ΨᵀΨ` against the cross-input κ reconstruction (frozen gates only).
    pub kappa_cross_err: Option<f64>,
    /// `ΨᵀΨ` against the same-input κ reconstruction (frozen gates, `d_in = 1`).
    pub kappa_err: Option<f64>,
}

const ORACLE_EXAMPLES: usize = 3;

fn oracle_net(spec: &ExperimentSpec, v: GatingVariant, d: usize, w: usize, d_in: usize, seed: u64) -> Result<(Network, Vec<Vec<f64>>), Error> {
    let mut rng = Prng::derive(seed, STREAM_INPUTS ^ ((d * 100 + w * 10 + d_in) as u64) << 8);
    let xs: Vec<Vec<f64>> = (0..ORACLE_EXAMPLES).map(|_| (0..d_in).map(|_| rng.normal()).collect()).collect();
    let config = spec.net.config(v, d_in, w, d);
    Ok((init_network(config, &xs, seed)?, xs))
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

fn ntf_finite_difference_err(net: &Network, s: usize, x: &[f64]) -> Result<f64, Error> {
    let ex = Example::indexed(s, x);
    let analytic = net.ntf_column(ex)?;
    let theta = net.trainable_flat();
    let scale = analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    let mut unit = vec![0.0; theta.len()];
    for m in 0..theta.len() {
        let h = 1e-5 * theta[m].abs().max(1.0);
        unit[m] = 1.0;
        let mut plus = net.clone();
        plus.add_to_trainable(&unit, h);
        let mut minus = net.clone();
        minus.add_to_trainable(&unit, -h);
        unit[m] = 0.0;
        let fd = (plus.output(ex)? - minus.output(ex)?) / (2.0 * h);
        worst = worst.max(rel(analytic[m], fd, scale));
    }
    Ok(worst)
}

fn ntf_path_err(net: &Network, s: usize, x: &[f64], budget: PathBudget) -> Result<f64, Error> {
    let ex = Example::indexed(s, x);
    let analytic = net.ntf_column(ex)?;
    let gates = net.compute_gates(ex)?;
    let config = net.config();
    let params = net.strength();
    let all = paths::enumerate(config, budget)?;
    let mut worst = 0.0f64;
    for (m, &a) in analytic.iter().enumerate() {
        let Some(idx) = params.weight_index(m) else {
            return Err(Error::Usage(format!("NTF entry {m} is not a strength weight")));
        };
        let mut sum = 0.0;
        let mut scale = 0.0;
        for p in &all {
            let term = x[p.input()] * paths::path_activation(&gates, p) * paths::path_sensitivity(params, p, idx);
            sum += term;
            scale += term.abs();
        }
        worst = worst.max(rel(a, sum, scale));
    }
    Ok(worst)
}

fn max_rel_matrix(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.max_abs().max(b.max_abs());
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| rel(*x, *y, scale)).fold(0.0, f64::max)
}

fn oracle_row(spec: &ExperimentSpec, v: GatingVariant, d: usize, w: usize, d_in: usize, seed: u64) -> Result<OracleRow, Error> {
    let budget = PathBudget::default();
    let (net, xs) = oracle_net(spec, v, d, w, d_in, seed)?;
    let config = net.config().clone();
    let all = paths::enumerate(&config, budget)?;
    let mut forward_err = 0.0f64;
    let mut ntf_err = 0.0f64;
    for (s, x) in xs.iter().enumerate() {
        let ex = Example::indexed(s, x);
        let y = net.output(ex)?;
        let gates = net.compute_gates(ex)?;
        let via = paths::output_via_paths(x, &gates, net.strength(), &config, budget)?;
        let scale: f64 = all
            .iter()
            .map(|p| (x[p.input()] * paths::path_activation(&gates, p) * paths::path_strength(net.strength(), p)).abs())
            .sum();
        forward_err = forward_err.max(rel(y, via, scale));
        ntf_err = ntf_err.max(if v.is_soft() {
            ntf_finite_difference_err(&net, s, x)?
        } else {
            ntf_path_err(&net, s, x, budget)?
        });
    }
    let gates = gram::gate_tensors(&net, &xs)?;
    let layered = gram::lambda_matrix(&gates).matrix;
    let brute = paths::lambda_by_paths(&gates, &config, budget)?;
    let lambda_err = if v.is_soft() {
        max_rel_matrix(&layered, &brute)
    } else {
        layered.as_slice().iter().zip(brute.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (kappa_cross_err, kappa_err) = if v.is_soft() {
        (None, None)
    } else {
        let k = gram::gram(&gram::ntf_matrix(&net, &xs)?).matrix;
        let cross = paths::gram_from_kappa_cross(net.strength(), &xs, &gates, &config, budget)?;
        let same = (d_in == 1)
            .then(|| paths::gram_from_kappa(net.strength(), &xs, &gates, &config, budget))
            .transpose()?;
        (Some(max_rel_matrix(&k, &cross)), same.map(|m| max_rel_matrix(&k, &m)))
    };
    Ok(OracleRow { variant: v, depth: d, width: w, d_in, forward_err, ntf_err, lambda_err, kappa_cross_err, kappa_err })
}

/// Every grid network: output, NTF, λ and κ against the path oracles.
pub fn oracle_rows(spec: &ExperimentSpec, grid: OracleGrid, seed: u64) -> Result<Vec<OracleRow>, Error> {
    grid.configs()
        .par_iter()
        .map(|&(v, d, w, d_in)| oracle_row(spec, v, d, w, d_in, seed))
        .collect()
}

fn worst<'a>(rows: impl Iterator<Item = &'a OracleRow>, f: impl Fn(&OracleRow) -> Option<f64>) -> f64 {
    rows.filter_map(f).fold(0.0, f64::max)
}

pub fn oracle_checks(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let mut out = Artifacts::default();
    let mut table = Table::new(&[
        "seed",
        "variant",
        "d",
        "w",
        "d_in",
        "forward_err",
        "ntf_err",
        "lambda_err",
        "kappa_cross_err",
        "kappa_err",
    ]);
    let mut rows = Vec::new();
    for &seed in &spec.seeds {
        for r in oracle_rows(spec, spec.grid, seed)? {
            let opt = |v: Option<f64>| v.map_or(Cell::Text("na".into()), Cell::Num);
            table.push(vec![
                seed.into(),
                r.variant.name().into(),
                r.depth.into(),
                r.width.into(),
                r.d_in.into(),
                r.forward_err.into(),
                r.ntf_err.into(),
                r.lambda_err.into(),
                opt(r.kappa_cross_err),
                opt(r.kappa_err),
            ]);
            rows.push(r);
        }
    }
    let soft = |r: &&OracleRow| r.variant.is_soft();
    let hard = |r: &&OracleRow| !r.variant.is_soft();
    out.checks.push(Check::at_most("forward_equals_path_sum", worst(rows.iter(), |r| Some(r.forward_err)), 1e-10));
    out.checks.push(Check::at_most("ntf_soft_vs_central_differences", worst(rows.iter().filter(soft), |r| Some(r.ntf_err)), 1e-5));
    out.checks.push(Check::at_most("ntf_frozen_vs_path_sensitivities", worst(rows.iter().filter(hard), |r| Some(r.ntf_err)), 1e-12));
    out.checks.push(Check::at_most("lambda_hard_exact", worst(rows.iter().filter(hard), |r| Some(r.lambda_err)), 0.0));
    out.checks.push(Check::at_most("lambda_soft", worst(rows.iter().filter(soft), |r| Some(r.lambda_err)), 1e-12));
    out.checks.push(Check::at_most("kappa_cross_reconstruction", worst(rows.iter(), |r| r.kappa_cross_err), 1e-8));
    out.checks.push(Check::at_most("kappa_reconstruction_d_in_1", worst(rows.iter(), |r| r.kappa_err), 1e-8));
    out.summary.push(format!("{} networks checked", rows.len()));
    out.tables.push(("oracle_grid.csv".into(), table));
    Ok(out)
}

/// Entrywise mean and standard error over a set of equally shaped matrices.
fn mc_matrix(samples: &[Matrix]) -> (Matrix, Matrix) {
    let (r, c) = samples[0].shape();
    let mut mean = Matrix::zeros(r, c);
    let mut se = Matrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let v: Vec<f64> = samples.iter().map(|m| m[(i, j)]).collect();
            let (m, s) = mean_and_se(&v);
            mean.as_mut_slice()[i * c + j] = m;
            se.as_mut_slice()[i * c + j] = s;
        }
    }
    (mean, se)
}

/// Largest `|mean − prediction| / se` over entries.
fn max_z(mean: &Matrix, se: &Matrix, prediction: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for ((m, s), p) in mean.as_slice().iter().zip(se.as_slice()).zip(prediction.as_slice()) {
        let diff = (m - p).abs();
        let z = if diff == 0.0 { 0.0 } else if *s > 0.0 { diff / s } else { f64::INFINITY };
        worst = worst.max(z);
    }
    worst
}

fn ideal_spectrum_check() -> Result<Check, Error> {
    let mut err = 0.0f64;
    for n in [2, 5, 50] {
        for mu in [0.3, 0.5] {
            for d in [2, 6, 20] {
                let numeric = sym_eigen(&theory::ideal_frg_gram(n, mu, d))?.values;
                let closed = theory::ideal_frg_spectrum(n, mu, d);
                for (a, b) in numeric.iter().zip(&closed) {
                    err = err.max((a - b).abs());
                }
            }
        }
    }
    Ok(Check::at_most("ideal_frg_spectrum_closed_form", err, 1e-10))
}

fn dln_corollary_check() -> Result<Check, Error> {
    let mut err = 0.0f64;
    for d in 2..=6 {
        for w in [1usize, 3, 10] {
            for sigma in [0.3, (1.0 / w as f64).sqrt()] {
                let lambda = Matrix::filled(1, 1, (w as f64).powi(d as i32 - 1));
                let k = theory::expected_gram(&[vec![1.0]], &lambda, d, sigma)?[(0, 0)];
                let closed = d as f64 * (w as f64 * sigma * sigma).powi(d as i32 - 1);
                err = err.max((k - closed).abs() / closed);
            }
        }
    }
    Ok(Check::at_most("dln_expected_kernel_closed_form", err, 1e-12))
}

fn frg_ideal_consistency(mu: f64) -> Result<Check, Error> {
    let mut err = 0.0f64;
    let ones = vec![vec![1.0]; 5];
    for d in [2, 3, 6] {
        for w in [4usize, 50] {
            let sigma = theory::choice_of_sigma(mu, w);
            let expected = theory::expected_gram(&ones, &theory::frg_lambda_bar_matrix(5, mu, w, d), d, sigma)?
                .scale(1.0 / d as f64);
            err = err.max(max_rel_matrix(&expected, &theory::ideal_frg_gram(5, mu, d)));
        }
    }
    Ok(Check::at_most("ideal_frg_gram_equals_scaled_expectation", err, 1e-12))
}

fn frg_lambda_mc(spec: &ExperimentSpec) -> Result<Vec<Check>, Error> {
    let (mu, w, d) = (spec.net.mu, 20, 3);
    let xs = vec![vec![1.0]; 2];
    let config = NetConfig::new(GatingVariant::Frg, 1, w, d).with_mu(mu);
    let lambdas = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let net = init_network(config.clone(), &xs, seed)?;
            Ok(gram::lambda_matrix(&gram::gate_tensors(&net, &xs)?).matrix)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let (own, cross) = theory::frg_lambda_bar(mu, w, d);
    let (mean, se) = mc_matrix(&lambdas);
    Ok(vec![
        Check::at_most("frg_lambda_self_mc_z", max_z(&mean, &se, &Matrix::filled(2, 2, own)).min(
            ((mean[(0, 0)] - own).abs() / se[(0, 0)]).max((mean[(1, 1)] - own).abs() / se[(1, 1)]),
        ), 3.0),
        Check::at_most("frg_lambda_cross_mc_z", (mean[(0, 1)] - cross).abs() / se[(0, 1)], 3.0),
    ])
}

/// Soft-GaLU with the gating weights fixed and the strength weights redrawn
/// per seed: `K^w` against the expectation with and without the depth
/// factor, `K^a` against `σ^(2d) (xᵀx) ⊙ δ`, and the exact block split.
pub fn soft_galu_kernel_checks(spec: &ExperimentSpec) -> Result<Vec<Check>, Error> {
    let (d_in, w, d, n) = (2, 3, 3, 3);
    let config = spec.net.config(GatingVariant::SoftGalu, d_in, w, d);
    let data_seed = spec.data.seed_for(spec.seeds[0]);
    let mut rng = Prng::derive(data_seed, STREAM_INPUTS);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d_in).map(|_| rng.normal()).collect()).collect();
    let gating = init_params(&config, &mut Prng::derive(data_seed, STREAM_RANDOM_GATES));
    let build = |seed: u64| {
        let strength = init_params(&config, &mut Prng::derive(seed, STREAM_NET));
        Network::from_parts(config.clone(), strength, Gating::Separate(gating.clone()))
    };
    let kernels = spec
        .seeds
        .par_iter()
        .map(|&seed| Ok(gram::kernel(&build(seed)?, &xs)?))
        .collect::<Result<Vec<_>, Error>>()?;
    let kw: Vec<Matrix> = kernels.iter().map(|k| k.strength.clone().expect("strength block")).collect();
    let ka: Vec<Matrix> = kernels.iter().map(|k| k.gate.clone().expect("gate block")).collect();
    let net0 = build(spec.seeds[0])?;
    let lambda = gram::lambda_matrix(&gram::gate_tensors(&net0, &xs)?).matrix;
    let delta = paths::delta_matrix(&net0, &xs, PathBudget::default())?;
    let with_d = theory::expected_kw(&xs, &lambda, d, config.sigma)?;
    let without_d = theory::expected_kw_no_depth_factor(&xs, &lambda, d, config.sigma)?;
    let expected_ka = theory::expected_ka(&xs, &delta, d, config.sigma)?;
    let (mw, sw) = mc_matrix(&kw);
    let (ma, sa) = mc_matrix(&ka);

    let ntf = gram::ntf_matrix(&net0, &xs)?;
    let full = gram::gram(&ntf).matrix;
    let (gw, ga) = gram::gram_split_soft_galu(&ntf)?;
    let split_err = full
        .as_slice()
        .iter()
        .zip(gw.matrix.add(&ga.matrix)?.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let min_eig = sym_eigen(&gw.matrix)?.min().min(sym_eigen(&ga.matrix)?.min());
    let psd_floor = -1e-8 * full.trace();
    Ok(vec![
        Check::at_most("soft_galu_split_sum", split_err, 1e-12),
        Check::at_most("soft_galu_blocks_negated_min_eigenvalue", -min_eig, -psd_floor),
        Check::at_most("strength_kernel_mc_z_with_depth_factor", max_z(&mw, &sw, &with_d), 3.0),
        Check::at_most("strength_kernel_mc_z_without_depth_factor", max_z(&mw, &sw, &without_d), 3.0).report_only(),
        Check::at_most("gate_kernel_mc_z", max_z(&ma, &sa, &expected_ka), 3.0),
    ])
}

fn variance_sanity(spec: &ExperimentSpec) -> Result<Check, Error> {
    let (w, d) = (50, 3);
    let ds = data::gen_experiment1(3, 0)?;
    let config = NetConfig::new(GatingVariant::Frg, 1, w, d).with_mu(spec.net.mu);
    let ks = spec
        .seeds
        .par_iter()
        .map(|&seed| Ok(gram::kernel(&init_network(config.clone(), &ds.xs, seed)?, &ds.xs)?.total()))
        .collect::<Result<Vec<_>, Error>>()?;
    let (_, se) = mc_matrix(&ks);
    let count = ks.len() as f64;
    let var = se.as_slice().iter().map(|s| s * s * count).fold(0.0, f64::max);
    let bound = theory::variance_bound(1, config.sigma, d, w);
    Ok(Check::at_most("kernel_variance_within_10x_bound", var, 10.0 * bound))
}

/// Largest relative deviation of the seed-mean kernel from its expectation.
fn mean_deviation(spec: &ExperimentSpec, w: usize, d: usize, seeds: &[u64]) -> Result<f64, Error> {
    let ds = data::gen_experiment1(10, 0)?;
    let config = NetConfig::new(GatingVariant::Frg, 1, w, d).with_mu(spec.net.mu);
    let ks = seeds
        .par_iter()
        .map(|&seed| Ok(gram::kernel(&init_network(config.clone(), &ds.xs, seed)?, &ds.xs)?.total()))
        .collect::<Result<Vec<_>, Error>>()?;
    let (mean, _) = mc_matrix(&ks);
    let lambda = theory::frg_lambda_bar_matrix(ds.n(), config.mu, w, d);
    let expected = theory::expected_gram(&ds.xs, &lambda, d, config.sigma)?;
    Ok(max_rel_matrix(&mean, &expected))
}

fn path_overlap_checks(spec: &ExperimentSpec) -> Result<Vec<Check>, Error> {
    let config = NetConfig::new(GatingVariant::Dln, 1, 2, 3).with_sigma(0.7);
    let p1 = paths::path_at(&config, 0);
    // Neighbouring paths share their first weights, so the overlap is not
    // identically zero.
    let p2 = paths::path_at(&config, 1);
    let expected_self = config.depth as f64 * config.sigma.powi(2 * (config.depth as i32 - 1));
    let draws = 10_000.max(spec.seeds.len());
    let mut rng = Prng::derive(spec.seeds[0], STREAM_NET);
    let mut cross = Vec::with_capacity(draws);
    let mut self_err = 0.0f64;
    for _ in 0..draws {
        let params = init_params(&config, &mut rng);
        cross.push(paths::sensitivity_overlap(&params, &p1, &p2));
        self_err = self_err.max((paths::sensitivity_overlap(&params, &p1, &p1) - expected_self).abs() / expected_self);
    }
    let (mean, se) = mean_and_se(&cross);
    Ok(vec![
        Check::at_most("distinct_path_overlap_mean_z", mean.abs() / se, 4.0),
        Check::at_most("own_path_overlap_exact", self_err, 1e-12),
    ])
}

pub fn theory_checks(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    let mut out = Artifacts::default();
    out.checks.push(ideal_spectrum_check()?);
    out.checks.push(dln_corollary_check()?);
    out.checks.push(frg_ideal_consistency(spec.net.mu)?);
    out.checks.extend(frg_lambda_mc(spec)?);
    out.checks.extend(soft_galu_kernel_checks(spec)?);
    out.checks.push(variance_sanity(spec)?);
    let few: Vec<u64> = spec.seeds.iter().copied().take(20).collect();
    let narrow = mean_deviation(spec, 25, 4, &few)?;
    let wide = mean_deviation(spec, 500, 4, &few)?;
    out.checks.push(Check::at_most("kernel_mean_deviation_shrinks_with_width", wide, narrow));
    out.checks.extend(path_overlap_checks(spec)?);
    Ok(out)
}
