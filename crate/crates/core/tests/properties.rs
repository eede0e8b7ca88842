use proptest::prelude::*;

use gatelab::config::Settings;
use gatelab::convnet::{self, ConvConfig, ConvGating, ConvGateSource};
use gatelab::gram::{self, Normalization};
use gatelab::linalg::{matmul, sym_eigen, Matrix, Prng};
use gatelab::network::{self, Example, GatingVariant, NetConfig, Network};
use gatelab::paths::PathBudget;
use gatelab::report::{Cell, Table};
use gatelab::theory;

fn variant() -> impl Strategy<Value = GatingVariant> {
    prop::sample::select(GatingVariant::ALL.to_vec())
}

fn build(v: GatingVariant, d_in: usize, w: usize, d: usize, seed: u64, n: usize) -> (Network, Vec<Vec<f64>>) {
    let mut rng = Prng::new(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d_in).map(|_| rng.normal()).collect()).collect();
    let mut net = Network::init(NetConfig::new(v, d_in, w, d), &mut rng).unwrap();
    if v == GatingVariant::Frg {
        net.register_inputs(&xs, &mut rng).unwrap();
    }
    (net, xs)
}

fn symmetric(n: usize, seed: u64) -> Matrix {
    let mut rng = Prng::new(seed);
    let a = Matrix::from_fn(n, n, |_, _| rng.normal());
    a.add(&a.transpose()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigen_reconstructs(n in 1usize..8, seed in any::<u64>()) {
        let a = symmetric(n, seed);
        let e = sym_eigen(&a).unwrap();
        prop_assert!(e.values.windows(2).all(|p| p[0] <= p[1]));
        let scale = a.frobenius_norm().max(1.0);
        prop_assert!(e.reconstruct().sub(&a).unwrap().max_abs() <= 1e-10 * scale);
        let vectors = Matrix::from_fn(n, n, |i, k| e.vector(k)[i]);
        let vtv = matmul(&vectors.transpose(), &vectors).unwrap();
        prop_assert!(vtv.sub(&Matrix::identity(n)).unwrap().max_abs() < 1e-10);
        prop_assert!((e.values.iter().sum::<f64>() - a.trace()).abs() <= 1e-10 * scale);
    }

    #[test]
    fn kernel_symmetric_psd(v in variant(), d in 2usize..5, w in 1usize..4, d_in in 1usize..4, seed in any::<u64>()) {
        let (net, xs) = build(v, d_in, w, d, seed, 4);
        let k = gram::kernel(&net, &xs).unwrap().total();
        prop_assert!(k.is_symmetric(1e-12));
        let min = sym_eigen(&k).unwrap().min();
        prop_assert!(min >= -1e-9 * k.trace().max(1e-300));
    }

    #[test]
    fn dln_is_linear_in_input(d in 2usize..5, w in 1usize..4, seed in any::<u64>(), c in -3.0f64..3.0) {
        let (net, xs) = build(GatingVariant::Dln, 2, w, d, seed, 1);
        let scaled: Vec<f64> = xs[0].iter().map(|x| c * x).collect();
        let y = net.output(&xs[0][..]).unwrap();
        let yc = net.output(&scaled[..]).unwrap();
        prop_assert!((yc - c * y).abs() <= 1e-12 * (1.0 + (c * y).abs()));
    }

    #[test]
    fn relu_gated_nets_are_positively_homogeneous(
        v in prop::sample::select(vec![GatingVariant::Relu, GatingVariant::GaluFrozen]),
        d in 2usize..5, w in 1usize..4, seed in any::<u64>(), c in 0.01f64..5.0,
    ) {
        let (net, xs) = build(v, 2, w, d, seed, 1);
        let scaled: Vec<f64> = xs[0].iter().map(|x| c * x).collect();
        let y = net.output(&xs[0][..]).unwrap();
        let yc = net.output(&scaled[..]).unwrap();
        prop_assert!((yc - c * y).abs() <= 1e-12 * (1.0 + (c * y).abs()));
    }

    #[test]
    fn lambda_symmetric_and_cauchy_schwarz(v in variant(), d in 2usize..5, w in 1usize..4, seed in any::<u64>()) {
        let (net, xs) = build(v, 2, w, d, seed, 4);
        let lambda = gram::lambda_matrix(&gram::gate_tensors(&net, &xs).unwrap()).matrix;
        for s in 0..4 {
            for t in 0..4 {
                prop_assert_eq!(lambda[(s, t)], lambda[(t, s)]);
                prop_assert!(lambda[(s, t)] <= (lambda[(s, s)] * lambda[(t, t)]).sqrt() * (1.0 + 1e-12) + 1e-300);
            }
        }
    }

    #[test]
    fn ecdf_monotone_ending_at_trace(n in 1usize..8, seed in any::<u64>()) {
        let a = symmetric(n, seed);
        let psd = matmul(&a, &a).unwrap();
        let e = sym_eigen(&psd).unwrap().values;
        let raw = gram::ecdf(&e, Normalization::None).unwrap().ecdf;
        prop_assert!(raw.windows(2).all(|p| p[1] >= p[0] - 1e-12));
        prop_assert!((raw[n - 1] - psd.trace()).abs() <= 1e-9 * psd.trace().max(1.0));
        let by_trace = gram::ecdf(&e, Normalization::ByTrace).unwrap().ecdf;
        prop_assert!((by_trace[n - 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_spectrum_sums_to_n(n in 1usize..40, mu in 0.01f64..0.99, d in 2usize..12) {
        let spectrum = theory::ideal_frg_spectrum(n, mu, d);
        prop_assert!((spectrum.iter().sum::<f64>() - n as f64).abs() < 1e-10 * n as f64);
        prop_assert!(spectrum.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn nu_positive_for_psd(n in 1usize..6, seed in any::<u64>()) {
        let a = symmetric(n, seed);
        let h = matmul(&a, &a).unwrap().add(&Matrix::identity(n).scale(1e-3)).unwrap();
        let mut rng = Prng::new(seed ^ 1);
        let y: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
        let v = gram::nu(&h, &y, true, None).unwrap();
        prop_assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn net_bytes_round_trip(v in variant(), d in 2usize..5, w in 1usize..4, seed in any::<u64>()) {
        let (net, xs) = build(v, 2, w, d, seed, 2);
        let back = network::read_net(&network::write_net(&net).unwrap()).unwrap();
        for (s, x) in xs.iter().enumerate() {
            let ex = Example::indexed(s, x);
            prop_assert_eq!(net.output(ex).unwrap().to_bits(), back.output(ex).unwrap().to_bits());
        }
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..20)) {
        let mut t = Table::new(&["i", "value", "label"]);
        for (i, v) in values.iter().enumerate() {
            t.push(vec![i.into(), (*v).into(), Cell::Text(format!("r{i}"))]);
        }
        let text = t.to_csv().unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let parsed: Vec<f64> = reader.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
        prop_assert_eq!(parsed.len(), values.len());
        for (a, b) in parsed.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn conv_expectation_rotation_invariant(d_in in 3usize..6, kernel in 2usize..5, layers in 1usize..3, seed in any::<u64>()) {
        prop_assume!(kernel < d_in);
        let config = ConvConfig::new(d_in, kernel, layers)
            .with_gating(ConvGating::Random { mu: 0.5 });
        let mut rng = Prng::new(seed);
        let xs: Vec<f64> = (0..d_in).map(|_| rng.normal()).collect();
        let xt: Vec<f64> = (0..d_in).map(|_| rng.normal()).collect();
        let source = ConvGateSource::init(&config, 2, &mut rng);
        let gs = source.gates(&config, 0, &xs).unwrap();
        let gt = source.gates(&config, 1, &xt).unwrap();
        let budget = PathBudget::default();
        let base = convnet::invariance_expectation(&config, &gs, &gt, &xs, &xt, budget).unwrap();
        for i in 1..d_in {
            let r = convnet::invariance_expectation(
                &config,
                &convnet::rotate_gates(&gs, i),
                &convnet::rotate_gates(&gt, i),
                &convnet::rotate_input(&xs, i),
                &convnet::rotate_input(&xt, i),
                budget,
            ).unwrap();
            prop_assert!((r - base).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }
}

#[test]
fn settings_round_trip_through_cfg() {
    let mut s = Settings::new();
    for a in ["net.d=3", "w=40", "run.seeds=0..4", "data.kind=gaussians"] {
        s.set_assignment(a).unwrap();
    }
    let mut back = Settings::new();
    back.merge_text(&s.to_cfg()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn zero_step_training_keeps_residual() {
    let ds = gatelab::data::gen_experiment1(6, 0).unwrap();
    let (mut net, _) = build(GatingVariant::Dln, 1, 3, 3, 2, 0);
    let settings = gatelab::train::TrainSettings { steps: 5, ..Default::default() };
    let rec = gatelab::train::train(&mut net, &ds.xs, &ds.ys, &gatelab::train::Optimizer::sgd(0.0), &settings).unwrap();
    assert_eq!(rec.steps.len(), 6);
    assert!(rec.steps.iter().all(|r| r.residual_ratio == 1.0));
}
