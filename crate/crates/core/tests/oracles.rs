//! Layerwise computations against oracles written out here from first
//! principles: explicit path recursion, closed forms, finite differences.

use gatelab::gram;
use gatelab::linalg::{Matrix, Prng};
use gatelab::network::{Example, GatingVariant, NetConfig, Network, ParamSet};
use gatelab::theory;

/// `Σ_p x(p₀) · Π gates · Π weights`, walking every path depth-first.
fn path_sum(net: &Network, x: &[f64], gates: &Matrix) -> f64 {
    fn walk(net: &Network, gates: &Matrix, layer: usize, node: usize, acc: f64) -> f64 {
        let params = net.strength();
        let depth = net.config().depth;
        let m = params.layer(layer);
        if layer == depth - 1 {
            return acc * m[(node, 0)];
        }
        (0..m.cols())
            .map(|j| walk(net, gates, layer + 1, j, acc * m[(node, j)] * gates[(layer, j)]))
            .sum()
    }
    x.iter().enumerate().map(|(i, &xi)| walk(net, gates, 0, i, xi)).sum()
}

fn random_net(variant: GatingVariant, d_in: usize, w: usize, d: usize, seed: u64, xs: &[Vec<f64>]) -> Network {
    let mut rng = Prng::new(seed);
    let mut net = Network::init(NetConfig::new(variant, d_in, w, d), &mut rng).unwrap();
    if variant == GatingVariant::Frg {
        net.register_inputs(xs, &mut rng).unwrap();
    }
    net
}

fn inputs(n: usize, d_in: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Prng::new(seed ^ 0xa5a5);
    (0..n).map(|_| (0..d_in).map(|_| rng.normal()).collect()).collect()
}

#[test]
fn forward_matches_recursive_path_sum() {
    for v in GatingVariant::ALL {
        for (d, w, d_in) in [(2, 3, 2), (3, 2, 3), (4, 2, 1)] {
            let xs = inputs(3, d_in, 1);
            let net = random_net(v, d_in, w, d, 9, &xs);
            for (s, x) in xs.iter().enumerate() {
                let ex = Example::indexed(s, x);
                let gates = net.compute_gates(ex).unwrap();
                let y = net.output(ex).unwrap();
                let oracle = path_sum(&net, x, &gates);
                assert!((y - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()), "{v} d={d}: {y} vs {oracle}");
            }
        }
    }
}

#[test]
fn ntk_matches_finite_difference_gram() {
    // K(s,t) = Σ_m ∂y_s/∂θ_m · ∂y_t/∂θ_m with the gradient by central
    // differences. Hard gates are piecewise constant in θ, so small steps
    // stay on one piece.
    for v in GatingVariant::ALL {
        let xs = inputs(3, 2, 4);
        let net = random_net(v, 2, 3, 3, 21, &xs);
        let theta = net.trainable_flat();
        let mut grads = vec![vec![0.0; theta.len()]; xs.len()];
        let mut unit = vec![0.0; theta.len()];
        for m in 0..theta.len() {
            let h = 1e-6;
            unit[m] = 1.0;
            let (mut plus, mut minus) = (net.clone(), net.clone());
            plus.add_to_trainable(&unit, h);
            minus.add_to_trainable(&unit, -h);
            unit[m] = 0.0;
            for (s, x) in xs.iter().enumerate() {
                let ex = Example::indexed(s, x);
                grads[s][m] = (plus.output(ex).unwrap() - minus.output(ex).unwrap()) / (2.0 * h);
            }
        }
        let k = gram::kernel(&net, &xs).unwrap().total();
        for s in 0..xs.len() {
            for t in 0..xs.len() {
                let fd: f64 = grads[s].iter().zip(&grads[t]).map(|(a, b)| a * b).sum();
                assert!((k[(s, t)] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{v} ({s},{t}): {} vs {fd}", k[(s, t)]);
            }
        }
    }
}

#[test]
fn dln_constant_weights_closed_form() {
    // All weights c, scalar input x: y = x c^d w^(d-1). The gradient of a
    // weight is x c^(d-1) times the number of paths through it: w^(d-2) for
    // the w weights of the first and last layers, w^(d-3) for the w² weights
    // of each middle layer. So K(x, x) = x² c^(2(d-1)) (2 w^(2d-3) + (d-2) w^(2d-4)).
    for d in 2..=5 {
        for w in 1..=4usize {
            let c = 0.7;
            let config = NetConfig::new(GatingVariant::Dln, 1, w, d);
            let net = Network::from_parts(config.clone(), ParamSet::constant(&config, c), gatelab::network::Gating::Intrinsic)
                .unwrap();
            let x = 1.3;
            let y = net.output(&[x][..]).unwrap();
            assert!((y - x * c.powi(d as i32) * (w as f64).powi(d as i32 - 1)).abs() < 1e-12);
            let k = gram::kernel(&net, &[vec![x]]).unwrap().total()[(0, 0)];
            let wf = w as f64;
            let di = d as i32;
            let closed = x * x * c.powi(2 * (di - 1)) * (2.0 * wf.powi(2 * di - 3) + (di - 2) as f64 * wf.powi(2 * di - 4));
            assert!((k - closed).abs() <= 1e-12 * closed, "d={d} w={w}: {k} vs {closed}");
        }
    }
}

#[test]
fn lambda_counts_coactive_paths() {
    // For 0/1 gates λ(s,t) counts paths open for both inputs: the product
    // over layers of the number of nodes open in both.
    let xs = inputs(4, 2, 8);
    for v in [GatingVariant::Frg, GatingVariant::Relu, GatingVariant::GaluFrozen] {
        let net = random_net(v, 2, 4, 4, 5, &xs);
        let gates = gram::gate_tensors(&net, &xs).unwrap();
        let lambda = gram::lambda_matrix(&gates).matrix;
        for s in 0..xs.len() {
            for t in 0..xs.len() {
                let count: f64 = (0..3)
                    .map(|l| (0..4).filter(|&j| gates[s][(l, j)] == 1.0 && gates[t][(l, j)] == 1.0).count() as f64)
                    .product();
                assert_eq!(lambda[(s, t)], count, "{v} ({s},{t})");
            }
        }
    }
}

#[test]
fn frg_lambda_bar_by_exact_enumeration() {
    // E[λ(s,s)] = Π_l E[#open] = (μw)^(d-1); for s ≠ t both gates open with
    // probability μ², giving (μ²w)^(d-1).
    for (mu, w, d) in [(0.5, 3usize, 2usize), (0.3, 5, 4), (0.8, 2, 6)] {
        let (own, cross) = theory::frg_lambda_bar(mu, w, d);
        // Binomial sum for one layer, then the product over layers.
        let layer = |p: f64| -> f64 {
            (0..=w)
                .map(|k| {
                    let choose = (0..k).fold(1.0, |a, i| a * (w - i) as f64 / (i + 1) as f64);
                    k as f64 * choose * p.powi(k as i32) * (1.0 - p).powi((w - k) as i32)
                })
                .sum()
        };
        assert!((own - layer(mu).powi(d as i32 - 1)).abs() < 1e-12);
        assert!((cross - layer(mu * mu).powi(d as i32 - 1)).abs() < 1e-12);
    }
}

#[test]
fn ideal_frg_gram_entries() {
    let k = theory::ideal_frg_gram(4, 0.5, 3);
    for s in 0..4 {
        for t in 0..4 {
            let want = if s == t { 1.0 } else { 0.25 };
            assert_eq!(k[(s, t)], want);
        }
    }
}

#[test]
fn soft_gate_derivative_by_differences() {
    let c = NetConfig::new(GatingVariant::SoftGalu, 1, 1, 2).with_soft(3.0, 0.2);
    for q in [-2.0, -0.3, 0.0, 0.4, 1.7] {
        let h = 1e-6;
        let fd = (c.soft_gate(q + h) - c.soft_gate(q - h)) / (2.0 * h);
        assert!((fd - c.soft_gate_slope(q)).abs() < 1e-8);
        let g = c.soft_gate(q);
        assert!(g > 0.0 && g < 1.2);
    }
    assert!((c.soft_gate(0.0) - 0.6).abs() < 1e-15);
}

#[test]
fn idx_pair_parses_hand_built_bytes() {
    let (n, rows, cols) = (5u32, 2u32, 2u32);
    let mut images = vec![0, 0, 8, 3];
    for v in [n, rows, cols] {
        images.extend(v.to_be_bytes());
    }
    let labels_raw = [3u8, 7, 3, 1, 7];
    for i in 0..n as u8 {
        images.extend([i * 50, 255, 0, i]);
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend(n.to_be_bytes());
    labels.extend(labels_raw);
    let ds = gatelab::data::idx_binary_from_bytes(&images, &labels, 3, 7, 10).unwrap();
    assert_eq!(ds.ys, vec![-1.0, 1.0, -1.0, 1.0]);
    assert_eq!(ds.xs[1], vec![50.0 / 255.0, 1.0, 0.0, 1.0 / 255.0]);
    let limited = gatelab::data::idx_binary_from_bytes(&images, &labels, 3, 7, 1).unwrap();
    assert_eq!(limited.n(), 2);
    assert!(gatelab::data::idx_binary_from_bytes(&images[..20], &labels, 3, 7, 10).is_err());
}

#[test]
fn linear_dynamics_prediction_matches_hand_iteration() {
    let k = Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
    let alpha = 0.1;
    let e0 = [1.0, -2.0];
    let pred = gatelab::train::predict_linear_dynamics(&k, alpha, &e0, 3);
    let mut e = e0.to_vec();
    let norm0: f64 = e.iter().map(|v| v * v).sum();
    for (t, p) in pred.iter().enumerate() {
        let r: f64 = e.iter().map(|v| v * v).sum::<f64>() / norm0;
        assert!((p - r).abs() < 1e-14, "step {t}");
        let ke = k.mul_vec(&e).unwrap();
        e = e.iter().zip(&ke).map(|(a, b)| a - alpha * b).collect();
    }
}
