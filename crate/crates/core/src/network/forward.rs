use crate::linalg::Matrix;

use super::config::hard_gate;
use super::{Example, Gating, GatingVariant, NetConfig, Network, NetworkError, ParamSet};

/// Values retained by a forward pass.
///
/// `q[k]` is the output of weight layer `k` (hidden layer `k+1`), `z[0]` is the
/// input and `z[k+1] = q[k] ⊙ gates.row(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub q: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub gates: Matrix,
    pub gating: Option<GatingTrace>,
    pub output: f64,
}

/// Pre-activations and outputs of a separate gating network.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingTrace {
    pub q: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

/// Output gradient of one parameter set in factored form:
/// `∂ŷ/∂Θ(k)[i,j] = inputs[k][i] · deltas[k][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub inputs: Vec<Vec<f64>>,
    pub deltas: Vec<Vec<f64>>,
}

impl LayerGrads {
    pub fn get(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.inputs[layer][row] * self.deltas[layer][col]
    }

    pub fn layer_matrix(&self, layer: usize) -> Matrix {
        let (a, b) = (&self.inputs[layer], &self.deltas[layer]);
        Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    /// Same order as [`ParamSet::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let n: usize = self.inputs.iter().zip(&self.deltas).map(|(a, b)| a.len() * b.len()).sum();
        let mut out = Vec::with_capacity(n);
        for (a, b) in self.inputs.iter().zip(&self.deltas) {
            for &ai in a {
                out.extend(b.iter().map(|&bj| ai * bj));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backprop {
    pub strength: LayerGrads,
    /// Gradient through the soft gates into `Θ^g`; soft-GaLU only.
    pub gating: Option<LayerGrads>,
    /// `∂ŷ/∂G(k+1)` per hidden layer, holding the gates' own inputs fixed.
    pub gate_grads: Vec<Vec<f64>>,
}

/// `Θᵀ z` for a `rows × cols` layer.
pub(crate) fn layer_apply(theta: &Matrix, z: &[f64]) -> Vec<f64> {
    let cols = theta.cols();
    let mut out = vec![0.0; cols];
    for (i, &zi) in z.iter().enumerate() {
        if zi == 0.0 {
            continue;
        }
        for (o, &t) in out.iter_mut().zip(theta.row(i)) {
            *o += t * zi;
        }
    }
    out
}

/// `Θ δ`: pulls a gradient on the layer output back to its input.
pub(crate) fn layer_pullback(theta: &Matrix, delta: &[f64]) -> Vec<f64> {
    (0..theta.rows())
        .map(|i| theta.row(i).iter().zip(delta).map(|(t, d)| t * d).sum())
        .collect()
}

fn gate_value(config: &NetConfig, q: f64) -> f64 {
    if config.variant.is_soft() {
        config.soft_gate(q)
    } else {
        hard_gate(q)
    }
}

/// Runs a gating network to depth `d-1`, returning its trace and the gates.
fn run_gating_net(config: &NetConfig, params: &ParamSet, x: &[f64]) -> (GatingTrace, Matrix) {
    let hidden = config.depth - 1;
    let mut gates = Matrix::zeros(hidden, config.width);
    let mut qs = Vec::with_capacity(hidden);
    let mut zs = Vec::with_capacity(hidden + 1);
    zs.push(x.to_vec());
    for k in 0..hidden {
        let q = layer_apply(params.layer(k), &zs[k]);
        let g: Vec<f64> = q.iter().map(|&v| gate_value(config, v)).collect();
        zs.push(q.iter().zip(&g).map(|(a, b)| a * b).collect());
        gates.row_mut(k).copy_from_slice(&g);
        qs.push(q);
    }
    (GatingTrace { q: qs, z: zs }, gates)
}

impl Network {
    pub fn forward<'a>(&self, ex: impl Into<Example<'a>>) -> Result<ForwardCache, NetworkError> {
        let ex = ex.into();
        self.check_input(ex.x)?;
        let config = &self.config;
        let hidden = config.depth - 1;
        let (fixed_gates, gating) = match &self.gating {
            Gating::Random(frg) => (Some(frg.lookup(ex)?.clone()), None),
            Gating::Separate(p) => {
                let (trace, gates) = run_gating_net(config, p, ex.x);
                (Some(gates), Some(trace))
            }
            Gating::Intrinsic if config.variant == GatingVariant::Dln => {
                (Some(Matrix::filled(hidden, config.width, 1.0)), None)
            }
            Gating::Intrinsic => (None, None),
        };
        let mut gates = fixed_gates.unwrap_or_else(|| Matrix::zeros(hidden, config.width));
        let mut qs = Vec::with_capacity(hidden);
        let mut zs = Vec::with_capacity(hidden + 1);
        zs.push(ex.x.to_vec());
        for k in 0..hidden {
            let q = layer_apply(self.strength.layer(k), &zs[k]);
            if matches!(config.variant, GatingVariant::Relu | GatingVariant::SoftRelu) {
                for (g, &v) in gates.row_mut(k).iter_mut().zip(&q) {
                    *g = gate_value(config, v);
                }
            }
            zs.push(q.iter().zip(gates.row(k)).map(|(a, b)| a * b).collect());
            qs.push(q);
        }
        let output = layer_apply(self.strength.layer(hidden), &zs[hidden])[0];
        Ok(ForwardCache { q: qs, z: zs, gates, gating, output })
    }

    /// Reverse-mode gradient of the output for a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache) -> Backprop {
        let config = &self.config;
        let hidden = config.depth - 1;
        let shared_soft = config.variant == GatingVariant::SoftRelu;
        let mut deltas = vec![Vec::new(); config.depth];
        let mut gate_grads = vec![Vec::new(); hidden];
        deltas[hidden] = vec![1.0];
        // ∂ŷ/∂z(d-1) is the output layer's single column.
        let mut g: Vec<f64> = self.strength.layer(hidden).column(0);
        for k in (0..hidden).rev() {
            let q = &cache.q[k];
            let gk = cache.gates.row(k);
            gate_grads[k] = g.iter().zip(q).map(|(a, b)| a * b).collect();
            let dq: Vec<f64> = (0..q.len())
                .map(|j| {
                    let mut local = gk[j];
                    if shared_soft {
                        local += q[j] * config.soft_gate_slope(q[j]);
                    }
                    g[j] * local
                })
                .collect();
            g = layer_pullback(self.strength.layer(k), &dq);
            deltas[k] = dq;
        }
        let strength = LayerGrads { inputs: cache.z.clone(), deltas };

        let gating = match (&self.gating, &cache.gating) {
            (Gating::Separate(p), Some(trace)) if config.variant == GatingVariant::SoftGalu => {
                let mut deltas = vec![Vec::new(); config.depth];
                deltas[hidden] = vec![0.0];
                let mut h = vec![0.0; config.width];
                for k in (0..hidden).rev() {
                    let q = &trace.q[k];
                    let dq: Vec<f64> = (0..q.len())
                        .map(|j| {
                            let chi = config.soft_gate(q[j]);
                            let slope = config.soft_gate_slope(q[j]);
                            gate_grads[k][j] * slope + h[j] * (chi + q[j] * slope)
                        })
                        .collect();
                    h = layer_pullback(p.layer(k), &dq);
                    deltas[k] = dq;
                }
                Some(LayerGrads { inputs: trace.z.clone(), deltas })
            }
            _ => None,
        };
        Backprop { strength, gating, gate_grads }
    }

    /// Jacobian of every gate with respect to the parameters that define it
    /// (`Θ^g` for soft-GaLU, the shared weights for soft-ReLU).
    ///
    /// Row `k·w + j` is gate `(k+1, j)`; columns follow [`ParamSet::flatten`].
    pub fn gate_jacobian<'a>(&self, ex: impl Into<Example<'a>>) -> Result<Matrix, NetworkError> {
        let config = &self.config;
        if !config.variant.is_soft() {
            return Err(NetworkError::NoGateDerivative(config.variant));
        }
        let cache = self.forward(ex)?;
        let params = self.gate_source_params().expect("soft variants define gates by weights");
        let (qs, zs) = match &cache.gating {
            Some(t) => (&t.q, &t.z),
            None => (&cache.q, &cache.z),
        };
        let hidden = config.depth - 1;
        let w = config.width;
        let offsets: Vec<usize> = (0..config.depth)
            .scan(0, |acc, l| {
                let start = *acc;
                let (r, c) = config.layer_shape(l);
                *acc += r * c;
                Some(start)
            })
            .collect();
        let mut jac = Matrix::zeros(hidden * w, config.d_net());
        for k in 0..hidden {
            for j in 0..w {
                let row = jac.row_mut(k * w + j);
                let slope = config.soft_gate_slope(qs[k][j]);
                let cols = config.layer_shape(k).1;
                for (i, &zi) in zs[k].iter().enumerate() {
                    row[offsets[k] + i * cols + j] = zi * slope;
                }
                let mut h: Vec<f64> = params.layer(k).column(j).iter().map(|t| t * slope).collect();
                for kk in (0..k).rev() {
                    let q = &qs[kk];
                    let dq: Vec<f64> = (0..w)
                        .map(|jj| h[jj] * (config.soft_gate(q[jj]) + q[jj] * config.soft_gate_slope(q[jj])))
                        .collect();
                    let cols = config.layer_shape(kk).1;
                    for (i, &zi) in zs[kk].iter().enumerate() {
                        for (jj, &d) in dq.iter().enumerate() {
                            row[offsets[kk] + i * cols + jj] = zi * d;
                        }
                    }
                    h = layer_pullback(params.layer(kk), &dq);
                }
            }
        }
        Ok(jac)
    }
}
