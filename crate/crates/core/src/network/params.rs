use crate::linalg::{Matrix, Prng};

use super::{NetConfig, NetworkError};

/// Per-layer weight matrices; layer `l` maps `z(l-1)` to `q(l) = Θ(l)ᵀ z(l-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<Matrix>,
}

/// Position of one weight: 0-based layer plus `(row, col)` in that layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WeightIndex {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

impl ParamSet {
    pub fn zeros(config: &NetConfig) -> Self {
        let layers = (0..config.depth)
            .map(|l| {
                let (r, c) = config.layer_shape(l);
                Matrix::zeros(r, c)
            })
            .collect();
        Self { layers }
    }

    /// Every entry is `value`.
    pub fn constant(config: &NetConfig, value: f64) -> Self {
        let mut p = Self::zeros(config);
        for layer in &mut p.layers {
            layer.as_mut_slice().fill(value);
        }
        p
    }

    pub fn from_layers(config: &NetConfig, layers: Vec<Matrix>) -> Result<Self, NetworkError> {
        if layers.len() != config.depth {
            return Err(NetworkError::Shape(format!(
                "expected {} layers, got {}",
                config.depth,
                layers.len()
            )));
        }
        for (l, m) in layers.iter().enumerate() {
            let want = config.layer_shape(l);
            if m.shape() != want {
                return Err(NetworkError::Shape(format!(
                    "layer {l}: expected {want:?}, got {:?}",
                    m.shape()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn from_flat(config: &NetConfig, flat: &[f64]) -> Result<Self, NetworkError> {
        if flat.len() != config.d_net() {
            return Err(NetworkError::Shape(format!(
                "expected {} weights, got {}",
                config.d_net(),
                flat.len()
            )));
        }
        let mut p = Self::zeros(config);
        let mut off = 0;
        for layer in &mut p.layers {
            let n = layer.as_slice().len();
            layer.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(p)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.layers[l]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, idx: WeightIndex) -> f64 {
        self.layers[idx.layer][(idx.row, idx.col)]
    }

    pub fn set(&mut self, idx: WeightIndex, value: f64) {
        let cols = self.layers[idx.layer].cols();
        self.layers[idx.layer].as_mut_slice()[idx.row * cols + idx.col] = value;
    }

    /// Layer-major, then row-major within each layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for layer in &self.layers {
            out.extend_from_slice(layer.as_slice());
        }
        out
    }

    /// Flat position of `idx` in [`flatten`](Self::flatten) order.
    pub fn flat_index(&self, idx: WeightIndex) -> usize {
        let before: usize = self.layers[..idx.layer]
            .iter()
            .map(|m| m.as_slice().len())
            .sum();
        before + idx.row * self.layers[idx.layer].cols() + idx.col
    }

    pub fn weight_index(&self, mut flat: usize) -> Option<WeightIndex> {
        for (layer, m) in self.layers.iter().enumerate() {
            let n = m.as_slice().len();
            if flat < n {
                return Some(WeightIndex {
                    layer,
                    row: flat / m.cols(),
                    col: flat % m.cols(),
                });
            }
            flat -= n;
        }
        None
    }

    /// `self += scale · other`, entrywise over flat storage.
    pub fn add_scaled_flat(&mut self, other: &[f64], scale: f64) {
        debug_assert_eq!(other.len(), self.len());
        let mut off = 0;
        for layer in &mut self.layers {
            let s = layer.as_mut_slice();
            let n = s.len();
            for (a, b) in s.iter_mut().zip(&other[off..off + n]) {
                *a += scale * b;
            }
            off += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }
}

/// Draws every weight i.i.d. from `{-σ, +σ}`.
pub fn init_params(config: &NetConfig, rng: &mut Prng) -> ParamSet {
    let mut p = ParamSet::zeros(config);
    for layer in &mut p.layers {
        for v in layer.as_mut_slice() {
            *v = rng.sym_bernoulli(config.sigma);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::GatingVariant;

    #[test]
    fn shapes_and_support() {
        let c = NetConfig::new(GatingVariant::Relu, 1, 3, 2).with_sigma(0.2);
        let p = init_params(&c, &mut Prng::new(1));
        assert_eq!(p.layer(0).shape(), (1, 3));
        assert_eq!(p.layer(1).shape(), (3, 1));
        assert!(p.flatten().iter().all(|&v| v == 0.2 || v == -0.2));
    }

    #[test]
    fn empirical_mean_is_centered() {
        let c = NetConfig::new(GatingVariant::Relu, 100, 100, 2).with_sigma(1.0);
        let p = init_params(&c, &mut Prng::new(9));
        let flat = p.flatten();
        assert!(flat.len() >= 10_000);
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        assert!(mean.abs() < 4.0 / (flat.len() as f64).sqrt());
    }

    #[test]
    fn flat_indexing_round_trips() {
        let c = NetConfig::new(GatingVariant::Dln, 2, 3, 4);
        let p = init_params(&c, &mut Prng::new(3));
        let flat = p.flatten();
        for (m, &v) in flat.iter().enumerate() {
            let idx = p.weight_index(m).unwrap();
            assert_eq!(p.flat_index(idx), m);
            assert_eq!(p.get(idx), v);
        }
        assert!(p.weight_index(flat.len()).is_none());
        assert_eq!(ParamSet::from_flat(&c, &flat).unwrap(), p);
    }
}
