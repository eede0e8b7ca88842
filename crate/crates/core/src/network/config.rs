use std::fmt;
use std::str::FromStr;

use super::NetworkError;

/// The gating families studied: how the per-node gate values are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GatingVariant {
    /// Deep linear network: every gate is 1.
    Dln,
    /// Fixed random gating: gates drawn once per (example, layer, node).
    Frg,
    /// Gates are the 0/1 ReLU pattern of a separate, frozen gating network.
    GaluFrozen,
    /// Standard ReLU network: gates from the network's own pre-activations.
    Relu,
    /// Soft gates computed from the network's own pre-activations.
    SoftRelu,
    /// Soft gates from a separate gating network with its own parameters.
    SoftGalu,
}

impl GatingVariant {
    pub const ALL: [GatingVariant; 6] = [
        GatingVariant::Dln,
        GatingVariant::Frg,
        GatingVariant::GaluFrozen,
        GatingVariant::Relu,
        GatingVariant::SoftRelu,
        GatingVariant::SoftGalu,
    ];

    pub fn is_soft(self) -> bool {
        matches!(self, GatingVariant::SoftRelu | GatingVariant::SoftGalu)
    }

    /// Gate values do not move with any trainable parameter.
    pub fn has_constant_gates(self) -> bool {
        !self.is_soft()
    }

    /// Carries a second parameter set that only produces gates.
    pub fn has_gating_params(self) -> bool {
        matches!(self, GatingVariant::GaluFrozen | GatingVariant::SoftGalu)
    }

    /// The gate tensor never changes during training.
    pub fn gates_frozen(self) -> bool {
        matches!(
            self,
            GatingVariant::Dln | GatingVariant::Frg | GatingVariant::GaluFrozen
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            GatingVariant::Dln => "dln",
            GatingVariant::Frg => "frg",
            GatingVariant::GaluFrozen => "galu",
            GatingVariant::Relu => "relu",
            GatingVariant::SoftRelu => "soft-relu",
            GatingVariant::SoftGalu => "soft-galu",
        }
    }

    fn code(self) -> u8 {
        match self {
            GatingVariant::Dln => 0,
            GatingVariant::Frg => 1,
            GatingVariant::GaluFrozen => 2,
            GatingVariant::Relu => 3,
            GatingVariant::SoftRelu => 4,
            GatingVariant::SoftGalu => 5,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    pub(crate) fn to_code(self) -> u8 {
        self.code()
    }
}

impl fmt::Display for GatingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GatingVariant {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dln" | "linear" => Ok(GatingVariant::Dln),
            "frg" => Ok(GatingVariant::Frg),
            "galu" | "galu-frozen" => Ok(GatingVariant::GaluFrozen),
            "relu" => Ok(GatingVariant::Relu),
            "soft-relu" | "softrelu" => Ok(GatingVariant::SoftRelu),
            "soft-galu" | "softgalu" => Ok(GatingVariant::SoftGalu),
            other => Err(NetworkError::InvalidConfig(format!(
                "unknown gating variant `{other}`"
            ))),
        }
    }
}

/// Full description of a gated network instance.
///
/// `depth` counts weighted layers: `depth - 1` gated hidden layers of
/// `width` nodes followed by a scalar output layer. There are no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub d_in: usize,
    pub width: usize,
    pub depth: usize,
    pub variant: GatingVariant,
    /// Magnitude of the symmetric ±σ initialization.
    pub sigma: f64,
    /// Gate sharpness for soft variants.
    pub beta: f64,
    /// Soft gates saturate at `1 + epsilon`.
    pub epsilon: f64,
    /// Bernoulli rate of fixed random gates.
    pub mu: f64,
    pub train_strength: bool,
    pub train_gating: bool,
}

impl NetConfig {
    /// Config with the default σ for the variant, β=4, ε=0, μ=½.
    pub fn new(variant: GatingVariant, d_in: usize, width: usize, depth: usize) -> Self {
        let mut config = Self {
            d_in,
            width,
            depth,
            variant,
            sigma: 0.0,
            beta: 4.0,
            epsilon: 0.0,
            mu: 0.5,
            train_strength: true,
            train_gating: variant == GatingVariant::SoftGalu,
        };
        config.sigma = config.default_sigma();
        config
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        if self.variant == GatingVariant::Frg {
            self.sigma = self.default_sigma();
        }
        self
    }

    pub fn with_soft(mut self, beta: f64, epsilon: f64) -> Self {
        self.beta = beta;
        self.epsilon = epsilon;
        self
    }

    /// `√(1/(μw))` for FRG, `√(1/w)` for DLN, `√(2/w)` otherwise (μ≈½).
    pub fn default_sigma(&self) -> f64 {
        let w = self.width as f64;
        match self.variant {
            GatingVariant::Frg => (1.0 / (self.mu * w)).sqrt(),
            GatingVariant::Dln => (1.0 / w).sqrt(),
            _ => (2.0 / w).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |msg: String| Err(NetworkError::InvalidConfig(msg));
        if self.depth < 2 {
            return bad(format!("depth must be >= 2, got {}", self.depth));
        }
        if self.width < 1 || self.d_in < 1 {
            return bad("width and d_in must be >= 1".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.variant.is_soft() {
            if !(self.beta > 0.0 && self.beta.is_finite()) {
                return bad(format!("beta must be positive and finite, got {}", self.beta));
            }
            if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
                return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
            }
        }
        if self.variant == GatingVariant::Frg && !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu must lie in (0, 1), got {}", self.mu));
        }
        if self.variant.gates_frozen() && self.train_gating {
            return bad(format!("{} gates cannot be trained", self.variant));
        }
        if self.variant == GatingVariant::SoftRelu && self.train_gating {
            return bad("soft-relu shares one parameter set; use train_strength".into());
        }
        if self.variant == GatingVariant::Relu && self.train_gating {
            return bad("relu shares one parameter set; use train_strength".into());
        }
        Ok(())
    }

    /// Number of weights in one parameter set.
    pub fn d_net(&self) -> usize {
        self.d_in * self.width + (self.depth - 2) * self.width * self.width + self.width
    }

    /// `(rows, cols)` of weight layer `l` (0-based; layer 0 reads the input).
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let rows = if l == 0 { self.d_in } else { self.width };
        let cols = if l + 1 == self.depth { 1 } else { self.width };
        (rows, cols)
    }

    pub fn hidden_layers(&self) -> usize {
        self.depth - 1
    }

    pub fn same_architecture(&self, other: &NetConfig) -> bool {
        self.d_in == other.d_in && self.width == other.width && self.depth == other.depth
    }

    /// Soft gate `(1+ε)/(1+exp(-βq))`.
    #[inline]
    pub fn soft_gate(&self, q: f64) -> f64 {
        (1.0 + self.epsilon) / (1.0 + (-self.beta * q).exp())
    }

    /// `dG/dq = β·G·(1 - G/(1+ε))`.
    #[inline]
    pub fn soft_gate_slope(&self, q: f64) -> f64 {
        let g = self.soft_gate(q);
        self.beta * g * (1.0 - g / (1.0 + self.epsilon))
    }
}

/// Hard gate; `q = 0` is off.
#[inline]
pub fn hard_gate(q: f64) -> f64 {
    if q > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_gate_values() {
        let c = NetConfig::new(GatingVariant::SoftRelu, 1, 1, 2).with_soft(4.0, 0.0);
        assert_eq!(c.soft_gate(0.0), 0.5);
        let c = c.with_soft(4.0, 0.1);
        assert!((c.soft_gate(1e3) - 1.1).abs() < 1e-12);
        assert!(c.soft_gate(-1e3) < 1e-12);
        assert_eq!(hard_gate(-1.0), 0.0);
        assert_eq!(hard_gate(0.0), 0.0);
    }

    #[test]
    fn slope_matches_finite_difference() {
        let c = NetConfig::new(GatingVariant::SoftGalu, 1, 1, 2).with_soft(3.0, 0.2);
        for q in [-1.0, -0.1, 0.0, 0.4, 2.0] {
            let h = 1e-6;
            let fd = (c.soft_gate(q + h) - c.soft_gate(q - h)) / (2.0 * h);
            assert!((fd - c.soft_gate_slope(q)).abs() < 1e-8);
        }
    }

    #[test]
    fn default_sigmas() {
        let frg = NetConfig::new(GatingVariant::Frg, 1, 2, 3);
        assert!((frg.sigma - 1.0).abs() < 1e-15);
        let dln = NetConfig::new(GatingVariant::Dln, 1, 100, 3);
        assert!((dln.sigma - 0.1).abs() < 1e-15);
        let relu = NetConfig::new(GatingVariant::Relu, 1, 500, 3);
        assert!((relu.sigma - (2.0f64 / 500.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(NetConfig::new(GatingVariant::Relu, 1, 1, 1).validate().is_err());
        let mut c = NetConfig::new(GatingVariant::GaluFrozen, 1, 2, 3);
        c.train_gating = true;
        assert!(c.validate().is_err());
        assert!(NetConfig::new(GatingVariant::Frg, 1, 2, 3)
            .with_mu(1.0)
            .validate()
            .is_err());
        assert!(NetConfig::new(GatingVariant::SoftGalu, 2, 3, 4).validate().is_ok());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in GatingVariant::ALL {
            assert_eq!(v.name().parse::<GatingVariant>().unwrap(), v);
            assert_eq!(GatingVariant::from_code(v.to_code()), Some(v));
        }
    }

    #[test]
    fn layer_shapes() {
        let c = NetConfig::new(GatingVariant::Dln, 1, 3, 2);
        assert_eq!(c.layer_shape(0), (1, 3));
        assert_eq!(c.layer_shape(1), (3, 1));
        let c = NetConfig::new(GatingVariant::Dln, 2, 3, 4);
        assert_eq!(c.d_net(), 6 + 18 + 3);
    }
}
