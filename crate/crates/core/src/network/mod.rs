//! Deep gated networks: configuration, parameters, forward/backward passes,
//! gate transplanting and the binary weight file.

mod config;
mod forward;
mod io;
mod params;

use thiserror::Error;

use crate::linalg::{Matrix, Prng};

pub use config::{hard_gate, GatingVariant, NetConfig};
pub use forward::{Backprop, ForwardCache, GatingTrace, LayerGrads};
pub use io::{load_net, read_net, save_net, write_net, FORMAT_VERSION, MAGIC};
pub use params::{init_params, ParamSet, WeightIndex};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input is not one of the registered training inputs")]
    UnregisteredInput,
    #[error("input matches {0} registered inputs; pass its example index")]
    AmbiguousInput(usize),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("{0} gates carry no parameter dependence")]
    NoGateDerivative(GatingVariant),
    #[error("weight file format error: {0}")]
    Format(String),
    #[error("unsupported weight file version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("weight file truncated")]
    Truncated,
    #[error("weight file checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One network input, optionally tagged with its position in the training set.
///
/// Fixed random gates are drawn per example, so an index is needed whenever
/// several training inputs coincide.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub index: Option<usize>,
}

impl<'a> Example<'a> {
    pub fn new(x: &'a [f64]) -> Self {
        Self { x, index: None }
    }

    pub fn indexed(index: usize, x: &'a [f64]) -> Self {
        Self { x, index: Some(index) }
    }
}

impl<'a> From<&'a [f64]> for Example<'a> {
    fn from(x: &'a [f64]) -> Self {
        Example::new(x)
    }
}

impl<'a> From<&'a Vec<f64>> for Example<'a> {
    fn from(x: &'a Vec<f64>) -> Self {
        Example::new(x)
    }
}

/// Stored fixed random gates, one `(d-1) × w` block per registered input.
#[derive(Debug, Clone, PartialEq)]
pub struct FrgGates {
    inputs: Vec<Vec<f64>>,
    gates: Vec<Matrix>,
}

impl FrgGates {
    pub fn new(inputs: Vec<Vec<f64>>, gates: Vec<Matrix>) -> Self {
        Self { inputs, gates }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn gates(&self) -> &[Matrix] {
        &self.gates
    }

    fn lookup(&self, ex: Example<'_>) -> Result<&Matrix, NetworkError> {
        if let Some(i) = ex.index {
            return match self.inputs.get(i) {
                Some(x) if x.as_slice() == ex.x => Ok(&self.gates[i]),
                _ => Err(NetworkError::UnregisteredInput),
            };
        }
        let mut hits = self.inputs.iter().enumerate().filter(|(_, x)| x.as_slice() == ex.x);
        match (hits.next(), hits.count()) {
            (Some((i, _)), 0) => Ok(&self.gates[i]),
            (Some(_), more) => Err(NetworkError::AmbiguousInput(more + 1)),
            (None, _) => Err(NetworkError::UnregisteredInput),
        }
    }
}

/// Where the gates of a network come from, beyond its own strength weights.
#[derive(Debug, Clone, PartialEq)]
pub enum Gating {
    /// DLN (all ones) and the shared-parameter variants.
    Intrinsic,
    Random(FrgGates),
    Separate(ParamSet),
}

/// A gated network: config, strength parameters `Θ^w`, and its gate source.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetConfig,
    strength: ParamSet,
    gating: Gating,
}

impl Network {
    /// Fresh network with ±σ weights. FRG nets start with no registered
    /// inputs; see [`register_inputs`](Self::register_inputs).
    pub fn init(config: NetConfig, rng: &mut Prng) -> Result<Self, NetworkError> {
        config.validate()?;
        let strength = init_params(&config, rng);
        let gating = match config.variant {
            GatingVariant::Frg => Gating::Random(FrgGates::new(Vec::new(), Vec::new())),
            v if v.has_gating_params() => Gating::Separate(init_params(&config, rng)),
            _ => Gating::Intrinsic,
        };
        Ok(Self { config, strength, gating })
    }

    pub fn from_parts(
        config: NetConfig,
        strength: ParamSet,
        gating: Gating,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        ParamSet::from_layers(&config, strength.layers().to_vec())?;
        match (&gating, config.variant) {
            (Gating::Intrinsic, GatingVariant::Dln | GatingVariant::Relu | GatingVariant::SoftRelu) => {}
            (Gating::Random(frg), GatingVariant::Frg) => {
                for (x, g) in frg.inputs.iter().zip(&frg.gates) {
                    if x.len() != config.d_in || g.shape() != (config.depth - 1, config.width) {
                        return Err(NetworkError::Shape("fixed random gate block".into()));
                    }
                }
                if frg.inputs.len() != frg.gates.len() {
                    return Err(NetworkError::Shape("gate blocks vs inputs".into()));
                }
            }
            (Gating::Separate(p), GatingVariant::GaluFrozen | GatingVariant::SoftGalu) => {
                ParamSet::from_layers(&config, p.layers().to_vec())?;
            }
            _ => {
                return Err(NetworkError::InvalidConfig(format!(
                    "gate source does not match variant {}",
                    config.variant
                )))
            }
        }
        Ok(Self { config, strength, gating })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn strength(&self) -> &ParamSet {
        &self.strength
    }

    pub fn strength_mut(&mut self) -> &mut ParamSet {
        &mut self.strength
    }

    pub fn gating(&self) -> &Gating {
        &self.gating
    }

    /// The separate gating parameters `Θ^g`, if the variant has them.
    pub fn gating_params(&self) -> Option<&ParamSet> {
        match &self.gating {
            Gating::Separate(p) => Some(p),
            _ => None,
        }
    }

    pub fn gating_params_mut(&mut self) -> Option<&mut ParamSet> {
        match &mut self.gating {
            Gating::Separate(p) => Some(p),
            _ => None,
        }
    }

    /// Parameters whose pre-activations define the gates: `Θ^g` when
    /// separate, the strength weights for ReLU / soft-ReLU.
    pub fn gate_source_params(&self) -> Option<&ParamSet> {
        match (&self.gating, self.config.variant) {
            (Gating::Separate(p), _) => Some(p),
            (_, GatingVariant::Relu | GatingVariant::SoftRelu) => Some(&self.strength),
            _ => None,
        }
    }

    /// Draws Bernoulli(μ) gates for each input, replacing any earlier draw.
    pub fn register_inputs(&mut self, inputs: &[Vec<f64>], rng: &mut Prng) -> Result<(), NetworkError> {
        let (depth, width, mu) = (self.config.depth, self.config.width, self.config.mu);
        let Gating::Random(frg) = &mut self.gating else {
            return Err(NetworkError::InvalidConfig(format!(
                "{} nets have no random gates to register",
                self.config.variant
            )));
        };
        let mut gates = Vec::with_capacity(inputs.len());
        for x in inputs {
            if x.len() != self.config.d_in {
                return Err(NetworkError::Shape(format!(
                    "input has {} entries, expected {}",
                    x.len(),
                    self.config.d_in
                )));
            }
            gates.push(Matrix::from_fn(depth - 1, width, |_, _| {
                if rng.bernoulli(mu) {
                    1.0
                } else {
                    0.0
                }
            }));
        }
        *frg = FrgGates::new(inputs.to_vec(), gates);
        Ok(())
    }

    /// Number of entries of an NTF column.
    pub fn trainable_len(&self) -> usize {
        let d_net = self.config.d_net();
        let mut n = 0;
        if self.config.train_strength {
            n += d_net;
        }
        if self.config.train_gating && self.config.variant == GatingVariant::SoftGalu {
            n += d_net;
        }
        n
    }

    /// Trainable weights in NTF-column order (strength block, then gating).
    pub fn trainable_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        if self.config.train_strength {
            out.extend(self.strength.flatten());
        }
        if self.trains_gating_params() {
            out.extend(self.gating_params().expect("soft-galu has Θ^g").flatten());
        }
        out
    }

    /// `θ += scale · delta` over the trainable weights.
    pub fn add_to_trainable(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.trainable_len(), "update length");
        let mut rest = delta;
        if self.config.train_strength {
            let (head, tail) = rest.split_at(self.strength.len());
            self.strength.add_scaled_flat(head, scale);
            rest = tail;
        }
        if self.trains_gating_params() {
            self.gating_params_mut().expect("soft-galu has Θ^g").add_scaled_flat(rest, scale);
        }
    }

    pub(crate) fn trains_gating_params(&self) -> bool {
        self.config.train_gating && self.config.variant == GatingVariant::SoftGalu
    }

    pub fn is_finite(&self) -> bool {
        self.strength.is_finite() && self.gating_params().is_none_or(ParamSet::is_finite)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.config.d_in {
            return Err(NetworkError::Shape(format!(
                "input has {} entries, expected {}",
                x.len(),
                self.config.d_in
            )));
        }
        Ok(())
    }

    /// `(d-1) × w` gate values for one input.
    pub fn compute_gates<'a>(&self, ex: impl Into<Example<'a>>) -> Result<Matrix, NetworkError> {
        Ok(self.forward(ex)?.gates)
    }

    pub fn output<'a>(&self, ex: impl Into<Example<'a>>) -> Result<f64, NetworkError> {
        Ok(self.forward(ex)?.output)
    }

    /// Gradient of the output over all trainable weights, strength block first.
    pub fn ntf_column<'a>(&self, ex: impl Into<Example<'a>>) -> Result<Vec<f64>, NetworkError> {
        let cache = self.forward(ex)?;
        let bp = self.backward(&cache);
        let mut out = Vec::with_capacity(self.trainable_len());
        if self.config.train_strength {
            out.extend(bp.strength.flatten());
        }
        if self.trains_gating_params() {
            out.extend(bp.gating.expect("soft-galu backprop").flatten());
        }
        Ok(out)
    }
}

/// Builds a GaLU-style net whose frozen gating weights are copied from
/// `source`, with fresh strength weights drawn from `rng`.
///
/// Hard sources (ReLU, frozen GaLU) go into a frozen GaLU target; soft sources
/// need a soft-GaLU target with the same β and ε so gate values agree.
pub fn transplant_gates(
    source: &Network,
    target: NetConfig,
    rng: &mut Prng,
) -> Result<Network, NetworkError> {
    if !source.config.same_architecture(&target) {
        return Err(NetworkError::ArchitectureMismatch(format!(
            "source d_in={} w={} d={}, target d_in={} w={} d={}",
            source.config.d_in,
            source.config.width,
            source.config.depth,
            target.d_in,
            target.width,
            target.depth
        )));
    }
    let gate_params = source.gate_source_params().ok_or_else(|| {
        NetworkError::InvalidConfig(format!(
            "{} gates are not defined by weights",
            source.config.variant
        ))
    })?;
    let compatible = match (source.config.variant.is_soft(), target.variant) {
        (false, GatingVariant::GaluFrozen) => true,
        (true, GatingVariant::SoftGalu) => {
            source.config.beta == target.beta && source.config.epsilon == target.epsilon
        }
        _ => false,
    };
    if !compatible {
        return Err(NetworkError::InvalidConfig(format!(
            "cannot transplant {} gates into a {} net",
            source.config.variant, target.variant
        )));
    }
    target.validate()?;
    let strength = init_params(&target, rng);
    Network::from_parts(target, strength, Gating::Separate(gate_params.clone()))
}
