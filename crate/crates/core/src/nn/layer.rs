use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Activation, Tensor};
use crate::{seed, Error, Result};

/// One layer of a feed-forward chain over flat per-sample vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Each group of `group_size` adjacent inputs (starting every `stride`
    /// positions) maps to `channels` outputs with its own, unshared weights.
    LocallyConnected {
        input_width: usize,
        group_size: usize,
        stride: usize,
        channels: usize,
        activation: Activation,
        l1: f64,
        /// Keep a trailing partial group instead of dropping it.
        #[serde(default)]
        pad_last: bool,
    },
    Dense {
        input_width: usize,
        units: usize,
        activation: Activation,
        l1: f64,
    },
    Flatten {
        width: usize,
    },
    /// Appends the per-sample covariates to the activation vector (linear).
    CovariateMerge {
        input_width: usize,
        covariates: usize,
    },
    /// Single decision unit.
    Output {
        input_width: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn input_width(&self) -> usize {
        match *self {
            LayerSpec::LocallyConnected { input_width, .. }
            | LayerSpec::Dense { input_width, .. }
            | LayerSpec::CovariateMerge { input_width, .. }
            | LayerSpec::Output { input_width, .. } => input_width,
            LayerSpec::Flatten { width } => width,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            LayerSpec::LocallyConnected { channels, .. } => self.groups().len() * channels,
            LayerSpec::Dense { units, .. } => units,
            LayerSpec::Flatten { width } => width,
            LayerSpec::CovariateMerge {
                input_width,
                covariates,
            } => input_width + covariates,
            LayerSpec::Output { .. } => 1,
        }
    }

    /// `(start, len)` of every input group of a locally connected layer.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        let LayerSpec::LocallyConnected {
            input_width,
            group_size,
            stride,
            pad_last,
            ..
        } = *self
        else {
            return Vec::new();
        };
        if group_size == 0 || stride == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start + group_size <= input_width {
            out.push((start, group_size));
            start += stride;
        }
        if pad_last && start < input_width {
            out.push((start, input_width - start));
        }
        out
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::LocallyConnected { activation, .. }
            | LayerSpec::Dense { activation, .. }
            | LayerSpec::Output { activation, .. } => activation,
            LayerSpec::Flatten { .. } | LayerSpec::CovariateMerge { .. } => Activation::Linear,
        }
    }

    pub fn l1(&self) -> f64 {
        match *self {
            LayerSpec::LocallyConnected { l1, .. } | LayerSpec::Dense { l1, .. } => l1,
            _ => 0.0,
        }
    }

    pub fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::LocallyConnected { channels, .. } => {
                self.groups().iter().map(|&(_, len)| len * channels).sum()
            }
            LayerSpec::Dense {
                input_width, units, ..
            } => input_width * units,
            LayerSpec::Output { input_width, .. } => input_width,
            _ => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerSpec::LocallyConnected { channels, .. } => self.groups().len() * channels,
            LayerSpec::Dense { units, .. } => units,
            LayerSpec::Output { .. } => 1,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// Neurons passing through an activation function.
    pub fn activation_count(&self) -> usize {
        match self {
            LayerSpec::LocallyConnected { .. } | LayerSpec::Dense { .. } | LayerSpec::Output { .. } => {
                self.output_width()
            }
            _ => 0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::LocallyConnected { .. } => "locally-connected",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Flatten { .. } => "flatten",
            LayerSpec::CovariateMerge { .. } => "covariate-merge",
            LayerSpec::Output { .. } => "output",
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerSpec::LocallyConnected { .. } => vec![self.weight_count()],
            LayerSpec::Dense {
                input_width, units, ..
            } => vec![units, input_width],
            LayerSpec::Output { input_width, .. } => vec![1, input_width],
            _ => vec![0],
        }
    }

    fn bias_shape(&self) -> Vec<usize> {
        match *self {
            LayerSpec::LocallyConnected { channels, .. } => vec![self.groups().len(), channels],
            _ => vec![self.bias_count()],
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::LocallyConnected {
                group_size,
                stride,
                channels,
                l1,
                ..
            } => {
                if group_size == 0 || stride == 0 || channels == 0 {
                    return Err(Error::InvalidConfig(
                        "locally connected layer needs group size, stride and channels >= 1".into(),
                    ));
                }
                if self.groups().is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "locally connected layer over {} inputs with group size {group_size} has no groups",
                        self.input_width()
                    )));
                }
                check_l1(l1)
            }
            LayerSpec::Dense { units, l1, .. } => {
                if units == 0 {
                    return Err(Error::InvalidConfig("dense layer needs units >= 1".into()));
                }
                check_l1(l1)
            }
            _ => Ok(()),
        }
    }
}

fn check_l1(l1: f64) -> Result<()> {
    if l1.is_finite() && l1 >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("l1 coefficient {l1} must be >= 0")))
    }
}

/// A validated layer chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub covariates: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_width: usize, covariates: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            input_width,
            covariates,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        let mut width = self.input_width;
        let mut merged = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.input_width() != width {
                return Err(Error::Shape(format!(
                    "layer {i} ({}) expects width {}, previous layer yields {width}",
                    layer.kind_name(),
                    layer.input_width()
                )));
            }
            if let LayerSpec::CovariateMerge { covariates, .. } = *layer {
                if covariates != self.covariates {
                    return Err(Error::Shape(format!(
                        "covariate merge takes {covariates} covariates, network declares {}",
                        self.covariates
                    )));
                }
                merged += 1;
            }
            if matches!(layer, LayerSpec::Output { .. }) && i + 1 != self.layers.len() {
                return Err(Error::InvalidConfig("output layer must be last".into()));
            }
            width = layer.output_width();
        }
        if width != 1 {
            return Err(Error::InvalidConfig(format!(
                "network must end in a single output, got width {width}"
            )));
        }
        if merged > 1 || (self.covariates > 0 && merged == 0) {
            return Err(Error::InvalidConfig(
                "covariates need exactly one covariate-merge layer".into(),
            ));
        }
        Ok(())
    }

    pub fn head(&self) -> Activation {
        self.layers.last().map_or(Activation::Linear, LayerSpec::activation)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn activation_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::activation_count).sum()
    }
}

/// Weight and bias tensors of one layer (also used for gradients and moments).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_for(layer: &LayerSpec) -> Self {
        Self {
            weight: Tensor::zeros(layer.weight_shape()),
            bias: Tensor::zeros(layer.bias_shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer parameter gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec.layers.iter().map(LayerParams::zeros_for).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|v| *v *= c);
            l.bias.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.data().iter().all(|v| v.is_finite()) && l.bias.data().iter().all(|v| v.is_finite())
        })
    }
}

/// Trained weights plus Adam state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub params: Vec<LayerParams>,
    pub first_moment: Vec<LayerParams>,
    pub second_moment: Vec<LayerParams>,
    pub step: u64,
    pub seed: u64,
}

impl ModelState {
    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let params = spec
            .layers
            .iter()
            .map(|layer| {
                let mut p = LayerParams::zeros_for(layer);
                match *layer {
                    LayerSpec::LocallyConnected { channels, .. } => {
                        let w = p.weight.data_mut();
                        let mut off = 0;
                        for (_, len) in layer.groups() {
                            let limit = (6.0 / (len + channels) as f64).sqrt();
                            for v in &mut w[off..off + len * channels] {
                                *v = rng.random_range(-limit..limit);
                            }
                            off += len * channels;
                        }
                    }
                    LayerSpec::Dense {
                        input_width, units, ..
                    } => glorot(p.weight.data_mut(), input_width, units, &mut rng),
                    LayerSpec::Output { input_width, .. } => {
                        glorot(p.weight.data_mut(), input_width, 1, &mut rng)
                    }
                    _ => {}
                }
                p
            })
            .collect();
        Self::with_params(spec, params, seed)
    }

    /// Wraps explicit parameters with zeroed optimizer state.
    pub fn with_params(spec: &NetworkSpec, params: Vec<LayerParams>, seed: u64) -> Self {
        let zeros: Vec<LayerParams> = spec.layers.iter().map(LayerParams::zeros_for).collect();
        Self {
            params,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            seed,
        }
    }

    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.params.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "state has {} layers, spec has {}",
                self.params.len(),
                spec.layers.len()
            )));
        }
        for (i, (p, l)) in self.params.iter().zip(&spec.layers).enumerate() {
            if p.weight.len() != l.weight_count() || p.bias.len() != l.bias_count() {
                return Err(Error::Shape(format!("layer {i} parameter sizes disagree with spec")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }
}

fn glorot(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut seed::Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w {
        *v = rng.random_range(-limit..limit);
    }
}
