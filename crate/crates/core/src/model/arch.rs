use serde::{Deserialize, Serialize};

use crate::nn::{Activation, LayerSpec, LossKind, NetworkSpec};
use crate::{Error, Result};

/// Network shape for an n × p × (M+1) augmented input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub p: usize,
    pub knockoffs: usize,
    /// Region kernel size.
    pub sigma: usize,
    /// Region channels.
    pub theta: usize,
    pub dense: Vec<usize>,
    pub covariates: usize,
    pub activation: Activation,
    pub head: Activation,
    /// 0: dense only, 1: feature-wise layer, 2: feature-wise then region-wise.
    pub levels: u8,
    /// Keep the trailing partial region instead of dropping it.
    pub pad_last: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            p: 0,
            knockoffs: 5,
            sigma: 5,
            theta: 8,
            dense: vec![50],
            covariates: 0,
            activation: Activation::Elu,
            head: Activation::Sigmoid,
            levels: 2,
            pad_last: false,
        }
    }
}

impl ArchitectureConfig {
    pub fn input_width(&self) -> usize {
        self.p * (self.knockoffs + 1)
    }

    pub fn loss(&self) -> LossKind {
        if self.head == Activation::Sigmoid {
            LossKind::Bce
        } else {
            LossKind::Mse
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.knockoffs == 0 {
            return Err(Error::InvalidConfig("architecture needs p >= 1 and M >= 1".into()));
        }
        if self.levels > 2 {
            return Err(Error::InvalidConfig(format!("hierarchy levels {} not in 0..=2", self.levels)));
        }
        if self.levels == 2 {
            if self.sigma == 0 || self.theta == 0 {
                return Err(Error::InvalidConfig("sigma and theta must be >= 1".into()));
            }
            if self.p < self.sigma && !self.pad_last {
                return Err(Error::InvalidConfig(format!(
                    "p = {} < sigma = {} leaves no region group",
                    self.p, self.sigma
                )));
            }
        }
        if self.dense.contains(&0) {
            return Err(Error::InvalidConfig("dense widths must be >= 1".into()));
        }
        if !matches!(self.head, Activation::Sigmoid | Activation::Linear) {
            return Err(Error::InvalidConfig(format!("head must be sigmoid or linear, got {}", self.head)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub kind: String,
    pub output_width: usize,
    pub weights: usize,
    pub biases: usize,
    pub activations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuiltNetwork {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerCount>,
    pub parameters: usize,
    pub activations: usize,
    /// Number of region groups (levels = 2), else 0.
    pub region_groups: usize,
    /// Width entering the dense stack.
    pub flattened_width: usize,
}

/// Builds the layer stack with L1 weight `l1` on the first hidden layer
/// (the feature-wise layer, or the first dense layer when `levels = 0`).
pub fn build_with_l1(arch: &ArchitectureConfig, l1: f64) -> Result<BuiltNetwork> {
    arch.validate()?;
    let m1 = arch.knockoffs + 1;
    let mut layers = Vec::new();
    let mut width = arch.input_width();
    let mut region_groups = 0;
    if arch.levels >= 1 {
        layers.push(LayerSpec::LocallyConnected {
            input_width: width,
            group_size: m1,
            stride: m1,
            channels: 1,
            activation: arch.activation,
            l1,
            pad_last: false,
        });
        width = arch.p;
    }
    if arch.levels == 2 {
        let lc = LayerSpec::LocallyConnected {
            input_width: width,
            group_size: arch.sigma,
            stride: arch.sigma,
            channels: arch.theta,
            activation: arch.activation,
            l1: 0.0,
            pad_last: arch.pad_last,
        };
        region_groups = lc.groups().len();
        width = lc.output_width();
        layers.push(lc);
    }
    if arch.levels >= 1 {
        layers.push(LayerSpec::Flatten { width });
    }
    let flattened_width = width;
    for &units in &arch.dense {
        let first = layers.is_empty();
        layers.push(LayerSpec::Dense {
            input_width: width,
            units,
            activation: arch.activation,
            l1: if first { l1 } else { 0.0 },
        });
        width = units;
    }
    if arch.covariates > 0 {
        layers.push(LayerSpec::CovariateMerge {
            input_width: width,
            covariates: arch.covariates,
        });
        width += arch.covariates;
    }
    layers.push(LayerSpec::Output {
        input_width: width,
        activation: arch.head,
    });
    let spec = NetworkSpec::new(arch.input_width(), arch.covariates, layers)?;
    let counts: Vec<LayerCount> = spec
        .layers
        .iter()
        .map(|l| LayerCount {
            kind: l.kind_name().to_string(),
            output_width: l.output_width(),
            weights: l.weight_count(),
            biases: l.bias_count(),
            activations: l.activation_count(),
        })
        .collect();
    Ok(BuiltNetwork {
        parameters: spec.param_count(),
        activations: spec.activation_count(),
        spec,
        layers: counts,
        region_groups,
        flattened_width,
    })
}

/// Layer stack without L1 penalty.
pub fn build(arch: &ArchitectureConfig) -> Result<BuiltNetwork> {
    build_with_l1(arch, 0.0)
}

/// Fully connected, 1-level and 2-level networks with matched downstream
/// widths: dense(p(M+1)) → 50 → 50 for the first two, and the region layer
/// in place of the first dense layer for the 2-level one.
pub fn comparison_architectures(p: usize, knockoffs: usize, sigma: usize, theta: usize) -> [ArchitectureConfig; 3] {
    let wide = p * (knockoffs + 1);
    let base = ArchitectureConfig { p, knockoffs, sigma, theta, ..ArchitectureConfig::default() };
    [
        ArchitectureConfig { levels: 0, dense: vec![wide, 50, 50], ..base.clone() },
        ArchitectureConfig { levels: 1, dense: vec![wide, 50, 50], ..base.clone() },
        ArchitectureConfig { levels: 2, dense: vec![50, 50], ..base },
    ]
}
