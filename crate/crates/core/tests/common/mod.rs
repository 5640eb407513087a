#![allow(dead_code)]

use hidemk::nn::{Activation, LayerSpec, LossKind, ModelState, NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Feature-wise + region-wise locally connected net with a dense layer,
/// optional covariates and the requested head.
pub fn hierarchical_spec(
    p: usize,
    m: usize,
    sigma: usize,
    theta: usize,
    dense: usize,
    covariates: usize,
    hidden: Activation,
    head: Activation,
    l1: f64,
) -> NetworkSpec {
    let k = m + 1;
    let groups = p / sigma;
    let mut layers = vec![
        LayerSpec::LocallyConnected {
            input_width: p * k,
            group_size: k,
            stride: k,
            channels: 1,
            activation: hidden,
            l1,
            pad_last: false,
        },
        LayerSpec::LocallyConnected {
            input_width: p,
            group_size: sigma,
            stride: sigma,
            channels: theta,
            activation: hidden,
            l1: 0.0,
            pad_last: false,
        },
        LayerSpec::Flatten { width: groups * theta },
        LayerSpec::Dense {
            input_width: groups * theta,
            units: dense,
            activation: hidden,
            l1: 0.0,
        },
    ];
    let mut width = dense;
    if covariates > 0 {
        layers.push(LayerSpec::CovariateMerge {
            input_width: dense,
            covariates,
        });
        width += covariates;
    }
    layers.push(LayerSpec::Output {
        input_width: width,
        activation: head,
    });
    NetworkSpec::new(p * k, covariates, layers).unwrap()
}

/// Perturbs every bias away from zero so all parameters matter.
pub fn randomize_biases(state: &mut ModelState, rng: &mut ChaCha8Rng) {
    for p in &mut state.params {
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
}

/// Relative error with a floor so near-zero gradients are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Straightforward second implementation of the forward pass, written
/// directly from the layer definitions.
pub fn reference_forward(spec: &NetworkSpec, state: &ModelState, x: &[f64], cov: &[f64]) -> f64 {
    let mut a = x.to_vec();
    for (layer, p) in spec.layers.iter().zip(&state.params) {
        let act = |z: f64| hidemk::nn::activation(layer.activation(), z, 1.0).0;
        a = match layer {
            LayerSpec::LocallyConnected { channels, .. } => {
                let w = p.weight.data();
                let b = p.bias.data();
                let mut out = Vec::new();
                let mut off = 0;
                for (g, (start, len)) in layer.groups().into_iter().enumerate() {
                    for c in 0..*channels {
                        let mut z = b[g * channels + c];
                        for k in 0..len {
                            z += w[off + c * len + k] * a[start + k];
                        }
                        out.push(act(z));
                    }
                    off += channels * len;
                }
                out
            }
            LayerSpec::Dense { units, input_width, .. } => (0..*units)
                .map(|u| {
                    let mut z = p.bias.data()[u];
                    for i in 0..*input_width {
                        z += p.weight.data()[u * input_width + i] * a[i];
                    }
                    act(z)
                })
                .collect(),
            LayerSpec::Output { input_width, .. } => {
                let mut z = p.bias.data()[0];
                for i in 0..*input_width {
                    z += p.weight.data()[i] * a[i];
                }
                vec![act(z)]
            }
            LayerSpec::Flatten { .. } => a,
            LayerSpec::CovariateMerge { .. } => {
                let mut v = a;
                v.extend_from_slice(cov);
                v
            }
        };
    }
    a[0]
}

/// Objective recomputed from the reference forward pass.
pub fn reference_objective(spec: &NetworkSpec, state: &ModelState, x: &Tensor, cov: &Tensor, y: &[f64], loss: LossKind) -> f64 {
    let n = x.rows();
    let mut total = 0.0;
    for i in 0..n {
        let f = reference_forward(spec, state, x.row(i), cov.row(i));
        total += match loss {
            LossKind::Mse => (y[i] - f).powi(2),
            LossKind::Bce => -(y[i] * f.ln() + (1.0 - y[i]) * (1.0 - f).ln()),
        };
    }
    let mut penalty = 0.0;
    for (layer, p) in spec.layers.iter().zip(&state.params) {
        penalty += layer.l1() * p.weight.data().iter().map(|w| w.abs()).sum::<f64>();
    }
    total / n as f64 + penalty
}
