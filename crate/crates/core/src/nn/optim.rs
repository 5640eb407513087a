use serde::{Deserialize, Serialize};

use super::{Gradients, ModelState};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; increments `state.step`.
pub fn adam_step(state: &mut ModelState, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    if grads.layers.len() != state.params.len() {
        return Err(Error::Shape("gradient / parameter layer count".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (li, g) in grads.layers.iter().enumerate() {
        let p = &mut state.params[li];
        let m = &mut state.first_moment[li];
        let v = &mut state.second_moment[li];
        update(p.weight.data_mut(), m.weight.data_mut(), v.weight.data_mut(), g.weight.data(), cfg, c1, c2)?;
        update(p.bias.data_mut(), m.bias.data_mut(), v.bias.data_mut(), g.bias.data(), cfg, c1, c2)?;
    }
    Ok(())
}

fn update(w: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], cfg: &AdamConfig, c1: f64, c2: f64) -> Result<()> {
    if w.len() != g.len() || m.len() != g.len() || v.len() != g.len() {
        return Err(Error::Shape("adam tensors".into()));
    }
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        w[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerParams, LayerSpec, NetworkSpec, Tensor};

    fn scalar_net() -> NetworkSpec {
        NetworkSpec::new(
            1,
            0,
            vec![LayerSpec::Output {
                input_width: 1,
                activation: Activation::Linear,
            }],
        )
        .unwrap()
    }

    fn grads(w: f64, b: f64) -> Gradients {
        Gradients {
            layers: vec![LayerParams {
                weight: Tensor::new(vec![1, 1], vec![w]).unwrap(),
                bias: Tensor::new(vec![1], vec![b]).unwrap(),
            }],
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let spec = scalar_net();
        let mut s = ModelState::init(&spec, 1);
        let before = s.params.clone();
        adam_step(&mut s, &grads(0.0, 0.0), &AdamConfig::default()).unwrap();
        assert_eq!(s.params, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let spec = scalar_net();
        let mut s = ModelState::init(&spec, 1);
        let w0 = s.params[0].weight.data()[0];
        adam_step(&mut s, &grads(1.0, 0.0), &AdamConfig::with_lr(0.001)).unwrap();
        let delta = s.params[0].weight.data()[0] - w0;
        assert!((delta - (-0.001 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn five_steps_match_scripted_reference() {
        let gs = [0.5, -1.5, 2.0, 0.25, -0.75];
        let cfg = AdamConfig::with_lr(0.01);
        let spec = scalar_net();
        let mut s = ModelState::init(&spec, 9);
        let mut w = s.params[0].weight.data()[0];
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (k, &g) in gs.iter().enumerate() {
            adam_step(&mut s, &grads(g, 0.0), &cfg).unwrap();
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((s.params[0].weight.data()[0] - w).abs() < 1e-12);
        assert_eq!(s.step, 5);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let spec = scalar_net();
        let mut s = ModelState::init(&spec, 1);
        assert!(adam_step(&mut s, &grads(f64::NAN, 0.0), &AdamConfig::default()).is_err());
        assert_eq!(s.step, 0);
    }
}
