//! Forward evaluation and reverse-mode gradients.

use super::{loss::LossKind, Gradients, LayerParams, LayerSpec, ModelState, NetworkSpec, Tensor};
use crate::{Error, Result};

/// Precomputed per-layer layout.
enum Plan {
    Local {
        groups: Vec<(usize, usize)>,
        channels: usize,
    },
    Dense {
        input: usize,
        units: usize,
    },
    Identity,
    Merge {
        input: usize,
    },
}

struct Compiled<'a> {
    spec: &'a NetworkSpec,
    plans: Vec<Plan>,
}

impl<'a> Compiled<'a> {
    fn new(spec: &'a NetworkSpec, state: &ModelState) -> Result<Self> {
        spec.validate()?;
        state.check_against(spec)?;
        let plans = spec
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::LocallyConnected { channels, .. } => Plan::Local {
                    groups: l.groups(),
                    channels,
                },
                LayerSpec::Dense {
                    input_width, units, ..
                } => Plan::Dense {
                    input: input_width,
                    units,
                },
                LayerSpec::Output { input_width, .. } => Plan::Dense {
                    input: input_width,
                    units: 1,
                },
                LayerSpec::Flatten { .. } => Plan::Identity,
                LayerSpec::CovariateMerge { input_width, .. } => Plan::Merge { input: input_width },
            })
            .collect();
        Ok(Self { spec, plans })
    }

    fn trace(&self) -> Trace {
        let mut acts = vec![vec![0.0; self.spec.input_width]];
        let mut derivs = Vec::with_capacity(self.spec.layers.len());
        for l in &self.spec.layers {
            acts.push(vec![0.0; l.output_width()]);
            derivs.push(vec![0.0; l.output_width()]);
        }
        let deltas = acts.iter().map(|a| vec![0.0; a.len()]).collect();
        Trace {
            acts,
            derivs,
            deltas,
        }
    }

    /// Runs one sample through the chain, filling `t.acts` and `t.derivs`.
    fn forward_sample(&self, state: &ModelState, x: &[f64], cov: &[f64], t: &mut Trace) -> f64 {
        t.acts[0].copy_from_slice(x);
        for (li, (layer, plan)) in self.spec.layers.iter().zip(&self.plans).enumerate() {
            let act = layer.activation();
            let (head, tail) = t.acts.split_at_mut(li + 1);
            let input = &head[li];
            let out = &mut tail[0];
            let der = &mut t.derivs[li];
            let p = &state.params[li];
            match plan {
                Plan::Local { groups, channels } => {
                    let w = p.weight.data();
                    let b = p.bias.data();
                    let mut off = 0;
                    for (g, &(start, len)) in groups.iter().enumerate() {
                        let xs = &input[start..start + len];
                        for c in 0..*channels {
                            let ws = &w[off..off + len];
                            let z = b[g * channels + c] + dot(ws, xs);
                            let (v, d) = act.eval(z);
                            out[g * channels + c] = v;
                            der[g * channels + c] = d;
                            off += len;
                        }
                    }
                }
                Plan::Dense { input: n_in, units } => {
                    let w = p.weight.data();
                    let b = p.bias.data();
                    for u in 0..*units {
                        let z = b[u] + dot(&w[u * n_in..(u + 1) * n_in], input);
                        let (v, d) = act.eval(z);
                        out[u] = v;
                        der[u] = d;
                    }
                }
                Plan::Identity => {
                    out.copy_from_slice(input);
                    der.fill(1.0);
                }
                Plan::Merge { input: n_in } => {
                    out[..*n_in].copy_from_slice(input);
                    out[*n_in..].copy_from_slice(cov);
                    der.fill(1.0);
                }
            }
        }
        t.acts.last().expect("non-empty")[0]
    }

    /// Back-propagates `d_out` (derivative w.r.t. the network output) through
    /// the last traced sample. Accumulates parameter gradients when `grads`
    /// is given; `t.deltas[0]` ends up holding the input gradient.
    fn backward_sample(&self, state: &ModelState, d_out: f64, t: &mut Trace, mut grads: Option<&mut Gradients>) {
        let n_layers = self.spec.layers.len();
        t.deltas[n_layers][0] = d_out;
        for li in (0..n_layers).rev() {
            let (lower, upper) = t.deltas.split_at_mut(li + 1);
            let d_in = &mut lower[li];
            let d_out = &mut upper[0];
            // dL/dz
            for (d, f) in d_out.iter_mut().zip(&t.derivs[li]) {
                *d *= f;
            }
            let input = &t.acts[li];
            let p = &state.params[li];
            let mut g = grads.as_deref_mut().map(|g| &mut g.layers[li]);
            match &self.plans[li] {
                Plan::Local { groups, channels } => {
                    d_in.fill(0.0);
                    let w = p.weight.data();
                    let mut off = 0;
                    for (gi, &(start, len)) in groups.iter().enumerate() {
                        for c in 0..*channels {
                            let dz = d_out[gi * channels + c];
                            if let Some(g) = g.as_deref_mut() {
                                g.bias.data_mut()[gi * channels + c] += dz;
                                let gw = &mut g.weight.data_mut()[off..off + len];
                                for (gw, x) in gw.iter_mut().zip(&input[start..start + len]) {
                                    *gw += dz * x;
                                }
                            }
                            for (di, wv) in d_in[start..start + len].iter_mut().zip(&w[off..off + len]) {
                                *di += dz * wv;
                            }
                            off += len;
                        }
                    }
                }
                Plan::Dense { input: n_in, units } => {
                    d_in.fill(0.0);
                    let w = p.weight.data();
                    for u in 0..*units {
                        let dz = d_out[u];
                        if dz == 0.0 {
                            continue;
                        }
                        let row = u * n_in..(u + 1) * n_in;
                        if let Some(g) = g.as_deref_mut() {
                            g.bias.data_mut()[u] += dz;
                            for (gw, x) in g.weight.data_mut()[row.clone()].iter_mut().zip(input) {
                                *gw += dz * x;
                            }
                        }
                        for (di, wv) in d_in.iter_mut().zip(&w[row]) {
                            *di += dz * wv;
                        }
                    }
                }
                Plan::Identity => d_in.copy_from_slice(d_out),
                Plan::Merge { input: n_in } => d_in.copy_from_slice(&d_out[..*n_in]),
            }
        }
    }
}

struct Trace {
    acts: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

/// Four independent partial sums so the loop vectorises.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_inputs(spec: &NetworkSpec, x: &Tensor, cov: Option<&Tensor>) -> Result<usize> {
    let n = x.rows();
    if x.row_len() != spec.input_width {
        return Err(Error::Shape(format!(
            "network input width {}, batch rows have {}",
            spec.input_width,
            x.row_len()
        )));
    }
    match cov {
        Some(c) if spec.covariates > 0 => {
            if c.rows() != n || c.row_len() != spec.covariates {
                return Err(Error::Shape(format!(
                    "covariates must be {n}x{}, got {:?}",
                    spec.covariates,
                    c.shape()
                )));
            }
        }
        None if spec.covariates > 0 => {
            return Err(Error::Shape(format!("network expects {} covariates", spec.covariates)))
        }
        Some(c) if c.row_len() != 0 => {
            return Err(Error::Shape("covariates given to a network without a merge layer".into()))
        }
        _ => {}
    }
    Ok(n)
}

fn cov_row(cov: Option<&Tensor>, i: usize) -> &[f64] {
    match cov {
        Some(c) if c.row_len() > 0 => c.row(i),
        _ => &[],
    }
}

/// Network predictions for every row of `x`.
pub fn forward(spec: &NetworkSpec, state: &ModelState, x: &Tensor, cov: Option<&Tensor>) -> Result<Vec<f64>> {
    let n = check_inputs(spec, x, cov)?;
    let rows: Vec<usize> = (0..n).collect();
    forward_rows(spec, state, x, cov, &rows)
}

/// Predictions for the selected rows only.
pub fn forward_rows(
    spec: &NetworkSpec,
    state: &ModelState,
    x: &Tensor,
    cov: Option<&Tensor>,
    rows: &[usize],
) -> Result<Vec<f64>> {
    check_inputs(spec, x, cov)?;
    let net = Compiled::new(spec, state)?;
    let mut t = net.trace();
    let out: Vec<f64> = rows
        .iter()
        .map(|&i| net.forward_sample(state, x.row(i), cov_row(cov, i), &mut t))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(out)
}

/// Result of a backward pass over one batch.
#[derive(Clone, Debug)]
pub struct Backprop {
    /// Batch-mean data loss.
    pub loss: f64,
    /// Σ_layers l1 · Σ|w|, already differentiated into `grads`.
    pub penalty: f64,
    pub grads: Gradients,
}

impl Backprop {
    pub fn objective(&self) -> f64 {
        self.loss + self.penalty
    }
}

/// Gradients of `loss(y, f(x)) + Σ l1·|w|` with respect to every parameter.
pub fn backprop(
    spec: &NetworkSpec,
    state: &ModelState,
    x: &Tensor,
    cov: Option<&Tensor>,
    y: &[f64],
    loss: LossKind,
) -> Result<Backprop> {
    let n = check_inputs(spec, x, cov)?;
    let rows: Vec<usize> = (0..n).collect();
    backprop_rows(spec, state, x, cov, y, loss, &rows)
}

/// [`backprop`] restricted to a batch of rows; `y` is indexed by row.
pub fn backprop_rows(
    spec: &NetworkSpec,
    state: &ModelState,
    x: &Tensor,
    cov: Option<&Tensor>,
    y: &[f64],
    loss: LossKind,
    rows: &[usize],
) -> Result<Backprop> {
    let n = check_inputs(spec, x, cov)?;
    if y.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} samples", y.len())));
    }
    if rows.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    loss.check_head(spec.head())?;
    let net = Compiled::new(spec, state)?;
    let mut t = net.trace();
    let mut grads = Gradients::zeros(spec);
    let inv_n = 1.0 / rows.len() as f64;
    let mut total = 0.0;
    for &i in rows {
        let pred = net.forward_sample(state, x.row(i), cov_row(cov, i), &mut t);
        let (l, dl) = loss.sample(y[i], pred);
        total += l;
        net.backward_sample(state, dl * inv_n, &mut t, Some(&mut grads));
    }
    let loss_value = total * inv_n;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut penalty = 0.0;
    for ((layer, p), g) in spec.layers.iter().zip(&state.params).zip(&mut grads.layers) {
        let l1 = layer.l1();
        if l1 > 0.0 {
            add_l1(p, g, l1, &mut penalty);
        }
    }
    Ok(Backprop {
        loss: loss_value,
        penalty,
        grads,
    })
}

fn add_l1(p: &LayerParams, g: &mut LayerParams, l1: f64, penalty: &mut f64) {
    for (gw, w) in g.weight.data_mut().iter_mut().zip(p.weight.data()) {
        *penalty += l1 * w.abs();
        // subgradient 0 at w = 0
        if *w > 0.0 {
            *gw += l1;
        } else if *w < 0.0 {
            *gw -= l1;
        }
    }
}

/// ∂f(x_i)/∂x_i for every sample, same shape as `x`. `f` is the network
/// output after the head activation; covariate gradients are not returned.
pub fn input_gradients(spec: &NetworkSpec, state: &ModelState, x: &Tensor, cov: Option<&Tensor>) -> Result<Tensor> {
    let n = check_inputs(spec, x, cov)?;
    let net = Compiled::new(spec, state)?;
    let mut t = net.trace();
    let w = spec.input_width;
    let mut out = vec![0.0; n * w];
    for i in 0..n {
        net.forward_sample(state, x.row(i), cov_row(cov, i), &mut t);
        net.backward_sample(state, 1.0, &mut t, None);
        out[i * w..(i + 1) * w].copy_from_slice(&t.deltas[0]);
    }
    let grads = Tensor::new(x.shape().to_vec(), out)?;
    grads.ensure_finite("input gradients")?;
    Ok(grads)
}
