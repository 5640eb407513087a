use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, auc, backprop_rows, forward_rows, loss, AdamConfig, LossKind, ModelState, NetworkSpec, Tensor};
use crate::{seed, Error, Result};

/// Validation metric: AUC for dichotomous heads, MSE for quantitative ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Auc,
    Mse,
}

impl MetricKind {
    pub fn for_loss(loss: LossKind) -> Self {
        match loss {
            LossKind::Bce => MetricKind::Auc,
            LossKind::Mse => MetricKind::Mse,
        }
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Auc => a > b,
            MetricKind::Mse => a < b,
        }
    }

    pub fn compute(self, y: &[f64], pred: &[f64]) -> Result<f64> {
        match self {
            MetricKind::Mse => loss(LossKind::Mse, y, pred),
            MetricKind::Auc => {
                let (mut pos, mut neg) = (Vec::new(), Vec::new());
                for (&t, &p) in y.iter().zip(pred) {
                    if t > 0.5 {
                        pos.push(p)
                    } else {
                        neg.push(p)
                    }
                }
                if pos.is_empty() || neg.is_empty() {
                    // single-class fold: uninformative
                    return Ok(0.5);
                }
                auc(&pos, &neg)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub metric: MetricKind,
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    /// Seeds the per-epoch mini-batch shuffle.
    pub shuffle_seed: u64,
}

/// Loss and validation metric of the current state on `rows`.
pub fn evaluate(
    spec: &NetworkSpec,
    state: &ModelState,
    x: &Tensor,
    cov: Option<&Tensor>,
    y: &[f64],
    rows: &[usize],
    loss_kind: LossKind,
) -> Result<(f64, f64)> {
    let pred = forward_rows(spec, state, x, cov, rows)?;
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let l = loss(loss_kind, &ys, &pred)?;
    let m = MetricKind::for_loss(loss_kind).compute(&ys, &pred)?;
    Ok((l, m))
}

/// Mini-batch Adam over `train_rows` for `opts.epochs` epochs, recording
/// training loss and (when `val_rows` is given) validation loss and metric.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    spec: &NetworkSpec,
    state: &mut ModelState,
    x: &Tensor,
    cov: Option<&Tensor>,
    y: &[f64],
    train_rows: &[usize],
    val_rows: Option<&[usize]>,
    opts: &FitOptions,
) -> Result<TrainHistory> {
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    if train_rows.is_empty() {
        return Err(Error::Empty("training rows".into()));
    }
    let mut rng = seed::rng(seed::derive(opts.shuffle_seed, &[0x5348_5546]));
    let mut order = train_rows.to_vec();
    let mut records = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let bp = backprop_rows(spec, state, x, cov, y, opts.loss, batch).map_err(|e| diverged(epoch, e))?;
            total += bp.loss * batch.len() as f64;
            adam_step(state, &bp.grads, &opts.adam).map_err(|e| diverged(epoch, e))?;
        }
        let train_loss = total / order.len() as f64;
        let (val_loss, val_metric) = match val_rows {
            Some(rows) if !rows.is_empty() => {
                let (l, m) = evaluate(spec, state, x, cov, y, rows, opts.loss).map_err(|e| diverged(epoch, e))?;
                (Some(l), Some(m))
            }
            _ => (None, None),
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|l| !l.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite loss".into(),
            });
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });
    }
    Ok(TrainHistory {
        metric: MetricKind::for_loss(opts.loss),
        records,
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence { epoch, reason: format!("non-finite {what}") },
        other => other,
    }
}
