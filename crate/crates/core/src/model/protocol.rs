use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::{build_with_l1, ArchitectureConfig};
use crate::nn::{fit, AdamConfig, FitOptions, MetricKind, ModelState, NetworkSpec, Tensor, TrainHistory};
use crate::{seed, Error, Result};

/// Optimiser and protocol settings for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs to train (the maximum during model selection).
    pub epochs: usize,
    pub l1: f64,
    pub master_seed: u64,
    pub run_index: u64,
    pub folds: usize,
    pub draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs: 80,
            l1: 1e-4,
            master_seed: 0,
            run_index: 0,
            folds: 5,
            draws: 25,
        }
    }
}

impl RunConfig {
    pub fn run_seed(&self) -> u64 {
        seed::derive(self.master_seed, &[seed::stream::NETWORK, self.run_index])
    }

    pub fn with_run(&self, run_index: u64) -> Self {
        Self { run_index, ..self.clone() }
    }

    /// min(1024, n / 4), at least 1.
    pub fn desk_batch(n: usize) -> usize {
        (n / 4).clamp(1, 1024)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("need at least 2 folds".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.l1 >= 0.0) {
            return Err(Error::InvalidConfig("learning rate and L1 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Augmented inputs, optional covariates and the response.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub x: &'a Tensor,
    pub cov: Option<&'a Tensor>,
    pub y: &'a [f64],
}

impl TrainData<'_> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn check(&self, arch: &ArchitectureConfig) -> Result<()> {
        let shape = self.x.shape();
        if shape != [self.y.len(), arch.p, arch.knockoffs + 1] {
            return Err(Error::Shape(format!(
                "inputs {shape:?} do not match n = {}, p = {}, M = {}",
                self.y.len(),
                arch.p,
                arch.knockoffs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: NetworkSpec,
    pub state: ModelState,
    pub history: TrainHistory,
}

/// Trains for `run.epochs` epochs on `train_rows`, scoring `val_rows` after
/// every epoch when given.
pub fn train(
    arch: &ArchitectureConfig,
    run: &RunConfig,
    data: TrainData,
    train_rows: &[usize],
    val_rows: Option<&[usize]>,
) -> Result<TrainedModel> {
    run.validate()?;
    data.check(arch)?;
    let built = build_with_l1(arch, run.l1)?;
    let s = run.run_seed();
    let mut state = ModelState::init(&built.spec, seed::derive(s, &[0]));
    let opts = FitOptions {
        epochs: run.epochs,
        batch_size: run.batch_size,
        adam: AdamConfig::with_lr(run.learning_rate),
        loss: arch.loss(),
        shuffle_seed: seed::derive(s, &[1]),
    };
    let history = fit(&built.spec, &mut state, data.x, data.cov, data.y, train_rows, val_rows, &opts)?;
    Ok(TrainedModel { spec: built.spec, state, history })
}

/// Stability window half-width.
pub const STABILITY_HALF_WINDOW: usize = 5;
pub const STABILITY_TOLERANCE: f64 = 0.01;

/// Best validation metric among epochs whose ±5 neighbourhood keeps the
/// validation loss within 1% of its global minimum; ties go to the earliest
/// epoch. Falls back to the loss argmin when no epoch is stable, and to the
/// last epoch when nothing was validated.
pub fn optimal_epoch(history: &TrainHistory) -> usize {
    let recs = &history.records;
    if recs.is_empty() {
        return 0;
    }
    let losses: Vec<f64> = recs.iter().map(|r| r.val_loss.unwrap_or(f64::NAN)).collect();
    if losses.iter().all(|l| l.is_nan()) {
        return recs.len() - 1;
    }
    let (argmin, lmin) = losses
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_nan())
        .fold((0, f64::INFINITY), |(bi, bl), (i, &l)| if l < bl { (i, l) } else { (bi, bl) });
    let close = |l: f64| {
        if lmin == 0.0 {
            l == 0.0
        } else {
            ((l - lmin) / lmin).abs() < STABILITY_TOLERANCE
        }
    };
    let mut best: Option<(usize, f64)> = None;
    for k in 0..recs.len() {
        let lo = k.saturating_sub(STABILITY_HALF_WINDOW);
        let hi = (k + STABILITY_HALF_WINDOW).min(recs.len() - 1);
        if !(lo..=hi).all(|e| close(losses[e])) {
            continue;
        }
        let metric = recs[k].val_metric.unwrap_or(f64::NAN);
        match best {
            None => best = Some((k, metric)),
            Some((_, bm)) if history.metric.better(metric, bm) => best = Some((k, metric)),
            _ => {}
        }
    }
    best.map_or(argmin, |(k, _)| k)
}

/// Hyper-parameter grid for random search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub l1: Vec<f64>,
    pub epochs: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            l1: vec![1e-5, 5e-5, 1e-4, 5e-4, 1e-3],
            epochs: (25..=80).step_by(5).collect(),
            learning_rate: vec![1e-3],
        }
    }
}

impl SearchSpace {
    fn combos(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::new();
        for &l1 in &self.l1 {
            for &e in &self.epochs {
                for &lr in &self.learning_rate {
                    out.push((l1, e, lr));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawResult {
    pub config: RunConfig,
    /// Fold-averaged validation metric at the chosen epoch.
    pub metric: f64,
    /// Index into the fold-averaged history.
    pub epoch: usize,
    pub fold_metrics: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Winning draw with `epochs` set to the chosen epoch count.
    pub best: RunConfig,
    pub draws: Vec<DrawResult>,
}

pub fn kfold_ids(n: usize, folds: usize, seed_value: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value));
    let mut ids = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        ids[i] = rank % folds;
    }
    ids
}

/// Averages per-epoch validation loss and metric across folds.
fn mean_history(histories: &[TrainHistory]) -> TrainHistory {
    let len = histories.iter().map(TrainHistory::len).min().unwrap_or(0);
    let k = histories.len() as f64;
    let records = (0..len)
        .map(|e| {
            let avg = |f: &dyn Fn(&crate::nn::EpochRecord) -> Option<f64>| {
                histories.iter().map(|h| f(&h.records[e]).unwrap_or(f64::NAN)).sum::<f64>() / k
            };
            crate::nn::EpochRecord {
                epoch: e,
                train_loss: avg(&|r| Some(r.train_loss)),
                val_loss: Some(avg(&|r| r.val_loss)),
                val_metric: Some(avg(&|r| r.val_metric)),
            }
        })
        .collect();
    TrainHistory { metric: histories[0].metric, records }
}

/// Random search over `space`: each draw is trained on K−1 folds and
/// validated on the held-out fold; the draw with the best fold-averaged
/// metric at its stable epoch wins. Spaces no larger than `base.draws` are
/// enumerated exhaustively.
pub fn cross_validate(
    arch: &ArchitectureConfig,
    space: &SearchSpace,
    base: &RunConfig,
    data: TrainData,
) -> Result<CvResult> {
    base.validate()?;
    data.check(arch)?;
    let mut combos = space.combos();
    if combos.is_empty() {
        return Err(Error::InvalidConfig("empty search space".into()));
    }
    let search_seed = seed::derive(base.master_seed, &[seed::stream::SEARCH]);
    if combos.len() > base.draws {
        combos.shuffle(&mut seed::rng(search_seed));
        combos.truncate(base.draws.max(1));
    }
    let n = data.n();
    if n < base.folds {
        return Err(Error::InvalidConfig(format!("{n} samples cannot fill {} folds", base.folds)));
    }
    let ids = kfold_ids(n, base.folds, seed::derive(base.master_seed, &[seed::stream::FOLDS]));
    let mut draws = Vec::with_capacity(combos.len());
    for (d, &(l1, epochs, lr)) in combos.iter().enumerate() {
        let cfg = RunConfig { l1, epochs, learning_rate: lr, ..base.clone() };
        let mut histories = Vec::with_capacity(base.folds);
        for f in 0..base.folds {
            let tr: Vec<usize> = (0..n).filter(|&i| ids[i] != f).collect();
            let va: Vec<usize> = (0..n).filter(|&i| ids[i] == f).collect();
            // fold runs get their own seeds so folds are independent
            let run = cfg.with_run(seed::derive(base.run_index, &[d as u64, f as u64]));
            histories.push(train(arch, &run, data, &tr, Some(&va))?.history);
        }
        let mean = mean_history(&histories);
        let epoch = optimal_epoch(&mean);
        let metric = mean.records[epoch].val_metric.unwrap_or(f64::NAN);
        let fold_metrics = histories
            .iter()
            .map(|h| h.records[epoch.min(h.len() - 1)].val_metric.unwrap_or(f64::NAN))
            .collect();
        draws.push(DrawResult { config: cfg, metric, epoch, fold_metrics });
    }
    let metric_kind = MetricKind::for_loss(arch.loss());
    let mut best = 0;
    for (i, d) in draws.iter().enumerate().skip(1) {
        if metric_kind.better(d.metric, draws[best].metric) {
            best = i;
        }
    }
    let mut cfg = draws[best].config.clone();
    cfg.epochs = draws[best].epoch + 1;
    Ok(CvResult { best: cfg, draws })
}

/// Single train/validation split: trains for `run.epochs` epochs and applies
/// the stability rule. Returns the epoch count to use for full-data refits.
pub fn holdout_epochs(
    arch: &ArchitectureConfig,
    run: &RunConfig,
    data: TrainData,
    val_fraction: f64,
) -> Result<(usize, TrainHistory)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(run.master_seed, &[seed::stream::FOLDS])));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let (va, tr) = order.split_at(n_val);
    let model = train(arch, run, data, tr, Some(va))?;
    let k = optimal_epoch(&model.history);
    Ok((k + 1, model.history))
}
