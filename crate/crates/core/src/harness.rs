//! Replicate orchestration: simulate, build knockoffs, score every method,
//! and aggregate FDR/power curves.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_pipeline, BaselineMethod, PathOptions};
use crate::filter::{ImportanceMatrix, KnockoffStats};
use crate::knockoff::{augment, scit_generate, KnockoffTensor};
use crate::model::{
    cross_validate, derandomized_importance, holdout_epochs, ArchitectureConfig, RunConfig, SearchSpace, TrainData,
};
use crate::nn::{Activation, Tensor};
use crate::sim::{simulate_dataset, SimConfig, SimDataset, TraitKind};
use crate::{seed, stats, Error, Result};

/// Every method the harness can score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Two-level network, M knockoffs, median of R runs.
    HidemkDerand,
    /// Two-level network, M knockoffs, one run.
    Hidemk,
    /// One-level network, M knockoffs, median of R runs.
    Demk,
    /// As `HidemkDerand` with ReLU units.
    HidemkDerandRelu,
    /// As `HidemkDerand` with a single knockoff copy.
    HidemkDerandM1,
    Lasso,
    Ridge,
    Marginal,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::HidemkDerand,
        Method::Hidemk,
        Method::Demk,
        Method::HidemkDerandRelu,
        Method::HidemkDerandM1,
        Method::Lasso,
        Method::Ridge,
        Method::Marginal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::HidemkDerand => "hidemk-derand",
            Method::Hidemk => "hidemk",
            Method::Demk => "demk",
            Method::HidemkDerandRelu => "hidemk-derand-relu",
            Method::HidemkDerandM1 => "hidemk-derand-m1",
            Method::Lasso => "lasso",
            Method::Ridge => "ridge",
            Method::Marginal => "marginal",
        }
    }

    pub fn baseline(self) -> Option<BaselineMethod> {
        match self {
            Method::Lasso => Some(BaselineMethod::Lasso),
            Method::Ridge => Some(BaselineMethod::Ridge),
            Method::Marginal => Some(BaselineMethod::Marginal),
            _ => None,
        }
    }

    /// Knockoff copies the method consumes, given the configured M.
    pub fn knockoffs(self, m: usize) -> usize {
        match self {
            Method::HidemkDerandM1 => 1,
            _ if self.baseline().is_some() => 1,
            _ => m,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method `{s}`")))
    }
}

/// How a selected variant is credited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    /// Only the causal index itself counts.
    #[default]
    Exact,
    /// Any member of a causal variant's LD cluster counts.
    Cluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EpochSelection {
    /// One random split; stability rule on the held-out loss.
    Holdout { val_fraction: f64 },
    /// Random search with K-fold CV (also picks L1 and learning rate).
    CrossValidation { space: SearchSpace, folds: usize, draws: usize },
    Fixed { epochs: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    pub sigma: usize,
    pub theta: usize,
    pub dense: Vec<usize>,
    pub learning_rate: f64,
    pub l1: f64,
    pub max_epochs: usize,
    /// `None` uses min(1024, n/4).
    pub batch_size: Option<usize>,
    pub epoch_selection: EpochSelection,
    /// Feed the covariate into the network (and unpenalised into joint baselines).
    pub use_covariate: bool,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            sigma: 5,
            theta: 8,
            dense: vec![50],
            learning_rate: 1e-2,
            l1: 1e-3,
            max_epochs: 50,
            batch_size: None,
            epoch_selection: EpochSelection::Holdout { val_fraction: 0.2 },
            use_covariate: true,
        }
    }
}

/// Full description of a simulation study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub trait_kind: TraitKind,
    pub sim: SimConfig,
    pub knockoffs: usize,
    /// SCIT conditioning window.
    pub window: usize,
    pub target_fdr: Vec<f64>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Ensemble size R for de-randomised methods.
    pub ensemble: usize,
    pub master_seed: u64,
    pub threads: Option<usize>,
    pub output_dir: Option<std::path::PathBuf>,
    pub network: NetworkSettings,
    pub baseline: PathOptions,
    pub truth: Truth,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            trait_kind: TraitKind::Quantitative,
            sim: SimConfig::default(),
            knockoffs: 5,
            window: 10,
            target_fdr: default_targets(),
            replicates: 50,
            methods: vec![Method::HidemkDerand, Method::HidemkDerandM1, Method::Lasso],
            ensemble: 10,
            master_seed: 2024,
            threads: None,
            output_dir: None,
            network: NetworkSettings::default(),
            baseline: PathOptions::default(),
            truth: Truth::Exact,
        }
    }
}

/// 0.01, 0.02, …, 0.20.
pub fn default_targets() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 100.0).collect()
}

impl PipelineConfig {
    /// The large profile: n = 10,000, p = 2,000 simulated, 200 replicates.
    pub fn full_profile(trait_kind: TraitKind) -> Self {
        Self {
            trait_kind,
            sim: SimConfig { n: 10_000, p: 2_000, ..SimConfig::default() },
            replicates: 200,
            window: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_fdr.is_empty() {
            return Err(Error::InvalidConfig("target FDR list is empty".into()));
        }
        if self.target_fdr.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidConfig("target FDRs must lie in (0, 1)".into()));
        }
        if self.target_fdr.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("target FDRs must be strictly increasing".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods requested".into()));
        }
        if self.knockoffs == 0 || self.ensemble == 0 {
            return Err(Error::InvalidConfig("knockoffs and ensemble size must be >= 1".into()));
        }
        let needs_multiple = self.methods.iter().any(|m| m.baseline().is_none() && m.knockoffs(2) > 1);
        if needs_multiple && self.knockoffs < 2 {
            return Err(Error::InvalidConfig("multiple-knockoff methods need M >= 2".into()));
        }
        if self.sim.n < 8 {
            return Err(Error::InvalidConfig("need at least 8 samples".into()));
        }
        Ok(())
    }

    pub fn replicate_seed(&self, index: usize) -> u64 {
        seed::derive(self.master_seed, &[seed::stream::REPLICATE, index as u64])
    }
}

/// FDP and power of one selection.
pub fn fdr_power(selected: &[usize], causal: &[usize]) -> Result<(f64, f64)> {
    if causal.is_empty() {
        return Err(Error::Empty("causal set".into()));
    }
    let hits = selected.iter().filter(|s| causal.contains(s)).count();
    let fdp = (selected.len() - hits) as f64 / selected.len().max(1) as f64;
    Ok((fdp, hits as f64 / causal.len() as f64))
}

/// FDP and power when any member of a causal variant's cluster counts.
pub fn fdr_power_clustered(selected: &[usize], causal: &[usize], labels: &[usize]) -> Result<(f64, f64)> {
    if causal.is_empty() {
        return Err(Error::Empty("causal set".into()));
    }
    let causal_labels: Vec<usize> = causal.iter().map(|&c| labels[c]).collect();
    let hits = selected.iter().filter(|&&s| causal_labels.contains(&labels[s])).count();
    let found = causal_labels
        .iter()
        .filter(|l| selected.iter().any(|&s| labels[s] == **l))
        .count();
    let fdp = (selected.len() - hits) as f64 / selected.len().max(1) as f64;
    Ok((fdp, found as f64 / causal.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdrPoint {
    pub target_fdr: f64,
    pub fdp: f64,
    pub power: f64,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub replicate: usize,
    pub method: Method,
    pub trait_kind: TraitKind,
    pub p: usize,
    pub causal: Vec<usize>,
    pub points: Vec<FdrPoint>,
    /// Epoch count used for network refits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub runtime_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReplicateReport {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn point(&self, target: f64) -> Option<&FdrPoint> {
        self.points.iter().find(|p| (p.target_fdr - target).abs() < 1e-12)
    }
}

/// Data shared by every method on one replicate.
pub struct ReplicateData {
    pub index: usize,
    pub seed: u64,
    pub dataset: SimDataset,
    pub x: DMatrix<f64>,
    pub knockoffs: KnockoffTensor,
    pub covariate: Tensor,
}

pub fn simulate_replicate(cfg: &PipelineConfig, index: usize) -> Result<ReplicateData> {
    let s = cfg.replicate_seed(index);
    let dataset = simulate_dataset(&cfg.sim, cfg.trait_kind, s)?;
    let x = dataset.genotypes.to_dmatrix();
    let knockoffs = scit_generate(&x, cfg.knockoffs, cfg.window, seed::derive(s, &[seed::stream::KNOCKOFF]))?;
    let covariate = Tensor::new(vec![x.nrows(), 1], dataset.phenotype.x1.clone())?;
    Ok(ReplicateData { index, seed: s, dataset, x, knockoffs, covariate })
}

/// Architecture a network method uses on `p` features.
pub fn method_architecture(cfg: &PipelineConfig, method: Method, p: usize) -> Option<ArchitectureConfig> {
    if method.baseline().is_some() {
        return None;
    }
    let net = &cfg.network;
    Some(ArchitectureConfig {
        p,
        knockoffs: method.knockoffs(cfg.knockoffs),
        sigma: net.sigma.min(p),
        theta: net.theta,
        dense: net.dense.clone(),
        covariates: usize::from(net.use_covariate),
        activation: if method == Method::HidemkDerandRelu { Activation::Relu } else { Activation::Elu },
        head: match cfg.trait_kind {
            TraitKind::Quantitative => Activation::Linear,
            TraitKind::Dichotomous => Activation::Sigmoid,
        },
        levels: if method == Method::Demk { 1 } else { 2 },
        pad_last: false,
    })
}

/// Everything a method needs, borrowed from a replicate or from files.
#[derive(Clone, Copy)]
pub struct StudyInputs<'a> {
    pub x: &'a DMatrix<f64>,
    pub knockoffs: &'a KnockoffTensor,
    /// n × 1 covariate.
    pub covariate: &'a Tensor,
    pub y: &'a [f64],
    pub ids: &'a [String],
    /// Root of the network and baseline seed streams.
    pub seed: u64,
}

impl ReplicateData {
    pub fn inputs(&self) -> StudyInputs<'_> {
        StudyInputs {
            x: &self.x,
            knockoffs: &self.knockoffs,
            covariate: &self.covariate,
            y: &self.dataset.phenotype.y,
            ids: self.dataset.genotypes.ids(),
            seed: self.seed,
        }
    }
}

/// Run configuration shared by every network method on a replicate, so
/// methods differ only in architecture.
pub fn base_run(cfg: &PipelineConfig, inputs: &StudyInputs) -> RunConfig {
    let net = &cfg.network;
    RunConfig {
        learning_rate: net.learning_rate,
        batch_size: net.batch_size.unwrap_or_else(|| RunConfig::desk_batch(inputs.x.nrows())),
        epochs: net.max_epochs,
        l1: net.l1,
        master_seed: seed::derive(inputs.seed, &[seed::stream::NETWORK]),
        run_index: 0,
        ..RunConfig::default()
    }
}

/// Augmented input for `arch` (truncating knockoffs if it uses fewer).
pub fn augmented_input(inputs: &StudyInputs, arch: &ArchitectureConfig) -> Result<Tensor> {
    if arch.knockoffs == inputs.knockoffs.m() {
        augment(inputs.x, inputs.knockoffs)
    } else {
        augment(inputs.x, &inputs.knockoffs.truncate(arch.knockoffs)?)
    }
}

/// Applies the configured epoch selection and returns the refit settings.
pub fn resolve_run(cfg: &PipelineConfig, arch: &ArchitectureConfig, run: RunConfig, data: TrainData) -> Result<RunConfig> {
    let mut run = run;
    match &cfg.network.epoch_selection {
        EpochSelection::Holdout { val_fraction } => {
            run.epochs = holdout_epochs(arch, &run, data, *val_fraction)?.0;
        }
        EpochSelection::CrossValidation { space, folds, draws } => {
            let base = RunConfig { folds: *folds, draws: *draws, ..run };
            run = cross_validate(arch, space, &base, data)?.best;
        }
        EpochSelection::Fixed { epochs } => run.epochs = *epochs,
    }
    Ok(run)
}

/// Importance matrix and chosen epoch count for a network method.
pub fn network_importance(
    cfg: &PipelineConfig,
    inputs: &StudyInputs,
    method: Method,
) -> Result<(ImportanceMatrix, usize)> {
    let arch = method_architecture(cfg, method, inputs.x.ncols())
        .ok_or_else(|| Error::InvalidConfig(format!("{method} is not a network")))?;
    let xa = augmented_input(inputs, &arch)?;
    let cov = cfg.network.use_covariate.then_some(inputs.covariate);
    let train_data = TrainData { x: &xa, cov, y: inputs.y };
    let run = resolve_run(cfg, &arch, base_run(cfg, inputs), train_data)?;
    let r = match method {
        Method::Hidemk => 1,
        _ => cfg.ensemble,
    };
    let ens = derandomized_importance(&arch, &run, train_data, r, Some(inputs.ids.to_vec()))?;
    Ok((ens.median, run.epochs))
}

/// Knockoff statistics for any method.
pub fn method_statistics(
    cfg: &PipelineConfig,
    inputs: &StudyInputs,
    method: Method,
) -> Result<(KnockoffStats, Option<usize>)> {
    match method.baseline() {
        Some(b) => {
            let (n, p) = inputs.x.shape();
            let k1 = inputs.knockoffs.truncate(1)?;
            let kx = DMatrix::from_column_slice(n, p, k1.values());
            let cov = DMatrix::from_column_slice(n, 1, inputs.covariate.data());
            let opts = PathOptions { seed: seed::derive(inputs.seed, &[seed::stream::BASELINE]), ..cfg.baseline.clone() };
            let res = baseline_pipeline(
                inputs.x,
                &kx,
                cfg.network.use_covariate.then_some(&cov),
                inputs.y,
                cfg.trait_kind,
                b,
                &opts,
                Some(inputs.ids.to_vec()),
            )?;
            Ok((res.stats, None))
        }
        None => {
            let (t, epochs) = network_importance(cfg, inputs, method)?;
            Ok((KnockoffStats::compute(&t)?, Some(epochs)))
        }
    }
}

/// Scores one method; failures are recorded in the report, not dropped.
pub fn run_method(cfg: &PipelineConfig, data: &ReplicateData, method: Method) -> ReplicateReport {
    let start = Instant::now();
    let causal = data.dataset.causal.clone();
    let outcome = method_statistics(cfg, &data.inputs(), method).and_then(|(st, epochs)| {
        let labels = data.dataset.clusters.labels(data.x.ncols());
        let points = cfg
            .target_fdr
            .iter()
            .map(|&alpha| {
                let sel = st.select(alpha);
                let (fdp, power) = match cfg.truth {
                    Truth::Exact => fdr_power(&sel, &causal)?,
                    Truth::Cluster => fdr_power_clustered(&sel, &causal, &labels)?,
                };
                Ok(FdrPoint { target_fdr: alpha, fdp, power, selected: sel.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((points, epochs))
    });
    let (points, epochs, error) = match outcome {
        Ok((p, e)) => (p, e, None),
        Err(e) => (vec![], None, Some(format!("{}: {e}", e.kind()))),
    };
    ReplicateReport {
        replicate: data.index,
        method,
        trait_kind: cfg.trait_kind,
        p: data.x.ncols(),
        causal,
        points,
        epochs,
        runtime_secs: start.elapsed().as_secs_f64(),
        error,
    }
}

fn failed_reports(cfg: &PipelineConfig, index: usize, methods: &[Method], e: &Error) -> Vec<ReplicateReport> {
    methods
        .iter()
        .map(|&method| ReplicateReport {
            replicate: index,
            method,
            trait_kind: cfg.trait_kind,
            p: 0,
            causal: vec![],
            points: vec![],
            epochs: None,
            runtime_secs: 0.0,
            error: Some(format!("{}: {e}", e.kind())),
        })
        .collect()
}

/// Simulates replicate `index` and scores `method` on it.
pub fn run_replicate(cfg: &PipelineConfig, index: usize, method: Method) -> ReplicateReport {
    run_replicate_methods(cfg, index, &[method]).remove(0)
}

/// Simulates replicate `index` once and scores every method in `methods`.
pub fn run_replicate_methods(cfg: &PipelineConfig, index: usize, methods: &[Method]) -> Vec<ReplicateReport> {
    match simulate_replicate(cfg, index) {
        Ok(data) => methods.iter().map(|&m| run_method(cfg, &data, m)).collect(),
        Err(e) => failed_reports(cfg, index, methods, &e),
    }
}

/// Runs replicates `0..cfg.replicates` for every configured method on a
/// pool of `cfg.threads` workers. Reports come back in (replicate, method)
/// order regardless of scheduling.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<ReplicateReport>> {
    cfg.validate()?;
    let work = || -> Vec<ReplicateReport> {
        (0..cfg.replicates)
            .into_par_iter()
            .flat_map_iter(|i| run_replicate_methods(cfg, i, &cfg.methods))
            .collect()
    };
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    #[serde(rename = "trait")]
    pub trait_kind: String,
    pub target_fdr: f64,
    pub fdr_mean: f64,
    pub fdr_se: f64,
    pub power_mean: f64,
    pub power_se: f64,
    pub n_replicates: usize,
}

/// Mean and standard error of FDP and power per (method, trait, target),
/// over successful replicates, sorted by method, trait, then target.
pub fn aggregate_curves(reports: &[ReplicateReport]) -> Result<Vec<CurveRow>> {
    if reports.is_empty() {
        return Err(Error::Empty("no replicate reports".into()));
    }
    type Key = (String, String, u64);
    let mut groups: BTreeMap<Key, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in reports.iter().filter(|r| !r.failed()) {
        for pt in &r.points {
            let key = (r.method.as_str().to_string(), r.trait_kind.as_str().to_string(), pt.target_fdr.to_bits());
            let e = groups.entry(key).or_insert_with(|| (pt.target_fdr, vec![], vec![]));
            e.1.push(pt.fdp);
            e.2.push(pt.power);
        }
    }
    if groups.is_empty() {
        return Err(Error::Empty("every replicate failed".into()));
    }
    let mut rows: Vec<CurveRow> = groups
        .into_iter()
        .map(|((method, trait_kind, _), (target, fdp, power))| {
            let (fdr_mean, fdr_se) = stats::mean_se(&fdp);
            let (power_mean, power_se) = stats::mean_se(&power);
            CurveRow { method, trait_kind, target_fdr: target, fdr_mean, fdr_se, power_mean, power_se, n_replicates: fdp.len() }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.method.as_str(), a.trait_kind.as_str())
            .cmp(&(b.method.as_str(), b.trait_kind.as_str()))
            .then(a.target_fdr.total_cmp(&b.target_fdr))
    });
    Ok(rows)
}
