use rayon::prelude::*;

use super::arch::ArchitectureConfig;
use super::protocol::{train, RunConfig, TrainData};
use crate::filter::{importance_matrix, ImportanceMatrix, KnockoffStats};
use crate::nn::input_gradients;
use crate::{stats, Error, Result};

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub runs: Vec<ImportanceMatrix>,
    pub median: ImportanceMatrix,
    /// R × R Pearson correlations of the run-level W vectors, row-major.
    pub w_correlation: Vec<f64>,
}

impl EnsembleResult {
    /// Mean off-diagonal entry of the W correlation matrix.
    pub fn mean_pairwise_correlation(&self) -> f64 {
        mean_off_diagonal(&self.w_correlation, self.runs.len())
    }
}

/// Mean of the off-diagonal entries of an r × r matrix.
pub fn mean_off_diagonal(c: &[f64], r: usize) -> f64 {
    if r < 2 {
        return f64::NAN;
    }
    let mut s = 0.0;
    for a in 0..r {
        for b in 0..r {
            if a != b {
                s += c[a * r + b];
            }
        }
    }
    s / (r * (r - 1)) as f64
}

/// Trains one model on all rows for `run.epochs` epochs and returns its
/// gradient importance matrix.
pub fn run_importance(arch: &ArchitectureConfig, run: &RunConfig, data: TrainData, ids: Option<Vec<String>>) -> Result<ImportanceMatrix> {
    let rows: Vec<usize> = (0..data.n()).collect();
    let model = train(arch, run, data, &rows, None)?;
    let grad = input_gradients(&model.spec, &model.state, data.x, data.cov)?;
    importance_matrix(&grad, ids)
}

/// Entrywise median of equally shaped matrices.
pub fn median_matrix(runs: &[ImportanceMatrix]) -> Result<ImportanceMatrix> {
    let first = runs.first().ok_or_else(|| Error::Empty("no runs to combine".into()))?;
    if runs.iter().any(|r| r.p() != first.p() || r.knockoffs() != first.knockoffs()) {
        return Err(Error::Shape("run matrices differ in shape".into()));
    }
    let mut buf = vec![0.0; runs.len()];
    let values = (0..first.values().len())
        .map(|e| {
            for (b, r) in buf.iter_mut().zip(runs) {
                *b = r.values()[e];
            }
            stats::median_in_place(&mut buf)
        })
        .collect();
    ImportanceMatrix::new(first.ids().to_vec(), first.knockoffs(), values)
}

/// W vector of a matrix: multiple-knockoff W for M ≥ 2, T0 − T1 for M = 1.
pub fn w_vector(t: &ImportanceMatrix) -> Result<Vec<f64>> {
    Ok(KnockoffStats::compute(t)?.w)
}

/// Pairwise Pearson correlations of W across matrices (R × R, row-major).
pub fn w_correlation(runs: &[ImportanceMatrix]) -> Result<Vec<f64>> {
    let ws: Vec<Vec<f64>> = runs.iter().map(w_vector).collect::<Result<_>>()?;
    let r = ws.len();
    let mut c = vec![1.0; r * r];
    for a in 0..r {
        for b in a + 1..r {
            let v = stats::pearson(&ws[a], &ws[b]);
            c[a * r + b] = v;
            c[b * r + a] = v;
        }
    }
    Ok(c)
}

/// Combines precomputed run matrices.
pub fn ensemble_from_runs(runs: Vec<ImportanceMatrix>) -> Result<EnsembleResult> {
    let median = median_matrix(&runs)?;
    let w_correlation = w_correlation(&runs)?;
    Ok(EnsembleResult { runs, median, w_correlation })
}

/// R full-data refits with run seeds derived from (master seed, r), combined
/// by the entrywise median. Any failed run aborts the ensemble.
pub fn derandomized_importance(
    arch: &ArchitectureConfig,
    run: &RunConfig,
    data: TrainData,
    r: usize,
    ids: Option<Vec<String>>,
) -> Result<EnsembleResult> {
    if r == 0 {
        return Err(Error::InvalidConfig("ensemble size must be >= 1".into()));
    }
    let runs = (0..r as u64)
        .into_par_iter()
        .map(|k| run_importance(arch, &run.with_run(k), data, ids.clone()))
        .collect::<Result<Vec<_>>>()?;
    ensemble_from_runs(runs)
}
