//! Knockoff statistics and selection.
//!
//! Importance scores are reduced to one row per feature (original first, then
//! its knockoffs). With several knockoffs each feature gets κ (which copy
//! scored highest), τ (top score minus the median of the rest) and W; with a
//! single knockoff W is the plain difference. Selection thresholds and
//! knockoff q-values are computed on the sorted distinct positive statistics,
//! since the FDP estimate is a step function of the threshold.

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::stats::median_in_place;
use crate::{Error, Result};

/// p × (M+1) non-negative importance scores; column 0 is the original.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    ids: Vec<String>,
    knockoffs: usize,
    values: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn new(ids: Vec<String>, knockoffs: usize, values: Vec<f64>) -> Result<Self> {
        if knockoffs == 0 {
            return Err(Error::InvalidConfig("importance matrix needs M >= 1".into()));
        }
        if values.len() != ids.len() * (knockoffs + 1) {
            return Err(Error::Shape(format!(
                "{} ids with M = {knockoffs} need {} scores, got {}",
                ids.len(),
                ids.len() * (knockoffs + 1),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("importance scores must be finite and >= 0".into()));
        }
        Ok(Self { ids, knockoffs, values })
    }

    /// Ids `v0, v1, ...`.
    pub fn with_default_ids(p: usize, knockoffs: usize, values: Vec<f64>) -> Result<Self> {
        Self::new((0..p).map(|j| format!("v{j}")).collect(), knockoffs, values)
    }

    pub fn p(&self) -> usize {
        self.ids.len()
    }

    pub fn knockoffs(&self) -> usize {
        self.knockoffs
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let k = self.knockoffs + 1;
        &self.values[j * k..(j + 1) * k]
    }

    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.row(j)[m]
    }

    /// Restricts to the original column and the first `m` knockoffs.
    pub fn truncate_knockoffs(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.knockoffs {
            return Err(Error::InvalidConfig(format!("cannot keep {m} of {} knockoffs", self.knockoffs)));
        }
        let values = (0..self.p()).flat_map(|j| self.row(j)[..=m].to_vec()).collect();
        Self::new(self.ids.clone(), m, values)
    }
}

/// `T[j, m] = | mean_i grad[i, j, m] |` for an n × p × (M+1) gradient tensor.
pub fn importance_matrix(grad: &Tensor, ids: Option<Vec<String>>) -> Result<ImportanceMatrix> {
    let shape = grad.shape();
    if shape.len() != 3 || shape[2] < 2 {
        return Err(Error::Shape(format!("gradient tensor must be n x p x (M+1), got {shape:?}")));
    }
    let (n, p, k) = (shape[0], shape[1], shape[2]);
    if n == 0 {
        return Err(Error::Empty("gradient tensor has no samples".into()));
    }
    grad.ensure_finite("gradient tensor")?;
    let mut sums = vec![0.0; p * k];
    for i in 0..n {
        for (s, g) in sums.iter_mut().zip(grad.row(i)) {
            *s += g;
        }
    }
    let values = sums.into_iter().map(|s| (s / n as f64).abs()).collect();
    let ids = ids.unwrap_or_else(|| (0..p).map(|j| format!("v{j}")).collect());
    ImportanceMatrix::new(ids, k - 1, values)
}

fn check_row(row: &[f64]) -> Result<()> {
    if row.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "multiple-knockoff statistics need M >= 2, row has M = {}",
            row.len().saturating_sub(1)
        )));
    }
    Ok(())
}

/// κ: index of the largest score (original wins ties, then the lowest
/// knockoff index); τ: largest score minus the median of the other M.
pub fn kappa_tau(row: &[f64]) -> Result<(usize, f64)> {
    check_row(row)?;
    let mut kappa = 0;
    for (m, &v) in row.iter().enumerate().skip(1) {
        if v > row[kappa] {
            kappa = m;
        }
    }
    let mut rest: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != kappa)
        .map(|(_, &v)| v)
        .collect();
    let tau = row[kappa] - median_in_place(&mut rest);
    Ok((kappa, tau))
}

/// `W = (T0 − median(T1..TM)) · 1{T0 ≥ max(T1..TM)}`.
pub fn w_multiple(row: &[f64]) -> Result<f64> {
    check_row(row)?;
    let max_ko = row[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if row[0] >= max_ko {
        let mut ko = row[1..].to_vec();
        Ok(row[0] - median_in_place(&mut ko))
    } else {
        Ok(0.0)
    }
}

/// Single-knockoff statistic `T0 − T1`.
pub fn w_single(t0: f64, t1: f64) -> f64 {
    t0 - t1
}

/// Per-feature statistics for a whole importance matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnockoffStats {
    pub knockoffs: usize,
    pub kappa: Vec<usize>,
    pub tau: Vec<f64>,
    pub w: Vec<f64>,
    pub q: Vec<f64>,
}

impl KnockoffStats {
    /// κ/τ/W/q for `M >= 2`; for `M = 1` the single-knockoff W with
    /// κ = 1{W < 0}, τ = |W| and single-knockoff q-values.
    pub fn compute(t: &ImportanceMatrix) -> Result<Self> {
        let p = t.p();
        if p == 0 {
            return Err(Error::Empty("importance matrix".into()));
        }
        let m = t.knockoffs();
        if m == 1 {
            let w: Vec<f64> = (0..p).map(|j| w_single(t.get(j, 0), t.get(j, 1))).collect();
            let q = q_values_single(&w)?;
            return Ok(Self {
                knockoffs: 1,
                kappa: w.iter().map(|&v| usize::from(v < 0.0)).collect(),
                tau: w.iter().map(|v| v.abs()).collect(),
                w,
                q,
            });
        }
        let mut kappa = Vec::with_capacity(p);
        let mut tau = Vec::with_capacity(p);
        let mut w = Vec::with_capacity(p);
        for j in 0..p {
            let (k, t_j) = kappa_tau(t.row(j))?;
            kappa.push(k);
            tau.push(t_j);
            w.push(w_multiple(t.row(j))?);
        }
        let q = q_values(&kappa, &tau, m)?;
        Ok(Self { knockoffs: m, kappa, tau, w, q })
    }

    /// Features with `q_j <= alpha`.
    pub fn select(&self, alpha: f64) -> Vec<usize> {
        (0..self.q.len()).filter(|&j| self.q[j] <= alpha).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub alpha: f64,
    pub threshold: Option<f64>,
    pub selected: Vec<usize>,
    pub knockoffs: usize,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("target FDR {alpha} must lie in (0, 1)")))
    }
}

/// Sorted distinct positive values.
fn candidates(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut c: Vec<f64> = values.filter(|&v| v > 0.0).collect();
    c.sort_by(|a, b| a.total_cmp(b));
    c.dedup();
    c
}

/// Multiple-knockoff FDP estimate at every candidate threshold (ascending).
fn multiple_ratios(kappa: &[usize], tau: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let ts = candidates(tau.iter().copied());
    // features sorted by τ descending, counted as thresholds decrease
    let mut order: Vec<usize> = (0..tau.len()).collect();
    order.sort_by(|&a, &b| tau[b].total_cmp(&tau[a]));
    let inv_m = 1.0 / m as f64;
    let mut ratios = vec![0.0; ts.len()];
    let (mut pos, mut null, mut cursor) = (0usize, 0usize, 0usize);
    for (k, &t) in ts.iter().enumerate().rev() {
        while cursor < order.len() && tau[order[cursor]] >= t {
            if kappa[order[cursor]] == 0 {
                pos += 1;
            } else {
                null += 1;
            }
            cursor += 1;
        }
        ratios[k] = (inv_m + inv_m * null as f64) / pos.max(1) as f64;
    }
    (ts, ratios)
}

fn check_aligned(kappa: &[usize], tau: &[f64], m: usize) -> Result<()> {
    if kappa.is_empty() {
        return Err(Error::Empty("knockoff statistics".into()));
    }
    if kappa.len() != tau.len() {
        return Err(Error::Shape("κ and τ lengths differ".into()));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("M must be >= 1".into()));
    }
    Ok(())
}

/// Smallest candidate t with `(1/M + #{κ≥1, τ≥t}/M) / max(1, #{κ=0, τ≥t}) <= α`.
pub fn threshold_multiple(kappa: &[usize], tau: &[f64], alpha: f64, m: usize) -> Result<Option<f64>> {
    check_aligned(kappa, tau, m)?;
    check_alpha(alpha)?;
    let (ts, ratios) = multiple_ratios(kappa, tau, m);
    Ok(ts.iter().zip(&ratios).find(|(_, &r)| r <= alpha).map(|(&t, _)| t))
}

/// Threshold and selected set `{ j : κ_j = 0, τ_j ≥ t̂ }`.
pub fn select_multiple(kappa: &[usize], tau: &[f64], alpha: f64, m: usize) -> Result<SelectionResult> {
    let threshold = threshold_multiple(kappa, tau, alpha, m)?;
    let selected = match threshold {
        Some(t) => (0..tau.len()).filter(|&j| kappa[j] == 0 && tau[j] >= t).collect(),
        None => Vec::new(),
    };
    Ok(SelectionResult { alpha, threshold, selected, knockoffs: m })
}

/// Knockoff q-values; features whose original did not win get 1.
pub fn q_values(kappa: &[usize], tau: &[f64], m: usize) -> Result<Vec<f64>> {
    check_aligned(kappa, tau, m)?;
    let (ts, ratios) = multiple_ratios(kappa, tau, m);
    Ok(q_from_ratios(&ts, &ratios, tau.len(), |j| (kappa[j] == 0).then_some(tau[j])))
}

/// `q_j = min over candidates t <= stat_j of ratio(t)`, clamped to 1.
fn q_from_ratios(ts: &[f64], ratios: &[f64], p: usize, stat: impl Fn(usize) -> Option<f64>) -> Vec<f64> {
    let mut prefix_min = Vec::with_capacity(ratios.len());
    let mut best = f64::INFINITY;
    for &r in ratios {
        best = best.min(r);
        prefix_min.push(best);
    }
    (0..p)
        .map(|j| match stat(j) {
            Some(s) if s > 0.0 => {
                let k = ts.partition_point(|&t| t <= s);
                if k == 0 {
                    1.0
                } else {
                    prefix_min[k - 1].min(1.0)
                }
            }
            _ => 1.0,
        })
        .collect()
}

fn single_ratios(w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ts = candidates(w.iter().map(|v| v.abs()));
    let mut pos: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
    let mut neg: Vec<f64> = w.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    pos.sort_by(|a, b| a.total_cmp(b));
    neg.sort_by(|a, b| a.total_cmp(b));
    let ratios = ts
        .iter()
        .map(|&t| {
            let n_pos = pos.len() - pos.partition_point(|&v| v < t);
            let n_neg = neg.len() - neg.partition_point(|&v| v < t);
            (1.0 + n_neg as f64) / n_pos.max(1) as f64
        })
        .collect();
    (ts, ratios)
}

/// `t̂ = min { t > 0 : (1 + #{W ≤ −t}) / #{W ≥ t} ≤ α }` over the distinct |W|.
pub fn threshold_single(w: &[f64], alpha: f64) -> Result<Option<f64>> {
    if w.is_empty() {
        return Err(Error::Empty("knockoff statistics".into()));
    }
    check_alpha(alpha)?;
    let (ts, ratios) = single_ratios(w);
    Ok(ts.iter().zip(&ratios).find(|(_, &r)| r <= alpha).map(|(&t, _)| t))
}

pub fn select_single(w: &[f64], alpha: f64) -> Result<SelectionResult> {
    let threshold = threshold_single(w, alpha)?;
    let selected = match threshold {
        Some(t) => (0..w.len()).filter(|&j| w[j] >= t).collect(),
        None => Vec::new(),
    };
    Ok(SelectionResult { alpha, threshold, selected, knockoffs: 1 })
}

/// Single-knockoff q-values: selecting `q_j <= α` reproduces [`select_single`].
pub fn q_values_single(w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::Empty("knockoff statistics".into()));
    }
    let (ts, ratios) = single_ratios(w);
    Ok(q_from_ratios(&ts, &ratios, w.len(), |j| Some(w[j])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_tau_hand_examples() {
        let (k, t) = kappa_tau(&[0.9, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(k, 0);
        assert!((t - 0.6).abs() < 1e-12);
        let (k, t) = kappa_tau(&[0.1, 0.5, 0.2, 0.3, 0.4, 0.6]).unwrap();
        assert_eq!(k, 5);
        assert!((t - 0.3).abs() < 1e-12);
        assert_eq!(kappa_tau(&[0.4; 6]).unwrap(), (0, 0.0));
        assert!(kappa_tau(&[0.4, 0.1]).is_err());
    }

    #[test]
    fn knockoff_tie_goes_to_lowest_index() {
        assert_eq!(kappa_tau(&[0.1, 0.5, 0.5, 0.2]).unwrap().0, 1);
    }

    #[test]
    fn w_multiple_examples() {
        assert!((w_multiple(&[0.9, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(w_multiple(&[0.1, 0.5, 0.2, 0.3, 0.4, 0.6]).unwrap(), 0.0);
        // equality with the max knockoff still fires the indicator
        let w = w_multiple(&[0.5, 0.1, 0.5, 0.2]).unwrap();
        assert!((w - 0.3).abs() < 1e-12);
        assert!(w_multiple(&[1.0]).is_err());
    }

    #[test]
    fn w_single_examples() {
        assert!((w_single(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert!((w_single(0.2, 0.5) + 0.3).abs() < 1e-15);
        assert_eq!(w_single(0.4, 0.4), 0.0);
    }

    #[test]
    fn importance_is_mean_then_abs() {
        let g = Tensor::new(vec![4, 1, 2], vec![1.0, -2.0, 1.0, -2.0, -1.0, -2.0, -1.0, -2.0]).unwrap();
        let t = importance_matrix(&g, None).unwrap();
        assert_eq!(t.row(0), &[0.0, 2.0]);
        assert_eq!(t.knockoffs(), 1);
    }

    #[test]
    fn three_feature_threshold_and_q() {
        let kappa = [0, 0, 0];
        let tau = [5.0, 4.0, 3.0];
        assert_eq!(threshold_multiple(&kappa, &tau, 0.1, 5).unwrap(), Some(3.0));
        let sel = select_multiple(&kappa, &tau, 0.1, 5).unwrap();
        assert_eq!(sel.selected, vec![0, 1, 2]);
        let q = q_values(&kappa, &tau, 5).unwrap();
        for v in q {
            assert!((v - 0.2 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_original_winner_selects_nothing() {
        let sel = select_multiple(&[1, 2, 3], &[5.0, 4.0, 3.0], 0.2, 5).unwrap();
        assert!(sel.selected.is_empty());
        assert_eq!(sel.threshold, None);
    }

    #[test]
    fn lone_winner_cannot_be_selected_at_point_one() {
        // 0.2 / 1 > 0.1 whatever the threshold
        let sel = select_multiple(&[0, 1, 2], &[5.0, 1.0, 1.0], 0.1, 5).unwrap();
        assert!(sel.selected.is_empty());
        let sel = select_multiple(&[0, 0, 1], &[5.0, 4.0, 1.0], 0.1, 5).unwrap();
        assert_eq!(sel.selected, vec![0, 1]);
    }

    #[test]
    fn single_threshold_examples() {
        let w = [3.0, 2.5, 2.0, 1.5, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5];
        assert_eq!(threshold_single(&w, 0.1).unwrap(), Some(0.5));
        assert_eq!(select_single(&w, 0.1).unwrap().selected.len(), 10);
        assert_eq!(threshold_single(&w[..9], 0.1).unwrap(), None);
        assert_eq!(threshold_single(&[-1.0, -2.0], 0.2).unwrap(), None);
        assert_eq!(threshold_single(&[1.0, -1.0], 0.5).unwrap(), None);
        assert!(threshold_single(&[], 0.1).is_err());
        assert!(threshold_single(&[1.0], 1.5).is_err());
    }

    #[test]
    fn losing_features_have_unit_q() {
        let q = q_values(&[0, 2, 0, 1], &[3.0, 2.0, 0.0, 9.0], 5).unwrap();
        assert_eq!(q[1], 1.0);
        assert_eq!(q[3], 1.0);
        // τ = 0 never passes a positive threshold
        assert_eq!(q[2], 1.0);
    }

    #[test]
    fn single_stats_from_matrix() {
        let t = ImportanceMatrix::with_default_ids(2, 1, vec![0.5, 0.2, 0.1, 0.4]).unwrap();
        let s = KnockoffStats::compute(&t).unwrap();
        assert_eq!(s.kappa, vec![0, 1]);
        assert!((s.w[0] - 0.3).abs() < 1e-15);
        assert!((s.tau[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn truncation_keeps_leading_columns() {
        let t = ImportanceMatrix::with_default_ids(2, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t1 = t.truncate_knockoffs(1).unwrap();
        assert_eq!(t1.values(), &[1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn negative_scores_rejected() {
        assert!(ImportanceMatrix::with_default_ids(1, 1, vec![-0.1, 0.2]).is_err());
    }
}
