//! Sequential conditional knockoffs: each feature gets M copies built from a
//! ridge-stabilised linear fit on its window plus permuted residuals.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::{linalg, seed, stats, Error, Result};

/// n × p × M knockoff values; column (j, m) is stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct KnockoffTensor {
    n: usize,
    p: usize,
    m: usize,
    seed: u64,
    window: usize,
    values: Vec<f64>,
}

impl KnockoffTensor {
    pub fn new(n: usize, p: usize, m: usize, seed: u64, window: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("need at least one knockoff copy".into()));
        }
        if values.len() != n * p * m {
            return Err(Error::Shape(format!("expected {} knockoff values, got {}", n * p * m, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("knockoff values".into()));
        }
        Ok(Self { n, p, m, seed, window, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy `k` (0-based) of feature `j`.
    pub fn column(&self, j: usize, k: usize) -> &[f64] {
        let start = (j * self.m + k) * self.n;
        &self.values[start..start + self.n]
    }

    fn column_mut(&mut self, j: usize, k: usize) -> &mut [f64] {
        let start = (j * self.m + k) * self.n;
        &mut self.values[start..start + self.n]
    }

    /// The first `m` copies only.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m {
            return Err(Error::InvalidConfig(format!("cannot keep {m} of {} copies", self.m)));
        }
        let values = (0..self.p)
            .flat_map(|j| (0..m).flat_map(move |k| self.column(j, k).iter().copied()))
            .collect();
        Self::new(self.n, self.p, m, self.seed, self.window, values)
    }
}

/// Result of regressing one column on its conditioning set.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFit {
    pub intercept: f64,
    /// One entry per retained conditioner.
    pub coefficients: Vec<f64>,
    /// Indices into the supplied conditioner list that were kept.
    pub used: Vec<usize>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Target column had no variance.
    pub constant: bool,
}

fn centered(col: &[f64]) -> (f64, Vec<f64>, f64) {
    let m = stats::mean(col);
    let c: Vec<f64> = col.iter().map(|v| v - m).collect();
    let ss = c.iter().map(|v| v * v).sum::<f64>();
    (m, c, ss)
}

fn is_flat(ss: f64, n: usize) -> bool {
    ss <= 1e-20 * n as f64
}

/// Least squares of `target` on `conditioners` with an intercept, solved on
/// centred data with ridge `1e-6 · trace(ZᵀZ) / k`. Zero-variance
/// conditioners are dropped.
pub fn fit_on(target: &[f64], conditioners: &[&[f64]]) -> Result<ConditionalFit> {
    let n = target.len();
    if n == 0 {
        return Err(Error::Empty("conditional fit target".into()));
    }
    if let Some(c) = conditioners.iter().find(|c| c.len() != n) {
        return Err(Error::Shape(format!("conditioner length {} vs target {n}", c.len())));
    }
    let (ty_mean, ty, ty_ss) = centered(target);
    if is_flat(ty_ss, n) {
        return Ok(ConditionalFit {
            intercept: ty_mean,
            coefficients: vec![],
            used: vec![],
            fitted: target.to_vec(),
            residuals: vec![0.0; n],
            constant: true,
        });
    }
    let mut used = Vec::new();
    let mut means = Vec::new();
    let mut cols = Vec::new();
    for (idx, c) in conditioners.iter().enumerate() {
        let (m, cc, ss) = centered(c);
        if !is_flat(ss, n) {
            used.push(idx);
            means.push(m);
            cols.extend(cc);
        }
    }
    let k = used.len();
    if k == 0 {
        return Ok(ConditionalFit {
            intercept: ty_mean,
            coefficients: vec![],
            used,
            fitted: vec![ty_mean; n],
            residuals: ty,
            constant: false,
        });
    }
    let z = DMatrix::from_vec(n, k, cols);
    let mut gram = z.tr_mul(&z);
    let lambda = 1e-6 * gram.trace() / k as f64;
    for d in 0..k {
        gram[(d, d)] += lambda;
    }
    let rhs = z.tr_mul(&DVector::from_vec(ty));
    let beta = linalg::solve_spd(&gram, &rhs)?;
    let intercept = ty_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let zb = &z * &beta;
    let fitted: Vec<f64> = zb.iter().map(|v| ty_mean + v).collect();
    if fitted.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("conditional fit with {k} conditioners")));
    }
    let residuals = target.iter().zip(&fitted).map(|(t, f)| t - f).collect();
    Ok(ConditionalFit {
        intercept,
        coefficients: beta.iter().copied().collect(),
        used,
        fitted,
        residuals,
        constant: false,
    })
}

/// Conditioning set for feature `j`: originals within `window` positions
/// (excluding `j`), then every copy of the already-processed features in that
/// window, feature-major.
pub fn conditioning_set(p: usize, m: usize, j: usize, window: usize) -> (Vec<usize>, Vec<(usize, usize)>) {
    let lo = j.saturating_sub(window);
    let hi = (j + window).min(p - 1);
    let originals = (lo..=hi).filter(|&i| i != j).collect();
    let copies = (lo..j).flat_map(|i| (0..m).map(move |k| (i, k))).collect();
    (originals, copies)
}

/// Fits feature `j` of `x` on its conditioning set, reading earlier copies
/// from `knockoffs`.
pub fn conditional_fit(x: &DMatrix<f64>, knockoffs: &KnockoffTensor, j: usize, window: usize) -> Result<ConditionalFit> {
    let (n, p) = x.shape();
    if knockoffs.n() != n || knockoffs.p() != p {
        return Err(Error::Shape(format!(
            "knockoffs are {}x{} but features are {n}x{p}",
            knockoffs.n(),
            knockoffs.p()
        )));
    }
    if j >= p {
        return Err(Error::Shape(format!("feature {j} out of range for {p} features")));
    }
    let (originals, copies) = conditioning_set(p, knockoffs.m(), j, window);
    let slice = |c: usize| &x.as_slice()[c * n..(c + 1) * n];
    let conditioners: Vec<&[f64]> = originals
        .iter()
        .map(|&c| slice(c))
        .chain(copies.iter().map(|&(c, k)| knockoffs.column(c, k)))
        .collect();
    fit_on(slice(j), &conditioners)
}

/// Generates `m` knockoff copies of every column of `x`, left to right.
pub fn scit_generate(x: &DMatrix<f64>, m: usize, window: usize, seed_value: u64) -> Result<KnockoffTensor> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::Empty("knockoff input".into()));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("need at least one knockoff copy".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("knockoff input".into()));
    }
    let mut out = KnockoffTensor {
        n,
        p,
        m,
        seed: seed_value,
        window,
        values: vec![0.0; n * p * m],
    };
    let mut rng = seed::rng(seed_value);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..p {
        let fit = conditional_fit(x, &out, j, window)?;
        for k in 0..m {
            perm.shuffle(&mut rng);
            let col = out.column_mut(j, k);
            for (i, v) in col.iter_mut().enumerate() {
                *v = fit.fitted[i] + fit.residuals[perm[i]];
            }
        }
    }
    Ok(out)
}

/// Stacks originals and knockoffs into an n × p × (M+1) tensor with the
/// original in slot 0.
pub fn augment(x: &DMatrix<f64>, knockoffs: &KnockoffTensor) -> Result<Tensor> {
    let (n, p) = x.shape();
    if knockoffs.n() != n || knockoffs.p() != p {
        return Err(Error::Shape("knockoffs do not match the feature matrix".into()));
    }
    let m1 = knockoffs.m() + 1;
    let mut data = vec![0.0; n * p * m1];
    for j in 0..p {
        for slot in 0..m1 {
            let col: &[f64] = if slot == 0 {
                &x.as_slice()[j * n..(j + 1) * n]
            } else {
                knockoffs.column(j, slot - 1)
            };
            for (i, &v) in col.iter().enumerate() {
                data[(i * p + j) * m1 + slot] = v;
            }
        }
    }
    Tensor::new(vec![n, p, m1], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    pub mean: f64,
    pub variance: f64,
    pub knockoff_mean: Vec<f64>,
    pub knockoff_variance: Vec<f64>,
    /// corr(x_j, x̃_j^m).
    pub self_correlation: Vec<f64>,
    /// |corr(x̃_j^m, x_{j+1}) − corr(x_j, x_{j+1})|; empty for the last feature.
    pub neighbor_gap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeabilityReport {
    pub features: Vec<FeatureDiagnostics>,
    pub max_mean_gap: f64,
    pub max_variance_gap: f64,
    pub max_neighbor_gap: f64,
    pub max_abs_self_correlation: f64,
}

pub fn diagnostics(x: &DMatrix<f64>, knockoffs: &KnockoffTensor) -> Result<ExchangeabilityReport> {
    let (n, p) = x.shape();
    if knockoffs.n() != n || knockoffs.p() != p {
        return Err(Error::Shape("knockoffs do not match the feature matrix".into()));
    }
    let col = |j: usize| &x.as_slice()[j * n..(j + 1) * n];
    let mut features = Vec::with_capacity(p);
    let (mut mg, mut vg, mut ng, mut sc) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for j in 0..p {
        let xj = col(j);
        let mean = stats::mean(xj);
        let variance = stats::variance(xj);
        let next = (j + 1 < p).then(|| col(j + 1));
        let base = next.map(|nx| stats::pearson(xj, nx));
        let mut d = FeatureDiagnostics {
            mean,
            variance,
            knockoff_mean: vec![],
            knockoff_variance: vec![],
            self_correlation: vec![],
            neighbor_gap: vec![],
        };
        for k in 0..knockoffs.m() {
            let kc = knockoffs.column(j, k);
            let km = stats::mean(kc);
            let kv = stats::variance(kc);
            let r = stats::pearson(xj, kc);
            mg = mg.max((km - mean).abs());
            vg = vg.max((kv - variance).abs());
            sc = sc.max(r.abs());
            d.knockoff_mean.push(km);
            d.knockoff_variance.push(kv);
            d.self_correlation.push(r);
            if let (Some(nx), Some(b)) = (next, base) {
                let gap = (stats::pearson(kc, nx) - b).abs();
                ng = ng.max(gap);
                d.neighbor_gap.push(gap);
            }
        }
        features.push(d);
    }
    Ok(ExchangeabilityReport {
        features,
        max_mean_gap: mg,
        max_variance_gap: vg,
        max_neighbor_gap: ng,
        max_abs_self_correlation: sc,
    })
}
