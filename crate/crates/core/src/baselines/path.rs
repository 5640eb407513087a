use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::glm::logistic_ridge_newton;
use crate::sim::TraitKind;
use crate::{linalg, seed, stats, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathOptions {
    pub folds: usize,
    pub path_len: usize,
    /// Orders of magnitude spanned below λ_max.
    pub decades: f64,
    /// Coordinate descent stops once no update lowers the objective by more
    /// than this fraction of the null deviance per observation.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            path_len: 100,
            decades: 3.0,
            tol: 1e-9,
            max_sweeps: 100_000,
            seed: 0,
        }
    }
}

impl PathOptions {
    fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.path_len < 1 || !(self.decades >= 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid path options {self:?}")));
        }
        Ok(())
    }
}

/// Penalised fit reported on the original predictor scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizedFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// Penalty in the standardised objective.
    pub lambda: f64,
    /// Decreasing λ values; empty for single-λ fits.
    pub path: Vec<f64>,
    /// Mean held-out error per path λ; empty without cross-validation.
    pub cv_error: Vec<f64>,
    pub converged: bool,
}

/// Centred, unit-variance copy of the design.
pub(crate) struct Standardized {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Column has variance.
    pub live: Vec<bool>,
}

impl Standardized {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut out = Vec::with_capacity(n * p);
        let mut mean = Vec::with_capacity(p);
        let mut sd = Vec::with_capacity(p);
        let mut live = Vec::with_capacity(p);
        for j in 0..p {
            let col = &x.as_slice()[j * n..(j + 1) * n];
            let m = stats::mean(col);
            let v = stats::variance(col);
            let ok = v > 1e-12;
            let s = if ok { v.sqrt() } else { 1.0 };
            out.extend(col.iter().map(|c| if ok { (c - m) / s } else { 0.0 }));
            mean.push(m);
            sd.push(s);
            live.push(ok);
        }
        Self { n, p, x: out, mean, sd, live }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    fn unscale(&self, b0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let coef: Vec<f64> = beta.iter().zip(&self.sd).map(|(b, s)| b / s).collect();
        let intercept = b0 - coef.iter().zip(&self.mean).map(|(c, m)| c * m).sum::<f64>();
        (intercept, coef)
    }

    /// Linear predictor for raw rows of `x`.
    fn predict(&self, x: &DMatrix<f64>, rows: &[usize], b0: f64, beta: &[f64]) -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                b0 + (0..self.p)
                    .filter(|&j| beta[j] != 0.0)
                    .map(|j| beta[j] * (x[(i, j)] - self.mean[j]) / self.sd[j])
                    .sum::<f64>()
            })
            .collect()
    }
}

const IRLS_MAX: usize = 25;

fn soft(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Elastic-net coordinate descent on the weighted quadratic
/// (1/2n) Σ w_i (z_i − b0 − x_i β)² + λ Σ pf_j (α|β_j| + (1−α)/2 β_j²).
struct Cd<'a> {
    s: &'a Standardized,
    pf: &'a [f64],
    alpha: f64,
    tol: f64,
    max_sweeps: usize,
}

impl Cd<'_> {
    /// Stops when no coordinate update lowers the objective by more than `thr`
    /// (measured as v_j Δ²).
    fn solve(&self, w: &[f64], z: &[f64], lambda: f64, thr: f64, b0: &mut f64, beta: &mut [f64]) -> bool {
        let n = self.s.n;
        let nf = n as f64;
        let mut r: Vec<f64> = z.iter().map(|zi| zi - *b0).collect();
        for j in 0..self.s.p {
            if beta[j] != 0.0 {
                for (ri, xij) in r.iter_mut().zip(self.s.col(j)) {
                    *ri -= beta[j] * xij;
                }
            }
        }
        let wsum: f64 = w.iter().sum();
        let v: Vec<f64> = (0..self.s.p)
            .map(|j| self.s.col(j).iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>() / nf)
            .collect();
        let mut sweeps = 0;
        let update = |j: usize, beta: &mut [f64], r: &mut [f64]| -> f64 {
            let col = self.s.col(j);
            let old = beta[j];
            let g = col.iter().zip(r.iter()).zip(w).map(|((x, ri), wi)| wi * x * ri).sum::<f64>() / nf + v[j] * old;
            // unpenalised columns stay free even at λ = ∞
            let (l1, l2) = if self.pf[j] == 0.0 {
                (0.0, 0.0)
            } else {
                (lambda * self.pf[j] * self.alpha, lambda * self.pf[j] * (1.0 - self.alpha))
            };
            let new = if l1.is_infinite() || l2.is_infinite() { 0.0 } else { soft(g, l1) / (v[j] + l2) };
            if new != old {
                let d = new - old;
                for (ri, x) in r.iter_mut().zip(col) {
                    *ri -= d * x;
                }
                beta[j] = new;
            }
            v[j] * (new - old) * (new - old)
        };
        let update_b0 = |b0: &mut f64, r: &mut [f64]| -> f64 {
            let d = r.iter().zip(w).map(|(ri, wi)| wi * ri).sum::<f64>() / wsum;
            if d != 0.0 {
                *b0 += d;
                r.iter_mut().for_each(|ri| *ri -= d);
            }
            d * d * wsum / nf
        };
        loop {
            let mut change = update_b0(b0, &mut r);
            for j in 0..self.s.p {
                if self.s.live[j] {
                    change = change.max(update(j, beta, &mut r));
                }
            }
            sweeps += 1;
            if change < thr {
                return true;
            }
            if sweeps >= self.max_sweeps {
                return false;
            }
            let active: Vec<usize> = (0..self.s.p)
                .filter(|&j| self.s.live[j] && (beta[j] != 0.0 || self.pf[j] == 0.0))
                .collect();
            loop {
                let mut change = update_b0(b0, &mut r);
                for &j in &active {
                    change = change.max(update(j, beta, &mut r));
                }
                sweeps += 1;
                if change < thr {
                    break;
                }
                if sweeps >= self.max_sweeps {
                    return false;
                }
            }
        }
    }

    /// Full problem at one λ, warm-started from (b0, beta). Convergence is
    /// relative to the null deviance per observation.
    fn fit(&self, y: &[f64], kind: TraitKind, lambda: f64, b0: &mut f64, beta: &mut [f64]) -> bool {
        let n = self.s.n;
        let thr = self.tol * (null_deviance(kind, y) / n as f64).max(f64::MIN_POSITIVE);
        match kind {
            TraitKind::Quantitative => self.solve(&vec![1.0; n], y, lambda, thr, b0, beta),
            TraitKind::Dichotomous => {
                let mut ok = true;
                for _ in 0..IRLS_MAX {
                    let eta = self.eta(*b0, beta);
                    let mut w = Vec::with_capacity(n);
                    let mut z = Vec::with_capacity(n);
                    for i in 0..n {
                        let mu = stats::logistic(eta[i]);
                        let wi = (mu * (1.0 - mu)).max(1e-5);
                        w.push(wi);
                        z.push(eta[i] + (y[i] - mu) / wi);
                    }
                    let v: Vec<f64> = (0..self.s.p)
                        .map(|j| self.s.col(j).iter().zip(&w).map(|(x, wi)| wi * x * x).sum::<f64>() / n as f64)
                        .collect();
                    let (ob0, obeta) = (*b0, beta.to_vec());
                    ok &= self.solve(&w, &z, lambda, thr, b0, beta);
                    let wbar = w.iter().sum::<f64>() / n as f64;
                    let moved = beta
                        .iter()
                        .zip(&obeta)
                        .zip(&v)
                        .map(|((a, b), vj)| vj * (a - b) * (a - b))
                        .fold(wbar * (*b0 - ob0) * (*b0 - ob0), f64::max);
                    if moved < thr {
                        return ok;
                    }
                }
                false
            }
        }
    }

    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.s.n];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.s.col(j)) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    /// Smallest λ at which every penalised coefficient is zero.
    fn lambda_max(&self, y: &[f64], kind: TraitKind) -> f64 {
        let mut b0 = 0.0;
        let mut beta = vec![0.0; self.s.p];
        self.fit(y, kind, f64::INFINITY, &mut b0, &mut beta);
        let eta = self.eta(b0, &beta);
        let resid: Vec<f64> = match kind {
            TraitKind::Quantitative => y.iter().zip(&eta).map(|(a, b)| a - b).collect(),
            TraitKind::Dichotomous => y.iter().zip(&eta).map(|(a, b)| a - stats::logistic(*b)).collect(),
        };
        let nf = self.s.n as f64;
        let alpha = self.alpha.max(1e-3);
        (0..self.s.p)
            .filter(|&j| self.s.live[j] && self.pf[j] > 0.0)
            .map(|j| {
                let g = self.s.col(j).iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / nf;
                g.abs() / (self.pf[j] * alpha)
            })
            .fold(0.0, f64::max)
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], kind: TraitKind, penalty: Option<&[f64]>) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::Shape(format!("design has {n} rows, response has {}", y.len())));
    }
    if n < 2 || p == 0 {
        return Err(Error::Empty("regression design".into()));
    }
    if kind == TraitKind::Dichotomous && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidConfig("dichotomous response must be 0/1".into()));
    }
    let pf = penalty.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; p]);
    if pf.len() != p || pf.iter().any(|&f| !(f >= 0.0)) {
        return Err(Error::InvalidConfig("penalty factors must be non-negative, one per column".into()));
    }
    Ok(pf)
}

fn lambda_grid(lmax: f64, opts: &PathOptions) -> Vec<f64> {
    let lmax = if lmax > 0.0 { lmax } else { 1e-12 };
    let l = opts.path_len;
    (0..l)
        .map(|k| {
            let frac = if l == 1 { 0.0 } else { k as f64 / (l - 1) as f64 };
            lmax * 10f64.powf(-opts.decades * frac)
        })
        .collect()
}

fn held_out_error(kind: TraitKind, y: &[f64], eta: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    match kind {
        TraitKind::Quantitative => y.iter().zip(eta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n,
        TraitKind::Dichotomous => {
            -2.0 * y
                .iter()
                .zip(eta)
                .map(|(&a, &e)| {
                    let m = stats::logistic(e).clamp(1e-12, 1.0 - 1e-12);
                    a * m.ln() + (1.0 - a) * (1.0 - m).ln()
                })
                .sum::<f64>()
                / n
        }
    }
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn deviance(kind: TraitKind, y: &[f64], eta: &[f64]) -> f64 {
    held_out_error(kind, y, eta) * y.len() as f64
}

/// Deviance of the intercept-only model.
fn null_deviance(kind: TraitKind, y: &[f64]) -> f64 {
    let ybar = stats::mean(y);
    let eta0 = match kind {
        TraitKind::Quantitative => ybar,
        TraitKind::Dichotomous => stats::logit(ybar.clamp(1e-12, 1.0 - 1e-12)),
    };
    deviance(kind, y, &vec![eta0; y.len()])
}

/// Path fits along `lambdas` with warm starts; standardised coefficients.
/// With `early_stop`, once the fraction of deviance explained exceeds 0.999,
/// or gains less than 1e-5 of itself between neighbours (after the first
/// 5 λ), the remaining λ reuse the last fit.
fn run_path(cd: &Cd, y: &[f64], kind: TraitKind, lambdas: &[f64], early_stop: bool) -> (Vec<(f64, Vec<f64>)>, bool) {
    let mut b0 = 0.0;
    let mut beta = vec![0.0; cd.s.p];
    let mut ok = true;
    let mut out = Vec::with_capacity(lambdas.len());
    let null_dev = null_deviance(kind, y);
    let mut prev_ratio = f64::NEG_INFINITY;
    let mut stopped = false;
    for (k, &l) in lambdas.iter().enumerate() {
        if !stopped {
            ok &= cd.fit(y, kind, l, &mut b0, &mut beta);
            if early_stop && null_dev > 0.0 {
                let ratio = 1.0 - deviance(kind, y, &cd.eta(b0, &beta)) / null_dev;
                stopped = k + 1 >= 5 && (ratio > 0.999 || ratio - prev_ratio < 1e-5 * ratio.abs());
                prev_ratio = ratio;
            }
        }
        out.push((b0, beta.clone()));
    }
    (out, ok)
}

fn fold_ids(n: usize, folds: usize, seed_value: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value));
    let mut ids = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        ids[i] = rank % folds;
    }
    ids
}

fn cv_path(
    x: &DMatrix<f64>,
    y: &[f64],
    kind: TraitKind,
    pf: &[f64],
    alpha: f64,
    opts: &PathOptions,
) -> Result<(Standardized, Vec<f64>, Vec<f64>, usize, bool)> {
    opts.validate()?;
    let n = x.nrows();
    if n < opts.folds {
        return Err(Error::InvalidConfig(format!("{n} samples cannot fill {} folds", opts.folds)));
    }
    let full = Standardized::new(x);
    let cd = Cd { s: &full, pf, alpha, tol: opts.tol, max_sweeps: opts.max_sweeps };
    let lambdas = lambda_grid(cd.lambda_max(y, kind), opts);
    let ids = fold_ids(n, opts.folds, opts.seed);
    let mut err = vec![0.0; lambdas.len()];
    let mut ok = true;
    for f in 0..opts.folds {
        let train: Vec<usize> = (0..n).filter(|&i| ids[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| ids[i] == f).collect();
        let s = Standardized::new(&select_rows(x, &train));
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let cd = Cd { s: &s, pf, alpha, tol: opts.tol, max_sweeps: opts.max_sweeps };
        let (fits, fold_ok) = run_path(&cd, &ytr, kind, &lambdas, true);
        ok &= fold_ok;
        for (k, (b0, beta)) in fits.iter().enumerate() {
            let eta = s.predict(x, &test, *b0, beta);
            err[k] += held_out_error(kind, &yte, &eta) / opts.folds as f64;
        }
    }
    let best = (0..err.len()).fold(0, |b, k| if err[k] < err[b] { k } else { b });
    Ok((full, lambdas, err, best, ok))
}

/// Lasso over a log-spaced path with the penalty chosen by K-fold CV.
/// Columns with penalty factor 0 enter unpenalised.
pub fn lasso_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    kind: TraitKind,
    penalty: Option<&[f64]>,
    opts: &PathOptions,
) -> Result<RegularizedFit> {
    let pf = check_inputs(x, y, kind, penalty)?;
    let (full, lambdas, cv_error, best, ok) = cv_path(x, y, kind, &pf, 1.0, opts)?;
    let cd = Cd { s: &full, pf: &pf, alpha: 1.0, tol: opts.tol, max_sweeps: opts.max_sweeps };
    let (fits, full_ok) = run_path(&cd, y, kind, &lambdas[..=best], false);
    let (b0, beta) = fits.last().expect("non-empty path");
    let (intercept, coef) = full.unscale(*b0, beta);
    Ok(RegularizedFit {
        intercept,
        coef,
        lambda: lambdas[best],
        path: lambdas,
        cv_error,
        converged: ok && full_ok,
    })
}

/// Lasso at a single λ on the standardised objective
/// (1/2n)‖y − b0 − Xβ‖² (or the mean logistic deviance / 2) + λ Σ pf_j |β_j|.
pub fn lasso_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    kind: TraitKind,
    penalty: Option<&[f64]>,
    lambda: f64,
    opts: &PathOptions,
) -> Result<RegularizedFit> {
    let pf = check_inputs(x, y, kind, penalty)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be non-negative")));
    }
    let s = Standardized::new(x);
    let cd = Cd { s: &s, pf: &pf, alpha: 1.0, tol: opts.tol, max_sweeps: opts.max_sweeps };
    let mut b0 = 0.0;
    let mut beta = vec![0.0; s.p];
    let ok = cd.fit(y, kind, lambda, &mut b0, &mut beta);
    let (intercept, coef) = s.unscale(b0, &beta);
    Ok(RegularizedFit { intercept, coef, lambda, path: vec![], cv_error: vec![], converged: ok })
}

/// λ_max of the standardised lasso problem.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &[f64], kind: TraitKind, penalty: Option<&[f64]>) -> Result<f64> {
    let pf = check_inputs(x, y, kind, penalty)?;
    let s = Standardized::new(x);
    let opts = PathOptions::default();
    let cd = Cd { s: &s, pf: &pf, alpha: 1.0, tol: opts.tol, max_sweeps: opts.max_sweeps };
    Ok(cd.lambda_max(y, kind))
}

/// Ridge regression on the raw design with an unpenalised intercept:
/// minimises ½‖y − b0 − Xβ‖² + ½ λ Σ pf_j β_j² (quantitative, exact normal
/// equations) or −loglik + ½ λ Σ pf_j β_j² (dichotomous, Newton).
pub fn ridge_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    kind: TraitKind,
    penalty: Option<&[f64]>,
    lambda: f64,
) -> Result<RegularizedFit> {
    let pf = check_inputs(x, y, kind, penalty)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be non-negative")));
    }
    let (n, p) = x.shape();
    let pen: Vec<f64> = pf.iter().map(|f| f * lambda).collect();
    match kind {
        TraitKind::Quantitative => {
            let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
            let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
            let ym = stats::mean(y);
            let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
            let mut a = xc.tr_mul(&xc);
            for j in 0..p {
                a[(j, j)] += pen[j];
            }
            let beta = linalg::solve_spd(&a, &xc.tr_mul(&yc))?;
            let intercept = ym - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
            Ok(RegularizedFit {
                intercept,
                coef: beta.iter().copied().collect(),
                lambda,
                path: vec![],
                cv_error: vec![],
                converged: true,
            })
        }
        TraitKind::Dichotomous => {
            let (b0, beta, ok) = logistic_ridge_newton(x, y, &pen, None)?;
            Ok(RegularizedFit {
                intercept: b0,
                coef: beta.iter().copied().collect(),
                lambda,
                path: vec![],
                cv_error: vec![],
                converged: ok,
            })
        }
    }
}

/// Ridge with λ chosen by K-fold CV over a log-spaced path (solved by
/// coordinate descent), then refitted exactly at the chosen λ.
pub fn ridge_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    kind: TraitKind,
    penalty: Option<&[f64]>,
    opts: &PathOptions,
) -> Result<RegularizedFit> {
    let pf = check_inputs(x, y, kind, penalty)?;
    let (full, lambdas, cv_error, best, ok) = cv_path(x, y, kind, &pf, 0.0, opts)?;
    // Standardised objective (1/2n) loss + λ/2 Σ β² equals the raw ridge
    // problem on the standardised design with penalty nλ.
    let xs = DMatrix::from_vec(full.n, full.p, full.x.clone());
    let refit = ridge_fit(&xs, y, kind, Some(&pf), full.n as f64 * lambdas[best])?;
    let (intercept, coef) = full.unscale(refit.intercept, &refit.coef);
    Ok(RegularizedFit {
        intercept,
        coef,
        lambda: lambdas[best],
        path: lambdas,
        cv_error,
        converged: ok && refit.converged,
    })
}
