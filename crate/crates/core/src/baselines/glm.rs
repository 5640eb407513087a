use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sim::TraitKind;
use crate::{linalg, stats, Error, Result};

/// Cap on |z| for perfect fits and separated logistic data.
pub const Z_CAP: f64 = 37.0;
pub const NEWTON_MAX_ITER: usize = 25;
pub const NEWTON_TOL: f64 = 1e-8;

/// Intercept plus one slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coef: [f64; 2],
    pub se: [f64; 2],
    pub z: [f64; 2],
    pub p_values: [f64; 2],
    pub converged: bool,
    pub iterations: usize,
}

impl GlmFit {
    /// |z| of the slope, clamped to [`Z_CAP`].
    pub fn importance(&self) -> f64 {
        let z = self.z[1].abs();
        if z.is_finite() {
            z.min(Z_CAP)
        } else {
            Z_CAP
        }
    }

    fn capped(coef: [f64; 2], converged: bool, iterations: usize) -> Self {
        let sign = if coef[1] < 0.0 { -1.0 } else { 1.0 };
        Self {
            coef,
            se: [0.0, 0.0],
            z: [f64::NAN, sign * Z_CAP],
            p_values: [f64::NAN, 0.0],
            converged,
            iterations,
        }
    }
}

/// Single-predictor Wald test: OLS t-test for quantitative traits, logistic
/// regression by Newton's method for dichotomous ones.
pub fn marginal_wald(x: &[f64], y: &[f64], kind: TraitKind) -> Result<GlmFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("x has {n} values, y has {}", y.len())));
    }
    if n < 3 {
        return Err(Error::Empty("marginal test needs at least 3 samples".into()));
    }
    let xm = stats::mean(x);
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    if sxx <= 1e-12 * n as f64 {
        return Err(Error::InvalidConfig("marginal test on a constant predictor".into()));
    }
    match kind {
        TraitKind::Quantitative => Ok(linear_wald(x, y, xm, sxx)),
        TraitKind::Dichotomous => logistic_wald(x, y),
    }
}

fn linear_wald(x: &[f64], y: &[f64], xm: f64, sxx: f64) -> GlmFit {
    let n = x.len() as f64;
    let ym = stats::mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let b1 = sxy / sxx;
    let b0 = ym - b1 * xm;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - b0 - b1 * a).powi(2)).sum();
    let tss: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    if rss <= 1e-24 * tss.max(1e-300) {
        return GlmFit::capped([b0, b1], true, 0);
    }
    let df = n - 2.0;
    let s2 = rss / df;
    let se1 = (s2 / sxx).sqrt();
    let se0 = (s2 * (1.0 / n + xm * xm / sxx)).sqrt();
    let z = [b0 / se0, b1 / se1];
    GlmFit {
        coef: [b0, b1],
        se: [se0, se1],
        z,
        p_values: [stats::two_sided_t_p(z[0], df), stats::two_sided_t_p(z[1], df)],
        converged: true,
        iterations: 0,
    }
}

fn logistic_wald(x: &[f64], y: &[f64]) -> Result<GlmFit> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidConfig("dichotomous response must be 0/1".into()));
    }
    let ybar = stats::mean(y);
    if ybar == 0.0 || ybar == 1.0 {
        return Ok(GlmFit::capped([0.0, 0.0], false, 0));
    }
    let mut beta = [stats::logit(ybar), 0.0];
    for it in 1..=NEWTON_MAX_ITER {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let mu = stats::logistic(beta[0] + beta[1] * xi);
            let w = mu * (1.0 - mu);
            g0 += yi - mu;
            g1 += (yi - mu) * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 1e-300) || !det.is_finite() {
            return Ok(GlmFit::capped(beta, false, it));
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        beta[0] += d0;
        beta[1] += d1;
        if !beta[1].is_finite() || beta[1].abs() > 1e6 {
            return Ok(GlmFit::capped(beta, false, it));
        }
        if d0.abs().max(d1.abs()) < NEWTON_TOL {
            let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
            for &xi in x {
                let mu = stats::logistic(beta[0] + beta[1] * xi);
                let w = mu * (1.0 - mu);
                h00 += w;
                h01 += w * xi;
                h11 += w * xi * xi;
            }
            let det = h00 * h11 - h01 * h01;
            let se = [(h11 / det).sqrt(), (h00 / det).sqrt()];
            if !(se[1].is_finite() && se[1] > 0.0) {
                return Ok(GlmFit::capped(beta, false, it));
            }
            let z = [beta[0] / se[0], beta[1] / se[1]];
            return Ok(GlmFit {
                coef: beta,
                se,
                z,
                p_values: [stats::two_sided_normal_p(z[0]), stats::two_sided_normal_p(z[1])],
                converged: true,
                iterations: it,
            });
        }
    }
    Ok(GlmFit::capped(beta, false, NEWTON_MAX_ITER))
}

/// Penalised logistic regression by Newton's method:
/// minimises −loglik + ½ Σ λ_j β_j² with an unpenalised intercept.
/// Returns (intercept, slopes, converged).
pub(crate) fn logistic_ridge_newton(
    x: &DMatrix<f64>,
    y: &[f64],
    penalty: &[f64],
    start: Option<(f64, DVector<f64>)>,
) -> Result<(f64, DVector<f64>, bool)> {
    let (n, p) = x.shape();
    let (mut b0, mut beta) = start.unwrap_or_else(|| (stats::logit(stats::mean(y).clamp(1e-6, 1.0 - 1e-6)), DVector::zeros(p)));
    for _ in 0..50 {
        let eta = x * &beta;
        let mut w = DVector::zeros(n);
        let mut r = DVector::zeros(n);
        for i in 0..n {
            let mu = stats::logistic(b0 + eta[i]);
            w[i] = (mu * (1.0 - mu)).max(1e-10);
            r[i] = y[i] - mu;
        }
        // Hessian of the full (intercept, slopes) system.
        let mut h = DMatrix::zeros(p + 1, p + 1);
        let mut g = DVector::zeros(p + 1);
        h[(0, 0)] = w.sum();
        g[0] = r.sum();
        let wx = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
        let xtwx = x.tr_mul(&wx);
        let colw = wx.row_sum();
        let xtr = x.tr_mul(&r);
        for j in 0..p {
            h[(0, j + 1)] = colw[j];
            h[(j + 1, 0)] = colw[j];
            g[j + 1] = xtr[j] - penalty[j] * beta[j];
            for k in 0..p {
                h[(j + 1, k + 1)] = xtwx[(j, k)];
            }
            h[(j + 1, j + 1)] += penalty[j];
        }
        let step = linalg::solve_spd(&h, &g)?;
        b0 += step[0];
        for j in 0..p {
            beta[j] += step[j + 1];
        }
        if step.amax() < NEWTON_TOL {
            return Ok((b0, beta, true));
        }
    }
    Ok((b0, beta, false))
}
