use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GenotypeMatrix;
use crate::{seed, stats, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitKind {
    Quantitative,
    Dichotomous,
}

impl TraitKind {
    /// Σ β_j² var(g_j) target.
    pub fn default_variance_target(self) -> f64 {
        match self {
            TraitKind::Quantitative => 0.06,
            TraitKind::Dichotomous => 0.2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraitKind::Quantitative => "quantitative",
            TraitKind::Dichotomous => "dichotomous",
        }
    }
}

impl std::fmt::Display for TraitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TraitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quantitative" | "q" => Ok(TraitKind::Quantitative),
            "dichotomous" | "binary" | "d" => Ok(TraitKind::Dichotomous),
            other => Err(Error::Parse(format!("unknown trait kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignPattern {
    FirstNegative,
    AllPositive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectSizes {
    pub a: f64,
    pub beta: Vec<f64>,
}

/// β_j = ±a / √(2 m_j (1 − m_j)) with `a` chosen so that
/// Σ β_j² var(g_j) = `target` using the supplied empirical variances.
pub fn effect_sizes(mafs: &[f64], variances: &[f64], target: f64, signs: SignPattern) -> Result<EffectSizes> {
    if mafs.is_empty() || mafs.len() != variances.len() {
        return Err(Error::Shape(format!(
            "{} MAFs vs {} variances",
            mafs.len(),
            variances.len()
        )));
    }
    if !(target > 0.0) {
        return Err(Error::InvalidConfig(format!("variance target {target} must be positive")));
    }
    if let Some(j) = variances.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Numerical(format!("causal variant {j} has zero variance")));
    }
    if mafs.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
        return Err(Error::InvalidConfig("causal MAF outside (0, 1)".into()));
    }
    let unit: Vec<f64> = mafs.iter().map(|&m| 1.0 / (2.0 * m * (1.0 - m)).sqrt()).collect();
    let denom: f64 = unit.iter().zip(variances).map(|(u, v)| u * u * v).sum();
    let a = (target / denom).sqrt();
    let beta = unit
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let sign = if j == 0 && signs == SignPattern::FirstNegative { -1.0 } else { 1.0 };
            sign * a * u
        })
        .collect();
    Ok(EffectSizes { a, beta })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitSpec {
    pub kind: TraitKind,
    pub causal: Vec<usize>,
    pub beta: Vec<f64>,
    pub a: f64,
    pub c: f64,
    pub noise_variance: f64,
    /// Multiplier on the N(0, 1) covariate; 0 removes it.
    pub covariate_effect: f64,
    pub prevalence: f64,
}

impl TraitSpec {
    fn validate(&self, g: &GenotypeMatrix) -> Result<()> {
        if self.causal.is_empty() || self.causal.len() != self.beta.len() {
            return Err(Error::InvalidConfig("trait needs matching non-empty causal and beta lists".into()));
        }
        if let Some(&j) = self.causal.iter().find(|&&j| j >= g.p()) {
            return Err(Error::Shape(format!("causal index {j} out of range for {} variants", g.p())));
        }
        Ok(())
    }

    /// Σ β_j g_ij for every sample.
    pub fn burden(&self, g: &GenotypeMatrix) -> Vec<f64> {
        let mut b = vec![0.0; g.n()];
        for (&j, &beta) in self.causal.iter().zip(&self.beta) {
            for (bi, &d) in b.iter_mut().zip(g.column(j)) {
                *bi += beta * f64::from(d);
            }
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phenotype {
    pub y: Vec<f64>,
    /// The covariate X_{i1} as drawn (before `covariate_effect`).
    pub x1: Vec<f64>,
    pub intercept: Option<f64>,
    pub mu: Option<Vec<f64>>,
}

fn draw_covariate(n: usize, rng: &mut seed::Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// y = γ·x1 + C·(Σ β_j g_j)² + ε, ε ~ N(0, noise_variance).
pub fn gen_quantitative(g: &GenotypeMatrix, spec: &TraitSpec, seed_value: u64) -> Result<Phenotype> {
    spec.validate(g)?;
    if !(spec.noise_variance >= 0.0) {
        return Err(Error::InvalidConfig("noise variance must be non-negative".into()));
    }
    let mut rng = seed::rng(seed_value);
    let x1 = draw_covariate(g.n(), &mut rng);
    let noise = Normal::new(0.0, spec.noise_variance.sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let y = spec
        .burden(g)
        .iter()
        .zip(&x1)
        .map(|(b, x)| spec.covariate_effect * x + spec.c * b * b + noise.sample(&mut rng))
        .collect();
    Ok(Phenotype { y, x1, intercept: None, mu: None })
}

/// Mean of logistic(β0 + η_i) as a function of β0 is increasing, so β0 is
/// bracketed and bisected until it matches the prevalence.
fn solve_intercept(eta: &[f64], prevalence: f64) -> Result<f64> {
    let mean_mu = |b0: f64| eta.iter().map(|e| stats::logistic(b0 + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-10.0, 10.0);
    let mut widen = 0;
    while mean_mu(lo) > prevalence || mean_mu(hi) < prevalence {
        widen += 1;
        if widen > 20 {
            return Err(Error::Numerical(format!("cannot bracket intercept for prevalence {prevalence}")));
        }
        lo *= 2.0;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_mu(mid) < prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// logit μ = β0 + γ·x1 + C·(Σ β_j g_j)²; y ~ Bernoulli(μ).
pub fn gen_dichotomous(g: &GenotypeMatrix, spec: &TraitSpec, seed_value: u64) -> Result<Phenotype> {
    spec.validate(g)?;
    if !(spec.prevalence > 0.0 && spec.prevalence < 1.0) {
        return Err(Error::InvalidConfig(format!("prevalence {} outside (0, 1)", spec.prevalence)));
    }
    let mut rng = seed::rng(seed_value);
    let x1 = draw_covariate(g.n(), &mut rng);
    let eta: Vec<f64> = spec
        .burden(g)
        .iter()
        .zip(&x1)
        .map(|(b, x)| spec.covariate_effect * x + spec.c * b * b)
        .collect();
    let b0 = solve_intercept(&eta, spec.prevalence)?;
    let mu: Vec<f64> = eta.iter().map(|e| stats::logistic(b0 + e)).collect();
    let y = mu
        .iter()
        .map(|&m| if rng.random::<f64>() < m { 1.0 } else { 0.0 })
        .collect();
    Ok(Phenotype { y, x1, intercept: Some(b0), mu: Some(mu) })
}

pub fn generate_trait(g: &GenotypeMatrix, spec: &TraitSpec, seed_value: u64) -> Result<Phenotype> {
    match spec.kind {
        TraitKind::Quantitative => gen_quantitative(g, spec, seed_value),
        TraitKind::Dichotomous => gen_dichotomous(g, spec, seed_value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_bisection_hits_closed_form() {
        let b0 = solve_intercept(&[0.0; 7], 0.1).unwrap();
        assert!((b0 - (0.1f64 / 0.9).ln()).abs() < 1e-10);
    }

    #[test]
    fn kind_roundtrip() {
        for k in [TraitKind::Quantitative, TraitKind::Dichotomous] {
            assert_eq!(k.to_string().parse::<TraitKind>().unwrap(), k);
        }
    }
}
