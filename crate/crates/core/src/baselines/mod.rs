//! Linear comparators wrapped in a single-knockoff selection pipeline.

mod glm;
mod path;

pub use glm::{marginal_wald, GlmFit, NEWTON_MAX_ITER, NEWTON_TOL, Z_CAP};
pub use path::{lasso_cv, lasso_fit, lasso_lambda_max, ridge_cv, ridge_fit, PathOptions, RegularizedFit};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::filter::{ImportanceMatrix, KnockoffStats};
use crate::sim::TraitKind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Marginal,
    Lasso,
    Ridge,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Marginal => "marginal",
            BaselineMethod::Lasso => "lasso",
            BaselineMethod::Ridge => "ridge",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Self::Marginal),
            "lasso" => Ok(Self::Lasso),
            "ridge" => Ok(Self::Ridge),
            other => Err(Error::Parse(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    /// p × 2: original, knockoff.
    pub importance: ImportanceMatrix,
    pub stats: KnockoffStats,
    pub converged: bool,
}

/// Scores each original/knockoff pair with `method` and feeds
/// W = T(x_j) − T(x̃_j) to the single-knockoff filter.
pub fn baseline_pipeline(
    x: &DMatrix<f64>,
    knockoff: &DMatrix<f64>,
    covariates: Option<&DMatrix<f64>>,
    y: &[f64],
    kind: TraitKind,
    method: BaselineMethod,
    opts: &PathOptions,
    ids: Option<Vec<String>>,
) -> Result<BaselineResult> {
    let (n, p) = x.shape();
    if knockoff.shape() != (n, p) {
        return Err(Error::Shape(format!("knockoff is {:?}, features are {:?}", knockoff.shape(), (n, p))));
    }
    if let Some(c) = covariates {
        if c.nrows() != n {
            return Err(Error::Shape("covariates row count differs from features".into()));
        }
    }
    let mut values = vec![0.0; 2 * p];
    let mut converged = true;
    match method {
        BaselineMethod::Marginal => {
            for j in 0..p {
                for (slot, src) in [x, knockoff].into_iter().enumerate() {
                    let col = src.column(j);
                    let fit = marginal_wald(col.as_slice(), y, kind);
                    values[2 * j + slot] = match fit {
                        Ok(f) => {
                            converged &= f.converged;
                            f.importance()
                        }
                        // constant column carries no evidence
                        Err(Error::InvalidConfig(_)) => 0.0,
                        Err(e) => return Err(e),
                    };
                }
            }
        }
        BaselineMethod::Lasso | BaselineMethod::Ridge => {
            let c = covariates.map_or(0, |c| c.ncols());
            let design = DMatrix::from_fn(n, 2 * p + c, |i, j| {
                if j < p {
                    x[(i, j)]
                } else if j < 2 * p {
                    knockoff[(i, j - p)]
                } else {
                    covariates.expect("covariate column")[(i, j - 2 * p)]
                }
            });
            let pf: Vec<f64> = (0..2 * p + c).map(|j| if j < 2 * p { 1.0 } else { 0.0 }).collect();
            let fit = if method == BaselineMethod::Lasso {
                lasso_cv(&design, y, kind, Some(&pf), opts)?
            } else {
                ridge_cv(&design, y, kind, Some(&pf), opts)?
            };
            converged = fit.converged;
            for j in 0..p {
                values[2 * j] = fit.coef[j].abs();
                values[2 * j + 1] = fit.coef[p + j].abs();
            }
        }
    }
    let importance = match ids {
        Some(ids) => ImportanceMatrix::new(ids, 1, values)?,
        None => ImportanceMatrix::with_default_ids(p, 1, values)?,
    };
    let stats = KnockoffStats::compute(&importance)?;
    Ok(BaselineResult { method, importance, stats, converged })
}
