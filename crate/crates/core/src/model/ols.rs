//! Least-squares baseline fitted on standardized features via the normal
//! equations with a small ridge term against near-singularity.

use serde::{Deserialize, Serialize};

use super::{
    FeatureMatrix, ModelArtifact, ModelError, ModelFamily, ModelParams, TrainMeta,
    ARTIFACT_FORMAT_VERSION,
};

pub const DEFAULT_RIDGE_EPS: f64 = 1e-8;

/// Frozen linear coefficients. `raw_*` values are on the original feature
/// scale; predictions use those directly so no standardization pass is
/// needed at inference time (the two forms are algebraically identical).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OlsParams {
    pub std_intercept: f64,
    pub std_coef: Vec<f64>,
    pub raw_intercept: f64,
    pub raw_coef: Vec<f64>,
    /// Set when the unregularized normal matrix was not positive definite.
    pub singular: bool,
    pub ridge_eps: f64,
}

impl OlsParams {
    pub fn from_raw(raw_coef: Vec<f64>, raw_intercept: f64) -> Self {
        Self {
            std_intercept: raw_intercept,
            std_coef: raw_coef.clone(),
            raw_intercept,
            raw_coef,
            singular: false,
            ridge_eps: 0.0,
        }
    }

    pub fn predict_raw(&self, features: &[f64]) -> f64 {
        let mut acc = self.raw_intercept;
        for (w, x) in self.raw_coef.iter().zip(features) {
            acc += w * x;
        }
        acc
    }
}

/// Fits ordinary least squares on z-scored features plus an intercept.
/// The normal equations get `ridge_eps` added to the diagonal; when the
/// unregularized system is not positive definite the artifact carries a
/// singularity flag and a metadata note.
pub fn fit_ols(m: &FeatureMatrix, ridge_eps: f64) -> Result<ModelArtifact, ModelError> {
    if m.n_rows() < 2 {
        return Err(ModelError::InsufficientData {
            needed: 2,
            got: m.n_rows(),
        });
    }
    if !(ridge_eps >= 0.0) {
        return Err(ModelError::InvalidConfig(format!(
            "ridge_eps must be >= 0, got {ridge_eps}"
        )));
    }
    // canonical row order makes the fit exactly invariant to input
    // permutation (stats and normal equations accumulate identically)
    let canon = m.subset(&m.canonical_order());
    let stats = canon.fit_stats();
    let z = canon.standardized(&stats)?;
    let d = z.n_features();
    let dim = d + 1; // intercept first

    // normal matrix A = X'X and rhs b = X'y
    let mut a = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    let mut aug = vec![0.0; dim];
    for i in 0..z.n_rows() {
        aug[0] = 1.0;
        aug[1..].copy_from_slice(z.row(i));
        let target = z.targets()[i];
        for r in 0..dim {
            for c in r..dim {
                a[r * dim + c] += aug[r] * aug[c];
            }
            b[r] += aug[r] * target;
        }
    }
    for r in 0..dim {
        for c in 0..r {
            a[r * dim + c] = a[c * dim + r];
        }
    }

    let singular = cholesky_solve(&a, &b, dim, 0.0).is_none();
    let mut regularized = a.clone();
    for k in 0..dim {
        regularized[k * dim + k] += ridge_eps;
    }
    let beta = cholesky_solve(&regularized, &b, dim, 0.0).ok_or_else(|| {
        ModelError::InvalidConfig(format!(
            "normal equations not solvable even with ridge_eps {ridge_eps}"
        ))
    })?;

    let std_intercept = beta[0];
    let std_coef = beta[1..].to_vec();
    let mut raw_coef = vec![0.0; d];
    let mut raw_intercept = std_intercept;
    for j in 0..d {
        if stats.constant[j] {
            raw_coef[j] = 0.0;
        } else {
            raw_coef[j] = std_coef[j] / stats.std[j];
            raw_intercept -= std_coef[j] * stats.mean[j] / stats.std[j];
        }
    }

    let params = OlsParams {
        std_intercept,
        std_coef,
        raw_intercept,
        raw_coef,
        singular,
        ridge_eps,
    };
    let train_mse = {
        let mut acc = 0.0;
        for i in 0..canon.n_rows() {
            let e = params.predict_raw(canon.row(i)) - canon.targets()[i];
            acc += e * e;
        }
        acc / canon.n_rows() as f64
    };
    let mut notes = vec![format!("ridge_eps={ridge_eps} applied to normal-equation diagonal")];
    if singular {
        notes.push("normal matrix singular without ridge; coefficients are ridge-regularized".into());
    }
    Ok(ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        family: ModelFamily::Ols,
        n_features: d,
        stats,
        params: ModelParams::Ols(params),
        meta: TrainMeta {
            seed: 0,
            epochs_or_stages: 1,
            final_train_loss: Some(train_mse),
            final_val_loss: None,
            loss_curve: Vec::new(),
            notes,
            config: serde_json::json!({ "family": "ols", "ridge_eps": ridge_eps }),
        },
    })
}

/// Cholesky factor + solve; returns None when the matrix is not positive
/// definite (any pivot <= `floor`).
fn cholesky_solve(a: &[f64], b: &[f64], dim: usize, floor: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..=r {
            let mut sum = a[r * dim + c];
            for k in 0..c {
                sum -= l[r * dim + k] * l[c * dim + k];
            }
            if r == c {
                if sum <= floor || !sum.is_finite() {
                    return None;
                }
                l[r * dim + c] = sum.sqrt();
            } else {
                l[r * dim + c] = sum / l[c * dim + c];
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0; dim];
    for r in 0..dim {
        let mut sum = b[r];
        for k in 0..r {
            sum -= l[r * dim + k] * y[k];
        }
        y[r] = sum / l[r * dim + r];
    }
    let mut x = vec![0.0; dim];
    for r in (0..dim).rev() {
        let mut sum = y[r];
        for k in r + 1..dim {
            sum -= l[k * dim + r] * x[k];
        }
        x[r] = sum / l[r * dim + r];
    }
    Some(x)
}
