//! Model families and the shared artifact container.
//!
//! All five families fit per-origin visitation shares from the frozen
//! 22-feature layout (internally width-generic so tests can use small
//! synthetic designs). A fitted [`ModelArtifact`] is frozen: predictions
//! are deterministic functions of input rows, and the feature statistics
//! captured at fit time travel with the parameters.

pub mod deep_gravity;
pub mod gbt;
pub mod hgnn;
pub mod mlp;
mod nn;
pub mod ols;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, FeatureRow, FeatureStats, ODDataset};

pub use deep_gravity::{
    fit_deep_gravity, softmax_training_rows, CandidateSets, DeepGravityConfig,
    DeepGravityLossProbe, Objective,
};
pub use gbt::{fit_gbt, GbtConfig};
pub use hgnn::{
    build_graph, fit_hgnn, CandidateRule, EdgeTarget, HeteroGraph, HgnnConfig, HgnnLossProbe,
};
pub use mlp::{fit_mlp, Activation, MlpConfig, MlpLossProbe};
pub use ols::fit_ols;
#[cfg(test)]
pub(crate) use nn::check_gradient;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least {needed} rows to fit, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("row has {found} features, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("origin {origin} has an empty candidate destination set")]
    EmptyCandidateSet { origin: String },
    #[error("rows do not cover candidate set of origin {origin}: missing {missing}")]
    CandidateCoverage { origin: String, missing: String },
    #[error("graph model has no embedding for node {id}; it was not in the training graph")]
    UnknownNode { id: String },
    #[error("{family} artifacts do not support per-row feature prediction")]
    UnsupportedRowPredict { family: ModelFamily },
    #[error("artifact file {path}: {message}")]
    Artifact { path: String, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The five supported model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Ols,
    Gbt,
    Mlp,
    DeepGravity,
    Hgnn,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelFamily::Ols => "ols",
            ModelFamily::Gbt => "gbt",
            ModelFamily::Mlp => "mlp",
            ModelFamily::DeepGravity => "deep_gravity",
            ModelFamily::Hgnn => "hgnn",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ols" => Ok(ModelFamily::Ols),
            "gbt" => Ok(ModelFamily::Gbt),
            "mlp" => Ok(ModelFamily::Mlp),
            "deep_gravity" => Ok(ModelFamily::DeepGravity),
            "hgnn" => Ok(ModelFamily::Hgnn),
            other => Err(format!(
                "unknown model family {other:?} (expected ols|gbt|mlp|deep_gravity|hgnn)"
            )),
        }
    }
}

/// Row-major design matrix with targets and interned pair identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_features: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    origin_ids: Vec<String>,
    dest_ids: Vec<String>,
    origin_of_row: Vec<u32>,
    dest_of_row: Vec<u32>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[FeatureRow]) -> Result<Self, ModelError> {
        let n_features = rows
            .first()
            .map(|r| r.features.len())
            .ok_or(ModelError::InsufficientData { needed: 1, got: 0 })?;
        let mut origin_ids: Vec<String> = Vec::new();
        let mut dest_ids: Vec<String> = Vec::new();
        let mut origin_lookup: BTreeMap<&str, u32> = BTreeMap::new();
        let mut dest_lookup: BTreeMap<&str, u32> = BTreeMap::new();
        let mut x = Vec::with_capacity(rows.len() * n_features);
        let mut y = Vec::with_capacity(rows.len());
        let mut origin_of_row = Vec::with_capacity(rows.len());
        let mut dest_of_row = Vec::with_capacity(rows.len());
        for r in rows {
            if r.features.len() != n_features {
                return Err(ModelError::ShapeMismatch {
                    expected: n_features,
                    found: r.features.len(),
                });
            }
            let o = *origin_lookup.entry(r.origin_zone_id.as_str()).or_insert_with(|| {
                origin_ids.push(r.origin_zone_id.clone());
                (origin_ids.len() - 1) as u32
            });
            let d = *dest_lookup.entry(r.hospital_id.as_str()).or_insert_with(|| {
                dest_ids.push(r.hospital_id.clone());
                (dest_ids.len() - 1) as u32
            });
            x.extend_from_slice(&r.features);
            y.push(r.target_share);
            origin_of_row.push(o);
            dest_of_row.push(d);
        }
        Ok(Self {
            n_features,
            x,
            y,
            origin_ids,
            dest_ids,
            origin_of_row,
            dest_of_row,
        })
    }

    /// Builds a matrix from bare rows/targets; every row becomes its own
    /// origin group. Intended for tests and generic regression fits.
    pub fn from_xy(n_features: usize, x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len() * n_features, "x/y shape mismatch");
        let n = y.len();
        Self {
            n_features,
            x,
            y,
            origin_ids: (0..n).map(|i| format!("r{i}")).collect(),
            dest_ids: vec!["d".to_string()],
            origin_of_row: (0..n as u32).collect(),
            dest_of_row: vec![0; n],
        }
    }

    /// Builds a matrix with explicit origin groups (`groups[i]` is the
    /// origin index of row i). Destinations are enumerated per row.
    pub fn from_grouped(n_features: usize, x: Vec<f64>, y: Vec<f64>, groups: Vec<u32>) -> Self {
        assert_eq!(x.len(), y.len() * n_features, "x/y shape mismatch");
        assert_eq!(groups.len(), y.len(), "group labels per row");
        let n_groups = groups.iter().copied().max().map_or(0, |m| m as usize + 1);
        let n = y.len();
        Self {
            n_features,
            x,
            y,
            origin_ids: (0..n_groups).map(|i| format!("g{i}")).collect(),
            dest_ids: (0..n).map(|i| format!("d{i}")).collect(),
            origin_of_row: groups,
            dest_of_row: (0..n as u32).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn origin_id_of_row(&self, i: usize) -> &str {
        &self.origin_ids[self.origin_of_row[i] as usize]
    }

    pub fn dest_id_of_row(&self, i: usize) -> &str {
        &self.dest_ids[self.dest_of_row[i] as usize]
    }

    /// Row indices grouped by origin, in first-appearance order.
    pub fn origin_groups(&self) -> Vec<(u32, Vec<usize>)> {
        let mut order: Vec<u32> = Vec::new();
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &o) in self.origin_of_row.iter().enumerate() {
            let entry = groups.entry(o).or_insert_with(|| {
                order.push(o);
                Vec::new()
            });
            entry.push(i);
        }
        order
            .into_iter()
            .map(|o| {
                let rows = groups.remove(&o).unwrap();
                (o, rows)
            })
            .collect()
    }

    /// New matrix containing the selected rows (identifier tables shared).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut x = Vec::with_capacity(rows.len() * self.n_features);
        let mut y = Vec::with_capacity(rows.len());
        let mut origin_of_row = Vec::with_capacity(rows.len());
        let mut dest_of_row = Vec::with_capacity(rows.len());
        for &i in rows {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
            origin_of_row.push(self.origin_of_row[i]);
            dest_of_row.push(self.dest_of_row[i]);
        }
        Self {
            n_features: self.n_features,
            x,
            y,
            origin_ids: self.origin_ids.clone(),
            dest_ids: self.dest_ids.clone(),
            origin_of_row,
            dest_of_row,
        }
    }

    /// Copy with features z-scored by `stats`.
    pub fn standardized(&self, stats: &FeatureStats) -> Result<Self, ModelError> {
        if stats.n_features() != self.n_features {
            return Err(ModelError::ShapeMismatch {
                expected: stats.n_features(),
                found: self.n_features,
            });
        }
        let mut out = self.clone();
        for row in out.x.chunks_exact_mut(self.n_features) {
            stats.apply(row)?;
        }
        Ok(out)
    }

    pub fn fit_stats(&self) -> FeatureStats {
        FeatureStats::fit(&self.x, self.n_features)
    }

    /// Deterministic row order independent of input permutation:
    /// lexicographic by feature values, then target. Ties (fully duplicate
    /// rows) are interchangeable, so fits on canonically ordered rows are
    /// exactly row-order invariant.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_rows()).collect();
        idx.sort_by(|&a, &b| {
            for j in 0..self.n_features {
                let ord = self.x[a * self.n_features + j]
                    .total_cmp(&self.x[b * self.n_features + j]);
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            self.y[a].total_cmp(&self.y[b])
        });
        idx
    }
}

/// Per-epoch loss record for gradient-trained families. Losses are
/// full-batch recomputations at epoch end with the epoch-end weights, so
/// the final entry matches an independent recomputation on the frozen
/// artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: Option<f64>,
}

/// Training metadata frozen into every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    /// Epochs for gradient-trained families, boosting stages for trees,
    /// 1 for closed-form fits.
    pub epochs_or_stages: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    /// Per-epoch curves for gradient-trained families; empty otherwise.
    pub loss_curve: Vec<EpochLoss>,
    /// Assumption flags and fit-time notices (degenerate origins,
    /// regularization fallbacks, unstated-hyperparameter defaults).
    pub notes: Vec<String>,
    /// Echo of the fitting configuration.
    pub config: serde_json::Value,
}

/// Family-specific frozen parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Ols(ols::OlsParams),
    Gbt(gbt::GbtParams),
    Mlp(mlp::MlpParams),
    DeepGravity(deep_gravity::DeepGravityParams),
    Hgnn(hgnn::HgnnParams),
}

/// A trained model of any family: frozen parameters, the feature
/// statistics used at fit time, and training metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub family: ModelFamily,
    pub n_features: usize,
    pub stats: FeatureStats,
    pub params: ModelParams,
    pub meta: TrainMeta,
}

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

impl ModelArtifact {
    /// One prediction per row. Simplex-mode families (softmax objective)
    /// return shares that sum to 1 over each origin's rows in `m`.
    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        if m.n_rows() == 0 {
            return Ok(Vec::new());
        }
        if m.n_features() != self.n_features {
            return Err(ModelError::ShapeMismatch {
                expected: self.n_features,
                found: m.n_features(),
            });
        }
        match &self.params {
            ModelParams::Ols(p) => Ok((0..m.n_rows()).map(|i| p.predict_raw(m.row(i))).collect()),
            ModelParams::Gbt(p) => Ok((0..m.n_rows()).map(|i| p.predict(m.row(i))).collect()),
            ModelParams::Mlp(p) => {
                let z = m.standardized(&self.stats)?;
                Ok((0..z.n_rows()).map(|i| p.predict(z.row(i))).collect())
            }
            ModelParams::DeepGravity(p) => {
                let z = m.standardized(&self.stats)?;
                p.predict_matrix(&z)
            }
            ModelParams::Hgnn(p) => p.predict_matrix(m, &self.stats),
        }
    }

    /// Convenience wrapper over [`ModelArtifact::predict`].
    pub fn predict_rows(&self, rows: &[FeatureRow]) -> Result<Vec<f64>, ModelError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        self.predict(&FeatureMatrix::from_rows(rows)?)
    }

    /// Scalar model output for a single raw feature vector, the quantity
    /// explanation tools sweep and attribute. For share-regression families
    /// this is the predicted share; for softmax-objective families it is
    /// the pair score (the softmax logit). Graph-embedding artifacts cannot
    /// evaluate arbitrary feature vectors and return an error.
    pub fn predict_row(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.n_features {
            return Err(ModelError::ShapeMismatch {
                expected: self.n_features,
                found: features.len(),
            });
        }
        match &self.params {
            ModelParams::Ols(p) => Ok(p.predict_raw(features)),
            ModelParams::Gbt(p) => Ok(p.predict(features)),
            ModelParams::Mlp(p) => {
                let mut z = features.to_vec();
                self.stats.apply(&mut z)?;
                Ok(p.predict(&z))
            }
            ModelParams::DeepGravity(p) => {
                let mut z = features.to_vec();
                self.stats.apply(&mut z)?;
                Ok(p.score(&z))
            }
            ModelParams::Hgnn(_) => Err(ModelError::UnsupportedRowPredict {
                family: ModelFamily::Hgnn,
            }),
        }
    }

    /// Builds a plain linear artifact from raw-scale weights. Useful for
    /// wrapping externally estimated linear models and for closed-form
    /// attribution tests.
    pub fn from_linear(weights: Vec<f64>, intercept: f64, stats: FeatureStats) -> Self {
        assert_eq!(weights.len(), stats.n_features());
        let n_features = weights.len();
        ModelArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            family: ModelFamily::Ols,
            n_features,
            stats,
            params: ModelParams::Ols(ols::OlsParams::from_raw(weights, intercept)),
            meta: TrainMeta {
                seed: 0,
                epochs_or_stages: 1,
                final_train_loss: None,
                final_val_loss: None,
                loss_curve: Vec::new(),
                notes: vec!["constructed directly from raw linear weights".to_string()],
                config: serde_json::Value::Null,
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| ModelError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, json).map_err(|e| ModelError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let artifact: ModelArtifact =
            serde_json::from_slice(&bytes).map_err(|e| ModelError::Artifact {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        if artifact.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::Artifact {
                path: path.display().to_string(),
                message: format!(
                    "unsupported artifact format version {}",
                    artifact.format_version
                ),
            });
        }
        Ok(artifact)
    }
}

/// Anything that maps one raw feature vector to a scalar model output and
/// carries the feature statistics of its fitting data. Explanation tools
/// (attribution, dependence sweeps) operate against this surface.
pub trait RowModel {
    fn n_features(&self) -> usize;
    fn feature_stats(&self) -> &FeatureStats;
    fn score_row(&self, features: &[f64]) -> Result<f64, ModelError>;
}

impl RowModel for ModelArtifact {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn feature_stats(&self) -> &FeatureStats {
        &self.stats
    }

    fn score_row(&self, features: &[f64]) -> Result<f64, ModelError> {
        self.predict_row(features)
    }
}

/// Hyperparameters for one family, dispatchable by the evaluation harness
/// and the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Ols { ridge_eps: f64 },
    Gbt(GbtConfig),
    Mlp(MlpConfig),
    DeepGravity(DeepGravityConfig),
    Hgnn(HgnnConfig),
}

impl ModelConfig {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelConfig::Ols { .. } => ModelFamily::Ols,
            ModelConfig::Gbt(_) => ModelFamily::Gbt,
            ModelConfig::Mlp(_) => ModelFamily::Mlp,
            ModelConfig::DeepGravity(_) => ModelFamily::DeepGravity,
            ModelConfig::Hgnn(_) => ModelFamily::Hgnn,
        }
    }

    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Ols => ModelConfig::Ols { ridge_eps: 1e-8 },
            ModelFamily::Gbt => ModelConfig::Gbt(GbtConfig::default()),
            ModelFamily::Mlp => ModelConfig::Mlp(MlpConfig::default()),
            ModelFamily::DeepGravity => ModelConfig::DeepGravity(DeepGravityConfig::default()),
            ModelFamily::Hgnn => ModelConfig::Hgnn(HgnnConfig::default()),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ModelConfig::Ols { .. } => {}
            ModelConfig::Gbt(_) => {}
            ModelConfig::Mlp(c) => c.seed = seed,
            ModelConfig::DeepGravity(c) => c.seed = seed,
            ModelConfig::Hgnn(c) => c.seed = seed,
        }
    }
}

/// Fits the configured family on the selected training rows of an
/// assembled dataset. `rows` are the observed feature rows; `train_idx`
/// selects the training subset. Simplex-objective families extend the
/// training set with zero-target rows for unobserved candidate pairs of
/// each covered origin (observed pairs held out of `train_idx` are left
/// out of the simplex support entirely).
pub fn fit_on_dataset(
    config: &ModelConfig,
    dataset: &ODDataset,
    rows: &[FeatureRow],
    train_idx: &[usize],
    seed: u64,
) -> Result<ModelArtifact, ModelError> {
    let train_rows: Vec<FeatureRow> = train_idx.iter().map(|&i| rows[i].clone()).collect();
    match config {
        ModelConfig::Ols { ridge_eps } => {
            ols::fit_ols(&FeatureMatrix::from_rows(&train_rows)?, *ridge_eps)
        }
        ModelConfig::Gbt(cfg) => gbt::fit_gbt(&FeatureMatrix::from_rows(&train_rows)?, cfg, seed),
        ModelConfig::Mlp(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            mlp::fit_mlp(&FeatureMatrix::from_rows(&train_rows)?, &cfg)
        }
        ModelConfig::DeepGravity(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let (m, candidates) = match cfg.objective {
                Objective::PerOriginSoftmaxCe => {
                    deep_gravity::softmax_training_rows(dataset, rows, train_idx)?
                }
                Objective::Mse => {
                    let m = FeatureMatrix::from_rows(&train_rows)?;
                    let candidates = CandidateSets::from_matrix(&m);
                    (m, candidates)
                }
            };
            deep_gravity::fit_deep_gravity(&m, &candidates, &cfg)
        }
        ModelConfig::Hgnn(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let graph = hgnn::build_graph(dataset, CandidateRule::AllPairs)?;
            let targets: Vec<hgnn::EdgeTarget> = train_rows
                .iter()
                .map(|r| hgnn::EdgeTarget {
                    origin_zone_id: r.origin_zone_id.clone(),
                    hospital_id: r.hospital_id.clone(),
                    share: r.target_share,
                })
                .collect();
            hgnn::fit_hgnn(&graph, &targets, &cfg)
        }
    }
}
