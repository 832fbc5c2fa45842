//! odflow: origin-destination visitation flow prediction and explanation.
//!
//! The crate ingests zone / facility / flow / drive-time tables into a
//! validated spatial-interaction dataset, trains five model families on
//! per-origin visitation shares (least-squares baseline, gradient-boosted
//! trees, multilayer perceptron, an encoder-decoder gravity network, and a
//! heterogeneous bipartite graph network), evaluates them under seeded
//! split / k-fold protocols with NRMSE, SMAPE, and CPC, and explains
//! predictions through grouped Shapley values, partial-dependence curves,
//! distance-decay scenario sweeps, and curve-crossing detection.
//!
//! A synthetic-city generator with known ground truth provides the oracle
//! every numeric path is validated against; the `odflow` binary wires the
//! pieces into file-driven pipelines.

pub mod domain;
pub mod evaluation;
pub mod ingest;
pub mod interpret;
pub mod model;
pub mod synth;

pub mod cli;

pub use domain::{
    assemble_features, expand_candidate_rows, normalize_per_origin, standardize, DomainError,
    FeatureRow, FeatureStats, FlowRecord, HospitalAttributes, ODDataset, ZoneAttributes,
    DRIVE_TIME_INDEX, FEATURE_NAMES, N_FEATURES, N_HOSPITAL_FEATURES, N_ZONE_FEATURES,
};
