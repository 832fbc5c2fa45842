//! Metrics and the split / cross-validation protocol.
//!
//! Three flow-prediction metrics are provided: root mean square error
//! normalized by the observed range (NRMSE), symmetric mean absolute
//! percentage error (SMAPE, on a 0-200 scale with 0/0 terms defined as 0),
//! and the common part of commuters overlap (CPC). The harness runs
//! seeded k-fold cross-validation or a single train/test split, repeated
//! over independent runs, and reports per-cell metrics plus mean and
//! sample standard deviation in the conventional `mean ± std` shape.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{assemble_features, ODDataset};
use crate::model::{fit_on_dataset, FeatureMatrix, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("target range is zero (constant observations): NRMSE undefined")]
    UndefinedRange,
    #[error("both flow vectors are identically zero: CPC undefined")]
    UndefinedOverlap,
    #[error("CPC requires nonnegative values, found {0}")]
    NegativeValue(f64),
    #[error("fold protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

/// NRMSE, SMAPE, and CPC for one evaluation cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub nrmse: f64,
    pub smape: f64,
    pub cpc: f64,
}

impl MetricTriple {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self, EvalError> {
        Ok(Self {
            nrmse: nrmse(y, y_hat)?,
            smape: smape(y, y_hat)?,
            cpc: cpc(y, y_hat)?,
        })
    }
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<(), EvalError> {
    if y.len() != y_hat.len() {
        return Err(EvalError::LengthMismatch {
            left: y.len(),
            right: y_hat.len(),
        });
    }
    Ok(())
}

/// Root mean square error divided by the observed range `max(y) - min(y)`.
pub fn nrmse(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y, y_hat)?;
    if y.len() < 2 {
        return Err(EvalError::TooFew {
            needed: 2,
            got: y.len(),
        });
    }
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return Err(EvalError::UndefinedRange);
    }
    let mse = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Symmetric mean absolute percentage error on a 0-200 scale; terms with
/// `|y| + |y_hat| = 0` contribute 0.
pub fn smape(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y, y_hat)?;
    if y.is_empty() {
        return Err(EvalError::TooFew { needed: 1, got: 0 });
    }
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| {
            let denom = (a.abs() + b.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (a - b).abs() / denom
            }
        })
        .sum();
    Ok(total / y.len() as f64 * 100.0)
}

/// Common part of commuters: `2 * sum(min(y, y_hat)) / sum(y + y_hat)`.
pub fn cpc(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y, y_hat)?;
    let mut overlap = 0.0;
    let mut total = 0.0;
    for (&a, &b) in y.iter().zip(y_hat) {
        if a < 0.0 {
            return Err(EvalError::NegativeValue(a));
        }
        if b < 0.0 {
            return Err(EvalError::NegativeValue(b));
        }
        overlap += a.min(b);
        total += a + b;
    }
    if total == 0.0 {
        return Err(EvalError::UndefinedOverlap);
    }
    Ok(2.0 * overlap / total)
}

/// Seeded random partition of `0..n` into `k` folds with sizes differing
/// by at most one. Returns the fold id of each index.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::Protocol(format!(
            "k must satisfy 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0usize; n];
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &idx in &order[cursor..cursor + size] {
            fold_of[idx] = fold;
        }
        cursor += size;
    }
    Ok(fold_of)
}

/// Evaluation protocol: repeated k-fold cross-validation or a repeated
/// single train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Protocol {
    KFold { k: usize, runs: usize },
    Holdout { train_fraction: f64, runs: usize },
}

/// Whether folds are assigned over rows (flows) or whole origins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitGrouping {
    RowLevel,
    OriginGrouped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (n-1 denominator; 0 for a single
    /// value).
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    /// Renders in the conventional report shape, e.g. `0.62 ± 0.0036`.
    pub fn render(&self) -> String {
        format!("{:.2} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub run: usize,
    pub fold: usize,
    pub nrmse: f64,
    pub smape: f64,
    pub cpc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub run: usize,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub nrmse: MeanStd,
    pub smape: MeanStd,
    pub cpc: MeanStd,
}

/// Mean loss curves across evaluation cells (gradient-trained families).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanLossCurves {
    pub epochs: usize,
    pub mean_train: Vec<f64>,
    pub mean_val: Vec<f64>,
}

/// Full evaluation outcome: per-cell metrics, aggregates, protocol
/// metadata, and failures (cells whose fit or scoring errored).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub family: String,
    pub protocol: Protocol,
    pub grouping: SplitGrouping,
    pub base_seed: u64,
    pub n_rows: usize,
    pub cells: Vec<CellMetrics>,
    pub failures: Vec<CellFailure>,
    pub aggregate: AggregateMetrics,
    /// Set when any cell failed; aggregates then cover successes only.
    pub incomplete: bool,
    pub loss_curves: Option<MeanLossCurves>,
}

impl EvalReport {
    /// One `metric: mean ± std` line per metric.
    pub fn render_lines(&self) -> Vec<String> {
        vec![
            format!("nrmse: {}", self.aggregate.nrmse.render()),
            format!("smape: {}", self.aggregate.smape.render()),
            format!("cpc: {}", self.aggregate.cpc.render()),
        ]
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// Flat `run,fold,nrmse,smape,cpc` table.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("run,fold,nrmse,smape,cpc\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.run, c.fold, c.nrmse, c.smape, c.cpc
            ));
        }
        out
    }
}

fn aggregate(cells: &[CellMetrics]) -> AggregateMetrics {
    let nrmse: Vec<f64> = cells.iter().map(|c| c.nrmse).collect();
    let smape: Vec<f64> = cells.iter().map(|c| c.smape).collect();
    let cpc: Vec<f64> = cells.iter().map(|c| c.cpc).collect();
    AggregateMetrics {
        nrmse: MeanStd::from_values(&nrmse),
        smape: MeanStd::from_values(&smape),
        cpc: MeanStd::from_values(&cpc),
    }
}

/// Deterministic per-cell fit seed.
fn cell_seed(run_seed: u64, fold: usize) -> u64 {
    run_seed.wrapping_mul(10_000).wrapping_add(fold as u64)
}

/// Units over which folds are assigned: row indices per unit.
fn split_units(m: &FeatureMatrix, grouping: SplitGrouping) -> Vec<Vec<usize>> {
    match grouping {
        SplitGrouping::RowLevel => (0..m.n_rows()).map(|i| vec![i]).collect(),
        SplitGrouping::OriginGrouped => m
            .origin_groups()
            .into_iter()
            .map(|(_, rows)| rows)
            .collect(),
    }
}

/// Runs the configured protocol: for each run (seed `base_seed + run`) and
/// fold, fits on the complement and scores the fold. Predictions are
/// clamped at zero before metrics (flows are nonnegative; CPC is undefined
/// below zero). Failed cells are recorded and excluded from aggregation.
pub fn cross_validate(
    config: &ModelConfig,
    dataset: &ODDataset,
    protocol: Protocol,
    grouping: SplitGrouping,
    base_seed: u64,
) -> Result<EvalReport, EvalError> {
    let rows = assemble_features(dataset)?;
    let m = FeatureMatrix::from_rows(&rows)?;
    let units = split_units(&m, grouping);
    let n_units = units.len();

    let (runs, folds_per_run) = match protocol {
        Protocol::KFold { k, runs } => {
            if k < 2 || k > n_units {
                return Err(EvalError::Protocol(format!(
                    "k must satisfy 2 <= k <= units, got k={k}, units={n_units}"
                )));
            }
            if runs < 1 {
                return Err(EvalError::Protocol("runs must be >= 1".into()));
            }
            (runs, k)
        }
        Protocol::Holdout {
            train_fraction,
            runs,
        } => {
            if !(0.0 < train_fraction && train_fraction < 1.0) {
                return Err(EvalError::Protocol(format!(
                    "train_fraction must lie in (0, 1), got {train_fraction}"
                )));
            }
            if runs < 1 {
                return Err(EvalError::Protocol("runs must be >= 1".into()));
            }
            (runs, 1)
        }
    };

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut curve_acc: Option<(Vec<f64>, Vec<f64>, usize)> = None;

    for run in 0..runs {
        let run_seed = base_seed.wrapping_add(run as u64);
        // fold id per unit; usize::MAX marks always-train units (holdout)
        let fold_of: Vec<usize> = match protocol {
            Protocol::KFold { k, .. } => kfold_split(n_units, k, run_seed)?,
            Protocol::Holdout { train_fraction, .. } => {
                let mut order: Vec<usize> = (0..n_units).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
                order.shuffle(&mut rng);
                let n_train = ((n_units as f64) * train_fraction).floor() as usize;
                let n_train = n_train.clamp(1, n_units - 1);
                let mut fold_of = vec![usize::MAX; n_units];
                for &u in &order[n_train..] {
                    fold_of[u] = 0;
                }
                fold_of
            }
        };
        for fold in 0..folds_per_run {
            let mut train_idx = Vec::new();
            let mut test_idx = Vec::new();
            for (u, unit_rows) in units.iter().enumerate() {
                if fold_of[u] == fold {
                    test_idx.extend_from_slice(unit_rows);
                } else {
                    train_idx.extend_from_slice(unit_rows);
                }
            }
            let outcome = evaluate_cell(
                config,
                dataset,
                &rows,
                &m,
                &train_idx,
                &test_idx,
                cell_seed(run_seed, fold),
                run,
                fold,
            );
            match outcome {
                Ok((cell, curve)) => {
                    cells.push(cell);
                    if let Some((train, val)) = curve {
                        let epochs = train.len();
                        let acc = curve_acc
                            .get_or_insert_with(|| (vec![0.0; epochs], vec![0.0; epochs], 0));
                        for (a, v) in acc.0.iter_mut().zip(&train) {
                            *a += v;
                        }
                        for (a, v) in acc.1.iter_mut().zip(&val) {
                            *a += v;
                        }
                        acc.2 += 1;
                    }
                }
                Err(err) => failures.push(CellFailure {
                    run,
                    fold,
                    message: err.to_string(),
                }),
            }
        }
    }

    if cells.is_empty() {
        return Err(EvalError::Protocol(
            "every evaluation cell failed; no metrics to aggregate".into(),
        ));
    }
    let loss_curves = curve_acc.map(|(mut train, mut val, count)| {
        let inv = 1.0 / count as f64;
        train.iter_mut().for_each(|v| *v *= inv);
        val.iter_mut().for_each(|v| *v *= inv);
        MeanLossCurves {
            epochs: train.len(),
            mean_train: train,
            mean_val: val,
        }
    });
    Ok(EvalReport {
        family: config.family().to_string(),
        protocol,
        grouping,
        base_seed,
        n_rows: m.n_rows(),
        aggregate: aggregate(&cells),
        incomplete: !failures.is_empty(),
        cells,
        failures,
        loss_curves,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    config: &ModelConfig,
    dataset: &ODDataset,
    rows: &[crate::domain::FeatureRow],
    m: &FeatureMatrix,
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
    run: usize,
    fold: usize,
) -> Result<(CellMetrics, Option<(Vec<f64>, Vec<f64>)>), EvalError> {
    let artifact = fit_on_dataset(config, dataset, rows, train_idx, seed)?;
    let test = m.subset(test_idx);
    let mut y_hat = artifact.predict(&test)?;
    for v in &mut y_hat {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let triple = MetricTriple::compute(test.targets(), &y_hat)?;
    let curve = if artifact.meta.loss_curve.is_empty() {
        None
    } else {
        let train: Vec<f64> = artifact.meta.loss_curve.iter().map(|e| e.train).collect();
        let val: Vec<f64> = artifact
            .meta
            .loss_curve
            .iter()
            .map(|e| e.val.unwrap_or(f64::NAN))
            .collect();
        Some((train, val))
    };
    Ok((
        CellMetrics {
            run,
            fold,
            nrmse: triple.nrmse,
            smape: triple.smape,
            cpc: triple.cpc,
        },
        curve,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nrmse_perfect_prediction_is_zero() {
        let y = [0.1, 0.4, 0.5];
        assert_eq!(nrmse(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn nrmse_hand_case() {
        let y = [0.0, 1.0, 2.0];
        let y_hat = [0.0, 1.0, 1.0];
        let expected = (1.0f64 / 3.0).sqrt() / 2.0; // ~0.288675
        let got = nrmse(&y, &y_hat).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.288675).abs() < 1e-6);
    }

    #[test]
    fn nrmse_constant_target_errors() {
        let y = [5.0, 5.0, 5.0];
        let y_hat = [5.0, 4.0, 6.0];
        assert!(matches!(nrmse(&y, &y_hat), Err(EvalError::UndefinedRange)));
    }

    #[test]
    fn smape_perfect_prediction_is_zero() {
        let y = [1.0, 2.0];
        assert_eq!(smape(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn smape_hand_case() {
        assert_eq!(smape(&[1.0], &[3.0]).unwrap(), 100.0);
    }

    #[test]
    fn smape_zero_zero_term_is_zero() {
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn cpc_identical_flows_give_one() {
        let y = [0.2, 0.8];
        assert_eq!(cpc(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn cpc_disjoint_support_gives_zero() {
        assert_eq!(cpc(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cpc_hand_case() {
        assert_eq!(cpc(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 0.75);
    }

    #[test]
    fn cpc_rejects_negative_input() {
        assert!(matches!(
            cpc(&[1.0], &[-0.5]),
            Err(EvalError::NegativeValue(_))
        ));
    }

    #[test]
    fn cpc_undefined_when_both_zero() {
        assert!(matches!(
            cpc(&[0.0, 0.0], &[0.0, 0.0]),
            Err(EvalError::UndefinedOverlap)
        ));
    }

    #[test]
    fn kfold_partitions_exactly() {
        let folds = kfold_split(100, 10, 7).unwrap();
        for f in 0..10 {
            assert_eq!(folds.iter().filter(|&&x| x == f).count(), 10);
        }
    }

    #[test]
    fn kfold_uneven_sizes_differ_by_at_most_one() {
        let folds = kfold_split(105, 10, 7).unwrap();
        let mut sizes = vec![0usize; 10];
        for &f in &folds {
            sizes[f] += 1;
        }
        assert_eq!(sizes.iter().filter(|&&s| s == 11).count(), 5);
        assert_eq!(sizes.iter().filter(|&&s| s == 10).count(), 5);
    }

    #[test]
    fn kfold_is_seed_deterministic() {
        assert_eq!(kfold_split(50, 5, 3).unwrap(), kfold_split(50, 5, 3).unwrap());
        assert_ne!(kfold_split(50, 5, 3).unwrap(), kfold_split(50, 5, 4).unwrap());
    }

    #[test]
    fn kfold_rejects_bad_k() {
        assert!(kfold_split(5, 1, 0).is_err());
        assert!(kfold_split(5, 6, 0).is_err());
    }

    #[test]
    fn mean_std_renders_table_shape() {
        let ms = MeanStd {
            mean: 0.62,
            std: 0.0036,
        };
        assert_eq!(ms.render(), "0.62 ± 0.0036");
    }

    #[test]
    fn aggregate_matches_independent_recomputation() {
        let cells: Vec<CellMetrics> = (0..20)
            .map(|i| CellMetrics {
                run: i / 4,
                fold: i % 4,
                nrmse: 0.5 + 0.01 * i as f64,
                smape: 60.0 + 0.3 * i as f64,
                cpc: 0.7 - 0.002 * i as f64,
            })
            .collect();
        let agg = aggregate(&cells);
        let values: Vec<f64> = cells.iter().map(|c| c.nrmse).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64;
        assert!((agg.nrmse.mean - mean).abs() < 1e-12);
        assert!((agg.nrmse.std - var.sqrt()).abs() < 1e-12);
    }

    pub(crate) fn toy_dataset(n_zones: usize, n_hosp: usize, seed: u64) -> ODDataset {
        use crate::domain::{FlowRecord, HospitalAttributes, ZoneAttributes};
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zones: Vec<ZoneAttributes> = (0..n_zones)
            .map(|i| ZoneAttributes {
                zone_id: format!("Z{i:03}"),
                total_population: rng.random_range(100.0..1000.0),
                pct_under18: rng.random_range(0.0..0.5),
                pct_over65: rng.random_range(0.0..0.4),
                pct_hispanic: rng.random_range(0.0..1.0),
                pct_white: rng.random_range(0.0..1.0),
                pct_black: rng.random_range(0.0..1.0),
                pct_asian: rng.random_range(0.0..1.0),
                pct_bachelor_plus: rng.random_range(0.0..1.0),
                median_income: rng.random_range(20_000.0..150_000.0),
                pct_households_vehicle: rng.random_range(0.3..1.0),
                lon: rng.random_range(-96.0..-95.0),
                lat: rng.random_range(29.0..30.0),
            })
            .collect();
        let hospitals: Vec<HospitalAttributes> = (0..n_hosp)
            .map(|i| HospitalAttributes {
                hospital_id: format!("H{i:02}"),
                staffed_all_beds: rng.random_range(20..1300),
                staffed_icu_beds: rng.random_range(0..160),
                licensed_all_beds: rng.random_range(20..1400),
                all_bed_occupancy: rng.random_range(0.0..0.86),
                icu_occupancy: rng.random_range(0.0..0.92),
                n_reviews: rng.random_range(2..3763),
                rating: rng.random_range(1.0..4.8),
                lon: rng.random_range(-96.0..-95.0),
                lat: rng.random_range(29.0..30.0),
            })
            .collect();
        let mut drive_time = std::collections::BTreeMap::new();
        let mut flows = Vec::new();
        for z in &zones {
            for h in &hospitals {
                drive_time.insert(
                    (z.zone_id.clone(), h.hospital_id.clone()),
                    rng.random_range(2.0..65.0),
                );
                flows.push(FlowRecord {
                    origin_zone_id: z.zone_id.clone(),
                    hospital_id: h.hospital_id.clone(),
                    visits: rng.random_range(1.0..40.0),
                    drive_time_min: 0.0,
                });
            }
        }
        ODDataset::new(zones, hospitals, flows, drive_time).unwrap()
    }

    #[test]
    fn minimal_protocol_completes() {
        let dataset = toy_dataset(2, 2, 1);
        // 4 rows, k=2, runs=1 -> 2 fold cells
        let report = cross_validate(
            &ModelConfig::Ols { ridge_eps: 1e-8 },
            &dataset,
            Protocol::KFold { k: 2, runs: 1 },
            SplitGrouping::RowLevel,
            0,
        )
        .unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(!report.incomplete);
    }

    #[test]
    fn report_is_seed_deterministic_and_renders_agg_shape() {
        let dataset = toy_dataset(6, 3, 5);
        let run = || {
            cross_validate(
                &ModelConfig::Ols { ridge_eps: 1e-8 },
                &dataset,
                Protocol::KFold { k: 3, runs: 2 },
                SplitGrouping::RowLevel,
                42,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_json_pretty(), b.to_json_pretty());
        let lines = a.render_lines();
        assert!(lines[0].contains(" ± "));
    }

    #[test]
    fn holdout_mode_runs() {
        let dataset = toy_dataset(6, 3, 9);
        let report = cross_validate(
            &ModelConfig::Ols { ridge_eps: 1e-8 },
            &dataset,
            Protocol::Holdout {
                train_fraction: 0.9,
                runs: 3,
            },
            SplitGrouping::RowLevel,
            1,
        )
        .unwrap();
        assert_eq!(report.cells.len(), 3);
    }

    #[test]
    fn origin_grouped_folds_keep_origins_together() {
        let dataset = toy_dataset(6, 3, 11);
        let rows = assemble_features(&dataset).unwrap();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let units = split_units(&m, SplitGrouping::OriginGrouped);
        assert_eq!(units.len(), 6);
        for unit in units {
            let origin = m.origin_id_of_row(unit[0]);
            assert!(unit.iter().all(|&i| m.origin_id_of_row(i) == origin));
        }
    }
}
