//! Attribution and dependence analysis for fitted models.
//!
//! Shapley values are computed over feature groups (states of correlated
//! columns can be merged, the default merges the two all-bed capacity
//! counts into one "All beds" group) by exact coalition enumeration for
//! small group counts and seeded permutation sampling otherwise. Out-of-
//! coalition features take their background values, which default to the
//! training means.
//!
//! Partial-dependence curves sweep one feature over a grid with all other
//! features pinned at their training means (the classical dataset-averaged
//! variant is also available). Distance-decay scenarios repeat the
//! drive-time sweep at the minimum, mean, and maximum training value of
//! one hospital attribute; crossings between two such curves are located
//! by linear interpolation on the shared grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    feature_index, FeatureRow, DRIVE_TIME_INDEX, FEATURE_NAMES, N_FEATURES, N_HOSPITAL_FEATURES,
};
use crate::model::{ModelError, RowModel};

/// Exact enumeration is selected automatically up to this many groups
/// (2^12 coalition evaluations; factorial weights stay exact in f64).
pub const EXACT_GROUP_LIMIT: usize = 12;

/// Default permutation-sample count.
pub const DEFAULT_PERMUTATIONS: usize = 2000;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("invalid feature grouping: {0}")]
    BadGrouping(String),
    #[error("interpretation config error: {0}")]
    BadConfig(String),
    #[error("grid error: {0}")]
    BadGrid(String),
    #[error("feature {0} is not a hospital-side attribute")]
    NotHospitalSide(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Named partition of the feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGrouping {
    pub groups: Vec<FeatureGroup>,
}

impl FeatureGrouping {
    /// Validates that the groups are nonempty, disjoint, and cover all
    /// `n_features` indices.
    pub fn new(groups: Vec<FeatureGroup>, n_features: usize) -> Result<Self, InterpretError> {
        let mut seen = vec![false; n_features];
        for g in &groups {
            if g.indices.is_empty() {
                return Err(InterpretError::BadGrouping(format!(
                    "group {} has no features",
                    g.name
                )));
            }
            for &i in &g.indices {
                if i >= n_features {
                    return Err(InterpretError::BadGrouping(format!(
                        "group {} references feature index {i} out of range",
                        g.name
                    )));
                }
                if seen[i] {
                    return Err(InterpretError::BadGrouping(format!(
                        "feature index {i} appears in more than one group"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(InterpretError::BadGrouping(format!(
                "feature index {missing} is not covered by any group"
            )));
        }
        Ok(Self { groups })
    }

    /// Singleton groups for every feature, named by the canonical feature
    /// names when the width matches the standard layout.
    pub fn singletons(n_features: usize) -> Self {
        let groups = (0..n_features)
            .map(|i| FeatureGroup {
                name: if n_features == N_FEATURES {
                    FEATURE_NAMES[i].to_string()
                } else {
                    format!("f{i}")
                },
                indices: vec![i],
            })
            .collect();
        Self { groups }
    }

    /// Default grouping for the standard layout: the two all-bed capacity
    /// counts fuse into a single "All beds" group (they are strongly
    /// correlated in source registries); all other features stay singletons.
    pub fn default_grouping() -> Self {
        let staffed = feature_index("staffed_all_beds").unwrap();
        let licensed = feature_index("licensed_all_beds").unwrap();
        let mut groups = vec![FeatureGroup {
            name: "All beds".to_string(),
            indices: vec![staffed, licensed],
        }];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            if i != staffed && i != licensed {
                groups.push(FeatureGroup {
                    name: (*name).to_string(),
                    indices: vec![i],
                });
            }
        }
        Self { groups }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

/// How Shapley values are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapMode {
    /// Exact enumeration when the group count allows it, sampling
    /// otherwise.
    Auto { n_permutations: usize },
    Exact,
    Sampling { n_permutations: usize },
}

impl Default for ShapMode {
    fn default() -> Self {
        ShapMode::Auto {
            n_permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

/// Per-group attributions for one instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapResult {
    pub group_names: Vec<String>,
    pub phi: Vec<f64>,
    /// Model output at the background vector.
    pub base_value: f64,
    /// Model output at the instance.
    pub prediction: f64,
    pub exact: bool,
    pub n_permutations: usize,
    pub seed: u64,
}

fn mix_into(
    work: &mut [f64],
    instance: &[f64],
    background: &[f64],
    grouping: &FeatureGrouping,
    mask: u64,
) {
    work.copy_from_slice(background);
    for (g, group) in grouping.groups.iter().enumerate() {
        if mask & (1 << g) != 0 {
            for &i in &group.indices {
                work[i] = instance[i];
            }
        }
    }
}

/// Shapley attribution of `model`'s output at `instance` against
/// `background`, over the given feature groups.
///
/// Exact mode enumerates all coalitions with the classical factorial
/// weights; sampling mode averages marginal contributions over seeded
/// random group orderings. Both satisfy the dummy property exactly (a
/// group the model ignores changes no evaluation), and enumeration
/// satisfies efficiency up to floating-point summation.
pub fn shapley_values(
    model: &dyn RowModel,
    instance: &[f64],
    background: &[f64],
    grouping: &FeatureGrouping,
    mode: ShapMode,
    seed: u64,
) -> Result<ShapResult, InterpretError> {
    let n = model.n_features();
    if instance.len() != n || background.len() != n {
        return Err(InterpretError::BadConfig(format!(
            "instance/background width must equal the model's {n} features"
        )));
    }
    let k = grouping.n_groups();
    if k == 0 {
        return Err(InterpretError::BadGrouping("no groups".into()));
    }
    let (use_exact, n_permutations) = match mode {
        ShapMode::Auto { n_permutations } => (k <= EXACT_GROUP_LIMIT, n_permutations),
        ShapMode::Exact => (true, 0),
        ShapMode::Sampling { n_permutations } => (false, n_permutations),
    };
    if use_exact && k > EXACT_GROUP_LIMIT {
        return Err(InterpretError::BadConfig(format!(
            "exact enumeration supports at most {EXACT_GROUP_LIMIT} groups, got {k}"
        )));
    }
    if !use_exact && n_permutations < 1 {
        return Err(InterpretError::BadConfig(
            "n_permutations must be >= 1".into(),
        ));
    }

    let mut work = vec![0.0; n];
    let mut eval_mask = |mask: u64| -> Result<f64, InterpretError> {
        mix_into(&mut work, instance, background, grouping, mask);
        Ok(model.score_row(&work)?)
    };

    let full_mask = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    let base_value = eval_mask(0)?;
    let prediction = eval_mask(full_mask)?;

    let mut phi = vec![0.0; k];
    if use_exact {
        // cache every coalition value, then combine with exact weights
        let mut cache = vec![0.0; 1 << k];
        cache[0] = base_value;
        cache[full_mask as usize] = prediction;
        for mask in 1..(1u64 << k) - 1 {
            cache[mask as usize] = eval_mask(mask)?;
        }
        let mut fact = vec![1.0f64; k + 1];
        for i in 1..=k {
            fact[i] = fact[i - 1] * i as f64;
        }
        for g in 0..k {
            let bit = 1u64 << g;
            let mut acc = 0.0;
            for mask in 0..(1u64 << k) {
                if mask & bit != 0 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let weight = fact[s] * fact[k - 1 - s] / fact[k];
                acc += weight * (cache[(mask | bit) as usize] - cache[mask as usize]);
            }
            phi[g] = acc;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..k).collect();
        for _ in 0..n_permutations {
            order.shuffle(&mut rng);
            let mut mask = 0u64;
            let mut prev = base_value;
            for &g in &order {
                mask |= 1 << g;
                let cur = if mask == full_mask {
                    prediction
                } else {
                    eval_mask(mask)?
                };
                phi[g] += cur - prev;
                prev = cur;
            }
        }
        let inv = 1.0 / n_permutations as f64;
        for p in &mut phi {
            *p *= inv;
        }
    }

    Ok(ShapResult {
        group_names: grouping.groups.iter().map(|g| g.name.clone()).collect(),
        phi,
        base_value,
        prediction,
        exact: use_exact,
        n_permutations: if use_exact { 0 } else { n_permutations },
        seed,
    })
}

/// One group's row in the ranked importance table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupImportance {
    pub group: String,
    pub rank: usize,
    pub mean_abs_phi: f64,
}

/// Ranked mean-|phi| summary plus the per-row signed attributions needed
/// to render a beeswarm-style importance plot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapSummary {
    pub importance: Vec<GroupImportance>,
    pub group_names: Vec<String>,
    /// `per_row_phi[row][group]`.
    pub per_row_phi: Vec<Vec<f64>>,
    /// Raw (unstandardized) feature value echoed per row and group: the
    /// value itself for singleton groups, the member mean otherwise.
    pub per_row_value: Vec<Vec<f64>>,
}

impl ShapSummary {
    /// `group,rank,mean_abs_phi` table.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("group,rank,mean_abs_phi\n");
        for g in &self.importance {
            out.push_str(&format!("{},{},{}\n", g.group, g.rank, g.mean_abs_phi));
        }
        out
    }

    /// `row,group,phi,feature_value` table.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("row,group,phi,feature_value\n");
        for (row, (phis, values)) in self.per_row_phi.iter().zip(&self.per_row_value).enumerate() {
            for (g, name) in self.group_names.iter().enumerate() {
                out.push_str(&format!("{row},{name},{},{}\n", phis[g], values[g]));
            }
        }
        out
    }
}

/// Attribution summary across rows: per-row Shapley values (seeded per
/// row, so parallel evaluation cannot reorder samples) and groups ranked
/// by mean absolute attribution.
pub fn shap_summary(
    model: &dyn RowModel,
    rows: &[FeatureRow],
    grouping: &FeatureGrouping,
    mode: ShapMode,
    seed: u64,
) -> Result<ShapSummary, InterpretError> {
    if rows.is_empty() {
        return Err(InterpretError::BadConfig(
            "attribution needs at least one row".into(),
        ));
    }
    let background = model.feature_stats().mean.clone();
    let k = grouping.n_groups();
    let mut per_row_phi = Vec::with_capacity(rows.len());
    let mut per_row_value = Vec::with_capacity(rows.len());
    for (row_idx, row) in rows.iter().enumerate() {
        let row_seed = seed.wrapping_add((row_idx as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let result = shapley_values(model, &row.features, &background, grouping, mode, row_seed)?;
        per_row_phi.push(result.phi);
        per_row_value.push(
            grouping
                .groups
                .iter()
                .map(|g| {
                    g.indices.iter().map(|&i| row.features[i]).sum::<f64>()
                        / g.indices.len() as f64
                })
                .collect(),
        );
    }
    let mut mean_abs = vec![0.0; k];
    for phis in &per_row_phi {
        for (m, p) in mean_abs.iter_mut().zip(phis) {
            *m += p.abs();
        }
    }
    let inv = 1.0 / rows.len() as f64;
    mean_abs.iter_mut().for_each(|m| *m *= inv);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let importance = order
        .iter()
        .enumerate()
        .map(|(pos, &g)| GroupImportance {
            group: grouping.groups[g].name.clone(),
            rank: pos + 1,
            mean_abs_phi: mean_abs[g],
        })
        .collect();
    Ok(ShapSummary {
        importance,
        group_names: grouping.groups.iter().map(|g| g.name.clone()).collect(),
        per_row_phi,
        per_row_value,
    })
}

/// How non-swept features are handled in a dependence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdpMode {
    /// One synthetic instance with every other feature at its training
    /// mean.
    AtMeans,
    /// Classical partial dependence: average the model over the supplied
    /// rows with the swept feature overridden.
    Averaged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature_index: usize,
    pub feature_name: String,
    pub scenario: String,
    pub background: String,
    pub grid: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl PdpCurve {
    /// `scenario,grid_value,prediction` rows (no header).
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (g, p) in self.grid.iter().zip(&self.predictions) {
            out.push_str(&format!("{},{g},{p}\n", self.scenario));
        }
        out
    }
}

/// Header for PDP CSV exports.
pub const PDP_CSV_HEADER: &str = "scenario,grid_value,prediction\n";

fn feature_name_of(index: usize, n_features: usize) -> String {
    if n_features == N_FEATURES {
        FEATURE_NAMES[index].to_string()
    } else {
        format!("f{index}")
    }
}

fn validate_grid(
    grid: &[f64],
    model: &dyn RowModel,
    feature: usize,
) -> Result<(), InterpretError> {
    if grid.is_empty() {
        return Err(InterpretError::BadGrid("grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(InterpretError::BadGrid(
            "grid must be strictly increasing".into(),
        ));
    }
    let stats = model.feature_stats();
    let span = stats.max[feature] - stats.min[feature];
    if span > 0.0 {
        // allow a 5% margin beyond the observed training range
        let lo = stats.min[feature] - 0.05 * span;
        let hi = stats.max[feature] + 0.05 * span;
        if grid[0] < lo || *grid.last().unwrap() > hi {
            return Err(InterpretError::BadGrid(format!(
                "grid [{}, {}] leaves the plausible range [{lo}, {hi}] of feature {}",
                grid[0],
                grid.last().unwrap(),
                feature_name_of(feature, model.n_features())
            )));
        }
    }
    Ok(())
}

/// Model response to sweeping one feature over `grid`.
pub fn pdp_curve(
    model: &dyn RowModel,
    feature: usize,
    grid: &[f64],
    mode: PdpMode,
    rows: Option<&[FeatureRow]>,
) -> Result<PdpCurve, InterpretError> {
    let n = model.n_features();
    if feature >= n {
        return Err(InterpretError::BadConfig(format!(
            "feature index {feature} out of range for {n} features"
        )));
    }
    validate_grid(grid, model, feature)?;
    let predictions = match mode {
        PdpMode::AtMeans => {
            let mut work = model.feature_stats().mean.clone();
            grid.iter()
                .map(|&v| {
                    work[feature] = v;
                    model.score_row(&work).map_err(InterpretError::from)
                })
                .collect::<Result<Vec<f64>, _>>()?
        }
        PdpMode::Averaged => {
            let rows = rows.ok_or_else(|| {
                InterpretError::BadConfig("averaged mode needs dataset rows".into())
            })?;
            if rows.is_empty() {
                return Err(InterpretError::BadConfig(
                    "averaged mode needs at least one row".into(),
                ));
            }
            let mut out = Vec::with_capacity(grid.len());
            let mut work = vec![0.0; n];
            for &v in grid {
                let mut acc = 0.0;
                for row in rows {
                    work.copy_from_slice(&row.features);
                    work[feature] = v;
                    acc += model.score_row(&work)?;
                }
                out.push(acc / rows.len() as f64);
            }
            out
        }
    };
    Ok(PdpCurve {
        feature_index: feature,
        feature_name: feature_name_of(feature, n),
        scenario: "sweep".to_string(),
        background: match mode {
            PdpMode::AtMeans => "training means".to_string(),
            PdpMode::Averaged => "dataset average".to_string(),
        },
        grid: grid.to_vec(),
        predictions,
    })
}

/// Default drive-time grid: 0 to 70 minutes in 0.5-minute steps.
pub fn default_drive_grid() -> Vec<f64> {
    (0..=140).map(|i| f64::from(i) * 0.5).collect()
}

/// Attribute level selectors for decay scenarios.
const SCENARIO_LABELS: [&str; 3] = ["min", "mean", "max"];

/// Distance-decay scenario sweep: three drive-time curves with one
/// hospital-side attribute pinned at its training minimum, mean, and
/// maximum, all other features at their means.
pub fn decay_scenarios(
    model: &dyn RowModel,
    attribute: usize,
    drive_grid: &[f64],
) -> Result<[PdpCurve; 3], InterpretError> {
    let n = model.n_features();
    if n != N_FEATURES {
        return Err(InterpretError::BadConfig(format!(
            "decay scenarios need the standard {N_FEATURES}-feature layout, model has {n}"
        )));
    }
    if attribute >= N_HOSPITAL_FEATURES {
        return Err(InterpretError::NotHospitalSide(
            feature_name_of(attribute, n),
        ));
    }
    validate_grid(drive_grid, model, DRIVE_TIME_INDEX)?;
    let stats = model.feature_stats();
    let levels = [
        stats.min[attribute],
        stats.mean[attribute],
        stats.max[attribute],
    ];
    let mut curves = Vec::with_capacity(3);
    for (label, level) in SCENARIO_LABELS.iter().zip(levels) {
        let mut work = stats.mean.clone();
        work[attribute] = level;
        let predictions = drive_grid
            .iter()
            .map(|&t| {
                work[DRIVE_TIME_INDEX] = t;
                model.score_row(&work).map_err(InterpretError::from)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        curves.push(PdpCurve {
            feature_index: DRIVE_TIME_INDEX,
            feature_name: FEATURE_NAMES[DRIVE_TIME_INDEX].to_string(),
            scenario: format!("{}={}", feature_name_of(attribute, n), label),
            background: "training means".to_string(),
            grid: drive_grid.to_vec(),
            predictions,
        });
    }
    Ok(curves.try_into().expect("three scenario curves"))
}

/// Sign of the post-crossing difference `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingSign {
    Negative,
    Zero,
    Positive,
}

impl CrossingSign {
    fn of(v: f64) -> Self {
        if v > 0.0 {
            CrossingSign::Positive
        } else if v < 0.0 {
            CrossingSign::Negative
        } else {
            CrossingSign::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// Abscissa in grid units (minutes for drive-time curves).
    pub abscissa: f64,
    pub post_sign: CrossingSign,
}

/// Where two curves on a shared grid exchange order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InflectionReport {
    pub crossings: Vec<Crossing>,
    /// Set when the curves coincide over the whole grid.
    pub degenerate: bool,
}

/// Locates all sign changes of `a - b` on the shared grid.
///
/// Strict sign flips between adjacent points interpolate linearly. Runs
/// of exact zeros are treated as one event: an interior run bounded by
/// opposite signs crosses at the run midpoint (a single exact zero is
/// reported directly); a run bounded by equal signs is a touch, not a
/// crossing; a run at a grid boundary marks where the curves separate
/// (or merge) and is reported at the boundary-side end of the run.
/// Fully coincident curves set the degenerate flag instead.
pub fn find_inflection(a: &PdpCurve, b: &PdpCurve) -> Result<InflectionReport, InterpretError> {
    if a.grid != b.grid {
        return Err(InterpretError::BadGrid(
            "curves are defined on different grids".into(),
        ));
    }
    let n = a.grid.len();
    if n < 2 {
        return Err(InterpretError::BadGrid(
            "need at least two grid points".into(),
        ));
    }
    let diff: Vec<f64> = a
        .predictions
        .iter()
        .zip(&b.predictions)
        .map(|(x, y)| x - y)
        .collect();
    if diff.iter().all(|&d| d == 0.0) {
        return Ok(InflectionReport {
            crossings: Vec::new(),
            degenerate: true,
        });
    }

    let mut crossings = Vec::new();
    let mut i = 0;
    while i < n {
        if diff[i] == 0.0 {
            // maximal zero run [i..=j]
            let mut j = i;
            while j + 1 < n && diff[j + 1] == 0.0 {
                j += 1;
            }
            let left = if i > 0 { Some(diff[i - 1]) } else { None };
            let right = if j + 1 < n { Some(diff[j + 1]) } else { None };
            match (left, right) {
                (Some(l), Some(r)) => {
                    if l * r < 0.0 {
                        crossings.push(Crossing {
                            abscissa: 0.5 * (a.grid[i] + a.grid[j]),
                            post_sign: CrossingSign::of(r),
                        });
                    }
                    // equal signs on both sides: a touch, not a crossing
                }
                (None, Some(r)) => {
                    // curves coincide from the grid start, then separate
                    crossings.push(Crossing {
                        abscissa: a.grid[j],
                        post_sign: CrossingSign::of(r),
                    });
                }
                (Some(_), None) => {
                    // curves merge into coincidence at the grid end
                    crossings.push(Crossing {
                        abscissa: a.grid[i],
                        post_sign: CrossingSign::Zero,
                    });
                }
                (None, None) => unreachable!("all-zero case handled above"),
            }
            i = j + 1;
        } else {
            if i + 1 < n && diff[i] * diff[i + 1] < 0.0 {
                let t = diff[i] / (diff[i] - diff[i + 1]);
                crossings.push(Crossing {
                    abscissa: a.grid[i] + t * (a.grid[i + 1] - a.grid[i]),
                    post_sign: CrossingSign::of(diff[i + 1]),
                });
            }
            i += 1;
        }
    }
    Ok(InflectionReport {
        crossings,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FeatureStats;
    use crate::model::ModelArtifact;

    fn identity_stats(n: usize) -> FeatureStats {
        FeatureStats {
            mean: vec![0.0; n],
            std: vec![1.0; n],
            min: vec![-10.0; n],
            max: vec![10.0; n],
            constant: vec![false; n],
        }
    }

    fn linear_model(weights: Vec<f64>, intercept: f64) -> ModelArtifact {
        let stats = identity_stats(weights.len());
        ModelArtifact::from_linear(weights, intercept, stats)
    }

    #[test]
    fn dummy_group_gets_exactly_zero() {
        let model = linear_model(vec![2.0, 0.0, -1.0], 1.0);
        let grouping = FeatureGrouping::singletons(3);
        let instance = [3.0, 5.0, -2.0];
        let background = [0.0, 0.0, 0.0];
        for mode in [
            ShapMode::Exact,
            ShapMode::Sampling {
                n_permutations: 50,
            },
        ] {
            let result =
                shapley_values(&model, &instance, &background, &grouping, mode, 7).unwrap();
            assert_eq!(result.phi[1], 0.0);
        }
    }

    #[test]
    fn linear_model_closed_form_is_exact_under_enumeration() {
        // dyadic weights and integer points keep every sum exact
        let weights = vec![2.0, -1.0, 0.5, 4.0];
        let model = linear_model(weights.clone(), 3.0);
        let grouping = FeatureGrouping::singletons(4);
        let instance = [1.0, 2.0, 4.0, -3.0];
        let background = [0.0, 1.0, 2.0, 1.0];
        let result =
            shapley_values(&model, &instance, &background, &grouping, ShapMode::Exact, 0).unwrap();
        for i in 0..4 {
            let expected = weights[i] * (instance[i] - background[i]);
            assert_eq!(result.phi[i], expected, "feature {i}");
        }
    }

    #[test]
    fn grouped_linear_attribution_sums_members() {
        let weights = vec![2.0, -1.0, 0.5, 4.0];
        let model = linear_model(weights.clone(), 3.0);
        let grouping = FeatureGrouping::new(
            vec![
                FeatureGroup {
                    name: "beds".into(),
                    indices: vec![0, 2],
                },
                FeatureGroup {
                    name: "f1".into(),
                    indices: vec![1],
                },
                FeatureGroup {
                    name: "f3".into(),
                    indices: vec![3],
                },
            ],
            4,
        )
        .unwrap();
        let instance = [1.0, 2.0, 4.0, -3.0];
        let background = [0.0, 1.0, 2.0, 1.0];
        let result =
            shapley_values(&model, &instance, &background, &grouping, ShapMode::Exact, 0).unwrap();
        let expected = weights[0] * (instance[0] - background[0])
            + weights[2] * (instance[2] - background[2]);
        assert_eq!(result.phi[0], expected);
    }

    #[test]
    fn efficiency_holds_under_enumeration() {
        let model = linear_model(vec![1.5, -2.25, 0.75], 0.5);
        let grouping = FeatureGrouping::singletons(3);
        let instance = [0.3, -1.7, 2.9];
        let background = [0.1, 0.2, 0.3];
        let result =
            shapley_values(&model, &instance, &background, &grouping, ShapMode::Exact, 0).unwrap();
        let total: f64 = result.phi.iter().sum();
        assert!(
            (total + result.base_value - result.prediction).abs() < 1e-10,
            "efficiency residual {}",
            total + result.base_value - result.prediction
        );
    }

    #[test]
    fn symmetric_features_get_equal_phi() {
        let model = linear_model(vec![1.0, 1.0], 0.0);
        let grouping = FeatureGrouping::singletons(2);
        let result = shapley_values(
            &model,
            &[2.0, 2.0],
            &[0.0, 0.0],
            &grouping,
            ShapMode::Exact,
            0,
        )
        .unwrap();
        assert_eq!(result.phi[0], result.phi[1]);
    }

    #[test]
    fn sampling_approximates_enumeration() {
        // 8 groups, nonlinear model with interactions
        struct Toy {
            stats: FeatureStats,
        }
        impl RowModel for Toy {
            fn n_features(&self) -> usize {
                8
            }
            fn feature_stats(&self) -> &FeatureStats {
                &self.stats
            }
            fn score_row(&self, f: &[f64]) -> Result<f64, ModelError> {
                Ok(f[0] * f[1] + 2.0 * f[2] - f[3] * f[4] * 0.5 + f[5].max(0.0)
                    + 0.3 * f[6] * f[0]
                    - f[7])
            }
        }
        let model = Toy {
            stats: identity_stats(8),
        };
        let grouping = FeatureGrouping::singletons(8);
        let instance = [1.0, -2.0, 0.5, 1.5, -0.5, 2.0, -1.0, 0.25];
        let background = [0.0; 8];
        let exact = shapley_values(
            &model,
            &instance,
            &background,
            &grouping,
            ShapMode::Exact,
            0,
        )
        .unwrap();
        let sampled = shapley_values(
            &model,
            &instance,
            &background,
            &grouping,
            ShapMode::Sampling {
                n_permutations: 2000,
            },
            42,
        )
        .unwrap();
        // tolerance scaled to the coalition-value range
        let range = {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut work = [0.0; 8];
            for mask in 0u64..256 {
                for i in 0..8 {
                    work[i] = if mask & (1 << i) != 0 {
                        instance[i]
                    } else {
                        background[i]
                    };
                }
                let v = model.score_row(&work).unwrap();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            hi - lo
        };
        for (e, s) in exact.phi.iter().zip(&sampled.phi) {
            assert!(
                (e - s).abs() < 0.02 * range,
                "exact {e} vs sampled {s} (range {range})"
            );
        }
    }

    #[test]
    fn zero_permutations_is_a_config_error() {
        let model = linear_model(vec![1.0], 0.0);
        let grouping = FeatureGrouping::singletons(1);
        assert!(matches!(
            shapley_values(
                &model,
                &[1.0],
                &[0.0],
                &grouping,
                ShapMode::Sampling { n_permutations: 0 },
                0
            ),
            Err(InterpretError::BadConfig(_))
        ));
    }

    #[test]
    fn grouping_must_partition_features() {
        assert!(FeatureGrouping::new(
            vec![FeatureGroup {
                name: "a".into(),
                indices: vec![0, 1],
            }],
            3,
        )
        .is_err());
        assert!(FeatureGrouping::new(
            vec![
                FeatureGroup {
                    name: "a".into(),
                    indices: vec![0, 1],
                },
                FeatureGroup {
                    name: "b".into(),
                    indices: vec![1, 2],
                },
            ],
            3,
        )
        .is_err());
        let ok = FeatureGrouping::default_grouping();
        assert_eq!(ok.n_groups(), 21);
        assert_eq!(ok.groups[0].name, "All beds");
        assert_eq!(ok.groups[0].indices, vec![0, 2]);
    }

    fn rows_from(features: Vec<Vec<f64>>) -> Vec<FeatureRow> {
        features
            .into_iter()
            .enumerate()
            .map(|(i, f)| FeatureRow {
                origin_zone_id: format!("Z{i}"),
                hospital_id: "H0".into(),
                features: f,
                target_share: 0.0,
            })
            .collect()
    }

    #[test]
    fn summary_ranks_single_informative_feature_first() {
        let model = linear_model(vec![0.0, 3.0, 0.0], 0.0);
        let grouping = FeatureGrouping::singletons(3);
        let rows = rows_from(vec![
            vec![1.0, 2.0, -1.0],
            vec![-0.5, -1.0, 0.5],
            vec![0.25, 4.0, 2.0],
        ]);
        let summary = shap_summary(&model, &rows, &grouping, ShapMode::Exact, 0).unwrap();
        assert_eq!(summary.importance[0].group, "f1");
        assert_eq!(summary.importance[0].rank, 1);
        assert_eq!(summary.importance[1].mean_abs_phi, 0.0);
        assert_eq!(summary.importance[2].mean_abs_phi, 0.0);
    }

    #[test]
    fn summary_ranking_matches_per_row_dump() {
        let model = linear_model(vec![1.0, -2.0, 0.5], 0.25);
        let grouping = FeatureGrouping::singletons(3);
        let rows = rows_from(vec![
            vec![1.0, 2.0, -1.0],
            vec![-0.5, -1.0, 0.5],
            vec![0.25, 4.0, 2.0],
            vec![2.0, 0.1, -3.0],
        ]);
        let summary = shap_summary(&model, &rows, &grouping, ShapMode::Exact, 5).unwrap();
        // independent recomputation of mean |phi| from the per-row dump
        for g in 0..3 {
            let recomputed: f64 = summary
                .per_row_phi
                .iter()
                .map(|phis| phis[g].abs())
                .sum::<f64>()
                / rows.len() as f64;
            let reported = summary
                .importance
                .iter()
                .find(|imp| imp.group == format!("f{g}"))
                .unwrap()
                .mean_abs_phi;
            assert!((recomputed - reported).abs() < 1e-15);
        }
        // ranks are descending in mean |phi|
        for w in summary.importance.windows(2) {
            assert!(w[0].mean_abs_phi >= w[1].mean_abs_phi);
        }
    }

    struct ConstantModel {
        stats: FeatureStats,
        value: f64,
    }

    impl RowModel for ConstantModel {
        fn n_features(&self) -> usize {
            self.stats.n_features()
        }
        fn feature_stats(&self) -> &FeatureStats {
            &self.stats
        }
        fn score_row(&self, _features: &[f64]) -> Result<f64, ModelError> {
            Ok(self.value)
        }
    }

    #[test]
    fn constant_model_gives_flat_pdp() {
        let model = ConstantModel {
            stats: identity_stats(3),
            value: 0.7,
        };
        let grid = [0.0, 1.0, 2.0];
        let curve = pdp_curve(&model, 1, &grid, PdpMode::AtMeans, None).unwrap();
        assert!(curve.predictions.iter().all(|&p| p == 0.7));
    }

    #[test]
    fn linear_model_pdp_slope_matches_weight() {
        let model = linear_model(vec![0.0, 2.5, 0.0], 1.0);
        let grid = [0.0, 1.0, 2.0, 3.0];
        let curve = pdp_curve(&model, 1, &grid, PdpMode::AtMeans, None).unwrap();
        for w in curve.predictions.windows(2) {
            assert!((w[1] - w[0] - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn averaged_mode_averages_over_rows() {
        // model with an interaction so at-means and averaged differ
        struct Inter {
            stats: FeatureStats,
        }
        impl RowModel for Inter {
            fn n_features(&self) -> usize {
                2
            }
            fn feature_stats(&self) -> &FeatureStats {
                &self.stats
            }
            fn score_row(&self, f: &[f64]) -> Result<f64, ModelError> {
                Ok(f[0] * f[1])
            }
        }
        let model = Inter {
            stats: identity_stats(2),
        };
        let rows = rows_from(vec![vec![1.0, 0.0], vec![3.0, 0.0]]);
        let grid = [1.0, 2.0];
        let curve = pdp_curve(&model, 1, &grid, PdpMode::Averaged, Some(&rows)).unwrap();
        // mean over rows of f0 * v = 2 * v
        assert_eq!(curve.predictions, vec![2.0, 4.0]);
    }

    #[test]
    fn empty_grid_is_a_config_error() {
        let model = linear_model(vec![1.0], 0.0);
        assert!(matches!(
            pdp_curve(&model, 0, &[], PdpMode::AtMeans, None),
            Err(InterpretError::BadGrid(_))
        ));
    }

    #[test]
    fn decay_scenarios_reject_zone_side_attributes() {
        let model = linear_model(vec![0.0; N_FEATURES], 0.0);
        let grid = default_drive_grid();
        // index 9 is the first zone-side feature
        assert!(matches!(
            decay_scenarios(&model, 9, &grid),
            Err(InterpretError::NotHospitalSide(_))
        ));
    }

    #[test]
    fn default_grid_spans_zero_to_seventy() {
        let grid = default_drive_grid();
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), 70.0);
        assert_eq!(grid.len(), 141);
        assert!((grid[1] - grid[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_model_gives_three_identical_flat_scenarios() {
        let mut stats = identity_stats(N_FEATURES);
        stats.min[DRIVE_TIME_INDEX] = 0.0;
        stats.max[DRIVE_TIME_INDEX] = 70.0;
        let model = ConstantModel { stats, value: 0.4 };
        let grid = default_drive_grid();
        let curves = decay_scenarios(&model, 6, &grid).unwrap();
        for c in &curves {
            assert!(c.predictions.iter().all(|&p| p == 0.4));
        }
        let report = find_inflection(&curves[0], &curves[2]).unwrap();
        assert!(report.degenerate);
        assert!(report.crossings.is_empty());
    }

    fn curve_from(grid: Vec<f64>, predictions: Vec<f64>) -> PdpCurve {
        PdpCurve {
            feature_index: DRIVE_TIME_INDEX,
            feature_name: "drive_time_min".into(),
            scenario: "test".into(),
            background: "test".into(),
            grid,
            predictions,
        }
    }

    #[test]
    fn analytic_fixture_crosses_at_35() {
        let grid = default_drive_grid();
        let a = curve_from(grid.clone(), grid.iter().map(|t| 1.0 - t / 70.0).collect());
        let b = curve_from(grid.clone(), vec![0.5; grid.len()]);
        let report = find_inflection(&a, &b).unwrap();
        assert_eq!(report.crossings.len(), 1);
        assert_eq!(report.crossings[0].abscissa, 35.0);
        assert_eq!(report.crossings[0].post_sign, CrossingSign::Negative);
    }

    #[test]
    fn parallel_curves_have_no_crossings() {
        let grid = default_drive_grid();
        let a = curve_from(grid.clone(), grid.iter().map(|t| 1.0 - t / 70.0).collect());
        let b = curve_from(grid.clone(), grid.iter().map(|t| 1.2 - t / 70.0).collect());
        let report = find_inflection(&a, &b).unwrap();
        assert!(report.crossings.is_empty());
        assert!(!report.degenerate);
    }

    #[test]
    fn triple_crossing_returns_ascending_abscissas() {
        let grid = vec![0.0, 1.0, 2.0, 3.0];
        let a = curve_from(grid.clone(), vec![1.0, -1.0, 1.0, -1.0]);
        let b = curve_from(grid.clone(), vec![0.0, 0.0, 0.0, 0.0]);
        let report = find_inflection(&a, &b).unwrap();
        let abscissas: Vec<f64> = report.crossings.iter().map(|c| c.abscissa).collect();
        assert_eq!(abscissas, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn inflection_is_symmetric_in_curve_order() {
        let grid = default_drive_grid();
        let a = curve_from(
            grid.clone(),
            grid.iter().map(|t| 1.0 - t / 70.0 + 0.001 * t * t / 70.0).collect(),
        );
        let b = curve_from(grid.clone(), vec![0.55; grid.len()]);
        let fwd = find_inflection(&a, &b).unwrap();
        let rev = find_inflection(&b, &a).unwrap();
        let fa: Vec<f64> = fwd.crossings.iter().map(|c| c.abscissa).collect();
        let ra: Vec<f64> = rev.crossings.iter().map(|c| c.abscissa).collect();
        assert_eq!(fa, ra);
    }

    #[test]
    fn mismatched_grids_error() {
        let a = curve_from(vec![0.0, 1.0], vec![0.0, 1.0]);
        let b = curve_from(vec![0.0, 2.0], vec![0.0, 1.0]);
        assert!(matches!(
            find_inflection(&a, &b),
            Err(InterpretError::BadGrid(_))
        ));
    }

    #[test]
    fn leading_zero_run_reports_departure_point() {
        // curves coincide up to t=2.0, then separate: one crossing at the
        // last coincident grid point
        let grid = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let a = curve_from(grid.clone(), vec![1.0, 1.0, 1.0, 2.0, 3.0]);
        let b = curve_from(grid.clone(), vec![1.0, 1.0, 1.0, 1.0, 1.0]);
        let report = find_inflection(&a, &b).unwrap();
        assert_eq!(report.crossings.len(), 1);
        assert_eq!(report.crossings[0].abscissa, 2.0);
        assert_eq!(report.crossings[0].post_sign, CrossingSign::Positive);
    }
}
