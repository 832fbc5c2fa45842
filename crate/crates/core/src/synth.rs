//! Synthetic-city generator with known gravity-law ground truth.
//!
//! Zones and hospitals are placed on a plane; each pair's true visitation
//! share is the per-zone softmax of the utility
//!
//! ```text
//! u = theta_size * ln(1 + staffed_beds)
//!   + theta_rating * rating * [drive_time > tau]
//!   + theta_occupancy * occupancy
//!   - beta * drive_time
//! ```
//!
//! so distance decay, a size effect, and a rating effect that switches on
//! beyond a distance threshold are all reproducible by construction. The
//! exported dataset feeds the ingest pipeline unchanged, and the true
//! shares bound what any model can achieve on the (possibly noisy)
//! observed flows.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    assemble_features, DomainError, FeatureStats, FlowRecord, HospitalAttributes, ODDataset,
    ZoneAttributes, DRIVE_TIME_INDEX, N_FEATURES,
};
use crate::evaluation::{EvalError, MetricTriple};
use crate::model::{ModelError, RowModel};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate geometry: all sampled points coincide")]
    DegenerateGeometry,
    #[error("ground truth does not pair with this dataset: {0}")]
    PairingMismatch(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Observation noise applied to the generated flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseMode {
    /// Visits are exactly `outflow * true_share` for every pair.
    None,
    /// Each zone's visits are a multinomial draw of `samples` trips over
    /// its true shares; zero-count pairs drop out of the observed flows.
    Multinomial { samples: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_zones: usize,
    pub n_hospitals: usize,
    pub theta_size: f64,
    pub theta_rating: f64,
    pub theta_occupancy: f64,
    /// Distance threshold (minutes) beyond which the rating term applies.
    pub tau_min: f64,
    /// Distance-decay rate per minute.
    pub beta_per_min: f64,
    /// Trips per zone in noiseless mode. A power of two keeps the
    /// noiseless observed shares bitwise equal to the true shares.
    pub outflow_per_zone: f64,
    pub noise: NoiseMode,
    pub extent_km: f64,
    pub speed_kmh: f64,
    /// Multiplicative drive-time jitter amplitude.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_zones: 50,
            n_hospitals: 10,
            theta_size: 0.6,
            theta_rating: 0.0,
            theta_occupancy: 0.0,
            tau_min: 0.0,
            beta_per_min: 0.12,
            outflow_per_zone: 1024.0,
            noise: NoiseMode::None,
            extent_km: 35.0,
            speed_kmh: 40.0,
            jitter: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_zones < 1 || self.n_hospitals < 1 {
            return Err(SynthError::InvalidConfig(
                "need at least one zone and one hospital".into(),
            ));
        }
        if self.beta_per_min < 0.0 {
            return Err(SynthError::InvalidConfig("beta must be >= 0".into()));
        }
        if self.tau_min < 0.0 {
            return Err(SynthError::InvalidConfig("tau must be >= 0".into()));
        }
        if !(self.outflow_per_zone > 0.0) {
            return Err(SynthError::InvalidConfig("outflow must be positive".into()));
        }
        if !(self.speed_kmh > 0.0) {
            return Err(SynthError::InvalidConfig("speed must be positive".into()));
        }
        if self.extent_km < 0.0 || !(0.0..1.0).contains(&self.jitter) {
            return Err(SynthError::InvalidConfig(
                "extent must be >= 0 and jitter in [0, 1)".into(),
            ));
        }
        if let NoiseMode::Multinomial { samples } = self.noise {
            if samples == 0 {
                return Err(SynthError::InvalidConfig(
                    "multinomial noise needs at least one sample".into(),
                ));
            }
        }
        Ok(())
    }
}

/// True per-pair shares (zone-major) and the best-achievable metrics of
/// the true-share predictor on the generated observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub zone_ids: Vec<String>,
    pub hospital_ids: Vec<String>,
    /// `shares[z * n_hospitals + h]`.
    pub shares: Vec<f64>,
    /// Best-achievable metrics of the true-share predictor; `None` when a
    /// metric is undefined (e.g. a fully symmetric world has zero target
    /// range, so NRMSE does not exist).
    pub achievable: Option<MetricTriple>,
    pub config: SynthConfig,
}

impl GroundTruth {
    pub fn true_share(&self, zone_idx: usize, hosp_idx: usize) -> f64 {
        self.shares[zone_idx * self.hospital_ids.len() + hosp_idx]
    }

    /// Shannon entropy (nats) of one zone's true share vector.
    pub fn zone_entropy(&self, zone_idx: usize) -> f64 {
        let h = self.hospital_ids.len();
        self.shares[zone_idx * h..(zone_idx + 1) * h]
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Samples a city, computes true shares, and draws observed flows.
/// Identical seeds produce identical datasets and identical exported
/// files.
pub fn generate_city(config: &SynthConfig) -> Result<(ODDataset, GroundTruth), SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // geometry and attributes (all randomness before utilities, so the
    // utility parameters never shift the sampling stream)
    let mut zone_xy = Vec::with_capacity(config.n_zones);
    let mut zones = Vec::with_capacity(config.n_zones);
    for i in 0..config.n_zones {
        let x: f64 = rng.random_range(0.0..=config.extent_km);
        let y: f64 = rng.random_range(0.0..=config.extent_km);
        zone_xy.push((x, y));
        zones.push(ZoneAttributes {
            zone_id: format!("Z{i:04}"),
            total_population: rng.random_range(200..5000) as f64,
            pct_under18: rng.random_range(0.05..0.40),
            pct_over65: rng.random_range(0.02..0.35),
            pct_hispanic: rng.random_range(0.0..1.0),
            pct_white: rng.random_range(0.0..1.0),
            pct_black: rng.random_range(0.0..1.0),
            pct_asian: rng.random_range(0.0..1.0),
            pct_bachelor_plus: rng.random_range(0.05..0.80),
            median_income: rng.random_range(20_000.0..150_000.0),
            pct_households_vehicle: rng.random_range(0.50..1.0),
            lon: x / 110.0,
            lat: y / 110.0,
        });
    }
    let mut hosp_xy = Vec::with_capacity(config.n_hospitals);
    let mut hospitals = Vec::with_capacity(config.n_hospitals);
    for i in 0..config.n_hospitals {
        let x: f64 = rng.random_range(0.0..=config.extent_km);
        let y: f64 = rng.random_range(0.0..=config.extent_km);
        hosp_xy.push((x, y));
        let staffed_all_beds: u32 = rng.random_range(10..=1310);
        let staffed_icu_beds =
            ((f64::from(staffed_all_beds) * rng.random_range(0.03..0.15)) as u32).min(162);
        let licensed_all_beds = (staffed_all_beds + rng.random_range(0..=100)).min(1403);
        hospitals.push(HospitalAttributes {
            hospital_id: format!("H{i:03}"),
            staffed_all_beds,
            staffed_icu_beds,
            licensed_all_beds,
            all_bed_occupancy: rng.random_range(0.0..0.86),
            icu_occupancy: rng.random_range(0.0..0.92),
            n_reviews: rng.random_range(2..=3763),
            rating: rng.random_range(1.0..4.8),
            lon: x / 110.0,
            lat: y / 110.0,
        });
    }

    let coincident = zone_xy
        .iter()
        .chain(&hosp_xy)
        .all(|&p| p == zone_xy[0]);
    if coincident && config.n_zones + config.n_hospitals > 1 {
        return Err(SynthError::DegenerateGeometry);
    }

    let mut drive_time = BTreeMap::new();
    let mut minutes = vec![0.0; config.n_zones * config.n_hospitals];
    for (zi, &(zx, zy)) in zone_xy.iter().enumerate() {
        for (hi, &(hx, hy)) in hosp_xy.iter().enumerate() {
            let dist_km = ((zx - hx).powi(2) + (zy - hy).powi(2)).sqrt();
            let jitter = 1.0 + config.jitter * (2.0 * rng.random_range(0.0..1.0) - 1.0);
            let t = (dist_km / config.speed_kmh * 60.0 * jitter).max(0.5);
            minutes[zi * config.n_hospitals + hi] = t;
            drive_time.insert(
                (zones[zi].zone_id.clone(), hospitals[hi].hospital_id.clone()),
                t,
            );
        }
    }

    // true shares: per-zone softmax of the utility
    let mut shares = vec![0.0; config.n_zones * config.n_hospitals];
    for zi in 0..config.n_zones {
        let utilities: Vec<f64> = (0..config.n_hospitals)
            .map(|hi| {
                let h = &hospitals[hi];
                let d = minutes[zi * config.n_hospitals + hi];
                pair_utility(
                    config,
                    f64::from(h.staffed_all_beds),
                    h.rating,
                    h.all_bed_occupancy,
                    d,
                )
            })
            .collect();
        let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let exps: Vec<f64> = utilities
            .iter()
            .map(|u| {
                let e = (u - max).exp();
                sum += e;
                e
            })
            .collect();
        for (hi, e) in exps.into_iter().enumerate() {
            shares[zi * config.n_hospitals + hi] = e / sum;
        }
    }

    // observed flows
    let mut flows = Vec::new();
    match config.noise {
        NoiseMode::None => {
            for zi in 0..config.n_zones {
                for hi in 0..config.n_hospitals {
                    flows.push(FlowRecord {
                        origin_zone_id: zones[zi].zone_id.clone(),
                        hospital_id: hospitals[hi].hospital_id.clone(),
                        visits: config.outflow_per_zone * shares[zi * config.n_hospitals + hi],
                        drive_time_min: 0.0,
                    });
                }
            }
        }
        NoiseMode::Multinomial { samples } => {
            for zi in 0..config.n_zones {
                // conditional binomial decomposition of the multinomial
                let mut remaining = samples;
                let mut rest_prob = 1.0;
                for hi in 0..config.n_hospitals {
                    if remaining == 0 {
                        break;
                    }
                    let p = shares[zi * config.n_hospitals + hi];
                    let count = if hi + 1 == config.n_hospitals {
                        remaining
                    } else {
                        let cond = (p / rest_prob).clamp(0.0, 1.0);
                        let draw = Binomial::new(remaining, cond)
                            .expect("conditional probability in range")
                            .sample(&mut rng);
                        rest_prob -= p;
                        remaining -= draw;
                        draw
                    };
                    if count > 0 {
                        flows.push(FlowRecord {
                            origin_zone_id: zones[zi].zone_id.clone(),
                            hospital_id: hospitals[hi].hospital_id.clone(),
                            visits: count as f64,
                            drive_time_min: 0.0,
                        });
                    }
                }
            }
        }
    }

    let dataset = ODDataset::new(zones, hospitals, flows, drive_time)?;
    let mut truth = GroundTruth {
        zone_ids: dataset.zones.iter().map(|z| z.zone_id.clone()).collect(),
        hospital_ids: dataset
            .hospitals
            .iter()
            .map(|h| h.hospital_id.clone())
            .collect(),
        shares,
        achievable: None,
        config: config.clone(),
    };
    truth.achievable = oracle_report(&truth, &dataset).ok();
    Ok((dataset, truth))
}

fn pair_utility(config: &SynthConfig, staffed_beds: f64, rating: f64, occupancy: f64, d: f64) -> f64 {
    let gate = if d > config.tau_min { 1.0 } else { 0.0 };
    config.theta_size * (1.0 + staffed_beds).ln()
        + config.theta_rating * rating * gate
        + config.theta_occupancy * occupancy
        - config.beta_per_min * d
}

/// Metrics of the true-share predictor against the observed shares: the
/// best-achievable reference for any fitted model. True shares are
/// renormalized over each origin's observed destinations, mirroring the
/// share definition of the observations themselves.
pub fn oracle_report(truth: &GroundTruth, dataset: &ODDataset) -> Result<MetricTriple, SynthError> {
    let zone_pos: BTreeMap<&str, usize> = truth
        .zone_ids
        .iter()
        .enumerate()
        .map(|(i, z)| (z.as_str(), i))
        .collect();
    let hosp_pos: BTreeMap<&str, usize> = truth
        .hospital_ids
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    for z in &dataset.zones {
        if !zone_pos.contains_key(z.zone_id.as_str()) {
            return Err(SynthError::PairingMismatch(format!(
                "zone {} missing from ground truth",
                z.zone_id
            )));
        }
    }
    for h in &dataset.hospitals {
        if !hosp_pos.contains_key(h.hospital_id.as_str()) {
            return Err(SynthError::PairingMismatch(format!(
                "hospital {} missing from ground truth",
                h.hospital_id
            )));
        }
    }

    let observed = crate::domain::normalize_per_origin(&dataset.flows)?;
    // per-origin true-share mass over observed destinations, accumulated
    // in flow order exactly like the observed normalization
    let mut true_totals: BTreeMap<&str, f64> = BTreeMap::new();
    for f in &dataset.flows {
        let zi = zone_pos[f.origin_zone_id.as_str()];
        let hi = hosp_pos[f.hospital_id.as_str()];
        *true_totals.entry(f.origin_zone_id.as_str()).or_insert(0.0) +=
            truth.true_share(zi, hi);
    }
    let mut y = Vec::with_capacity(dataset.flows.len());
    let mut y_hat = Vec::with_capacity(dataset.flows.len());
    for f in &dataset.flows {
        let zi = zone_pos[f.origin_zone_id.as_str()];
        let hi = hosp_pos[f.hospital_id.as_str()];
        y.push(observed[&(f.origin_zone_id.clone(), f.hospital_id.clone())]);
        y_hat.push(truth.true_share(zi, hi) / true_totals[f.origin_zone_id.as_str()]);
    }
    Ok(MetricTriple::compute(&y, &y_hat)?)
}

/// The generating utility itself, wrapped as a scorable model so the
/// explanation tools can sweep it. Scores are raw utilities (softmax
/// logits), computed from the canonical 22-feature layout.
pub struct TrueUtilityModel {
    config: SynthConfig,
    stats: FeatureStats,
}

impl TrueUtilityModel {
    /// Builds the true model with feature statistics taken from the
    /// dataset's assembled rows (backgrounds and sweep levels come from
    /// there).
    pub fn new(config: &SynthConfig, dataset: &ODDataset) -> Result<Self, SynthError> {
        let rows = assemble_features(dataset)?;
        Ok(Self {
            config: config.clone(),
            stats: FeatureStats::fit_rows(&rows),
        })
    }
}

impl RowModel for TrueUtilityModel {
    fn n_features(&self) -> usize {
        N_FEATURES
    }

    fn feature_stats(&self) -> &FeatureStats {
        &self.stats
    }

    fn score_row(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != N_FEATURES {
            return Err(ModelError::ShapeMismatch {
                expected: N_FEATURES,
                found: features.len(),
            });
        }
        // staffed beds, occupancy, and rating sit at fixed slots of the
        // hospital block; drive time is the last feature
        Ok(pair_utility(
            &self.config,
            features[0],
            features[6],
            features[3],
            features[DRIVE_TIME_INDEX],
        ))
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), SynthError> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Emits the four ingest tables plus `truth.csv` and `oracle.json`.
/// Percent-labeled zone columns are written on the 0-100 scale the ingest
/// schema expects. The flows table carries a single yearly period label,
/// so aggregation over a one-year window reproduces the visits exactly.
pub fn write_city(
    dir: &Path,
    dataset: &ODDataset,
    truth: &GroundTruth,
) -> Result<(), SynthError> {
    let mut zones = String::from(
        "zone_id,total_population,pct_under18,pct_over65,pct_hispanic,pct_white,pct_black,pct_asian,pct_bachelor_plus,median_income,pct_households_vehicle,lon,lat\n",
    );
    for z in &dataset.zones {
        zones.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            z.zone_id,
            z.total_population,
            z.pct_under18 * 100.0,
            z.pct_over65 * 100.0,
            z.pct_hispanic * 100.0,
            z.pct_white * 100.0,
            z.pct_black * 100.0,
            z.pct_asian * 100.0,
            z.pct_bachelor_plus * 100.0,
            z.median_income,
            z.pct_households_vehicle * 100.0,
            z.lon,
            z.lat
        ));
    }
    write_file(dir, "zones.csv", &zones)?;

    let mut hospitals = String::from(
        "hospital_id,staffed_all_beds,staffed_icu_beds,licensed_all_beds,all_bed_occupancy,icu_occupancy,n_reviews,rating,lon,lat\n",
    );
    for h in &dataset.hospitals {
        hospitals.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            h.hospital_id,
            h.staffed_all_beds,
            h.staffed_icu_beds,
            h.licensed_all_beds,
            h.all_bed_occupancy,
            h.icu_occupancy,
            h.n_reviews,
            h.rating,
            h.lon,
            h.lat
        ));
    }
    write_file(dir, "hospitals.csv", &hospitals)?;

    let mut flows = String::from("origin_zone_id,hospital_id,period_label,visits\n");
    for f in &dataset.flows {
        flows.push_str(&format!(
            "{},{},{},{}\n",
            f.origin_zone_id, f.hospital_id, SYNTH_PERIOD_LABEL, f.visits
        ));
    }
    write_file(dir, "flows.csv", &flows)?;

    let mut dt = String::from("origin_zone_id,hospital_id,drive_time_min\n");
    for ((origin, hospital), minutes) in &dataset.drive_time {
        dt.push_str(&format!("{origin},{hospital},{minutes}\n"));
    }
    write_file(dir, "drivetime.csv", &dt)?;

    let mut truth_csv = String::from("origin_zone_id,hospital_id,true_share\n");
    for (zi, zone) in truth.zone_ids.iter().enumerate() {
        for (hi, hosp) in truth.hospital_ids.iter().enumerate() {
            truth_csv.push_str(&format!(
                "{zone},{hosp},{}\n",
                truth.true_share(zi, hi)
            ));
        }
    }
    write_file(dir, "truth.csv", &truth_csv)?;

    let oracle = serde_json::json!({
        "achievable": truth.achievable,
        "config": truth.config,
    });
    write_file(
        dir,
        "oracle.json",
        &serde_json::to_string_pretty(&oracle).expect("oracle serialization"),
    )?;
    Ok(())
}

/// Period label used in exported flow tables.
pub const SYNTH_PERIOD_LABEL: &str = "2020";

/// Window matching [`SYNTH_PERIOD_LABEL`]: aggregation divides by one year.
pub fn synth_period_config() -> crate::ingest::PeriodConfig {
    crate::ingest::PeriodConfig::new(crate::ingest::PeriodScheme::Yearly, 2020, 2020)
}
