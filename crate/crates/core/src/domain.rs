//! Core data model: zones, hospitals, flows, and feature assembly.
//!
//! The feature layout is frozen so that model coefficients, Shapley
//! attributions, and partial-dependence indices stay comparable across
//! model families: 9 hospital attributes, then 12 zone attributes, then
//! drive time, 22 features total (see [`FEATURE_NAMES`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of hospital-side features (block 0..9 of a feature vector).
pub const N_HOSPITAL_FEATURES: usize = 9;
/// Number of zone-side features (block 9..21).
pub const N_ZONE_FEATURES: usize = 12;
/// Total feature-vector width: hospital block, zone block, drive time.
pub const N_FEATURES: usize = N_HOSPITAL_FEATURES + N_ZONE_FEATURES + 1;
/// Index of the drive-time feature (last slot).
pub const DRIVE_TIME_INDEX: usize = N_FEATURES - 1;

/// Canonical feature names in frozen order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    // hospital block
    "staffed_all_beds",
    "staffed_icu_beds",
    "licensed_all_beds",
    "all_bed_occupancy",
    "icu_occupancy",
    "n_reviews",
    "rating",
    "hospital_lon",
    "hospital_lat",
    // zone block
    "total_population",
    "pct_under18",
    "pct_over65",
    "pct_hispanic",
    "pct_white",
    "pct_black",
    "pct_asian",
    "pct_bachelor_plus",
    "median_income",
    "pct_households_vehicle",
    "zone_lon",
    "zone_lat",
    // distance cost
    "drive_time_min",
];

/// Index of a feature by canonical name.
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

/// True when the feature index lies in the hospital block.
pub fn is_hospital_feature(index: usize) -> bool {
    index < N_HOSPITAL_FEATURES
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("origin {origin} has zero total outgoing visits")]
    DegenerateOrigin { origin: String },
    #[error("negative visit count {visits} on flow ({origin}, {hospital})")]
    NegativeVisits {
        origin: String,
        hospital: String,
        visits: f64,
    },
    #[error("no drive time recorded for pair ({origin}, {hospital})")]
    MissingDriveTime { origin: String, hospital: String },
    #[error("flow references unknown zone {0}")]
    UnknownZone(String),
    #[error("flow references unknown hospital {0}")]
    UnknownHospital(String),
    #[error("duplicate {kind} identifier {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("feature vector has {found} entries, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("dataset has no flows")]
    EmptyDataset,
    #[error("{field} = {value} outside valid range [{lo}, {hi}] for {id}")]
    OutOfRange {
        id: String,
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Socioeconomic attributes of a flow-origin zone.
///
/// All `pct_*` fields are fractions in [0, 1]; input files carry them as
/// percentages and the ingest layer divides by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneAttributes {
    pub zone_id: String,
    pub total_population: f64,
    pub pct_under18: f64,
    pub pct_over65: f64,
    pub pct_hispanic: f64,
    pub pct_white: f64,
    pub pct_black: f64,
    pub pct_asian: f64,
    pub pct_bachelor_plus: f64,
    pub median_income: f64,
    pub pct_households_vehicle: f64,
    pub lon: f64,
    pub lat: f64,
}

impl ZoneAttributes {
    /// Range checks for programmatic construction. Racial shares are only
    /// required to lie in [0, 1] individually; categories overlap in source
    /// data, so no cross-field sum constraint applies.
    pub fn validate(&self) -> Result<(), DomainError> {
        let fractions: [(&'static str, f64); 8] = [
            ("pct_under18", self.pct_under18),
            ("pct_over65", self.pct_over65),
            ("pct_hispanic", self.pct_hispanic),
            ("pct_white", self.pct_white),
            ("pct_black", self.pct_black),
            ("pct_asian", self.pct_asian),
            ("pct_bachelor_plus", self.pct_bachelor_plus),
            ("pct_households_vehicle", self.pct_households_vehicle),
        ];
        for (field, value) in fractions {
            check_range(&self.zone_id, field, value, 0.0, 1.0)?;
        }
        check_range(
            &self.zone_id,
            "total_population",
            self.total_population,
            0.0,
            f64::INFINITY,
        )?;
        check_range(
            &self.zone_id,
            "median_income",
            self.median_income,
            0.0,
            f64::INFINITY,
        )?;
        check_range(&self.zone_id, "lon", self.lon, -180.0, 180.0)?;
        check_range(&self.zone_id, "lat", self.lat, -90.0, 90.0)?;
        Ok(())
    }

    /// Zone feature block in frozen order.
    pub fn feature_block(&self) -> [f64; N_ZONE_FEATURES] {
        [
            self.total_population,
            self.pct_under18,
            self.pct_over65,
            self.pct_hispanic,
            self.pct_white,
            self.pct_black,
            self.pct_asian,
            self.pct_bachelor_plus,
            self.median_income,
            self.pct_households_vehicle,
            self.lon,
            self.lat,
        ]
    }
}

/// Capacity, occupancy, and reputation attributes of a hospital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalAttributes {
    pub hospital_id: String,
    pub staffed_all_beds: u32,
    pub staffed_icu_beds: u32,
    pub licensed_all_beds: u32,
    pub all_bed_occupancy: f64,
    pub icu_occupancy: f64,
    pub n_reviews: u32,
    pub rating: f64,
    pub lon: f64,
    pub lat: f64,
}

impl HospitalAttributes {
    pub fn validate(&self) -> Result<(), DomainError> {
        check_range(
            &self.hospital_id,
            "all_bed_occupancy",
            self.all_bed_occupancy,
            0.0,
            1.0,
        )?;
        check_range(
            &self.hospital_id,
            "icu_occupancy",
            self.icu_occupancy,
            0.0,
            1.0,
        )?;
        check_range(&self.hospital_id, "rating", self.rating, 0.0, 5.0)?;
        check_range(&self.hospital_id, "lon", self.lon, -180.0, 180.0)?;
        check_range(&self.hospital_id, "lat", self.lat, -90.0, 90.0)?;
        Ok(())
    }

    /// Soft plausibility checks: violations are reported as warnings, never
    /// rejections (source registries disagree on bed categories).
    pub fn soft_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.staffed_icu_beds > self.staffed_all_beds {
            warnings.push(format!(
                "hospital {}: staffed_icu_beds {} exceeds staffed_all_beds {}",
                self.hospital_id, self.staffed_icu_beds, self.staffed_all_beds
            ));
        }
        if self.staffed_all_beds > self.licensed_all_beds {
            warnings.push(format!(
                "hospital {}: staffed_all_beds {} exceeds licensed_all_beds {}",
                self.hospital_id, self.staffed_all_beds, self.licensed_all_beds
            ));
        }
        warnings
    }

    /// Hospital feature block in frozen order.
    pub fn feature_block(&self) -> [f64; N_HOSPITAL_FEATURES] {
        [
            f64::from(self.staffed_all_beds),
            f64::from(self.staffed_icu_beds),
            f64::from(self.licensed_all_beds),
            self.all_bed_occupancy,
            self.icu_occupancy,
            f64::from(self.n_reviews),
            self.rating,
            self.lon,
            self.lat,
        ]
    }
}

fn check_range(
    id: &str,
    field: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
) -> Result<(), DomainError> {
    if !value.is_finite() || value < lo || value > hi {
        return Err(DomainError::OutOfRange {
            id: id.to_string(),
            field,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

/// One aggregated origin-destination flow (period-averaged visit count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin_zone_id: String,
    pub hospital_id: String,
    pub visits: f64,
    pub drive_time_min: f64,
}

/// A validated spatial-interaction instance: zones, hospitals, flows, and a
/// drive-time lookup covering every pair referenced by a flow.
///
/// Values are immutable after construction and safe to share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ODDataset {
    pub zones: Vec<ZoneAttributes>,
    pub hospitals: Vec<HospitalAttributes>,
    pub flows: Vec<FlowRecord>,
    /// Total mapping (zone_id, hospital_id) -> minutes. Ordered so that
    /// serialization is reproducible byte-for-byte (serialized as a sorted
    /// entry list, since JSON keys must be strings).
    #[serde(with = "drive_time_entries")]
    pub drive_time: BTreeMap<(String, String), f64>,
}

mod drive_time_entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(String, String), f64>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<(&String, &String, f64)> =
            map.iter().map(|((o, h), &t)| (o, h, t)).collect();
        entries.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<(String, String), f64>, D::Error> {
        let entries: Vec<(String, String, f64)> = Vec::deserialize(deserializer)?;
        Ok(entries.into_iter().map(|(o, h, t)| ((o, h), t)).collect())
    }
}

impl ODDataset {
    /// Builds a dataset, enforcing referential integrity: unique ids, flows
    /// referencing known zones/hospitals, and drive-time coverage for every
    /// flow pair. Flow `drive_time_min` is taken from the lookup.
    pub fn new(
        zones: Vec<ZoneAttributes>,
        hospitals: Vec<HospitalAttributes>,
        mut flows: Vec<FlowRecord>,
        drive_time: BTreeMap<(String, String), f64>,
    ) -> Result<Self, DomainError> {
        let mut zone_ids = std::collections::BTreeSet::new();
        for z in &zones {
            if !zone_ids.insert(z.zone_id.clone()) {
                return Err(DomainError::DuplicateId {
                    kind: "zone",
                    id: z.zone_id.clone(),
                });
            }
        }
        let mut hosp_ids = std::collections::BTreeSet::new();
        for h in &hospitals {
            if !hosp_ids.insert(h.hospital_id.clone()) {
                return Err(DomainError::DuplicateId {
                    kind: "hospital",
                    id: h.hospital_id.clone(),
                });
            }
        }
        let mut pairs = std::collections::BTreeSet::new();
        for f in &mut flows {
            if !zone_ids.contains(&f.origin_zone_id) {
                return Err(DomainError::UnknownZone(f.origin_zone_id.clone()));
            }
            if !hosp_ids.contains(&f.hospital_id) {
                return Err(DomainError::UnknownHospital(f.hospital_id.clone()));
            }
            if !pairs.insert((f.origin_zone_id.clone(), f.hospital_id.clone())) {
                return Err(DomainError::DuplicateId {
                    kind: "flow pair",
                    id: format!("({}, {})", f.origin_zone_id, f.hospital_id),
                });
            }
            if f.visits < 0.0 || !f.visits.is_finite() {
                return Err(DomainError::NegativeVisits {
                    origin: f.origin_zone_id.clone(),
                    hospital: f.hospital_id.clone(),
                    visits: f.visits,
                });
            }
            let key = (f.origin_zone_id.clone(), f.hospital_id.clone());
            match drive_time.get(&key) {
                Some(&minutes) => f.drive_time_min = minutes,
                None => {
                    return Err(DomainError::MissingDriveTime {
                        origin: f.origin_zone_id.clone(),
                        hospital: f.hospital_id.clone(),
                    })
                }
            }
        }
        Ok(Self {
            zones,
            hospitals,
            flows,
            drive_time,
        })
    }

    pub fn zone(&self, id: &str) -> Option<&ZoneAttributes> {
        self.zones.iter().find(|z| z.zone_id == id)
    }

    pub fn hospital(&self, id: &str) -> Option<&HospitalAttributes> {
        self.hospitals.iter().find(|h| h.hospital_id == id)
    }

    pub fn drive_time_for(&self, origin: &str, hospital: &str) -> Option<f64> {
        self.drive_time
            .get(&(origin.to_string(), hospital.to_string()))
            .copied()
    }
}

/// One model-ready row: the 22-feature vector for an (origin, hospital)
/// pair plus the origin-relative visitation share it should predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub origin_zone_id: String,
    pub hospital_id: String,
    pub features: Vec<f64>,
    pub target_share: f64,
}

impl FeatureRow {
    pub fn new(
        origin_zone_id: String,
        hospital_id: String,
        features: Vec<f64>,
        target_share: f64,
    ) -> Result<Self, DomainError> {
        if features.len() != N_FEATURES {
            return Err(DomainError::ShapeMismatch {
                expected: N_FEATURES,
                found: features.len(),
            });
        }
        Ok(Self {
            origin_zone_id,
            hospital_id,
            features,
            target_share,
        })
    }
}

/// Per-feature statistics fitted on training rows only. Standardization of
/// validation/test rows must reuse the training-fit stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Sample standard deviation (n-1 denominator); 0 for constant features.
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Flags features whose std collapsed to zero on the fitting set.
    pub constant: Vec<bool>,
}

impl FeatureStats {
    /// Fits stats from row-major data with `n_features` columns.
    pub fn fit(data: &[f64], n_features: usize) -> Self {
        assert!(n_features > 0 && data.len() % n_features == 0);
        let n_rows = data.len() / n_features;
        let mut mean = vec![0.0; n_features];
        let mut min = vec![f64::INFINITY; n_features];
        let mut max = vec![f64::NEG_INFINITY; n_features];
        for row in data.chunks_exact(n_features) {
            for (j, &v) in row.iter().enumerate() {
                mean[j] += v;
                if v < min[j] {
                    min[j] = v;
                }
                if v > max[j] {
                    max[j] = v;
                }
            }
        }
        for m in &mut mean {
            *m /= n_rows as f64;
        }
        let mut var = vec![0.0; n_features];
        for row in data.chunks_exact(n_features) {
            for (j, &v) in row.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let denom = if n_rows > 1 { (n_rows - 1) as f64 } else { 1.0 };
        let mut std = vec![0.0; n_features];
        let mut constant = vec![false; n_features];
        for j in 0..n_features {
            let s = (var[j] / denom).sqrt();
            if s < 1e-12 * (1.0 + mean[j].abs()) {
                std[j] = 0.0;
                constant[j] = true;
            } else {
                std[j] = s;
            }
        }
        Self {
            mean,
            std,
            min,
            max,
            constant,
        }
    }

    pub fn fit_rows(rows: &[FeatureRow]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * N_FEATURES);
        for r in rows {
            data.extend_from_slice(&r.features);
        }
        Self::fit(&data, N_FEATURES)
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Z-scores one feature vector in place. Constant features map to 0.
    pub fn apply(&self, features: &mut [f64]) -> Result<(), DomainError> {
        if features.len() != self.n_features() {
            return Err(DomainError::ShapeMismatch {
                expected: self.n_features(),
                found: features.len(),
            });
        }
        for (j, v) in features.iter_mut().enumerate() {
            *v = if self.constant[j] {
                0.0
            } else {
                (*v - self.mean[j]) / self.std[j]
            };
        }
        Ok(())
    }

    /// Inverse of [`FeatureStats::apply`] for non-constant features.
    /// Constant features are restored to their fitted mean.
    pub fn invert(&self, features: &mut [f64]) -> Result<(), DomainError> {
        if features.len() != self.n_features() {
            return Err(DomainError::ShapeMismatch {
                expected: self.n_features(),
                found: features.len(),
            });
        }
        for (j, v) in features.iter_mut().enumerate() {
            *v = if self.constant[j] {
                self.mean[j]
            } else {
                *v * self.std[j] + self.mean[j]
            };
        }
        Ok(())
    }
}

/// Normalizes flow volumes into per-origin visitation shares: each flow's
/// visits divided by its origin's total outgoing visits.
pub fn normalize_per_origin(
    flows: &[FlowRecord],
) -> Result<BTreeMap<(String, String), f64>, DomainError> {
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for f in flows {
        if f.visits < 0.0 || !f.visits.is_finite() {
            return Err(DomainError::NegativeVisits {
                origin: f.origin_zone_id.clone(),
                hospital: f.hospital_id.clone(),
                visits: f.visits,
            });
        }
        *totals.entry(f.origin_zone_id.as_str()).or_insert(0.0) += f.visits;
    }
    for (origin, total) in &totals {
        if *total <= 0.0 {
            return Err(DomainError::DegenerateOrigin {
                origin: (*origin).to_string(),
            });
        }
    }
    let mut shares = BTreeMap::new();
    for f in flows {
        let total = totals[f.origin_zone_id.as_str()];
        shares.insert(
            (f.origin_zone_id.clone(), f.hospital_id.clone()),
            f.visits / total,
        );
    }
    Ok(shares)
}

/// Assembles one [`FeatureRow`] per flow, in flow order, with targets set to
/// the per-origin normalized shares. Deterministic for identical datasets.
pub fn assemble_features(dataset: &ODDataset) -> Result<Vec<FeatureRow>, DomainError> {
    let shares = normalize_per_origin(&dataset.flows)?;
    let zone_blocks: BTreeMap<&str, [f64; N_ZONE_FEATURES]> = dataset
        .zones
        .iter()
        .map(|z| (z.zone_id.as_str(), z.feature_block()))
        .collect();
    let hosp_blocks: BTreeMap<&str, [f64; N_HOSPITAL_FEATURES]> = dataset
        .hospitals
        .iter()
        .map(|h| (h.hospital_id.as_str(), h.feature_block()))
        .collect();

    let mut rows = Vec::with_capacity(dataset.flows.len());
    for f in &dataset.flows {
        let hosp = hosp_blocks
            .get(f.hospital_id.as_str())
            .ok_or_else(|| DomainError::UnknownHospital(f.hospital_id.clone()))?;
        let zone = zone_blocks
            .get(f.origin_zone_id.as_str())
            .ok_or_else(|| DomainError::UnknownZone(f.origin_zone_id.clone()))?;
        let minutes = dataset
            .drive_time_for(&f.origin_zone_id, &f.hospital_id)
            .ok_or_else(|| DomainError::MissingDriveTime {
                origin: f.origin_zone_id.clone(),
                hospital: f.hospital_id.clone(),
            })?;
        let mut features = Vec::with_capacity(N_FEATURES);
        features.extend_from_slice(hosp);
        features.extend_from_slice(zone);
        features.push(minutes);
        let share = shares[&(f.origin_zone_id.clone(), f.hospital_id.clone())];
        rows.push(FeatureRow::new(
            f.origin_zone_id.clone(),
            f.hospital_id.clone(),
            features,
            share,
        )?);
    }
    Ok(rows)
}

/// Expands a dataset to the full candidate matrix: one row per
/// (zone-with-flows, hospital) pair. Observed pairs keep their normalized
/// share target; unobserved pairs get target 0. Used by the simplex-mode
/// neural models, whose per-origin choice set is every hospital.
pub fn expand_candidate_rows(dataset: &ODDataset) -> Result<Vec<FeatureRow>, DomainError> {
    let shares = normalize_per_origin(&dataset.flows)?;
    let mut origins_with_flows: Vec<&str> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for f in &dataset.flows {
        if seen.insert(f.origin_zone_id.as_str()) {
            origins_with_flows.push(f.origin_zone_id.as_str());
        }
    }
    let mut rows = Vec::with_capacity(origins_with_flows.len() * dataset.hospitals.len());
    for origin in origins_with_flows {
        let zone = dataset
            .zone(origin)
            .ok_or_else(|| DomainError::UnknownZone(origin.to_string()))?;
        let zone_block = zone.feature_block();
        for h in &dataset.hospitals {
            let minutes = dataset.drive_time_for(origin, &h.hospital_id).ok_or_else(|| {
                DomainError::MissingDriveTime {
                    origin: origin.to_string(),
                    hospital: h.hospital_id.clone(),
                }
            })?;
            let mut features = Vec::with_capacity(N_FEATURES);
            features.extend_from_slice(&h.feature_block());
            features.extend_from_slice(&zone_block);
            features.push(minutes);
            let share = shares
                .get(&(origin.to_string(), h.hospital_id.clone()))
                .copied()
                .unwrap_or(0.0);
            rows.push(FeatureRow::new(
                origin.to_string(),
                h.hospital_id.clone(),
                features,
                share,
            )?);
        }
    }
    Ok(rows)
}

/// Returns rows with z-scored features. `stats` must come from training
/// rows only; constant features map to 0.
pub fn standardize(rows: &[FeatureRow], stats: &FeatureStats) -> Result<Vec<FeatureRow>, DomainError> {
    rows.iter()
        .map(|r| {
            let mut features = r.features.clone();
            stats.apply(&mut features)?;
            Ok(FeatureRow {
                origin_zone_id: r.origin_zone_id.clone(),
                hospital_id: r.hospital_id.clone(),
                features,
                target_share: r.target_share,
            })
        })
        .collect()
}

/// Inverse transform of [`standardize`].
pub fn destandardize(
    rows: &[FeatureRow],
    stats: &FeatureStats,
) -> Result<Vec<FeatureRow>, DomainError> {
    rows.iter()
        .map(|r| {
            let mut features = r.features.clone();
            stats.invert(&mut features)?;
            Ok(FeatureRow {
                origin_zone_id: r.origin_zone_id.clone(),
                hospital_id: r.hospital_id.clone(),
                features,
                target_share: r.target_share,
            })
        })
        .collect()
}
