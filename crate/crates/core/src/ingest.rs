//! Loading, validation, aggregation, and filtering of the four input tables.
//!
//! Input files are UTF-8 CSV with exact lower_snake_case headers:
//!
//! ```text
//! zones.csv:     zone_id,total_population,pct_under18,pct_over65,pct_hispanic,
//!                pct_white,pct_black,pct_asian,pct_bachelor_plus,median_income,
//!                pct_households_vehicle,lon,lat
//! hospitals.csv: hospital_id,staffed_all_beds,staffed_icu_beds,licensed_all_beds,
//!                all_bed_occupancy,icu_occupancy,n_reviews,rating,lon,lat
//! flows.csv:     origin_zone_id,hospital_id,period_label,visits
//! drivetime.csv: origin_zone_id,hospital_id,drive_time_min
//! ```
//!
//! `pct_*` columns arrive as percentages in [0, 100] and are divided by 100
//! at load; occupancy columns are already fractions in [0, 1]. File-level
//! problems (missing file, wrong header set) fail the load outright;
//! row-level problems are collected into a [`ValidationReport`] and the
//! offending rows are dropped. A dataset with any fatal report entry is
//! never assembled into an [`ODDataset`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    DomainError, FlowRecord, HospitalAttributes, ODDataset, ZoneAttributes,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: missing column {column}")]
    MissingColumn { path: String, column: String },
    #[error("{path}: duplicate column {column}")]
    DuplicateColumn { path: String, column: String },
    #[error("{path}: unexpected column {column}")]
    UnexpectedColumn { path: String, column: String },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("period label {label:?} does not parse under the {scheme} scheme")]
    BadPeriodLabel { label: String, scheme: String },
    #[error("record for pair ({origin}, {hospital}) has period {label:?} outside window {start}..={end}")]
    PeriodOutsideWindow {
        origin: String,
        hospital: String,
        label: String,
        start: i32,
        end: i32,
    },
    #[error("no visit records to aggregate")]
    EmptyInput,
    #[error("operation would leave the dataset with no flows")]
    EmptyDataset,
    #[error("dataset has fatal validation errors:\n{0}")]
    FatalValidation(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One unaggregated visitation record as it appears in `flows.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVisitRecord {
    pub origin_zone_id: String,
    pub hospital_id: String,
    pub period_label: String,
    pub visits: f64,
}

/// How `period_label` values are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodScheme {
    /// Labels are plain years: `2020`.
    Yearly,
    /// Labels are ISO weeks: `2020-W05`. The label's year component is the
    /// ISO year, so records binned to week 53 stay with their labeled year.
    IsoWeekly,
}

impl std::fmt::Display for PeriodScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PeriodScheme::Yearly => write!(f, "yearly"),
            PeriodScheme::IsoWeekly => write!(f, "iso-weekly"),
        }
    }
}

/// Aggregation window configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodConfig {
    pub scheme: PeriodScheme,
    pub start_year: i32,
    pub end_year: i32,
}

impl PeriodConfig {
    pub fn new(scheme: PeriodScheme, start_year: i32, end_year: i32) -> Self {
        assert!(start_year <= end_year, "window start after end");
        Self {
            scheme,
            start_year,
            end_year,
        }
    }

    pub fn n_years(&self) -> u32 {
        (self.end_year - self.start_year + 1) as u32
    }

    /// Extracts the (ISO) year of a period label.
    pub fn parse_year(&self, label: &str) -> Result<i32, IngestError> {
        let bad = || IngestError::BadPeriodLabel {
            label: label.to_string(),
            scheme: self.scheme.to_string(),
        };
        match self.scheme {
            PeriodScheme::Yearly => {
                if label.len() == 4 && label.bytes().all(|b| b.is_ascii_digit()) {
                    label.parse::<i32>().map_err(|_| bad())
                } else {
                    Err(bad())
                }
            }
            PeriodScheme::IsoWeekly => {
                let (year, week) = label.split_once("-W").ok_or_else(bad)?;
                if year.len() != 4 || !year.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                let w: u32 = week.parse().map_err(|_| bad())?;
                if !(1..=53).contains(&w) || week.len() != 2 {
                    return Err(bad());
                }
                year.parse::<i32>().map_err(|_| bad())
            }
        }
    }
}

/// Soft plausibility bands applied by [`validate_dataset`]. Violations are
/// warnings, not rejections; defaults follow the observed summary ranges of
/// a large metropolitan deployment (beds up to 1,403, ratings up to 4.8,
/// drive times up to ~70 minutes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftRanges {
    pub beds: (f64, f64),
    pub occupancy: (f64, f64),
    pub reviews: (f64, f64),
    pub rating: (f64, f64),
    pub drive_time_min: (f64, f64),
}

impl Default for SoftRanges {
    fn default() -> Self {
        Self {
            beds: (0.0, 1403.0),
            occupancy: (0.0, 0.92),
            reviews: (2.0, 3763.0),
            rating: (1.0, 4.8),
            drive_time_min: (1.65, 69.95),
        }
    }
}

/// Outcome of loading or validating tables: fatal errors, soft warnings,
/// and per-table row counts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub row_counts: BTreeMap<String, usize>,
}

impl ValidationReport {
    pub fn has_fatal(&self) -> bool {
        !self.errors.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
        for (k, v) in other.row_counts {
            *self.row_counts.entry(k).or_insert(0) += v;
        }
    }

    fn count(&mut self, table: &str, n: usize) {
        self.row_counts.insert(table.to_string(), n);
    }
}

struct TableReader {
    path: String,
    records: Vec<csv::StringRecord>,
    index: BTreeMap<String, usize>,
}

impl TableReader {
    fn open(path: &Path, expected: &[&str]) -> Result<Self, IngestError> {
        let path_str = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader
            .headers()
            .map_err(|source| IngestError::Csv {
                path: path_str.clone(),
                source,
            })?
            .clone();
        let mut index = BTreeMap::new();
        for (i, h) in headers.iter().enumerate() {
            if index.insert(h.to_string(), i).is_some() {
                return Err(IngestError::DuplicateColumn {
                    path: path_str,
                    column: h.to_string(),
                });
            }
        }
        for &col in expected {
            if !index.contains_key(col) {
                return Err(IngestError::MissingColumn {
                    path: path_str,
                    column: col.to_string(),
                });
            }
        }
        for col in index.keys() {
            if !expected.contains(&col.as_str()) {
                return Err(IngestError::UnexpectedColumn {
                    path: path_str,
                    column: col.clone(),
                });
            }
        }
        let mut records = Vec::new();
        for rec in reader.records() {
            records.push(rec.map_err(|source| IngestError::Csv {
                path: path_str.clone(),
                source,
            })?);
        }
        Ok(Self {
            path: path_str,
            records,
            index,
        })
    }

    fn get<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> &'a str {
        &rec[self.index[col]]
    }
}

/// Data line number for error messages (header is line 1).
fn line_no(i: usize) -> usize {
    i + 2
}

fn parse_f64(
    reader: &TableReader,
    rec: &csv::StringRecord,
    i: usize,
    col: &str,
    report: &mut ValidationReport,
) -> Option<f64> {
    let raw = reader.get(rec, col);
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            report.errors.push(format!(
                "{} line {}: cannot parse {col} value {raw:?} as a number",
                reader.path,
                line_no(i)
            ));
            None
        }
    }
}

fn parse_count(
    reader: &TableReader,
    rec: &csv::StringRecord,
    i: usize,
    col: &str,
    report: &mut ValidationReport,
) -> Option<u32> {
    let raw = reader.get(rec, col);
    match raw.parse::<u32>() {
        Ok(v) => Some(v),
        Err(_) => {
            report.errors.push(format!(
                "{} line {}: {col} must be a nonnegative integer, got {raw:?}",
                reader.path,
                line_no(i)
            ));
            None
        }
    }
}

fn check_fatal_range(
    path: &str,
    i: usize,
    col: &str,
    value: f64,
    lo: f64,
    hi: f64,
    report: &mut ValidationReport,
) -> bool {
    if value < lo || value > hi {
        report.errors.push(format!(
            "{path} line {}: {col} = {value} outside [{lo}, {hi}]",
            line_no(i)
        ));
        false
    } else {
        true
    }
}

const ZONE_COLUMNS: [&str; 13] = [
    "zone_id",
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
    "lon",
    "lat",
];

/// Loads `zones.csv`. Percent columns are converted to fractions.
pub fn load_zones(path: &Path) -> Result<(Vec<ZoneAttributes>, ValidationReport), IngestError> {
    let reader = TableReader::open(path, &ZONE_COLUMNS)?;
    let mut report = ValidationReport::default();
    let mut zones = Vec::new();
    for (i, rec) in reader.records.iter().enumerate() {
        let mut ok = true;
        let mut fetch = |col: &str, report: &mut ValidationReport| {
            parse_f64(&reader, rec, i, col, report).unwrap_or_else(|| {
                ok = false;
                f64::NAN
            })
        };
        let total_population = fetch("total_population", &mut report);
        let pct_under18 = fetch("pct_under18", &mut report) / 100.0;
        let pct_over65 = fetch("pct_over65", &mut report) / 100.0;
        let pct_hispanic = fetch("pct_hispanic", &mut report) / 100.0;
        let pct_white = fetch("pct_white", &mut report) / 100.0;
        let pct_black = fetch("pct_black", &mut report) / 100.0;
        let pct_asian = fetch("pct_asian", &mut report) / 100.0;
        let pct_bachelor_plus = fetch("pct_bachelor_plus", &mut report) / 100.0;
        let median_income = fetch("median_income", &mut report);
        let pct_households_vehicle = fetch("pct_households_vehicle", &mut report) / 100.0;
        let lon = fetch("lon", &mut report);
        let lat = fetch("lat", &mut report);
        if !ok {
            continue;
        }
        let zone = ZoneAttributes {
            zone_id: reader.get(rec, "zone_id").to_string(),
            total_population,
            pct_under18,
            pct_over65,
            pct_hispanic,
            pct_white,
            pct_black,
            pct_asian,
            pct_bachelor_plus,
            median_income,
            pct_households_vehicle,
            lon,
            lat,
        };
        let mut valid = check_fatal_range(
            &reader.path,
            i,
            "total_population",
            zone.total_population,
            0.0,
            f64::INFINITY,
            &mut report,
        );
        valid &= check_fatal_range(
            &reader.path,
            i,
            "median_income",
            zone.median_income,
            0.0,
            f64::INFINITY,
            &mut report,
        );
        for (col, v) in [
            ("pct_under18", zone.pct_under18),
            ("pct_over65", zone.pct_over65),
            ("pct_hispanic", zone.pct_hispanic),
            ("pct_white", zone.pct_white),
            ("pct_black", zone.pct_black),
            ("pct_asian", zone.pct_asian),
            ("pct_bachelor_plus", zone.pct_bachelor_plus),
            ("pct_households_vehicle", zone.pct_households_vehicle),
        ] {
            // after /100 conversion the fraction must land in [0, 1]
            valid &= check_fatal_range(&reader.path, i, col, v, 0.0, 1.0, &mut report);
        }
        valid &= check_fatal_range(&reader.path, i, "lon", zone.lon, -180.0, 180.0, &mut report);
        valid &= check_fatal_range(&reader.path, i, "lat", zone.lat, -90.0, 90.0, &mut report);
        if valid {
            zones.push(zone);
        }
    }
    report.count("zones", zones.len());
    Ok((zones, report))
}

const HOSPITAL_COLUMNS: [&str; 10] = [
    "hospital_id",
    "staffed_all_beds",
    "staffed_icu_beds",
    "licensed_all_beds",
    "all_bed_occupancy",
    "icu_occupancy",
    "n_reviews",
    "rating",
    "lon",
    "lat",
];

/// Loads `hospitals.csv`. Occupancies are fractions; bed counts and review
/// counts must be nonnegative integers; ratings live on a 0-5 scale.
pub fn load_hospitals(
    path: &Path,
) -> Result<(Vec<HospitalAttributes>, ValidationReport), IngestError> {
    let reader = TableReader::open(path, &HOSPITAL_COLUMNS)?;
    let mut report = ValidationReport::default();
    let mut hospitals = Vec::new();
    for (i, rec) in reader.records.iter().enumerate() {
        let staffed_all = parse_count(&reader, rec, i, "staffed_all_beds", &mut report);
        let staffed_icu = parse_count(&reader, rec, i, "staffed_icu_beds", &mut report);
        let licensed = parse_count(&reader, rec, i, "licensed_all_beds", &mut report);
        let n_reviews = parse_count(&reader, rec, i, "n_reviews", &mut report);
        let all_occ = parse_f64(&reader, rec, i, "all_bed_occupancy", &mut report);
        let icu_occ = parse_f64(&reader, rec, i, "icu_occupancy", &mut report);
        let rating = parse_f64(&reader, rec, i, "rating", &mut report);
        let lon = parse_f64(&reader, rec, i, "lon", &mut report);
        let lat = parse_f64(&reader, rec, i, "lat", &mut report);
        let (Some(staffed_all_beds), Some(staffed_icu_beds), Some(licensed_all_beds), Some(n_reviews)) =
            (staffed_all, staffed_icu, licensed, n_reviews)
        else {
            continue;
        };
        let (Some(all_bed_occupancy), Some(icu_occupancy), Some(rating), Some(lon), Some(lat)) =
            (all_occ, icu_occ, rating, lon, lat)
        else {
            continue;
        };
        let hospital = HospitalAttributes {
            hospital_id: reader.get(rec, "hospital_id").to_string(),
            staffed_all_beds,
            staffed_icu_beds,
            licensed_all_beds,
            all_bed_occupancy,
            icu_occupancy,
            n_reviews,
            rating,
            lon,
            lat,
        };
        let mut valid = check_fatal_range(
            &reader.path,
            i,
            "all_bed_occupancy",
            hospital.all_bed_occupancy,
            0.0,
            1.0,
            &mut report,
        );
        valid &= check_fatal_range(
            &reader.path,
            i,
            "icu_occupancy",
            hospital.icu_occupancy,
            0.0,
            1.0,
            &mut report,
        );
        valid &=
            check_fatal_range(&reader.path, i, "rating", hospital.rating, 0.0, 5.0, &mut report);
        valid &= check_fatal_range(&reader.path, i, "lon", hospital.lon, -180.0, 180.0, &mut report);
        valid &= check_fatal_range(&reader.path, i, "lat", hospital.lat, -90.0, 90.0, &mut report);
        if valid {
            report.warnings.extend(hospital.soft_warnings());
            hospitals.push(hospital);
        }
    }
    report.count("hospitals", hospitals.len());
    Ok((hospitals, report))
}

const FLOW_COLUMNS: [&str; 4] = ["origin_zone_id", "hospital_id", "period_label", "visits"];

/// Loads `flows.csv` into raw (unaggregated) visit records.
pub fn load_flows(path: &Path) -> Result<(Vec<RawVisitRecord>, ValidationReport), IngestError> {
    let reader = TableReader::open(path, &FLOW_COLUMNS)?;
    let mut report = ValidationReport::default();
    let mut records = Vec::new();
    for (i, rec) in reader.records.iter().enumerate() {
        let Some(visits) = parse_f64(&reader, rec, i, "visits", &mut report) else {
            continue;
        };
        if !check_fatal_range(&reader.path, i, "visits", visits, 0.0, f64::INFINITY, &mut report) {
            continue;
        }
        records.push(RawVisitRecord {
            origin_zone_id: reader.get(rec, "origin_zone_id").to_string(),
            hospital_id: reader.get(rec, "hospital_id").to_string(),
            period_label: reader.get(rec, "period_label").to_string(),
            visits,
        });
    }
    report.count("flows", records.len());
    Ok((records, report))
}

const DRIVETIME_COLUMNS: [&str; 3] = ["origin_zone_id", "hospital_id", "drive_time_min"];

/// Loads `drivetime.csv` into the pair -> minutes lookup.
pub fn load_drivetime(
    path: &Path,
) -> Result<(BTreeMap<(String, String), f64>, ValidationReport), IngestError> {
    let reader = TableReader::open(path, &DRIVETIME_COLUMNS)?;
    let mut report = ValidationReport::default();
    let mut map = BTreeMap::new();
    for (i, rec) in reader.records.iter().enumerate() {
        let Some(minutes) = parse_f64(&reader, rec, i, "drive_time_min", &mut report) else {
            continue;
        };
        if minutes <= 0.0 {
            report.errors.push(format!(
                "{} line {}: drive_time_min must be > 0, got {minutes}",
                reader.path,
                line_no(i)
            ));
            continue;
        }
        let key = (
            reader.get(rec, "origin_zone_id").to_string(),
            reader.get(rec, "hospital_id").to_string(),
        );
        if map.insert(key.clone(), minutes).is_some() {
            report.errors.push(format!(
                "{} line {}: duplicate drive-time entry for ({}, {})",
                reader.path,
                line_no(i),
                key.0,
                key.1
            ));
        }
    }
    report.count("drivetime", map.len());
    Ok((map, report))
}

/// Aggregates raw visit records over the configured window: per pair, total
/// visits divided by the number of years in the window. Periods with no
/// record contribute zero (the denominator is the full window, not the
/// active periods). Pairs with zero total are dropped; drive times come
/// from the supplied lookup.
pub fn aggregate_flows(
    records: &[RawVisitRecord],
    period: &PeriodConfig,
    drive_time: &BTreeMap<(String, String), f64>,
) -> Result<Vec<FlowRecord>, IngestError> {
    let totals = aggregate_pair_totals(records, period)?;
    let mut flows = Vec::new();
    for ((origin, hospital), total) in totals {
        if total <= 0.0 {
            continue;
        }
        let visits = total / f64::from(period.n_years());
        let drive_time_min = drive_time
            .get(&(origin.clone(), hospital.clone()))
            .copied()
            .unwrap_or(f64::NAN);
        flows.push(FlowRecord {
            origin_zone_id: origin,
            hospital_id: hospital,
            visits,
            drive_time_min,
        });
    }
    if flows.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    Ok(flows)
}

/// Window totals per (origin, hospital) pair, before the year-count division.
/// Total visit mass is conserved: summed over pairs it equals the summed
/// input record visits.
pub fn aggregate_pair_totals(
    records: &[RawVisitRecord],
    period: &PeriodConfig,
) -> Result<BTreeMap<(String, String), f64>, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut totals: BTreeMap<(String, String), f64> = BTreeMap::new();
    for rec in records {
        let year = period.parse_year(&rec.period_label)?;
        if year < period.start_year || year > period.end_year {
            return Err(IngestError::PeriodOutsideWindow {
                origin: rec.origin_zone_id.clone(),
                hospital: rec.hospital_id.clone(),
                label: rec.period_label.clone(),
                start: period.start_year,
                end: period.end_year,
            });
        }
        *totals
            .entry((rec.origin_zone_id.clone(), rec.hospital_id.clone()))
            .or_insert(0.0) += rec.visits;
    }
    Ok(totals)
}

/// Result of [`exclude_origins`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub removed_flows: usize,
    /// Requested origins that had no flows to remove.
    pub absent_origins: Vec<String>,
}

/// Removes all flows originating from the listed zones (medical-tourism
/// style filtering). Zones themselves are retained as context.
pub fn exclude_origins(
    dataset: &ODDataset,
    origin_ids: &[String],
) -> Result<(ODDataset, ExclusionReport), IngestError> {
    let excluded: std::collections::BTreeSet<&str> =
        origin_ids.iter().map(String::as_str).collect();
    let mut kept = Vec::new();
    let mut removed = 0usize;
    let mut seen: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    for f in &dataset.flows {
        if excluded.contains(f.origin_zone_id.as_str()) {
            removed += 1;
            seen.insert(f.origin_zone_id.as_str());
        } else {
            kept.push(f.clone());
        }
    }
    if kept.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let absent_origins = origin_ids
        .iter()
        .filter(|id| !seen.contains(id.as_str()))
        .cloned()
        .collect();
    let filtered = ODDataset::new(
        dataset.zones.clone(),
        dataset.hospitals.clone(),
        kept,
        dataset.drive_time.clone(),
    )?;
    Ok((
        filtered,
        ExclusionReport {
            removed_flows: removed,
            absent_origins,
        },
    ))
}

/// Full dataset validation: referential integrity and drive-time coverage
/// (fatal), attribute ranges (fatal), and soft plausibility bands
/// (warnings). Always returns a report; never fails.
pub fn validate_dataset(dataset: &ODDataset, soft: &SoftRanges) -> ValidationReport {
    let mut report = ValidationReport::default();
    let zone_ids: std::collections::BTreeSet<&str> =
        dataset.zones.iter().map(|z| z.zone_id.as_str()).collect();
    let hosp_ids: std::collections::BTreeSet<&str> = dataset
        .hospitals
        .iter()
        .map(|h| h.hospital_id.as_str())
        .collect();

    for z in &dataset.zones {
        if let Err(e) = z.validate() {
            report.errors.push(e.to_string());
        }
    }
    for h in &dataset.hospitals {
        if let Err(e) = h.validate() {
            report.errors.push(e.to_string());
        }
        report.warnings.extend(h.soft_warnings());
        for (name, value) in [
            ("staffed_all_beds", f64::from(h.staffed_all_beds)),
            ("staffed_icu_beds", f64::from(h.staffed_icu_beds)),
            ("licensed_all_beds", f64::from(h.licensed_all_beds)),
        ] {
            soft_check(
                &mut report,
                &h.hospital_id,
                name,
                value,
                soft.beds,
            );
        }
        soft_check(
            &mut report,
            &h.hospital_id,
            "all_bed_occupancy",
            h.all_bed_occupancy,
            soft.occupancy,
        );
        soft_check(
            &mut report,
            &h.hospital_id,
            "icu_occupancy",
            h.icu_occupancy,
            soft.occupancy,
        );
        soft_check(
            &mut report,
            &h.hospital_id,
            "n_reviews",
            f64::from(h.n_reviews),
            soft.reviews,
        );
        soft_check(&mut report, &h.hospital_id, "rating", h.rating, soft.rating);
    }
    for f in &dataset.flows {
        if !zone_ids.contains(f.origin_zone_id.as_str()) {
            report.errors.push(format!(
                "flow ({}, {}) references unknown zone {}",
                f.origin_zone_id, f.hospital_id, f.origin_zone_id
            ));
        }
        if !hosp_ids.contains(f.hospital_id.as_str()) {
            report.errors.push(format!(
                "flow ({}, {}) references unknown hospital {}",
                f.origin_zone_id, f.hospital_id, f.hospital_id
            ));
        }
        if f.visits < 0.0 {
            report.errors.push(format!(
                "flow ({}, {}) has negative visits {}",
                f.origin_zone_id, f.hospital_id, f.visits
            ));
        }
        match dataset.drive_time_for(&f.origin_zone_id, &f.hospital_id) {
            None => report.errors.push(format!(
                "no drive time recorded for pair ({}, {})",
                f.origin_zone_id, f.hospital_id
            )),
            Some(minutes) => {
                if minutes <= 0.0 {
                    report.errors.push(format!(
                        "drive time for pair ({}, {}) must be positive, got {minutes}",
                        f.origin_zone_id, f.hospital_id
                    ));
                }
                soft_check(
                    &mut report,
                    &format!("({}, {})", f.origin_zone_id, f.hospital_id),
                    "drive_time_min",
                    minutes,
                    soft.drive_time_min,
                );
            }
        }
    }
    report.count("zones", dataset.zones.len());
    report.count("hospitals", dataset.hospitals.len());
    report.count("flows", dataset.flows.len());
    report.count("drivetime", dataset.drive_time.len());
    report
}

fn soft_check(report: &mut ValidationReport, id: &str, field: &str, value: f64, band: (f64, f64)) {
    if value < band.0 || value > band.1 {
        report.warnings.push(format!(
            "{id}: {field} = {value} outside plausibility band [{}, {}]",
            band.0, band.1
        ));
    }
}

/// Loads the four tables, aggregates raw flows over the window, and builds
/// a validated dataset. Fails when any table carries a fatal row error or
/// the assembled dataset breaks integrity.
pub fn load_dataset(
    zones_path: &Path,
    hospitals_path: &Path,
    flows_path: &Path,
    drivetime_path: &Path,
    period: &PeriodConfig,
) -> Result<(ODDataset, ValidationReport), IngestError> {
    let (zones, mut report) = load_zones(zones_path)?;
    let (hospitals, r) = load_hospitals(hospitals_path)?;
    report.merge(r);
    let (raw_flows, r) = load_flows(flows_path)?;
    report.merge(r);
    let (drive_time, r) = load_drivetime(drivetime_path)?;
    report.merge(r);
    if report.has_fatal() {
        return Err(IngestError::FatalValidation(report.errors.join("\n")));
    }
    let flows = aggregate_flows(&raw_flows, period, &drive_time)?;
    let dataset = ODDataset::new(zones, hospitals, flows, drive_time)?;
    Ok((dataset, report))
}
