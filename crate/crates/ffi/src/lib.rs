//! C ABI over the odflow toolkit: dataset loading, synthetic-city
//! generation, model training/persistence, prediction, and the three flow
//! metrics.
//!
//! Conventions: handles are opaque pointers created and freed by this
//! library; every fallible call returns an [`OdflowStatus`] and records a
//! message retrievable through [`odflow_last_error_message`]; strings
//! returned as `char*` must be released with [`odflow_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;

use libc::c_char;

use odflow::domain::{assemble_features, ODDataset};
use odflow::evaluation::MetricTriple;
use odflow::ingest::{exclude_origins, load_dataset, PeriodConfig, PeriodScheme};
use odflow::model::{fit_on_dataset, ModelArtifact, ModelConfig, ModelFamily};
use odflow::synth::{generate_city, write_city, NoiseMode, SynthConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdflowStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument failed to parse or validate.
    InvalidArgument = 2,
    /// Input data failed validation.
    Validation = 3,
    /// File system failure.
    Io = 4,
    /// Model fitting or prediction failure.
    Model = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

/// Opaque loaded dataset.
pub struct OdflowDataset {
    inner: ODDataset,
}

/// Opaque trained model.
pub struct OdflowModel {
    inner: ModelArtifact,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(message).expect("nul-free message"));
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn guard(body: impl FnOnce() -> OdflowStatus) -> OdflowStatus {
    clear_error();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic at the ffi boundary".to_string());
            set_error(message);
            OdflowStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null.
unsafe fn c_str<'a>(ptr: *const c_char) -> Result<&'a str, OdflowStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(OdflowStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        OdflowStatus::InvalidArgument
    })
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn odflow_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next odflow call on the same thread.
#[no_mangle]
pub extern "C" fn odflow_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Frees a string allocated by this library.
///
/// # Safety
/// `s` must come from an odflow call that transfers string ownership, and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odflow_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Computes NRMSE, SMAPE, and CPC for two nonnegative flow vectors of
/// length `len`.
///
/// # Safety
/// `y` and `y_hat` must point to `len` readable doubles; the out pointers
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn odflow_metrics(
    y: *const f64,
    y_hat: *const f64,
    len: usize,
    out_nrmse: *mut f64,
    out_smape: *mut f64,
    out_cpc: *mut f64,
) -> OdflowStatus {
    if y.is_null() || y_hat.is_null() || out_nrmse.is_null() || out_smape.is_null() || out_cpc.is_null()
    {
        set_error("null argument");
        return OdflowStatus::NullArgument;
    }
    let y = std::slice::from_raw_parts(y, len);
    let y_hat = std::slice::from_raw_parts(y_hat, len);
    guard(move || match MetricTriple::compute(y, y_hat) {
        Ok(triple) => {
            *out_nrmse = triple.nrmse;
            *out_smape = triple.smape;
            *out_cpc = triple.cpc;
            OdflowStatus::Ok
        }
        Err(err) => {
            set_error(err.to_string());
            OdflowStatus::InvalidArgument
        }
    })
}

/// Loads and validates the four input tables. `weekly_periods` selects
/// ISO-week period labels; otherwise labels are plain years. On success
/// `out` receives a dataset handle owned by the caller.
///
/// # Safety
/// Path arguments must be valid NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn odflow_dataset_load(
    zones: *const c_char,
    hospitals: *const c_char,
    flows: *const c_char,
    drivetime: *const c_char,
    weekly_periods: bool,
    window_start_year: i32,
    window_end_year: i32,
    out: *mut *mut OdflowDataset,
) -> OdflowStatus {
    if out.is_null() {
        set_error("null out pointer");
        return OdflowStatus::NullArgument;
    }
    let (zones, hospitals, flows, drivetime) = match (
        c_str(zones),
        c_str(hospitals),
        c_str(flows),
        c_str(drivetime),
    ) {
        (Ok(a), Ok(b), Ok(c), Ok(d)) => (a, b, c, d),
        (Err(e), ..) | (_, Err(e), ..) | (_, _, Err(e), _) | (_, _, _, Err(e)) => return e,
    };
    if window_start_year > window_end_year {
        set_error("window start year after end year");
        return OdflowStatus::InvalidArgument;
    }
    guard(move || {
        let scheme = if weekly_periods {
            PeriodScheme::IsoWeekly
        } else {
            PeriodScheme::Yearly
        };
        let period = PeriodConfig::new(scheme, window_start_year, window_end_year);
        match load_dataset(
            Path::new(zones),
            Path::new(hospitals),
            Path::new(flows),
            Path::new(drivetime),
            &period,
        ) {
            Ok((dataset, report)) => {
                if report.has_fatal() {
                    set_error(report.errors.join("; "));
                    return OdflowStatus::Validation;
                }
                *out = Box::into_raw(Box::new(OdflowDataset { inner: dataset }));
                OdflowStatus::Ok
            }
            Err(err) => {
                set_error(err.to_string());
                OdflowStatus::Validation
            }
        }
    })
}

/// Frees a dataset handle.
///
/// # Safety
/// `ds` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odflow_dataset_free(ds: *mut OdflowDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Row counts of a loaded dataset.
///
/// # Safety
/// `ds` must be a live dataset handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn odflow_dataset_counts(
    ds: *const OdflowDataset,
    out_zones: *mut usize,
    out_hospitals: *mut usize,
    out_flows: *mut usize,
) -> OdflowStatus {
    if ds.is_null() || out_zones.is_null() || out_hospitals.is_null() || out_flows.is_null() {
        set_error("null argument");
        return OdflowStatus::NullArgument;
    }
    let dataset = &(*ds).inner;
    *out_zones = dataset.zones.len();
    *out_hospitals = dataset.hospitals.len();
    *out_flows = dataset.flows.len();
    OdflowStatus::Ok
}

/// Removes all flows of the listed origin zones, producing a new handle.
///
/// # Safety
/// `ds` must be live; `origins` must point to `n` valid strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn odflow_dataset_exclude_origins(
    ds: *const OdflowDataset,
    origins: *const *const c_char,
    n: usize,
    out: *mut *mut OdflowDataset,
) -> OdflowStatus {
    if ds.is_null() || origins.is_null() || out.is_null() {
        set_error("null argument");
        return OdflowStatus::NullArgument;
    }
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        match c_str(*origins.add(i)) {
            Ok(s) => ids.push(s.to_string()),
            Err(e) => return e,
        }
    }
    let dataset = &(*ds).inner;
    guard(move || match exclude_origins(dataset, &ids) {
        Ok((filtered, _)) => {
            *out = Box::into_raw(Box::new(OdflowDataset { inner: filtered }));
            OdflowStatus::Ok
        }
        Err(err) => {
            set_error(err.to_string());
            OdflowStatus::Validation
        }
    })
}

/// Generates a synthetic city and writes the ingest tables plus ground
/// truth into `out_dir`. `multinomial_samples = 0` selects noiseless
/// flows.
///
/// # Safety
/// `out_dir` must be a valid NUL-terminated path string.
#[no_mangle]
pub unsafe extern "C" fn odflow_synth_generate(
    seed: u64,
    n_zones: usize,
    n_hospitals: usize,
    beta_per_min: f64,
    theta_size: f64,
    theta_rating: f64,
    theta_occupancy: f64,
    tau_min: f64,
    multinomial_samples: u64,
    out_dir: *const c_char,
) -> OdflowStatus {
    let dir = match c_str(out_dir) {
        Ok(d) => d.to_string(),
        Err(e) => return e,
    };
    guard(move || {
        let config = SynthConfig {
            n_zones,
            n_hospitals,
            theta_size,
            theta_rating,
            theta_occupancy,
            tau_min,
            beta_per_min,
            noise: if multinomial_samples == 0 {
                NoiseMode::None
            } else {
                NoiseMode::Multinomial {
                    samples: multinomial_samples,
                }
            },
            seed,
            ..SynthConfig::default()
        };
        if let Err(err) = std::fs::create_dir_all(&dir) {
            set_error(err.to_string());
            return OdflowStatus::Io;
        }
        match generate_city(&config).and_then(|(dataset, truth)| {
            write_city(Path::new(&dir), &dataset, &truth)
        }) {
            Ok(()) => OdflowStatus::Ok,
            Err(err) => {
                set_error(err.to_string());
                OdflowStatus::InvalidArgument
            }
        }
    })
}

/// Fits the named family (`ols`, `gbt`, `mlp`, `deep_gravity`, `hgnn`)
/// with its default configuration on all rows of the dataset.
///
/// # Safety
/// `ds` must be live; `family` a valid string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn odflow_train(
    ds: *const OdflowDataset,
    family: *const c_char,
    seed: u64,
    out: *mut *mut OdflowModel,
) -> OdflowStatus {
    if ds.is_null() || out.is_null() {
        set_error("null argument");
        return OdflowStatus::NullArgument;
    }
    let family = match c_str(family) {
        Ok(f) => f.to_string(),
        Err(e) => return e,
    };
    let dataset = &(*ds).inner;
    guard(move || {
        let family: ModelFamily = match family.parse() {
            Ok(f) => f,
            Err(message) => {
                set_error(message);
                return OdflowStatus::InvalidArgument;
            }
        };
        let config = ModelConfig::default_for(family);
        let rows = match assemble_features(dataset) {
            Ok(rows) => rows,
            Err(err) => {
                set_error(err.to_string());
                return OdflowStatus::Validation;
            }
        };
        let all: Vec<usize> = (0..rows.len()).collect();
        match fit_on_dataset(&config, dataset, &rows, &all, seed) {
            Ok(artifact) => {
                *out = Box::into_raw(Box::new(OdflowModel { inner: artifact }));
                OdflowStatus::Ok
            }
            Err(err) => {
                set_error(err.to_string());
                OdflowStatus::Model
            }
        }
    })
}

/// Frees a model handle.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odflow_model_free(model: *mut OdflowModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model family tag as an owned string (free with [`odflow_string_free`]).
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn odflow_model_family(model: *const OdflowModel) -> *mut c_char {
    if model.is_null() {
        return std::ptr::null_mut();
    }
    CString::new((*model).inner.family.to_string())
        .map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Saves a model as self-describing JSON.
///
/// # Safety
/// `model` must be live; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn odflow_model_save(
    model: *const OdflowModel,
    path: *const c_char,
) -> OdflowStatus {
    if model.is_null() {
        set_error("null model handle");
        return OdflowStatus::NullArgument;
    }
    let path = match c_str(path) {
        Ok(p) => p.to_string(),
        Err(e) => return e,
    };
    let artifact = &(*model).inner;
    guard(move || match artifact.save(Path::new(&path)) {
        Ok(()) => OdflowStatus::Ok,
        Err(err) => {
            set_error(err.to_string());
            OdflowStatus::Io
        }
    })
}

/// Loads a model saved by [`odflow_model_save`].
///
/// # Safety
/// `path` must be a valid string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn odflow_model_load(
    path: *const c_char,
    out: *mut *mut OdflowModel,
) -> OdflowStatus {
    if out.is_null() {
        set_error("null out pointer");
        return OdflowStatus::NullArgument;
    }
    let path = match c_str(path) {
        Ok(p) => p.to_string(),
        Err(e) => return e,
    };
    guard(move || match ModelArtifact::load(Path::new(&path)) {
        Ok(artifact) => {
            *out = Box::into_raw(Box::new(OdflowModel { inner: artifact }));
            OdflowStatus::Ok
        }
        Err(err) => {
            set_error(err.to_string());
            OdflowStatus::Io
        }
    })
}

/// Scalar model output for one raw feature vector of length `len`
/// (the canonical 22-feature layout for standard models).
///
/// # Safety
/// `model` must be live; `features` must point to `len` doubles; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn odflow_model_predict_row(
    model: *const OdflowModel,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> OdflowStatus {
    if model.is_null() || features.is_null() || out.is_null() {
        set_error("null argument");
        return OdflowStatus::NullArgument;
    }
    let features = std::slice::from_raw_parts(features, len);
    let artifact = &(*model).inner;
    guard(move || match artifact.predict_row(features) {
        Ok(value) => {
            *out = value;
            OdflowStatus::Ok
        }
        Err(err) => {
            set_error(err.to_string());
            OdflowStatus::Model
        }
    })
}

/// Predicted shares for every flow row of the dataset, written into
/// `out` (capacity `len`, which must equal the dataset's flow count).
/// Rows follow the dataset's flow order; simplex-objective families
/// return shares summing to 1 per origin.
///
/// # Safety
/// `model` and `ds` must be live; `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn odflow_model_predict_dataset(
    model: *const OdflowModel,
    ds: *const OdflowDataset,
    out: *mut f64,
    len: usize,
) -> OdflowStatus {
    if model.is_null() || ds.is_null() || out.is_null() {
        set_error("null argument");
        return OdflowStatus::NullArgument;
    }
    let artifact = &(*model).inner;
    let dataset = &(*ds).inner;
    if len != dataset.flows.len() {
        set_error(format!(
            "output capacity {len} does not match flow count {}",
            dataset.flows.len()
        ));
        return OdflowStatus::InvalidArgument;
    }
    let out = std::slice::from_raw_parts_mut(out, len);
    guard(move || {
        let rows = match assemble_features(dataset) {
            Ok(rows) => rows,
            Err(err) => {
                set_error(err.to_string());
                return OdflowStatus::Validation;
            }
        };
        match artifact.predict_rows(&rows) {
            Ok(predictions) => {
                out.copy_from_slice(&predictions);
                OdflowStatus::Ok
            }
            Err(err) => {
                set_error(err.to_string());
                OdflowStatus::Model
            }
        }
    })
}
