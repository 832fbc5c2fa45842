//! Exercises the C ABI end to end from Rust: synth -> load -> counts ->
//! exclude -> train -> save/load -> predict -> metrics.

use std::ffi::{CStr, CString};

use odflow_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let ptr = odflow_last_error_message();
    if ptr.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(ptr) }.to_string_lossy().to_string()
    }
}

#[test]
fn version_is_a_static_string() {
    let ptr = odflow_version();
    assert!(!ptr.is_null());
    let version = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn metrics_match_known_values() {
    let y = [2.0, 2.0];
    let y_hat = [1.0, 3.0];
    let (mut nrmse, mut smape, mut cpc) = (0.0, 0.0, 0.0);
    let status = unsafe {
        odflow_metrics(
            y.as_ptr(),
            y_hat.as_ptr(),
            2,
            &mut nrmse,
            &mut smape,
            &mut cpc,
        )
    };
    // constant y: NRMSE range undefined
    assert_eq!(status, OdflowStatus::InvalidArgument);
    assert!(last_error().contains("range"));

    let y = [0.0, 1.0, 2.0];
    let y_hat = [0.0, 1.0, 1.0];
    let status = unsafe {
        odflow_metrics(
            y.as_ptr(),
            y_hat.as_ptr(),
            3,
            &mut nrmse,
            &mut smape,
            &mut cpc,
        )
    };
    assert_eq!(status, OdflowStatus::Ok);
    assert!((nrmse - (1.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    assert!(cpc > 0.0 && cpc <= 1.0);
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = 0.0;
    let status = unsafe {
        odflow_metrics(
            std::ptr::null(),
            std::ptr::null(),
            0,
            &mut out,
            &mut out,
            &mut out,
        )
    };
    assert_eq!(status, OdflowStatus::NullArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn synth_load_train_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let dir_c = c(dir.path().to_str().unwrap());
    let status = unsafe {
        odflow_synth_generate(9, 10, 4, 0.12, 0.5, 0.0, 0.0, 0.0, 500, dir_c.as_ptr())
    };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());

    let zones = c(dir.path().join("zones.csv").to_str().unwrap());
    let hospitals = c(dir.path().join("hospitals.csv").to_str().unwrap());
    let flows = c(dir.path().join("flows.csv").to_str().unwrap());
    let drivetime = c(dir.path().join("drivetime.csv").to_str().unwrap());
    let mut ds: *mut OdflowDataset = std::ptr::null_mut();
    let status = unsafe {
        odflow_dataset_load(
            zones.as_ptr(),
            hospitals.as_ptr(),
            flows.as_ptr(),
            drivetime.as_ptr(),
            false,
            2020,
            2020,
            &mut ds,
        )
    };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());
    assert!(!ds.is_null());

    let (mut n_zones, mut n_hosp, mut n_flows) = (0usize, 0usize, 0usize);
    let status =
        unsafe { odflow_dataset_counts(ds, &mut n_zones, &mut n_hosp, &mut n_flows) };
    assert_eq!(status, OdflowStatus::Ok);
    assert_eq!(n_zones, 10);
    assert_eq!(n_hosp, 4);
    assert!(n_flows > 0);

    // excluding one origin produces a new, smaller dataset
    let origin = c("Z0000");
    let origins = [origin.as_ptr()];
    let mut filtered: *mut OdflowDataset = std::ptr::null_mut();
    let status =
        unsafe { odflow_dataset_exclude_origins(ds, origins.as_ptr(), 1, &mut filtered) };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());
    let (mut fz, mut fh, mut ff) = (0usize, 0usize, 0usize);
    unsafe { odflow_dataset_counts(filtered, &mut fz, &mut fh, &mut ff) };
    assert_eq!(fz, 10); // zones retained as context
    assert!(ff < n_flows);
    unsafe { odflow_dataset_free(filtered) };

    let family = c("ols");
    let mut model: *mut OdflowModel = std::ptr::null_mut();
    let status = unsafe { odflow_train(ds, family.as_ptr(), 3, &mut model) };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());

    let family_ptr = unsafe { odflow_model_family(model) };
    let family_name = unsafe { CStr::from_ptr(family_ptr) }.to_str().unwrap().to_string();
    unsafe { odflow_string_free(family_ptr) };
    assert_eq!(family_name, "ols");

    // bad family name is rejected
    let bad = c("random_forest");
    let mut bad_model: *mut OdflowModel = std::ptr::null_mut();
    let status = unsafe { odflow_train(ds, bad.as_ptr(), 3, &mut bad_model) };
    assert_eq!(status, OdflowStatus::InvalidArgument);
    assert!(last_error().contains("random_forest"));

    // per-row prediction on a 22-feature vector
    let features = vec![0.5; 22];
    let mut score = f64::NAN;
    let status =
        unsafe { odflow_model_predict_row(model, features.as_ptr(), 22, &mut score) };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());
    assert!(score.is_finite());
    let status =
        unsafe { odflow_model_predict_row(model, features.as_ptr(), 5, &mut score) };
    assert_eq!(status, OdflowStatus::Model);

    // dataset-wide prediction in flow order
    let mut predictions = vec![f64::NAN; n_flows];
    let status = unsafe {
        odflow_model_predict_dataset(model, ds, predictions.as_mut_ptr(), n_flows)
    };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());
    assert!(predictions.iter().all(|p| p.is_finite()));

    // save / load round trip preserves predictions
    let model_path = dir.path().join("model.json");
    let model_path_c = c(model_path.to_str().unwrap());
    let status = unsafe { odflow_model_save(model, model_path_c.as_ptr()) };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());
    let mut reloaded: *mut OdflowModel = std::ptr::null_mut();
    let status = unsafe { odflow_model_load(model_path_c.as_ptr(), &mut reloaded) };
    assert_eq!(status, OdflowStatus::Ok, "{}", last_error());
    let mut score2 = f64::NAN;
    unsafe { odflow_model_predict_row(reloaded, features.as_ptr(), 22, &mut score2) };
    assert_eq!(score, score2);

    unsafe {
        odflow_model_free(reloaded);
        odflow_model_free(model);
        odflow_dataset_free(ds);
    }
}
