//! C ABI over the pvir engine: caption/temporal metrics, answer-choice
//! extraction, and incident-report validation.
//!
//! Conventions: functions return a [`PvirStatus`] code; results go to out
//! pointers. Strings returned by this library must be released with
//! [`pvir_string_free`]; parsed reports with [`pvir_report_free`]. All
//! input strings are NUL-terminated UTF-8.

use std::ffi::{c_char, c_double, CStr, CString};
use std::ptr;

use pvir::metrics::{bleu, interval_iou, meteor, rouge_l, tokenize};
use pvir::model::{IncidentReport, TimeInterval};
use pvir::reasoning::extract_answer_choice;
use pvir::synthesis::{report_to_canonical_json, validate_report, SynthesisError};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvirStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    SchemaViolation = 3,
    NoChoiceFound = 4,
}

/// Opaque handle to a validated incident report.
pub struct PvirReport {
    inner: IncidentReport,
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, PvirStatus> {
    if ptr.is_null() {
        return Err(PvirStatus::NullArgument);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| PvirStatus::InvalidUtf8)
}

fn text_metric(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut c_double,
    f: impl Fn(&str, &str) -> f64,
) -> PvirStatus {
    if out.is_null() {
        return PvirStatus::NullArgument;
    }
    let (c, r) = unsafe {
        match (read_str(candidate), read_str(reference)) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(e), _) | (_, Err(e)) => return e,
        }
    };
    unsafe { *out = f(c, r) };
    PvirStatus::Ok
}

/// Sentence BLEU-4 of `candidate` against `reference`.
///
/// # Safety
///
/// Pointer arguments must be valid: strings NUL-terminated, `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_bleu(
    candidate: *const c_char,
    reference: *const c_char,
    out_score: *mut c_double,
) -> PvirStatus {
    text_metric(candidate, reference, out_score, |c, r| {
        bleu(&tokenize(c), &tokenize(r), 4)
    })
}

/// ROUGE-L F-score (beta = 1).
///
/// # Safety
///
/// Pointer arguments must be valid: strings NUL-terminated, `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_rouge_l(
    candidate: *const c_char,
    reference: *const c_char,
    out_score: *mut c_double,
) -> PvirStatus {
    text_metric(candidate, reference, out_score, |c, r| {
        rouge_l(&tokenize(c), &tokenize(r), 1.0)
    })
}

/// METEOR (exact-match variant).
///
/// # Safety
///
/// Pointer arguments must be valid: strings NUL-terminated, `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_meteor(
    candidate: *const c_char,
    reference: *const c_char,
    out_score: *mut c_double,
) -> PvirStatus {
    text_metric(candidate, reference, out_score, |c, r| {
        meteor(&tokenize(c), &tokenize(r))
    })
}

/// Intersection-over-union of two temporal intervals.
///
/// # Safety
///
/// `out_iou` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_interval_iou(
    pred_start_s: c_double,
    pred_end_s: c_double,
    gt_start_s: c_double,
    gt_end_s: c_double,
    out_iou: *mut c_double,
) -> PvirStatus {
    if out_iou.is_null() {
        return PvirStatus::NullArgument;
    }
    let iou = interval_iou(
        &TimeInterval::new(pred_start_s, pred_end_s),
        &TimeInterval::new(gt_start_s, gt_end_s),
    );
    unsafe { *out_iou = iou };
    PvirStatus::Ok
}

/// Extracts the multiple-choice letter from a model's raw VQA response.
/// On success writes the lowercase letter ('a'..'d') to `out_choice`.
///
/// # Safety
///
/// `raw_text` must be NUL-terminated; `out_choice` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_extract_answer_choice(
    raw_text: *const c_char,
    out_choice: *mut c_char,
) -> PvirStatus {
    if out_choice.is_null() {
        return PvirStatus::NullArgument;
    }
    let text = match unsafe { read_str(raw_text) } {
        Ok(t) => t,
        Err(e) => return e,
    };
    match extract_answer_choice(text) {
        Some(choice) => {
            unsafe { *out_choice = choice.letter() as c_char };
            PvirStatus::Ok
        }
        None => PvirStatus::NoChoiceFound,
    }
}

/// Parses and validates an incident report. On success, `out_report`
/// receives a handle that must be freed with `pvir_report_free`.
///
/// # Safety
///
/// `json_text` must be NUL-terminated; `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_report_parse(
    json_text: *const c_char,
    out_report: *mut *mut PvirReport,
) -> PvirStatus {
    if out_report.is_null() {
        return PvirStatus::NullArgument;
    }
    let text = match unsafe { read_str(json_text) } {
        Ok(t) => t,
        Err(e) => return e,
    };
    match validate_report(text) {
        Ok(report) => {
            let handle = Box::new(PvirReport { inner: report });
            unsafe { *out_report = Box::into_raw(handle) };
            PvirStatus::Ok
        }
        Err(_) => {
            unsafe { *out_report = ptr::null_mut() };
            PvirStatus::SchemaViolation
        }
    }
}

/// Validates a report without constructing a handle. On failure,
/// `out_violations` (if non-null) receives a newline-separated list that
/// must be freed with `pvir_string_free`.
///
/// # Safety
///
/// `json_text` must be NUL-terminated; `out_violations`, if non-null, writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_report_validate(
    json_text: *const c_char,
    out_violations: *mut *mut c_char,
) -> PvirStatus {
    let text = match unsafe { read_str(json_text) } {
        Ok(t) => t,
        Err(e) => return e,
    };
    if !out_violations.is_null() {
        unsafe { *out_violations = ptr::null_mut() };
    }
    match validate_report(text) {
        Ok(_) => PvirStatus::Ok,
        Err(SynthesisError::SchemaViolations(violations)) => {
            if !out_violations.is_null() {
                let joined = violations.join("\n");
                if let Ok(c) = CString::new(joined) {
                    unsafe { *out_violations = c.into_raw() };
                }
            }
            PvirStatus::SchemaViolation
        }
        Err(_) => PvirStatus::SchemaViolation,
    }
}

/// The report's incident classification (e.g. "Collision") as a newly
/// allocated string; free with `pvir_string_free`.
///
/// # Safety
///
/// `report` must come from `pvir_report_parse`; `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_report_classification(
    report: *const PvirReport,
    out_text: *mut *mut c_char,
) -> PvirStatus {
    if report.is_null() || out_text.is_null() {
        return PvirStatus::NullArgument;
    }
    let report = unsafe { &*report };
    match CString::new(report.inner.event_diagnosis.classification.clone()) {
        Ok(c) => {
            unsafe { *out_text = c.into_raw() };
            PvirStatus::Ok
        }
        Err(_) => PvirStatus::InvalidUtf8,
    }
}

/// Canonical JSON rendering (sorted keys, two-space indent) of a parsed
/// report; free with `pvir_string_free`.
///
/// # Safety
///
/// `report` must come from `pvir_report_parse`; `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_report_to_json(
    report: *const PvirReport,
    out_text: *mut *mut c_char,
) -> PvirStatus {
    if report.is_null() || out_text.is_null() {
        return PvirStatus::NullArgument;
    }
    let report = unsafe { &*report };
    match CString::new(report_to_canonical_json(&report.inner)) {
        Ok(c) => {
            unsafe { *out_text = c.into_raw() };
            PvirStatus::Ok
        }
        Err(_) => PvirStatus::InvalidUtf8,
    }
}

/// Number of links in the report's causal chain.
///
/// # Safety
///
/// `report` must come from `pvir_report_parse`; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn pvir_report_causal_chain_len(
    report: *const PvirReport,
    out_len: *mut usize,
) -> PvirStatus {
    if report.is_null() || out_len.is_null() {
        return PvirStatus::NullArgument;
    }
    let report = unsafe { &*report };
    unsafe { *out_len = report.inner.event_diagnosis.causal_chain.len() };
    PvirStatus::Ok
}

/// Frees a report handle returned by `pvir_report_parse`.
///
/// # Safety
///
/// `report` must come from `pvir_report_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pvir_report_free(report: *mut PvirReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Frees a string allocated by this library.
///
/// # Safety
///
/// `text` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pvir_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(unsafe { CString::from_raw(text) });
    }
}
