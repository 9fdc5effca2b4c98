//! Stage 1 synchronization: aligns multi-view clocks via motion-energy
//! cross-correlation, then assembles the synchronized event.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MultiViewEvent, TimeInterval, ViewStream};
use crate::trigger::TriggerWindow;

/// Per-frame motion energy of one view, used as the correlation signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEnergySignal {
    pub sample_rate_hz: f64,
    /// Raw non-negative per-frame values, retained as provided.
    pub values: Vec<f64>,
    /// Mean-centered copy used for correlation.
    pub centered: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("signal too short for correlation (need at least 2 samples)")]
    TooShort,
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error("sample rates differ: {0} vs {1}")]
    RateMismatch(f64, f64),
    #[error("signal has zero variance")]
    DegenerateSignal,
    #[error("max_lag_s exceeds signal extent")]
    LagOutOfRange,
    #[error("missing offset for view {0}")]
    MissingOffset(String),
    #[error("motion energy parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("motion energy io error: {0}")]
    Io(String),
}

/// Wraps per-frame difference sums into a correlation-ready signal.
pub fn motion_energy_from_frame_diffs(
    frame_diff_sums: &[f64],
    sample_rate_hz: f64,
) -> Result<MotionEnergySignal, SyncError> {
    if frame_diff_sums.len() < 2 {
        return Err(SyncError::TooShort);
    }
    if sample_rate_hz <= 0.0 {
        return Err(SyncError::InvalidRate);
    }
    let mean = frame_diff_sums.iter().sum::<f64>() / frame_diff_sums.len() as f64;
    Ok(MotionEnergySignal {
        sample_rate_hz,
        values: frame_diff_sums.to_vec(),
        centered: frame_diff_sums.iter().map(|v| v - mean).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Shift b by +offset_s to align it with a: positive means b lags a.
    pub offset_s: f64,
    /// Peak normalized correlation, clamped to [0, 1].
    pub confidence: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Correlation of `a[i]` against `b[i + lag]` over the overlapping span.
fn corr_at_lag(a: &[f64], b: &[f64], lag: i64) -> Option<f64> {
    let (a_start, b_start) = if lag >= 0 { (0usize, lag as usize) } else { ((-lag) as usize, 0usize) };
    if a_start >= a.len() || b_start >= b.len() {
        return None;
    }
    let len = (a.len() - a_start).min(b.len() - b_start);
    if len < 2 {
        return None;
    }
    pearson(&a[a_start..a_start + len], &b[b_start..b_start + len])
}

/// Estimates the clock offset between two views by normalized
/// cross-correlation over integer lags within `±max_lag_s`, refined by
/// parabolic interpolation around the peak.
pub fn estimate_offset(
    a: &MotionEnergySignal,
    b: &MotionEnergySignal,
    max_lag_s: f64,
) -> Result<OffsetEstimate, SyncError> {
    if a.sample_rate_hz != b.sample_rate_hz {
        return Err(SyncError::RateMismatch(a.sample_rate_hz, b.sample_rate_hz));
    }
    let rate = a.sample_rate_hz;
    let max_lag = (max_lag_s * rate).floor() as i64;
    if max_lag as usize >= a.centered.len() || max_lag as usize >= b.centered.len() {
        return Err(SyncError::LagOutOfRange);
    }
    let var = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    if var(&a.centered) == 0.0 || var(&b.centered) == 0.0 {
        return Err(SyncError::DegenerateSignal);
    }

    let mut best_lag = 0i64;
    let mut best_corr = f64::NEG_INFINITY;
    let mut corrs = std::collections::BTreeMap::new();
    for lag in -max_lag..=max_lag {
        if let Some(c) = corr_at_lag(&a.centered, &b.centered, lag) {
            corrs.insert(lag, c);
            if c > best_corr {
                best_corr = c;
                best_lag = lag;
            }
        }
    }
    if best_corr == f64::NEG_INFINITY {
        return Err(SyncError::DegenerateSignal);
    }

    // Parabolic sub-sample refinement around the peak; skipped at the search
    // boundary or when the curvature vanishes.
    let mut refined_lag = best_lag as f64;
    if let (Some(&cm), Some(&cp)) = (corrs.get(&(best_lag - 1)), corrs.get(&(best_lag + 1))) {
        let denom = cm - 2.0 * best_corr + cp;
        if denom < 0.0 {
            let delta = 0.5 * (cm - cp) / denom;
            if delta.abs() <= 0.5 {
                refined_lag += delta;
            }
        }
    }

    Ok(OffsetEstimate {
        offset_s: refined_lag / rate,
        confidence: best_corr.clamp(0.0, 1.0),
    })
}

/// Assembles a synchronized multi-view event from a trigger window and
/// per-view offsets. The first view is the reference and carries offset 0;
/// every other view must appear in `offsets` (keyed by view_id).
pub fn build_synchronized_event(
    event_id: &str,
    raw_views: &[ViewStream],
    window: &TriggerWindow,
    offsets: &std::collections::BTreeMap<String, f64>,
) -> Result<MultiViewEvent, SyncError> {
    let mut views = Vec::with_capacity(raw_views.len());
    for (i, v) in raw_views.iter().enumerate() {
        let offset_s = if i == 0 {
            0.0
        } else {
            *offsets
                .get(&v.view_id)
                .ok_or_else(|| SyncError::MissingOffset(v.view_id.clone()))?
        };
        views.push(ViewStream { offset_s, ..v.clone() });
    }
    Ok(MultiViewEvent {
        event_id: event_id.to_string(),
        duration_s: window.window.len_s(),
        views,
        ground_truth: None,
    })
}

/// Parses a motion-energy sidecar CSV: header `sample_rate_hz`, then one
/// value per line.
pub fn load_motion_energy(path: &Path) -> Result<MotionEnergySignal, SyncError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SyncError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(SyncError::TooShort)?;
    if header.trim() != "sample_rate_hz" {
        return Err(SyncError::Parse {
            line: 1,
            reason: format!("expected header \"sample_rate_hz\", got \"{header}\""),
        });
    }
    let (_, rate_line) = lines.next().ok_or(SyncError::TooShort)?;
    let rate: f64 = rate_line.trim().parse().map_err(|_| SyncError::Parse {
        line: 2,
        reason: format!("invalid sample rate \"{rate_line}\""),
    })?;
    let mut values = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line.trim().parse().map_err(|_| SyncError::Parse {
            line: i + 1,
            reason: format!("invalid value \"{line}\""),
        })?;
        values.push(v);
    }
    motion_energy_from_frame_diffs(&values, rate)
}

/// Helper: shifts a window by `delta_s`, used when re-basing clip intervals.
pub fn shift_interval(iv: &TimeInterval, delta_s: f64) -> TimeInterval {
    iv.shifted(delta_s)
}
