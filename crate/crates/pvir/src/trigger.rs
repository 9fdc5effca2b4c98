//! Stage 1 trigger: detects pedestrian-vehicle events of interest from
//! trajectory streams.
//!
//! A trigger fires for a (pedestrian, vehicle) pair when their pairwise
//! distance stays below `distance_threshold_m` while the closing speed
//! (negative time derivative of distance, finite-difference) exceeds
//! `closing_speed_threshold_mps` for at least `sustain_samples` consecutive
//! shared timestamps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TimeInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorClass {
    Pedestrian,
    Vehicle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub actor_id: String,
    pub actor_class: ActorClass,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub distance_threshold_m: f64,
    pub closing_speed_threshold_mps: f64,
    pub sustain_samples: usize,
    pub lookback_s: f64,
}

impl Default for TriggerParams {
    fn default() -> TriggerParams {
        TriggerParams {
            distance_threshold_m: 10.0,
            closing_speed_threshold_mps: 0.5,
            sustain_samples: 3,
            lookback_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerWindow {
    pub pedestrian_id: String,
    pub vehicle_id: String,
    pub trigger_t_s: f64,
    pub window: TimeInterval,
}

#[derive(Debug, Error, PartialEq)]
pub enum TriggerError {
    #[error("no trajectory samples")]
    EmptyInput,
    #[error("trigger params must be strictly positive")]
    InvalidParams,
    #[error("trajectory parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trajectory io error: {0}")]
    Io(String),
}

/// Pairwise distance per shared timestamp for one (pedestrian, vehicle) pair.
fn shared_distances(
    ped: &BTreeMap<u64, (f64, f64, f64)>,
    veh: &BTreeMap<u64, (f64, f64, f64)>,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (key, &(t, px, py)) in ped {
        if let Some(&(_, vx, vy)) = veh.get(key) {
            out.push((t, ((px - vx).powi(2) + (py - vy).powi(2)).sqrt()));
        }
    }
    out
}

/// Closing speed = -d/dt of distance. Central differences inside, one-sided
/// at the first and last samples.
fn closing_speeds(series: &[(f64, f64)]) -> Vec<f64> {
    let n = series.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let (lo, hi) = if n == 1 {
            return out;
        } else if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        let dt = series[hi].0 - series[lo].0;
        out[i] = if dt > 0.0 {
            -(series[hi].1 - series[lo].1) / dt
        } else {
            0.0
        };
    }
    out
}

fn time_key(t: f64) -> u64 {
    // Millisecond bucketing so shared timestamps survive float noise.
    (t * 1000.0).round() as u64
}

/// Scans all (pedestrian, vehicle) pairs and returns one merged window per
/// sustained approach.
pub fn detect_trigger(
    trajectories: &[TrajectorySample],
    params: &TriggerParams,
) -> Result<Vec<TriggerWindow>, TriggerError> {
    if trajectories.is_empty() {
        return Err(TriggerError::EmptyInput);
    }
    if params.distance_threshold_m <= 0.0
        || params.closing_speed_threshold_mps <= 0.0
        || params.sustain_samples == 0
        || params.lookback_s <= 0.0
    {
        return Err(TriggerError::InvalidParams);
    }

    let mut peds: BTreeMap<String, BTreeMap<u64, (f64, f64, f64)>> = BTreeMap::new();
    let mut vehs: BTreeMap<String, BTreeMap<u64, (f64, f64, f64)>> = BTreeMap::new();
    for s in trajectories {
        let map = match s.actor_class {
            ActorClass::Pedestrian => &mut peds,
            ActorClass::Vehicle => &mut vehs,
        };
        map.entry(s.actor_id.clone())
            .or_default()
            .insert(time_key(s.t_s), (s.t_s, s.x_m, s.y_m));
    }

    let mut windows = Vec::new();
    for (ped_id, ped) in &peds {
        for (veh_id, veh) in &vehs {
            let series = shared_distances(ped, veh);
            if series.is_empty() {
                continue;
            }
            let closing = closing_speeds(&series);
            let qualifies: Vec<bool> = series
                .iter()
                .zip(&closing)
                .map(|((_, d), c)| {
                    *d < params.distance_threshold_m && *c > params.closing_speed_threshold_mps
                })
                .collect();

            // Maximal runs of qualifying samples; a run of at least
            // sustain_samples opens a window from lookback before its first
            // timestamp until the condition lapses.
            let mut pair_windows: Vec<TriggerWindow> = Vec::new();
            let mut i = 0;
            while i < series.len() {
                if !qualifies[i] {
                    i += 1;
                    continue;
                }
                let run_start = i;
                while i < series.len() && qualifies[i] {
                    i += 1;
                }
                let run_len = i - run_start;
                if run_len >= params.sustain_samples {
                    let trigger_t = series[run_start].0;
                    let end_t = series[i - 1].0;
                    pair_windows.push(TriggerWindow {
                        pedestrian_id: ped_id.clone(),
                        vehicle_id: veh_id.clone(),
                        trigger_t_s: trigger_t,
                        window: TimeInterval::new(
                            (trigger_t - params.lookback_s).max(0.0),
                            end_t.max(trigger_t),
                        ),
                    });
                }
            }

            // Merge overlapping windows for the same pair.
            let mut merged: Vec<TriggerWindow> = Vec::new();
            for w in pair_windows {
                match merged.last_mut() {
                    Some(prev) if w.window.start_s <= prev.window.end_s => {
                        prev.window.end_s = prev.window.end_s.max(w.window.end_s);
                    }
                    _ => merged.push(w),
                }
            }
            windows.extend(merged);
        }
    }

    Ok(windows)
}

/// Parses a trajectory CSV with header `t_s,actor_id,actor_class,x_m,y_m`.
pub fn load_trajectories(path: &Path) -> Result<Vec<TrajectorySample>, TriggerError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| TriggerError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record.map_err(|e| TriggerError::Parse { line, reason: e.to_string() })?;
        if record.len() != 5 {
            return Err(TriggerError::Parse {
                line,
                reason: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let parse_f = |idx: usize, name: &str| -> Result<f64, TriggerError> {
            record[idx].trim().parse().map_err(|_| TriggerError::Parse {
                line,
                reason: format!("invalid {name} \"{}\"", &record[idx]),
            })
        };
        let actor_class = match record[2].trim() {
            "pedestrian" => ActorClass::Pedestrian,
            "vehicle" => ActorClass::Vehicle,
            other => {
                return Err(TriggerError::Parse {
                    line,
                    reason: format!("invalid actor_class \"{other}\""),
                })
            }
        };
        out.push(TrajectorySample {
            t_s: parse_f(0, "t_s")?,
            actor_id: record[1].trim().to_string(),
            actor_class,
            x_m: parse_f(3, "x_m")?,
            y_m: parse_f(4, "y_m")?,
        });
    }
    Ok(out)
}
