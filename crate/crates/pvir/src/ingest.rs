//! Dataset manifests, event annotation files, and run-artifact persistence.
//!
//! One JSON document per event: `{event_id, duration_s, views[],
//! annotations{phases[], captions[], qa[]}}`. Manifests are JSON with
//! `{dataset_id, split, events: [relative paths]}`. Stage outputs land
//! under `runs/<run_id>/<event_id>/<stage>.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_segmentation, CaptionRecord, Choice, GroundTruth, MultiViewEvent, Perspective,
    PhaseLabel, QAItem, QaScope, TimeInterval, ViewKind, ViewStream,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub split: Split,
    /// Event file paths, resolved relative to the manifest's directory.
    pub events: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Trigger,
    Sync,
    Segmentation,
    Reasoning,
    Synthesis,
}

impl Stage {
    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Trigger => "trigger.json",
            Stage::Sync => "sync.json",
            Stage::Segmentation => "segmentation.json",
            Stage::Reasoning => "reasoning.json",
            Stage::Synthesis => "synthesis.json",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Trigger => "trigger",
            Stage::Sync => "sync",
            Stage::Segmentation => "segmentation",
            Stage::Reasoning => "reasoning",
            Stage::Synthesis => "synthesis",
        };
        write!(f, "{s}")
    }
}

/// Record of one persisted stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub run_id: String,
    pub event_id: String,
    pub stage: Stage,
    pub path: PathBuf,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("schema error in {path}: {field}: {reason}")]
    Schema {
        path: PathBuf,
        field: String,
        reason: String,
    },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> IngestError {
        IngestError::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, reason: impl Into<String>) -> IngestError {
        IngestError::Parse { path: path.to_path_buf(), reason: reason.into() }
    }

    fn schema(path: &Path, field: impl Into<String>, reason: impl Into<String>) -> IngestError {
        IngestError::Schema {
            path: path.to_path_buf(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Deserialize)]
struct RawManifest {
    dataset_id: Option<String>,
    split: Option<Split>,
    events: Option<Vec<String>>,
}

/// Loads a dataset manifest, resolving event paths relative to the manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let raw: RawManifest =
        serde_json::from_str(&text).map_err(|e| IngestError::parse(path, e.to_string()))?;

    let dataset_id = raw
        .dataset_id
        .ok_or_else(|| IngestError::parse(path, "missing field \"dataset_id\""))?;
    let split = raw
        .split
        .ok_or_else(|| IngestError::parse(path, "missing field \"split\""))?;
    let events = raw
        .events
        .ok_or_else(|| IngestError::parse(path, "missing field \"events\""))?;

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = std::collections::BTreeSet::new();
    let mut resolved = Vec::with_capacity(events.len());
    for e in &events {
        if !seen.insert(e.clone()) {
            return Err(IngestError::parse(path, format!("duplicate event path \"{e}\"")));
        }
        resolved.push(base.join(e));
    }

    Ok(DatasetManifest { dataset_id, split, events: resolved })
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    event_id: Option<String>,
    duration_s: Option<f64>,
    views: Option<Vec<RawView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<RawAnnotations>,
}

#[derive(Serialize, Deserialize)]
struct RawView {
    view_id: Option<String>,
    kind: Option<ViewKind>,
    video_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    motion_energy_uri: Option<String>,
    #[serde(default)]
    offset_s: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotations {
    phases: Option<Vec<RawPhase>>,
    #[serde(default)]
    captions: Option<Vec<RawCaption>>,
    #[serde(default)]
    qa: Option<Vec<RawQa>>,
}

#[derive(Serialize, Deserialize)]
struct RawPhase {
    phase: Option<u8>,
    start_s: Option<f64>,
    end_s: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawCaption {
    phase: Option<u8>,
    perspective: Option<Perspective>,
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawQa {
    qa_id: Option<String>,
    scope: Option<QaScope>,
    #[serde(default)]
    phase: Option<u8>,
    question: Option<String>,
    options: Option<BTreeMap<String, String>>,
    #[serde(default)]
    answer: Option<String>,
}

fn req<T>(path: &Path, field: &str, v: Option<T>) -> Result<T, IngestError> {
    v.ok_or_else(|| IngestError::schema(path, field, "missing"))
}

fn phase_from(path: &Path, field: &str, idx: u8) -> Result<PhaseLabel, IngestError> {
    PhaseLabel::from_index(idx)
        .ok_or_else(|| IngestError::schema(path, field, format!("phase index {idx} out of range")))
}

/// Loads and fully validates one event annotation file. Ground-truth phase
/// boundaries are passed through `validate_segmentation`.
pub fn load_event(path: &Path) -> Result<MultiViewEvent, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let raw: RawEvent =
        serde_json::from_str(&text).map_err(|e| IngestError::parse(path, e.to_string()))?;
    event_from_raw(path, raw)
}

fn event_from_raw(path: &Path, raw: RawEvent) -> Result<MultiViewEvent, IngestError> {
    let event_id = req(path, "event_id", raw.event_id)?;
    let duration_s = req(path, "duration_s", raw.duration_s)?;
    if duration_s.is_nan() || duration_s <= 0.0 {
        return Err(IngestError::schema(path, "duration_s", "must be positive"));
    }

    let raw_views = req(path, "views", raw.views)?;
    if raw_views.is_empty() {
        return Err(IngestError::schema(path, "views", "empty"));
    }
    let mut views = Vec::with_capacity(raw_views.len());
    let mut ids = std::collections::BTreeSet::new();
    for (i, rv) in raw_views.into_iter().enumerate() {
        let field = |name: &str| format!("views[{i}].{name}");
        let view_id = req(path, &field("view_id"), rv.view_id)?;
        if !ids.insert(view_id.clone()) {
            return Err(IngestError::schema(
                path,
                format!("views[{i}].view_id"),
                format!("duplicate view_id \"{view_id}\""),
            ));
        }
        views.push(ViewStream {
            view_id,
            kind: req(path, &field("kind"), rv.kind)?,
            video_uri: req(path, &field("video_uri"), rv.video_uri)?,
            motion_energy_uri: rv.motion_energy_uri,
            offset_s: rv.offset_s.unwrap_or(0.0),
        });
    }

    let ground_truth = match raw.annotations {
        None => None,
        Some(ann) => {
            let raw_phases = req(path, "annotations.phases", ann.phases)?;
            let mut boundaries = BTreeMap::new();
            for (i, rp) in raw_phases.into_iter().enumerate() {
                let field = |name: &str| format!("annotations.phases[{i}].{name}");
                let idx = req(path, &field("phase"), rp.phase)?;
                let label = phase_from(path, &field("phase"), idx)?;
                let start = req(path, &field("start_s"), rp.start_s)?;
                let end = req(path, &field("end_s"), rp.end_s)?;
                if boundaries.insert(label, TimeInterval::new(start, end)).is_some() {
                    return Err(IngestError::schema(
                        path,
                        field("phase"),
                        format!("duplicate phase {idx}"),
                    ));
                }
            }
            let segmentation = validate_segmentation(&boundaries, duration_s);

            let mut captions = Vec::new();
            for (i, rc) in ann.captions.unwrap_or_default().into_iter().enumerate() {
                let field = |name: &str| format!("annotations.captions[{i}].{name}");
                let idx = req(path, &field("phase"), rc.phase)?;
                let text = req(path, &field("text"), rc.text)?;
                if text.is_empty() {
                    return Err(IngestError::schema(path, field("text"), "empty"));
                }
                captions.push(CaptionRecord {
                    phase: phase_from(path, &field("phase"), idx)?,
                    perspective: req(path, &field("perspective"), rc.perspective)?,
                    text,
                });
            }

            let mut qa = Vec::new();
            for (i, rq) in ann.qa.unwrap_or_default().into_iter().enumerate() {
                let field = |name: &str| format!("annotations.qa[{i}].{name}");
                let options_raw = req(path, &field("options"), rq.options)?;
                if options_raw.len() != 4 {
                    return Err(IngestError::schema(
                        path,
                        field("options"),
                        format!("expected 4, got {}", options_raw.len()),
                    ));
                }
                let mut options = BTreeMap::new();
                for (k, v) in options_raw {
                    let choice = (k.len() == 1)
                        .then(|| Choice::from_letter(k.chars().next().unwrap()))
                        .flatten()
                        .ok_or_else(|| {
                            IngestError::schema(
                                path,
                                field("options"),
                                format!("invalid option key \"{k}\""),
                            )
                        })?;
                    options.insert(choice, v);
                }
                let scope = req(path, &field("scope"), rq.scope)?;
                let phase = match (scope, rq.phase) {
                    (QaScope::Environment, _) => None,
                    (_, Some(idx)) => Some(phase_from(path, &field("phase"), idx)?),
                    (_, None) => {
                        return Err(IngestError::schema(
                            path,
                            field("phase"),
                            "missing (required for view-scoped questions)",
                        ))
                    }
                };
                let answer = match rq.answer {
                    None => None,
                    Some(a) => Some(
                        (a.len() == 1)
                            .then(|| Choice::from_letter(a.chars().next().unwrap()))
                            .flatten()
                            .ok_or_else(|| {
                                IngestError::schema(
                                    path,
                                    field("answer"),
                                    format!("invalid choice \"{a}\""),
                                )
                            })?,
                    ),
                };
                qa.push(QAItem {
                    qa_id: req(path, &field("qa_id"), rq.qa_id)?,
                    scope,
                    phase,
                    question: req(path, &field("question"), rq.question)?,
                    options,
                    answer,
                });
            }

            Some(GroundTruth { segmentation, captions, qa })
        }
    };

    Ok(MultiViewEvent { event_id, duration_s, views, ground_truth })
}

/// Renders an event back into its on-disk JSON form. `load_event` of the
/// output is the identity on valid events.
pub fn serialize_event(event: &MultiViewEvent) -> serde_json::Value {
    let views: Vec<serde_json::Value> = event
        .views
        .iter()
        .map(|v| serde_json::to_value(v).expect("view serializes"))
        .collect();
    let mut doc = serde_json::json!({
        "event_id": event.event_id,
        "duration_s": event.duration_s,
        "views": views,
    });
    if let Some(gt) = &event.ground_truth {
        let phases: Vec<serde_json::Value> = gt
            .segmentation
            .entries
            .iter()
            .map(|(p, iv)| {
                serde_json::json!({
                    "phase": p.index(),
                    "start_s": iv.start_s,
                    "end_s": iv.end_s,
                })
            })
            .collect();
        let captions: Vec<serde_json::Value> = gt
            .captions
            .iter()
            .map(|c| {
                serde_json::json!({
                    "phase": c.phase.index(),
                    "perspective": c.perspective,
                    "text": c.text,
                })
            })
            .collect();
        let qa: Vec<serde_json::Value> = gt
            .qa
            .iter()
            .map(|q| {
                let options: BTreeMap<String, String> = q
                    .options
                    .iter()
                    .map(|(c, t)| (c.letter().to_string(), t.clone()))
                    .collect();
                let mut item = serde_json::json!({
                    "qa_id": q.qa_id,
                    "scope": q.scope,
                    "question": q.question,
                    "options": options,
                });
                if let Some(p) = q.phase {
                    item["phase"] = serde_json::json!(p.index());
                }
                if let Some(a) = q.answer {
                    item["answer"] = serde_json::json!(a.letter().to_string());
                }
                item
            })
            .collect();
        doc["annotations"] = serde_json::json!({
            "phases": phases,
            "captions": captions,
            "qa": qa,
        });
    }
    doc
}

/// Writes a stage payload atomically (write-temp-then-rename) under
/// `<root>/<run_id>/<event_id>/<stage>.json`. Re-running the same key
/// overwrites deterministically.
pub fn persist_stage_output(
    runs_root: &Path,
    run_id: &str,
    event_id: &str,
    stage: Stage,
    payload: &serde_json::Value,
) -> Result<RunArtifact, IngestError> {
    let dir = runs_root.join(run_id).join(event_id);
    fs::create_dir_all(&dir).map_err(|e| IngestError::io(&dir, e))?;
    let final_path = dir.join(stage.file_name());
    let tmp_path = dir.join(format!("{}.tmp", stage.file_name()));
    let body = serde_json::to_string_pretty(payload).expect("payload serializes");
    fs::write(&tmp_path, body.as_bytes()).map_err(|e| IngestError::io(&tmp_path, e))?;
    fs::rename(&tmp_path, &final_path).map_err(|e| IngestError::io(&final_path, e))?;
    Ok(RunArtifact {
        run_id: run_id.to_string(),
        event_id: event_id.to_string(),
        stage,
        path: final_path,
    })
}

/// Reads back a persisted stage payload, if present.
pub fn load_stage_output(
    runs_root: &Path,
    run_id: &str,
    event_id: &str,
    stage: Stage,
) -> Result<Option<serde_json::Value>, IngestError> {
    let path = runs_root.join(run_id).join(event_id).join(stage.file_name());
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
    let value =
        serde_json::from_str(&text).map_err(|e| IngestError::parse(&path, e.to_string()))?;
    Ok(Some(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    pub(crate) const EVENT_JSON: &str = r#"{
        "event_id": "wts_001",
        "duration_s": 43.7,
        "views": [
            {"view_id": "oh1", "kind": "overhead", "video_uri": "file:///oh1.mp4"},
            {"view_id": "oh2", "kind": "overhead", "video_uri": "file:///oh2.mp4"},
            {"view_id": "oh3", "kind": "overhead", "video_uri": "file:///oh3.mp4"},
            {"view_id": "veh", "kind": "vehicle", "video_uri": "file:///veh.mp4"}
        ],
        "annotations": {
            "phases": [
                {"phase": 0, "start_s": 28.8, "end_s": 29.9},
                {"phase": 1, "start_s": 29.8, "end_s": 30.8},
                {"phase": 2, "start_s": 30.7, "end_s": 32.5},
                {"phase": 3, "start_s": 32.6, "end_s": 37.8},
                {"phase": 4, "start_s": 37.8, "end_s": 43.7}
            ],
            "captions": [
                {"phase": 0, "perspective": "pedestrian", "text": "The pedestrian stands behind the vehicle using a smartphone."},
                {"phase": 0, "perspective": "vehicle", "text": "The vehicle prepares to reverse on a residential road."}
            ],
            "qa": [
                {"qa_id": "q1", "scope": "vehicle_view", "phase": 3,
                 "question": "What is the vehicle doing?",
                 "options": {"a": "Reversing", "b": "Parked", "c": "Turning", "d": "Accelerating"},
                 "answer": "a"},
                {"qa_id": "q2", "scope": "environment",
                 "question": "What is the weather?",
                 "options": {"a": "Rain", "b": "Clear", "c": "Snow", "d": "Fog"},
                 "answer": "b"}
            ]
        }
    }"#;

    #[test]
    fn load_event_full_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "e.json", EVENT_JSON);
        let event = load_event(&path).unwrap();
        assert_eq!(event.views.len(), 4);
        let gt = event.ground_truth.as_ref().unwrap();
        assert_eq!(gt.segmentation.entries.len(), 5);
        assert_eq!(gt.qa.len(), 2);
        assert_eq!(gt.qa[1].phase, None);
    }

    #[test]
    fn load_event_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "e.json", EVENT_JSON);
        let event = load_event(&path).unwrap();
        let rendered = serde_json::to_string(&serialize_event(&event)).unwrap();
        let path2 = write_file(dir.path(), "e2.json", &rendered);
        let event2 = load_event(&path2).unwrap();
        assert_eq!(event, event2);
    }

    #[test]
    fn load_event_rejects_empty_views() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "e.json",
            r#"{"event_id": "x", "duration_s": 1.0, "views": []}"#,
        );
        match load_event(&path) {
            Err(IngestError::Schema { field, .. }) => assert_eq!(field, "views"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn load_event_rejects_three_options() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{
            "event_id": "x", "duration_s": 10.0,
            "views": [{"view_id": "v", "kind": "vehicle", "video_uri": "u"}],
            "annotations": {
                "phases": [],
                "qa": [{"qa_id": "q", "scope": "environment", "question": "?",
                        "options": {"a": "1", "b": "2", "c": "3"}}]
            }
        }"#;
        let path = write_file(dir.path(), "e.json", body);
        match load_event(&path) {
            Err(IngestError::Schema { field, reason, .. }) => {
                assert_eq!(field, "annotations.qa[0].options");
                assert!(reason.contains("expected 4"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_field_paths_for_deleted_fields() {
        // Drop each top-level required field in turn; every failure must
        // carry a concrete field path or named missing field.
        let full: serde_json::Value = serde_json::from_str(EVENT_JSON).unwrap();
        for field in ["event_id", "duration_s", "views"] {
            let mut doc = full.clone();
            doc.as_object_mut().unwrap().remove(field);
            let dir = tempfile::tempdir().unwrap();
            let path = write_file(dir.path(), "e.json", &doc.to_string());
            let err = load_event(&path).unwrap_err();
            assert!(
                err.to_string().contains(field),
                "error for dropped {field} does not name it: {err}"
            );
        }
    }

    #[test]
    fn manifest_happy_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "manifest.json",
            r#"{"dataset_id": "wts-mini", "split": "test",
                "events": ["a.json", "b.json", "sub/c.json"]}"#,
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.events.len(), 3);
        assert_eq!(m.events[2], dir.path().join("sub/c.json"));
        assert_eq!(m.split, Split::Test);
    }

    #[test]
    fn manifest_rejects_duplicates_and_missing_split() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write_file(
            dir.path(),
            "dup.json",
            r#"{"dataset_id": "d", "split": "test", "events": ["a.json", "a.json"]}"#,
        );
        match load_manifest(&dup) {
            Err(IngestError::Parse { reason, .. }) => assert!(reason.contains("duplicate")),
            other => panic!("expected parse error, got {other:?}"),
        }
        let no_split = write_file(
            dir.path(),
            "nosplit.json",
            r#"{"dataset_id": "d", "events": []}"#,
        );
        match load_manifest(&no_split) {
            Err(IngestError::Parse { reason, .. }) => assert!(reason.contains("split")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn persist_writes_expected_path_and_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let payload1 = serde_json::json!({"n": 1});
        let payload2 = serde_json::json!({"n": 2});
        let a1 = persist_stage_output(dir.path(), "r1", "e1", Stage::Segmentation, &payload1)
            .unwrap();
        assert_eq!(a1.path, dir.path().join("r1/e1/segmentation.json"));
        persist_stage_output(dir.path(), "r1", "e1", Stage::Segmentation, &payload2).unwrap();
        let back = load_stage_output(dir.path(), "r1", "e1", Stage::Segmentation)
            .unwrap()
            .unwrap();
        assert_eq!(back, payload2);
        let entries: Vec<_> = fs::read_dir(dir.path().join("r1/e1")).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn persist_unwritable_directory_errors() {
        let result = persist_stage_output(
            Path::new("/proc/no_such_root"),
            "r",
            "e",
            Stage::Trigger,
            &serde_json::json!({}),
        );
        assert!(matches!(result, Err(IngestError::Io { .. })));
    }
}
