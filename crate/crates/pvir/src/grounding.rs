//! Stage 2: multi-view temporal grounding. Builds the phase-segmentation
//! prompt, invokes a backend, and parses the response into a
//! [`PhaseSegmentation`].
//!
//! Three response syntaxes are accepted, because fine-tuned and zero-shot
//! models format differently:
//!   1. labeled lines: `Phase 2: 30.7 - 32.5`
//!   2. a JSON object: `{"2": {"start": 30.7, "end": 32.5}, ...}`
//!   3. key-value lines: `Phase 2: start=30.7, end=32.5`

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerateRequest, GenerationParams, MediaRef};
use crate::model::{validate_segmentation, MultiViewEvent, PhaseLabel, PhaseSegmentation, TimeInterval};

/// The five phase definition strings, in fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDefinitionSet {
    definitions: [String; 5],
}

impl Default for PhaseDefinitionSet {
    fn default() -> PhaseDefinitionSet {
        PhaseDefinitionSet {
            definitions: [
                "Phase 0 (Pre-recognition): The timing before the start of environment awareness (crosswalks, traffic signals, vehicles, etc.).".to_string(),
                "Phase 1 (Recognition): The timing from the start of environment awareness (crosswalks, traffic signals, vehicles, etc.) until a judgment is made.".to_string(),
                "Phase 2 (Judgment): In principle, the moment from which environmental awareness is completed until the start of an action.".to_string(),
                "Phase 3 (Action): Start of movement of any part of the body (excluding eyes and ears) up to the time a result (e.g., collision) occurs.".to_string(),
                "Phase 4 (Avoidance): The time after avoidability is clear until the time of avoidance happened or failure to avoid.".to_string(),
            ],
        }
    }
}

impl PhaseDefinitionSet {
    pub fn definitions(&self) -> &[String; 5] {
        &self.definitions
    }
}

/// The grounding prompt plus its media attachments, in temporal
/// serialization order (event view order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingPrompt {
    pub system_text: String,
    pub media: Vec<MediaRef>,
}

/// Builds the multi-view temporal-grounding prompt for an event. Media are
/// serialized in event view order, each spanning the full event interval.
pub fn build_grounding_prompt(
    event: &MultiViewEvent,
    defs: &PhaseDefinitionSet,
) -> GroundingPrompt {
    let mut text = String::from(
        "You are provided with multiple synchronized videos of a traffic event \
         from different viewpoints. Your task is to identify and locate the \
         temporal boundaries for five distinct phases based on the following \
         definitions:\n\n",
    );
    for def in defs.definitions() {
        text.push_str(def);
        text.push('\n');
    }
    text.push_str("\nProvide the start and end timestamps for each phase in seconds.");

    let media = event
        .views
        .iter()
        .map(|v| MediaRef::new(v.video_uri.clone(), 0.0, event.duration_s))
        .collect();

    GroundingPrompt { system_text: text, media }
}

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("unparseable segmentation response (no phase/timestamp pairs found)")]
    Unparseable { raw_text: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn labeled_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // "Phase 2: 30.7 - 32.5", "phase 2 (Judgment): 30.7s to 32.5s"
        Regex::new(
            r"(?i)phase\s*(\d)[^\d\n]*?(-?\d+(?:\.\d+)?)\s*s?\s*(?:-|–|—|to)\s*(-?\d+(?:\.\d+)?)",
        )
        .unwrap()
    })
}

fn key_value_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // "Phase 3: start=32.6, end=37.8"
        Regex::new(
            r"(?i)phase\s*(\d)\D*?start\s*=\s*(-?\d+(?:\.\d+)?)\s*,?\s*end\s*=\s*(-?\d+(?:\.\d+)?)",
        )
        .unwrap()
    })
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        if let Some(end) = rest.rfind("```") {
            return &rest[..end];
        }
    }
    trimmed
}

fn number_from(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn phase_key(key: &str) -> Option<PhaseLabel> {
    let k = key.trim().to_ascii_lowercase();
    let digits: String = k.chars().filter(|c| c.is_ascii_digit()).collect();
    if let Ok(idx) = digits.parse::<u8>() {
        if k.starts_with("phase") || k.len() == digits.len() {
            return PhaseLabel::from_index(idx);
        }
    }
    None
}

fn parse_json_form(text: &str) -> Option<BTreeMap<PhaseLabel, TimeInterval>> {
    let doc: serde_json::Value = serde_json::from_str(strip_code_fence(text)).ok()?;
    let obj = doc.as_object()?;
    // Either a top-level phase map or one nested under "phases".
    let obj = match obj.get("phases") {
        Some(serde_json::Value::Object(inner)) => inner,
        _ => obj,
    };
    let mut out = BTreeMap::new();
    for (key, val) in obj {
        let Some(phase) = phase_key(key) else { continue };
        let interval = match val {
            serde_json::Value::Object(fields) => {
                let start = fields.get("start").or_else(|| fields.get("start_s"));
                let end = fields.get("end").or_else(|| fields.get("end_s"));
                match (start.and_then(number_from), end.and_then(number_from)) {
                    (Some(s), Some(e)) => TimeInterval::new(s, e),
                    _ => continue,
                }
            }
            serde_json::Value::Array(pair) if pair.len() == 2 => {
                match (number_from(&pair[0]), number_from(&pair[1])) {
                    (Some(s), Some(e)) => TimeInterval::new(s, e),
                    _ => continue,
                }
            }
            _ => continue,
        };
        out.insert(phase, interval);
    }
    (!out.is_empty()).then_some(out)
}

fn parse_line_forms(text: &str) -> BTreeMap<PhaseLabel, TimeInterval> {
    let mut out = BTreeMap::new();
    for caps in key_value_re().captures_iter(text) {
        if let (Some(phase), Ok(s), Ok(e)) = (
            caps[1].parse::<u8>().ok().and_then(PhaseLabel::from_index),
            caps[2].parse::<f64>(),
            caps[3].parse::<f64>(),
        ) {
            out.entry(phase).or_insert(TimeInterval::new(s, e));
        }
    }
    for caps in labeled_line_re().captures_iter(text) {
        if let (Some(phase), Ok(s), Ok(e)) = (
            caps[1].parse::<u8>().ok().and_then(PhaseLabel::from_index),
            caps[2].parse::<f64>(),
            caps[3].parse::<f64>(),
        ) {
            out.entry(phase).or_insert(TimeInterval::new(s, e));
        }
    }
    out
}

/// Extracts per-phase boundaries from a model response and validates them.
pub fn parse_segmentation_response(
    text: &str,
    duration_s: f64,
) -> Result<PhaseSegmentation, GroundingError> {
    let raw = parse_json_form(text).unwrap_or_else(|| parse_line_forms(text));
    if raw.is_empty() {
        return Err(GroundingError::Unparseable { raw_text: text.to_string() });
    }
    Ok(validate_segmentation(&raw, duration_s))
}

/// Stage 2 result: parsed segmentation plus the raw response, which callers
/// persist alongside the parsed output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationOutcome {
    pub segmentation: PhaseSegmentation,
    pub raw_response: String,
    pub request_fingerprint: String,
}

/// Composes prompt building, backend generation, and response parsing.
pub fn segment_event(
    backend: &dyn Backend,
    model_id: &str,
    event: &MultiViewEvent,
    defs: &PhaseDefinitionSet,
) -> Result<SegmentationOutcome, GroundingError> {
    let prompt = build_grounding_prompt(event, defs);
    let request = GenerateRequest {
        model_id: model_id.to_string(),
        prompt_text: prompt.system_text,
        media: prompt.media,
        params: GenerationParams::default(),
    };
    let fp = crate::backend::fingerprint(&request);
    let response = backend.generate(&request)?;
    let segmentation = parse_segmentation_response(&response.text, event.duration_s)?;
    Ok(SegmentationOutcome {
        segmentation,
        raw_response: response.text,
        request_fingerprint: fp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::model::{ViewKind, ViewStream, Violation};

    fn event(views: usize) -> MultiViewEvent {
        MultiViewEvent {
            event_id: "e".into(),
            duration_s: 43.7,
            views: (0..views)
                .map(|i| ViewStream {
                    view_id: format!("v{i}"),
                    kind: ViewKind::Overhead,
                    video_uri: format!("file:///v{i}.mp4"),
                    motion_energy_uri: None,
                    offset_s: 0.0,
                })
                .collect(),
            ground_truth: None,
        }
    }

    pub(crate) const TABLE4_TEXT: &str = "Phase 0: 28.8 - 29.9\nPhase 1: 29.8 - 30.8\nPhase 2: 30.7 - 32.5\nPhase 3: 32.6 - 37.8\nPhase 4: 37.8 - 43.7\n";

    fn table4_expected() -> BTreeMap<PhaseLabel, TimeInterval> {
        [
            (PhaseLabel::PreRecognition, TimeInterval::new(28.8, 29.9)),
            (PhaseLabel::Recognition, TimeInterval::new(29.8, 30.8)),
            (PhaseLabel::Judgment, TimeInterval::new(30.7, 32.5)),
            (PhaseLabel::Action, TimeInterval::new(32.6, 37.8)),
            (PhaseLabel::Avoidance, TimeInterval::new(37.8, 43.7)),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn prompt_embeds_definitions_and_media_in_order() {
        let defs = PhaseDefinitionSet::default();
        let prompt = build_grounding_prompt(&event(4), &defs);
        assert_eq!(prompt.media.len(), 4);
        for def in defs.definitions() {
            assert!(prompt.system_text.contains(def.as_str()));
        }
        assert!(prompt
            .system_text
            .ends_with("Provide the start and end timestamps for each phase in seconds."));
        for (i, m) in prompt.media.iter().enumerate() {
            assert_eq!(m.uri, format!("file:///v{i}.mp4"));
            assert_eq!((m.start_s, m.end_s), (0.0, 43.7));
            assert_eq!(m.fps, 2.0);
            assert_eq!(m.max_pixels, 6400);
        }
    }

    #[test]
    fn prompt_single_view_and_determinism() {
        let defs = PhaseDefinitionSet::default();
        let p1 = build_grounding_prompt(&event(1), &defs);
        assert_eq!(p1.media.len(), 1);
        let p4a = build_grounding_prompt(&event(4), &defs);
        let p4b = build_grounding_prompt(&event(4), &defs);
        assert_eq!(p4a, p4b);
        assert_eq!(p1.system_text, p4a.system_text);
    }

    #[test]
    fn parses_labeled_lines_table4() {
        let seg = parse_segmentation_response(TABLE4_TEXT, 43.7).unwrap();
        assert_eq!(seg.entries, table4_expected());
    }

    #[test]
    fn parses_json_form() {
        let text = r#"```json
        {"phases": {"0": {"start": 28.8, "end": 29.9}, "1": [29.8, 30.8],
                    "phase 2": {"start_s": 30.7, "end_s": 32.5},
                    "3": {"start": 32.6, "end": 37.8}, "4": {"start": 37.8, "end": 43.7}}}
        ```"#;
        let seg = parse_segmentation_response(text, 43.7).unwrap();
        assert_eq!(seg.entries, table4_expected());
    }

    #[test]
    fn parses_key_value_form() {
        let text = "Phase 0: start=28.8, end=29.9\nPhase 1: start=29.8, end=30.8\nPhase 2: start=30.7, end=32.5\nPhase 3: start=32.6, end=37.8\nPhase 4: start=37.8, end=43.7";
        let seg = parse_segmentation_response(text, 43.7).unwrap();
        assert_eq!(seg.entries, table4_expected());
    }

    #[test]
    fn prose_without_numbers_is_unparseable() {
        let result = parse_segmentation_response(
            "The pedestrian crossed while the vehicle reversed.",
            43.7,
        );
        assert!(matches!(result, Err(GroundingError::Unparseable { .. })));
    }

    #[test]
    fn four_of_five_phases_yields_missing_violation() {
        let text = "Phase 0: 28.8 - 29.9\nPhase 1: 29.8 - 30.8\nPhase 2: 30.7 - 32.5\nPhase 3: 32.6 - 37.8\n";
        let seg = parse_segmentation_response(text, 43.7).unwrap();
        assert_eq!(seg.entries.len(), 4);
        assert!(seg
            .violations
            .contains(&Violation::MissingPhase(PhaseLabel::Avoidance)));
    }

    #[test]
    fn segment_event_against_mock() {
        let defs = PhaseDefinitionSet::default();
        let ev = event(4);
        let prompt = build_grounding_prompt(&ev, &defs);
        let request = GenerateRequest {
            model_id: "tg".into(),
            prompt_text: prompt.system_text,
            media: prompt.media,
            params: GenerationParams::default(),
        };
        let mock = MockBackend::new().with_fixture(&request, TABLE4_TEXT);
        let outcome = segment_event(&mock, "tg", &ev, &defs).unwrap();
        assert_eq!(outcome.segmentation.entries, table4_expected());
        assert_eq!(outcome.raw_response, TABLE4_TEXT);
    }

    #[test]
    fn segment_event_garbage_preserves_raw() {
        let defs = PhaseDefinitionSet::default();
        let ev = event(2);
        let prompt = build_grounding_prompt(&ev, &defs);
        let request = GenerateRequest {
            model_id: "tg".into(),
            prompt_text: prompt.system_text,
            media: prompt.media,
            params: GenerationParams::default(),
        };
        let mock = MockBackend::new().with_fixture(&request, "no timestamps here");
        match segment_event(&mock, "tg", &ev, &defs) {
            Err(GroundingError::Unparseable { raw_text }) => {
                assert_eq!(raw_text, "no timestamps here");
            }
            other => panic!("expected unparseable, got {other:?}"),
        }
    }

    #[test]
    fn segment_event_backend_failure_propagates() {
        let defs = PhaseDefinitionSet::default();
        let ev = event(2);
        let mock = MockBackend::new();
        assert!(matches!(
            segment_event(&mock, "tg", &ev, &defs),
            Err(GroundingError::Backend(_))
        ));
    }
}
