//! Shared domain types for events, phases, segmentations, analyses, and
//! reports, plus their validity rules.
//!
//! Everything here is an immutable value after construction and safe to
//! share across threads.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five ordered behavioral phases of a pedestrian-vehicle encounter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum PhaseLabel {
    PreRecognition,
    Recognition,
    Judgment,
    Action,
    Avoidance,
}

pub const PHASE_COUNT: usize = 5;

impl PhaseLabel {
    pub const ALL: [PhaseLabel; PHASE_COUNT] = [
        PhaseLabel::PreRecognition,
        PhaseLabel::Recognition,
        PhaseLabel::Judgment,
        PhaseLabel::Action,
        PhaseLabel::Avoidance,
    ];

    pub fn index(self) -> u8 {
        match self {
            PhaseLabel::PreRecognition => 0,
            PhaseLabel::Recognition => 1,
            PhaseLabel::Judgment => 2,
            PhaseLabel::Action => 3,
            PhaseLabel::Avoidance => 4,
        }
    }

    pub fn from_index(idx: u8) -> Option<PhaseLabel> {
        PhaseLabel::ALL.get(idx as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseLabel::PreRecognition => "Pre-recognition",
            PhaseLabel::Recognition => "Recognition",
            PhaseLabel::Judgment => "Judgment",
            PhaseLabel::Action => "Action",
            PhaseLabel::Avoidance => "Avoidance",
        }
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl From<PhaseLabel> for u8 {
    fn from(p: PhaseLabel) -> u8 {
        p.index()
    }
}

impl TryFrom<u8> for PhaseLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<PhaseLabel, String> {
        PhaseLabel::from_index(v).ok_or_else(|| format!("phase index out of range: {v}"))
    }
}

/// A `[start_s, end_s]` span on the event timeline, in seconds.
///
/// `start_s <= end_s` always holds for values produced by this crate;
/// degenerate `start_s == end_s` spans are representable and flagged by
/// [`validate_segmentation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeInterval {
    pub fn new(start_s: f64, end_s: f64) -> TimeInterval {
        TimeInterval { start_s, end_s }
    }

    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_degenerate(&self) -> bool {
        self.start_s == self.end_s
    }

    /// Shifts both endpoints by `delta_s`.
    pub fn shifted(&self, delta_s: f64) -> TimeInterval {
        TimeInterval::new(self.start_s + delta_s, self.end_s + delta_s)
    }

    /// Clamps both endpoints into `[0, max_s]`.
    pub fn clamped(&self, max_s: f64) -> TimeInterval {
        TimeInterval::new(self.start_s.clamp(0.0, max_s), self.end_s.clamp(0.0, max_s))
    }
}

/// Diagnostics attached to a [`PhaseSegmentation`] by [`validate_segmentation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingPhase(PhaseLabel),
    ClampedStart(PhaseLabel),
    ClampedEnd(PhaseLabel),
    /// Raw interval had start > end; endpoints were swapped.
    Inverted(PhaseLabel),
    /// Interval has zero length; kept, scores IoU 0 against any
    /// non-degenerate ground truth.
    Degenerate(PhaseLabel),
    /// This phase starts before the previous present phase starts.
    /// Recorded but not corrected.
    OrderInversion(PhaseLabel),
}

/// The boundary set for the five behavioral phases (Stage 2 output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegmentation {
    pub entries: BTreeMap<PhaseLabel, TimeInterval>,
    pub duration_s: f64,
    pub violations: Vec<Violation>,
}

impl PhaseSegmentation {
    pub fn interval(&self, phase: PhaseLabel) -> Option<TimeInterval> {
        self.entries.get(&phase).copied()
    }
}

/// Validates a raw per-phase boundary map against an event duration.
///
/// Total: never rejects a parseable segmentation. Out-of-range timestamps
/// are clamped into `[0, duration_s]`, inverted endpoints swapped, missing
/// or degenerate phases flagged, and non-monotone phase starts recorded as
/// order inversions without correction.
pub fn validate_segmentation(
    raw: &BTreeMap<PhaseLabel, TimeInterval>,
    duration_s: f64,
) -> PhaseSegmentation {
    assert!(duration_s > 0.0, "duration_s must be positive");
    let mut entries = BTreeMap::new();
    let mut violations = Vec::new();

    for phase in PhaseLabel::ALL {
        let Some(iv) = raw.get(&phase) else {
            violations.push(Violation::MissingPhase(phase));
            continue;
        };
        let (mut start, mut end) = (iv.start_s, iv.end_s);
        if start > end {
            std::mem::swap(&mut start, &mut end);
            violations.push(Violation::Inverted(phase));
        }
        let clamped_start = start.clamp(0.0, duration_s);
        if clamped_start != start || start.is_nan() {
            violations.push(Violation::ClampedStart(phase));
        }
        let clamped_end = end.clamp(0.0, duration_s);
        if clamped_end != end || end.is_nan() {
            violations.push(Violation::ClampedEnd(phase));
        }
        // NaN endpoints collapse to 0 so downstream arithmetic stays total.
        let start = if clamped_start.is_nan() { 0.0 } else { clamped_start };
        let end = if clamped_end.is_nan() { 0.0 } else { clamped_end };
        let (start, end) = if start <= end { (start, end) } else { (end, start) };
        if start == end {
            violations.push(Violation::Degenerate(phase));
        }
        entries.insert(phase, TimeInterval::new(start, end));
    }

    let mut prev_start: Option<f64> = None;
    for phase in PhaseLabel::ALL {
        if let Some(iv) = entries.get(&phase) {
            if let Some(prev) = prev_start {
                if iv.start_s < prev {
                    violations.push(Violation::OrderInversion(phase));
                }
            }
            prev_start = Some(iv.start_s);
        }
    }

    PhaseSegmentation {
        entries,
        duration_s,
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Overhead,
    Vehicle,
}

/// One camera stream of an event, referenced by URI; no pixel data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewStream {
    pub view_id: String,
    pub kind: ViewKind,
    pub video_uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_energy_uri: Option<String>,
    /// Alignment shift relative to the event timeline, in seconds.
    #[serde(default)]
    pub offset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    Pedestrian,
    Vehicle,
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perspective::Pedestrian => write!(f, "pedestrian"),
            Perspective::Vehicle => write!(f, "vehicle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub phase: PhaseLabel,
    pub perspective: Perspective,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaScope {
    VehicleView,
    OverheadView,
    Environment,
}

impl fmt::Display for QaScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QaScope::VehicleView => write!(f, "vehicle_view"),
            QaScope::OverheadView => write!(f, "overhead_view"),
            QaScope::Environment => write!(f, "environment"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
    C,
    D,
}

impl Choice {
    pub const ALL: [Choice; 4] = [Choice::A, Choice::B, Choice::C, Choice::D];

    pub fn letter(self) -> char {
        match self {
            Choice::A => 'a',
            Choice::B => 'b',
            Choice::C => 'c',
            Choice::D => 'd',
        }
    }

    pub fn from_letter(c: char) -> Option<Choice> {
        match c.to_ascii_lowercase() {
            'a' => Some(Choice::A),
            'b' => Some(Choice::B),
            'c' => Some(Choice::C),
            'd' => Some(Choice::D),
            _ => None,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A four-option multiple-choice question attached to an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub qa_id: String,
    pub scope: QaScope,
    /// Absent for Environment-scope questions, which span the whole event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseLabel>,
    pub question: String,
    /// Exactly four options, keyed a-d.
    pub options: BTreeMap<Choice, String>,
    /// Ground-truth answer, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Choice>,
}

/// A model's raw VQA response plus the extracted choice, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub qa_id: String,
    pub raw_text: String,
    pub extracted: Option<Choice>,
}

/// Ground-truth annotations bundled with an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub segmentation: PhaseSegmentation,
    pub captions: Vec<CaptionRecord>,
    pub qa: Vec<QAItem>,
}

/// One incident: duration, synchronized view streams, optional annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewEvent {
    pub event_id: String,
    pub duration_s: f64,
    pub views: Vec<ViewStream>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

impl MultiViewEvent {
    pub fn view(&self, view_id: &str) -> Option<&ViewStream> {
        self.views.iter().find(|v| v.view_id == view_id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("phase {0} absent from segmentation")]
    PhaseAbsent(PhaseLabel),
}

/// Cuts one phase out of every view of the event.
///
/// The phase interval is shifted by each view's `offset_s` into that view's
/// local timeline and re-clamped to `[0, duration_s]`.
pub fn phase_slice(
    event: &MultiViewEvent,
    seg: &PhaseSegmentation,
    phase: PhaseLabel,
) -> Result<Vec<(ViewStream, TimeInterval)>, ModelError> {
    let interval = seg
        .interval(phase)
        .ok_or(ModelError::PhaseAbsent(phase))?;
    Ok(event
        .views
        .iter()
        .map(|v| {
            let local = interval.shifted(v.offset_s).clamped(event.duration_s);
            (v.clone(), local)
        })
        .collect())
}

/// Per-phase captions and answers for one phase of one event (Stage 3 output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAnalysis {
    pub phase: PhaseLabel,
    pub captions: Vec<CaptionRecord>,
    pub answers: Vec<(QAItem, AnswerRecord)>,
    /// Per-item backend failures, keyed by a task label; the rest of the
    /// analysis is still usable.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub item_errors: Vec<String>,
}

/// The aggregated event information set handed to Stage 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventInfoSet {
    pub segmentation: PhaseSegmentation,
    pub captions: Vec<CaptionRecord>,
    pub answers: Vec<(QAItem, AnswerRecord)>,
}

/// Vocabulary for the behavior table's risk column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskLevel {
    Moderate,
    High,
    Critical,
    Impact,
}

impl RiskLevel {
    pub fn parse(s: &str) -> Option<RiskLevel> {
        match s {
            "Moderate" => Some(RiskLevel::Moderate),
            "High" => Some(RiskLevel::High),
            "Critical" => Some(RiskLevel::Critical),
            "Impact" => Some(RiskLevel::Impact),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTableRow {
    pub phase: PhaseLabel,
    pub time: String,
    pub pedestrian_state: String,
    pub vehicle_action: String,
    pub risk_level: RiskLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionDynamics {
    pub initial_separation: String,
    pub convergence_pattern: String,
    pub communication: String,
    pub mutual_awareness: String,
    pub critical_failure: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorAnalysis {
    pub phase_table: Vec<PhaseTableRow>,
    pub interaction_dynamics: InteractionDynamics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalLink {
    pub phase: PhaseLabel,
    pub factor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributingFactors {
    pub primary: Vec<String>,
    pub environmental: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDiagnosis {
    pub classification: String,
    pub severity: String,
    pub causal_chain: Vec<CausalLink>,
    pub contributing_factors: ContributingFactors,
}

/// Validated structured diagnosis (Stage 4 output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    pub scene_understanding: String,
    pub behavior_analysis: BehaviorAnalysis,
    pub event_diagnosis: EventDiagnosis,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub bleu: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqaScores {
    pub accuracy_pct: f64,
    pub valid_rate_pct: f64,
}

/// Per-phase mIoU, caption composite score, and VQA rates for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub per_phase_miou: BTreeMap<PhaseLabel, f64>,
    pub overall_miou: f64,
    pub caption: CaptionScores,
    pub vqa: BTreeMap<QaScope, VqaScores>,
}

impl EvaluationSummary {
    /// `overall_miou` is derived from the five per-phase values; construction
    /// asserts the mean identity so a summary can never carry an
    /// inconsistent overall.
    pub fn new(
        per_phase_miou: BTreeMap<PhaseLabel, f64>,
        caption: CaptionScores,
        vqa: BTreeMap<QaScope, VqaScores>,
    ) -> EvaluationSummary {
        assert_eq!(per_phase_miou.len(), PHASE_COUNT, "need all five phases");
        let overall = per_phase_miou.values().sum::<f64>() / PHASE_COUNT as f64;
        let mean_check: f64 = per_phase_miou.values().sum::<f64>() / PHASE_COUNT as f64;
        assert!((overall - mean_check).abs() <= 1e-12);
        EvaluationSummary {
            per_phase_miou,
            overall_miou: overall,
            caption,
            vqa,
        }
    }
}
