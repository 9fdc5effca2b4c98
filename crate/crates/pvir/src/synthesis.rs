//! Stage 4: hierarchical synthesis. Assembles the event information set,
//! builds the three-part expert prompt, and drives the backend until it
//! returns a schema-valid incident report (or retries are exhausted).

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerateRequest, GenerationParams};
use crate::model::{
    BehaviorAnalysis, CausalLink, ContributingFactors, EventDiagnosis, EventInfoSet,
    IncidentReport, InteractionDynamics, Perspective, PhaseAnalysis, PhaseLabel, PhaseSegmentation,
    PhaseTableRow, QaScope, RiskLevel,
};

pub const VIOLATION_FEEDBACK_HEADER: &str =
    "Your previous response violated the required schema. Fix the following and output the full corrected JSON:";

/// The three-part prompt (plus the embedded output schema) handed to the
/// reasoning engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPrompt {
    pub role_text: String,
    pub input_block: String,
    pub instruction_block: String,
    pub output_schema_text: String,
}

impl SynthesisPrompt {
    pub fn full_text(&self) -> String {
        format!(
            "{}\n\n{}\n\n{}\n\n{}",
            self.role_text, self.input_block, self.instruction_block, self.output_schema_text
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy { max_attempts: 3 }
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("analysis references phase {0} absent from the segmentation")]
    UnknownPhase(PhaseLabel),
    #[error("event information set is empty")]
    EmptyInfo,
    #[error("retry policy requires max_attempts >= 1")]
    InvalidPolicy,
    #[error("report schema violations: {0:?}")]
    SchemaViolations(Vec<String>),
    #[error("no valid report after {attempts} attempts; last violations: {last:?}")]
    ExhaustedRetries { attempts: usize, last: Vec<String> },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Flattens per-phase analyses into the Stage-4 information set, ordered
/// chronologically by phase index with per-view provenance intact.
pub fn assemble_event_info(
    seg: &PhaseSegmentation,
    analyses: &[PhaseAnalysis],
) -> Result<EventInfoSet, SynthesisError> {
    for a in analyses {
        if seg.interval(a.phase).is_none() {
            return Err(SynthesisError::UnknownPhase(a.phase));
        }
    }
    let mut ordered: Vec<&PhaseAnalysis> = analyses.iter().collect();
    ordered.sort_by_key(|a| a.phase.index());
    let mut captions = Vec::new();
    let mut answers = Vec::new();
    for a in ordered {
        captions.extend(a.captions.iter().cloned());
        answers.extend(a.answers.iter().cloned());
    }
    Ok(EventInfoSet { segmentation: seg.clone(), captions, answers })
}

fn scope_label(scope: QaScope) -> &'static str {
    match scope {
        QaScope::VehicleView => "egocentric (vehicle view)",
        QaScope::OverheadView => "exocentric (overhead view)",
        QaScope::Environment => "environment (all views)",
    }
}

fn perspective_label(p: Perspective) -> &'static str {
    match p {
        Perspective::Pedestrian => "pedestrian perspective",
        Perspective::Vehicle => "vehicle perspective",
    }
}

fn report_schema_skeleton() -> &'static str {
    r#"{
  "scene_understanding": "<high-level description of environment, infrastructure, and conditions>",
  "behavior_analysis": {
    "phase_table": [
      {
        "phase": <phase index 0-4>,
        "time": "<start-end in seconds>",
        "pedestrian_state": "<state>",
        "vehicle_action": "<action>",
        "risk_level": "<Moderate|High|Critical|Impact>"
      }
    ],
    "interaction_dynamics": {
      "initial_separation": "<text>",
      "convergence_pattern": "<text>",
      "communication": "<text>",
      "mutual_awareness": "<text>",
      "critical_failure": "<text>"
    }
  },
  "event_diagnosis": {
    "classification": "<incident type>",
    "severity": "<severity assessment>",
    "causal_chain": [
      { "phase": <phase index 0-4, ascending>, "factor": "<causal factor>" }
    ],
    "contributing_factors": {
      "primary": ["<factor>"],
      "environmental": ["<factor>"]
    }
  },
  "summary": "<incident reasoning summary with prevention strategies>"
}"#
}

/// Builds the deterministic three-part prompt: role conditioning, the
/// formatted information set, and the ordered task instructions, with the
/// output schema appended.
pub fn build_synthesis_prompt(info: &EventInfoSet) -> Result<SynthesisPrompt, SynthesisError> {
    if info.segmentation.entries.is_empty() && info.captions.is_empty() && info.answers.is_empty() {
        return Err(SynthesisError::EmptyInfo);
    }

    let role_text = "You are a domain expert in pedestrian-vehicle interaction analysis. \
You reason about incidents as a sequence of behavioral phases grounded in the \
Perception-Reaction Time paradigm, integrating evidence from egocentric (vehicle view) \
and exocentric (overhead view) perspectives to infer causality and recommend prevention \
strategies."
        .to_string();

    let mut input = String::from("## Event information set\n\n");
    input.push_str(
        "Phase mapping: 0=prerecognition, 1=recognition, 2=judgment, 3=action, 4=avoidance. \
View mapping: vehicle view = egocentric, overhead view = exocentric.\n\n",
    );
    input.push_str("### Phase timeline\n");
    for phase in PhaseLabel::ALL {
        match info.segmentation.interval(phase) {
            Some(iv) => input.push_str(&format!(
                "- phase {} ({}): {} s to {} s\n",
                phase.index(),
                phase.name(),
                iv.start_s,
                iv.end_s
            )),
            None => input.push_str(&format!(
                "- phase {} ({}): not identified in this event\n",
                phase.index(),
                phase.name()
            )),
        }
    }
    input.push_str("\n### Phase captions\n");
    if info.captions.is_empty() {
        input.push_str("(none)\n");
    }
    for c in &info.captions {
        input.push_str(&format!(
            "- phase {} ({}), {}: {}\n",
            c.phase.index(),
            c.phase.name(),
            perspective_label(c.perspective),
            c.text
        ));
    }
    input.push_str("\n### Question-answer pairs\n");
    if info.answers.is_empty() {
        input.push_str("(none)\n");
    }
    for (item, answer) in &info.answers {
        let phase_note = match item.phase {
            Some(p) => format!("phase {} ({})", p.index(), p.name()),
            None => "whole event".to_string(),
        };
        let extracted = match answer.extracted {
            Some(c) => {
                let text = item.options.get(&c).map(String::as_str).unwrap_or("");
                format!("{}) {}", c.letter(), text)
            }
            None => "(no valid choice extracted)".to_string(),
        };
        input.push_str(&format!(
            "- [{}] {} — Q: {} A: {}\n",
            scope_label(item.scope),
            phase_note,
            item.question,
            extracted
        ));
    }

    let instruction_block = "## Tasks\n\n\
Work through the following steps in order:\n\
1. Scene comprehension: describe the environment, infrastructure, and conditions.\n\
2. Behavior interpretation: analyze pedestrian and vehicle behavior phase by phase, \
across both viewpoints, and characterize the interaction dynamics.\n\
3. Causal inference: reconstruct the causal chain across phases and identify primary \
and environmental contributing factors.\n\
4. Diagnostic synthesis: classify the incident, assess severity, and formulate \
prevention strategies in a closing summary.\n\
Respond with a single JSON object exactly matching the schema below."
        .to_string();

    let output_schema_text = format!("## Output schema\n\n{}", report_schema_skeleton());

    Ok(SynthesisPrompt { role_text, input_block: input, instruction_block, output_schema_text })
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(end) = rest.rfind("```") {
            return rest[..end].trim();
        }
    }
    trimmed
}

fn str_field(obj: &Value, path: &str, key: &str, violations: &mut Vec<String>) -> String {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::String(_)) => {
            violations.push(format!("{path}.{key}: must be a non-empty string"));
            String::new()
        }
        Some(_) => {
            violations.push(format!("{path}.{key}: must be a string"));
            String::new()
        }
        None => {
            violations.push(format!("{path}.{key}: missing"));
            String::new()
        }
    }
}

fn string_array(obj: &Value, path: &str, key: &str, violations: &mut Vec<String>) -> Vec<String> {
    match obj.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .filter_map(|(i, v)| match v {
                Value::String(s) => Some(s.clone()),
                _ => {
                    violations.push(format!("{path}.{key}[{i}]: must be a string"));
                    None
                }
            })
            .collect(),
        Some(_) => {
            violations.push(format!("{path}.{key}: must be an array of strings"));
            Vec::new()
        }
        None => {
            violations.push(format!("{path}.{key}: missing"));
            Vec::new()
        }
    }
}

/// Accepts a phase as a JSON number or a numeric string ("0" .. "4").
fn parse_phase(v: &Value, path: &str, violations: &mut Vec<String>) -> Option<PhaseLabel> {
    let idx = match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse::<u64>().ok(),
        _ => None,
    };
    match idx.and_then(|i| u8::try_from(i).ok()).and_then(PhaseLabel::from_index) {
        Some(p) => Some(p),
        None => {
            violations.push(format!("{path}: phase must be an index 0-4"));
            None
        }
    }
}

/// Parses and validates a backend response into an `IncidentReport`,
/// tolerating a fenced code block wrapper. All violations are collected —
/// not just the first — so retry feedback is maximally useful.
pub fn validate_report(text: &str) -> Result<IncidentReport, SynthesisError> {
    let body = strip_code_fence(text);
    let root: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => {
            return Err(SynthesisError::SchemaViolations(vec![format!(
                "$: not valid JSON ({e})"
            )]))
        }
    };
    if !root.is_object() {
        return Err(SynthesisError::SchemaViolations(vec![
            "$: top level must be a JSON object".to_string(),
        ]));
    }

    let mut violations = Vec::new();

    let scene_understanding = str_field(&root, "$", "scene_understanding", &mut violations);
    let summary = str_field(&root, "$", "summary", &mut violations);

    let behavior_analysis = match root.get("behavior_analysis") {
        Some(ba) if ba.is_object() => {
            let phase_table = match ba.get("phase_table") {
                Some(Value::Array(rows)) => rows
                    .iter()
                    .enumerate()
                    .filter_map(|(i, row)| {
                        let path = format!("behavior_analysis.phase_table[{i}]");
                        if !row.is_object() {
                            violations.push(format!("{path}: must be an object"));
                            return None;
                        }
                        let phase = row
                            .get("phase")
                            .map(|v| parse_phase(v, &format!("{path}.phase"), &mut violations))
                            .unwrap_or_else(|| {
                                violations.push(format!("{path}.phase: missing"));
                                None
                            });
                        let time = str_field(row, &path, "time", &mut violations);
                        let pedestrian_state =
                            str_field(row, &path, "pedestrian_state", &mut violations);
                        let vehicle_action =
                            str_field(row, &path, "vehicle_action", &mut violations);
                        let risk_raw = str_field(row, &path, "risk_level", &mut violations);
                        let risk_level = RiskLevel::parse(&risk_raw).or_else(|| {
                            if !risk_raw.is_empty() {
                                violations.push(format!(
                                    "{path}.risk_level: must be one of Moderate, High, Critical, Impact"
                                ));
                            }
                            None
                        });
                        Some(PhaseTableRow {
                            phase: phase?,
                            time,
                            pedestrian_state,
                            vehicle_action,
                            risk_level: risk_level?,
                        })
                    })
                    .collect(),
                Some(_) => {
                    violations.push("behavior_analysis.phase_table: must be an array".to_string());
                    Vec::new()
                }
                None => {
                    violations.push("behavior_analysis.phase_table: missing".to_string());
                    Vec::new()
                }
            };
            let interaction_dynamics = match ba.get("interaction_dynamics") {
                Some(id) if id.is_object() => {
                    let path = "behavior_analysis.interaction_dynamics";
                    InteractionDynamics {
                        initial_separation: str_field(id, path, "initial_separation", &mut violations),
                        convergence_pattern: str_field(id, path, "convergence_pattern", &mut violations),
                        communication: str_field(id, path, "communication", &mut violations),
                        mutual_awareness: str_field(id, path, "mutual_awareness", &mut violations),
                        critical_failure: str_field(id, path, "critical_failure", &mut violations),
                    }
                }
                Some(_) => {
                    violations
                        .push("behavior_analysis.interaction_dynamics: must be an object".to_string());
                    InteractionDynamics::placeholder()
                }
                None => {
                    violations.push("behavior_analysis.interaction_dynamics: missing".to_string());
                    InteractionDynamics::placeholder()
                }
            };
            BehaviorAnalysis { phase_table, interaction_dynamics }
        }
        Some(_) => {
            violations.push("behavior_analysis: must be an object".to_string());
            BehaviorAnalysis { phase_table: Vec::new(), interaction_dynamics: InteractionDynamics::placeholder() }
        }
        None => {
            violations.push("behavior_analysis: missing".to_string());
            BehaviorAnalysis { phase_table: Vec::new(), interaction_dynamics: InteractionDynamics::placeholder() }
        }
    };

    let event_diagnosis = match root.get("event_diagnosis") {
        Some(ed) if ed.is_object() => {
            let classification = str_field(ed, "event_diagnosis", "classification", &mut violations);
            let severity = str_field(ed, "event_diagnosis", "severity", &mut violations);
            let causal_chain: Vec<CausalLink> = match ed.get("causal_chain") {
                Some(Value::Array(links)) => links
                    .iter()
                    .enumerate()
                    .filter_map(|(i, link)| {
                        let path = format!("event_diagnosis.causal_chain[{i}]");
                        if !link.is_object() {
                            violations.push(format!("{path}: must be an object"));
                            return None;
                        }
                        let phase = link
                            .get("phase")
                            .map(|v| parse_phase(v, &format!("{path}.phase"), &mut violations))
                            .unwrap_or_else(|| {
                                violations.push(format!("{path}.phase: missing"));
                                None
                            })?;
                        let factor = str_field(link, &path, "factor", &mut violations);
                        Some(CausalLink { phase, factor })
                    })
                    .collect(),
                Some(_) => {
                    violations.push("event_diagnosis.causal_chain: must be an array".to_string());
                    Vec::new()
                }
                None => {
                    violations.push("event_diagnosis.causal_chain: missing".to_string());
                    Vec::new()
                }
            };
            if causal_chain.windows(2).any(|w| w[1].phase.index() <= w[0].phase.index()) {
                violations.push(
                    "event_diagnosis.causal_chain: phases must be in ascending order".to_string(),
                );
            }
            let contributing_factors = match ed.get("contributing_factors") {
                Some(cf) if cf.is_object() => ContributingFactors {
                    primary: string_array(cf, "event_diagnosis.contributing_factors", "primary", &mut violations),
                    environmental: string_array(
                        cf,
                        "event_diagnosis.contributing_factors",
                        "environmental",
                        &mut violations,
                    ),
                },
                Some(_) => {
                    violations.push(
                        "event_diagnosis.contributing_factors: must be an object".to_string(),
                    );
                    ContributingFactors { primary: Vec::new(), environmental: Vec::new() }
                }
                None => {
                    violations.push("event_diagnosis.contributing_factors: missing".to_string());
                    ContributingFactors { primary: Vec::new(), environmental: Vec::new() }
                }
            };
            EventDiagnosis { classification, severity, causal_chain, contributing_factors }
        }
        Some(_) => {
            violations.push("event_diagnosis: must be an object".to_string());
            EventDiagnosis::placeholder()
        }
        None => {
            violations.push("event_diagnosis: missing".to_string());
            EventDiagnosis::placeholder()
        }
    };

    if violations.is_empty() {
        Ok(IncidentReport { scene_understanding, behavior_analysis, event_diagnosis, summary })
    } else {
        Err(SynthesisError::SchemaViolations(violations))
    }
}

impl InteractionDynamics {
    fn placeholder() -> InteractionDynamics {
        InteractionDynamics {
            initial_separation: String::new(),
            convergence_pattern: String::new(),
            communication: String::new(),
            mutual_awareness: String::new(),
            critical_failure: String::new(),
        }
    }
}

impl EventDiagnosis {
    fn placeholder() -> EventDiagnosis {
        EventDiagnosis {
            classification: String::new(),
            severity: String::new(),
            causal_chain: Vec::new(),
            contributing_factors: ContributingFactors { primary: Vec::new(), environmental: Vec::new() },
        }
    }
}

/// One backend round of the retry loop, persisted alongside the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisAttempt {
    pub request_fingerprint: String,
    pub raw_response: String,
    /// Empty on the accepted attempt.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub report: IncidentReport,
    pub attempts: Vec<SynthesisAttempt>,
}

fn feedback_block(violations: &[String]) -> String {
    let mut block = format!("\n\n{VIOLATION_FEEDBACK_HEADER}\n");
    for (i, v) in violations.iter().enumerate() {
        block.push_str(&format!("{}. {}\n", i + 1, v));
    }
    block
}

/// Runs the prompt → generate → validate loop, appending each failed
/// attempt's violations to the next prompt, up to `policy.max_attempts`
/// backend calls.
pub fn synthesize_report(
    backend: &dyn Backend,
    model_id: &str,
    info: &EventInfoSet,
    policy: RetryPolicy,
) -> Result<SynthesisOutcome, SynthesisError> {
    if policy.max_attempts == 0 {
        return Err(SynthesisError::InvalidPolicy);
    }
    let base = build_synthesis_prompt(info)?;
    let mut prompt_text = base.full_text();
    let mut attempts = Vec::new();
    let mut last_violations = Vec::new();

    for _ in 0..policy.max_attempts {
        let request = GenerateRequest {
            model_id: model_id.to_string(),
            prompt_text: prompt_text.clone(),
            media: Vec::new(),
            params: GenerationParams::default(),
        };
        let fingerprint = request.fingerprint();
        let response = backend.generate(&request)?;
        match validate_report(&response.text) {
            Ok(report) => {
                attempts.push(SynthesisAttempt {
                    request_fingerprint: fingerprint,
                    raw_response: response.text,
                    violations: Vec::new(),
                });
                return Ok(SynthesisOutcome { report, attempts });
            }
            Err(SynthesisError::SchemaViolations(violations)) => {
                attempts.push(SynthesisAttempt {
                    request_fingerprint: fingerprint,
                    raw_response: response.text,
                    violations: violations.clone(),
                });
                prompt_text.push_str(&feedback_block(&violations));
                last_violations = violations;
            }
            Err(other) => return Err(other),
        }
    }
    Err(SynthesisError::ExhaustedRetries { attempts: policy.max_attempts, last: last_violations })
}

/// Canonical serialization: sorted keys, two-space indent, trailing newline.
pub fn report_to_canonical_json(report: &IncidentReport) -> String {
    // serde_json's Value object is a BTreeMap, so converting through Value
    // sorts keys.
    let value = serde_json::to_value(report).expect("report serializes");
    let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
    out.push('\n');
    out
}

/// A plain-text rendering of the report for human consumption.
pub fn render_report_text(report: &IncidentReport) -> String {
    let mut out = String::new();
    out.push_str("SCENE UNDERSTANDING\n");
    out.push_str(&format!("  {}\n\n", report.scene_understanding));
    out.push_str("BEHAVIOR ANALYSIS\n");
    for row in &report.behavior_analysis.phase_table {
        out.push_str(&format!(
            "  {} [{}] pedestrian: {} | vehicle: {} | risk: {:?}\n",
            row.phase.name(),
            row.time,
            row.pedestrian_state,
            row.vehicle_action,
            row.risk_level
        ));
    }
    let id = &report.behavior_analysis.interaction_dynamics;
    out.push_str(&format!("  initial separation: {}\n", id.initial_separation));
    out.push_str(&format!("  convergence pattern: {}\n", id.convergence_pattern));
    out.push_str(&format!("  communication: {}\n", id.communication));
    out.push_str(&format!("  mutual awareness: {}\n", id.mutual_awareness));
    out.push_str(&format!("  critical failure: {}\n\n", id.critical_failure));
    out.push_str("EVENT DIAGNOSIS\n");
    out.push_str(&format!("  classification: {}\n", report.event_diagnosis.classification));
    out.push_str(&format!("  severity: {}\n", report.event_diagnosis.severity));
    out.push_str("  causal chain:\n");
    for link in &report.event_diagnosis.causal_chain {
        out.push_str(&format!("    phase {}: {}\n", link.phase.index(), link.factor));
    }
    out.push_str("  primary factors:\n");
    for f in &report.event_diagnosis.contributing_factors.primary {
        out.push_str(&format!("    - {f}\n"));
    }
    out.push_str("  environmental factors:\n");
    for f in &report.event_diagnosis.contributing_factors.environmental {
        out.push_str(&format!("    - {f}\n"));
    }
    out.push_str("\nSUMMARY\n");
    out.push_str(&format!("  {}\n", report.summary));
    out
}
