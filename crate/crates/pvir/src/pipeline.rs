//! End-to-end orchestration: for each event in the manifest, run the
//! sequential stages (optional sync, segment, analyze, synthesize) against
//! the configured backends and persist one artifact per stage. Failures
//! are isolated per event.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::config::{build_backend, ConfigError, RunConfig};
use crate::grounding::{segment_event, PhaseDefinitionSet};
use crate::ingest::{
    load_event, load_manifest, load_stage_output, persist_stage_output, IngestError, Stage,
};
use crate::metrics::{evaluate_run, EvalError, EventPredictions};
use crate::model::{EvaluationSummary, MultiViewEvent, PhaseAnalysis, PhaseLabel};
use crate::reasoning::analyze_phase;
use crate::sync::{estimate_offset, load_motion_energy, OffsetEstimate};
use crate::synthesis::{
    assemble_event_info, report_to_canonical_json, render_report_text, synthesize_report,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("run {0} has no persisted predictions")]
    EmptyRun(String),
}

/// What happened to one event during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub event_id: String,
    pub stages_completed: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub run_id: String,
    pub events: Vec<EventOutcome>,
}

impl PipelineSummary {
    pub fn failed_count(&self) -> usize {
        self.events.iter().filter(|e| e.error.is_some()).count()
    }
}

/// Per-view offset estimates persisted by the optional sync stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncOutcome {
    pub reference_view: String,
    pub offsets: BTreeMap<String, OffsetEstimate>,
}

struct StageBackends {
    grounding: Box<dyn Backend>,
    grounding_model: String,
    reasoning: Box<dyn Backend>,
    reasoning_model: String,
    synthesis: Box<dyn Backend>,
    synthesis_model: String,
}

fn sync_event(event: &MultiViewEvent, event_dir: &Path) -> Result<Option<SyncOutcome>, String> {
    if event.views.len() < 2 || event.views.iter().any(|v| v.motion_energy_uri.is_none()) {
        return Ok(None);
    }
    let resolve = |uri: &str| -> PathBuf {
        let path = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            event_dir.join(path)
        }
    };
    let reference = &event.views[0];
    let ref_signal = load_motion_energy(&resolve(reference.motion_energy_uri.as_ref().unwrap()))
        .map_err(|e| format!("sync/{}: {e}", reference.view_id))?;
    let max_lag_s = event.duration_s / 2.0;
    let mut offsets = BTreeMap::new();
    for view in &event.views[1..] {
        let signal = load_motion_energy(&resolve(view.motion_energy_uri.as_ref().unwrap()))
            .map_err(|e| format!("sync/{}: {e}", view.view_id))?;
        let estimate = estimate_offset(&ref_signal, &signal, max_lag_s)
            .map_err(|e| format!("sync/{}: {e}", view.view_id))?;
        offsets.insert(view.view_id.clone(), estimate);
    }
    Ok(Some(SyncOutcome { reference_view: reference.view_id.clone(), offsets }))
}

/// Routes ground-truth questions to phases: phase-scoped items go to their
/// phase, whole-event items to the earliest phase present so each is asked
/// exactly once.
fn questions_for_phase(
    event: &MultiViewEvent,
    phase: PhaseLabel,
    first_present: PhaseLabel,
) -> Vec<crate::model::QAItem> {
    let Some(gt) = &event.ground_truth else { return Vec::new() };
    gt.qa
        .iter()
        .filter(|item| match item.phase {
            Some(p) => p == phase,
            None => phase == first_present,
        })
        .cloned()
        .collect()
}

fn process_event(
    config: &RunConfig,
    backends: &StageBackends,
    run_id: &str,
    event_path: &Path,
    stop_after: Option<Stage>,
) -> EventOutcome {
    let event_id_fallback = event_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unknown")
        .to_string();
    let event = match load_event(event_path) {
        Ok(e) => e,
        Err(e) => {
            return EventOutcome {
                event_id: event_id_fallback,
                stages_completed: Vec::new(),
                error: Some(format!("ingest: {e}")),
            }
        }
    };
    let mut outcome = EventOutcome {
        event_id: event.event_id.clone(),
        stages_completed: Vec::new(),
        error: None,
    };
    let runs_root = &config.output_dir;
    let event_dir = event_path.parent().unwrap_or(Path::new("."));

    macro_rules! fail {
        ($msg:expr) => {{
            outcome.error = Some($msg);
            return outcome;
        }};
    }
    macro_rules! persist {
        ($stage:expr, $payload:expr) => {
            match persist_stage_output(runs_root, run_id, &event.event_id, $stage, &$payload) {
                Ok(_) => outcome.stages_completed.push($stage),
                Err(e) => fail!(format!("persist {}: {e}", $stage)),
            }
        };
    }

    // Optional Stage 1b: motion-energy synchronization, when sidecars exist.
    match sync_event(&event, event_dir) {
        Ok(Some(sync)) => {
            persist!(Stage::Sync, serde_json::to_value(&sync).expect("sync serializes"));
        }
        Ok(None) => {}
        Err(msg) => fail!(msg),
    }
    if stop_after == Some(Stage::Sync) {
        return outcome;
    }

    // Stage 2: phase segmentation.
    let defs = PhaseDefinitionSet::default();
    let seg_outcome =
        match segment_event(backends.grounding.as_ref(), &backends.grounding_model, &event, &defs) {
            Ok(o) => o,
            Err(e) => fail!(format!("segmentation: {e}")),
        };
    persist!(
        Stage::Segmentation,
        serde_json::to_value(&seg_outcome).expect("segmentation serializes")
    );
    if stop_after == Some(Stage::Segmentation) {
        write_predictions(runs_root, run_id, &event, &seg_outcome.segmentation, &[], &mut outcome);
        return outcome;
    }

    // Stage 3: per-phase reasoning over every phase the segmentation found.
    let phases: Vec<PhaseLabel> = seg_outcome.segmentation.entries.keys().copied().collect();
    let first_present = phases.first().copied();
    let mut analyses: Vec<PhaseAnalysis> = Vec::new();
    for phase in &phases {
        let questions = questions_for_phase(&event, *phase, first_present.unwrap());
        match analyze_phase(
            backends.reasoning.as_ref(),
            &backends.reasoning_model,
            &event,
            &seg_outcome.segmentation,
            *phase,
            &questions,
        ) {
            Ok(a) => analyses.push(a),
            Err(e) => fail!(format!("reasoning/{phase}: {e}")),
        }
    }
    persist!(Stage::Reasoning, serde_json::to_value(&analyses).expect("analyses serialize"));
    write_predictions(
        runs_root,
        run_id,
        &event,
        &seg_outcome.segmentation,
        &analyses,
        &mut outcome,
    );
    if outcome.error.is_some() || stop_after == Some(Stage::Reasoning) {
        return outcome;
    }

    // Stage 4: hierarchical synthesis.
    let info = match assemble_event_info(&seg_outcome.segmentation, &analyses) {
        Ok(i) => i,
        Err(e) => fail!(format!("synthesis: {e}")),
    };
    let synth = match synthesize_report(
        backends.synthesis.as_ref(),
        &backends.synthesis_model,
        &info,
        config.retry,
    ) {
        Ok(s) => s,
        Err(e) => fail!(format!("synthesis: {e}")),
    };
    persist!(Stage::Synthesis, serde_json::to_value(&synth).expect("synthesis serializes"));

    let dir = runs_root.join(run_id).join(&event.event_id);
    if let Err(e) = std::fs::write(dir.join("report.json"), report_to_canonical_json(&synth.report))
    {
        fail!(format!("persist report.json: {e}"));
    }
    if let Err(e) = std::fs::write(dir.join("report.txt"), render_report_text(&synth.report)) {
        fail!(format!("persist report.txt: {e}"));
    }
    outcome
}

/// Persists the evaluator's view of this event (segmentation + captions +
/// answers) so `evaluate` can run on artifacts alone.
fn write_predictions(
    runs_root: &Path,
    run_id: &str,
    event: &MultiViewEvent,
    segmentation: &crate::model::PhaseSegmentation,
    analyses: &[PhaseAnalysis],
    outcome: &mut EventOutcome,
) {
    let preds = EventPredictions {
        event_id: event.event_id.clone(),
        segmentation: Some(segmentation.clone()),
        captions: analyses.iter().flat_map(|a| a.captions.iter().cloned()).collect(),
        answers: analyses
            .iter()
            .flat_map(|a| a.answers.iter().map(|(_, ans)| ans.clone()))
            .collect(),
    };
    let dir = runs_root.join(run_id).join(&event.event_id);
    if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| {
        let mut body = serde_json::to_string_pretty(&preds).expect("predictions serialize");
        body.push('\n');
        std::fs::write(dir.join("predictions.json"), body)
    }) {
        outcome.error = Some(format!("persist predictions.json: {e}"));
    }
}

/// Runs the pipeline over every manifest event (optionally filtered by id),
/// with event-level parallelism up to `config.max_concurrency`. Output
/// order follows manifest order regardless of scheduling.
pub fn run_pipeline(
    config: &RunConfig,
    run_id: &str,
    event_filter: Option<&[String]>,
    stop_after: Option<Stage>,
) -> Result<PipelineSummary, PipelineError> {
    let manifest = load_manifest(&config.manifest)?;
    let backends = StageBackends {
        grounding: build_backend(&config.grounding)?,
        grounding_model: config.grounding.model_id.clone(),
        reasoning: build_backend(&config.reasoning)?,
        reasoning_model: config.reasoning.model_id.clone(),
        synthesis: build_backend(&config.synthesis)?,
        synthesis_model: config.synthesis.model_id.clone(),
    };

    let event_paths: Vec<PathBuf> = match event_filter {
        None => manifest.events.clone(),
        Some(ids) => manifest
            .events
            .iter()
            .filter(|p| {
                p.file_stem()
                    .and_then(|s| s.to_str())
                    .map(|stem| ids.iter().any(|id| id == stem))
                    .unwrap_or(false)
                    || load_event(p).map(|e| ids.contains(&e.event_id)).unwrap_or(false)
            })
            .cloned()
            .collect(),
    };

    let results: Mutex<Vec<Option<EventOutcome>>> = Mutex::new(vec![None; event_paths.len()]);
    let next = AtomicUsize::new(0);
    let workers = config.max_concurrency.min(event_paths.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= event_paths.len() {
                    break;
                }
                let outcome =
                    process_event(config, &backends, run_id, &event_paths[i], stop_after);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let events: Vec<EventOutcome> =
        results.into_inner().unwrap().into_iter().map(|o| o.expect("worker filled slot")).collect();
    Ok(PipelineSummary { run_id: run_id.to_string(), events })
}

/// Scores a persisted run against the manifest's ground truth, equivalent
/// to calling `evaluate_run` on the in-process predictions.
pub fn evaluate_persisted_run(
    config: &RunConfig,
    run_id: &str,
) -> Result<EvaluationSummary, PipelineError> {
    let manifest = load_manifest(&config.manifest)?;
    let mut events = Vec::new();
    let mut preds = Vec::new();
    for path in &manifest.events {
        let event = load_event(path)?;
        let pred_path =
            config.output_dir.join(run_id).join(&event.event_id).join("predictions.json");
        if pred_path.is_file() {
            let text = std::fs::read_to_string(&pred_path)
                .map_err(|e| IngestError::Io { path: pred_path.clone(), source: e })?;
            let p: EventPredictions = serde_json::from_str(&text).map_err(|e| {
                IngestError::Parse { path: pred_path.clone(), reason: e.to_string() }
            })?;
            preds.push(p);
        }
        events.push(event);
    }
    if preds.is_empty() {
        return Err(PipelineError::EmptyRun(run_id.to_string()));
    }
    Ok(evaluate_run(&preds, &events)?)
}

/// Reads back one stage artifact for debugging/validation.
pub fn load_artifact(
    config: &RunConfig,
    run_id: &str,
    event_id: &str,
    stage: Stage,
) -> Result<Option<serde_json::Value>, PipelineError> {
    Ok(load_stage_output(&config.output_dir, run_id, event_id, stage)?)
}
