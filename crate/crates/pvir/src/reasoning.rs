//! Stage 3: per-phase multi-view dense captioning and VQA, with
//! answer-choice extraction from free-form responses.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, GenerateRequest, GenerationParams, MediaRef};
use crate::model::{
    phase_slice, AnswerRecord, CaptionRecord, Choice, ModelError, MultiViewEvent, Perspective,
    PhaseAnalysis, PhaseLabel, PhaseSegmentation, QAItem, QaScope, TimeInterval, ViewKind,
    ViewStream,
};

pub const CAPTION_PROMPT_PEDESTRIAN: &str =
    "Could you describe this video with caption for pedestrian?";
pub const CAPTION_PROMPT_VEHICLE: &str =
    "Could you describe this video with caption for vehicle?";
pub const ANSWER_DIRECTIVE: &str = "Please output your final answer after `answer_choice': .";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReasoningTask {
    Caption(Perspective),
    Vqa(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPrompt {
    pub text: String,
    pub media: Vec<MediaRef>,
    pub task: ReasoningTask,
}

fn media_from_clips(clips: &[(ViewStream, TimeInterval)]) -> Vec<MediaRef> {
    clips
        .iter()
        .map(|(view, iv)| MediaRef::new(view.video_uri.clone(), iv.start_s, iv.end_s))
        .collect()
}

/// Builds a dense-captioning prompt for one phase's clip set. All clips for
/// the phase travel in a single request, in view order.
pub fn build_caption_prompt(
    clips: &[(ViewStream, TimeInterval)],
    perspective: Perspective,
) -> ReasoningPrompt {
    let text = match perspective {
        Perspective::Pedestrian => CAPTION_PROMPT_PEDESTRIAN,
        Perspective::Vehicle => CAPTION_PROMPT_VEHICLE,
    };
    ReasoningPrompt {
        text: text.to_string(),
        media: media_from_clips(clips),
        task: ReasoningTask::Caption(perspective),
    }
}

/// Builds a multiple-choice VQA prompt: question, options a-d on separate
/// lines, then the mandated answer directive.
pub fn build_vqa_prompt(qa: &QAItem, clips: &[(ViewStream, TimeInterval)]) -> ReasoningPrompt {
    debug_assert_eq!(qa.options.len(), 4);
    let mut text = qa.question.clone();
    text.push('\n');
    for choice in Choice::ALL {
        if let Some(option) = qa.options.get(&choice) {
            text.push_str(&format!("{}) {}\n", choice.letter(), option));
        }
    }
    text.push_str(ANSWER_DIRECTIVE);
    ReasoningPrompt {
        text,
        media: media_from_clips(clips),
        task: ReasoningTask::Vqa(qa.qa_id.clone()),
    }
}

fn directive_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer_choice\s*['`\x22]?\s*[:\-]\s*['`\x22]?\s*([a-d])\b").unwrap())
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\banswer\s*['`\x22]?\s*[:\-]\s*['`\x22]?\s*\(?([a-d])\b").unwrap())
}

fn choice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bchoice\s*['`\x22]?\s*[:\-]\s*['`\x22]?\s*\(?([a-d])\b").unwrap())
}

fn standalone_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // A line that is nothing but one choice letter, with optional
    // bracket/punctuation dressing. Deliberately narrow: a bare "a" inside
    // prose is almost always the article, not an answer.
    RE.get_or_init(|| Regex::new(r"(?im)^\s*[\(\[]?([a-d])[\)\]\.:]?\s*$").unwrap())
}

/// Extracts a choice letter from a free-form VQA response.
///
/// Case-insensitive pattern cascade, first match wins:
/// 1. `answer_choice: X`  2. `answer: X`  3. `choice: X`
/// 4. a standalone letter line.
pub fn extract_answer_choice(raw_text: &str) -> Option<Choice> {
    for re in [directive_re(), answer_re(), choice_re(), standalone_re()] {
        if let Some(caps) = re.captures(raw_text) {
            return Choice::from_letter(caps[1].chars().next().unwrap());
        }
    }
    None
}

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error(transparent)]
    PhaseAbsent(#[from] ModelError),
}

fn generate_text(
    backend: &dyn Backend,
    model_id: &str,
    prompt: &ReasoningPrompt,
) -> Result<String, crate::backend::BackendError> {
    let request = GenerateRequest {
        model_id: model_id.to_string(),
        prompt_text: prompt.text.clone(),
        media: prompt.media.clone(),
        params: GenerationParams::default(),
    };
    backend.generate(&request).map(|r| r.text)
}

/// Runs both captioning perspectives plus every phase-scoped question for
/// one phase. Backend failures on individual items are isolated into
/// `item_errors`; the rest of the analysis is still returned.
///
/// Environment-scope questions attach full-event clips; view-scoped
/// questions attach only the matching view's phase clip.
pub fn analyze_phase(
    backend: &dyn Backend,
    model_id: &str,
    event: &MultiViewEvent,
    seg: &PhaseSegmentation,
    phase: PhaseLabel,
    questions: &[QAItem],
) -> Result<PhaseAnalysis, ReasoningError> {
    let clips = phase_slice(event, seg, phase)?;

    let mut captions = Vec::new();
    let mut answers = Vec::new();
    let mut item_errors = Vec::new();

    for perspective in [Perspective::Pedestrian, Perspective::Vehicle] {
        let prompt = build_caption_prompt(&clips, perspective);
        match generate_text(backend, model_id, &prompt) {
            Ok(text) => captions.push(CaptionRecord { phase, perspective, text }),
            Err(e) => item_errors.push(format!("caption/{perspective}: {e}")),
        }
    }

    for qa in questions {
        let qa_clips = clips_for_question(event, &clips, qa);
        let prompt = build_vqa_prompt(qa, &qa_clips);
        match generate_text(backend, model_id, &prompt) {
            Ok(text) => {
                let extracted = extract_answer_choice(&text);
                answers.push((
                    qa.clone(),
                    AnswerRecord { qa_id: qa.qa_id.clone(), raw_text: text, extracted },
                ));
            }
            Err(e) => item_errors.push(format!("vqa/{}: {e}", qa.qa_id)),
        }
    }

    Ok(PhaseAnalysis { phase, captions, answers, item_errors })
}

/// Selects the clip set a question sees: full-event clips for Environment
/// scope, the matching view kind's phase clips otherwise.
pub fn clips_for_question(
    event: &MultiViewEvent,
    phase_clips: &[(ViewStream, TimeInterval)],
    qa: &QAItem,
) -> Vec<(ViewStream, TimeInterval)> {
    match qa.scope {
        QaScope::Environment => event
            .views
            .iter()
            .map(|v| (v.clone(), TimeInterval::new(0.0, event.duration_s)))
            .collect(),
        QaScope::VehicleView => phase_clips
            .iter()
            .filter(|(v, _)| v.kind == ViewKind::Vehicle)
            .cloned()
            .collect(),
        QaScope::OverheadView => phase_clips
            .iter()
            .filter(|(v, _)| v.kind == ViewKind::Overhead)
            .cloned()
            .collect(),
    }
}
