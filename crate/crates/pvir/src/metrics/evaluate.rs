//! Run-level evaluation: pairs predictions with annotated events and
//! aggregates the temporal, caption, and VQA metrics into one summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AnswerRecord, CaptionRecord, CaptionScores, EvaluationSummary, MultiViewEvent,
    PhaseSegmentation, QaScope, VqaScores,
};

use super::caption::{bleu, caption_score, cider, meteor, rouge_l, CiderCorpus, BLEU_MAX_N};
use super::temporal::phase_miou;
use super::text::tokenize;
use super::vqa::vqa_scores;
use super::MetricError;

/// Everything a pipeline run produced for one event, as far as the
/// evaluator cares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPredictions {
    pub event_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<PhaseSegmentation>,
    #[serde(default)]
    pub captions: Vec<CaptionRecord>,
    #[serde(default)]
    pub answers: Vec<AnswerRecord>,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground truth for event {0}")]
    MissingGroundTruth(String),
    #[error("no event matches prediction {0}")]
    UnknownEvent(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Scores a run against annotated events.
///
/// Events are matched by id; every prediction must reference an annotated
/// event. A missing predicted segmentation scores zero IoU everywhere; a
/// ground-truth caption with no predicted counterpart scores as an empty
/// candidate; an unanswered question counts as invalid and incorrect.
/// Sentence-level BLEU/ROUGE-L/METEOR are averaged over caption pairs while
/// CIDEr is computed corpus-wide, so the composite matches per-run
/// reporting.
pub fn evaluate_run(
    preds: &[EventPredictions],
    events: &[MultiViewEvent],
) -> Result<EvaluationSummary, EvalError> {
    if preds.is_empty() {
        return Err(MetricError::EmptyCorpus.into());
    }

    let mut seg_preds = Vec::new();
    let mut seg_gts = Vec::new();
    let mut caption_pairs: Vec<(crate::metrics::TokenSequence, crate::metrics::TokenSequence)> =
        Vec::new();
    let mut qa_pairs_by_scope: BTreeMap<QaScope, Vec<_>> = BTreeMap::new();

    for pred in preds {
        let event = events
            .iter()
            .find(|e| e.event_id == pred.event_id)
            .ok_or_else(|| EvalError::UnknownEvent(pred.event_id.clone()))?;
        let gt = event
            .ground_truth
            .as_ref()
            .ok_or_else(|| EvalError::MissingGroundTruth(pred.event_id.clone()))?;

        seg_gts.push(gt.segmentation.clone());
        seg_preds.push(pred.segmentation.clone().unwrap_or_else(|| {
            crate::model::validate_segmentation(&Default::default(), event.duration_s)
        }));

        for gt_caption in &gt.captions {
            let candidate = pred
                .captions
                .iter()
                .find(|c| c.phase == gt_caption.phase && c.perspective == gt_caption.perspective)
                .map(|c| c.text.as_str())
                .unwrap_or("");
            caption_pairs.push((tokenize(candidate), tokenize(&gt_caption.text)));
        }

        for item in &gt.qa {
            let answer = pred
                .answers
                .iter()
                .find(|a| a.qa_id == item.qa_id)
                .cloned()
                .unwrap_or(AnswerRecord {
                    qa_id: item.qa_id.clone(),
                    raw_text: String::new(),
                    extracted: None,
                });
            qa_pairs_by_scope
                .entry(item.scope)
                .or_default()
                .push((item.clone(), answer));
        }
    }

    let (per_phase_miou, _) = phase_miou(&seg_preds, &seg_gts)?;

    let caption = if caption_pairs.is_empty() {
        CaptionScores { bleu: 0.0, meteor: 0.0, rouge_l: 0.0, cider: 0.0, score: 0.0 }
    } else {
        let n = caption_pairs.len() as f64;
        let mean = |f: &dyn Fn(&_, &_) -> f64| {
            caption_pairs.iter().map(|(c, r)| f(c, r)).sum::<f64>() / n
        };
        let b = mean(&|c, r| bleu(c, r, BLEU_MAX_N));
        let rl = mean(&|c, r| rouge_l(c, r, 1.0));
        let m = mean(&meteor);
        let corpus = CiderCorpus::new(
            caption_pairs
                .iter()
                .map(|(c, r)| (c.clone(), vec![r.clone()]))
                .collect(),
        )?;
        let c = cider(&corpus, BLEU_MAX_N).iter().sum::<f64>() / n;
        CaptionScores { bleu: b, meteor: m, rouge_l: rl, cider: c, score: caption_score(b, rl, m, c) }
    };

    let mut vqa: BTreeMap<QaScope, VqaScores> = BTreeMap::new();
    for (scope, pairs) in &qa_pairs_by_scope {
        vqa.insert(*scope, vqa_scores(pairs)?);
    }

    Ok(EvaluationSummary::new(per_phase_miou, caption, vqa))
}

/// A fixed-width plain-text rendering of a summary, stable across runs.
pub fn render_text_table(summary: &EvaluationSummary) -> String {
    let mut out = String::new();
    out.push_str("phase mIoU\n");
    for (phase, v) in &summary.per_phase_miou {
        out.push_str(&format!("  {:<16} {:.4}\n", phase.name(), v));
    }
    out.push_str(&format!("  {:<16} {:.4}\n", "overall", summary.overall_miou));
    out.push_str("captions\n");
    let c = &summary.caption;
    out.push_str(&format!("  {:<16} {:.4}\n", "BLEU-4", c.bleu));
    out.push_str(&format!("  {:<16} {:.4}\n", "METEOR", c.meteor));
    out.push_str(&format!("  {:<16} {:.4}\n", "ROUGE-L", c.rouge_l));
    out.push_str(&format!("  {:<16} {:.4}\n", "CIDEr", c.cider));
    out.push_str(&format!("  {:<16} {:.3}\n", "score", c.score));
    out.push_str("vqa\n");
    for (scope, v) in &summary.vqa {
        out.push_str(&format!(
            "  {:<16} acc {:.1}%  valid {:.1}%\n",
            scope.to_string(),
            v.accuracy_pct,
            v.valid_rate_pct
        ));
    }
    out
}
