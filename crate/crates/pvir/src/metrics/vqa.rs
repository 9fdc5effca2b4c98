//! VQA accuracy and valid-choice rate.

use crate::model::{AnswerRecord, QAItem, VqaScores};

use super::MetricError;

/// Accuracy and valid-choice rate (both percentages) over paired questions
/// and answers. An answer with no extractable choice counts as invalid and
/// incorrect; a question without a ground-truth answer is skipped for
/// accuracy but still counts toward the valid rate.
pub fn vqa_scores(pairs: &[(QAItem, AnswerRecord)]) -> Result<VqaScores, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut valid = 0usize;
    let mut scored = 0usize;
    let mut correct = 0usize;
    for (item, answer) in pairs {
        if answer.extracted.is_some() {
            valid += 1;
        }
        if let Some(truth) = item.answer {
            scored += 1;
            if answer.extracted == Some(truth) {
                correct += 1;
            }
        }
    }
    let accuracy_pct = if scored == 0 {
        0.0
    } else {
        100.0 * correct as f64 / scored as f64
    };
    let valid_rate_pct = 100.0 * valid as f64 / pairs.len() as f64;
    Ok(VqaScores { accuracy_pct, valid_rate_pct })
}
