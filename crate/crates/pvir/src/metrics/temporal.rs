//! Temporal interval IoU and phase-wise mean IoU over an evaluation set.

use std::collections::BTreeMap;

use crate::model::{PhaseLabel, PhaseSegmentation, TimeInterval, PHASE_COUNT};

use super::MetricError;

/// Intersection over union of two intervals, with union measured as total
/// covered length. When both intervals are degenerate the union is zero;
/// the result is 1 for identical points and 0 otherwise.
pub fn interval_iou(p: &TimeInterval, g: &TimeInterval) -> f64 {
    let inter = (p.end_s.min(g.end_s) - p.start_s.max(g.start_s)).max(0.0);
    let union = p.len_s() + g.len_s() - inter;
    if union <= 0.0 {
        return if p.start_s == g.start_s && p.end_s == g.end_s { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Phase-wise mean IoU over index-aligned (prediction, ground truth) pairs.
///
/// A phase missing from a prediction scores 0 for that sample. Samples
/// whose ground truth lacks the phase are excluded from that phase's mean;
/// a phase with no ground truth anywhere scores 0. The overall value is the
/// arithmetic mean of the five phase means.
pub fn phase_miou(
    preds: &[PhaseSegmentation],
    gts: &[PhaseSegmentation],
) -> Result<(BTreeMap<PhaseLabel, f64>, f64), MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    let mut per_phase = BTreeMap::new();
    for phase in PhaseLabel::ALL {
        let mut total = 0.0;
        let mut count = 0usize;
        for (pred, gt) in preds.iter().zip(gts) {
            let Some(g) = gt.interval(phase) else { continue };
            count += 1;
            if let Some(p) = pred.interval(phase) {
                total += interval_iou(&p, &g);
            }
        }
        per_phase.insert(phase, if count == 0 { 0.0 } else { total / count as f64 });
    }
    let overall = per_phase.values().sum::<f64>() / PHASE_COUNT as f64;
    Ok((per_phase, overall))
}
