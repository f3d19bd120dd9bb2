//! Detection-quality scoring: greedy IoU matching, precision–recall curves,
//! average precision and its mean over classes.
//!
//! Matching follows the familiar convention: predictions are processed in
//! descending score order (ties keep input order, so results are
//! bit-reproducible) and each one claims the unmatched ground-truth box with
//! the highest IoU, provided that IoU reaches the threshold. Every ground
//! truth is matched at most once.

use std::collections::BTreeMap;

use crate::data::Detection;
use crate::error::{Error, Result};
use crate::geometry::iou;

/// One scored prediction with its matching verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredFlag {
    pub score: f64,
    pub is_tp: bool,
}

/// Matching result for one prediction set against one ground-truth set.
/// Flags are kept sorted by descending score.
#[derive(Debug, Clone, Default)]
pub struct MatchOutcome {
    pub flags: Vec<PredFlag>,
    pub n_ground_truth: usize,
}

impl MatchOutcome {
    /// Merge per-image outcomes into one. Flags are re-sorted by descending
    /// score; at equal score false positives order before true positives so
    /// the merged curve is independent of merge order (and pessimistic at
    /// ties).
    pub fn merge<I: IntoIterator<Item = MatchOutcome>>(outcomes: I) -> MatchOutcome {
        let mut flags = Vec::new();
        let mut n_gt = 0;
        for o in outcomes {
            flags.extend(o.flags);
            n_gt += o.n_ground_truth;
        }
        flags.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.is_tp.cmp(&b.is_tp))
        });
        MatchOutcome {
            flags,
            n_ground_truth: n_gt,
        }
    }

    pub fn true_positives(&self) -> usize {
        self.flags.iter().filter(|f| f.is_tp).count()
    }
}

/// Match scored predictions to ground truth at an IoU threshold.
pub fn match_at_iou(
    predictions: &[Detection],
    ground_truth: &[Detection],
    threshold: f64,
) -> Result<MatchOutcome> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidValue(format!(
            "IoU threshold {threshold} outside (0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    let scores: Vec<f64> = predictions
        .iter()
        .map(|p| p.score.ok_or(Error::UnscoredPrediction))
        .collect::<Result<_>>()?;
    // Stable sort: equal scores keep input order.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut gt_matched = vec![false; ground_truth.len()];
    let mut flags = Vec::with_capacity(predictions.len());
    for &pi in &order {
        let pred = &predictions[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if gt_matched[gi] {
                continue;
            }
            let overlap = iou(&pred.bbox, &gt.bbox);
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        let is_tp = match best {
            Some((gi, overlap)) if overlap >= threshold => {
                gt_matched[gi] = true;
                true
            }
            _ => false,
        };
        flags.push(PredFlag {
            score: scores[pi],
            is_tp,
        });
    }
    Ok(MatchOutcome {
        flags,
        n_ground_truth: ground_truth.len(),
    })
}

/// Precision–recall curve; recall is nondecreasing along the point list.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
}

/// Raw (recall, precision) points in flag order.
pub fn pr_curve(outcome: &MatchOutcome) -> Result<PrCurve> {
    if outcome.n_ground_truth == 0 {
        return Err(Error::NoGroundTruth);
    }
    let n_gt = outcome.n_ground_truth as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let points = outcome
        .flags
        .iter()
        .map(|f| {
            if f.is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            (tp as f64 / n_gt, tp as f64 / (tp + fp) as f64)
        })
        .collect();
    Ok(PrCurve { points })
}

/// How the area under the precision envelope is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApInterpolation {
    /// Exact area under the interpolated envelope (all recall points).
    #[default]
    AllPoint,
    /// Mean of the envelope sampled at recalls 0.0, 0.1, ..., 1.0.
    ElevenPoint,
}

/// Average precision with the default all-point interpolation.
pub fn average_precision(outcome: &MatchOutcome) -> Result<f64> {
    average_precision_with(outcome, ApInterpolation::AllPoint)
}

/// Average precision under the chosen interpolation scheme. The precision at
/// each recall level is the maximum precision at that recall or greater.
pub fn average_precision_with(outcome: &MatchOutcome, interp: ApInterpolation) -> Result<f64> {
    let curve = pr_curve(outcome)?;
    Ok(match interp {
        ApInterpolation::AllPoint => {
            let mut ap = 0.0;
            let mut max_prec = 0.0f64;
            let pts = &curve.points;
            for i in (0..pts.len()).rev() {
                let (recall, precision) = pts[i];
                max_prec = max_prec.max(precision);
                let prev_recall = if i == 0 { 0.0 } else { pts[i - 1].0 };
                ap += (recall - prev_recall) * max_prec;
            }
            ap
        }
        ApInterpolation::ElevenPoint => {
            let mut total = 0.0;
            for k in 0..=10 {
                let level = k as f64 / 10.0;
                let best = curve
                    .points
                    .iter()
                    .filter(|(r, _)| *r >= level - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                total += best;
            }
            total / 11.0
        }
    })
}

/// Unweighted mean of per-class AP values.
pub fn mean_ap(per_class_ap: &BTreeMap<String, f64>) -> Result<f64> {
    if per_class_ap.is_empty() {
        return Err(Error::EmptyClassMap);
    }
    Ok(per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64)
}

/// Per-class evaluation row.
#[derive(Debug, Clone)]
pub struct ClassEval {
    pub label: String,
    pub n_ground_truth: usize,
    pub n_predictions: usize,
    pub ap: f64,
}

/// Full evaluation of a prediction stream against a ground-truth stream.
#[derive(Debug, Clone)]
pub struct DetEvalReport {
    pub threshold: f64,
    pub classes: Vec<ClassEval>,
    pub mean_ap: f64,
}

/// Evaluate frame-aligned detection streams. Frames are paired by frame id
/// (a frame missing from one stream counts as empty) and matched per class;
/// per-frame outcomes are merged before computing AP.
pub fn evaluate_detections(
    predictions: &[crate::data::FrameRecord],
    ground_truth: &[crate::data::FrameRecord],
    threshold: f64,
    interp: ApInterpolation,
) -> Result<DetEvalReport> {
    let pred_by_frame: BTreeMap<u64, &Vec<Detection>> = predictions
        .iter()
        .map(|f| (f.frame_id, &f.detections))
        .collect();
    let gt_by_frame: BTreeMap<u64, &Vec<Detection>> = ground_truth
        .iter()
        .map(|f| (f.frame_id, &f.detections))
        .collect();

    let mut labels: Vec<String> = Vec::new();
    for dets in pred_by_frame.values().chain(gt_by_frame.values()) {
        for d in dets.iter() {
            if !labels.contains(&d.label) {
                labels.push(d.label.clone());
            }
        }
    }
    labels.sort();
    if labels.is_empty() {
        return Err(Error::EmptyClassMap);
    }

    let empty: Vec<Detection> = Vec::new();
    let frame_ids: std::collections::BTreeSet<u64> = pred_by_frame
        .keys()
        .chain(gt_by_frame.keys())
        .copied()
        .collect();

    let mut classes = Vec::with_capacity(labels.len());
    let mut per_class_ap = BTreeMap::new();
    for label in &labels {
        let mut outcomes = Vec::new();
        let mut n_pred = 0;
        for &fid in &frame_ids {
            let preds: Vec<Detection> = pred_by_frame
                .get(&fid)
                .map_or(&empty, |v| *v)
                .iter()
                .filter(|d| &d.label == label)
                .cloned()
                .collect();
            let gts: Vec<Detection> = gt_by_frame
                .get(&fid)
                .map_or(&empty, |v| *v)
                .iter()
                .filter(|d| &d.label == label)
                .cloned()
                .collect();
            n_pred += preds.len();
            outcomes.push(match_at_iou(&preds, &gts, threshold)?);
        }
        let merged = MatchOutcome::merge(outcomes);
        let n_gt = merged.n_ground_truth;
        let ap = if n_gt == 0 {
            // A class with predictions but no ground truth contributes 0.
            0.0
        } else {
            average_precision_with(&merged, interp)?
        };
        per_class_ap.insert(label.clone(), ap);
        classes.push(ClassEval {
            label: label.clone(),
            n_ground_truth: n_gt,
            n_predictions: n_pred,
            ap,
        });
    }
    Ok(DetEvalReport {
        threshold,
        classes,
        mean_ap: mean_ap(&per_class_ap)?,
    })
}

impl DetEvalReport {
    /// Delimited-text form: one row per class plus a final mAP row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,class,n_gt,n_pred,AP\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                self.threshold, c.label, c.n_ground_truth, c.n_predictions, c.ap
            ));
        }
        out.push_str(&format!("{},mAP,,,{:.6}\n", self.threshold, self.mean_ap));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameRecord;
    use crate::geometry::BoundingBox;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn det(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection::scored(BoundingBox::new(x, y, w, h).unwrap(), score, "Pod").unwrap()
    }

    fn gt(x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection::ground_truth(BoundingBox::new(x, y, w, h).unwrap(), "Pod")
    }

    #[test]
    fn perfect_detector_all_tp() {
        let gts = vec![gt(0.0, 0.0, 10.0, 10.0), gt(20.0, 0.0, 10.0, 10.0)];
        let preds = vec![det(0.0, 0.0, 10.0, 10.0, 0.9), det(20.0, 0.0, 10.0, 10.0, 0.9)];
        let outcome = match_at_iou(&preds, &gts, 0.55).unwrap();
        assert!(outcome.flags.iter().all(|f| f.is_tp));
        assert_eq!(outcome.true_positives(), 2);
    }

    #[test]
    fn no_predictions() {
        let gts = vec![gt(0.0, 0.0, 1.0, 1.0); 3];
        let outcome = match_at_iou(&[], &gts, 0.55).unwrap();
        assert!(outcome.flags.is_empty());
        assert_eq!(outcome.n_ground_truth, 3);
    }

    #[test]
    fn greedy_by_score_order() {
        // Higher-scored prediction has IoU 1/3 < 0.55 and becomes FP; the
        // lower-scored exact box then claims the ground truth.
        let gts = vec![gt(0.0, 0.0, 10.0, 10.0)];
        let preds = vec![det(5.0, 0.0, 10.0, 10.0, 0.9), det(0.0, 0.0, 10.0, 10.0, 0.8)];
        let outcome = match_at_iou(&preds, &gts, 0.55).unwrap();
        assert_eq!(outcome.flags[0].score, 0.9);
        assert!(!outcome.flags[0].is_tp);
        assert!(outcome.flags[1].is_tp);
    }

    #[test]
    fn unscored_prediction_rejected() {
        let gts = vec![gt(0.0, 0.0, 1.0, 1.0)];
        let preds = vec![gt(0.0, 0.0, 1.0, 1.0)];
        assert!(matches!(
            match_at_iou(&preds, &gts, 0.5),
            Err(Error::UnscoredPrediction)
        ));
    }

    fn outcome_from_flags(flags: &[(f64, bool)], n_gt: usize) -> MatchOutcome {
        MatchOutcome {
            flags: flags
                .iter()
                .map(|&(score, is_tp)| PredFlag { score, is_tp })
                .collect(),
            n_ground_truth: n_gt,
        }
    }

    #[test]
    fn ap_perfect_curve() {
        let o = outcome_from_flags(&[(0.9, true), (0.8, true)], 2);
        assert_relative_eq!(average_precision(&o).unwrap(), 1.0);
    }

    #[test]
    fn ap_zero_recall() {
        let o = outcome_from_flags(&[], 4);
        assert_eq!(average_precision(&o).unwrap(), 0.0);
    }

    #[test]
    fn ap_tp_fp_tp_case() {
        // PR points: (0.5, 1.0), (0.5, 0.5), (1.0, 2/3)
        // AP = 0.5 * 1.0 + 0.5 * 2/3 = 5/6
        let o = outcome_from_flags(&[(0.9, true), (0.8, false), (0.7, true)], 2);
        assert_relative_eq!(average_precision(&o).unwrap(), 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn ap_eleven_point_differs() {
        let o = outcome_from_flags(&[(0.9, true), (0.8, false), (0.7, true)], 2);
        let eleven = average_precision_with(&o, ApInterpolation::ElevenPoint).unwrap();
        // Envelope: 1.0 up to recall 0.5, then 2/3 up to 1.0.
        // Levels 0.0..=0.5 give 1.0 (6 levels), 0.6..=1.0 give 2/3 (5 levels).
        assert_relative_eq!(eleven, (6.0 + 5.0 * 2.0 / 3.0) / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn ap_no_ground_truth_is_error() {
        let o = outcome_from_flags(&[(0.9, false)], 0);
        assert!(matches!(average_precision(&o), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn mean_ap_examples() {
        let single = BTreeMap::from([("Pod".to_string(), 0.71)]);
        assert_relative_eq!(mean_ap(&single).unwrap(), 0.71);
        let two = BTreeMap::from([("a".to_string(), 0.4), ("b".to_string(), 0.8)]);
        assert_relative_eq!(mean_ap(&two).unwrap(), 0.6);
        assert!(matches!(mean_ap(&BTreeMap::new()), Err(Error::EmptyClassMap)));
    }

    #[test]
    fn merge_is_order_insensitive() {
        let a = outcome_from_flags(&[(0.9, true), (0.5, false)], 1);
        let b = outcome_from_flags(&[(0.9, false), (0.7, true)], 2);
        let ab = MatchOutcome::merge([a.clone(), b.clone()]);
        let ba = MatchOutcome::merge([b, a]);
        assert_eq!(ab.flags, ba.flags);
        assert_eq!(ab.n_ground_truth, ba.n_ground_truth);
    }

    #[test]
    fn evaluate_identical_streams_map_one() {
        let frames: Vec<FrameRecord> = (0..3)
            .map(|fid| FrameRecord {
                frame_id: fid,
                detections: vec![det(fid as f64 * 5.0, 0.0, 10.0, 10.0, 0.9)],
            })
            .collect();
        let gt_frames: Vec<FrameRecord> = frames
            .iter()
            .map(|f| FrameRecord {
                frame_id: f.frame_id,
                detections: f
                    .detections
                    .iter()
                    .map(|d| Detection::ground_truth(d.bbox, d.label.clone()))
                    .collect(),
            })
            .collect();
        let report =
            evaluate_detections(&frames, &gt_frames, 0.55, ApInterpolation::AllPoint).unwrap();
        assert_relative_eq!(report.mean_ap, 1.0);
        let csv = report.to_csv();
        assert!(csv.contains("mAP"));
    }

    proptest! {
        #[test]
        fn ap_bounded(flags in proptest::collection::vec((0.0..=1.0f64, proptest::bool::ANY), 0..30),
                      extra_gt in 0usize..5) {
            let n_tp = flags.iter().filter(|f| f.1).count();
            let mut sorted = flags.clone();
            sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let o = outcome_from_flags(&sorted, n_tp + extra_gt + 1);
            let ap = average_precision(&o).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        }

        // Appending a lowest-score TP never decreases AP; an FP never
        // increases it.
        #[test]
        fn ap_monotone_in_appended_flag(
            flags in proptest::collection::vec((0.1..=1.0f64, proptest::bool::ANY), 1..20)
        ) {
            let mut sorted = flags.clone();
            sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let n_tp = sorted.iter().filter(|f| f.1).count();
            let n_gt = n_tp + 2;
            let base = outcome_from_flags(&sorted, n_gt);
            let ap0 = average_precision(&base).unwrap();

            let mut with_tp = sorted.clone();
            with_tp.push((0.05, true));
            let ap_tp = average_precision(&outcome_from_flags(&with_tp, n_gt)).unwrap();
            prop_assert!(ap_tp >= ap0 - 1e-12);

            let mut with_fp = sorted.clone();
            with_fp.push((0.05, false));
            let ap_fp = average_precision(&outcome_from_flags(&with_fp, n_gt)).unwrap();
            prop_assert!(ap_fp <= ap0 + 1e-12);
        }
    }
}
