use std::collections::BTreeSet;

use serde::Serialize;

use crate::loss::iou;

use super::{Detection, GroundTruth, MetricsError};

/// The canonical 0.50:0.05:0.95 threshold ladder.
pub const STANDARD_IOU_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// One point of the global precision-recall curve, taken after admitting
/// every prediction down to `confidence`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
}

/// The PR-curve point maximizing F1, i.e. the best single operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxF1 {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class results. Only classes with at least one ground-truth box are
/// evaluated; `ap_by_threshold` is aligned with the report's
/// `iou_thresholds`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEval {
    pub class_id: usize,
    pub gt_count: usize,
    pub pred_count: usize,
    pub ap50: f64,
    pub ap_by_threshold: Vec<f64>,
}

/// Full evaluation record.
///
/// `map_by_threshold[i]` averages AP over evaluated classes at
/// `iou_thresholds[i]`; `map_mean` averages those entries, so with the
/// standard ladder it is mAP@.5-.95. `map50`, `precision`, `recall`, the
/// PR curve, and `max_f1` always use IoU 0.5 regardless of the ladder.
/// Classes that appear only in predictions cannot be scored and are
/// listed separately; their false positives still count against the
/// global precision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub images: usize,
    pub predictions: usize,
    pub ground_truths: usize,
    pub iou_thresholds: Vec<f64>,
    pub per_class: Vec<ClassEval>,
    pub classes_without_ground_truth: Vec<usize>,
    pub map_by_threshold: Vec<f64>,
    pub map50: f64,
    pub map_mean: f64,
    pub precision: f64,
    pub recall: f64,
    pub max_f1: MaxF1,
    pub pr_curve: Vec<PrPoint>,
}

fn global_order(preds: &[Vec<Detection>]) -> Vec<(usize, usize)> {
    let mut order = Vec::new();
    for (img, dets) in preds.iter().enumerate() {
        for j in 0..dets.len() {
            order.push((img, j));
        }
    }
    order.sort_by(|a, b| {
        preds[b.0][b.1]
            .confidence
            .total_cmp(&preds[a.0][a.1].confidence)
            .then(a.cmp(b))
    });
    order
}

/// Greedy matcher: walk predictions in global confidence order; each takes
/// the highest-IoU unmatched same-class ground truth of its image, ties
/// going to the lower ground-truth index. Returns a true-positive flag per
/// position of `order`.
fn match_flags(
    order: &[(usize, usize)],
    preds: &[Vec<Detection>],
    gts: &[Vec<GroundTruth>],
    thresh: f64,
) -> Vec<bool> {
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    order
        .iter()
        .map(|&(img, j)| {
            let p = &preds[img][j];
            let mut best: Option<(f64, usize)> = None;
            for (gi, gt) in gts[img].iter().enumerate() {
                if gt.class_id != p.class_id || taken[img][gi] {
                    continue;
                }
                let v = iou(&p.bbox, &gt.bbox);
                if v >= thresh && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, gi));
                }
            }
            match best {
                Some((_, gi)) => {
                    taken[img][gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Average precision by all-point interpolation: precision is made
/// monotonically non-increasing from the right, then integrated over the
/// recall steps.
fn average_precision(tp_flags: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut cum_tp = 0usize;
    for (k, &tp) in tp_flags.iter().enumerate() {
        cum_tp += tp as usize;
        recalls.push(cum_tp as f64 / gt_count as f64);
        precisions.push(cum_tp as f64 / (k + 1) as f64);
    }
    let mut envelope = precisions;
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recalls.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        values.sum::<f64>() / count as f64
    }
}

/// Scores predictions against ground truth across the given IoU
/// thresholds. Images are paired by index, so both slices must have the
/// same length; class ids must lie in `[0, nc)`.
pub fn evaluate(
    preds_by_image: &[Vec<Detection>],
    gts_by_image: &[Vec<GroundTruth>],
    iou_thresholds: &[f64],
    nc: usize,
) -> Result<EvalReport, MetricsError> {
    if preds_by_image.len() != gts_by_image.len() {
        return Err(MetricsError::MismatchedImages {
            preds: preds_by_image.len(),
            gts: gts_by_image.len(),
        });
    }
    if iou_thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    for &t in iou_thresholds {
        if !(t.is_finite() && t > 0.0 && t <= 1.0) {
            return Err(MetricsError::BadThreshold {
                what: "IoU threshold",
                range: "(0, 1]",
                got: t,
            });
        }
    }
    let check_class = |class_id: usize| {
        if class_id < nc {
            Ok(())
        } else {
            Err(MetricsError::ClassOutOfRange { class_id, nc })
        }
    };
    for dets in preds_by_image {
        for d in dets {
            check_class(d.class_id)?;
        }
    }
    for boxes in gts_by_image {
        for g in boxes {
            check_class(g.class_id)?;
        }
    }

    let order = global_order(preds_by_image);
    let flags50 = match_flags(&order, preds_by_image, gts_by_image, 0.5);
    let flags_per_thresh: Vec<Vec<bool>> = iou_thresholds
        .iter()
        .map(|&t| match_flags(&order, preds_by_image, gts_by_image, t))
        .collect();

    let mut gt_counts = vec![0usize; nc];
    for boxes in gts_by_image {
        for g in boxes {
            gt_counts[g.class_id] += 1;
        }
    }
    let mut pred_classes = BTreeSet::new();
    for dets in preds_by_image {
        for d in dets {
            pred_classes.insert(d.class_id);
        }
    }

    let mut per_class = Vec::new();
    for (class_id, &gt_count) in gt_counts.iter().enumerate() {
        if gt_count == 0 {
            continue;
        }
        let positions: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &(img, j))| preds_by_image[img][j].class_id == class_id)
            .map(|(k, _)| k)
            .collect();
        let pick = |flags: &[bool]| -> Vec<bool> { positions.iter().map(|&k| flags[k]).collect() };
        let ap_by_threshold: Vec<f64> = flags_per_thresh
            .iter()
            .map(|flags| average_precision(&pick(flags), gt_count))
            .collect();
        per_class.push(ClassEval {
            class_id,
            gt_count,
            pred_count: positions.len(),
            ap50: average_precision(&pick(&flags50), gt_count),
            ap_by_threshold,
        });
    }

    let evaluated = per_class.len();
    let map_by_threshold: Vec<f64> = (0..iou_thresholds.len())
        .map(|ti| mean(per_class.iter().map(|c| c.ap_by_threshold[ti]), evaluated))
        .collect();
    let map50 = mean(per_class.iter().map(|c| c.ap50), evaluated);
    let map_mean = mean(map_by_threshold.iter().copied(), map_by_threshold.len());

    let total_gt: usize = gts_by_image.iter().map(Vec::len).sum();
    let mut pr_curve = Vec::with_capacity(order.len());
    let mut cum_tp = 0usize;
    for (k, &(img, j)) in order.iter().enumerate() {
        cum_tp += flags50[k] as usize;
        pr_curve.push(PrPoint {
            confidence: preds_by_image[img][j].confidence,
            precision: cum_tp as f64 / (k + 1) as f64,
            recall: if total_gt == 0 {
                0.0
            } else {
                cum_tp as f64 / total_gt as f64
            },
        });
    }
    let precision = pr_curve.last().map_or(0.0, |p| p.precision);
    let recall = pr_curve.last().map_or(0.0, |p| p.recall);
    let max_f1 = pr_curve
        .iter()
        .map(|p| {
            let f1 = if p.precision + p.recall > 0.0 {
                2.0 * p.precision * p.recall / (p.precision + p.recall)
            } else {
                0.0
            };
            (p, f1)
        })
        .max_by(|(_, a), (_, b)| a.total_cmp(b))
        .map_or(
            MaxF1 {
                confidence: 0.0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            },
            |(p, f1)| MaxF1 {
                confidence: p.confidence,
                precision: p.precision,
                recall: p.recall,
                f1,
            },
        );

    Ok(EvalReport {
        images: preds_by_image.len(),
        predictions: order.len(),
        ground_truths: total_gt,
        iou_thresholds: iou_thresholds.to_vec(),
        per_class,
        classes_without_ground_truth: pred_classes
            .into_iter()
            .filter(|&c| gt_counts[c] == 0)
            .collect(),
        map_by_threshold,
        map50,
        map_mean,
        precision,
        recall,
        max_f1,
        pr_curve,
    })
}

/// [`evaluate`] over the standard 0.50:0.05:0.95 ladder, making
/// `map_mean` the usual mAP@.5-.95.
pub fn standard_report(
    preds_by_image: &[Vec<Detection>],
    gts_by_image: &[Vec<GroundTruth>],
    nc: usize,
) -> Result<EvalReport, MetricsError> {
    evaluate(preds_by_image, gts_by_image, &STANDARD_IOU_THRESHOLDS, nc)
}
