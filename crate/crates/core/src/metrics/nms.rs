use crate::loss::iou;

use super::{Detection, MetricsError};

/// Class-aware greedy non-maximum suppression.
///
/// Candidates are visited by descending confidence (ties keep the earlier
/// input index first). A candidate is dropped when some already-kept box
/// of the same class overlaps it with IoU strictly above `iou_thresh`;
/// boxes of other classes never interact. The survivors come back in
/// visit order, i.e. sorted by confidence.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>, MetricsError> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(MetricsError::BadThreshold {
            what: "NMS IoU threshold",
            range: "[0, 1]",
            got: iou_thresh,
        });
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });

    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let c = dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == c.class_id && iou(&k.bbox, &c.bbox) > iou_thresh);
        if !suppressed {
            kept.push(c);
        }
    }
    Ok(kept)
}
