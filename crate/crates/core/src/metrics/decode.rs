use crate::loss::BBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Detection, MetricsError};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes raw per-scale head maps into detections.
///
/// Each map holds `na` anchor slots of `nc + 5` channels laid out as
/// `(tx, ty, tw, th, obj, cls_0 .. cls_{nc-1})`. Every channel passes
/// through a sigmoid, then per cell `(gx, gy)` and anchor `(aw, ah)`:
///
/// ```text
/// cx = (2 s(tx) - 0.5 + gx) * stride      w = (2 s(tw))^2 * aw
/// cy = (2 s(ty) - 0.5 + gy) * stride      h = (2 s(th))^2 * ah
/// ```
///
/// The confidence is `s(obj) * s(cls)` for the argmax class (first class
/// wins a tie), and only detections with confidence strictly above
/// `conf_thresh` survive. The class count is inferred from the channel
/// count, so the same decode serves any head width. Output order is
/// scale-major, then anchor, row, column.
pub fn decode_predictions<S: Scalar>(
    maps: &[Tensor<S>],
    anchors: &[Vec<f64>],
    strides: &[usize],
    conf_thresh: f64,
) -> Result<Vec<Detection>, MetricsError> {
    if maps.len() != anchors.len() || maps.len() != strides.len() {
        return Err(MetricsError::ScaleCountMismatch {
            maps: maps.len(),
            anchors: anchors.len(),
            strides: strides.len(),
        });
    }
    if !(0.0..1.0).contains(&conf_thresh) {
        return Err(MetricsError::BadThreshold {
            what: "confidence threshold",
            range: "[0, 1)",
            got: conf_thresh,
        });
    }
    let na = anchors.first().map_or(0, |a| a.len() / 2);
    for (scale, set) in anchors.iter().enumerate() {
        if set.is_empty() || set.len() % 2 != 0 || set.len() / 2 != na {
            return Err(MetricsError::BadAnchorSet {
                scale,
                got: set.len(),
            });
        }
    }

    let mut nc = 0usize;
    for (i, map) in maps.iter().enumerate() {
        let [n, c, _, _] = map.shape();
        if n != 1 {
            return Err(MetricsError::BatchSize { map: i, got: n });
        }
        if c % na != 0 || c / na < 6 {
            return Err(MetricsError::ChannelMismatch {
                map: i,
                got: c,
                na,
            });
        }
        let implied = c / na - 5;
        if i == 0 {
            nc = implied;
        } else if implied != nc {
            return Err(MetricsError::InconsistentClassCount {
                map: i,
                got: implied,
                expected: nc,
            });
        }
    }

    let mut out = Vec::new();
    for (scale, map) in maps.iter().enumerate() {
        let stride = strides[scale] as f64;
        let [_, _, gh, gw] = map.shape();
        for a in 0..na {
            let base = a * (nc + 5);
            let (aw, ah) = (anchors[scale][2 * a], anchors[scale][2 * a + 1]);
            for gy in 0..gh {
                for gx in 0..gw {
                    let ch = |k: usize| map.at(0, base + k, gy, gx).to_f64_lossy();
                    let obj = sigmoid(ch(4));
                    let mut class_id = 0usize;
                    let mut best = f64::NEG_INFINITY;
                    for k in 0..nc {
                        let logit = ch(5 + k);
                        if logit > best {
                            best = logit;
                            class_id = k;
                        }
                    }
                    let confidence = obj * sigmoid(best);
                    if confidence <= conf_thresh {
                        continue;
                    }
                    let cx = (2.0 * sigmoid(ch(0)) - 0.5 + gx as f64) * stride;
                    let cy = (2.0 * sigmoid(ch(1)) - 0.5 + gy as f64) * stride;
                    let w = (2.0 * sigmoid(ch(2))).powi(2) * aw;
                    let h = (2.0 * sigmoid(ch(3))).powi(2) * ah;
                    out.push(Detection {
                        bbox: BBox::from_cwh(cx, cy, w, h),
                        class_id,
                        confidence,
                    });
                }
            }
        }
    }
    Ok(out)
}
