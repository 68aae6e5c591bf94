//! Tiny gradient-descent regression driver: fits a population of boxes
//! to fixed targets with any loss of the family, recording per-step
//! statistics and the final per-sample focusing gains.

use super::{eval_loss, iou, BBox, LossError, LossKind, WiouState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ToyStepStats {
    pub step: usize,
    /// Mean loss value over the population as evaluated during the step.
    pub mean_loss: f64,
    /// Mean IoU against the targets after the step's updates.
    pub mean_iou: f64,
    /// Mean focusing gain as evaluated during the step (1 for
    /// non-focused losses).
    pub mean_r: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyTrainResult {
    pub steps: Vec<ToyStepStats>,
    pub final_iou: Vec<f64>,
    /// Per-sample gain from the last step's evaluations.
    pub final_r: Vec<f64>,
    pub final_boxes: Vec<BBox<f64>>,
}

/// Plain gradient descent on the corner coordinates of each box toward
/// its target. Samples are visited in order within every step, sharing
/// the focusing state. Coordinates that cross after an update are
/// swapped back into valid order.
pub fn toy_train(
    targets: &[BBox<f64>],
    init: &[BBox<f64>],
    kind: LossKind,
    steps: usize,
    lr: f64,
    state: &mut WiouState<f64>,
) -> Result<ToyTrainResult, LossError> {
    if targets.is_empty() {
        return Err(LossError::EmptyBoxes);
    }
    if targets.len() != init.len() {
        return Err(LossError::MismatchedBoxes {
            targets: targets.len(),
            init: init.len(),
        });
    }
    if !lr.is_finite() || lr <= 0.0 {
        return Err(LossError::BadHyper {
            what: "lr",
            constraint: "> 0",
            got: lr,
        });
    }

    let n = targets.len();
    let mut boxes = init.to_vec();
    let mut stats = Vec::with_capacity(steps);
    let mut final_r = vec![1.0; n];

    for step in 1..=steps {
        let mut sum_loss = 0.0;
        let mut sum_r = 0.0;
        for i in 0..n {
            let out = eval_loss(kind, &boxes[i], &targets[i], state);
            sum_loss += out.loss.value;
            sum_r += out.r;
            final_r[i] = out.r;

            let b = &mut boxes[i];
            b.x1 -= lr * out.loss.grad[0];
            b.y1 -= lr * out.loss.grad[1];
            b.x2 -= lr * out.loss.grad[2];
            b.y2 -= lr * out.loss.grad[3];
            if b.x2 < b.x1 {
                std::mem::swap(&mut b.x1, &mut b.x2);
            }
            if b.y2 < b.y1 {
                std::mem::swap(&mut b.y1, &mut b.y2);
            }
        }
        let mean_iou = boxes
            .iter()
            .zip(targets)
            .map(|(b, t)| iou(b, t))
            .sum::<f64>()
            / n as f64;
        stats.push(ToyStepStats {
            step,
            mean_loss: sum_loss / n as f64,
            mean_iou,
            mean_r: sum_r / n as f64,
        });
    }

    let final_iou = boxes.iter().zip(targets).map(|(b, t)| iou(b, t)).collect();
    Ok(ToyTrainResult {
        steps: stats,
        final_iou,
        final_r,
        final_boxes: boxes,
    })
}

/// The documented easy/outlier mixture: `n_easy` boxes start as mild
/// corner jitters of their targets (moderate IoU), `n_outlier` boxes
/// start far away and shrunken (zero IoU). Targets are boxes of width
/// and height 1.5..2.5 centered in 4..6; easy inits jitter each corner
/// by ±0.4; outlier inits shift the center by 5..8 per axis and scale
/// each side to 0.4..0.8 of the target. Easy samples come first in the
/// returned vectors.
pub fn easy_outlier_mixture(
    n_easy: usize,
    n_outlier: usize,
    seed: u64,
) -> (Vec<BBox<f64>>, Vec<BBox<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = Vec::with_capacity(n_easy + n_outlier);
    let mut init = Vec::with_capacity(n_easy + n_outlier);

    let target_box = |rng: &mut ChaCha8Rng| {
        let cx = rng.gen_range(4.0..6.0);
        let cy = rng.gen_range(4.0..6.0);
        let w = rng.gen_range(1.5..2.5);
        let h = rng.gen_range(1.5..2.5);
        BBox::from_cwh(cx, cy, w, h)
    };

    for _ in 0..n_easy {
        let t = target_box(&mut rng);
        let mut j = || rng.gen_range(-0.4..0.4);
        init.push(BBox::new(t.x1 + j(), t.y1 + j(), t.x2 + j(), t.y2 + j()));
        targets.push(t);
    }
    for _ in 0..n_outlier {
        let t = target_box(&mut rng);
        let sign = |rng: &mut ChaCha8Rng| if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let dx = sign(&mut rng) * rng.gen_range(5.0..8.0);
        let dy = sign(&mut rng) * rng.gen_range(5.0..8.0);
        let w = t.w() * rng.gen_range(0.4..0.8);
        let h = t.h() * rng.gen_range(0.4..0.8);
        init.push(BBox::from_cwh(t.cx() + dx, t.cy() + dy, w, h));
        targets.push(t);
    }
    (targets, init)
}
