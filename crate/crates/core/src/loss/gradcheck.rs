//! Built-in finite-difference verification of the closed-form loss
//! gradients.
//!
//! For each trial a random overlapping box pair is drawn, the analytic
//! gradient is compared against a central difference of the loss value
//! with all detached quantities pinned to their values at the base point
//! (the same pinning the closed form differentiates). Samples keep a
//! margin from the non-differentiable boundaries (corner ties,
//! vanishing intersection) so the difference quotient stays on one
//! smooth branch.

use super::{
    ciou_value_pinned, enclosing_diag2, eval_loss, iou, wiou_v1_value_pinned, BBox, LossKind,
    WiouState,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Central-difference step size.
pub const FD_STEP: f64 = 1e-4;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct WorstCase {
    pub trial: usize,
    /// Which pred coordinate: 0..4 for (x1, y1, x2, y2).
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub pred: BBox<f64>,
    pub gt: BBox<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub trials: usize,
    pub h: f64,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub pass: bool,
    pub worst: Option<WorstCase>,
}

/// Compare analytic and numeric gradients over seeded random box pairs.
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-2)`.
pub fn grad_check(kind: LossKind, trials: usize, seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = WiouState::<f64>::default();
    let margin = 10.0 * FD_STEP;

    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    let mut worst: Option<WorstCase> = None;

    for trial in 0..trials {
        let (p, g) = sample_pair(&mut rng, margin);
        let out = eval_loss(kind, &p, &g, &mut state);

        let pinned = pinned_value(kind, &p, &g, out.r);
        for coord in 0..4 {
            let numeric = central_diff(&pinned, &p, coord);
            let analytic = out.loss.grad[coord];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2);
            sum_rel += rel;
            if rel > max_rel {
                max_rel = rel;
                worst = Some(WorstCase {
                    trial,
                    coord,
                    analytic,
                    numeric,
                    rel_err: rel,
                    pred: p,
                    gt: g,
                });
            }
        }
    }

    GradCheckReport {
        loss: kind.name().to_string(),
        trials,
        h: FD_STEP,
        tolerance,
        max_rel_err: max_rel,
        mean_rel_err: sum_rel / (4 * trials.max(1)) as f64,
        pass: max_rel <= tolerance,
        worst,
    }
}

type PinnedLoss = Box<dyn Fn(&BBox<f64>) -> f64>;

/// The loss value as a pure function of the pred box, with every
/// detached quantity pinned at the base point.
fn pinned_value(kind: LossKind, p: &BBox<f64>, g: &BBox<f64>, r: f64) -> PinnedLoss {
    let g = *g;
    match kind {
        LossKind::Iou => Box::new(move |pp| 1.0 - iou(pp, &g)),
        LossKind::Ciou => {
            let v = super::aspect_term(p, &g);
            let alpha = v / ((1.0 - iou(p, &g)) + v).max(EPS);
            Box::new(move |pp| ciou_value_pinned(pp, &g, alpha))
        }
        LossKind::WiouV1 | LossKind::WiouV2 | LossKind::WiouV3 => {
            let c2 = enclosing_diag2(p, &g).max(EPS);
            let scale = if kind == LossKind::WiouV1 { 1.0 } else { r };
            Box::new(move |pp| scale * wiou_v1_value_pinned(pp, &g, c2))
        }
    }
}

fn central_diff(f: &dyn Fn(&BBox<f64>) -> f64, p: &BBox<f64>, coord: usize) -> f64 {
    let bump = |b: &BBox<f64>, delta: f64| {
        let mut o = *b;
        match coord {
            0 => o.x1 += delta,
            1 => o.y1 += delta,
            2 => o.x2 += delta,
            _ => o.y2 += delta,
        }
        o
    };
    (f(&bump(p, FD_STEP)) - f(&bump(p, -FD_STEP))) / (2.0 * FD_STEP)
}

fn sample_box<R: Rng>(rng: &mut R) -> BBox<f64> {
    let cx = rng.gen_range(2.0..8.0);
    let cy = rng.gen_range(2.0..8.0);
    let w = rng.gen_range(0.5..5.0);
    let h = rng.gen_range(0.5..5.0);
    BBox::from_cwh(cx, cy, w, h)
}

fn sample_pair<R: Rng>(rng: &mut R, margin: f64) -> (BBox<f64>, BBox<f64>) {
    loop {
        let p = sample_box(rng);
        let g = sample_box(rng);
        if iou(&p, &g) <= 0.01 {
            continue;
        }
        if near_kink(&p, &g, margin) {
            continue;
        }
        return (p, g);
    }
}

/// True when a corner tie or a vanishing intersection edge lies within
/// `margin`, where max/min switch branches.
fn near_kink(p: &BBox<f64>, g: &BBox<f64>, margin: f64) -> bool {
    let ties = [
        p.x1 - g.x1,
        p.y1 - g.y1,
        p.x2 - g.x2,
        p.y2 - g.y2,
    ];
    if ties.iter().any(|t| t.abs() < margin) {
        return true;
    }
    let iw = p.x2.min(g.x2) - p.x1.max(g.x1);
    let ih = p.y2.min(g.y2) - p.y1.max(g.y1);
    iw < margin || ih < margin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_kinds_pass_at_default_tolerance() {
        for kind in LossKind::ALL {
            let report = grad_check(kind, 200, 0, 1e-4);
            assert!(
                report.pass,
                "{kind}: max_rel_err {} worst {:?}",
                report.max_rel_err, report.worst
            );
        }
    }

    #[test]
    fn report_is_seed_deterministic() {
        let a = grad_check(LossKind::Ciou, 50, 7, 1e-4);
        let b = grad_check(LossKind::Ciou, 50, 7, 1e-4);
        assert_eq!(a.max_rel_err, b.max_rel_err);
        assert_eq!(a.mean_rel_err, b.mean_rel_err);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, g) = sample_pair(&mut rng, 10.0 * FD_STEP);
        let out = super::super::ciou_loss(&p, &g);
        let pinned = pinned_value(LossKind::Ciou, &p, &g, 1.0);
        let numeric = central_diff(&pinned, &p, 0);
        let rel = |a: f64| (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
        assert!(rel(out.grad[0]) <= 1e-4);
        assert!(rel(out.grad[0] + 0.05) > 1e-4);
    }
}
