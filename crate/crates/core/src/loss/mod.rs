//! Bounding-box regression losses with closed-form gradients: IoU, CIoU,
//! and the WIoU family (v1 distance attention, v2 mean-normalized
//! focusing, v3 outlier-degree focusing).
//!
//! All losses return both the value and its gradient with respect to the
//! predicted corners `(x1, y1, x2, y2)`. Quantities the reference
//! formulation treats as detached (the WIoU distance normalizer, the CIoU
//! aspect weight, the focusing gain) contribute no gradient. Exactly
//! identical boxes short-circuit to zero loss and zero gradient.

mod gradcheck;
mod toy;

pub use gradcheck::{grad_check, GradCheckReport, WorstCase, FD_STEP};
pub use toy::{easy_outlier_mixture, toy_train, ToyStepStats, ToyTrainResult};

use crate::scalar::{sc, Scalar};
use serde::Serialize;
use thiserror::Error;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("unknown loss `{0}`; expected iou, ciou, wiou_v1, wiou_v2, or wiou_v3")]
    UnknownKind(String),
    #[error("{what} must satisfy {constraint}, got {got}")]
    BadHyper {
        what: &'static str,
        constraint: &'static str,
        got: f64,
    },
    #[error("targets and initial boxes differ in length ({targets} vs {init})")]
    MismatchedBoxes { targets: usize, init: usize },
    #[error("box sets must not be empty")]
    EmptyBoxes,
}

/// Axis-aligned box as corners, with `x2 >= x1` and `y2 >= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox<S> {
    pub x1: S,
    pub y1: S,
    pub x2: S,
    pub y2: S,
}

impl<S: Scalar> BBox<S> {
    pub fn new(x1: S, y1: S, x2: S, y2: S) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    /// Build from center plus width and height.
    pub fn from_cwh(cx: S, cy: S, w: S, h: S) -> Self {
        let half = sc::<S>(0.5);
        BBox {
            x1: cx - w * half,
            y1: cy - h * half,
            x2: cx + w * half,
            y2: cy + h * half,
        }
    }

    pub fn w(&self) -> S {
        self.x2 - self.x1
    }

    pub fn h(&self) -> S {
        self.y2 - self.y1
    }

    pub fn cx(&self) -> S {
        (self.x1 + self.x2) * sc::<S>(0.5)
    }

    pub fn cy(&self) -> S {
        (self.y1 + self.y2) * sc::<S>(0.5)
    }

    pub fn area(&self) -> S {
        self.w() * self.h()
    }

    pub fn is_valid(&self) -> bool {
        self.x2 >= self.x1 && self.y2 >= self.y1 && self.area().is_finite()
    }
}

/// Intersection over union. Degenerate or disjoint pairs give 0; a box
/// with itself gives exactly 1 (the guard clamps the denominator rather
/// than adding to it).
pub fn iou<S: Scalar>(a: &BBox<S>, b: &BBox<S>) -> S {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(S::zero());
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(S::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    inter / union.max(sc::<S>(EPS))
}

/// Smallest box containing both inputs.
pub fn enclosing<S: Scalar>(a: &BBox<S>, b: &BBox<S>) -> BBox<S> {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// Squared diagonal of the enclosing box.
pub(crate) fn enclosing_diag2<S: Scalar>(a: &BBox<S>, b: &BBox<S>) -> S {
    let e = enclosing(a, b);
    e.w() * e.w() + e.h() * e.h()
}

/// Squared distance between box centers.
pub(crate) fn center_dist2<S: Scalar>(a: &BBox<S>, b: &BBox<S>) -> S {
    let dx = a.cx() - b.cx();
    let dy = a.cy() - b.cy();
    dx * dx + dy * dy
}

/// A loss value and its gradient with respect to the predicted corners
/// `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossValueGrad<S> {
    pub value: S,
    pub grad: [S; 4],
}

impl<S: Scalar> LossValueGrad<S> {
    fn zero() -> Self {
        LossValueGrad {
            value: S::zero(),
            grad: [S::zero(); 4],
        }
    }

    fn scaled(self, r: S) -> Self {
        LossValueGrad {
            value: r * self.value,
            grad: self.grad.map(|g| r * g),
        }
    }
}

/// Loss output annotated with the focusing quantities: the outlier degree
/// `beta` and the gain `r` applied to the base loss. Non-focused losses
/// report `beta = 0` and `r = 1`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FocusedLoss<S> {
    pub loss: LossValueGrad<S>,
    pub beta: S,
    pub r: S,
}

/// Differentiable geometry shared by the losses: IoU, center distance,
/// and enclosing diagonal, each with gradients wrt the pred corners.
struct Geom<S> {
    iou: S,
    d_iou: [S; 4],
    rho2: S,
    d_rho2: [S; 4],
    c2: S,
    d_c2: [S; 4],
}

fn geom<S: Scalar>(p: &BBox<S>, g: &BBox<S>) -> Geom<S> {
    let zero = S::zero();
    let one = S::one();
    let ind = |b: bool| if b { one } else { zero };

    let iw = (p.x2.min(g.x2) - p.x1.max(g.x1)).max(zero);
    let ih = (p.y2.min(g.y2) - p.y1.max(g.y1)).max(zero);
    let overlapping = iw > zero && ih > zero;
    let inter = iw * ih;

    let d_iw_x1 = -ind(p.x1 > g.x1);
    let d_iw_x2 = ind(p.x2 < g.x2);
    let d_ih_y1 = -ind(p.y1 > g.y1);
    let d_ih_y2 = ind(p.y2 < g.y2);
    let d_inter = if overlapping {
        [ih * d_iw_x1, iw * d_ih_y1, ih * d_iw_x2, iw * d_ih_y2]
    } else {
        [zero; 4]
    };

    let wp = p.w();
    let hp = p.h();
    let d_area = [-hp, -wp, hp, wp];

    let union = p.area() + g.area() - inter;
    let den = union.max(sc::<S>(EPS));
    let iou = inter / den;
    let mut d_iou = [zero; 4];
    for i in 0..4 {
        let d_union = d_area[i] - d_inter[i];
        d_iou[i] = (d_inter[i] * den - inter * d_union) / (den * den);
    }

    let dx = p.cx() - g.cx();
    let dy = p.cy() - g.cy();
    let rho2 = dx * dx + dy * dy;
    let d_rho2 = [dx, dy, dx, dy];

    let e = enclosing(p, g);
    let cw = e.w();
    let ch = e.h();
    let c2 = cw * cw + ch * ch;
    let two = sc::<S>(2.0);
    let d_c2 = [
        -two * cw * ind(p.x1 < g.x1),
        -two * ch * ind(p.y1 < g.y1),
        two * cw * ind(p.x2 > g.x2),
        two * ch * ind(p.y2 > g.y2),
    ];

    Geom {
        iou,
        d_iou,
        rho2,
        d_rho2,
        c2,
        d_c2,
    }
}

/// `1 - IoU` with its gradient.
pub fn iou_loss<S: Scalar>(p: &BBox<S>, g: &BBox<S>) -> LossValueGrad<S> {
    if p == g {
        return LossValueGrad::zero();
    }
    let ge = geom(p, g);
    LossValueGrad {
        value: S::one() - ge.iou,
        grad: ge.d_iou.map(|d| -d),
    }
}

/// CIoU: `1 - IoU + rho^2/c^2 + alpha * v`. The aspect weight `alpha` is
/// detached; the enclosing diagonal `c^2` is differentiated.
pub fn ciou_loss<S: Scalar>(p: &BBox<S>, g: &BBox<S>) -> LossValueGrad<S> {
    if p == g {
        return LossValueGrad::zero();
    }
    let ge = geom(p, g);
    let eps = sc::<S>(EPS);
    let c2g = ge.c2.max(eps);
    let dist = ge.rho2 / c2g;
    let mut d_dist = [S::zero(); 4];
    for (i, d) in d_dist.iter_mut().enumerate() {
        *d = (ge.d_rho2[i] * c2g - ge.rho2 * ge.d_c2[i]) / (c2g * c2g);
    }

    let (v, d_v) = aspect_term_grad(p, g);
    let one_m_iou = S::one() - ge.iou;
    let alpha = v / (one_m_iou + v).max(eps);

    let mut grad = [S::zero(); 4];
    for i in 0..4 {
        grad[i] = -ge.d_iou[i] + d_dist[i] + alpha * d_v[i];
    }
    LossValueGrad {
        value: one_m_iou + dist + alpha * v,
        grad,
    }
}

/// Aspect-consistency term `v = (4/pi^2)(atan(wg/hg) - atan(wp/hp))^2`
/// and its gradient wrt the pred corners.
fn aspect_term_grad<S: Scalar>(p: &BBox<S>, g: &BBox<S>) -> (S, [S; 4]) {
    let k = sc::<S>(4.0 / (std::f64::consts::PI * std::f64::consts::PI));
    let wp = p.w();
    let hp = p.h();
    let diff = g.w().atan2(g.h()) - wp.atan2(hp);
    let v = k * diff * diff;
    let d2 = (wp * wp + hp * hp).max(sc::<S>(EPS));
    let two = sc::<S>(2.0);
    let dv_dw = -(two * k * diff) * hp / d2;
    let dv_dh = (two * k * diff) * wp / d2;
    (v, [-dv_dw, -dv_dh, dv_dw, dv_dh])
}

/// Aspect-consistency value alone, for pinned-weight evaluations.
pub(crate) fn aspect_term<S: Scalar>(p: &BBox<S>, g: &BBox<S>) -> S {
    aspect_term_grad(p, g).0
}

/// CIoU value with the aspect weight pinned to a constant, matching the
/// detachment in [`ciou_loss`]. Used by the gradient checker.
pub(crate) fn ciou_value_pinned<S: Scalar>(p: &BBox<S>, g: &BBox<S>, alpha: S) -> S {
    let one_m_iou = S::one() - iou(p, g);
    let dist = center_dist2(p, g) / enclosing_diag2(p, g).max(sc::<S>(EPS));
    one_m_iou + dist + alpha * aspect_term(p, g)
}

fn wiou_v1_core<S: Scalar>(p: &BBox<S>, g: &BBox<S>) -> (LossValueGrad<S>, S) {
    let ge = geom(p, g);
    let c2_frozen = ge.c2.max(sc::<S>(EPS));
    let attention = (ge.rho2 / c2_frozen).exp();
    let liou = S::one() - ge.iou;
    let mut grad = [S::zero(); 4];
    for (i, g) in grad.iter_mut().enumerate() {
        *g = attention * (ge.d_rho2[i] / c2_frozen * liou - ge.d_iou[i]);
    }
    (
        LossValueGrad {
            value: attention * liou,
            grad,
        },
        liou,
    )
}

/// WIoU v1: `exp(rho^2 / c^2) * (1 - IoU)` with the enclosing diagonal
/// detached.
pub fn wiou_v1_loss<S: Scalar>(p: &BBox<S>, g: &BBox<S>) -> LossValueGrad<S> {
    if p == g {
        return LossValueGrad::zero();
    }
    wiou_v1_core(p, g).0
}

/// WIoU v1 value with the enclosing diagonal pinned to a constant. Used
/// by the gradient checker.
pub(crate) fn wiou_v1_value_pinned<S: Scalar>(p: &BBox<S>, g: &BBox<S>, c2: S) -> S {
    (center_dist2(p, g) / c2).exp() * (S::one() - iou(p, g))
}

/// Non-monotonic focusing gain `r(beta) = beta / (delta * alpha^(beta -
/// delta))`. Equals 1 exactly at `beta = delta` and peaks at
/// `beta = 1/ln(alpha)`.
pub fn focusing_gain<S: Scalar>(beta: S, alpha: S, delta: S) -> S {
    beta / (delta * alpha.powf(beta - delta))
}

/// Running mean of `1 - IoU` plus the focusing hyperparameters shared by
/// WIoU v2 and v3.
#[derive(Debug, Clone, Serialize)]
pub struct WiouState<S> {
    mean: S,
    alpha: S,
    delta: S,
    momentum: S,
    updates: u64,
}

impl<S: Scalar> WiouState<S> {
    pub const DEFAULT_ALPHA: f64 = 1.9;
    pub const DEFAULT_DELTA: f64 = 3.0;
    pub const DEFAULT_MOMENTUM: f64 = 0.01;

    /// The mean starts at 1, the loss of a fully disjoint pair.
    pub fn new(alpha: f64, delta: f64, momentum: f64) -> Result<Self, LossError> {
        if !alpha.is_finite() || alpha <= 1.0 {
            return Err(LossError::BadHyper {
                what: "alpha",
                constraint: "> 1",
                got: alpha,
            });
        }
        if !delta.is_finite() || delta <= 0.0 {
            return Err(LossError::BadHyper {
                what: "delta",
                constraint: "> 0",
                got: delta,
            });
        }
        if !momentum.is_finite() || momentum <= 0.0 || momentum > 1.0 {
            return Err(LossError::BadHyper {
                what: "momentum",
                constraint: "in (0, 1]",
                got: momentum,
            });
        }
        Ok(WiouState {
            mean: S::one(),
            alpha: sc(alpha),
            delta: sc(delta),
            momentum: sc(momentum),
            updates: 0,
        })
    }

    pub fn mean(&self) -> S {
        self.mean
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    pub fn delta(&self) -> S {
        self.delta
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn update(&mut self, liou: S) {
        self.mean = (S::one() - self.momentum) * self.mean + self.momentum * liou;
        self.updates += 1;
    }
}

impl<S: Scalar> Default for WiouState<S> {
    fn default() -> Self {
        Self::new(
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_DELTA,
            Self::DEFAULT_MOMENTUM,
        )
        .expect("default hyperparameters are valid")
    }
}

/// WIoU v2: v1 scaled by the detached mean-normalized gain
/// `((1 - IoU) / mean)^0.5`. Reads the running mean before updating it.
pub fn wiou_v2_loss<S: Scalar>(
    p: &BBox<S>,
    g: &BBox<S>,
    state: &mut WiouState<S>,
) -> FocusedLoss<S> {
    const GAMMA: f64 = 0.5;
    if p == g {
        state.update(S::zero());
        return FocusedLoss {
            loss: LossValueGrad::zero(),
            beta: S::zero(),
            r: S::zero(),
        };
    }
    let (base, liou) = wiou_v1_core(p, g);
    let beta = liou / state.mean().max(sc::<S>(EPS));
    let r = beta.powf(sc(GAMMA));
    state.update(liou);
    FocusedLoss {
        loss: base.scaled(r),
        beta,
        r,
    }
}

/// WIoU v3: v1 scaled by the detached focusing gain `r(beta)` where
/// `beta = (1 - IoU) / mean`. Reads the running mean before updating it.
pub fn wiou_v3_loss<S: Scalar>(
    p: &BBox<S>,
    g: &BBox<S>,
    state: &mut WiouState<S>,
) -> FocusedLoss<S> {
    if p == g {
        state.update(S::zero());
        return FocusedLoss {
            loss: LossValueGrad::zero(),
            beta: S::zero(),
            r: S::zero(),
        };
    }
    let (base, liou) = wiou_v1_core(p, g);
    let beta = liou / state.mean().max(sc::<S>(EPS));
    let r = focusing_gain(beta, state.alpha, state.delta);
    state.update(liou);
    FocusedLoss {
        loss: base.scaled(r),
        beta,
        r,
    }
}

/// The loss family selectable from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossKind {
    Iou,
    Ciou,
    WiouV1,
    WiouV2,
    WiouV3,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Iou,
        LossKind::Ciou,
        LossKind::WiouV1,
        LossKind::WiouV2,
        LossKind::WiouV3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Iou => "iou",
            LossKind::Ciou => "ciou",
            LossKind::WiouV1 => "wiou_v1",
            LossKind::WiouV2 => "wiou_v2",
            LossKind::WiouV3 => "wiou_v3",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, LossError> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LossError::UnknownKind(s.to_string()))
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Evaluate any loss of the family through one entry point. Non-focused
/// kinds leave the state untouched and report `r = 1`.
pub fn eval_loss<S: Scalar>(
    kind: LossKind,
    p: &BBox<S>,
    g: &BBox<S>,
    state: &mut WiouState<S>,
) -> FocusedLoss<S> {
    let plain = |loss: LossValueGrad<S>| FocusedLoss {
        loss,
        beta: S::zero(),
        r: S::one(),
    };
    match kind {
        LossKind::Iou => plain(iou_loss(p, g)),
        LossKind::Ciou => plain(ciou_loss(p, g)),
        LossKind::WiouV1 => plain(wiou_v1_loss(p, g)),
        LossKind::WiouV2 => wiou_v2_loss(p, g, state),
        LossKind::WiouV3 => wiou_v3_loss(p, g, state),
    }
}
