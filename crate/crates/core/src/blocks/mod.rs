//! The block zoo: baseline YOLOv5 blocks plus the Ghost and FasterNet
//! replacements.
//!
//! Every block is defined by its deterministic expansion into primitive
//! steps (convolution, BN affine, SiLU, pooling, upsample, slice, concat,
//! add). The expansion is the single source of truth: execution walks it,
//! parameter counts sum over it, and MAC counts propagate shapes through it.

mod exec;
mod expand;

pub use exec::{
    bn_affine, block_forward, block_macs, block_params, expansion_macs, expansion_out_hw,
    expansion_params, forward_expansion, init_block_weights, step_out_hw, BlockWeights,
    PrimWeights,
};
pub use expand::expand_block;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("{kind}: {constraint}")]
    Invariant { kind: &'static str, constraint: String },
    #[error("{kind} step {step} ({prim}): {source}")]
    Exec { kind: &'static str, step: usize, prim: &'static str, source: TensorError },
    #[error("{kind}: weights mismatch at step {step}: {detail}")]
    WeightMismatch { kind: &'static str, step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, BlockError>;

/// One block of the model: its kind with kind-specific hyperparameters,
/// plus resolved input and output channel counts.
///
/// `c_ins` holds one entry per input edge; only `Concat` and `Detect` take
/// more than one. For `Detect`, `c_out` is the per-scale map channel count
/// `na * (nc + 5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub c_ins: Vec<usize>,
    pub c_out: usize,
}

/// Block kind plus its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    /// Bias-less convolution, BN affine, SiLU. `p` of `None` means same
    /// padding `k / 2`.
    ConvBnAct { k: usize, s: usize, p: Option<usize> },
    /// 1x1 reduce to `e * c_out`, 3x3 expand back, optional residual add.
    Bottleneck { shortcut: bool, e: f64 },
    /// Dual-branch CSP block: two 1x1 projections to `e * c_out`, branch A
    /// through `n` Bottleneck units (inner expansion 1.0), concat, 1x1 fuse.
    C3 { n: usize, shortcut: bool, e: f64 },
    /// C3 with GhostBottleneck inner units.
    C3Ghost { n: usize, shortcut: bool, e: f64 },
    /// C3 with FasterBlock inner units.
    C3Faster { n: usize, shortcut: bool, e: f64 },
    /// 1x1 reduce to half, three chained same-size max pools, concat of the
    /// four stages, 1x1 fuse.
    Sppf { k: usize },
    /// Primary convolution producing half the output channels plus a cheap
    /// depthwise 5x5 producing the other half, concatenated. `act` false
    /// drops the SiLU after both BNs (linear form).
    GhostConv { k: usize, s: usize, act: bool },
    /// GhostConv down to half channels, linear GhostConv back up, residual
    /// add. Stride-1 form only; requires `c_in == c_out`.
    GhostBottleneck,
    /// Partial convolution: a dense `k x k` conv over the first
    /// `r_p * c` channels, remainder passed through untouched.
    PConv { k: usize, r_p: f64 },
    /// PConv then a pointwise expand to `e * c` (with BN and SiLU) and a
    /// pointwise project back (BN, no activation), residual add.
    FasterBlock { e: f64, r_p: f64 },
    /// Nearest-neighbor 2x upsample.
    Upsample,
    /// Channel concatenation of all inputs.
    Concat,
    /// Per-scale 1x1 convolution with bias to `na * (nc + 5)` channels.
    Detect { nc: usize, anchors: Vec<Vec<f64>> },
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::ConvBnAct { .. } => "Conv",
            BlockKind::Bottleneck { .. } => "Bottleneck",
            BlockKind::C3 { .. } => "C3",
            BlockKind::C3Ghost { .. } => "C3Ghost",
            BlockKind::C3Faster { .. } => "C3Faster",
            BlockKind::Sppf { .. } => "SPPF",
            BlockKind::GhostConv { .. } => "GhostConv",
            BlockKind::GhostBottleneck => "GhostBottleneck",
            BlockKind::PConv { .. } => "PConv",
            BlockKind::FasterBlock { .. } => "FasterBlock",
            BlockKind::Upsample => "Upsample",
            BlockKind::Concat => "Concat",
            BlockKind::Detect { .. } => "Detect",
        }
    }
}

/// Data source of a step: one of the block's external inputs, or the output
/// of an earlier step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Input(usize),
    Step(usize),
}

/// Primitive operations a block expands into.
#[derive(Debug, Clone, PartialEq)]
pub enum Prim {
    Conv { c_in: usize, c_out: usize, k: usize, s: usize, p: usize, groups: usize, bias: bool },
    BnAffine { c: usize },
    Silu,
    MaxPool { k: usize, s: usize, p: usize },
    Upsample2x,
    Slice { lo: usize, hi: usize },
    Concat,
    Add,
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::Conv { .. } => "conv",
            Prim::BnAffine { .. } => "bn",
            Prim::Silu => "silu",
            Prim::MaxPool { .. } => "maxpool",
            Prim::Upsample2x => "upsample",
            Prim::Slice { .. } => "slice",
            Prim::Concat => "concat",
            Prim::Add => "add",
        }
    }
}

/// One primitive step and where its inputs come from.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub prim: Prim,
    pub inputs: Vec<Src>,
}

/// A block's canonical primitive sequence. Steps are topologically ordered;
/// `outputs` lists the block's results (several only for Detect).
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub steps: Vec<Step>,
    pub outputs: Vec<Src>,
}

impl Expansion {
    /// Number of convolution steps, a quick structural fingerprint.
    pub fn conv_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.prim, Prim::Conv { .. })).count()
    }

    /// Number of residual adds.
    pub fn add_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.prim, Prim::Add)).count()
    }
}
