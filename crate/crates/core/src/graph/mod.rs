//! Model-definition parsing, depth/width scaling, graph construction, and
//! whole-model forward execution.

mod build;
mod builtin;
mod forward;
mod parse;

pub use build::{build_graph, scale_depth, scale_width, BuildError};
pub use builtin::{builtin_model_text, BASELINE_TEXT, BUILTIN_NAMES, FOSTC3NET_TEXT};
pub use forward::{forward_graph, graph_params, init_model_weights, ForwardError, ModelWeights};
pub use parse::{parse_model_config, serialize_model_config, ParseError, ParseErrorKind};

use crate::blocks::{BlockSpec, Expansion};

/// Literal value appearing in a model definition: a scalar or a bracketed
/// list.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Ident(String),
    List(Vec<Value>),
}

/// Layer reference(s) of an entry. Negative values are relative to the
/// entry's own index; `-1` at entry 0 refers to the model input.
#[derive(Debug, Clone, PartialEq)]
pub enum FromRef {
    Single(i64),
    Multi(Vec<i64>),
}

impl FromRef {
    pub fn refs(&self) -> &[i64] {
        match self {
            FromRef::Single(v) => std::slice::from_ref(v),
            FromRef::Multi(v) => v,
        }
    }
}

/// One line of the backbone or head section: where its inputs come from,
/// how often it repeats, which module it instantiates, and the module's
/// literal argument list.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEntry {
    pub from: FromRef,
    pub repeats: i64,
    pub module: String,
    pub args: Vec<Value>,
}

/// Parsed model definition before scaling and graph resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub nc: i64,
    pub depth_multiple: f64,
    pub width_multiple: f64,
    /// Three scales of three (w, h) anchor pairs, in pixels.
    pub anchors: Vec<Vec<i64>>,
    pub backbone: Vec<LayerEntry>,
    pub head: Vec<LayerEntry>,
}

/// One resolved node of the model graph.
#[derive(Debug, Clone)]
pub struct LayerNode {
    pub index: usize,
    /// Block spec with scaled channels. `c_ins` matches `inputs` in order.
    pub spec: BlockSpec,
    /// Producer node indices; `-1` is the model input image.
    pub inputs: Vec<isize>,
    pub c_out: usize,
    /// Sequential repetitions of the block (always 1 for the C3 family,
    /// whose repeats become inner units).
    pub repeat: usize,
    /// Cumulative downsampling factor relative to the input image.
    pub stride: usize,
    /// Cached expansion of `spec`.
    pub expansion: Expansion,
    /// Expansion for repetitions after the first, where the block's input
    /// channels equal its output channels.
    pub rep_expansion: Option<Expansion>,
}

/// Scaled, resolved, topologically ordered model graph. The Detect node is
/// always last.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub nc: usize,
    /// Anchor table as floats, one list of (w, h) pairs per detection scale.
    pub anchors: Vec<Vec<f64>>,
    pub nodes: Vec<LayerNode>,
    pub detect_index: usize,
    /// Downsampling factor of each Detect input scale, e.g. `[8, 16, 32]`.
    pub detect_strides: Vec<usize>,
}

impl ModelGraph {
    /// Channels of the raw per-scale detection maps, `na * (nc + 5)`.
    pub fn detect_channels(&self) -> usize {
        self.nodes[self.detect_index].c_out
    }
}
