//! Turns a parsed [`ModelConfig`] into a resolved [`ModelGraph`]: applies
//! width/depth scaling, resolves layer references, propagates channel
//! counts and cumulative strides, and expands every block once so that
//! structural invariants fail here with a layer index.

use super::{LayerEntry, LayerNode, ModelConfig, ModelGraph, Value};
use crate::blocks::{expand_block, BlockError, BlockKind, BlockSpec, Expansion};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("layer {layer}: reference {reference} resolves outside the graph")]
    DanglingFrom { layer: usize, reference: i64 },
    #[error("layer {layer}: {module} cannot repeat sequentially")]
    RepeatUnsupported { layer: usize, module: String },
    #[error("layer {layer}: upsampling a stride-{stride} map would be fractional")]
    FractionalStride { layer: usize, stride: usize },
    #[error("layer {layer}: concat inputs have mismatched strides {strides:?}")]
    StrideMismatch { layer: usize, strides: Vec<usize> },
    #[error("model must have exactly one Detect layer, found {count}")]
    DetectCount { count: usize },
    #[error("Detect must be the last layer, found it at index {index}")]
    DetectNotLast { index: usize },
    #[error("layer {layer}: {what}")]
    BadArg { layer: usize, what: String },
    #[error("{what}")]
    BadConfig { what: String },
    #[error("layer {layer}: {source}")]
    Block { layer: usize, source: BlockError },
}

/// Scale a channel count by the width multiple: nearest multiple of 8
/// (half away from zero), floored at 8. Detect output channels are fixed
/// by the anchor and class counts and never pass through here.
pub fn scale_width(c: i64, width_multiple: f64) -> usize {
    let scaled = (c as f64 * width_multiple / 8.0).round() * 8.0;
    (scaled as i64).max(8) as usize
}

/// Scale a repeat count by the depth multiple. A count of 1 is exempt;
/// anything larger rounds to the nearest integer with a floor of 1.
pub fn scale_depth(n: i64, depth_multiple: f64) -> usize {
    if n <= 1 {
        1
    } else {
        ((n as f64 * depth_multiple).round() as i64).max(1) as usize
    }
}

pub fn build_graph(cfg: &ModelConfig) -> Result<ModelGraph, BuildError> {
    validate_config(cfg)?;
    let nc = cfg.nc as usize;
    let anchors: Vec<Vec<f64>> = cfg
        .anchors
        .iter()
        .map(|scale| scale.iter().map(|&v| v as f64).collect())
        .collect();

    let mut nodes: Vec<LayerNode> = Vec::new();
    let mut detect_index = None;
    let mut detect_count = 0;
    let mut detect_strides = Vec::new();

    for (i, entry) in cfg.backbone.iter().chain(cfg.head.iter()).enumerate() {
        let mut inputs = Vec::new();
        let mut c_ins = Vec::new();
        let mut in_strides = Vec::new();
        for &r in entry.from.refs() {
            let resolved = if r < 0 { i as i64 + r } else { r };
            if resolved < -1 || resolved >= i as i64 {
                return Err(BuildError::DanglingFrom {
                    layer: i,
                    reference: r,
                });
            }
            inputs.push(resolved as isize);
            if resolved < 0 {
                c_ins.push(3);
                in_strides.push(1);
            } else {
                c_ins.push(nodes[resolved as usize].c_out);
                in_strides.push(nodes[resolved as usize].stride);
            }
        }

        let scaled_n = scale_depth(entry.repeats, cfg.depth_multiple);
        let made = make_kind(entry, cfg, &c_ins, scaled_n, i)?;
        if made.repeat > 1 && inputs.len() != 1 {
            return Err(BuildError::RepeatUnsupported {
                layer: i,
                module: entry.module.clone(),
            });
        }

        if matches!(made.kind, BlockKind::Detect { .. }) {
            detect_count += 1;
            detect_index = Some(i);
            detect_strides = in_strides.clone();
        } else if matches!(made.kind, BlockKind::Concat)
            && in_strides.windows(2).any(|w| w[0] != w[1])
        {
            return Err(BuildError::StrideMismatch {
                layer: i,
                strides: in_strides,
            });
        }

        let stride = node_stride(&made.kind, in_strides[0], made.repeat, i)?;
        let spec = BlockSpec {
            kind: made.kind.clone(),
            c_ins,
            c_out: made.c_out,
        };
        let expansion = expand_layer(&spec, i)?;
        let rep_expansion = if made.repeat > 1 {
            let rep_spec = BlockSpec {
                kind: made.kind,
                c_ins: vec![made.c_out],
                c_out: made.c_out,
            };
            Some(expand_layer(&rep_spec, i)?)
        } else {
            None
        };

        nodes.push(LayerNode {
            index: i,
            spec,
            inputs,
            c_out: made.c_out,
            repeat: made.repeat,
            stride,
            expansion,
            rep_expansion,
        });
    }

    if detect_count != 1 {
        return Err(BuildError::DetectCount {
            count: detect_count,
        });
    }
    let detect_index = detect_index.unwrap();
    if detect_index != nodes.len() - 1 {
        return Err(BuildError::DetectNotLast {
            index: detect_index,
        });
    }

    Ok(ModelGraph {
        nc,
        anchors,
        nodes,
        detect_index,
        detect_strides,
    })
}

fn validate_config(cfg: &ModelConfig) -> Result<(), BuildError> {
    let bad = |what: String| Err(BuildError::BadConfig { what });
    if cfg.nc < 1 {
        return bad(format!("nc must be >= 1, got {}", cfg.nc));
    }
    if !(cfg.depth_multiple > 0.0 && cfg.depth_multiple <= 2.0) {
        return bad(format!(
            "depth_multiple must be in (0, 2], got {}",
            cfg.depth_multiple
        ));
    }
    if !(cfg.width_multiple > 0.0 && cfg.width_multiple <= 2.0) {
        return bad(format!(
            "width_multiple must be in (0, 2], got {}",
            cfg.width_multiple
        ));
    }
    if cfg.anchors.len() != 3 || cfg.anchors.iter().any(|s| s.len() != 6) {
        return bad("anchors must be 3 scales of 6 values".into());
    }
    if cfg.backbone.is_empty() || cfg.head.is_empty() {
        return bad("backbone and head must not be empty".into());
    }
    Ok(())
}

struct MadeKind {
    kind: BlockKind,
    c_out: usize,
    repeat: usize,
}

fn make_kind(
    entry: &LayerEntry,
    cfg: &ModelConfig,
    c_ins: &[usize],
    scaled_n: usize,
    layer: usize,
) -> Result<MadeKind, BuildError> {
    let wm = cfg.width_multiple;
    let int = |idx: usize, what: &str| -> Result<i64, BuildError> {
        match entry.args.get(idx) {
            Some(Value::Int(v)) => Ok(*v),
            other => Err(BuildError::BadArg {
                layer,
                what: format!("{what} must be an int, got {other:?}"),
            }),
        }
    };
    let opt_int = |idx: usize, default: i64, what: &str| -> Result<i64, BuildError> {
        match entry.args.get(idx) {
            None => Ok(default),
            Some(Value::Int(v)) => Ok(*v),
            other => Err(BuildError::BadArg {
                layer,
                what: format!("{what} must be an int, got {other:?}"),
            }),
        }
    };
    let shortcut = |idx: usize| -> Result<bool, BuildError> {
        match entry.args.get(idx) {
            None => Ok(true),
            Some(Value::Ident(s)) if s == "true" => Ok(true),
            Some(Value::Ident(s)) if s == "false" => Ok(false),
            other => Err(BuildError::BadArg {
                layer,
                what: format!("shortcut must be true or false, got {other:?}"),
            }),
        }
    };
    let single = |made: MadeKind| Ok(made);

    match entry.module.as_str() {
        "Conv" => {
            let c_out = scale_width(int(0, "c_out")?, wm);
            let k = int(1, "kernel")? as usize;
            let s = int(2, "stride")? as usize;
            let p = match entry.args.get(3) {
                None => None,
                Some(_) => Some(int(3, "padding")? as usize),
            };
            single(MadeKind {
                kind: BlockKind::ConvBnAct { k, s, p },
                c_out,
                repeat: scaled_n,
            })
        }
        "Bottleneck" => single(MadeKind {
            kind: BlockKind::Bottleneck {
                shortcut: shortcut(1)?,
                e: 0.5,
            },
            c_out: scale_width(int(0, "c_out")?, wm),
            repeat: scaled_n,
        }),
        "C3" | "C3Ghost" | "C3Faster" => {
            let c_out = scale_width(int(0, "c_out")?, wm);
            let sc = shortcut(1)?;
            let kind = match entry.module.as_str() {
                "C3" => BlockKind::C3 {
                    n: scaled_n,
                    shortcut: sc,
                    e: 0.5,
                },
                "C3Ghost" => BlockKind::C3Ghost {
                    n: scaled_n,
                    shortcut: sc,
                    e: 0.5,
                },
                _ => BlockKind::C3Faster {
                    n: scaled_n,
                    shortcut: sc,
                    e: 0.5,
                },
            };
            single(MadeKind {
                kind,
                c_out,
                repeat: 1,
            })
        }
        "SPPF" => single(MadeKind {
            kind: BlockKind::Sppf {
                k: int(1, "pool kernel")? as usize,
            },
            c_out: scale_width(int(0, "c_out")?, wm),
            repeat: scaled_n,
        }),
        "GhostConv" => single(MadeKind {
            kind: BlockKind::GhostConv {
                k: opt_int(1, 1, "kernel")? as usize,
                s: opt_int(2, 1, "stride")? as usize,
                act: true,
            },
            c_out: scale_width(int(0, "c_out")?, wm),
            repeat: scaled_n,
        }),
        "GhostBottleneck" => single(MadeKind {
            kind: BlockKind::GhostBottleneck,
            c_out: scale_width(int(0, "c_out")?, wm),
            repeat: scaled_n,
        }),
        "PConv" => single(MadeKind {
            kind: BlockKind::PConv {
                k: opt_int(1, 3, "kernel")? as usize,
                r_p: 0.25,
            },
            c_out: scale_width(int(0, "c_out")?, wm),
            repeat: scaled_n,
        }),
        "FasterBlock" => single(MadeKind {
            kind: BlockKind::FasterBlock { e: 2.0, r_p: 0.25 },
            c_out: scale_width(int(0, "c_out")?, wm),
            repeat: scaled_n,
        }),
        "Upsample" => single(MadeKind {
            kind: BlockKind::Upsample,
            c_out: c_ins[0],
            repeat: scaled_n,
        }),
        "Concat" => single(MadeKind {
            kind: BlockKind::Concat,
            c_out: c_ins.iter().sum(),
            repeat: 1,
        }),
        "Detect" => {
            let nc = cfg.nc as usize;
            let anchors: Vec<Vec<f64>> = cfg
                .anchors
                .iter()
                .map(|s| s.iter().map(|&v| v as f64).collect())
                .collect();
            let na = anchors[0].len() / 2;
            single(MadeKind {
                kind: BlockKind::Detect { nc, anchors },
                c_out: na * (nc + 5),
                repeat: 1,
            })
        }
        other => Err(BuildError::BadArg {
            layer,
            what: format!("unknown module `{other}`"),
        }),
    }
}

fn node_stride(
    kind: &BlockKind,
    base: usize,
    repeat: usize,
    layer: usize,
) -> Result<usize, BuildError> {
    let mut stride = base;
    for _ in 0..repeat {
        match kind {
            BlockKind::ConvBnAct { s, .. } | BlockKind::GhostConv { s, .. } => stride *= s,
            BlockKind::Upsample => {
                if !stride.is_multiple_of(2) {
                    return Err(BuildError::FractionalStride { layer, stride });
                }
                stride /= 2;
            }
            _ => {}
        }
    }
    Ok(stride)
}

fn expand_layer(spec: &BlockSpec, layer: usize) -> Result<Expansion, BuildError> {
    expand_block(spec).map_err(|source| BuildError::Block { layer, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_model_config;

    #[test]
    fn width_scaling_rounds_to_multiples_of_eight() {
        assert_eq!(scale_width(64, 0.5), 32);
        assert_eq!(scale_width(1024, 0.5), 512);
        assert_eq!(scale_width(64, 0.33), 24);
        assert_eq!(scale_width(8, 0.25), 8);
        assert_eq!(scale_width(100, 0.5), 48);
        assert_eq!(scale_width(44, 0.5), 24);
    }

    #[test]
    fn depth_scaling_exempts_single_repeats() {
        assert_eq!(scale_depth(1, 0.33), 1);
        assert_eq!(scale_depth(3, 0.33), 1);
        assert_eq!(scale_depth(6, 0.33), 2);
        assert_eq!(scale_depth(9, 0.33), 3);
        assert_eq!(scale_depth(3, 1.0), 3);
        assert_eq!(scale_depth(2, 0.1), 1);
    }

    fn tiny_config(detect_last: bool) -> String {
        let tail = if detect_last {
            "  - [[2, 3], 1, Concat, [1]]\n  - [[1, 3, 4], 1, Detect, [nc, anchors]]\n"
        } else {
            "  - [[1, 2, 3], 1, Detect, [nc, anchors]]\n  - [-1, 1, Conv, [64, 1, 1]]\n"
        };
        format!(
            "\
nc: 2
depth_multiple: 1.0
width_multiple: 1.0
anchors:
  - [10, 13, 16, 30, 33, 23]
  - [30, 61, 62, 45, 59, 119]
  - [116, 90, 156, 198, 373, 326]
backbone:
  - [-1, 1, Conv, [16, 3, 2]]
  - [-1, 1, Conv, [16, 3, 2]]
  - [-1, 1, Conv, [16, 3, 2]]
  - [-1, 1, Conv, [32, 3, 1]]
head:
{tail}"
        )
    }

    #[test]
    fn strides_accumulate_through_convs() {
        let cfg = parse_model_config(&tiny_config(true)).unwrap();
        let g = build_graph(&cfg).unwrap();
        let strides: Vec<usize> = g.nodes.iter().map(|n| n.stride).collect();
        assert_eq!(&strides[..4], &[2, 4, 8, 8]);
        assert_eq!(g.detect_strides, vec![4, 8, 8]);
        assert_eq!(g.detect_channels(), 3 * (2 + 5));
    }

    #[test]
    fn concat_sums_channels() {
        let cfg = parse_model_config(&tiny_config(true)).unwrap();
        let g = build_graph(&cfg).unwrap();
        assert_eq!(g.nodes[4].c_out, 48);
    }

    #[test]
    fn detect_must_be_last() {
        let cfg = parse_model_config(&tiny_config(false)).unwrap();
        let err = build_graph(&cfg).unwrap_err();
        assert!(matches!(err, BuildError::DetectNotLast { index: 4 }));
    }

    #[test]
    fn dangling_reference_names_the_layer() {
        let text = tiny_config(true).replace("[[2, 3], 1, Concat", "[[2, 9], 1, Concat");
        let cfg = parse_model_config(&text).unwrap();
        let err = build_graph(&cfg).unwrap_err();
        match err {
            BuildError::DanglingFrom { layer, reference } => {
                assert_eq!(layer, 4);
                assert_eq!(reference, 9);
            }
            other => panic!("expected dangling reference, got {other}"),
        }
    }

    #[test]
    fn concat_stride_mismatch_is_rejected() {
        let text = tiny_config(true).replace("[[2, 3], 1, Concat", "[[1, 3], 1, Concat");
        let cfg = parse_model_config(&text).unwrap();
        let err = build_graph(&cfg).unwrap_err();
        assert!(matches!(err, BuildError::StrideMismatch { layer: 4, .. }));
    }

    #[test]
    fn block_invariant_failures_carry_the_layer_index() {
        let text = tiny_config(true).replace("[-1, 1, Conv, [32, 3, 1]]", "[-1, 1, GhostBottleneck, [32]]");
        let cfg = parse_model_config(&text).unwrap();
        let err = build_graph(&cfg).unwrap_err();
        match err {
            BuildError::Block { layer, .. } => assert_eq!(layer, 3),
            other => panic!("expected block error, got {other}"),
        }
    }
}
