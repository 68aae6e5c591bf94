//! Weight storage, forward execution, and parameter/MAC accounting over
//! block expansions.

use rand::Rng;

use super::{expand_block, BlockError, BlockSpec, Expansion, Prim, Result, Src};
use crate::scalar::Scalar;
use crate::tensor::{self, conv_out_size, ConvWeights, Tensor};

/// Weights attached to one primitive step. Steps without trainable state
/// carry `None`.
#[derive(Debug, Clone)]
pub enum PrimWeights<S: Scalar> {
    Conv(ConvWeights<S>),
    Bn { gamma: Vec<S>, beta: Vec<S> },
    None,
}

/// Ordered weights for a block, aligned index-for-index with its expansion
/// steps.
#[derive(Debug, Clone)]
pub struct BlockWeights<S: Scalar> {
    pub prims: Vec<PrimWeights<S>>,
}

impl<S: Scalar> BlockWeights<S> {
    /// Total stored floats, BN affine pairs included. Used by tests to cross
    /// check the analytic parameter counter against actual storage.
    pub fn float_count(&self) -> u64 {
        self.prims
            .iter()
            .map(|p| match p {
                PrimWeights::Conv(c) => {
                    c.kernel.len() as u64 + c.bias.as_ref().map_or(0, |b| b.len() as u64)
                }
                PrimWeights::Bn { gamma, beta } => (gamma.len() + beta.len()) as u64,
                PrimWeights::None => 0,
            })
            .sum()
    }
}

/// Draws fresh weights for an expansion: convolution kernels and biases
/// uniform in `±sqrt(1 / fan_in)`, BN affine at identity (gamma 1, beta 0).
pub fn init_block_weights<S: Scalar, R: Rng>(exp: &Expansion, rng: &mut R) -> BlockWeights<S> {
    let prims = exp
        .steps
        .iter()
        .map(|step| match step.prim {
            Prim::Conv { c_in, c_out, k, s, p, groups, bias } => {
                let fan_in = (c_in / groups) * k * k;
                let bound = (1.0 / fan_in as f64).sqrt();
                let kernel =
                    Tensor::from_rng_uniform([c_out, c_in / groups, k, k], rng, -bound, bound);
                let bias = bias.then(|| {
                    (0..c_out).map(|_| S::from_f64_lit(bound * (2.0 * rng.gen::<f64>() - 1.0))).collect()
                });
                PrimWeights::Conv(
                    ConvWeights::new(kernel, bias, (s, s), (p, p), groups)
                        .expect("expansion emits structurally valid conv hyperparameters"),
                )
            }
            Prim::BnAffine { c } => {
                PrimWeights::Bn { gamma: vec![S::one(); c], beta: vec![S::zero(); c] }
            }
            _ => PrimWeights::None,
        })
        .collect();
    BlockWeights { prims }
}

/// Per-channel affine `y = gamma[c] * x + beta[c]`, the inference form of
/// batch normalization.
pub fn bn_affine<S: Scalar>(t: &Tensor<S>, gamma: &[S], beta: &[S]) -> tensor::Result<Tensor<S>> {
    if gamma.len() != t.c() || beta.len() != t.c() {
        return Err(tensor::TensorError::ChannelMismatch {
            what: "bn_affine",
            expected: t.c(),
            got: gamma.len().min(beta.len()),
        });
    }
    let [n, c, h, w] = t.shape();
    let plane = h * w;
    let mut out = t.clone();
    let data = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let start = (ni * c + ci) * plane;
            for v in &mut data[start..start + plane] {
                *v = gamma[ci] * *v + beta[ci];
            }
        }
    }
    Ok(out)
}

/// Executes a block: expands the spec, checks the weights against the
/// expansion, and runs the steps. Returns one tensor per block output
/// (several only for Detect).
pub fn block_forward<S: Scalar>(
    spec: &BlockSpec,
    weights: &BlockWeights<S>,
    inputs: &[&Tensor<S>],
) -> Result<Vec<Tensor<S>>> {
    let exp = expand_block(spec)?;
    forward_expansion(spec, &exp, weights, inputs)
}

/// Executes a pre-computed expansion (the per-node fast path for graph
/// forward passes).
pub fn forward_expansion<S: Scalar>(
    spec: &BlockSpec,
    exp: &Expansion,
    weights: &BlockWeights<S>,
    inputs: &[&Tensor<S>],
) -> Result<Vec<Tensor<S>>> {
    let kind = spec.kind.name();
    if inputs.len() != spec.c_ins.len() {
        return Err(BlockError::Invariant {
            kind,
            constraint: format!("expects {} inputs, got {}", spec.c_ins.len(), inputs.len()),
        });
    }
    for (i, (t, &c)) in inputs.iter().zip(&spec.c_ins).enumerate() {
        if t.c() != c {
            return Err(BlockError::Invariant {
                kind,
                constraint: format!("input {i} has {} channels, expected {c}", t.c()),
            });
        }
    }
    if weights.prims.len() != exp.steps.len() {
        return Err(BlockError::WeightMismatch {
            kind,
            step: weights.prims.len().min(exp.steps.len()),
            detail: format!("{} weight slots for {} steps", weights.prims.len(), exp.steps.len()),
        });
    }

    let mut computed: Vec<Tensor<S>> = Vec::with_capacity(exp.steps.len());
    for (i, step) in exp.steps.iter().enumerate() {
        let fetch = |src: Src| -> &Tensor<S> {
            match src {
                Src::Input(j) => inputs[j],
                Src::Step(j) => &computed[j],
            }
        };
        let wrap = |e: tensor::TensorError| BlockError::Exec {
            kind,
            step: i,
            prim: step.prim.name(),
            source: e,
        };
        let out = match (&step.prim, &weights.prims[i]) {
            (Prim::Conv { c_in, c_out, k, s, p, groups, bias }, PrimWeights::Conv(cw)) => {
                let want = [*c_out, c_in / groups, *k, *k];
                let structural = cw.kernel.shape() == want
                    && cw.stride == (*s, *s)
                    && cw.padding == (*p, *p)
                    && cw.groups == *groups
                    && cw.bias.is_some() == *bias;
                if !structural {
                    return Err(BlockError::WeightMismatch {
                        kind,
                        step: i,
                        detail: format!(
                            "conv weights {:?} (groups {}) do not match declared {:?} (groups {})",
                            cw.kernel.shape(),
                            cw.groups,
                            want,
                            groups
                        ),
                    });
                }
                tensor::conv2d(fetch(step.inputs[0]), cw).map_err(wrap)?
            }
            (Prim::BnAffine { c }, PrimWeights::Bn { gamma, beta }) => {
                if gamma.len() != *c || beta.len() != *c {
                    return Err(BlockError::WeightMismatch {
                        kind,
                        step: i,
                        detail: format!("bn affine over {} channels, declared {c}", gamma.len()),
                    });
                }
                bn_affine(fetch(step.inputs[0]), gamma, beta).map_err(wrap)?
            }
            (Prim::Silu, PrimWeights::None) => tensor::silu(fetch(step.inputs[0])),
            (Prim::MaxPool { k, s, p }, PrimWeights::None) => {
                tensor::maxpool2d(fetch(step.inputs[0]), *k, *s, *p).map_err(wrap)?
            }
            (Prim::Upsample2x, PrimWeights::None) => tensor::upsample_nearest2x(fetch(step.inputs[0])),
            (Prim::Slice { lo, hi }, PrimWeights::None) => {
                tensor::slice_channels(fetch(step.inputs[0]), *lo, *hi).map_err(wrap)?
            }
            (Prim::Concat, PrimWeights::None) => {
                let parts: Vec<&Tensor<S>> = step.inputs.iter().map(|&s| fetch(s)).collect();
                tensor::concat_channels(&parts).map_err(wrap)?
            }
            (Prim::Add, PrimWeights::None) => {
                tensor::add(fetch(step.inputs[0]), fetch(step.inputs[1])).map_err(wrap)?
            }
            (prim, _) => {
                return Err(BlockError::WeightMismatch {
                    kind,
                    step: i,
                    detail: format!("weight slot does not match step kind {}", prim.name()),
                });
            }
        };
        computed.push(out);
    }
    Ok(exp
        .outputs
        .iter()
        .map(|&src| match src {
            Src::Input(j) => inputs[j].clone(),
            Src::Step(j) => computed[j].clone(),
        })
        .collect())
}

/// Trainable parameter count of one expansion: conv kernels, conv biases,
/// and BN affine pairs (2 per channel). BN running statistics do not count.
pub fn expansion_params(exp: &Expansion) -> u64 {
    exp.steps
        .iter()
        .map(|step| match step.prim {
            Prim::Conv { c_in, c_out, k, groups, bias, .. } => {
                let weights = (k * k * (c_in / groups) * c_out) as u64;
                weights + if bias { c_out as u64 } else { 0 }
            }
            Prim::BnAffine { c } => 2 * c as u64,
            _ => 0,
        })
        .sum()
}

/// Parameter count of a block.
pub fn block_params(spec: &BlockSpec) -> Result<u64> {
    Ok(expansion_params(&expand_block(spec)?))
}

/// Spatial sizes each step produces, given the block's input sizes.
pub fn expansion_out_hw(
    kind: &'static str,
    exp: &Expansion,
    in_hw: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>> {
    let mut sizes: Vec<(usize, usize)> = Vec::with_capacity(exp.steps.len());
    for (i, step) in exp.steps.iter().enumerate() {
        let of = |src: Src| match src {
            Src::Input(j) => in_hw[j],
            Src::Step(j) => sizes[j],
        };
        let (h, w) = of(step.inputs[0]);
        let out = match step.prim {
            Prim::Conv { k, s, p, .. } => {
                match (conv_out_size(h, k, s, p), conv_out_size(w, k, s, p)) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
                    _ => {
                        return Err(BlockError::Invariant {
                            kind,
                            constraint: format!("step {i}: {k}x{k} conv leaves no output on {h}x{w}"),
                        })
                    }
                }
            }
            Prim::MaxPool { k, s, p } => {
                match (conv_out_size(h, k, s, p), conv_out_size(w, k, s, p)) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
                    _ => {
                        return Err(BlockError::Invariant {
                            kind,
                            constraint: format!("step {i}: {k}x{k} pool leaves no output on {h}x{w}"),
                        })
                    }
                }
            }
            Prim::Upsample2x => (2 * h, 2 * w),
            Prim::Concat | Prim::Add => {
                for &src in &step.inputs[1..] {
                    if of(src) != (h, w) {
                        return Err(BlockError::Invariant {
                            kind,
                            constraint: format!(
                                "step {i}: {} inputs differ spatially: {:?} vs {:?}",
                                step.prim.name(),
                                (h, w),
                                of(src)
                            ),
                        });
                    }
                }
                (h, w)
            }
            Prim::BnAffine { .. } | Prim::Silu | Prim::Slice { .. } => (h, w),
        };
        sizes.push(out);
    }
    Ok(sizes)
}

/// Spatial size of each step's output, resolved for the block outputs.
pub fn step_out_hw(
    kind: &'static str,
    exp: &Expansion,
    in_hw: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>> {
    let sizes = expansion_out_hw(kind, exp, in_hw)?;
    Ok(exp
        .outputs
        .iter()
        .map(|&src| match src {
            Src::Input(j) => in_hw[j],
            Src::Step(j) => sizes[j],
        })
        .collect())
}

/// Multiply-accumulate count of one expansion at the given input sizes.
/// Convolutions only: `k^2 * (c_in / groups) * c_out * out_h * out_w` per
/// conv step; pooling, activation, and elementwise steps cost zero.
pub fn expansion_macs(
    kind: &'static str,
    exp: &Expansion,
    in_hw: &[(usize, usize)],
) -> Result<u64> {
    let sizes = expansion_out_hw(kind, exp, in_hw)?;
    let mut total = 0u64;
    for (step, &(oh, ow)) in exp.steps.iter().zip(&sizes) {
        if let Prim::Conv { c_in, c_out, k, groups, .. } = step.prim {
            total += (k * k * (c_in / groups) * c_out) as u64 * (oh * ow) as u64;
        }
    }
    Ok(total)
}

/// MAC count of a block at the given per-input spatial sizes.
pub fn block_macs(spec: &BlockSpec, in_hw: &[(usize, usize)]) -> Result<u64> {
    let exp = expand_block(spec)?;
    expansion_macs(spec.kind.name(), &exp, in_hw)
}
