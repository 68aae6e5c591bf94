//! Numeric kernels: convolution, pooling, upsampling, activation, and the
//! channel plumbing ops (concat, slice, add).

use super::{conv_out_size, ConvWeights, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Grouped 2-d cross-correlation with zero padding.
///
/// Accumulation runs in `f64` per output element, in a fixed
/// `c_in -> k_h -> k_w` reduction order, then casts back to `S`; results are
/// therefore deterministic across runs and platforms that implement IEEE 754.
pub fn conv2d<S: Scalar>(input: &Tensor<S>, w: &ConvWeights<S>) -> Result<Tensor<S>> {
    let [n, c_in, h, wdt] = input.shape();
    let [c_out, c_in_g, kh, kw] = w.kernel.shape();
    let groups = w.groups;
    if c_in % groups != 0 {
        return Err(TensorError::GroupDivisibility { which: "input", channels: c_in, groups });
    }
    if c_in_g * groups != c_in {
        return Err(TensorError::ChannelMismatch {
            what: "conv2d",
            expected: c_in_g * groups,
            got: c_in,
        });
    }
    let (sh, sw) = w.stride;
    let (ph, pw) = w.padding;
    let (out_h, out_w) = match (conv_out_size(h, kh, sh, ph), conv_out_size(wdt, kw, sw, pw)) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => return Err(TensorError::EmptyOutput { kh, kw, sh, sw, ph, pw, h, w: wdt }),
    };

    let c_out_g = c_out / groups;
    let red = c_in_g * kh * kw;
    let mut out = Tensor::zeros([n, c_out, out_h, out_w]);
    // One row of im2col patches, laid out so the reduction for each output
    // element is a contiguous dot product in the pinned order.
    let mut strip = vec![0.0f64; out_w * red];
    let kdata = w.kernel.data();

    for ni in 0..n {
        for g in 0..groups {
            for oh in 0..out_h {
                let ih0 = (oh * sh) as isize - ph as isize;
                for ow in 0..out_w {
                    let iw0 = (ow * sw) as isize - pw as isize;
                    let patch = &mut strip[ow * red..(ow + 1) * red];
                    let mut r = 0;
                    for icl in 0..c_in_g {
                        let ic = g * c_in_g + icl;
                        for ki in 0..kh {
                            let ih = ih0 + ki as isize;
                            for kj in 0..kw {
                                let iw = iw0 + kj as isize;
                                patch[r] = if ih >= 0
                                    && (ih as usize) < h
                                    && iw >= 0
                                    && (iw as usize) < wdt
                                {
                                    input.at(ni, ic, ih as usize, iw as usize).to_f64_lossy()
                                } else {
                                    0.0
                                };
                                r += 1;
                            }
                        }
                    }
                }
                for ocl in 0..c_out_g {
                    let oc = g * c_out_g + ocl;
                    let kbase = oc * red;
                    let bias = w.bias.as_ref().map_or(0.0, |b| b[oc].to_f64_lossy());
                    for ow in 0..out_w {
                        let patch = &strip[ow * red..(ow + 1) * red];
                        let mut acc = 0.0f64;
                        for r in 0..red {
                            acc += kdata[kbase + r].to_f64_lossy() * patch[r];
                        }
                        out.set(ni, oc, oh, ow, S::from_f64_lit(acc + bias));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Max pooling with implicit `-inf` padding. Padding is capped at half the
/// kernel so every output window overlaps the input and stays finite.
pub fn maxpool2d<S: Scalar>(input: &Tensor<S>, k: usize, s: usize, p: usize) -> Result<Tensor<S>> {
    if s == 0 {
        return Err(TensorError::ZeroStride(s, s));
    }
    if k == 0 || p > k / 2 {
        return Err(TensorError::PoolPadding { k, p });
    }
    let [n, c, h, w] = input.shape();
    let (out_h, out_w) = match (conv_out_size(h, k, s, p), conv_out_size(w, k, s, p)) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => return Err(TensorError::EmptyOutput { kh: k, kw: k, sh: s, sw: s, ph: p, pw: p, h, w }),
    };
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..out_h {
                let ih0 = (oh * s) as isize - p as isize;
                for ow in 0..out_w {
                    let iw0 = (ow * s) as isize - p as isize;
                    let mut best = S::neg_infinity();
                    for ki in 0..k {
                        let ih = ih0 + ki as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = iw0 + kj as isize;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            let v = input.at(ni, ci, ih as usize, iw as usize);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out.set(ni, ci, oh, ow, best);
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor 2x upsampling: each value replicated into a 2x2 block.
pub fn upsample_nearest2x<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = input.shape();
    Tensor::from_fn([n, c, 2 * h, 2 * w], |ni, ci, hi, wi| input.at(ni, ci, hi / 2, wi / 2))
}

/// Elementwise SiLU activation, `x * sigmoid(x)`.
pub fn silu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|x| x * sigmoid(x))
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Concatenates tensors along the channel axis, in argument order.
pub fn concat_channels<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = parts.first().ok_or(TensorError::EmptyConcat)?;
    let [n, _, h, w] = first.shape();
    for part in &parts[1..] {
        if part.n() != n {
            return Err(TensorError::BatchMismatch { what: "concat_channels", expected: n, got: part.n() });
        }
        if (part.h(), part.w()) != (h, w) {
            return Err(TensorError::SpatialMismatch {
                what: "concat_channels",
                expected: (h, w),
                got: (part.h(), part.w()),
            });
        }
    }
    let c_total = parts.iter().map(|p| p.c()).sum();
    let mut data = Vec::with_capacity(n * c_total * h * w);
    let plane = h * w;
    for ni in 0..n {
        for part in parts {
            let start = ni * part.c() * plane;
            data.extend_from_slice(&part.data()[start..start + part.c() * plane]);
        }
    }
    Tensor::new([n, c_total, h, w], data)
}

/// Copies the channel range `[lo, hi)` into a new tensor.
pub fn slice_channels<S: Scalar>(input: &Tensor<S>, lo: usize, hi: usize) -> Result<Tensor<S>> {
    let [n, c, h, w] = input.shape();
    if lo >= hi || hi > c {
        return Err(TensorError::SliceRange { lo, hi, c });
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (hi - lo) * plane);
    for ni in 0..n {
        let start = (ni * c + lo) * plane;
        data.extend_from_slice(&input.data()[start..start + (hi - lo) * plane]);
    }
    Tensor::new([n, hi - lo, h, w], data)
}

/// Elementwise sum of two identically shaped tensors.
pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(TensorError::SpatialMismatch {
            what: "add",
            expected: (a.h(), a.w()),
            got: (b.h(), b.w()),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}
