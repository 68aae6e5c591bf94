//! Dense rank-4 NCHW tensor and the numeric kernels used by the block zoo.

mod io;
mod ops;

pub use io::{read_tensor, write_tensor};
pub use ops::{add, concat_channels, conv2d, maxpool2d, silu, slice_channels, upsample_nearest2x};

use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;

/// Errors produced by tensor construction, kernels, and file I/O.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength { shape: [usize; 4], expected: usize, got: usize },
    #[error("{what}: input has {got} channels, expected {expected}")]
    ChannelMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{what}: spatial dims {got:?} do not match {expected:?}")]
    SpatialMismatch { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("{what}: batch size {got} does not match {expected}")]
    BatchMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{which} channel count {channels} not divisible by groups {groups}")]
    GroupDivisibility { which: &'static str, channels: usize, groups: usize },
    #[error("convolution stride must be >= 1, got ({0}, {1})")]
    ZeroStride(usize, usize),
    #[error("kernel {k}x{k2} with stride ({sh}, {sw}) padding ({ph}, {pw}) on {h}x{w} input leaves no output", k = kh, k2 = kw)]
    EmptyOutput { kh: usize, kw: usize, sh: usize, sw: usize, ph: usize, pw: usize, h: usize, w: usize },
    #[error("bias length {got} does not match {expected} output channels")]
    BiasLength { expected: usize, got: usize },
    #[error("pool padding {p} exceeds half the kernel size {k}")]
    PoolPadding { k: usize, p: usize },
    #[error("channel slice [{lo}, {hi}) out of range for {c} channels")]
    SliceRange { lo: usize, hi: usize, c: usize },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {got:?}, expected \"FTNSR1\"")]
    BadMagic { got: Vec<u8> },
    #[error("unsupported ndim {got}, expected 4")]
    BadNdim { got: u32 },
    #[error("file holds {got} data bytes, shape {dims:?} requires {expected}")]
    PayloadSize { dims: [u32; 4], expected: usize, got: usize },
    #[error("shape {dims:?} overflows the addressable element count")]
    DimOverflow { dims: [u32; 4] },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense NCHW float tensor. The sole numeric carrier of the crate: inputs,
/// feature maps, and convolution kernels are all `Tensor`s.
///
/// Row-major layout, index `((n * c + ci) * h + hi) * w + wi`. All kernels in
/// this module are pure: identical inputs produce bitwise-identical outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor from shape and row-major data, validating the length.
    pub fn new(shape: [usize; 4], data: Vec<S>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(TensorError::DataLength { shape, expected, got: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![S::zero(); len] }
    }

    pub fn full(shape: [usize; 4], value: S) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![value; len] }
    }

    /// Fills a tensor with uniform samples in `[lo, hi)` drawn from `rng`.
    /// Sampling goes through `f64` so the stream is identical for every
    /// scalar type under the same seed.
    pub fn from_rng_uniform<R: Rng>(shape: [usize; 4], rng: &mut R, lo: f64, hi: f64) -> Self {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| S::from_f64_lit(lo + (hi - lo) * rng.gen::<f64>()))
            .collect();
        Self { shape, data }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f(ni, ci, hi, wi));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        debug_assert!(n < self.shape[0] && c < self.shape[1] && h < self.shape[2] && w < self.shape[3]);
        self.data[((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: S) {
        let idx = ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w;
        self.data[idx] = v;
    }

    /// Applies `f` elementwise, producing a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// True when every element is finite (no NaN or infinity).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Grouped 2-d convolution weights: kernel shaped
/// `(c_out, c_in / groups, k_h, k_w)` plus optional bias and the stride,
/// padding, and group hyperparameters.
#[derive(Debug, Clone)]
pub struct ConvWeights<S: Scalar> {
    pub kernel: Tensor<S>,
    pub bias: Option<Vec<S>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl<S: Scalar> ConvWeights<S> {
    /// Validates the structural invariants: positive stride, `c_out`
    /// divisible by `groups`, bias length matching `c_out`.
    pub fn new(
        kernel: Tensor<S>,
        bias: Option<Vec<S>>,
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::ZeroStride(stride.0, stride.1));
        }
        if groups == 0 || !kernel.n().is_multiple_of(groups) {
            return Err(TensorError::GroupDivisibility {
                which: "output",
                channels: kernel.n(),
                groups: groups.max(1),
            });
        }
        if let Some(b) = &bias {
            if b.len() != kernel.n() {
                return Err(TensorError::BiasLength { expected: kernel.n(), got: b.len() });
            }
        }
        Ok(Self { kernel, bias, stride, padding, groups })
    }

    pub fn c_out(&self) -> usize {
        self.kernel.n()
    }

    /// Input channel count implied by the kernel shape and groups.
    pub fn c_in(&self) -> usize {
        self.kernel.c() * self.groups
    }
}

/// Output spatial size of a convolution or pooling window:
/// `floor((size + 2p - k) / s) + 1`, or `None` when the window does not fit.
pub fn conv_out_size(size: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = size + 2 * p;
    if padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_data_length() {
        let err = Tensor::<f32>::new([1, 2, 3, 4], vec![0.0; 23]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 24, got: 23, .. }));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::<f32>::from_fn([2, 3, 4, 5], |n, c, h, w| (n * 1000 + c * 100 + h * 10 + w) as f32);
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.len() - 1], 1234.0);
    }

    #[test]
    fn conv_out_size_matches_formula() {
        assert_eq!(conv_out_size(640, 6, 2, 2), Some(320));
        assert_eq!(conv_out_size(8, 5, 1, 2), Some(8));
        assert_eq!(conv_out_size(3, 5, 1, 0), None);
    }

    #[test]
    fn uniform_fill_is_seed_stable() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ta = Tensor::<f32>::from_rng_uniform([1, 2, 3, 3], &mut a, -1.0, 1.0);
        let tb = Tensor::<f32>::from_rng_uniform([1, 2, 3, 3], &mut b, -1.0, 1.0);
        assert_eq!(ta, tb);
        assert!(ta.data().iter().all(|&x| (-1.0..1.0).contains(&x)));
    }
}
