//! Dense NCHW tensors with reverse-mode differentiation for the layer set
//! the height regressor needs: 1×1 and grouped 3×3 convolution, batch
//! normalization, ReLU, residual addition, channel concatenation and
//! spatial cropping.
//!
//! Values are stored channels-last (`n, y, x, c`) so that convolutions reduce
//! to matrix products over pixel rows; the public API speaks logical
//! `(n, c, y, x)` coordinates.

mod gemm;
pub mod gradcheck;
mod graph;
mod layers;
pub mod ops;
mod params;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, KindReport, Probe};
pub use graph::{BnMode, Eval, Gradients, Graph, NodeId, Recorder, Tape};
pub use layers::{BatchNorm, BatchNormOptions, Conv2d};
pub use ops::{ConvGeom, ConvShape};
pub use params::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointEntry, Param, ParamId, ParamKind, ParamStore,
};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Scalar types the engine runs in.
pub trait Real: Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Logical tensor shape: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Number of pixel rows (`n·h·w`) in the channels-last layout.
    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.len()],
        }
    }

    /// Builds a tensor from values in logical `n, c, y, x` order.
    pub fn from_nchw(shape: Shape, values: &[T]) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} values for tensor of shape {shape}",
                values.len()
            )));
        }
        let mut t = Self::zeros(shape);
        let plane = shape.h * shape.w;
        for n in 0..shape.n {
            for c in 0..shape.c {
                let src = &values[(n * shape.c + c) * plane..(n * shape.c + c + 1) * plane];
                for (p, &v) in src.iter().enumerate() {
                    t.data[(n * plane + p) * shape.c + c] = v;
                }
            }
        }
        Ok(t)
    }

    pub fn to_nchw(&self) -> Vec<T> {
        let s = self.shape;
        let plane = s.h * s.w;
        let mut out = vec![T::zero(); s.len()];
        for n in 0..s.n {
            for p in 0..plane {
                let px = &self.data[(n * plane + p) * s.c..(n * plane + p + 1) * s.c];
                for (c, &v) in px.iter().enumerate() {
                    out[(n * s.c + c) * plane + p] = v;
                }
            }
        }
        out
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Raw storage in channels-last order.
    pub fn raw(&self) -> &[T] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.h + y) * s.w + x) * s.c + c
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// All channels of one pixel.
    pub fn pixel(&self, n: usize, y: usize, x: usize) -> &[T] {
        let s = self.shape;
        let start = ((n * s.h + y) * s.w + x) * s.c;
        &self.data[start..start + s.c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nchw_round_trip_and_indexing() {
        let s = Shape::new(2, 3, 2, 2);
        let vals: Vec<f64> = (0..s.len()).map(|v| v as f64).collect();
        let t = Tensor::from_nchw(s, &vals).unwrap();
        assert_eq!(t.to_nchw(), vals);
        // logical index (n=1, c=2, y=1, x=0) is element 1*12 + 2*4 + 1*2 + 0
        assert_eq!(t.at(1, 2, 1, 0), 22.0);
        assert_eq!(t.pixel(0, 0, 1), &[1.0, 5.0, 9.0]);
        assert!(Tensor::<f64>::from_nchw(s, &vals[1..]).is_err());
    }
}
