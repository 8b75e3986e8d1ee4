//! Minimal neural-network kernels: conv / transposed-conv / group-norm layers
//! with explicit forward caches and hand-written backward passes.
//!
//! Training runs in `f32`; gradient verification against finite differences
//! runs in `f64`, so everything here is generic over [`Real`].

mod layers;
mod linalg;

pub use layers::{Activation, Conv2d, ConvT2d, GroupNorm, Layer, LayerAux, NormStats};
pub use linalg::{col2im_add, im2col, matmul};

use num_traits::FromPrimitive;

/// Scalar type the kernels are generic over (`f32` or `f64`).
pub trait Real: ndarray::NdFloat + FromPrimitive + std::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
