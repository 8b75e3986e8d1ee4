//! Normalized image container.
//!
//! Pixels are stored as `f32` in `[0, 1]`, shape `(height, width, channels)`.
//! 8-bit conversion happens only at file boundaries (see `data_io`).

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::Real;

/// An image with pixel values in `[0, 1]` and 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    /// Wrap an `(H, W, C)` array. Non-finite values are rejected, values are
    /// clamped to `[0, 1]`, and `C` must be 1 or 3.
    pub fn from_array(mut data: Array3<f32>) -> Result<Self> {
        let c = data.len_of(Axis(2));
        if c != 1 && c != 3 {
            return Err(Error::ShapeMismatch(format!("expected 1 or 3 channels, got {c}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite pixel value".into()));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { data: Array3::zeros((height, width, channels)) }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { data: Array3::from_elem((height, width, channels), value.clamp(0.0, 1.0)) }
    }

    /// Build from a per-pixel function; the result is clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Self {
        let data = Array3::from_shape_fn((height, width, channels), |(i, j, c)| {
            f(i, j, c).clamp(0.0, 1.0)
        });
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn width(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn channels(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// One channel as an `(H, W)` view.
    pub fn channel(&self, c: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(2), c)
    }

    /// Copy one channel into an owned `f64` matrix (transform input).
    pub fn channel_f64(&self, c: usize) -> Array2<f64> {
        self.channel(c).mapv(f64::from)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.data.dim() == other.data.dim()
    }

    /// Convert to a `(C, H, W)` tensor for the network.
    pub fn to_tensor<T: Real>(&self) -> Array3<T> {
        let (h, w, c) = self.data.dim();
        Array3::from_shape_fn((c, h, w), |(ci, i, j)| T::from_f64(f64::from(self.data[[i, j, ci]])))
    }

    /// Convert a `(C, H, W)` tensor back to an image, clamping to `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &ndarray::ArrayView3<'_, T>) -> Self {
        let (c, h, w) = t.dim();
        let data = Array3::from_shape_fn((h, w, c), |(i, j, ci)| {
            (t[[ci, i, j]].to_f64() as f32).clamp(0.0, 1.0)
        });
        Self { data }
    }

    /// Largest absolute per-pixel difference between two same-shaped images.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
    }

    /// Replicate a single-channel image to 3 channels; 3-channel input is
    /// returned as-is.
    pub fn to_rgb(&self) -> Image {
        if self.channels() == 3 {
            return self.clone();
        }
        let (h, w, _) = self.data.dim();
        let data = Array3::from_shape_fn((h, w, 3), |(i, j, _)| self.data[[i, j, 0]]);
        Self { data }
    }
}
