//! Network layers with explicit backward passes.
//!
//! Backward methods take an optional slice of gradient buffers; passing
//! `None` propagates the input gradient without touching parameter
//! gradients, which is how frozen-copy applications stay isolated from the
//! optimizer.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, ArrayView3, Axis};

use super::linalg::{col2im_add, grid_len, im2col, matmul};
use super::Real;

/// Per-group statistics cached by the group-norm forward pass.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Extra forward state a layer needs for its backward pass (beyond its input).
#[derive(Debug, Clone)]
pub enum LayerAux<T> {
    None,
    Norm(NormStats<T>),
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    /// `(c_out, c_in, k, k)`
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.weight.len_of(Axis(2));
        Some((grid_len(h, k, self.stride, self.pad)?, grid_len(w, k, self.stride, self.pad)?))
    }

    pub fn forward(&self, x: &ArrayView3<'_, T>) -> Array3<T> {
        let (c_out, c_in, k, _) = self.weight.dim();
        debug_assert_eq!(x.len_of(Axis(0)), c_in);
        let (h, w) = (x.len_of(Axis(1)), x.len_of(Axis(2)));
        let (gh, gw) = self.out_dims(h, w).expect("conv kernel larger than padded input");
        let cols = im2col(x, k, self.stride, self.pad);
        let wmat = self
            .weight
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("conv weight is contiguous");
        let mut y = matmul(wmat, cols.view())
            .into_shape_with_order((c_out, gh, gw))
            .expect("gemm output is contiguous");
        for (mut plane, b) in y.outer_iter_mut().zip(self.bias.iter()) {
            plane.mapv_inplace(|v| v + *b);
        }
        y
    }

    /// Returns the gradient w.r.t. the input; accumulates parameter gradients
    /// into `grads = (weight, bias)` when given.
    pub fn backward(
        &self,
        x: &ArrayView3<'_, T>,
        gy: &ArrayView3<'_, T>,
        grads: Option<(&mut ArrayD<T>, &mut ArrayD<T>)>,
    ) -> Array3<T> {
        let (c_out, c_in, k, _) = self.weight.dim();
        let (h, w) = (x.len_of(Axis(1)), x.len_of(Axis(2)));
        let g = gy.len_of(Axis(1)) * gy.len_of(Axis(2));
        let gy_mat = gy.into_shape_with_order((c_out, g)).expect("grad output is contiguous");

        if let Some((gw_buf, gb_buf)) = grads {
            let cols = im2col(x, k, self.stride, self.pad);
            let dw = matmul(gy_mat, cols.t());
            gw_buf
                .view_mut()
                .into_shape_with_order((c_out, c_in * k * k))
                .expect("weight grad is contiguous")
                .zip_mut_with(&dw, |acc, v| *acc = *acc + *v);
            let mut gb = gb_buf.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            for (acc, row) in gb.iter_mut().zip(gy_mat.outer_iter()) {
                *acc = *acc + row.iter().copied().sum();
            }
        }

        let wmat = self
            .weight
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("conv weight is contiguous");
        let gcols = matmul(wmat.t(), gy_mat);
        let mut gx = Array3::zeros((c_in, h, w));
        col2im_add(&gcols.view(), gx.view_mut(), k, self.stride, self.pad);
        gx
    }
}

#[derive(Debug, Clone)]
pub struct ConvT2d<T> {
    /// `(c_in, c_out, k, k)`
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> ConvT2d<T> {
    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.weight.len_of(Axis(2));
        let grow = |n: usize| ((n - 1) * self.stride + k).checked_sub(2 * self.pad);
        match (grow(h), grow(w)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => Some((a, b)),
            _ => None,
        }
    }

    pub fn forward(&self, x: &ArrayView3<'_, T>) -> Array3<T> {
        let (c_in, c_out, k, _) = self.weight.dim();
        debug_assert_eq!(x.len_of(Axis(0)), c_in);
        let (h, w) = (x.len_of(Axis(1)), x.len_of(Axis(2)));
        let (ho, wo) = self.out_dims(h, w).expect("transposed conv output would be empty");
        let x_mat = x.into_shape_with_order((c_in, h * w)).expect("input is contiguous");
        let wmat = self
            .weight
            .view()
            .into_shape_with_order((c_in, c_out * k * k))
            .expect("tconv weight is contiguous");
        let cols = matmul(wmat.t(), x_mat);
        let mut y = Array3::zeros((c_out, ho, wo));
        col2im_add(&cols.view(), y.view_mut(), k, self.stride, self.pad);
        for (mut plane, b) in y.outer_iter_mut().zip(self.bias.iter()) {
            plane.mapv_inplace(|v| v + *b);
        }
        y
    }

    pub fn backward(
        &self,
        x: &ArrayView3<'_, T>,
        gy: &ArrayView3<'_, T>,
        grads: Option<(&mut ArrayD<T>, &mut ArrayD<T>)>,
    ) -> Array3<T> {
        let (c_in, c_out, k, _) = self.weight.dim();
        let (h, w) = (x.len_of(Axis(1)), x.len_of(Axis(2)));
        // The forward grid of (k, stride, pad) over the output recovers the
        // input dimensions, so im2col on gy lines up with x positions.
        let gcols = im2col(gy, k, self.stride, self.pad);

        if let Some((gw_buf, gb_buf)) = grads {
            let x_mat = x.into_shape_with_order((c_in, h * w)).expect("input is contiguous");
            let dw = matmul(x_mat, gcols.t());
            gw_buf
                .view_mut()
                .into_shape_with_order((c_in, c_out * k * k))
                .expect("weight grad is contiguous")
                .zip_mut_with(&dw, |acc, v| *acc = *acc + *v);
            let mut gb = gb_buf.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            for (acc, plane) in gb.iter_mut().zip(gy.outer_iter()) {
                *acc = *acc + plane.iter().copied().sum();
            }
        }

        let wmat = self
            .weight
            .view()
            .into_shape_with_order((c_in, c_out * k * k))
            .expect("tconv weight is contiguous");
        matmul(wmat, gcols.view())
            .into_shape_with_order((c_in, h, w))
            .expect("gemm output is contiguous")
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub groups: usize,
    pub eps: f64,
}

impl<T: Real> GroupNorm<T> {
    pub fn forward(&self, x: &ArrayView3<'_, T>) -> (Array3<T>, NormStats<T>) {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c % self.groups, 0);
        let per = c / self.groups;
        let n = T::from_f64((per * h * w) as f64);
        let mut y = Array3::zeros((c, h, w));
        let mut stats = NormStats { mean: Vec::with_capacity(self.groups), inv_std: Vec::with_capacity(self.groups) };
        for g in 0..self.groups {
            let span = g * per..(g + 1) * per;
            let xg = x.slice(ndarray::s![span.clone(), .., ..]);
            let mean = xg.iter().copied().sum::<T>() / n;
            let var = xg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv_std = T::one() / (var + T::from_f64(self.eps)).sqrt();
            stats.mean.push(mean);
            stats.inv_std.push(inv_std);
            for ci in span {
                let gamma = self.gamma[ci];
                let beta = self.beta[ci];
                let xc = x.index_axis(Axis(0), ci);
                let mut yc = y.index_axis_mut(Axis(0), ci);
                ndarray::Zip::from(&mut yc).and(&xc).for_each(|o, &v| {
                    *o = gamma * (v - mean) * inv_std + beta;
                });
            }
        }
        (y, stats)
    }

    pub fn backward(
        &self,
        x: &ArrayView3<'_, T>,
        stats: &NormStats<T>,
        gy: &ArrayView3<'_, T>,
        grads: Option<(&mut ArrayD<T>, &mut ArrayD<T>)>,
    ) -> Array3<T> {
        let (c, h, w) = x.dim();
        let per = c / self.groups;
        let n = T::from_f64((per * h * w) as f64);
        let mut gx = Array3::zeros((c, h, w));
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for g in 0..self.groups {
            let mean = stats.mean[g];
            let inv_std = stats.inv_std[g];
            let span = g * per..(g + 1) * per;
            // s1 = sum(dxhat), s2 = sum(dxhat * xhat) over the group.
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for ci in span.clone() {
                let gamma = self.gamma[ci];
                let xc = x.index_axis(Axis(0), ci);
                let gc = gy.index_axis(Axis(0), ci);
                let mut dg = T::zero();
                let mut db = T::zero();
                ndarray::Zip::from(&xc).and(&gc).for_each(|&xv, &gv| {
                    let xhat = (xv - mean) * inv_std;
                    let dxhat = gv * gamma;
                    s1 = s1 + dxhat;
                    s2 = s2 + dxhat * xhat;
                    dg = dg + gv * xhat;
                    db = db + gv;
                });
                dgamma[ci] = dg;
                dbeta[ci] = db;
            }
            for ci in span {
                let gamma = self.gamma[ci];
                let xc = x.index_axis(Axis(0), ci);
                let gc = gy.index_axis(Axis(0), ci);
                let mut gxc = gx.index_axis_mut(Axis(0), ci);
                ndarray::Zip::from(&mut gxc).and(&xc).and(&gc).for_each(|o, &xv, &gv| {
                    let xhat = (xv - mean) * inv_std;
                    let dxhat = gv * gamma;
                    *o = inv_std * (dxhat - (s1 + xhat * s2) / n);
                });
            }
        }
        if let Some((gg_buf, gb_buf)) = grads {
            let mut gg = gg_buf.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            let mut gb = gb_buf.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            for ci in 0..c {
                gg[ci] = gg[ci] + dgamma[ci];
                gb[ci] = gb[ci] + dbeta[ci];
            }
        }
        gx
    }
}

/// Pointwise nonlinearities. `TanhRemap` is the output stage: `(tanh(x)+1)/2`
/// maps into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    TanhRemap,
}

impl Activation {
    pub fn forward<T: Real>(&self, x: &ArrayView3<'_, T>) -> Array3<T> {
        match *self {
            Activation::LeakyRelu(slope) => {
                let s = T::from_f64(slope);
                x.mapv(|v| if v > T::zero() { v } else { v * s })
            }
            Activation::Relu => x.mapv(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::TanhRemap => {
                let half = T::from_f64(0.5);
                x.mapv(|v| (v.tanh() + T::one()) * half)
            }
        }
    }

    pub fn backward<T: Real>(&self, x: &ArrayView3<'_, T>, gy: &ArrayView3<'_, T>) -> Array3<T> {
        match *self {
            Activation::LeakyRelu(slope) => {
                let s = T::from_f64(slope);
                let mut gx = gy.to_owned();
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    if v <= T::zero() {
                        *g = *g * s;
                    }
                });
                gx
            }
            Activation::Relu => {
                let mut gx = gy.to_owned();
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                });
                gx
            }
            Activation::TanhRemap => {
                let half = T::from_f64(0.5);
                let mut gx = gy.to_owned();
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    let t = v.tanh();
                    *g = *g * (T::one() - t * t) * half;
                });
                gx
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvT(ConvT2d<T>),
    Norm(GroupNorm<T>),
    Act(Activation),
}

impl<T: Real> Layer<T> {
    pub fn forward(&self, x: &ArrayView3<'_, T>) -> (Array3<T>, LayerAux<T>) {
        match self {
            Layer::Conv(l) => (l.forward(x), LayerAux::None),
            Layer::ConvT(l) => (l.forward(x), LayerAux::None),
            Layer::Norm(l) => {
                let (y, stats) = l.forward(x);
                (y, LayerAux::Norm(stats))
            }
            Layer::Act(a) => (a.forward(x), LayerAux::None),
        }
    }

    pub fn backward(
        &self,
        x: &ArrayView3<'_, T>,
        aux: &LayerAux<T>,
        gy: &ArrayView3<'_, T>,
        grads: Option<(&mut ArrayD<T>, &mut ArrayD<T>)>,
    ) -> Array3<T> {
        match (self, aux) {
            (Layer::Conv(l), _) => l.backward(x, gy, grads),
            (Layer::ConvT(l), _) => l.backward(x, gy, grads),
            (Layer::Norm(l), LayerAux::Norm(stats)) => l.backward(x, stats, gy, grads),
            (Layer::Norm(_), LayerAux::None) => panic!("group norm backward without stats"),
            (Layer::Act(a), _) => a.backward(x, gy),
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        match self {
            Layer::Conv(l) => l.out_dims(h, w),
            Layer::ConvT(l) => l.out_dims(h, w),
            Layer::Norm(_) | Layer::Act(_) => Some((h, w)),
        }
    }

    pub fn out_channels(&self, c_in: usize) -> usize {
        match self {
            Layer::Conv(l) => l.weight.len_of(Axis(0)),
            Layer::ConvT(l) => l.weight.len_of(Axis(1)),
            Layer::Norm(_) | Layer::Act(_) => c_in,
        }
    }

    /// Parameter views in a fixed order (weights before biases).
    pub fn params(&self) -> Vec<ndarray::ArrayViewD<'_, T>> {
        match self {
            Layer::Conv(l) => vec![l.weight.view().into_dyn(), l.bias.view().into_dyn()],
            Layer::ConvT(l) => vec![l.weight.view().into_dyn(), l.bias.view().into_dyn()],
            Layer::Norm(l) => vec![l.gamma.view().into_dyn(), l.beta.view().into_dyn()],
            Layer::Act(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, T>> {
        match self {
            Layer::Conv(l) => vec![l.weight.view_mut().into_dyn(), l.bias.view_mut().into_dyn()],
            Layer::ConvT(l) => vec![l.weight.view_mut().into_dyn(), l.bias.view_mut().into_dyn()],
            Layer::Norm(l) => vec![l.gamma.view_mut().into_dyn(), l.beta.view_mut().into_dyn()],
            Layer::Act(_) => vec![],
        }
    }
}
