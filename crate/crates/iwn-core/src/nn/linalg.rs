//! GEMM and im2col/col2im primitives behind the conv layers.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, ArrayView3, ArrayViewMut3, Axis};

use super::Real;

/// Below this many multiply-adds a plain single-threaded GEMM wins.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;

/// `a (m×k) · b (k×n)`, split across threads along the larger output axis.
///
/// Each output element is produced by exactly one thread with a fixed inner
/// loop order, so results are bit-reproducible regardless of thread count.
pub fn matmul<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    let (m, k) = a.dim();
    let n = b.len_of(Axis(1));
    assert_eq!(k, b.len_of(Axis(0)), "matmul inner dimensions differ");
    let mut out = Array2::zeros((m, n));
    let threads = rayon::current_num_threads().max(1);
    let work = m * k * n;
    if threads == 1 || work < PAR_FLOP_THRESHOLD {
        general_mat_mul(T::one(), &a, &b, T::zero(), &mut out.view_mut());
        return out;
    }
    if n >= m {
        let chunk = n.div_ceil(threads);
        out.axis_chunks_iter_mut(Axis(1), chunk)
            .into_par_iter()
            .zip(b.axis_chunks_iter(Axis(1), chunk).into_par_iter())
            .for_each(|(mut oc, bc)| {
                general_mat_mul(T::one(), &a, &bc, T::zero(), &mut oc);
            });
    } else {
        let chunk = m.div_ceil(threads);
        out.axis_chunks_iter_mut(Axis(0), chunk)
            .into_par_iter()
            .zip(a.axis_chunks_iter(Axis(0), chunk).into_par_iter())
            .for_each(|(mut oc, ac)| {
                general_mat_mul(T::one(), &ac, &b, T::zero(), &mut oc);
            });
    }
    out
}

/// Grid size of a `k`/`stride`/`pad` window sweep over an axis of length `len`.
pub fn grid_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfold `(C, H, W)` into a `(C·k·k, GH·GW)` patch matrix with implicit zero
/// padding. Row index is `(c·k + a)·k + b`, column index is `gi·GW + gj`.
pub fn im2col<T: Real>(src: &ArrayView3<'_, T>, k: usize, stride: usize, pad: usize) -> Array2<T> {
    let (c_in, h, w) = src.dim();
    let gh = grid_len(h, k, stride, pad).expect("im2col: window larger than padded input");
    let gw = grid_len(w, k, stride, pad).expect("im2col: window larger than padded input");
    let mut out = Array2::zeros((c_in * k * k, gh * gw));
    for c in 0..c_in {
        let plane = src.index_axis(Axis(0), c);
        for a in 0..k {
            for b in 0..k {
                let row = (c * k + a) * k + b;
                let mut out_row = out.row_mut(row);
                for gi in 0..gh {
                    let si = (gi * stride + a) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src_row = plane.row(si as usize);
                    let base = gi * gw;
                    for gj in 0..gw {
                        let sj = (gj * stride + b) as isize - pad as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        out_row[base + gj] = src_row[sj as usize];
                    }
                }
            }
        }
    }
    out
}

/// Scatter-add the inverse of [`im2col`]: fold a `(C·k·k, GH·GW)` patch matrix
/// back into `(C, H, W)`, summing overlaps and dropping padded positions.
pub fn col2im_add<T: Real>(
    cols: &ArrayView2<'_, T>,
    mut dst: ArrayViewMut3<'_, T>,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let (c_out, h, w) = dst.dim();
    let gh = grid_len(h, k, stride, pad).expect("col2im: window larger than padded output");
    let gw = grid_len(w, k, stride, pad).expect("col2im: window larger than padded output");
    assert_eq!(cols.dim(), (c_out * k * k, gh * gw), "col2im: shape mismatch");
    for c in 0..c_out {
        let mut plane = dst.index_axis_mut(Axis(0), c);
        for a in 0..k {
            for b in 0..k {
                let row = cols.row((c * k + a) * k + b);
                for gi in 0..gh {
                    let si = (gi * stride + a) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let mut dst_row = plane.row_mut(si as usize);
                    let base = gi * gw;
                    for gj in 0..gw {
                        let sj = (gj * stride + b) as isize - pad as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        dst_row[sj as usize] = dst_row[sj as usize] + row[base + gj];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};

    #[test]
    fn matmul_matches_naive() {
        let a = Array2::from_shape_fn((7, 5), |(i, j)| (i * 5 + j) as f64 * 0.1 - 1.0);
        let b = Array2::from_shape_fn((5, 9), |(i, j)| (i as f64 - j as f64) * 0.05);
        let got = matmul(a.view(), b.view());
        let want = a.dot(&b);
        for (x, y) in got.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_identity_kernel() {
        // k=1, stride=1, pad=0 is a plain reshape.
        let src = Array3::from_shape_fn((2, 3, 4), |(c, i, j)| (c * 12 + i * 4 + j) as f64);
        let cols = im2col(&src.view(), 1, 1, 0);
        assert_eq!(cols.dim(), (2, 12));
        assert_eq!(cols[[1, 5]], src[[1, 1, 1]]);
    }

    #[test]
    fn im2col_respects_padding_and_stride() {
        let src = Array3::from_shape_fn((1, 3, 3), |(_, i, j)| (i * 3 + j) as f64 + 1.0);
        let cols = im2col(&src.view(), 2, 2, 1);
        // grid is 2x2; first patch is the zero-padded corner.
        assert_eq!(cols.dim(), (4, 4));
        assert_eq!(cols[[0, 0]], 0.0); // (a=0,b=0) of top-left patch is padding
        assert_eq!(cols[[3, 0]], 1.0); // (a=1,b=1) lands on src[0,0]
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Array3::from_shape_fn((2, 5, 6), |_| rng.random::<f64>() - 0.5);
        let cols_shape = im2col(&x.view(), 3, 2, 1).dim();
        let y = Array2::from_shape_fn(cols_shape, |_| rng.random::<f64>() - 0.5);

        let lhs: f64 = im2col(&x.view(), 3, 2, 1)
            .iter()
            .zip(y.iter())
            .map(|(a, b)| a * b)
            .sum();
        let mut folded = Array3::zeros((2, 5, 6));
        col2im_add(&y.view(), folded.view_mut(), 3, 2, 1);
        let rhs: f64 = x.iter().zip(folded.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn matmul_parallel_path_matches_serial() {
        let a = Array2::from_shape_fn((64, 96), |(i, j)| ((i * 96 + j) % 17) as f32 * 0.21 - 1.3);
        let b = Array2::from_shape_fn((96, 200), |(i, j)| ((i + 3 * j) % 13) as f32 * 0.17 - 1.1);
        let got = matmul(a.view(), b.view());
        let mut want = Array2::zeros((64, 200));
        general_mat_mul(1.0f32, &a.view(), &b.view(), 0.0, &mut want.view_mut());
        assert_eq!(got, want);
    }

    #[test]
    fn matmul_small() {
        let a = arr2(&[[1.0f64, 2.0], [3.0, 4.0]]);
        let b = arr2(&[[5.0f64], [6.0]]);
        let c = matmul(a.view(), b.view());
        assert_eq!(c, arr2(&[[17.0], [39.0]]));
    }
}
