//! Image quality metrics: MSE, PSNR, SSIM.
//!
//! All metrics are computed on the 8-bit scale (values x 255, MAX = 255)
//! regardless of the internal `[0, 1]` storage. SSIM defaults to the standard
//! windowed form (11x11 Gaussian, sigma 1.5, k1 = 0.01, k2 = 0.03, L = 255)
//! averaged over channels; [`ssim_global`] evaluates the single-window
//! global-statistics form instead.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared error on the 8-bit scale.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = (f64::from(x) - f64::from(y)) * L;
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (L * L / mse).log10())
}

/// Normalized 1D Gaussian window.
fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len - 1) as f64 / 2.0;
    let mut k: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable filter: output is `(H - len + 1, W - len + 1)`.
fn filter_valid(src: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = src.dim();
    let len = k.len();
    let mut rows = Array2::zeros((h, w - len + 1));
    for i in 0..h {
        for j in 0..w - len + 1 {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * src[[i, j + t]];
            }
            rows[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((h - len + 1, w - len + 1));
    for i in 0..h - len + 1 {
        for j in 0..w - len + 1 {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * rows[[i + t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn ssim_channel_windowed(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let mu_a = filter_valid(a, &k);
    let mu_b = filter_valid(b, &k);
    let aa = filter_valid(&(a * a), &k);
    let bb = filter_valid(&(b * b), &k);
    let ab = filter_valid(&(a * b), &k);

    let mut acc = 0.0;
    for ((i, j), &ma) in mu_a.indexed_iter() {
        let mb = mu_b[[i, j]];
        let va = aa[[i, j]] - ma * ma;
        let vb = bb[[i, j]] - mb * mb;
        let cov = ab[[i, j]] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / mu_a.len() as f64
}

fn to_8bit_channel(img: &Image, c: usize) -> Array2<f64> {
    img.channel(c).mapv(|v| f64::from(v) * L)
}

/// Windowed structural similarity, averaged over channels. Result in [-1, 1].
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window",
            a.height(),
            a.width()
        )));
    }
    let mut acc = 0.0;
    for c in 0..a.channels() {
        acc += ssim_channel_windowed(&to_8bit_channel(a, c), &to_8bit_channel(b, c));
    }
    Ok(acc / a.channels() as f64)
}

/// Literal global-statistics SSIM (one window covering the whole plane),
/// averaged over channels.
pub fn ssim_global(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let mut acc = 0.0;
    for c in 0..a.channels() {
        let pa = to_8bit_channel(a, c);
        let pb = to_8bit_channel(b, c);
        let n = pa.len() as f64;
        let ma = pa.sum() / n;
        let mb = pb.sum() / n;
        let va = pa.iter().map(|&v| (v - ma) * (v - ma)).sum::<f64>() / n;
        let vb = pb.iter().map(|&v| (v - mb) * (v - mb)).sum::<f64>() / n;
        let cov = pa.iter().zip(pb.iter()).map(|(&x, &y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / a.channels() as f64)
}

/// All three metrics at once.
pub fn compare(a: &Image, b: &Image) -> Result<MetricsReport> {
    Ok(MetricsReport { psnr_db: psnr(a, b)?, ssim: ssim(a, b)?, mse: mse(a, b)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |_, _, _| rng.random::<f32>())
    }

    /// Direct per-window evaluation of windowed SSIM; no separable filtering,
    /// no shared code with the implementation above.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let win = SSIM_WINDOW;
        let g1 = gaussian_kernel(win, SSIM_SIGMA);
        let mut weights = vec![0.0; win * win];
        for i in 0..win {
            for j in 0..win {
                weights[i * win + j] = g1[i] * g1[j];
            }
        }
        let c1 = (K1 * L) * (K1 * L);
        let c2 = (K2 * L) * (K2 * L);
        let mut total = 0.0;
        for c in 0..a.channels() {
            let pa = to_8bit_channel(a, c);
            let pb = to_8bit_channel(b, c);
            let (h, w) = pa.dim();
            let mut acc = 0.0;
            let mut count = 0usize;
            for i0 in 0..=h - win {
                for j0 in 0..=w - win {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..win {
                        for j in 0..win {
                            let wgt = weights[i * win + j];
                            ma += wgt * pa[[i0 + i, j0 + j]];
                            mb += wgt * pb[[i0 + i, j0 + j]];
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..win {
                        for j in 0..win {
                            let wgt = weights[i * win + j];
                            let da = pa[[i0 + i, j0 + j]] - ma;
                            let db = pb[[i0 + i, j0 + j]] - mb;
                            va += wgt * da * da;
                            vb += wgt * db * db;
                            cov += wgt * da * db;
                        }
                    }
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / a.channels() as f64
    }

    #[test]
    fn mse_basics() {
        let a = Image::constant(8, 8, 3, 0.5);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);

        let black = Image::zeros(8, 8, 3);
        let white = Image::constant(8, 8, 3, 1.0);
        assert_eq!(mse(&black, &white).unwrap(), 255.0 * 255.0);

        // Differ by exactly 1/255 everywhere -> MSE 1.
        let lo = Image::constant(8, 8, 3, 100.0 / 255.0);
        let hi = Image::constant(8, 8, 3, 101.0 / 255.0);
        assert!((mse(&lo, &hi).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        let black = Image::zeros(8, 8, 3);
        let white = Image::constant(8, 8, 3, 1.0);
        assert!((psnr(&black, &white).unwrap() - 0.0).abs() < 1e-12);

        // MSE == 1 -> 10*log10(255^2) = 48.1308 dB.
        let lo = Image::constant(8, 8, 3, 100.0 / 255.0);
        let hi = Image::constant(8, 8, 3, 101.0 / 255.0);
        assert!((psnr(&lo, &hi).unwrap() - 48.130_803_608_679_344).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 32, 32);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((ssim_global(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_pair_matches_closed_form() {
        let a = Image::constant(32, 32, 3, 0.2);
        let b = Image::constant(32, 32, 3, 0.8);
        let (ma, mb) = (0.2 * 255.0, 0.8 * 255.0);
        let c1 = (K1 * L) * (K1 * L);
        // Sigma terms vanish: value = (2 mu_a mu_b + c1) / (mu_a^2 + mu_b^2 + c1).
        let want = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
        assert!((ssim_global(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_direct_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let a = random_image(&mut rng, 24, 20);
            let b = random_image(&mut rng, 24, 20);
            let got = ssim(&a, &b).unwrap();
            let want = ssim_oracle(&a, &b);
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 20, 20);
        let b = random_image(&mut rng, 20, 20);
        let s_ab = ssim(&a, &b).unwrap();
        let s_ba = ssim(&b, &a).unwrap();
        assert!((s_ab - s_ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&s_ab));
    }

    #[test]
    fn metrics_reject_shape_mismatch() {
        let a = Image::zeros(8, 8, 3);
        let b = Image::zeros(8, 9, 3);
        assert!(matches!(mse(&a, &b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(ssim(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn psnr_degrades_monotonically_with_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = Image::from_fn(32, 32, 3, |i, j, _| ((i + j) % 32) as f32 / 31.0);
        let mut last = f64::INFINITY;
        for (idx, std) in [0.02f32, 0.08, 0.2].iter().enumerate() {
            // Average over a few seeds to keep the trend stable.
            let mut avg = 0.0;
            for _ in 0..5 {
                let noisy = Image::from_fn(32, 32, 3, |i, j, c| {
                    let n: f32 = rng.random::<f32>() - 0.5;
                    base.data()[[i, j, c]] + n * 2.0 * std
                });
                avg += psnr(&base, &noisy).unwrap();
            }
            avg /= 5.0;
            assert!(avg < last, "level {idx}: psnr {avg} did not decrease from {last}");
            last = avg;
        }
    }
}
