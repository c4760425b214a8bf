//! Image quality metrics and ensemble statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealImage;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 200.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub kspace_residual: Option<f64>,
    pub notes: String,
}

/// `20 log10(max(ref) / rmse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &RealImage, test: &RealImage) -> Result<f64> {
    test.ensure_shape(reference.shape())?;
    if reference.data().iter().all(|&v| v == 0.0) {
        return Err(Error::param("reference", "reference image is identically zero"));
    }
    let peak = reference.max();
    if !(peak > 0.0) {
        return Err(Error::param("reference", "reference peak must be positive"));
    }
    let mse = reference.sub(test).norm_sqr() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (peak / mse.sqrt()).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Separable correlation with `g`, keeping only windows fully inside the image.
fn filter_valid(data: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|k| g[k] * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| g[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all 11x11 Gaussian windows (sigma 1.5) inside the image, with
/// an explicit dynamic range.
pub fn ssim_with_range(reference: &RealImage, test: &RealImage, range: f64) -> Result<f64> {
    test.ensure_shape(reference.shape())?;
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::UnsupportedSize(h.min(w)));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::param("range", "dynamic range must be positive"));
    }
    let g = gaussian_window();
    let (a, b) = (reference.data(), test.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, _, _) = filter_valid(a, h, w, &g);
    let (mu_b, _, _) = filter_valid(b, h, w, &g);
    let (aa, _, _) = filter_valid(&prod(&|x, _| x * x), h, w, &g);
    let (bb, _, _) = filter_valid(&prod(&|_, y| y * y), h, w, &g);
    let (ab, _, _) = filter_valid(&prod(&|x, y| x * y), h, w, &g);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM with the dynamic range `max(ref) - min(ref)` (1 for a constant
/// reference).
pub fn ssim(reference: &RealImage, test: &RealImage) -> Result<f64> {
    let range = reference.max() - reference.min();
    ssim_with_range(reference, test, if range > 0.0 { range } else { 1.0 })
}

/// SSIM with the dynamic range of the union of both images, which makes the
/// metric symmetric in its arguments.
pub fn ssim_symmetric(a: &RealImage, b: &RealImage) -> Result<f64> {
    let range = a.max().max(b.max()) - a.min().min(b.min());
    ssim_with_range(a, b, if range > 0.0 { range } else { 1.0 })
}

/// Pixelwise mean and population standard deviation.
pub fn pixelwise_stats(samples: &[RealImage]) -> Result<(RealImage, RealImage)> {
    if samples.len() < 2 {
        return Err(Error::param("samples", "need at least two samples"));
    }
    let (h, w) = samples[0].shape();
    for s in samples {
        s.ensure_shape((h, w))?;
    }
    let n = samples.len() as f64;
    let mut mean = RealImage::zeros(h, w);
    for s in samples {
        mean.axpy(1.0, s);
    }
    mean.scale(1.0 / n);
    let mut var = RealImage::zeros(h, w);
    for s in samples {
        for ((v, &x), &m) in var.data_mut().iter_mut().zip(s.data()).zip(mean.data()) {
            *v += (x - m) * (x - m);
        }
    }
    Ok((mean, var.map(|v| (v / n).sqrt())))
}
