//! PSNR, SSIM and dataset-level evaluation.
//!
//! All arithmetic is in f64. Per-image work runs through [`crate::par`] and is
//! summed in image order, so a [`MetricRow`] is bitwise stable for a seed.

use crate::data::{noisy_batch, ImageSet};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::models::Denoiser;
use crate::par;

/// Returned for (near-)zero MSE so tables never hold infinities.
pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn mse_of(a: &[f32], b: &[f32], clamp: Option<f32>) -> f64 {
    let c = |v: f32| clamp.map_or(v, |hi| v.clamp(0.0, hi));
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(c(x)) - f64::from(c(y));
            d * d
        })
        .sum();
    s / a.len().max(1) as f64
}

fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        (10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP)
    }
}

/// Mean squared error without clamping.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("mse", a, b)?;
    Ok(mse_of(a.data(), b.data(), None))
}

/// PSNR in dB with both images clamped to `[0, data_range]` first.
pub fn psnr_with_range(a: &Tensor, b: &Tensor, data_range: f32) -> Result<f64> {
    same_shape("psnr", a, b)?;
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data range must be positive, got {data_range}")));
    }
    Ok(psnr_from_mse(mse_of(a.data(), b.data(), Some(data_range)), f64::from(data_range)))
}

/// PSNR in dB at data range 1, clamped inputs.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    psnr_with_range(a, b, 1.0)
}

/// PSNR in dB at data range 1 on the raw values. Used for noisy inputs, whose
/// unclamped error is what the noise level describes.
pub fn psnr_unclamped(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("psnr", a, b)?;
    Ok(psnr_from_mse(mse_of(a.data(), b.data(), None), 1.0))
}

/// SSIM averaging window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SsimWindow {
    /// `size × size` Gaussian, normalized to sum 1.
    Gaussian { size: usize, std: f64 },
    /// `size × size` box.
    Uniform { size: usize },
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow::Gaussian { size: 11, std: 1.5 }
    }
}

impl SsimWindow {
    pub fn size(&self) -> usize {
        match *self {
            SsimWindow::Gaussian { size, .. } | SsimWindow::Uniform { size } => size,
        }
    }

    /// The same window shrunk to the largest odd size fitting `h × w`.
    fn fitted(self, h: usize, w: usize) -> Self {
        let fit = self.size().min(h).min(w);
        let fit = if fit.is_multiple_of(2) { fit.saturating_sub(1) } else { fit }.max(1);
        match self {
            SsimWindow::Gaussian { std, .. } => SsimWindow::Gaussian { size: fit, std },
            SsimWindow::Uniform { .. } => SsimWindow::Uniform { size: fit },
        }
    }

    /// 1-D taps; both windows are separable.
    pub fn taps(&self) -> Vec<f64> {
        match *self {
            SsimWindow::Gaussian { size, std } => {
                let c = (size as f64 - 1.0) / 2.0;
                let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * std * std)).exp()).collect();
                let s: f64 = g.iter().sum();
                g.into_iter().map(|v| v / s).collect()
            }
            SsimWindow::Uniform { size } => vec![1.0 / size as f64; size],
        }
    }
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one `h × w` plane pair at data range 1.
fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, taps: &[f64]) -> f64 {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let a: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&a, h, w, taps);
    let mu_b = filter_valid(&b, h, w, taps);
    let aa = filter_valid(&prod(&a, &a), h, w, taps);
    let bb = filter_valid(&prod(&b, &b), h, w, taps);
    let ab = filter_valid(&prod(&a, &b), h, w, taps);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    sum / mu_a.len() as f64
}

/// Mean SSIM over items, channels and valid window positions.
///
/// Images smaller than the window use the largest odd window that fits.
pub fn ssim_with(a: &Tensor, b: &Tensor, window: SsimWindow) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let [n, c, h, w] = a.shape();
    if n * c * h * w == 0 {
        return Err(Error::shape("ssim", "empty image"));
    }
    let taps = window.fitted(h, w).taps();
    let plane = h * w;
    let per_plane = par::map_indexed(n * c, |i| {
        let r = i * plane..(i + 1) * plane;
        ssim_plane(&a.data()[r.clone()], &b.data()[r], h, w, &taps)
    });
    Ok(per_plane.iter().sum::<f64>() / (n * c) as f64)
}

/// SSIM with the 11×11, std-1.5 Gaussian window.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    ssim_with(a, b, SsimWindow::default())
}

/// Mean PSNR/SSIM of one model at one noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub model: String,
    pub sigma: f32,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_images: usize,
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    /// Clamp estimates to `[0, 1]` before scoring. Turning this off scores raw
    /// values, which for the identity model gives the noisy-input PSNR.
    pub clamp_outputs: bool,
    /// Images per forward pass.
    pub batch: usize,
    /// Noise seed; image `i` is corrupted from substream `(seed, i)`.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { clamp_outputs: true, batch: 64, seed: crate::models::DEFAULT_SEED }
    }
}

/// Corrupts every image at `sigma`, denoises it and averages per-image PSNR
/// and SSIM against the clean image.
pub fn evaluate(model: &dyn Denoiser, set: &ImageSet, sigma: f32, cfg: &EvalConfig) -> Result<MetricRow> {
    if set.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let batch = cfg.batch.max(1);
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let indices: Vec<usize> = (0..set.len()).collect();
    // images of different sizes (folders) cannot share a batch
    let uniform = set.images.iter().all(|t| t.shape() == set.images[0].shape());
    let groups: Vec<&[usize]> = if uniform { indices.chunks(batch).collect() } else { indices.chunks(1).collect() };
    for group in groups {
        let clean = set.batch(group)?;
        let ids: Vec<u64> = group.iter().map(|&i| i as u64).collect();
        let pair = noisy_batch(&clean, sigma, cfg.seed, &ids)?;
        let est = model.denoise(&pair.noisy, sigma)?;
        if !est.is_finite() {
            return Err(Error::NonFinite { op: "evaluate" });
        }
        let scores = par::map_indexed(group.len(), |j| -> Result<(f64, f64)> {
            let c = clean.select(j);
            let e = est.select(j);
            if cfg.clamp_outputs {
                let e = e.clamp(0.0, 1.0);
                Ok((psnr(&e, &c)?, ssim(&e, &c)?))
            } else {
                Ok((psnr_unclamped(&e, &c)?, ssim(&e, &c)?))
            }
        });
        for s in scores {
            let (p, q) = s?;
            psnr_sum += p;
            ssim_sum += q;
        }
    }
    let n = set.len();
    Ok(MetricRow { model: model.name(), sigma, psnr_db: psnr_sum / n as f64, ssim: ssim_sum / n as f64, n_images: n })
}

/// `20·log₁₀(255/σ)`: the expected PSNR of an unclamped noisy input.
pub fn noisy_input_psnr(sigma: f32) -> f64 {
    if sigma <= 0.0 {
        PSNR_CAP
    } else {
        20.0 * (255.0 / f64::from(sigma)).log10()
    }
}

#[cfg(test)]
mod tests;
