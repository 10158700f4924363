//! Full-image inference from overlapping fixed-size tiles.
//!
//! The image is reflection-padded until both sides are at least one tile and
//! a multiple of the backbone's downsampling factor. Each tile is denoised
//! independently, weighted by a separable Hann window and accumulated; the
//! canvas is divided by the summed weights, cropped back and clamped.

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::models::Denoiser;
use crate::par;

pub const DEFAULT_TILE: usize = 128;
pub const DEFAULT_STRIDE: usize = 64;

/// Smallest weight a tile contributes, so pixels near a tile edge that only
/// one window covers still get a nonzero total.
pub const WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub tile: usize,
    pub stride: usize,
    /// Original image size.
    pub height: usize,
    pub width: usize,
    /// `(top, bottom, left, right)` reflection amounts.
    pub pad: (usize, usize, usize, usize),
    /// Tile origins `(top, left)` on the padded canvas, row-major.
    pub windows: Vec<(usize, usize)>,
    /// `(1, 1, tile, tile)` blend window.
    pub weight: Tensor,
}

impl TilePlan {
    pub fn canvas(&self) -> (usize, usize) {
        let (t, b, l, r) = self.pad;
        (self.height + t + b, self.width + l + r)
    }

    /// Summed blend weight at every canvas pixel, accumulated in window order.
    pub fn weight_sum(&self) -> Vec<f64> {
        let (ch, cw) = self.canvas();
        let mut acc = vec![0.0f64; ch * cw];
        let wt = self.weight.data();
        for &(top, left) in &self.windows {
            for y in 0..self.tile {
                let row = &mut acc[(top + y) * cw + left..(top + y) * cw + left + self.tile];
                for (a, &v) in row.iter_mut().zip(&wt[y * self.tile..(y + 1) * self.tile]) {
                    *a += f64::from(v);
                }
            }
        }
        acc
    }
}

/// Window origins along one axis of length `len`; the last window is pulled
/// back so it ends exactly at the boundary.
fn axis_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        let clamped = o.min(len - tile);
        if out.last() != Some(&clamped) {
            out.push(clamped);
        }
        if o + tile >= len {
            return out;
        }
        o += stride;
    }
}

/// Pads `len` up to at least `tile` and to a multiple of `multiple`, split as
/// evenly as possible between the two sides.
fn axis_pad(len: usize, tile: usize, multiple: usize) -> (usize, usize) {
    let target = len.max(tile).div_ceil(multiple) * multiple;
    let total = target - len;
    (total / 2, total - total / 2)
}

pub fn plan_tiles(height: usize, width: usize, tile: usize, stride: usize, multiple: usize) -> Result<TilePlan> {
    if stride == 0 || tile < stride {
        return Err(Error::invalid(format!("need tile >= stride >= 1, got tile {tile}, stride {stride}")));
    }
    if height == 0 || width == 0 || multiple == 0 {
        return Err(Error::invalid("image sides and spatial multiple must be positive"));
    }
    let weight = blend_window(tile)?;
    let (t, b) = axis_pad(height, tile, multiple);
    let (l, r) = axis_pad(width, tile, multiple);
    let rows = axis_origins(height + t + b, tile, stride);
    let cols = axis_origins(width + l + r, tile, stride);
    let windows = rows.iter().flat_map(|&y| cols.iter().map(move |&x| (y, x))).collect();
    Ok(TilePlan { tile, stride, height, width, pad: (t, b, l, r), windows, weight })
}

/// Symmetric Hann taps `½(1 − cos(2πi/(n−1)))`, floored at [`WEIGHT_FLOOR`].
pub fn hann_taps(n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos()).max(WEIGHT_FLOOR))
        .collect()
}

/// Separable floored Hann window as a `(1, 1, tile, tile)` tensor.
pub fn blend_window(tile: usize) -> Result<Tensor> {
    if tile < 2 {
        return Err(Error::invalid(format!("tile must be at least 2, got {tile}")));
    }
    let taps = hann_taps(tile);
    Ok(Tensor::from_fn([1, 1, tile, tile], |[_, _, y, x]| (taps[y] * taps[x]) as f32))
}

/// Denoises a `(1, 3, H, W)` image tile by tile and returns the clamped result.
pub fn denoise_full(model: &dyn Denoiser, image: &Tensor, sigma: f32, tile: usize, stride: usize) -> Result<Tensor> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 3 {
        return Err(Error::shape("denoise_full", format!("expected (1,3,H,W), got {:?}", image.shape())));
    }
    let plan = plan_tiles(h, w, tile, stride, model.spatial_multiple())?;
    let (t, b, l, r) = plan.pad;
    let canvas = image.reflect_pad(t, b, l, r);
    let outputs = par::map_indexed(plan.windows.len(), |i| {
        let (top, left) = plan.windows[i];
        let crop = canvas.crop(top, left, tile, tile)?;
        let out = model.denoise(&crop, sigma)?;
        if out.shape() != crop.shape() {
            return Err(Error::shape("denoise_full", format!("model returned {:?} for a {:?} tile", out.shape(), crop.shape())));
        }
        Ok(out)
    });

    let (ch, cw) = plan.canvas();
    let plane = ch * cw;
    let mut num = vec![0.0f64; 3 * plane];
    let wt = plan.weight.data();
    for (&(top, left), out) in plan.windows.iter().zip(outputs) {
        let out = out?;
        let od = out.data();
        for ci in 0..3 {
            for y in 0..tile {
                let base = ci * plane + (top + y) * cw + left;
                let src = &od[(ci * tile + y) * tile..(ci * tile + y + 1) * tile];
                for ((a, &v), &wv) in num[base..base + tile].iter_mut().zip(src).zip(&wt[y * tile..(y + 1) * tile]) {
                    *a += f64::from(wv) * f64::from(v);
                }
            }
        }
    }
    let den = plan.weight_sum();
    Ok(Tensor::from_fn([1, 3, h, w], |[_, ci, y, x]| {
        let p = (y + t) * cw + x + l;
        ((num[ci * plane + p] / den[p]) as f32).clamp(0.0, 1.0)
    }))
}

/// Direct forward when the image fits in one tile, tiled otherwise.
pub fn denoise_image(model: &dyn Denoiser, image: &Tensor, sigma: f32, tile: usize, stride: usize) -> Result<Tensor> {
    if image.h() <= tile && image.w() <= tile {
        Ok(model.denoise(image, sigma)?.clamp(0.0, 1.0))
    } else {
        denoise_full(model, image, sigma, tile, stride)
    }
}

#[cfg(test)]
mod tests;
