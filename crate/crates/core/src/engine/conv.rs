//! Convolution kernels: per-image im2col followed by a single sgemm.
//!
//! Weight gradients are computed per image and summed in batch order so the
//! parallel and sequential paths agree bit for bit.

use crate::par;
use std::cell::Cell;

thread_local! {
    static WIDE: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with convolution forward passes accumulated in f64 on this thread.
///
/// Outputs are still rounded to f32 once per element; only the dot-product
/// rounding goes away. Used by finite-difference checks, whose resolution is
/// set by forward rounding noise.
pub fn with_wide_accumulation<R>(f: impl FnOnce() -> R) -> R {
    let prev = WIDE.with(|w| w.replace(true));
    let r = f();
    WIDE.with(|w| w.set(prev));
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    #[inline]
    fn cols(&self) -> usize {
        self.ci * self.k * self.k
    }

    #[inline]
    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1 stride-1 unpadded conv reads the input directly as its column matrix.
    #[inline]
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox·s + kx − p` lies inside `0..w`.
#[inline]
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let (s, p) = (g.stride, g.pad);
    // smallest ox with ox·s + kx >= p
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // largest ox with ox·s + kx − p <= w − 1, exclusive bound
    let hi = if g.w + p > kx { ((g.w + p - kx - 1) / s + 1).min(g.wo) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, x: &[f32], col: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.out_plane();
    for c in 0..g.ci {
        let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &xin[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let ix0 = lo * s + kx - g.pad;
                    if s == 1 {
                        out_row[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (j, o) in out_row[lo..hi].iter_mut().enumerate() {
                            *o = src[ix0 + j * s];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f32], dx: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.out_plane();
    for c in 0..g.ci {
        let xin = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        continue;
                    }
                    let dst = &mut xin[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.wo + lo..oy * g.wo + hi];
                    let ix0 = lo * s + kx - g.pad;
                    if s == 1 {
                        for (d, v) in dst[ix0..ix0 + srow.len()].iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in srow.iter().enumerate() {
                            dst[ix0 + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]` (+ `c` when `accumulate`), with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices sized for the given dims and strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(g: &ConvGeom, x: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let in_item = g.ci * g.h * g.w;
    let out_item = g.co * g.out_plane();
    let kk = g.cols();
    let plane = g.out_plane();
    let mut out = vec![0.0f32; g.n * out_item];
    if WIDE.with(Cell::get) {
        let w64: Vec<f64> = weight.iter().map(|&v| f64::from(v)).collect();
        par::for_each_chunk_mut(&mut out, out_item, |i, y| {
            let mut col = vec![0.0f32; kk * plane];
            im2col(g, &x[i * in_item..(i + 1) * in_item], &mut col);
            let col: Vec<f64> = col.iter().map(|&v| f64::from(v)).collect();
            let mut acc = vec![0.0f64; out_item];
            for (co, row) in acc.chunks_exact_mut(plane).enumerate() {
                row.fill(f64::from(bias[co]));
            }
            // SAFETY: operands are dense row-major with the stated dims.
            unsafe {
                matrixmultiply::dgemm(
                    g.co, kk, plane, 1.0, w64.as_ptr(), kk as isize, 1, col.as_ptr(), plane as isize, 1, 1.0,
                    acc.as_mut_ptr(), plane as isize, 1,
                );
            }
            for (o, a) in y.iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        });
        return out;
    }
    par::for_each_chunk_mut(&mut out, out_item, |i, y| {
        let xi = &x[i * in_item..(i + 1) * in_item];
        for (co, row) in y.chunks_exact_mut(plane).enumerate() {
            row.fill(bias[co]);
        }
        if g.is_pointwise() {
            gemm(g.co, kk, plane, weight, (kk as isize, 1), xi, (plane as isize, 1), y, true);
        } else {
            let mut col = vec![0.0f32; kk * plane];
            im2col(g, xi, &mut col);
            gemm(g.co, kk, plane, weight, (kk as isize, 1), &col, (plane as isize, 1), y, true);
        }
    });
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Vec<f32>,
    pub db: Vec<f32>,
}

pub(crate) fn backward(
    g: &ConvGeom,
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    need_dx: bool,
) -> ConvGrads {
    let in_item = g.ci * g.h * g.w;
    let out_item = g.co * g.out_plane();
    let kk = g.cols();
    let plane = g.out_plane();

    // Per image: (dx_i, dw_i, db_i).
    let parts = par::map_indexed(g.n, |i| {
        let xi = &x[i * in_item..(i + 1) * in_item];
        let dyi = &dy[i * out_item..(i + 1) * out_item];
        let col_owned;
        let col: &[f32] = if g.is_pointwise() {
            xi
        } else {
            let mut c = vec![0.0f32; kk * plane];
            im2col(g, xi, &mut c);
            col_owned = c;
            &col_owned
        };
        // dw_i[co×kk] = dy_i[co×P] · colᵀ[P×kk]
        let mut dw = vec![0.0f32; g.co * kk];
        gemm(g.co, plane, kk, dyi, (plane as isize, 1), col, (1, plane as isize), &mut dw, false);
        let db: Vec<f32> = dyi.chunks_exact(plane).map(|r| r.iter().sum()).collect();
        let dx = need_dx.then(|| {
            // dcol[kk×P] = Wᵀ[kk×co] · dy_i[co×P]
            if g.is_pointwise() {
                let mut dxi = vec![0.0f32; in_item];
                gemm(kk, g.co, plane, weight, (1, kk as isize), dyi, (plane as isize, 1), &mut dxi, false);
                dxi
            } else {
                let mut dcol = vec![0.0f32; kk * plane];
                gemm(kk, g.co, plane, weight, (1, kk as isize), dyi, (plane as isize, 1), &mut dcol, false);
                let mut dxi = vec![0.0f32; in_item];
                col2im(g, &dcol, &mut dxi);
                dxi
            }
        });
        (dx, dw, db)
    });

    let mut dw = vec![0.0f32; g.co * kk];
    let mut db = vec![0.0f32; g.co];
    let mut dx = need_dx.then(|| Vec::with_capacity(g.n * in_item));
    for (dxi, dwi, dbi) in parts {
        for (a, b) in dw.iter_mut().zip(&dwi) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(&dbi) {
            *a += b;
        }
        if let (Some(acc), Some(part)) = (dx.as_mut(), dxi) {
            acc.extend_from_slice(&part);
        }
    }
    ConvGrads { dx, dw, db }
}
