use super::rng::Rng;
use super::ImageSet;
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = t.shape();
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut data = Vec::with_capacity(n * c * out_h * out_w);
    for plane in t.data().chunks_exact(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], data).expect("sizes computed above")
}

/// Upscales so the shorter side is at least `min_side`, preserving aspect.
pub fn ensure_min_side(t: &Tensor, min_side: usize) -> Tensor {
    let (h, w) = (t.h(), t.w());
    if h.min(w) >= min_side {
        return t.clone();
    }
    let scale = min_side as f64 / h.min(w) as f64;
    let nh = ((h as f64 * scale).round() as usize).max(min_side);
    let nw = ((w as f64 * scale).round() as usize).max(min_side);
    resize_bilinear(t, nh, nw)
}

/// Draws `count` random `size × size` crops: image chosen uniformly, then a
/// uniform top-left corner. Images whose shorter side is below `size` are
/// first upscaled bilinearly.
pub fn sample_patches(set: &ImageSet, size: usize, count: usize, rng: &mut Rng) -> Result<Vec<Tensor>> {
    if set.is_empty() {
        return Err(Error::invalid("cannot sample patches from an empty image set"));
    }
    if size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let mut resized: Vec<Option<Tensor>> = vec![None; set.len()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = rng.below(set.len() as u64) as usize;
        let img = resized[idx].get_or_insert_with(|| ensure_min_side(&set.images[idx], size));
        let top = rng.below((img.h() - size + 1) as u64) as usize;
        let left = rng.below((img.w() - size + 1) as u64) as usize;
        out.push(img.crop(top, left, size, size)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageSource;

    fn set_of(images: Vec<Tensor>) -> ImageSet {
        let names = (0..images.len()).map(|i| i.to_string()).collect();
        ImageSet::new(images, names, ImageSource::Folder).unwrap()
    }

    fn gradient(h: usize, w: usize) -> Tensor {
        Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| ((y * w + x) as f32 / (h * w) as f32 + c as f32 * 0.01).min(1.0))
    }

    #[test]
    fn full_size_patch_is_the_image() {
        let img = gradient(16, 16);
        let set = set_of(vec![img.clone()]);
        let p = sample_patches(&set, 16, 3, &mut Rng::new(1)).unwrap();
        assert!(p.iter().all(|t| *t == img));
    }

    #[test]
    fn patches_have_requested_shape_and_small_images_are_upscaled() {
        let set = set_of(vec![gradient(40, 60), gradient(10, 20)]);
        let p = sample_patches(&set, 32, 50, &mut Rng::new(2)).unwrap();
        assert!(p.iter().all(|t| t.shape() == [1, 3, 32, 32]));
        assert_eq!(ensure_min_side(&gradient(10, 20), 32).shape(), [1, 3, 32, 64]);
    }

    #[test]
    fn empty_set_is_an_error() {
        let set = set_of(vec![]);
        assert!(sample_patches(&set, 8, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = gradient(9, 7);
        assert_eq!(resize_bilinear(&img, 9, 7), img);
        let c = Tensor::full([1, 3, 5, 5], 0.25);
        assert!(resize_bilinear(&c, 13, 8).data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn corners_are_uniform_chi_square() {
        // 10^4 corners of 128-patches on a 256² image, binned on a 4×4 grid.
        // Expected counts follow the number of admissible corners per bin.
        let img = Tensor::from_fn([1, 3, 256, 256], |[_, _, y, x]| (y * 256 + x) as f32 / 65536.0);
        let set = set_of(vec![img]);
        let mut rng = Rng::new(1234);
        let positions = 129usize;
        let bin_of = |p: usize| p * 4 / positions;
        let mut counts = [[0usize; 4]; 4];
        for p in sample_patches(&set, 128, 10_000, &mut rng).unwrap() {
            let v = p.at(0, 0, 0, 0) * 65536.0;
            let (y, x) = ((v as usize) / 256, (v as usize) % 256);
            counts[bin_of(y)][bin_of(x)] += 1;
        }
        let width: Vec<f64> = (0..4).map(|b| (0..positions).filter(|&p| bin_of(p) == b).count() as f64).collect();
        let total = (positions * positions) as f64;
        let mut chi2 = 0.0;
        for by in 0..4 {
            for bx in 0..4 {
                let expected = 10_000.0 * width[by] * width[bx] / total;
                chi2 += (counts[by][bx] as f64 - expected).powi(2) / expected;
            }
        }
        // χ²(15) upper 1 % point is 30.58.
        assert!(chi2 < 30.58, "chi2 {chi2}");
    }
}
