//! Procedural stand-in images for machines without the real datasets.
//!
//! Each image is a two-colour gradient background with a handful of
//! anti-aliased ellipses and rotated rectangles, some carrying a faint
//! sinusoidal texture. Pixels are quantised to 8 bits so the images
//! round-trip through the CIFAR binary and PNG encoders unchanged.

use std::fs;
use std::path::Path;

use super::cifar::{encode_records, CIFAR_SIDE, RECORDS_PER_FILE, TEST_FILE, TRAIN_FILES};
use super::image_io::quantize;
use super::rng::Rng;
use super::{ImageSet, ImageSource};
use crate::engine::Tensor;
use crate::error::Result;

/// Seed of the stand-in dataset used when no real data is configured.
pub const DEFAULT_SYNTHETIC_SEED: u64 = 1234;

fn smoothstep(edge: f64) -> f64 {
    // Coverage of a pixel by a shape whose signed distance is `edge` pixels.
    (0.5 - edge).clamp(0.0, 1.0)
}

struct Shape {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    ellipse: bool,
    color: [f64; 3],
    stripes: Option<(f64, f64, f64)>,
}

impl Shape {
    fn random(rng: &mut Rng, h: usize, w: usize) -> Self {
        let side = h.min(w) as f64;
        let stripes = (rng.uniform() < 0.3).then(|| {
            (rng.range(0.2, 0.9), rng.range(0.0, std::f64::consts::TAU), rng.range(0.03, 0.08))
        });
        Shape {
            cy: rng.range(0.0, h as f64),
            cx: rng.range(0.0, w as f64),
            ry: rng.range(0.08, 0.35) * side,
            rx: rng.range(0.08, 0.35) * side,
            angle: rng.range(0.0, std::f64::consts::PI),
            ellipse: rng.uniform() < 0.5,
            color: [rng.uniform(), rng.uniform(), rng.uniform()],
            stripes,
        }
    }

    /// Approximate signed distance in pixels (negative inside).
    fn distance(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        if self.ellipse {
            let r = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
            (r - 1.0) * self.rx.min(self.ry)
        } else {
            (u.abs() - self.rx).max(v.abs() - self.ry)
        }
    }
}

/// One procedural RGB image of the given size, already 8-bit quantised.
pub fn synthetic_image(rng: &mut Rng, h: usize, w: usize) -> Tensor {
    let c0 = [rng.uniform(), rng.uniform(), rng.uniform()];
    let c1 = [rng.uniform(), rng.uniform(), rng.uniform()];
    let theta = rng.range(0.0, std::f64::consts::TAU);
    let (gs, gc) = theta.sin_cos();
    let n_shapes = 3 + rng.below(5) as usize;
    let shapes: Vec<Shape> = (0..n_shapes).map(|_| Shape::random(rng, h, w)).collect();
    let span = (h as f64).hypot(w as f64);

    let mut rgb = vec![[0.0f64; 3]; h * w];
    for y in 0..h {
        for x in 0..w {
            let (yc, xc) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = (((xc - w as f64 / 2.0) * gc + (yc - h as f64 / 2.0) * gs) / span + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
            for s in &shapes {
                let a = smoothstep(s.distance(yc, xc));
                if a <= 0.0 {
                    continue;
                }
                let tex = s.stripes.map_or(0.0, |(freq, phase, amp)| {
                    amp * ((xc * phase.cos() + yc * phase.sin()) * freq + phase).sin()
                });
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + (s.color[c] + tex) * a;
                }
            }
            rgb[y * w + x] = px;
        }
    }
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.iter().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f32::from(quantize(px[c] as f32)) / 255.0;
        }
    }
    Tensor::new([1, 3, h, w], data).expect("sizes match")
}

/// Writes a CIFAR-10-layout binary dataset of procedural 32×32 images:
/// five training files and one test file of `records_per_file` records each.
/// Image `i` of file `f` depends only on `(seed, f, i)`.
pub fn write_synthetic_cifar10(dir: &Path, seed: u64, records_per_file: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files: Vec<&str> = TRAIN_FILES.iter().copied().chain([TEST_FILE]).collect();
    for (fi, name) in files.iter().enumerate() {
        let images = crate::par::map_indexed(records_per_file, |i| {
            let mut rng = Rng::substream(seed, (fi * RECORDS_PER_FILE.max(records_per_file) + i) as u64);
            synthetic_image(&mut rng, CIFAR_SIDE, CIFAR_SIDE)
        });
        fs::write(dir.join(name), encode_records(&images)?)?;
    }
    Ok(())
}

fn synthetic_split(seed: u64, files: &[(usize, &str)], limit: usize, source: ImageSource) -> Result<ImageSet> {
    let ids: Vec<(usize, &str, usize)> = files
        .iter()
        .flat_map(|&(fi, name)| (0..RECORDS_PER_FILE).map(move |i| (fi, name, i)))
        .take(limit)
        .collect();
    let images = crate::par::map_indexed(ids.len(), |k| {
        let (fi, _, i) = ids[k];
        let mut rng = Rng::substream(seed, (fi * RECORDS_PER_FILE + i) as u64);
        synthetic_image(&mut rng, CIFAR_SIDE, CIFAR_SIDE)
    });
    let stem = |name: &str| name.trim_end_matches(".bin").to_string();
    let names = ids.iter().map(|&(_, name, i)| format!("{}/{i:05}", stem(name))).collect();
    ImageSet::new(images, names, source)
}

/// The first `max_train` / `max_test` images of the full-size synthetic
/// dataset, generated in memory. Identical, image for image, to loading what
/// `write_synthetic_cifar10(dir, seed, 10_000)` writes.
pub fn synthetic_cifar10(seed: u64, max_train: usize, max_test: usize) -> Result<(ImageSet, ImageSet)> {
    let train_files: Vec<(usize, &str)> = TRAIN_FILES.iter().copied().enumerate().collect();
    let train = synthetic_split(seed, &train_files, max_train, ImageSource::Cifar10Train)?;
    let test = synthetic_split(seed, &[(TRAIN_FILES.len(), TEST_FILE)], max_test, ImageSource::Cifar10Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_cifar10_partial;

    #[test]
    fn images_are_deterministic_quantised_and_varied() {
        let a = synthetic_image(&mut Rng::new(5), 32, 32);
        let b = synthetic_image(&mut Rng::new(5), 32, 32);
        let c = synthetic_image(&mut Rng::new(6), 32, 32);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|&v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-4));
        let mean = a.mean();
        let var = a.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / a.numel() as f64;
        assert!(var > 1e-3, "image should not be flat");
    }

    #[test]
    fn in_memory_split_matches_the_written_files() {
        let tmp = tempfile::tempdir().unwrap();
        // short files keep the full-size record ids, so prefixes agree
        write_synthetic_cifar10(tmp.path(), 9, 4).unwrap();
        let (tr, te) = load_cifar10_partial(tmp.path(), 4, 4).unwrap();
        let (mtr, mte) = synthetic_cifar10(9, 4, 4).unwrap();
        assert_eq!((tr.images, tr.names), (mtr.images, mtr.names));
        assert_eq!((te.images, te.names), (mte.images, mte.names));
    }

    #[test]
    fn synthetic_dataset_loads() {
        let tmp = tempfile::tempdir().unwrap();
        write_synthetic_cifar10(tmp.path(), 1, 4).unwrap();
        let (train, test) = load_cifar10_partial(tmp.path(), 100, 100).unwrap();
        assert_eq!((train.len(), test.len()), (20, 4));
        assert_ne!(train.images[0], train.images[1]);
    }
}
