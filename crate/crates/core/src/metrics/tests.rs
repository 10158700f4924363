use super::*;
use crate::data::synthetic::synthetic_image;
use crate::data::{ImageSource, Rng};
use crate::models::IdentityDenoiser;
use proptest::prelude::*;

fn rand_image(rng: &mut Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_f32())
}

fn synthetic_set(n: usize, side: usize, seed: u64) -> ImageSet {
    let mut rng = Rng::new(seed);
    let images = (0..n).map(|_| synthetic_image(&mut rng, side, side)).collect();
    ImageSet::new(images, (0..n).map(|i| format!("img{i}")).collect(), ImageSource::Folder).unwrap()
}

/// SSIM straight from the definition: for every window position, weighted
/// means, variances and covariance from an explicit 2-D weight table.
fn ssim_oracle(a: &Tensor, b: &Tensor, weights: &[Vec<f64>]) -> f64 {
    let k = weights.len();
    let [n, c, h, w] = a.shape();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            for y0 in 0..=h - k {
                for x0 in 0..=w - k {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for dy in 0..k {
                        for dx in 0..k {
                            ma += weights[dy][dx] * f64::from(a.at(ni, ci, y0 + dy, x0 + dx));
                            mb += weights[dy][dx] * f64::from(b.at(ni, ci, y0 + dy, x0 + dx));
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for dy in 0..k {
                        for dx in 0..k {
                            let p = f64::from(a.at(ni, ci, y0 + dy, x0 + dx)) - ma;
                            let q = f64::from(b.at(ni, ci, y0 + dy, x0 + dx)) - mb;
                            va += weights[dy][dx] * p * p;
                            vb += weights[dy][dx] * q * q;
                            cov += weights[dy][dx] * p * q;
                        }
                    }
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

fn gaussian_2d(size: usize, std: f64) -> Vec<Vec<f64>> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<Vec<f64>> = (0..size)
        .map(|y| {
            (0..size)
                .map(|x| {
                    let r2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
                    (-r2 / (2.0 * std * std)).exp()
                })
                .collect()
        })
        .collect();
    let s: f64 = raw.iter().flatten().sum();
    raw.into_iter().map(|row| row.into_iter().map(|v| v / s).collect()).collect()
}

#[test]
fn psnr_closed_forms() {
    let zeros = Tensor::zeros([1, 3, 4, 4]);
    let half = Tensor::full([1, 3, 4, 4], 0.5);
    assert!((psnr(&zeros, &half).unwrap() - 6.0206).abs() < 1e-4);
    let a = Tensor::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
    let b = Tensor::new([1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
    assert!((psnr(&a, &b).unwrap() - 3.0103).abs() < 1e-4);
    assert_eq!(psnr(&half, &half).unwrap(), PSNR_CAP);
}

#[test]
fn psnr_clamps_but_unclamped_does_not() {
    let a = Tensor::full([1, 1, 2, 2], 1.5);
    let b = Tensor::full([1, 1, 2, 2], 1.0);
    assert_eq!(psnr(&a, &b).unwrap(), PSNR_CAP);
    assert!((psnr_unclamped(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
    assert!((psnr_with_range(&Tensor::zeros([1, 1, 1, 1]), &Tensor::full([1, 1, 1, 1], 255.0), 255.0).unwrap()).abs() < 1e-12);
}

#[test]
fn metrics_reject_shape_mismatch() {
    let a = Tensor::zeros([1, 3, 4, 4]);
    let b = Tensor::zeros([1, 3, 4, 5]);
    assert!(psnr(&a, &b).is_err());
    assert!(ssim(&a, &b).is_err());
    assert!(mse(&a, &b).is_err());
}

#[test]
fn ssim_of_identical_images_is_one() {
    let mut rng = Rng::new(1);
    for shape in [[1, 3, 32, 32], [2, 1, 11, 11], [1, 3, 6, 9]] {
        let x = rand_image(&mut rng, shape);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn ssim_constant_images_closed_form() {
    let a = Tensor::zeros([1, 3, 16, 16]);
    let b = Tensor::full([1, 3, 16, 16], 0.5);
    let want = 1e-4 / (0.25 + 1e-4);
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    assert!((want - 3.998e-4).abs() < 1e-6);
}

#[test]
fn ssim_matches_sliding_window_oracle() {
    let mut rng = Rng::new(2);
    let gauss = gaussian_2d(11, 1.5);
    let uniform = vec![vec![1.0 / 49.0; 7]; 7];
    for i in 0..20 {
        let shape = [1, 3, 14 + i % 5, 12 + i % 7];
        let a = rand_image(&mut rng, shape);
        // correlated partner so the structure term is not trivially small
        let b = Tensor::from_fn(shape, |[n, c, y, x]| (0.7 * a.at(n, c, y, x) + 0.3 * rng.uniform_f32()).min(1.0));
        let got = ssim(&a, &b).unwrap();
        assert!((got - ssim_oracle(&a, &b, &gauss)).abs() <= 1e-5, "pair {i}");
        let got_u = ssim_with(&a, &b, SsimWindow::Uniform { size: 7 }).unwrap();
        assert!((got_u - ssim_oracle(&a, &b, &uniform)).abs() <= 1e-5, "pair {i} (uniform)");
    }
}

#[test]
fn ssim_small_images_use_largest_odd_window() {
    let mut rng = Rng::new(3);
    let a = rand_image(&mut rng, [1, 3, 8, 10]);
    let b = rand_image(&mut rng, [1, 3, 8, 10]);
    let want = ssim_oracle(&a, &b, &gaussian_2d(7, 1.5));
    assert!((ssim(&a, &b).unwrap() - want).abs() <= 1e-9);
}

#[test]
fn ssim_window_taps_sum_to_one() {
    for win in [SsimWindow::default(), SsimWindow::Uniform { size: 5 }, SsimWindow::Gaussian { size: 3, std: 0.5 }] {
        assert!((win.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(win.taps().len(), win.size());
    }
}

#[test]
fn identity_at_zero_noise_is_perfect() {
    let set = synthetic_set(8, 32, 4);
    let row = evaluate(&IdentityDenoiser, &set, 0.0, &EvalConfig::default()).unwrap();
    assert_eq!(row.psnr_db, PSNR_CAP);
    assert!((row.ssim - 1.0).abs() <= 1e-12);
    assert_eq!((row.model.as_str(), row.n_images), ("identity", 8));
}

#[test]
fn identity_reports_noisy_input_psnr() {
    let set = synthetic_set(300, 32, 5);
    let cfg = EvalConfig { clamp_outputs: false, ..Default::default() };
    let row = evaluate(&IdentityDenoiser, &set, 25.0, &cfg).unwrap();
    assert!((noisy_input_psnr(25.0) - 20.17).abs() < 0.005);
    assert!((row.psnr_db - noisy_input_psnr(25.0)).abs() < 0.05, "{}", row.psnr_db);
    // clamping the estimate can only remove error
    let clamped = evaluate(&IdentityDenoiser, &set, 25.0, &EvalConfig::default()).unwrap();
    assert!(clamped.psnr_db > row.psnr_db);
}

#[test]
fn evaluation_is_deterministic_and_batch_independent() {
    let set = synthetic_set(20, 16, 6);
    let base = evaluate(&IdentityDenoiser, &set, 50.0, &EvalConfig::default()).unwrap();
    assert_eq!(base, evaluate(&IdentityDenoiser, &set, 50.0, &EvalConfig::default()).unwrap());
    let small = EvalConfig { batch: 3, ..Default::default() };
    assert_eq!(base, evaluate(&IdentityDenoiser, &set, 50.0, &small).unwrap());
    let other = EvalConfig { seed: 99, ..Default::default() };
    assert_ne!(base.psnr_db, evaluate(&IdentityDenoiser, &set, 50.0, &other).unwrap().psnr_db);
}

#[test]
fn evaluation_of_empty_set_fails() {
    let empty = ImageSet::new(vec![], vec![], ImageSource::Folder).unwrap();
    assert!(evaluate(&IdentityDenoiser, &empty, 25.0, &EvalConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psnr_decreases_when_error_grows(seed in any::<u64>(), alpha in 1.01f32..4.0) {
        let mut rng = Rng::new(seed);
        let clean = Tensor::from_fn([1, 3, 8, 8], |_| 0.25 + 0.5 * rng.uniform_f32());
        let err = Tensor::from_fn([1, 3, 8, 8], |_| (rng.uniform_f32() - 0.5) * 0.05);
        let est = |a: f32| Tensor::from_fn([1, 3, 8, 8], |[n, c, y, x]| clean.at(n, c, y, x) + a * err.at(n, c, y, x));
        prop_assert!(psnr(&est(alpha), &clean).unwrap() < psnr(&est(1.0), &clean).unwrap());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = rand_image(&mut rng, [1, 3, 12, 12]);
        let b = rand_image(&mut rng, [1, 3, 12, 12]);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() <= 1e-7);
        prop_assert!(ab > -1.0 && ab < 1.0);
    }
}
