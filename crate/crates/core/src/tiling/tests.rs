use super::*;
use crate::data::Rng;
use crate::models::{build, Arch, IdentityDenoiser, ModelSpec};
use proptest::prelude::*;

fn rand_image(rng: &mut Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_fn([1, 3, h, w], |_| rng.uniform_f32())
}

/// Brute-force count of how many windows cover each canvas pixel.
fn coverage(plan: &TilePlan) -> Vec<usize> {
    let (ch, cw) = plan.canvas();
    let mut cov = vec![0usize; ch * cw];
    for y in 0..ch {
        for x in 0..cw {
            cov[y * cw + x] = plan
                .windows
                .iter()
                .filter(|&&(t, l)| (t..t + plan.tile).contains(&y) && (l..l + plan.tile).contains(&x))
                .count();
        }
    }
    cov
}

#[test]
fn one_tile_no_padding() {
    let plan = plan_tiles(128, 128, 128, 64, 4).unwrap();
    assert_eq!(plan.windows, [(0, 0)]);
    assert_eq!(plan.pad, (0, 0, 0, 0));
}

#[test]
fn small_images_are_padded_to_one_tile() {
    let plan = plan_tiles(32, 32, 128, 64, 4).unwrap();
    assert_eq!(plan.canvas(), (128, 128));
    assert_eq!(plan.windows, [(0, 0)]);
    let (t, b, l, r) = plan.pad;
    assert_eq!((t + b, l + r), (96, 96));
}

#[test]
fn last_window_is_clamped_to_the_boundary() {
    let plan = plan_tiles(200, 200, 128, 64, 4).unwrap();
    let origins = [0, 64, 72];
    let want: Vec<(usize, usize)> = origins.iter().flat_map(|&y| origins.iter().map(move |&x| (y, x))).collect();
    assert_eq!(plan.windows, want);
    assert!(coverage(&plan).iter().all(|&c| c >= 1));
}

#[test]
fn padding_respects_the_spatial_multiple() {
    let plan = plan_tiles(481, 321, 128, 64, 8).unwrap();
    let (ch, cw) = plan.canvas();
    assert_eq!((ch % 8, cw % 8), (0, 0));
    assert!(ch >= 481 && cw >= 321 && ch - 481 < 8 && cw - 321 < 8);
}

#[test]
fn invalid_plans_are_rejected() {
    assert!(plan_tiles(64, 64, 32, 64, 1).is_err());
    assert!(plan_tiles(64, 64, 32, 0, 1).is_err());
    assert!(plan_tiles(0, 64, 32, 16, 1).is_err());
    assert!(blend_window(1).is_err());
}

#[test]
fn blend_window_matches_independent_formula() {
    // sin²(πi/(n−1)) is the same raised cosine written differently
    let v: Vec<f64> = (0..4).map(|i| (std::f64::consts::PI * i as f64 / 3.0).sin().powi(2).max(1e-3)).collect();
    let win = blend_window(4).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            assert!((f64::from(win.at(0, 0, y, x)) - v[y] * v[x]).abs() < 1e-7, "({y},{x})");
        }
    }
    assert!((v[1] - 0.75).abs() < 1e-12 && v[0] == 1e-3);
}

#[test]
fn blend_window_is_symmetric_and_peaks_at_center() {
    for tile in [2, 5, 16, 128] {
        let win = blend_window(tile).unwrap();
        let max = win.data().iter().copied().fold(f32::MIN, f32::max);
        assert_eq!(win.at(0, 0, tile / 2, tile / 2), max, "tile {tile}");
        for y in 0..tile {
            for x in 0..tile {
                let v = win.at(0, 0, y, x);
                assert_eq!(v, win.at(0, 0, tile - 1 - y, x));
                assert_eq!(v, win.at(0, 0, y, tile - 1 - x));
                assert!(v >= (WEIGHT_FLOOR * WEIGHT_FLOOR) as f32);
            }
        }
    }
}

#[test]
fn identity_is_transparent_on_a_large_image() {
    let mut rng = Rng::new(1);
    // values outside [0,1] check that only the final clamp touches them
    let img = Tensor::from_fn([1, 3, 481, 321], |_| rng.uniform_f32() * 1.2 - 0.1);
    let out = denoise_full(&IdentityDenoiser, &img, 25.0, DEFAULT_TILE, DEFAULT_STRIDE).unwrap();
    let want = img.clamp(0.0, 1.0);
    let err = out.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(err <= 1e-6, "max abs error {err}");
}

#[test]
fn single_tile_equals_direct_forward() {
    let m = build(&ModelSpec::new(Arch::Wipunet, 8)).unwrap();
    let img = rand_image(&mut Rng::new(2), 30, 26);
    let out = denoise_full(&m, &img, 50.0, 32, 16).unwrap();
    let plan = plan_tiles(30, 26, 32, 16, m.spatial_multiple()).unwrap();
    assert_eq!(plan.windows.len(), 1);
    let (t, b, l, r) = plan.pad;
    let direct = m.denoise(&img.reflect_pad(t, b, l, r), 50.0).unwrap().crop(t, l, 30, 26).unwrap().clamp(0.0, 1.0);
    let err = out.data().iter().zip(direct.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(err <= 1e-7, "{err}");
}

#[test]
fn small_inputs_take_the_direct_path() {
    let m = build(&ModelSpec::new(Arch::Dncnn, 8)).unwrap();
    let img = rand_image(&mut Rng::new(3), 32, 32);
    let out = denoise_image(&m, &img, 25.0, 128, 64).unwrap();
    assert_eq!(out, m.denoise(&img, 25.0).unwrap().clamp(0.0, 1.0));
}

#[test]
fn tiled_output_is_thread_count_independent() {
    let m = build(&ModelSpec::new(Arch::PunetG, 8)).unwrap();
    let img = rand_image(&mut Rng::new(4), 70, 50);
    let par_out = denoise_full(&m, &img, 25.0, 32, 16).unwrap();
    crate::par::set_sequential(true);
    let seq_out = denoise_full(&m, &img, 25.0, 32, 16);
    crate::par::set_sequential(false);
    assert_eq!(par_out, seq_out.unwrap());
}

#[test]
fn rejects_batches_and_grey_images() {
    assert!(denoise_full(&IdentityDenoiser, &Tensor::zeros([2, 3, 8, 8]), 25.0, 4, 2).is_err());
    assert!(denoise_full(&IdentityDenoiser, &Tensor::zeros([1, 1, 8, 8]), 25.0, 4, 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_pixel_is_covered_and_normalized(
        h in 1usize..90, w in 1usize..90, tile in 2usize..40, frac in 1usize..=4, multiple in prop::sample::select(vec![1usize, 2, 4, 8]),
    ) {
        let stride = (tile / frac).max(1);
        let plan = plan_tiles(h, w, tile, stride, multiple).unwrap();
        let (ch, cw) = plan.canvas();
        prop_assert!(ch >= tile && cw >= tile && ch % multiple == 0 && cw % multiple == 0);
        prop_assert!(coverage(&plan).iter().all(|&c| c >= 1));
        let den = plan.weight_sum();
        prop_assert!(den.iter().all(|&d| d > 0.0));
        // normalized contributions at each pixel
        let mut norm = vec![0.0f64; ch * cw];
        let wt = plan.weight.data();
        for &(t, l) in &plan.windows {
            for y in 0..tile {
                for x in 0..tile {
                    let p = (t + y) * cw + l + x;
                    norm[p] += f64::from(wt[y * tile + x]) / den[p];
                }
            }
        }
        for v in norm {
            prop_assert!((v - 1.0).abs() <= 1e-7, "{}", v);
        }
    }
}
