use super::*;
use crate::data::synthetic::synthetic_image;
use crate::data::{ImageSource, Rng};
use crate::engine::Tensor;
use crate::layers::ParamStore;
use crate::models::Arch;
use proptest::prelude::*;

fn synthetic_set(n: usize, side: usize, seed: u64) -> ImageSet {
    let mut rng = Rng::new(seed);
    let images = (0..n).map(|_| synthetic_image(&mut rng, side, side)).collect();
    ImageSet::new(images, (0..n).map(|i| format!("img{i}")).collect(), ImageSource::Folder).unwrap()
}

fn single_param(values: Vec<f32>) -> ParamStore {
    let mut ps = ParamStore::default();
    let n = values.len();
    ps.push("p".into(), Tensor::new([1, 1, 1, n], values).unwrap());
    ps
}

fn tiny_cfg(arch: Arch) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelSpec::new(arch, 8), 25.0);
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg
}

#[test]
fn adamw_first_step_closed_form() {
    // first bias-corrected step is lr·g/(|g|+eps) ≈ lr·sign(g)
    let mut ps = single_param(vec![1.0, -2.0, 0.5]);
    let mut opt = AdamW::new(&ps, 0.1, 0.0);
    opt.step(&mut ps, &[vec![1.0, -3.0, 0.0]]).unwrap();
    let p = ps.iter().next().unwrap().value.data().to_vec();
    assert!((p[0] - 0.9).abs() < 1e-6, "{p:?}");
    assert!((p[1] + 1.9).abs() < 1e-6, "{p:?}");
    assert_eq!(p[2], 0.5, "zero gradient leaves the parameter alone");
    assert_eq!(opt.t, 1);
}

#[test]
fn adamw_second_step_matches_hand_recursion() {
    let (lr, wd, g1, g2) = (0.01f64, 0.1f64, 0.3f64, -0.7f64);
    let mut ps = single_param(vec![2.0]);
    let mut opt = AdamW::new(&ps, lr, wd);
    opt.step(&mut ps, &[vec![g1 as f32]]).unwrap();
    opt.step(&mut ps, &[vec![g2 as f32]]).unwrap();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut p, mut m, mut v) = (2.0f64, 0.0, 0.0);
    for (t, g) in [(1, g1), (2, g2)] {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p = p * (1.0 - lr * wd) - lr * mh / (vh.sqrt() + eps);
    }
    let got = f64::from(ps.iter().next().unwrap().value.data()[0]);
    assert!((got - p).abs() < 1e-6, "{got} vs {p}");
}

#[test]
fn adamw_decay_is_decoupled() {
    let mut ps = single_param(vec![1.0]);
    let mut opt = AdamW::new(&ps, 5e-4, 1e-2);
    opt.step(&mut ps, &[vec![0.0]]).unwrap();
    let got = f64::from(ps.iter().next().unwrap().value.data()[0]);
    assert!((got - (1.0 - 5e-6)).abs() < 1e-7, "{got}");
}

#[test]
fn adamw_rejects_mismatched_grads() {
    let mut ps = single_param(vec![1.0, 2.0]);
    let mut opt = AdamW::new(&ps, 0.1, 0.0);
    assert!(opt.step(&mut ps, &[vec![1.0]]).is_err());
    assert!(opt.step(&mut ps, &[]).is_err());
    assert_eq!(opt.t, 0);
}

#[test]
fn clipping_cases() {
    let mut g = vec![vec![2.0f32, 0.0], vec![0.0]];
    assert!((clip_grad_norm(&mut g, 1.0) - 0.5).abs() < 1e-12);
    assert_eq!(g, vec![vec![1.0, 0.0], vec![0.0]]);
    let mut small = vec![vec![0.3f32]];
    assert_eq!(clip_grad_norm(&mut small, 1.0), 1.0);
    assert_eq!(small, vec![vec![0.3]]);
    let mut zero = vec![vec![0.0f32; 4]];
    assert_eq!(clip_grad_norm(&mut zero, 1.0), 1.0);
}

#[test]
fn loss_mode_parsing() {
    assert_eq!(LossMode::parse("l2_only").unwrap(), LossMode::L2Only);
    assert_eq!(LossMode::parse("EQ2-DUAL").unwrap(), LossMode::dual());
    assert!(LossMode::parse("l1").is_err());
    assert_eq!(LossMode::default().name(), "l2_only");
}

fn loss_value(model: &Model, clean: &Tensor, noisy: &Tensor, mode: LossMode, sigma: f32) -> Result<f32> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let y = tape.constant(noisy.clone());
    let s = tape.constant(clean.clone());
    let map = model
        .spec()
        .sigma_aware()
        .then(|| tape.constant(crate::layers::make_sigma_channel(noisy.n(), noisy.h(), noisy.w(), sigma).unwrap()));
    let out = model.forward(&mut tape, &p, y, map)?;
    let l = loss(&mut tape, &out, s, y, mode)?;
    Ok(tape.value(l).data()[0])
}

#[test]
fn loss_identities() {
    let set = synthetic_set(4, 8, 1);
    let clean = set.batch(&[0, 1, 2, 3]).unwrap();
    let noisy = noisy_batch(&clean, 25.0, 7, &[0, 1, 2, 3]).unwrap().noisy;
    for arch in [Arch::Wipunet1, Arch::Dncnn, Arch::PunetPp] {
        let m = build(&ModelSpec::new(arch, 8)).unwrap();
        let l2 = loss_value(&m, &clean, &noisy, LossMode::L2Only, 25.0).unwrap();
        let no_res = LossMode::Eq2Dual { lambda_img: 1.0, lambda_res: 0.0 };
        assert_eq!(l2, loss_value(&m, &clean, &noisy, no_res, 25.0).unwrap(), "{arch}");
        let dual = loss_value(&m, &clean, &noisy, LossMode::dual(), 25.0).unwrap();
        // with B̂ = Y − Ŝ, the background error is the image error negated
        let want = 1.1 * l2;
        assert!((dual - want).abs() <= 1e-5 * want.max(1.0), "{arch}: {dual} vs {want}");
    }
    // a direct head exposes no background estimate
    let unet = build(&ModelSpec::new(Arch::Unet, 8)).unwrap();
    assert!(loss_value(&unet, &clean, &noisy, LossMode::dual(), 25.0).is_err());
    assert!(loss_value(&unet, &clean, &noisy, LossMode::L2Only, 25.0).is_ok());
}

#[test]
fn perfect_estimate_has_zero_loss() {
    let mut tape = Tape::new();
    let clean = tape.constant(Tensor::full([1, 3, 4, 4], 0.25));
    let noisy = tape.constant(Tensor::full([1, 3, 4, 4], 0.5));
    let n_hat = tape.constant(Tensor::full([1, 3, 4, 4], 0.25));
    let s_hat = tape.sub(noisy, n_hat).unwrap();
    let out = crate::models::ForwardOut { s_hat, n_hat: Some(n_hat), aux: None };
    for mode in [LossMode::L2Only, LossMode::dual()] {
        let l = loss(&mut tape, &out, clean, noisy, mode).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
    }
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let a = epoch_order(1234, 0, 50);
    let mut sorted = a.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(1234, 0, 50));
    assert_ne!(a, epoch_order(1234, 1, 50));
    assert_ne!(a, epoch_order(1235, 0, 50));
}

#[test]
fn zero_epochs_is_a_no_op() {
    let mut cfg = tiny_cfg(Arch::Dncnn);
    cfg.epochs = 0;
    let out = train(&cfg, &synthetic_set(4, 8, 1), None).unwrap();
    assert!(out.history.rows.is_empty());
    assert_eq!(out.steps, 0);
    let fresh = build(&cfg.spec).unwrap();
    assert_eq!(encode(&out.model, 0), encode(&fresh, 0));
    assert_eq!(out.history.to_csv(), format!("{HISTORY_HEADER}\n"));
}

#[test]
fn invalid_configs_are_rejected() {
    let set = synthetic_set(4, 8, 1);
    let mut cfg = tiny_cfg(Arch::Dncnn);
    cfg.batch_size = 0;
    assert!(train(&cfg, &set, None).is_err());
    let mut cfg = tiny_cfg(Arch::Dncnn);
    cfg.clip_norm = Some(0.0);
    assert!(train(&cfg, &set, None).is_err());
    let mut cfg = tiny_cfg(Arch::Dncnn);
    cfg.mixed_sigmas = vec![25.0, -1.0];
    assert!(train(&cfg, &set, None).is_err());
    let empty = ImageSet::new(vec![], vec![], ImageSource::Folder).unwrap();
    assert!(train(&tiny_cfg(Arch::Dncnn), &empty, None).is_err());
}

#[test]
fn training_is_deterministic() {
    let set = synthetic_set(20, 8, 2);
    let eval = synthetic_set(6, 8, 3);
    let cfg = tiny_cfg(Arch::PunetG);
    let a = train(&cfg, &set, Some((&eval, 25.0))).unwrap();
    let b = train(&cfg, &set, Some((&eval, 25.0))).unwrap();
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(encode(&a.model, a.steps as u64), encode(&b.model, b.steps as u64));
    // 20 images in batches of 8: 3 steps per epoch, eval on each epoch's last
    assert_eq!(a.steps, 6);
    let with_eval: Vec<usize> = a.history.rows.iter().filter(|r| r.psnr.is_some()).map(|r| r.step).collect();
    assert_eq!(with_eval, [3, 6]);
    assert!(a.history.rows.iter().all(|r| r.wall_s == 0.0));

    let mut other = cfg.clone();
    other.seed = 99;
    assert_ne!(a.history.to_csv(), train(&other, &set, None).unwrap().history.to_csv());
}

#[test]
fn max_steps_stops_mid_epoch() {
    let mut cfg = tiny_cfg(Arch::Dncnn);
    cfg.max_steps = Some(4);
    let out = train(&cfg, &synthetic_set(20, 8, 2), None).unwrap();
    assert_eq!(out.steps, 4);
    assert_eq!(out.history.rows.iter().map(|r| (r.epoch, r.step)).collect::<Vec<_>>(), [(0, 1), (0, 2), (0, 3), (1, 4)]);
}

#[test]
fn history_csv_layout() {
    let h = History {
        rows: vec![
            HistoryRow { epoch: 0, step: 1, loss: 0.5, psnr: None, ssim: None, wall_s: 0.0 },
            HistoryRow { epoch: 0, step: 2, loss: 0.25, psnr: Some(21.5), ssim: Some(0.75), wall_s: 1.25 },
        ],
    };
    assert_eq!(h.to_csv(), "epoch,step,loss,psnr,ssim,wall_s\n0,1,0.5,,,0.000\n0,2,0.25,21.500000,0.750000,1.250\n");
    assert_eq!(h.epoch_loss(0), Some(0.375));
    assert_eq!(h.epoch_loss(1), None);
    assert_eq!(h.head_loss(1), Some(0.5));
    assert_eq!(h.head_loss(100), Some(0.375));
    assert_eq!(h.last_epoch(), Some(0));
}

#[test]
fn descent_on_a_fixed_batch() {
    // one batch repeated: loss must fall well below its starting value
    let set = synthetic_set(8, 8, 4);
    let mut cfg = tiny_cfg(Arch::Wipunet1);
    cfg.epochs = 30;
    cfg.lr = 2e-3;
    let out = train(&cfg, &set, None).unwrap();
    let first = out.history.rows[0].loss;
    let last = out.history.rows.last().unwrap().loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn conservation_holds_throughout_training() {
    let set = synthetic_set(16, 8, 5);
    let probe = set.batch(&[0, 1]).unwrap();
    for arch in Arch::ALL.into_iter().filter(|a| a.is_residual()) {
        for steps in [1, 3] {
            let mut cfg = tiny_cfg(arch);
            cfg.max_steps = Some(steps);
            let m = train(&cfg, &set, None).unwrap().model;
            let out = m.infer(&probe, m.spec().sigma_aware().then_some(25.0)).unwrap();
            let n = out.n_hat.unwrap();
            for ((&s, &n), &y) in out.s_hat.data().iter().zip(n.data()).zip(probe.data()) {
                assert_eq!(s.to_bits(), (y - n).to_bits(), "{arch} after {steps} steps");
            }
        }
    }
}

#[test]
fn checkpoint_roundtrip_every_arch() {
    let set = synthetic_set(12, 8, 6);
    let dir = tempfile::tempdir().unwrap();
    for arch in Arch::ALL {
        let mut cfg = tiny_cfg(arch);
        cfg.max_steps = Some(1);
        let m = train(&cfg, &set, None).unwrap().model;
        let path = dir.path().join(format!("{arch}.wipu"));
        save_checkpoint(&m, 7, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!((ck.spec, ck.step), (*m.spec(), 7));
        let back = ck.into_model().unwrap();
        let ev = EvalConfig::default();
        let sigma = 25.0;
        assert_eq!(evaluate(&m, &set, sigma, &ev).unwrap(), evaluate(&back, &set, sigma, &ev).unwrap(), "{arch}");
        assert_eq!(encode(&m, 7), encode(&back, 7));

        let mut fresh = build(m.spec()).unwrap();
        assert_eq!(load_into(&mut fresh, &path).unwrap(), 7);
        assert_eq!(encode(&fresh, 7), encode(&m, 7));
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let m = build(&ModelSpec::new(Arch::Dncnn, 8)).unwrap();
    let bytes = encode(&m, 3);
    assert!(decode(&bytes).is_ok());
    for cut in [0, 5, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
    for pos in [0, 4, 20, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        let err = decode(&bad).unwrap_err().to_string();
        assert!(err.contains("checksum"), "byte {pos}: {err}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode(&extra).is_err());
}

/// Re-seals a modified body with a valid checksum so the structural checks
/// behind it are exercised.
fn reseal(mut body: Vec<u8>) -> Vec<u8> {
    let crc = crc::Crc::<u64>::new(&crc::CRC_64_XZ).checksum(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    body
}

#[test]
fn structural_checks_behind_the_checksum() {
    let m = build(&ModelSpec::new(Arch::Dncnn, 8)).unwrap();
    let bytes = encode(&m, 3);
    let body = bytes[..bytes.len() - 8].to_vec();
    assert_eq!(reseal(body.clone()), bytes);

    let mut magic = body.clone();
    magic[0] = b'X';
    assert!(decode(&reseal(magic)).unwrap_err().to_string().contains("magic"));
    let mut version = body.clone();
    version[4] = 9;
    assert!(decode(&reseal(version)).unwrap_err().to_string().contains("version"));
    let mut trailing = body.clone();
    trailing.extend_from_slice(&[1, 2, 3]);
    assert!(decode(&reseal(trailing)).unwrap_err().to_string().contains("trailing"));
}

#[test]
fn spec_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wipu");
    save_checkpoint(&build(&ModelSpec::new(Arch::Unet, 8)).unwrap(), 0, &path).unwrap();
    for other in [ModelSpec::new(Arch::Unet, 16), ModelSpec::new(Arch::Wipunet1, 8), ModelSpec::new(Arch::Unet, 8).with_seed(5)] {
        let mut m = build(&other).unwrap();
        let err = load_into(&mut m, &path).unwrap_err().to_string();
        assert!(err.contains("spec mismatch"), "{err}");
    }
    assert!(load_checkpoint(&dir.path().join("missing.wipu")).is_err());
}

#[test]
fn checkpoints_are_written_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cfg(Arch::Dncnn);
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let out = train(&cfg, &synthetic_set(10, 8, 7), None).unwrap();
    let last = load_checkpoint(&dir.path().join("epoch_1.wipu")).unwrap();
    assert_eq!(last.step, out.steps as u64);
    assert_eq!(encode(&last.into_model().unwrap(), out.steps as u64), encode(&out.model, out.steps as u64));
    assert_eq!(load_checkpoint(&dir.path().join("epoch_0.wipu")).unwrap().step, 2);
}

#[test]
fn describe_records_the_run_header() {
    let mut cfg = TrainConfig::new(ModelSpec::new(Arch::Wipunet, 16), 50.0);
    cfg.loss_mode = LossMode::dual();
    let d = cfg.describe();
    for line in ["sigma=50", "lr=0.0005", "weight_decay=0.01", "clip_norm=1", "seed=1234", "loss_mode=eq2_dual", "lambda_res=0.1"] {
        assert!(d.lines().any(|l| l == line), "missing `{line}` in\n{d}");
    }
}

#[test]
fn sigma_map_is_used_by_a_trained_conditioned_model() {
    let set = synthetic_set(64, 8, 8);
    let mut cfg = TrainConfig::new(ModelSpec::new(Arch::PunetG, 8), 25.0);
    cfg.mixed_sigmas = vec![0.0, 100.0];
    cfg.batch_size = 16;
    cfg.epochs = 50;
    cfg.max_steps = Some(200);
    cfg.lr = 1e-3;
    let m = train(&cfg, &set, None).unwrap().model;
    let y = set.batch(&[0, 1, 2, 3]).unwrap();
    let lo = m.infer(&y, Some(0.0)).unwrap().n_hat.unwrap();
    let hi = m.infer(&y, Some(100.0)).unwrap().n_hat.unwrap();
    let diff = lo.data().iter().zip(hi.data()).map(|(a, b)| f64::from((a - b).abs())).sum::<f64>() / lo.numel() as f64;
    assert!(diff > 1e-3, "mean |n̂(σ=0) − n̂(σ=100)| = {diff}");
}

#[test]
fn diverging_runs_report_a_diagnostic() {
    let mut cfg = tiny_cfg(Arch::Dncnn);
    cfg.sigma = f32::MAX;
    let Err(err) = train(&cfg, &synthetic_set(8, 8, 9), None) else { panic!("training should diverge") };
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert!(err.to_string().contains("last batch"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_norm_never_exceeds_the_limit(
        g in prop::collection::vec(prop::collection::vec(-100.0f32..100.0, 1..20), 1..5),
        max in 0.01f64..10.0,
    ) {
        let mut g = g;
        let before = grad_norm(&g);
        let scale = clip_grad_norm(&mut g, max);
        prop_assert!(grad_norm(&g) <= max * (1.0 + 1e-6) || before <= max);
        prop_assert!(scale <= 1.0);
    }

    #[test]
    fn clipping_preserves_direction(g in prop::collection::vec(-10.0f32..10.0, 2..30)) {
        let orig = g.clone();
        let mut gs = vec![g];
        let scale = clip_grad_norm(&mut gs, 0.5);
        for (a, b) in gs[0].iter().zip(&orig) {
            prop_assert!((f64::from(*a) - f64::from(*b) * scale).abs() <= 1e-6 * f64::from(b.abs()).max(1e-30));
        }
    }

    #[test]
    fn checkpoint_bytes_roundtrip(seed in any::<u64>(), step in any::<u64>()) {
        let m = build(&ModelSpec::new(Arch::SimplePuCnn, 8).with_seed(seed)).unwrap();
        let bytes = encode(&m, step);
        let ck = decode(&bytes).unwrap();
        prop_assert_eq!(ck.step, step);
        prop_assert_eq!(encode(&ck.into_model().unwrap(), step), bytes);
    }
}
