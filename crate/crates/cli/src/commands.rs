use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Parser;
use wipu_core::data::{load_folder, load_image, noisy_batch, save_image, ImageSet, ImageSource};
use wipu_core::engine::Tensor;
use wipu_core::metrics::{evaluate, psnr, EvalConfig};
use wipu_core::models::{Arch, Denoiser, IdentityDenoiser, ModelSpec};
use wipu_core::tiling::denoise_image;
use wipu_core::training::{
    epoch_order, load_checkpoint, save_checkpoint, train, LossMode, TrainConfig, TrainOutcome,
};

use crate::args::{usage, AblateArgs, Cli, Command, DenoiseArgs, EvalArgs, OptimArgs, ReportArgs, SynthArgs, TrainArgs};
use crate::dataset::DataSource;
use crate::grid::montage;
use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::report::Pivot;
use crate::results::{format_sigma, read_results, update_results, write_results, ResultRow};

pub const HISTORY_FILE: &str = "history.csv";
pub const MODEL_FILE: &str = "model.wipu";
pub const RESULTS_FILE: &str = "results.csv";
const FULL_TRAIN_SPLIT: usize = 50_000;
const FULL_TEST_SPLIT: usize = 10_000;

pub fn dispatch(cli: Cli, argv: &[std::ffi::OsString]) -> Result<()> {
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match &cli.command {
        Command::Train(a) => cmd_train(a, &argv),
        Command::Eval(a) => cmd_eval(a, &argv),
        Command::Denoise(a) => cmd_denoise(a, &argv),
        Command::Ablate(a) => cmd_ablate(a, &argv),
        Command::Report(a) => cmd_report(a),
        Command::SynthCifar(a) => cmd_synth(a, &argv),
        Command::Replay(a) => {
            let m = Manifest::read(&a.manifest)?;
            let cli = Cli::try_parse_from(&m.argv).with_context(|| format!("replaying {}", a.manifest.display()))?;
            if let Command::Replay(_) = cli.command {
                bail!("a manifest cannot replay another replay");
            }
            eprintln!("replaying: {}", m.argv.join(" "));
            let argv: Vec<std::ffi::OsString> = m.argv.iter().map(Into::into).collect();
            dispatch(cli, &argv)
        }
    }
}

pub fn parse_arch(name: &str) -> Result<Arch> {
    Arch::from_str(name).map_err(|_| {
        let all: Vec<&str> = Arch::ALL.iter().map(|a| a.name()).collect();
        usage(format!("unknown arch `{name}` (expected one of: {})", all.join(", ")))
    })
}

fn check_sigmas(sigmas: &[f32]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(usage("at least one noise level is required"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(usage(format!("noise levels must be >= 0, got {s}")));
    }
    Ok(())
}

fn loss_mode(o: &OptimArgs) -> Result<LossMode> {
    Ok(match LossMode::parse(&o.loss_mode).map_err(|e| usage(e.to_string()))? {
        LossMode::Eq2Dual { .. } => LossMode::Eq2Dual { lambda_img: o.lambda_img, lambda_res: o.lambda_res },
        m => m,
    })
}

fn train_config(spec: ModelSpec, sigma: f32, o: &OptimArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(spec, sigma);
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.lr = o.lr;
    cfg.weight_decay = o.weight_decay;
    cfg.clip_norm = (o.clip > 0.0).then_some(o.clip);
    cfg.seed = o.seed;
    cfg.loss_mode = loss_mode(o)?;
    cfg.max_steps = o.max_steps;
    cfg.wall_clock = o.wall_clock;
    Ok(cfg)
}

fn record_config(m: &mut Manifest, cfg: &TrainConfig) {
    for line in cfg.describe().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.set(k, v);
        }
    }
    m.set("wall_clock", cfg.wall_clock);
}

/// FNV-1a over the training image names in epoch-0 order: equal values mean
/// two runs saw the same images in the same order.
pub fn data_order_fingerprint(set: &ImageSet, seed: u64) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for i in epoch_order(seed, 0, set.len()) {
        for b in set.names[i].bytes().chain([0]) {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Trains and writes history.csv, the final checkpoint, per-epoch
/// checkpoints and (already started) manifest into `dir`.
fn run_training(
    cfg: &mut TrainConfig,
    train_set: &ImageSet,
    eval: Option<(&ImageSet, f32)>,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<TrainOutcome> {
    manifest.set("data_order", data_order_fingerprint(train_set, cfg.seed));
    manifest.set("train_images", train_set.len());
    manifest.write(dir)?;
    cfg.checkpoint_dir = Some(dir.join("checkpoints"));
    let out = train(cfg, train_set, eval)?;
    std::fs::write(dir.join(HISTORY_FILE), out.history.to_csv())?;
    save_checkpoint(&out.model, out.steps as u64, &dir.join(MODEL_FILE))?;
    manifest.output(HISTORY_FILE);
    manifest.output(MODEL_FILE);
    for e in 0..=out.history.last_epoch().unwrap_or(0) {
        if dir.join(format!("checkpoints/epoch_{e}.wipu")).exists() {
            manifest.output(format!("checkpoints/epoch_{e}.wipu"));
        }
    }
    manifest.finish(dir)?;
    Ok(out)
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let arch = parse_arch(&a.arch)?;
    if a.sigma_map && !arch.sigma_aware() {
        return Err(usage(format!(
            "--sigma-map: arch {arch} is not σ-aware (σ-aware archs: {})",
            Arch::ALL.iter().filter(|a| a.sigma_aware()).map(|a| a.name()).collect::<Vec<_>>().join(", ")
        )));
    }
    check_sigmas(&[a.sigma])?;
    if !a.mixed_sigmas.is_empty() {
        check_sigmas(&a.mixed_sigmas)?;
    }
    let mut spec = ModelSpec::new(arch, a.width).with_seed(a.optim.seed);
    if let Some(d) = a.depth {
        spec = spec.with_depth(d);
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let mut cfg = train_config(spec, a.sigma, &a.optim)?;
    cfg.mixed_sigmas = a.mixed_sigmas.clone();
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{arch}_s{}", format_sigma(a.sigma))));

    let source = DataSource::resolve(a.data.data_root.as_deref())?;
    let mut manifest = Manifest::start("train", argv, cfg.seed);
    record_config(&mut manifest, &cfg);
    manifest.set("arch", arch).set("data", source.describe()).set("eval_subset", a.eval_subset);
    manifest.write(&dir)?;

    let (train_set, test_set) = source.load(a.subset.unwrap_or(FULL_TRAIN_SPLIT), a.eval_subset)?;
    let eval = (!test_set.is_empty()).then_some((&test_set, a.sigma));
    let out = run_training(&mut cfg, &train_set, eval, &dir, &mut manifest)?;

    let h = &out.history;
    println!("trained {arch} for {} steps on {} images; outputs in {}", out.steps, train_set.len(), dir.display());
    if let Some(e) = h.last_epoch() {
        println!("epoch {e} mean loss {:.6} (first-100-step mean {:.6})", h.epoch_loss(e).unwrap_or(f64::NAN), h.head_loss(100).unwrap_or(f64::NAN));
    }
    if let Some(r) = h.rows.iter().rev().find(|r| r.psnr.is_some()) {
        println!("held-out PSNR {:.3} dB, SSIM {:.4} at σ={}", r.psnr.unwrap_or_default(), r.ssim.unwrap_or_default(), a.sigma);
    }
    Ok(())
}

/// A checkpointed model, or the identity baseline for `--arch identity`.
fn load_denoiser(checkpoint: Option<&Path>, arch: Option<&str>, width: Option<usize>) -> Result<Box<dyn Denoiser>> {
    if arch.is_some_and(|a| a.eq_ignore_ascii_case("identity")) {
        if checkpoint.is_some() {
            return Err(usage("--arch identity takes no --checkpoint"));
        }
        return Ok(Box::new(IdentityDenoiser));
    }
    let Some(path) = checkpoint else {
        return Err(usage("--checkpoint is required (or --arch identity for the noisy baseline)"));
    };
    let ck = load_checkpoint(path)?;
    if let Some(a) = arch {
        let want = parse_arch(a)?;
        if want != ck.spec.arch {
            bail!("spec mismatch: --arch {want} but {} holds {}", path.display(), ck.spec.to_line());
        }
    }
    if let Some(w) = width {
        if w != ck.spec.base_width {
            bail!("spec mismatch: --width {w} but {} holds {}", path.display(), ck.spec.to_line());
        }
    }
    Ok(Box::new(ck.into_model()?))
}

/// Scores `model` at each σ. The identity baseline is scored unclamped so it
/// reports the noisy-input PSNR.
fn score(model: &dyn Denoiser, set: &ImageSet, sigmas: &[f32], seed: u64, label: &str) -> Result<Vec<ResultRow>> {
    let cfg = EvalConfig { seed, clamp_outputs: model.name() != "identity", ..Default::default() };
    sigmas
        .iter()
        .map(|&s| {
            let mut row = ResultRow::from(&evaluate(model, set, s, &cfg)?);
            row.model = label.to_string();
            Ok(row)
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs, argv: &[String]) -> Result<()> {
    check_sigmas(&a.sigmas)?;
    let model = load_denoiser(a.checkpoint.as_deref(), a.arch.as_deref(), a.width)?;
    let mut manifest = Manifest::start("eval", argv, a.seed);
    let set = match &a.images {
        Some(dir) => {
            manifest.set("data", format!("folder:{}", dir.display()));
            load_folder(dir)?.head(a.subset.unwrap_or(usize::MAX))
        }
        None => {
            let source = DataSource::resolve(a.data.data_root.as_deref())?;
            manifest.set("data", source.describe());
            source.load(0, a.subset.unwrap_or(FULL_TEST_SPLIT))?.1
        }
    };
    let label = a.name.clone().unwrap_or_else(|| model.name());
    manifest
        .set("model", &label)
        .set("checkpoint", a.checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string()))
        .set("sigmas", a.sigmas.iter().map(|s| format_sigma(*s)).collect::<Vec<_>>().join(","))
        .set("test_images", set.len());
    manifest.write(&a.out)?;
    let rows = score(model.as_ref(), &set, &a.sigmas, a.seed, &label)?;
    for r in &rows {
        println!("{} σ={}: PSNR {:.4} dB, SSIM {:.4} ({} images)", r.model, format_sigma(r.sigma), r.psnr_db, r.ssim, r.n_images);
    }
    update_results(&a.out.join(RESULTS_FILE), rows)?;
    manifest.output(RESULTS_FILE);
    manifest.finish(&a.out)?;
    Ok(())
}

fn input_images(path: &Path) -> Result<ImageSet> {
    if path.is_dir() {
        Ok(load_folder(path)?)
    } else {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        Ok(ImageSet::new(vec![load_image(path)?], vec![name], ImageSource::Folder)?)
    }
}

fn cmd_denoise(a: &DenoiseArgs, argv: &[String]) -> Result<()> {
    check_sigmas(&a.sigmas)?;
    if a.stride == 0 || a.tile < a.stride {
        return Err(usage(format!("need --tile >= --stride >= 1, got {} and {}", a.tile, a.stride)));
    }
    let model = load_denoiser(a.checkpoint.as_deref(), a.arch.as_deref(), None)?;
    let set = input_images(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut manifest = Manifest::start("denoise", argv, a.seed);
    manifest
        .set("model", model.name())
        .set("input", a.input.display())
        .set("sigmas", a.sigmas.iter().map(|s| format_sigma(*s)).collect::<Vec<_>>().join(","))
        .set("tile", a.tile)
        .set("stride", a.stride)
        .set("add_noise", !a.no_noise);
    manifest.write(&a.out)?;

    let mut grid_rows: Vec<Vec<Tensor>> = vec![set.images.clone()];
    let levels: &[f32] = if a.no_noise { &a.sigmas[..1] } else { &a.sigmas };
    for &sigma in levels {
        let mut noisy_row = Vec::new();
        let mut out_row = Vec::new();
        for (i, (img, name)) in set.images.iter().zip(&set.names).enumerate() {
            let noisy = if a.no_noise { img.clone() } else { noisy_batch(img, sigma, a.seed, &[i as u64])?.noisy };
            let out = denoise_image(model.as_ref(), &noisy, sigma, a.tile, a.stride)?;
            let tag = if a.no_noise { String::new() } else { format!("_s{}", format_sigma(sigma)) };
            if !a.no_noise {
                let f = format!("{name}{tag}_noisy.png");
                save_image(&noisy, &a.out.join(&f))?;
                manifest.output(f);
                println!("{name} σ={}: noisy {:.3} dB -> denoised {:.3} dB", format_sigma(sigma), psnr(&noisy, img)?, psnr(&out, img)?);
            }
            let f = format!("{name}{tag}_denoised.png");
            save_image(&out, &a.out.join(&f))?;
            manifest.output(f);
            noisy_row.push(noisy);
            out_row.push(out);
        }
        if !a.no_noise {
            grid_rows.push(noisy_row);
        }
        grid_rows.push(out_row);
    }
    if a.grid {
        save_image(&montage(&grid_rows)?, &a.out.join("grid.png"))?;
        manifest.output("grid.png");
    }
    manifest.finish(&a.out)?;
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, argv: &[String]) -> Result<()> {
    check_sigmas(&a.sigmas)?;
    let train_sigmas: Vec<f32> = match a.train_sigma {
        Some(s) => {
            check_sigmas(&[s])?;
            vec![s]
        }
        None => a.sigmas.clone(),
    };
    let source = DataSource::resolve(a.data.data_root.as_deref())?;
    let mut manifest = Manifest::start("ablate", argv, a.optim.seed);
    manifest
        .set("data", source.describe())
        .set("width", a.width)
        .set("subset", a.subset)
        .set("test_subset", a.test_subset)
        .set("sigmas", a.sigmas.iter().map(|s| format_sigma(*s)).collect::<Vec<_>>().join(","))
        .set("train_sigma", a.train_sigma.map_or("per-level".into(), format_sigma));
    manifest.write(&a.out)?;
    let (train_set, test_set) = source.load(a.subset, a.test_subset)?;

    let mut rows = Vec::new();
    for &ts in &train_sigmas {
        for arch in Arch::ABLATION {
            let spec = ModelSpec::new(arch, a.width).with_seed(a.optim.seed);
            let mut cfg = train_config(spec, ts, &a.optim)?;
            let run = format!("runs/{arch}_s{}", format_sigma(ts));
            let dir = a.out.join(&run);
            let mut m = Manifest::start("ablate/train", argv, cfg.seed);
            record_config(&mut m, &cfg);
            m.set("data", source.describe());
            let out = run_training(&mut cfg, &train_set, None, &dir, &mut m)?;
            let eval_at: Vec<f32> = if a.train_sigma.is_some() { a.sigmas.clone() } else { vec![ts] };
            let scored = score(&out.model, &test_set, &eval_at, a.optim.seed, arch.name())?;
            for r in &scored {
                eprintln!("{arch} (trained σ={}): σ={} PSNR {:.3} dB SSIM {:.4}", format_sigma(ts), format_sigma(r.sigma), r.psnr_db, r.ssim);
            }
            rows.extend(scored);
            manifest.output(format!("{run}/{MANIFEST_FILE}"));
        }
    }
    write_results(&a.out.join(RESULTS_FILE), &rows)?;
    let pivot = Pivot::build(&rows);
    std::fs::write(a.out.join("ablation.csv"), pivot.to_csv())?;
    std::fs::write(a.out.join("ablation.md"), pivot.to_markdown())?;
    for f in [RESULTS_FILE, "ablation.csv", "ablation.md"] {
        manifest.output(f);
    }
    print!("{}", pivot.to_markdown());
    if let Some(verdict) = ablation_trend(&pivot) {
        println!("{verdict}");
    }
    manifest.finish(&a.out)?;
    Ok(())
}

/// Whether the full model is within 0.1 dB of the best single-prior variant
/// at the highest noise level.
pub fn ablation_trend(p: &Pivot) -> Option<String> {
    let last = p.sigmas.len().checked_sub(1)?;
    let full = p.models.iter().position(|m| m == Arch::Wipunet.name())?;
    let full_psnr = p.cells[full][last]?.0;
    let best_variant = p
        .models
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != full)
        .filter_map(|(i, _)| p.cells[i][last].map(|c| c.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let ok = full_psnr >= best_variant - 0.1;
    Some(format!(
        "trend at σ={}: wipunet {full_psnr:.3} dB vs best variant {best_variant:.3} dB -> {}",
        format_sigma(p.sigmas[last]),
        if ok { "full model dominates or ties" } else { "full model trails" }
    ))
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.inputs {
        if let Some(m) = path.parent().map(|d| d.join(MANIFEST_FILE)).filter(|m| m.exists()) {
            Manifest::read(&m)?;
        }
        crate::results::upsert(&mut rows, read_results(path)?);
    }
    let pivot = Pivot::build(&rows);
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("report.md"), pivot.to_markdown())?;
            std::fs::write(dir.join("report.csv"), pivot.to_csv())?;
            println!("wrote {} and {}", dir.join("report.md").display(), dir.join("report.csv").display());
        }
        None => print!("{}", pivot.to_markdown()),
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, argv: &[String]) -> Result<()> {
    if a.records == 0 {
        return Err(usage("--records must be positive"));
    }
    let mut manifest = Manifest::start("synth-cifar", argv, a.seed);
    manifest.set("records_per_file", a.records);
    manifest.write(&a.out)?;
    wipu_core::data::synthetic::write_synthetic_cifar10(&a.out, a.seed, a.records)?;
    for f in wipu_core::data::cifar::TRAIN_FILES.iter().chain([&wipu_core::data::cifar::TEST_FILE]) {
        manifest.output(*f);
    }
    manifest.finish(&a.out)?;
    println!("wrote 6 × {} records to {}", a.records, a.out.display());
    Ok(())
}
