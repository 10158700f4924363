//! Losses, AdamW, clipping, checkpoints and the training loop.
//!
//! A run is a pure function of its [`TrainConfig`] and data: batch order comes
//! from a permutation seeded by `(seed, epoch)`, and sample `i` of epoch `e`
//! is corrupted from its own noise substream, so neither batching nor thread
//! count changes what the optimizer sees.

mod checkpoint;
mod loss;
mod optim;

pub use checkpoint::{decode, encode, load_checkpoint, load_into, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use loss::{loss, LossMode, DEFAULT_LAMBDA_IMG, DEFAULT_LAMBDA_RES};
pub use optim::{clip_grad_norm, grad_norm, AdamW};

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::data::rng::mix64;
use crate::data::{noisy_batch, ImageSet, Rng};
use crate::engine::Tape;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig};
use crate::models::{build, Model, ModelSpec};

pub const HISTORY_HEADER: &str = "epoch,step,loss,psnr,ssim,wall_s";

// Stream tags keep the shuffle and noise streams apart for the same seed.
const SHUFFLE_TAG: u64 = 0x5348_5546;
const NOISE_TAG: u64 = 0x4e4f_4953;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    /// Training noise level on the 8-bit scale.
    pub sigma: f32,
    /// When non-empty, step `k` trains at `mixed_sigmas[k % len]` instead of
    /// `sigma`.
    pub mixed_sigmas: Vec<f32>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Record real elapsed seconds in the history. Off by default so repeated
    /// runs produce identical bytes.
    pub wall_clock: bool,
    /// Write a checkpoint after every epoch to `<dir>/epoch_<e>.wipu`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(spec: ModelSpec, sigma: f32) -> Self {
        TrainConfig {
            spec,
            sigma,
            mixed_sigmas: Vec::new(),
            epochs: 1,
            batch_size: 64,
            lr: 5e-4,
            weight_decay: 1e-2,
            clip_norm: Some(1.0),
            seed: spec.seed,
            loss_mode: LossMode::L2Only,
            max_steps: None,
            wall_clock: false,
            checkpoint_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        for &s in std::iter::once(&self.sigma).chain(&self.mixed_sigmas) {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!("noise level must be >= 0, got {s}")));
            }
        }
        Ok(())
    }

    fn sigma_at(&self, step: usize) -> f32 {
        if self.mixed_sigmas.is_empty() {
            self.sigma
        } else {
            self.mixed_sigmas[step % self.mixed_sigmas.len()]
        }
    }

    /// One `key=value` per line, for run headers and manifests.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "spec={}", self.spec.to_line());
        let _ = writeln!(s, "sigma={}", self.sigma);
        if !self.mixed_sigmas.is_empty() {
            let list: Vec<String> = self.mixed_sigmas.iter().map(f32::to_string).collect();
            let _ = writeln!(s, "mixed_sigmas={}", list.join(","));
        }
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "clip_norm={}", self.clip_norm.map_or("none".into(), |c| c.to_string()));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "loss_mode={}", self.loss_mode.name());
        if let LossMode::Eq2Dual { lambda_img, lambda_res } = self.loss_mode {
            let _ = writeln!(s, "lambda_img={lambda_img}\nlambda_res={lambda_res}");
        }
        if let Some(m) = self.max_steps {
            let _ = writeln!(s, "max_steps={m}");
        }
        s
    }
}

/// One optimizer step. The last step of an epoch carries that epoch's
/// held-out PSNR/SSIM when an evaluation set was given.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f32,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{:.3}", r.epoch, r.step, r.loss, opt(r.psnr), opt(r.ssim), r.wall_s);
        }
        s
    }

    /// Mean loss of the given epoch.
    pub fn epoch_loss(&self, epoch: usize) -> Option<f64> {
        let l: Vec<f64> = self.rows.iter().filter(|r| r.epoch == epoch).map(|r| f64::from(r.loss)).collect();
        (!l.is_empty()).then(|| l.iter().sum::<f64>() / l.len() as f64)
    }

    /// Mean loss of the first `n` steps (fewer if the run was shorter).
    pub fn head_loss(&self, n: usize) -> Option<f64> {
        let l: Vec<f64> = self.rows.iter().take(n).map(|r| f64::from(r.loss)).collect();
        (!l.is_empty()).then(|| l.iter().sum::<f64>() / l.len() as f64)
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.rows.last().map(|r| r.epoch)
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    pub steps: usize,
}

/// Batch order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    Rng::substream(mix64(seed ^ SHUFFLE_TAG), epoch as u64).permutation(n)
}

/// Trains a freshly built model. `eval` (set, σ) is scored after every epoch.
pub fn train(cfg: &TrainConfig, data: &ImageSet, eval: Option<(&ImageSet, f32)>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = build(&cfg.spec)?;
    if cfg.epochs > 0 && data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut opt = AdamW::new(model.params(), cfg.lr, cfg.weight_decay);
    let mut history = History::default();
    let started = Instant::now();
    let noise_seed = mix64(cfg.seed ^ NOISE_TAG);
    let n = data.len();
    let mut step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, n);
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let clean = data.batch(idx)?;
            let ids: Vec<u64> = idx.iter().map(|&i| (epoch * n + i) as u64).collect();
            let sigma = cfg.sigma_at(step);
            let pair = noisy_batch(&clean, sigma, noise_seed, &ids)?;

            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let y = tape.constant(pair.noisy.clone());
            let s = tape.constant(clean);
            let map = model.spec().sigma_aware().then(|| tape.constant(pair.sigma_map.clone()));
            let out = model.forward(&mut tape, &p, y, map)?;
            let l = loss(&mut tape, &out, s, y, cfg.loss_mode)?;
            let loss_value = tape.value(l).data()[0];
            if !loss_value.is_finite() {
                return Err(diverged(epoch, step, loss_value, &pair.noisy, &model));
            }
            tape.backward(l)?;
            let mut grads: Vec<Vec<f32>> = p
                .iter()
                .zip(model.params().iter())
                .map(|(&v, prm)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; prm.value.numel()]))
                .collect();
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, step, loss_value, &pair.noisy, &model));
            }
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            opt.step(model.params_mut(), &grads)?;
            step += 1;
            history.rows.push(HistoryRow {
                epoch,
                step,
                loss: loss_value,
                psnr: None,
                ssim: None,
                wall_s: if cfg.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
            });
        }
        if let Some((set, sigma)) = eval {
            let row = evaluate(&model, set, sigma, &EvalConfig { seed: cfg.seed, ..Default::default() })?;
            if let Some(last) = history.rows.last_mut() {
                last.psnr = Some(row.psnr_db);
                last.ssim = Some(row.ssim);
            }
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            save_checkpoint(&model, step as u64, &dir.join(format!("epoch_{epoch}.wipu")))?;
        }
    }
    Ok(TrainOutcome { model, history, steps: step })
}

fn diverged(epoch: usize, step: usize, loss: f32, noisy: &crate::engine::Tensor, model: &Model) -> Error {
    let d = noisy.data();
    let (lo, hi) = d.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let bad_param = model.params().iter().find(|p| !p.value.is_finite()).map(|p| p.name.clone());
    Error::Diverged {
        epoch,
        step,
        diagnostic: format!(
            "loss {loss}; last batch {:?}, input mean {:.4}, range [{lo:.4}, {hi:.4}]; first non-finite parameter: {}",
            noisy.shape(),
            noisy.mean(),
            bad_param.as_deref().unwrap_or("none")
        ),
    }
}

#[cfg(test)]
mod tests;
