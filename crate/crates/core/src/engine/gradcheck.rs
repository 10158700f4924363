//! Central finite-difference gradient checking.
//!
//! The graph under test is rebuilt from scratch for every perturbation, so the
//! numeric side only ever runs forward passes. The scalar probed is
//! `½ Σ (out − t)²` for a fixed random target `t`, evaluated in f64 from the
//! f32 outputs.
//!
//! A probe whose `±ε` evaluations flip the sign of any ReLU input straddles a
//! kink; the central difference is then not an estimate of the derivative, so
//! the coordinate is skipped and another is drawn. Everything else in the
//! engine is smooth.
//!
//! Deep single-precision graphs carry forward rounding of ~1e-5 in the probe,
//! which at `ε = 1e-3` is already a 1e-2 error on the slope, and their ReLU
//! pattern flips under almost any single-weight nudge. With `frozen_step` set
//! the perturbed evaluations instead run on a tape whose ReLUs keep the base
//! point's pattern ([`Tape::with_frozen_relu`]): that graph equals the real one
//! on the base point's linear region, so shares its derivative there, but is
//! smooth, so a wide step is usable. Two central differences at `h` and `h/2`
//! are Richardson-combined, `(4·D(h/2) − D(h)) / 3`, cancelling the `h²`
//! term. All finite-difference passes accumulate convolutions in f64.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::data::rng::Rng;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f32,
    pub rtol: f64,
    pub atol: f64,
    /// Kink-free coordinates compared per input; `None` probes all of them.
    pub max_coords: Option<usize>,
    /// With `max_coords`, give up on an input after this many draws per
    /// requested coordinate.
    pub draws_per_coord: usize,
    pub seed: u64,
    /// Step for the frozen-pattern Richardson mode; `None` uses plain central
    /// differences at `eps` and skips kinks.
    pub frozen_step: Option<f32>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-3, rtol: 1e-3, atol: 1e-4, max_coords: None, draws_per_coord: 16, seed: 1234, frozen_step: None }
    }
}

/// Per-input agreement between tape and finite-difference gradients.
///
/// Agreement is measured normwise over the compared coordinates,
/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`: single-precision forward rounding puts a
/// noise floor of roughly `ulp(out) / 2ε` on every numeric coordinate, which
/// swamps tiny individual entries but not the gradient as a whole.
#[derive(Clone, Debug, Default)]
pub struct InputReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub err_norm: f64,
    pub ref_norm: f64,
    /// Coordinate with the largest absolute discrepancy.
    pub worst: Option<GradMismatch>,
}

impl InputReport {
    pub fn rel_error(&self) -> f64 {
        if self.ref_norm > 0.0 {
            self.err_norm / self.ref_norm
        } else {
            self.err_norm
        }
    }

    fn passed(&self, rtol: f64, atol: f64) -> bool {
        self.checked > 0 && (self.err_norm <= atol * (self.checked as f64).sqrt() || self.rel_error() <= rtol)
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.inputs.iter().map(|r| r.checked).sum()
    }

    pub fn skipped_kinks(&self) -> usize {
        self.inputs.iter().map(|r| r.skipped_kinks).sum()
    }

    pub fn worst_rel(&self) -> f64 {
        self.inputs.iter().map(InputReport::rel_error).fold(0.0, f64::max)
    }

    /// Every input had at least one kink-free coordinate and agrees.
    pub fn passed(&self) -> bool {
        !self.inputs.is_empty() && self.inputs.iter().all(|r| r.passed(self.rtol, self.atol))
    }

    /// One line per input: compared/skipped counts and normwise error.
    pub fn summary(&self) -> String {
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                format!("input {i}: {} compared, {} on kinks, rel {:.2e}\n", r.checked, r.skipped_kinks, r.rel_error())
            })
            .collect()
    }
}

fn probe_loss(out: &Tensor, target: &[f32]) -> f64 {
    out.data()
        .iter()
        .zip(target)
        .map(|(&o, &t)| {
            let d = f64::from(o) - f64::from(t);
            0.5 * d * d
        })
        .sum()
}

/// Central difference at step `eps`, or `None` when an unfrozen probe
/// straddles a kink.
#[allow(clippy::too_many_arguments)]
fn central<F>(
    forward: &F,
    frozen: Option<&[u64]>,
    xs: &mut [Tensor],
    ii: usize,
    coord: usize,
    orig: f32,
    eps: f32,
    base_pattern: &[u64],
    target: &[f32],
) -> Result<Option<f64>>
where
    F: Fn(&[Tensor], Option<&[u64]>) -> Result<(Tensor, Vec<u64>)>,
{
    xs[ii].data_mut()[coord] = orig + eps;
    let (out_p, pat_p) = forward(xs, frozen)?;
    xs[ii].data_mut()[coord] = orig - eps;
    let (out_m, pat_m) = forward(xs, frozen)?;
    xs[ii].data_mut()[coord] = orig;
    // a frozen tape reports its inputs' signs, which may legitimately move
    if frozen.is_none() && (pat_p != base_pattern || pat_m != base_pattern) {
        return Ok(None);
    }
    // actual step after f32 rounding of the perturbed inputs
    let h = f64::from(orig + eps) - f64::from(orig - eps);
    Ok(Some((probe_loss(&out_p, target) - probe_loss(&out_m, target)) / h))
}

/// Compares tape gradients of every input against central differences.
///
/// `build` must record the graph for the given input vars and return the
/// output var. Inputs are recorded as trainable leaves.
pub fn check<F>(inputs: &[Tensor], build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let forward = |xs: &[Tensor], frozen: Option<&[u64]>| -> Result<(Tensor, Vec<u64>)> {
        super::with_wide_accumulation(|| {
            let mut tape = frozen.map_or_else(Tape::new, |p| Tape::with_frozen_relu(p.to_vec()));
            let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = build(&mut tape, &vars)?;
            Ok((tape.value(out).clone(), tape.relu_pattern()))
        })
    };

    let mut rng = Rng::new(cfg.seed);
    let (base_out, base_pattern) = forward(inputs, None)?;
    let target: Vec<f32> = (0..base_out.numel()).map(|_| rng.uniform_f32() * 2.0 - 1.0).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let t = tape.constant(Tensor::new(tape.shape(out), target.clone())?);
    let mse = tape.mse(out, t)?;
    let loss = tape.scale(mse, 0.5 * base_out.numel() as f32);
    tape.backward(loss)?;

    let mut report = GradCheckReport { inputs: Vec::new(), rtol: cfg.rtol, atol: cfg.atol };
    for (ii, var) in vars.iter().enumerate() {
        let analytic: Vec<f32> = tape.grad(*var).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[ii].numel()]);
        let numel = inputs[ii].numel();
        let (wanted, candidates) = match cfg.max_coords {
            Some(m) if m < numel => {
                let mut order = rng.permutation(numel);
                order.truncate(m * cfg.draws_per_coord);
                (m, order)
            }
            _ => (numel, (0..numel).collect()),
        };
        let mut ir = InputReport::default();
        let (mut err2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        let mut xs = inputs.to_vec();
        for coord in candidates {
            if ir.checked == wanted {
                break;
            }
            let orig = inputs[ii].data()[coord];
            let numeric = match cfg.frozen_step {
                None => central(&forward, None, &mut xs, ii, coord, orig, cfg.eps, &base_pattern, &target)?,
                Some(h) => {
                    let frozen = Some(base_pattern.as_slice());
                    let d1 = central(&forward, frozen, &mut xs, ii, coord, orig, h, &base_pattern, &target)?;
                    let d2 = central(&forward, frozen, &mut xs, ii, coord, orig, h / 2.0, &base_pattern, &target)?;
                    d1.zip(d2).map(|(d1, d2)| (4.0 * d2 - d1) / 3.0)
                }
            };
            let Some(numeric) = numeric else {
                ir.skipped_kinks += 1;
                continue;
            };
            let a = f64::from(analytic[coord]);
            let err = (a - numeric).abs();
            ir.checked += 1;
            err2 += err * err;
            a2 += a * a;
            n2 += numeric * numeric;
            if ir.worst.as_ref().is_none_or(|w| err > (w.analytic - w.numeric).abs()) {
                ir.worst = Some(GradMismatch { input: ii, coord, analytic: a, numeric });
            }
        }
        ir.err_norm = err2.sqrt();
        ir.ref_norm = a2.sqrt().max(n2.sqrt());
        report.inputs.push(ir);
    }
    Ok(report)
}
