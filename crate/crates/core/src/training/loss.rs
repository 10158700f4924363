use crate::engine::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::ForwardOut;

/// Default weights for the dual image/background objective.
pub const DEFAULT_LAMBDA_IMG: f32 = 1.0;
pub const DEFAULT_LAMBDA_RES: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
#[derive(Default)]
pub enum LossMode {
    /// `mse(Ŝ, S)`.
    #[default]
    L2Only,
    /// `λ_img·mse(Ŝ, S) + λ_res·mse(B̂, Y − S)`, with `B̂` the predicted noise
    /// (residual heads) or background (mixture head).
    Eq2Dual { lambda_img: f32, lambda_res: f32 },
}


impl LossMode {
    pub fn dual() -> Self {
        LossMode::Eq2Dual { lambda_img: DEFAULT_LAMBDA_IMG, lambda_res: DEFAULT_LAMBDA_RES }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossMode::L2Only => "l2_only",
            LossMode::Eq2Dual { .. } => "eq2_dual",
        }
    }

    /// Parses `l2_only` or `eq2_dual` (the latter with default weights).
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "l2_only" | "l2" => Ok(LossMode::L2Only),
            "eq2_dual" | "dual" => Ok(LossMode::dual()),
            other => Err(Error::invalid(format!("unknown loss mode `{other}` (expected l2_only or eq2_dual)"))),
        }
    }
}

/// Records the training loss for one batch.
pub fn loss(tape: &mut Tape, out: &ForwardOut<Var>, clean: Var, noisy: Var, mode: LossMode) -> Result<Var> {
    let img = tape.mse(out.s_hat, clean)?;
    match mode {
        LossMode::L2Only => Ok(img),
        LossMode::Eq2Dual { lambda_img, lambda_res } => {
            let b_hat = match (out.n_hat, &out.aux) {
                (Some(n), _) => n,
                (None, Some(aux)) => aux.background,
                (None, None) => return Err(Error::invalid("eq2_dual needs a model that exposes a background estimate")),
            };
            let b_true = tape.sub(noisy, clean)?;
            let res = tape.mse(b_hat, b_true)?;
            let a = tape.scale(img, lambda_img);
            let b = tape.scale(res, lambda_res);
            tape.add(a, b)
        }
    }
}
