use super::conv::Conv2d;
use super::params::{Builder, Init};
use crate::engine::{Tape, Var};
use crate::error::{Error, Result};

pub const SE_REDUCTION: usize = 8;

/// Squeeze-and-excitation gate: `F̃ = s ⊙ F`, `s = sigmoid(W₂ relu(W₁ GAP(F)))`.
///
/// The two projections are 1×1 convs on the pooled `(n, c, 1, 1)` vector.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub reduce: Conv2d,
    pub expand: Conv2d,
    pub channels: usize,
    pub reduction: usize,
}

impl SeBlock {
    pub fn new(b: &mut Builder, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let reduced = channels / reduction.max(1);
        if reduced == 0 {
            return Err(Error::invalid(format!(
                "SE block on {channels} channels with reduction {reduction} leaves no hidden units"
            )));
        }
        Ok(b.scoped(name, |b| SeBlock {
            reduce: Conv2d::new(b, "reduce", channels, reduced, 1, 1, Init::FanInUniform),
            expand: Conv2d::new(b, "expand", reduced, channels, 1, 1, Init::FanInUniform),
            channels,
            reduction,
        }))
    }

    /// Per-channel gate `s`, shape `(n, c, 1, 1)`.
    pub fn scales(&self, tape: &mut Tape, p: &[Var], f: Var) -> Result<Var> {
        let c = tape.shape(f)[1];
        if c != self.channels {
            return Err(Error::shape("se_forward", format!("block has {} channels, input has {c}", self.channels)));
        }
        let pooled = tape.global_avg_pool(f)?;
        let h = self.reduce.forward(tape, p, pooled)?;
        let h = tape.relu(h);
        let s = self.expand.forward(tape, p, h)?;
        Ok(tape.sigmoid(s))
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], f: Var) -> Result<Var> {
        let s = self.scales(tape, p, f)?;
        tape.mul(f, s)
    }

    pub fn describe(&self) -> String {
        format!("se c={} r={}", self.channels, self.reduction)
    }
}
