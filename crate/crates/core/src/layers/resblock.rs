use super::conv::Conv2d;
use super::params::{Builder, Init};
use crate::engine::{Resample, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResKind {
    Same,
    /// Stride-2 first conv; halves H and W.
    Down,
    /// Nearest ×2 upsample, then the block; doubles H and W.
    Up,
}

/// `y = skip(x) + conv₂(relu(conv₁(x)))` with `conv₂` zero-initialised, so a
/// fresh same-shape block is the identity.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub kind: ResKind,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    /// 1×1 projection, present whenever the skip path would otherwise change shape.
    pub skip: Option<Conv2d>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ResBlock {
    pub fn new(b: &mut Builder, name: &str, kind: ResKind, in_ch: usize, out_ch: usize) -> Self {
        b.scoped(name, |b| {
            let stride = if kind == ResKind::Down { 2 } else { 1 };
            let conv1 = Conv2d::new(b, "conv1", in_ch, out_ch, 3, stride, Init::FanInUniform);
            let conv2 = Conv2d::new(b, "conv2", out_ch, out_ch, 3, 1, Init::Zero);
            let skip = (kind == ResKind::Down || in_ch != out_ch)
                .then(|| Conv2d::new(b, "skip", in_ch, out_ch, 1, stride, Init::FanInUniform));
            ResBlock { kind, conv1, conv2, skip, in_ch, out_ch }
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let [_, c, h, w] = tape.shape(x);
        if c != self.in_ch {
            return Err(Error::shape("resblock_forward", format!("block expects {} channels, got {c}", self.in_ch)));
        }
        if self.kind == ResKind::Down && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::shape("resblock_forward", format!("down block needs even dims, got {h}x{w}")));
        }
        let x = match self.kind {
            ResKind::Up => tape.resample(Resample::NearestUp2, x)?,
            _ => x,
        };
        let h1 = self.conv1.forward(tape, p, x)?;
        let h1 = tape.relu(h1);
        let branch = self.conv2.forward(tape, p, h1)?;
        let skip = match &self.skip {
            Some(proj) => proj.forward(tape, p, x)?,
            None => x,
        };
        tape.add(skip, branch)
    }

    pub fn describe(&self) -> String {
        let kind = match self.kind {
            ResKind::Same => "resblock",
            ResKind::Down => "resblock-down",
            ResKind::Up => "resblock-up",
        };
        format!("{kind} {}->{}{}", self.in_ch, self.out_ch, if self.skip.is_some() { " (1x1 skip)" } else { "" })
    }
}
