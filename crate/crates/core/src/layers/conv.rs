use super::params::{Builder, Init, ParamId};
use crate::engine::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// `k×k` conv with "same" padding for odd `k` at stride 1.
    pub fn new(b: &mut Builder, name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, init: Init) -> Self {
        b.scoped(name, |b| {
            let fan_in = in_ch * kernel * kernel;
            let weight = b.add("weight", [out_ch, in_ch, kernel, kernel], fan_in, init);
            let bias = b.add("bias", [1, 1, 1, out_ch], fan_in, init);
            Conv2d { weight, bias, in_ch, out_ch, kernel, stride, pad: kernel / 2 }
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.weight.0], p[self.bias.0], self.stride, self.pad)
    }

    pub fn describe(&self) -> String {
        let stride = if self.stride > 1 { format!("/s{}", self.stride) } else { String::new() };
        format!("conv{k}x{k}{stride} {}->{}", self.in_ch, self.out_ch, k = self.kernel)
    }
}
