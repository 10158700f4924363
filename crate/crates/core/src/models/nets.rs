//! Backbones: the plain DnCNN-style stack and the configurable U-Net.

use crate::engine::{Resample, Tape, Var};
use crate::error::Result;
use crate::layers::{Builder, Conv2d, Init, ResBlock, ResKind, SeBlock, SE_REDUCTION};

/// `depth` 3×3 convs, ReLU between them, last conv maps to 3 channels.
#[derive(Clone, Debug)]
pub struct PlainCnn {
    pub convs: Vec<Conv2d>,
}

impl PlainCnn {
    pub fn new(b: &mut Builder, in_ch: usize, width: usize, depth: usize) -> Self {
        let convs = (0..depth)
            .map(|i| {
                let ci = if i == 0 { in_ch } else { width };
                let co = if i + 1 == depth { 3 } else { width };
                Conv2d::new(b, &format!("conv{i}"), ci, co, 3, 1, Init::FanInUniform)
            })
            .collect();
        PlainCnn { convs }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], mut x: Var) -> Result<Var> {
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(tape, p, x)?;
            if i != last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn describe(&self, out: &mut Vec<String>) {
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            out.push(format!("layer{i}: {}{}", c.describe(), if i == last { "" } else { ", relu" }));
        }
    }
}

/// Two 3×3 conv + ReLU.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub a: Conv2d,
    pub b: Conv2d,
}

impl DoubleConv {
    pub fn new(bld: &mut Builder, name: &str, in_ch: usize, out_ch: usize) -> Self {
        bld.scoped(name, |bld| DoubleConv {
            a: Conv2d::new(bld, "a", in_ch, out_ch, 3, 1, Init::FanInUniform),
            b: Conv2d::new(bld, "b", out_ch, out_ch, 3, 1, Init::FanInUniform),
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let x = self.a.forward(tape, p, x)?;
        let x = tape.relu(x);
        let x = self.b.forward(tape, p, x)?;
        Ok(tape.relu(x))
    }

    fn describe(&self) -> String {
        format!("{}, relu, {}, relu", self.a.describe(), self.b.describe())
    }
}

#[derive(Clone, Debug)]
pub enum Down {
    AvgPool,
    Learned(ResBlock),
}

#[derive(Clone, Debug)]
pub enum Up {
    Nearest,
    Learned(ResBlock),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetPlan {
    pub in_ch: usize,
    pub base_width: usize,
    pub scales: usize,
    pub se_skips: bool,
    pub learned_resampling: bool,
}

/// Encoder–decoder with concatenated skips. Channel widths double per scale.
/// Returns the last decoder feature map; heads are attached by the caller.
#[derive(Clone, Debug)]
pub struct UNet {
    pub plan: UNetPlan,
    pub enc: Vec<DoubleConv>,
    pub downs: Vec<Down>,
    pub ups: Vec<Up>,
    pub skip_se: Vec<SeBlock>,
    pub dec: Vec<DoubleConv>,
}

impl UNet {
    pub fn widths(plan: &UNetPlan) -> Vec<usize> {
        (0..plan.scales).map(|i| plan.base_width << i).collect()
    }

    pub fn new(b: &mut Builder, plan: UNetPlan) -> Result<Self> {
        let widths = Self::widths(&plan);
        let s = plan.scales;
        let mut enc = Vec::with_capacity(s);
        let mut downs = Vec::with_capacity(s.saturating_sub(1));
        for i in 0..s {
            if i > 0 {
                downs.push(if plan.learned_resampling {
                    Down::Learned(ResBlock::new(b, &format!("down{}", i - 1), ResKind::Down, widths[i - 1], widths[i - 1]))
                } else {
                    Down::AvgPool
                });
            }
            let ci = if i == 0 { plan.in_ch } else { widths[i - 1] };
            enc.push(DoubleConv::new(b, &format!("enc{i}"), ci, widths[i]));
        }
        let mut skip_se = Vec::new();
        if plan.se_skips {
            for (i, &w) in widths.iter().enumerate().take(s - 1) {
                skip_se.push(SeBlock::new(b, &format!("skip_se{i}"), w, SE_REDUCTION)?);
            }
        }
        let mut ups = Vec::with_capacity(s - 1);
        let mut dec = Vec::with_capacity(s - 1);
        for i in 0..s - 1 {
            let below = widths[i + 1];
            ups.push(if plan.learned_resampling {
                Up::Learned(ResBlock::new(b, &format!("up{i}"), ResKind::Up, below, below))
            } else {
                Up::Nearest
            });
            dec.push(DoubleConv::new(b, &format!("dec{i}"), below + widths[i], widths[i]));
        }
        Ok(UNet { plan, enc, downs, ups, skip_se, dec })
    }

    pub fn out_channels(&self) -> usize {
        self.plan.base_width
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], mut x: Var) -> Result<Var> {
        let s = self.plan.scales;
        let mut skips = Vec::with_capacity(s - 1);
        for i in 0..s {
            if i > 0 {
                x = match &self.downs[i - 1] {
                    Down::AvgPool => tape.resample(Resample::AvgPool2, x)?,
                    Down::Learned(block) => block.forward(tape, p, x)?,
                };
            }
            x = self.enc[i].forward(tape, p, x)?;
            if i + 1 < s {
                skips.push(x);
            }
        }
        for i in (0..s - 1).rev() {
            x = match &self.ups[i] {
                Up::Nearest => tape.resample(Resample::NearestUp2, x)?,
                Up::Learned(block) => block.forward(tape, p, x)?,
            };
            let skip = match self.skip_se.get(i) {
                Some(se) => se.forward(tape, p, skips[i])?,
                None => skips[i],
            };
            let cat = tape.concat_channels(x, skip)?;
            x = self.dec[i].forward(tape, p, cat)?;
        }
        Ok(x)
    }

    pub fn describe(&self, out: &mut Vec<String>) {
        let widths = Self::widths(&self.plan);
        out.push(format!(
            "scales: {} ({})",
            self.plan.scales,
            widths.iter().map(usize::to_string).collect::<Vec<_>>().join("/")
        ));
        for i in 0..self.plan.scales {
            if i > 0 {
                out.push(match &self.downs[i - 1] {
                    Down::AvgPool => format!("down{}: avgpool2", i - 1),
                    Down::Learned(b) => format!("down{}: {}", i - 1, b.describe()),
                });
            }
            out.push(format!("enc{i}: {}", self.enc[i].describe()));
        }
        for i in (0..self.plan.scales - 1).rev() {
            out.push(match &self.ups[i] {
                Up::Nearest => format!("up{i}: nearest_up2"),
                Up::Learned(b) => format!("up{i}: {}", b.describe()),
            });
            if let Some(se) = self.skip_se.get(i) {
                out.push(format!("skip{i}: {}", se.describe()));
            }
            out.push(format!("dec{i}: concat(up{i}, skip{i}), {}", self.dec[i].describe()));
        }
    }
}
