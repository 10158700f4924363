use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Dncnn,
    Ffdnet,
    Unet,
    SimplePuCnn,
    PunetG,
    PunetPp,
    Wipunet1,
    Wipunet2,
    Wipunet3,
    Wipunet4,
    Wipunet,
}

impl Arch {
    pub const ALL: [Arch; 11] = [
        Arch::Dncnn,
        Arch::Ffdnet,
        Arch::Unet,
        Arch::SimplePuCnn,
        Arch::PunetG,
        Arch::PunetPp,
        Arch::Wipunet1,
        Arch::Wipunet2,
        Arch::Wipunet3,
        Arch::Wipunet4,
        Arch::Wipunet,
    ];

    /// The single-prior variants followed by the full model, in table order.
    pub const ABLATION: [Arch; 5] = [Arch::Wipunet1, Arch::Wipunet2, Arch::Wipunet3, Arch::Wipunet4, Arch::Wipunet];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Dncnn => "dncnn",
            Arch::Ffdnet => "ffdnet",
            Arch::Unet => "unet",
            Arch::SimplePuCnn => "simple_pu_cnn",
            Arch::PunetG => "punet_g",
            Arch::PunetPp => "punet_pp",
            Arch::Wipunet1 => "wipunet1",
            Arch::Wipunet2 => "wipunet2",
            Arch::Wipunet3 => "wipunet3",
            Arch::Wipunet4 => "wipunet4",
            Arch::Wipunet => "wipunet",
        }
    }

    /// Models that take the σ-map as a fourth input channel.
    pub fn sigma_aware(self) -> bool {
        matches!(self, Arch::Ffdnet | Arch::PunetG | Arch::Wipunet2 | Arch::Wipunet)
    }

    /// Default depth: conv layers for the plain CNNs, scales for the U-Nets.
    pub fn default_depth(self) -> usize {
        match self {
            Arch::Dncnn => 8,
            Arch::SimplePuCnn => 5,
            Arch::PunetPp => 2,
            _ => 3,
        }
    }

    /// Whether the head predicts noise and subtracts it from the input.
    /// `unet`, `ffdnet` and `wipunet2..4` regress the clean image directly,
    /// which keeps hard conservation the single prior of `wipunet1`.
    pub fn is_residual(self) -> bool {
        matches!(self, Arch::Dncnn | Arch::SimplePuCnn | Arch::PunetG | Arch::Wipunet1 | Arch::Wipunet)
    }

    pub fn is_plain_cnn(self) -> bool {
        matches!(self, Arch::Dncnn | Arch::SimplePuCnn)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        let norm = match norm.as_str() {
            "punet__" | "pu_net__" | "punetpp" | "pu_net_pp" => "punet_pp".to_string(),
            "punetg" | "pu_net_g" => "punet_g".to_string(),
            _ => norm,
        };
        Arch::ALL.into_iter().find(|a| a.name() == norm).ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

/// Architecture identifier plus the hyperparameters that fix its shape and
/// initial weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub arch: Arch,
    pub base_width: usize,
    pub depth: usize,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 1234;

impl ModelSpec {
    pub fn new(arch: Arch, base_width: usize) -> Self {
        ModelSpec { arch, base_width, depth: arch.default_depth(), seed: DEFAULT_SEED }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn sigma_aware(&self) -> bool {
        self.arch.sigma_aware()
    }

    pub fn input_channels(&self) -> usize {
        if self.sigma_aware() {
            4
        } else {
            3
        }
    }

    /// H and W are padded up to a multiple of this inside the forward pass.
    pub fn spatial_multiple(&self) -> usize {
        if self.arch.is_plain_cnn() {
            1
        } else {
            1 << (self.depth - 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::invalid("base width must be positive"));
        }
        let min_depth = if self.arch.is_plain_cnn() { 2 } else { 1 };
        if self.depth < min_depth {
            return Err(Error::invalid(format!("{} needs depth >= {min_depth}", self.arch)));
        }
        if !self.arch.is_plain_cnn() && self.depth > 8 {
            return Err(Error::invalid("at most 8 scales are supported"));
        }
        Ok(())
    }

    /// Stable one-line form, e.g. `arch=wipunet width=16 depth=3 seed=1234`.
    pub fn to_line(&self) -> String {
        format!("arch={} width={} depth={} seed={}", self.arch, self.base_width, self.depth, self.seed)
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let mut arch = None;
        let (mut width, mut depth, mut seed) = (None, None, None);
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::invalid(format!("bad spec token `{tok}`")))?;
            let num = || v.parse::<u64>().map_err(|_| Error::invalid(format!("bad number in `{tok}`")));
            match k {
                "arch" => arch = Some(v.parse::<Arch>()?),
                "width" => width = Some(num()? as usize),
                "depth" => depth = Some(num()? as usize),
                "seed" => seed = Some(num()?),
                _ => return Err(Error::invalid(format!("unknown spec key `{k}`"))),
            }
        }
        let missing = |what: &str| Error::invalid(format!("spec line lacks `{what}`"));
        let spec = ModelSpec {
            arch: arch.ok_or_else(|| missing("arch"))?,
            base_width: width.ok_or_else(|| missing("width"))?,
            depth: depth.ok_or_else(|| missing("depth"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
