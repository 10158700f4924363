//! The model zoo behind one forward interface.
//!
//! | arch            | backbone                     | σ-map | SE on skips | learned resampling |
//! |-----------------|------------------------------|-------|-------------|--------------------|
//! | `dncnn`         | 8-layer plain CNN            |       |             |                    |
//! | `simple_pu_cnn` | 5-layer plain CNN            |       |             |                    |
//! | `unet`          | 3-scale U-Net                |       |             |                    |
//! | `ffdnet`        | 3-scale U-Net                | yes   |             |                    |
//! | `punet_g`       | 3-scale U-Net                | yes   |             | yes                |
//! | `punet_pp`      | 2-scale U-Net + mixture head |       |             |                    |
//! | `wipunet1`      | 3-scale U-Net                |       |             |                    |
//! | `wipunet2`      | 3-scale U-Net                | yes   |             |                    |
//! | `wipunet3`      | 3-scale U-Net                |       | yes         |                    |
//! | `wipunet4`      | 3-scale U-Net                |       |             | yes                |
//! | `wipunet`       | 3-scale U-Net                | yes   | yes         | yes                |
//!
//! Residual archs (`dncnn`, `simple_pu_cnn`, `punet_g`, `wipunet1`,
//! `wipunet`) predict a noise field `n̂` and return `ŝ = y − n̂`. `unet`,
//! `ffdnet` and `wipunet2..4` regress `ŝ` directly. `punet_pp` predicts a density `ρ`, mask `m` and gate `g` and
//! returns `ŝ = (g ⊙ m) ⊙ (y − ρ)` with background `b = y − ŝ`.

mod nets;
mod spec;

pub use nets::{Down, DoubleConv, PlainCnn, UNet, UNetPlan, Up};
pub use spec::{Arch, ModelSpec, DEFAULT_SEED};

use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{make_sigma_channel, Builder, Conv2d, Init, ParamStore};

/// Auxiliary maps of the mixture head.
#[derive(Clone, Debug)]
pub struct MixtureMaps<T> {
    pub rho: T,
    pub mask: T,
    pub gate: T,
    pub background: T,
}

/// Denoised estimate plus whatever decomposition the arch exposes.
#[derive(Clone, Debug)]
pub struct ForwardOut<T> {
    pub s_hat: T,
    /// Predicted noise field (residual archs only); `s_hat` is exactly
    /// `y − n_hat` elementwise.
    pub n_hat: Option<T>,
    pub aux: Option<MixtureMaps<T>>,
}

impl ForwardOut<Var> {
    fn resolve(&self, tape: &Tape) -> ForwardOut<Tensor> {
        let get = |v: Var| tape.value(v).clone();
        ForwardOut {
            s_hat: get(self.s_hat),
            n_hat: self.n_hat.map(get),
            aux: self.aux.as_ref().map(|a| MixtureMaps {
                rho: get(a.rho),
                mask: get(a.mask),
                gate: get(a.gate),
                background: get(a.background),
            }),
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Plain(PlainCnn),
    UNet { unet: UNet, head: Conv2d },
    Mixture { unet: UNet, rho: Conv2d, mask: Conv2d, gate: Conv2d },
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    net: Net,
}

/// Anything that maps a noisy image at a known level to a clean estimate.
pub trait Denoiser: Sync {
    fn name(&self) -> String;
    fn sigma_aware(&self) -> bool;
    /// Returns the raw (unclamped) estimate for a `(n,3,H,W)` batch.
    fn denoise(&self, noisy: &Tensor, sigma: f32) -> Result<Tensor>;
    /// Input sides are padded up to a multiple of this before the backbone.
    fn spatial_multiple(&self) -> usize {
        1
    }
}

/// Returns its input; the noisy-input baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> String {
        "identity".into()
    }

    fn sigma_aware(&self) -> bool {
        false
    }

    fn denoise(&self, noisy: &Tensor, _sigma: f32) -> Result<Tensor> {
        Ok(noisy.clone())
    }
}

/// Instantiates a model with weights drawn deterministically from `spec.seed`.
pub fn build(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut b = Builder::new(spec.seed);
    let in_ch = spec.input_channels();
    let w = spec.base_width;
    let plan = |se_skips, learned_resampling| UNetPlan {
        in_ch,
        base_width: w,
        scales: spec.depth,
        se_skips,
        learned_resampling,
    };
    let net = match spec.arch {
        Arch::Dncnn | Arch::SimplePuCnn => Net::Plain(PlainCnn::new(&mut b, in_ch, w, spec.depth)),
        Arch::PunetPp => {
            let unet = UNet::new(&mut b, plan(false, false))?;
            let rho = Conv2d::new(&mut b, "head_rho", w, 3, 1, 1, Init::FanInUniform);
            let mask = Conv2d::new(&mut b, "head_mask", w, 3, 1, 1, Init::FanInUniform);
            let gate = Conv2d::new(&mut b, "head_gate", w, 3, 1, 1, Init::FanInUniform);
            Net::Mixture { unet, rho, mask, gate }
        }
        arch => {
            let se = matches!(arch, Arch::Wipunet3 | Arch::Wipunet);
            let learned = matches!(arch, Arch::Wipunet4 | Arch::Wipunet | Arch::PunetG);
            let unet = UNet::new(&mut b, plan(se, learned))?;
            let head = Conv2d::new(&mut b, "head", w, 3, 1, 1, Init::FanInUniform);
            Net::UNet { unet, head }
        }
    };
    Ok(Model { spec: *spec, params: b.finish(), net })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Puts the parameters on `tape`; the returned vars index by `ParamId`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    fn check_input(&self, tape: &Tape, y: Var, sigma_map: Option<Var>) -> Result<()> {
        let [n, c, h, w] = tape.shape(y);
        if c != 3 {
            return Err(Error::shape("forward", format!("expected RGB input, got {c} channels")));
        }
        match (self.spec.sigma_aware(), sigma_map) {
            (true, None) => Err(Error::Conditioning { arch: self.spec.arch.name(), detail: "requires a sigma map" }),
            (false, Some(_)) => {
                Err(Error::Conditioning { arch: self.spec.arch.name(), detail: "is not sigma-aware; no sigma map allowed" })
            }
            (true, Some(s)) if tape.shape(s) != [n, 1, h, w] => {
                Err(Error::shape("forward", format!("sigma map {:?} for input {:?}", tape.shape(s), tape.shape(y))))
            }
            _ => Ok(()),
        }
    }

    /// Reflection-pads bottom/right up to the backbone's spatial multiple.
    fn pad_input(&self, tape: &mut Tape, x: Var) -> (Var, usize, usize) {
        let [_, _, h, w] = tape.shape(x);
        let m = self.spec.spatial_multiple();
        let (ph, pw) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);
        if ph == 0 && pw == 0 {
            (x, h, w)
        } else {
            (tape.reflect_pad(x, 0, ph, 0, pw), h, w)
        }
    }

    fn unpad(&self, tape: &mut Tape, x: Var, h: usize, w: usize) -> Result<Var> {
        if tape.shape(x)[2..] == [h, w] {
            Ok(x)
        } else {
            tape.crop(x, 0, 0, h, w)
        }
    }

    /// Backbone plus output conv on `y ⊕ σ-map?`, cropped back to `y`'s size.
    fn head_output(&self, tape: &mut Tape, p: &[Var], y: Var, sigma_map: Option<Var>) -> Result<Var> {
        self.check_input(tape, y, sigma_map)?;
        let input = match sigma_map {
            Some(s) => tape.concat_channels(y, s)?,
            None => y,
        };
        match &self.net {
            Net::Plain(cnn) => cnn.forward(tape, p, input),
            Net::UNet { unet, head } => {
                let (x, h, w) = self.pad_input(tape, input);
                let f = unet.forward(tape, p, x)?;
                let o = head.forward(tape, p, f)?;
                self.unpad(tape, o, h, w)
            }
            Net::Mixture { .. } => Err(Error::invalid("punet_pp has a mixture head; use forward_punetpp")),
        }
    }

    /// Residual forward: `n̂ = backbone(y ⊕ σ-map?)`, `ŝ = y − n̂`.
    pub fn forward_residual(&self, tape: &mut Tape, p: &[Var], y: Var, sigma_map: Option<Var>) -> Result<ForwardOut<Var>> {
        if !self.spec.arch.is_residual() {
            return Err(Error::invalid(format!("{} predicts the clean image directly; it has no residual head", self.spec.arch)));
        }
        let n_hat = self.head_output(tape, p, y, sigma_map)?;
        let s_hat = tape.sub(y, n_hat)?;
        Ok(ForwardOut { s_hat, n_hat: Some(n_hat), aux: None })
    }

    /// Direct forward: `ŝ = backbone(y ⊕ σ-map?)`; no decomposition exposed.
    pub fn forward_direct(&self, tape: &mut Tape, p: &[Var], y: Var, sigma_map: Option<Var>) -> Result<ForwardOut<Var>> {
        if self.spec.arch.is_residual() {
            return Err(Error::invalid(format!("{} has a residual head; use forward_residual", self.spec.arch)));
        }
        let s_hat = self.head_output(tape, p, y, sigma_map)?;
        Ok(ForwardOut { s_hat, n_hat: None, aux: None })
    }

    /// Mixture forward: `ŝ = (g ⊙ m) ⊙ (y − ρ)`, `b = y − ŝ`.
    pub fn forward_punetpp(&self, tape: &mut Tape, p: &[Var], y: Var) -> Result<ForwardOut<Var>> {
        let Net::Mixture { unet, rho, mask, gate } = &self.net else {
            return Err(Error::invalid(format!("{} has no mixture head", self.spec.arch)));
        };
        self.check_input(tape, y, None)?;
        let (x, h, w) = self.pad_input(tape, y);
        let f = unet.forward(tape, p, x)?;
        let head = |conv: &Conv2d, tape: &mut Tape| -> Result<Var> {
            let v = conv.forward(tape, p, f)?;
            self.unpad(tape, v, h, w)
        };
        let rho_pre = head(rho, tape)?;
        let mask_pre = head(mask, tape)?;
        let gate_pre = head(gate, tape)?;
        let rho = tape.softplus(rho_pre);
        let mask = tape.sigmoid(mask_pre);
        let gate = tape.sigmoid(gate_pre);
        let gm = tape.mul(gate, mask)?;
        let y_minus_rho = tape.sub(y, rho)?;
        let s_hat = tape.mul(gm, y_minus_rho)?;
        let background = tape.sub(y, s_hat)?;
        Ok(ForwardOut { s_hat, n_hat: None, aux: Some(MixtureMaps { rho, mask, gate, background }) })
    }

    /// Dispatches to the residual, direct or mixture forward.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], y: Var, sigma_map: Option<Var>) -> Result<ForwardOut<Var>> {
        match self.net {
            Net::Mixture { .. } => {
                if sigma_map.is_some() {
                    return Err(Error::Conditioning { arch: "punet_pp", detail: "is not sigma-aware; no sigma map allowed" });
                }
                self.forward_punetpp(tape, p, y)
            }
            _ if self.spec.arch.is_residual() => self.forward_residual(tape, p, y, sigma_map),
            _ => self.forward_direct(tape, p, y, sigma_map),
        }
    }

    /// Gradient-free forward on concrete tensors. `sigma` supplies the σ-map
    /// for σ-aware models and must be `None` otherwise.
    pub fn infer(&self, y: &Tensor, sigma: Option<f32>) -> Result<ForwardOut<Tensor>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let sv = match sigma {
            Some(s) => Some(tape.constant(make_sigma_channel(y.n(), y.h(), y.w(), s)?)),
            None => None,
        };
        let out = self.forward(&mut tape, &p, yv, sv)?;
        Ok(out.resolve(&tape))
    }

    /// Layer list, channel plan and parameter count, one item per line.
    pub fn describe(&self) -> String {
        let mut lines = Vec::new();
        let spec = &self.spec;
        let unit = if spec.arch.is_plain_cnn() { "layers" } else { "scales" };
        lines.push(format!("model {} (base width {}, {} {unit}, seed {})", spec.arch, spec.base_width, spec.depth, spec.seed));
        lines.push(if spec.sigma_aware() {
            "input: rgb + sigma-map (4 ch)".to_string()
        } else {
            "input: rgb (3 ch)".to_string()
        });
        match &self.net {
            Net::Plain(cnn) => {
                cnn.describe(&mut lines);
                lines.push("output: input - noise estimate (residual head)".into());
            }
            Net::UNet { unet, head } if spec.arch.is_residual() => {
                unet.describe(&mut lines);
                lines.push(format!("head: {} -> noise estimate", head.describe()));
                lines.push("output: input - noise estimate (residual head)".into());
            }
            Net::UNet { unet, head } => {
                unet.describe(&mut lines);
                lines.push(format!("head: {} -> clean estimate", head.describe()));
                lines.push("output: clean estimate (direct head)".into());
            }
            Net::Mixture { unet, rho, mask, gate } => {
                unet.describe(&mut lines);
                lines.push(format!("head_rho: {}, softplus -> density", rho.describe()));
                lines.push(format!("head_mask: {}, sigmoid -> mask", mask.describe()));
                lines.push(format!("head_gate: {}, sigmoid -> gate", gate.describe()));
                lines.push("output: (gate * mask) * (input - density); background = input - output".into());
            }
        }
        lines.push(format!("parameters: {}", self.param_count()));
        lines.join("\n") + "\n"
    }
}

impl Denoiser for Model {
    fn name(&self) -> String {
        self.spec.arch.name().to_string()
    }

    fn sigma_aware(&self) -> bool {
        self.spec.sigma_aware()
    }

    fn denoise(&self, noisy: &Tensor, sigma: f32) -> Result<Tensor> {
        let cond = self.spec.sigma_aware().then_some(sigma);
        Ok(self.infer(noisy, cond)?.s_hat)
    }

    fn spatial_multiple(&self) -> usize {
        self.spec.spatial_multiple()
    }
}
