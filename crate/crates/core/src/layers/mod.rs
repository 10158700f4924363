//! Building blocks: convs, squeeze-and-excitation gates, residual resampling
//! blocks and the constant σ channel.

mod conv;
mod params;
mod resblock;
mod se;

pub use conv::Conv2d;
pub use params::{Builder, Init, Param, ParamId, ParamStore};
pub use resblock::{ResBlock, ResKind};
pub use se::{SeBlock, SE_REDUCTION};

use crate::engine::Tensor;
use crate::error::{Error, Result};

/// `(n, 1, h, w)` map filled with `sigma / 255`.
pub fn make_sigma_channel(n: usize, h: usize, w: usize, sigma: f32) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level must be a finite value >= 0, got {sigma}")));
    }
    Ok(Tensor::full([n, 1, h, w], (f64::from(sigma) / 255.0) as f32))
}
