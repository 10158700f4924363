use super::rng::Rng;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::layers::make_sigma_channel;

/// A clean image (or batch), its AWGN-corrupted copy and the matching σ-map.
#[derive(Clone, Debug)]
pub struct NoisyPair {
    pub clean: Tensor,
    /// `clean + ε`, `ε ~ N(0, (σ/255)²)`; deliberately not clamped.
    pub noisy: Tensor,
    /// Noise level on the 8-bit scale.
    pub sigma: f32,
    pub sigma_map: Tensor,
}

fn check_sigma(sigma: f32) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise level must be a finite value >= 0, got {sigma}")))
    }
}

fn corrupt(clean: &[f32], sigma: f32, rng: &mut Rng) -> Vec<f32> {
    let std = f64::from(sigma) / 255.0;
    clean.iter().map(|&s| s + (std * rng.normal()) as f32).collect()
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma / 255`, drawing
/// from `rng` in element order.
pub fn add_awgn(clean: &Tensor, sigma: f32, rng: &mut Rng) -> Result<NoisyPair> {
    check_sigma(sigma)?;
    let noisy = Tensor::new(clean.shape(), corrupt(clean.data(), sigma, rng))?;
    let [n, _, h, w] = clean.shape();
    Ok(NoisyPair { clean: clean.clone(), noisy, sigma, sigma_map: make_sigma_channel(n, h, w, sigma)? })
}

/// Corrupts each batch item `i` from its own substream `(seed, stream_ids[i])`,
/// so the noise a sample receives does not depend on batching or threads.
pub fn noisy_batch(clean: &Tensor, sigma: f32, seed: u64, stream_ids: &[u64]) -> Result<NoisyPair> {
    check_sigma(sigma)?;
    let [n, _, h, w] = clean.shape();
    if stream_ids.len() != n {
        return Err(Error::invalid(format!("{} stream ids for a batch of {n}", stream_ids.len())));
    }
    let parts = crate::par::map_indexed(n, |i| {
        let mut rng = Rng::substream(seed, stream_ids[i]);
        corrupt(clean.item(i), sigma, &mut rng)
    });
    let noisy = Tensor::new(clean.shape(), parts.concat())?;
    Ok(NoisyPair { clean: clean.clone(), noisy, sigma, sigma_map: make_sigma_channel(n, h, w, sigma)? })
}
