use crate::error::{Error, Result};
use crate::layers::ParamStore;

/// Global L2 norm over all gradient buffers, accumulated in f64 in order.
pub fn grad_norm(grads: &[Vec<f32>]) -> f64 {
    grads.iter().flatten().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the factor applied (1 when nothing changed).
pub fn clip_grad_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut().flatten() {
        *g = (f64::from(*g) * scale) as f32;
    }
    scale
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamW { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// `p ← p·(1 − lr·wd)`, then the bias-corrected Adam step.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::shape("adamw", format!("{} grads, {} params, state for {}", grads.len(), params.len(), self.m.len())));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.value.numel() != g.len() || g.len() != m.len() {
                return Err(Error::shape("adamw", format!("{}: {} values, {} grads", p.name, p.value.numel(), g.len())));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = f64::from(g);
                let mn = self.beta1 * f64::from(*m) + (1.0 - self.beta1) * g;
                let vn = self.beta2 * f64::from(*v) + (1.0 - self.beta2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let m_hat = mn / bc1;
                let v_hat = vn / bc2;
                let decayed = f64::from(*x) * decay;
                *x = (decayed - self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}
