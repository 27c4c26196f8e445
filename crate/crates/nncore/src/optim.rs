use crate::error::{NnError, Result};
use crate::param::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// Adam with decoupled weight decay. Moments are kept in f64.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        let c = &config;
        let ok = c.lr > 0.0
            && (0.0..1.0).contains(&c.beta1)
            && (0.0..1.0).contains(&c.beta2)
            && c.eps > 0.0
            && c.weight_decay >= 0.0;
        if !ok {
            return Err(NnError::Config(format!("invalid AdamW settings {config:?}")));
        }
        Ok(Self { config, step: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently held in `store`. Refuses to
    /// touch any parameter if a gradient is not finite.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.trainable && !p.grad.all_finite()) {
            return Err(NnError::NonFinite(format!("gradient of {}", p.name)));
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(NnError::Usage("optimizer used with a different parameter store".into()));
        }
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data().to_vec();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i].f64();
                let mut x = w.f64() * (1.0 - lr * weight_decay);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                x -= lr * m_hat / (v_hat.sqrt() + eps);
                *w = T::of(x);
            }
        }
        Ok(())
    }
}
