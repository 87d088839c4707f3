use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state for one network: bias-corrected first and second
/// moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    /// Applies one Adam step. Non-finite or misshapen gradients are rejected
    /// before anything is modified.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if !grads.matches(params) || !self.m.matches(params) {
            return Err(NnError::Shape {
                what: "gradient set",
                expected: params.num_params(),
                got: grads.layers.iter().map(|(w, b)| w.len() + b.len()).sum(),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let t = self.t.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let layers = params.layers_mut().iter_mut();
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in layers
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut())
            .zip(self.v.layers.iter_mut())
        {
            let p = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let g = gw.iter().chain(gb.iter());
            let m = mw.iter_mut().chain(mb.iter_mut());
            let v = vw.iter_mut().chain(vb.iter_mut());
            for (((p, &g), m), v) in p.zip(g).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
