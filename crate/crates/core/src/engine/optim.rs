use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; one instance per model.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<P: Parameters + ?Sized>(model: &P, lr: f64, cfg: AdamConfig) -> Self {
        let zeros: Vec<Array2<f64>> = model
            .tensors()
            .iter()
            .map(|t| Array2::zeros(t.dim()))
            .collect();
        Self {
            cfg,
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step<P: Parameters + ?Sized>(
        &mut self,
        model: &mut P,
        grads: &[Array2<f64>],
    ) -> Result<()> {
        let mut params = model.tensors_mut();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: {} parameter tensors, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.dim() != g.dim() {
                return Err(Error::Shape {
                    op: "adam",
                    left: p.dim(),
                    right: g.dim(),
                });
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let lr = self.lr;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
