use super::ParamSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment buffers for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// Gradients are checked before anything is touched: a non-finite entry
    /// leaves both the parameters and the moment buffers unchanged.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, lr: f64) -> Result<()>
    where
        P: ParamSet + ?Sized,
        G: ParamSet + ?Sized,
    {
        let grads = grads.tensors();
        if grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.first.len(),
                grads.len()
            )));
        }
        for (i, (g, m)) in grads.iter().zip(&self.first).enumerate() {
            if g.len() != m.len() {
                return Err(Error::Shape(format!(
                    "gradient tensor {i} has {} entries, expected {}",
                    g.len(),
                    m.len()
                )));
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient { tensor: i });
            }
        }
        let mut tensors = params.tensors_mut();
        if tensors.len() != self.first.len()
            || tensors
                .iter()
                .zip(&self.first)
                .any(|(p, m)| p.len() != m.len())
        {
            return Err(Error::Shape(
                "parameter shapes changed since the optimizer was created".into(),
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in tensors
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
