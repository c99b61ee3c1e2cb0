use serde::{Deserialize, Serialize};

use super::tape::{Gradients, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay:
/// `θ ← θ − η·(m̂ / (√v̂ + ε) + λ·θ)`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Parameters without a gradient entry are treated as having
    /// a zero gradient (their moments decay and weight decay still applies).
    pub fn step(&mut self, params: &mut [Tensor], grads: &Gradients) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(
                "adamw_step",
                format!("{} params for {} moment slots", params.len(), self.m.len()),
            ));
        }
        for (id, g) in grads.iter() {
            let p = params
                .get(id.0)
                .ok_or_else(|| Error::shape("adamw_step", format!("gradient for unknown param {}", id.0)))?;
            if !p.same_shape(g) {
                return Err(Error::shape("adamw_step", format!("param {} {:?} vs grad {:?}", id.0, p.shape(), g.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("adamw_step"));
            }
        }
        self.t += 1;
        let AdamWConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.get(ParamId(i));
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;

    fn grads_of(values: &[Tensor], f: impl for<'t> Fn(&'t Tape, &[crate::numeric::Var<'t>]) -> crate::numeric::Var<'t>) -> Gradients {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().enumerate().map(|(i, t)| tape.param(ParamId(i), t)).collect();
        let loss = f(&tape, &vars);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let mut params = vec![Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let before = params.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &params);
        for _ in 0..3 {
            opt.step(&mut params, &Gradients::default()).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn first_step_hand_evaluated() {
        // m = 0.1, v = 0.001; bias correction at t = 1 gives m̂ = v̂ = 1,
        // so θ' = 1 − 0.1 · 1 / (1 + 1e-8).
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        let mut params = vec![Tensor::scalar(1.0)];
        let g = grads_of(&params, |_, v| v[0]);
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.1,
                weight_decay: 0.0,
                ..Default::default()
            },
            &params,
        );
        opt.step(&mut params, &g).unwrap();
        assert!((params[0].item() - expected).abs() < 1e-15, "{}", params[0].item());
        assert!((params[0].item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut params = vec![Tensor::matrix(1, 2, vec![3.0, -4.0]).unwrap()];
        let before = params.clone();
        let g = grads_of(&params, |_, v| v[0].mul(v[0]).unwrap().sum().unwrap());
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            &params,
        );
        opt.step(&mut params, &g).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        // Zero gradient: only the decay term acts, θ' = θ − η·λ·θ.
        let mut params = vec![Tensor::scalar(2.0)];
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.1,
                weight_decay: 0.5,
                ..Default::default()
            },
            &params,
        );
        opt.step(&mut params, &Gradients::default()).unwrap();
        assert_eq!(params[0].item(), 2.0 - 0.1 * 0.5 * 2.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::scalar(1.0)];
        let g = grads_of(&[Tensor::zeros(&[1, 2])], |_, v| v[0].sum().unwrap());
        let mut opt = AdamW::new(AdamWConfig::default(), &params);
        assert!(opt.step(&mut params, &g).is_err());
    }
}
