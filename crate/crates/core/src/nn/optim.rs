use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. One moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Gradients are checked for NaN/inf before anything
    /// is modified; the offending parameter is named in the error.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Config(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (name, g) in params.names().iter().zip(grads) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mj, gj) in m.iter_mut().zip(g) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
            }
            let v = self.v[i].data_mut();
            for (vj, gj) in v.iter_mut().zip(g) {
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for ((w, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
                *w -= lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `base_lr` over the first `warmup_ratio` of training,
/// then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_ratio: f64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warmup = (warmup_ratio * total_steps as f64).round() as usize;
    if step < warmup {
        base_lr * step as f64 / warmup as f64
    } else {
        let remaining = (total_steps - warmup).max(1);
        base_lr * (total_steps - step) as f64 / remaining as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ModelParams {
        ModelParams::new(vec![("w".into(), Tensor::row(&[v]))]).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one(1.5);
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &[Tensor::row(&[0.0])], 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        for g in [3.0, -0.002] {
            let mut p = one(0.0);
            let mut opt = Adam::new(&p, AdamConfig::default());
            opt.step(&mut p, &[Tensor::row(&[g])], 0.01).unwrap();
            let delta = p.get("w").unwrap().item();
            assert!((delta + 0.01 * g.signum()).abs() < 1e-7, "{delta}");
        }
    }

    #[test]
    fn constant_gradient_approaches_unit_steps() {
        let mut p = one(0.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        let mut prev = 0.0;
        for _ in 0..5000 {
            opt.step(&mut p, &[Tensor::row(&[0.7])], 1e-3).unwrap();
            let w = p.get("w").unwrap().item();
            let step = prev - w;
            assert!((step - 1e-3).abs() < 1e-8);
            prev = w;
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = one(0.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        let err = opt.step(&mut p, &[Tensor::row(&[f64::NAN])], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(p.get("w").unwrap().item(), 0.0);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(0, 4500, 0.1, 5e-5), 0.0);
        assert!((lr_schedule(450, 4500, 0.1, 5e-5) - 5e-5).abs() < 1e-18);
        assert!((lr_schedule(225, 4500, 0.1, 5e-5) - 2.5e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(4500, 4500, 0.1, 5e-5), 0.0);
        assert!((lr_schedule(2475, 4500, 0.1, 5e-5) - 2.5e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(0, 100, 0.0, 1.0), 1.0);
    }
}
