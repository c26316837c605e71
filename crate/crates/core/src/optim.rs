//! Adam with decoupled weight decay, global-norm clipping and a linear
//! warmup / exponential decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Parameter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub peak_lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub clip_norm: f32,
    pub warmup_steps: u64,
    /// Step at which the decayed rate reaches `peak_lr · final_lr_ratio`.
    pub decay_steps: u64,
    pub final_lr_ratio: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-5,
            weight_decay: 0.1,
            clip_norm: 1.0,
            warmup_steps: 100,
            decay_steps: 2000,
            final_lr_ratio: 0.01,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate used for the update with 1-based index `step`.
    pub fn lr_at(&self, step: u64) -> f32 {
        let peak = self.peak_lr as f64;
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return (peak * step as f64 / self.warmup_steps as f64) as f32;
        }
        let span = self.decay_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        (peak * (self.final_lr_ratio as f64).powf(progress)) as f32
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm > 0.0
            && self.final_lr_ratio > 0.0
            && self.final_lr_ratio <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub name: String,
    pub shape: Vec<usize>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub lr: f32,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: OptimizerConfig,
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl AdamW {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    fn ensure_moments(&mut self, params: &[&mut Parameter]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    shape: p.shape().to_vec(),
                    m: vec![0.0; p.tensor.numel()],
                    v: vec![0.0; p.tensor.numel()],
                })
                .collect();
        }
        if self.moments.len() != params.len()
            || self
                .moments
                .iter()
                .zip(params)
                .any(|(m, p)| m.name != p.name || m.shape != p.shape())
        {
            return Err(Error::Config(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        Ok(())
    }

    /// Applies one update to every non-frozen parameter and clears all
    /// gradients. Frozen parameters and rows outside `update_rows` are left
    /// bitwise untouched.
    pub fn step(&mut self, mut params: Vec<&mut Parameter>) -> Result<StepReport> {
        self.ensure_moments(&params)?;
        for p in params.iter_mut() {
            p.mask_grad_rows();
        }
        let mut sq = 0.0f64;
        for p in params.iter().filter(|p| !p.frozen) {
            let g = &p.grad()[p.updatable_span()];
            sq += g.iter().map(|&v| v as f64 * v as f64).sum::<f64>();
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Divergence {
                step: self.step + 1,
                reason: "non-finite gradient norm".into(),
            });
        }
        let clip = if grad_norm > self.config.clip_norm as f64 {
            (self.config.clip_norm as f64 / grad_norm) as f32
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let lr = c.lr_at(self.step);
        let bc1 = 1.0 - (c.beta1 as f64).powi(t);
        let bc2 = 1.0 - (c.beta2 as f64).powi(t);
        for (p, mom) in params.iter_mut().zip(self.moments.iter_mut()) {
            if p.frozen {
                p.zero_grad();
                continue;
            }
            let span = p.updatable_span();
            let decay = if p.tensor.rank() >= 2 {
                c.weight_decay
            } else {
                0.0
            };
            let grad: Vec<f32> = p.grad()[span.clone()].to_vec();
            let data = &mut p.tensor.data_mut()[span.clone()];
            let (m, v) = (&mut mom.m[span.clone()], &mut mom.v[span]);
            for i in 0..grad.len() {
                let g = grad[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                let update = mhat / (vhat.sqrt() + c.eps as f64);
                data[i] -= lr * (update as f32 + decay * data[i]);
            }
            p.zero_grad();
        }
        Ok(StepReport { lr, grad_norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_warms_up_then_decays() {
        let c = OptimizerConfig {
            peak_lr: 1.0,
            warmup_steps: 10,
            decay_steps: 110,
            final_lr_ratio: 0.01,
            ..Default::default()
        };
        assert!((c.lr_at(1) - 0.1).abs() < 1e-7);
        assert!((c.lr_at(10) - 1.0).abs() < 1e-7);
        assert!((c.lr_at(60) - 0.1).abs() < 1e-6);
        assert!((c.lr_at(110) - 0.01).abs() < 1e-7);
        assert!(c.lr_at(500) < c.lr_at(110));
    }

    #[test]
    fn frozen_and_masked_rows_stay_put() {
        let mut a = Parameter::new("a", Tensor::full(&[3, 2], 1.0));
        let mut b = Parameter::new("b", Tensor::full(&[2], 1.0));
        b.frozen = true;
        a.update_rows = Some(0..1);
        a.accumulate(&[1.0; 6]).unwrap();
        b.tensor.accumulate_grad(&[1.0; 2]).unwrap();
        let mut opt = AdamW::new(OptimizerConfig::default());
        for _ in 0..3 {
            a.accumulate(&[0.5; 6]).unwrap();
            opt.step(vec![&mut a, &mut b]).unwrap();
        }
        assert!(a.data()[..2].iter().all(|&v| v < 1.0));
        assert!(a.data()[2..].iter().all(|&v| v.to_bits() == 1f32.to_bits()));
        assert!(b.data().iter().all(|&v| v.to_bits() == 1f32.to_bits()));
    }

    #[test]
    fn clipping_bounds_first_update() {
        // With bias correction the first Adam step is ±lr regardless of
        // scale; clipping must not change its sign.
        let mut p = Parameter::new("p", Tensor::zeros(&[1, 2]));
        p.accumulate(&[100.0, -100.0]).unwrap();
        let mut opt = AdamW::new(OptimizerConfig {
            warmup_steps: 0,
            weight_decay: 0.0,
            ..Default::default()
        });
        let report = opt.step(vec![&mut p]).unwrap();
        assert!((report.grad_norm - 141.421_356).abs() < 1e-3);
        assert!(p.data()[0] < 0.0 && p.data()[1] > 0.0);
        assert!((p.data()[0] + report.lr).abs() < 1e-6);
    }
}
