//! SGD with classic (coupled) weight decay and a warmup-then-cosine
//! learning-rate schedule.

use crate::tensor::{lit, Element, Tensor};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { momentum: 0.9, weight_decay: 0.0004 }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, final_lr: f64, warmup_epochs: f64, total_epochs: f64) -> Self {
        assert!(base_lr > 0.0 && final_lr > 0.0, "learning rates must be positive");
        assert!(
            warmup_epochs < total_epochs,
            "warmup ({warmup_epochs}) must end before training does ({total_epochs})"
        );
        LrSchedule { base_lr, final_lr, warmup_epochs, total_epochs }
    }

    /// Learning rate at a real-valued epoch position: linear ramp from 0 to
    /// `base_lr` over the warmup, then cosine decay to `final_lr`.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        assert!(
            epoch >= 0.0 && epoch <= self.total_epochs,
            "epoch position {epoch} outside [0, {}]",
            self.total_epochs
        );
        if epoch < self.warmup_epochs {
            self.base_lr * epoch / self.warmup_epochs
        } else {
            let span = self.total_epochs - self.warmup_epochs;
            let progress = (epoch - self.warmup_epochs) / span;
            self.final_lr
                + 0.5 * (self.base_lr - self.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// One velocity buffer per parameter, matched by position.
pub struct Sgd<T: Element> {
    pub config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(config: SgdConfig, params: &[(String, Tensor<T>)]) -> Self {
        let velocity = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Sgd { config, velocity }
    }

    /// g ← grad + wd·p; v ← momentum·v + g; p ← p − lr·v. Parameters whose
    /// gradient is unset (no graph contribution this step) are skipped
    /// entirely, velocity included.
    pub fn step(&mut self, params: &[(String, Tensor<T>)], lr: f64) {
        assert_eq!(params.len(), self.velocity.len(), "parameter list changed size");
        let m = lit::<T>(self.config.momentum);
        let wd = lit::<T>(self.config.weight_decay);
        let lr = lit::<T>(lr);
        for ((name, p), v) in params.iter().zip(&mut self.velocity) {
            let grad = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            assert_eq!(grad.len(), v.len(), "gradient shape changed for {name}");
            let mut vals = p.to_vec();
            for i in 0..vals.len() {
                let g = grad[i] + wd * vals[i];
                v[i] = m * v[i] + g;
                vals[i] = vals[i] - lr * v[i];
            }
            p.set_values(&vals);
        }
    }

    pub fn zero_grad(&self, params: &[(String, Tensor<T>)]) {
        for (_, p) in params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(t: Tensor<f64>) -> Vec<(String, Tensor<f64>)> {
        vec![("p".to_string(), t)]
    }

    fn set_grad(p: &Tensor<f64>, g: &[f64]) {
        // Simplest way to push a known gradient through the public API:
        // backward over a weighted sum.
        p.zero_grad();
        let w = Tensor::new(&[g.len()], g.to_vec());
        p.reshape(&[p.len()]).mul(&w).sum_all().backward();
    }

    #[test]
    fn plain_gradient_descent_without_momentum() {
        let p = Tensor::new_tracked(&[2], vec![1.0, -2.0]);
        let params = named(p.clone());
        let mut opt = Sgd::new(SgdConfig { momentum: 0.0, weight_decay: 0.0 }, &params);
        set_grad(&p, &[0.5, -1.0]);
        opt.step(&params, 0.1);
        let v = p.to_vec();
        assert!((v[0] - 0.95).abs() < 1e-12);
        assert!((v[1] - (-1.9)).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_zero_decay_is_a_fixed_point() {
        let p = Tensor::new_tracked(&[2], vec![3.0, 4.0]);
        let params = named(p.clone());
        let mut opt = Sgd::new(SgdConfig { momentum: 0.9, weight_decay: 0.0 }, &params);
        set_grad(&p, &[0.0, 0.0]);
        opt.step(&params, 0.1);
        assert_eq!(p.to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn momentum_recursion_on_constant_gradient() {
        // Constant grad 1, lr 1, momentum 0.9: deltas are −1 then −1.9.
        let p = Tensor::new_tracked(&[1], vec![10.0]);
        let params = named(p.clone());
        let mut opt = Sgd::new(SgdConfig { momentum: 0.9, weight_decay: 0.0 }, &params);
        set_grad(&p, &[1.0]);
        opt.step(&params, 1.0);
        assert!((p.to_vec()[0] - 9.0).abs() < 1e-12);
        set_grad(&p, &[1.0]);
        opt.step(&params, 1.0);
        assert!((p.to_vec()[0] - 7.1).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let p = Tensor::new_tracked(&[1], vec![2.0]);
        let params = named(p.clone());
        let mut opt = Sgd::new(SgdConfig { momentum: 0.0, weight_decay: 0.1 }, &params);
        set_grad(&p, &[0.0]);
        opt.step(&params, 0.5);
        // g = 0 + 0.1·2 = 0.2; p = 2 − 0.5·0.2 = 1.9
        assert!((p.to_vec()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn unset_gradient_skips_parameter_and_velocity() {
        let p = Tensor::new_tracked(&[1], vec![1.0]);
        let params = named(p.clone());
        let mut opt = Sgd::new(SgdConfig::default(), &params);
        p.zero_grad();
        opt.step(&params, 0.1);
        assert_eq!(p.to_vec(), vec![1.0]);
    }

    #[test]
    fn schedule_endpoints_and_junction() {
        let s = LrSchedule::new(0.1, 0.0001, 5.0, 30.0);
        assert_eq!(s.lr_at(0.0), 0.0);
        assert!((s.lr_at(5.0) - 0.1).abs() < 1e-15);
        assert!((s.lr_at(30.0) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_continuous_at_warmup_junction() {
        let s = LrSchedule::new(0.1, 0.0001, 5.0, 30.0);
        let left = s.lr_at(5.0 - 1e-9);
        let right = s.lr_at(5.0 + 1e-9);
        assert!((left - right).abs() < 1e-8, "{left} vs {right}");
    }

    #[test]
    fn schedule_monotone_decay_after_warmup() {
        let s = LrSchedule::new(0.1, 0.0001, 5.0, 30.0);
        let mut prev = s.lr_at(5.0);
        for k in 1..=100 {
            let e = 5.0 + 25.0 * k as f64 / 100.0;
            let lr = s.lr_at(e);
            assert!(lr <= prev + 1e-15, "lr increased at epoch {e}");
            prev = lr;
        }
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn schedule_rejects_out_of_range_epoch() {
        let s = LrSchedule::new(0.1, 0.0001, 5.0, 30.0);
        let _ = s.lr_at(31.0);
    }
}
