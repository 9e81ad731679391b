//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `params[i]` is replaced by a new leaf tensor; `grads[i]`
    /// must match its shape. Parameter order must be stable across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("adam_step", &[params.len()], &[grads.len()]));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if g.len() != p.numel() {
                return Err(Error::dim("adam_step", p.shape(), &[g.len()]));
            }
            let mut data = p.data().to_vec();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            **p = Tensor::param(p.shape(), data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut [&mut p], &[vec![0.0; 3]]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn single_step_from_zero_with_unit_gradient() {
        // Bias correction makes m_hat = 1, v_hat = 1, so the step is -lr.
        let mut p = Tensor::param(&[1], vec![0.0]).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut [&mut p], &[vec![1.0]]).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-9, "p = {}", p.data()[0]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr_sign() {
        let mut p = Tensor::param(&[1], vec![0.0]).unwrap();
        let mut adam = Adam::new(0.01);
        let mut prev = 0.0;
        for _ in 0..500 {
            prev = p.data()[0];
            adam.step(&mut [&mut p], &[vec![2.5]]).unwrap();
        }
        let step = prev - p.data()[0];
        assert!((step - 0.01).abs() < 1e-4, "step = {step}");
    }
}
