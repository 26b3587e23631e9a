use super::tensor::Tensor;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using each parameter's gradient buffer.
    /// Parameters without a gradient buffer count as zero-gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Shape {
                op: "adamw",
                left: vec![self.first.len()],
                right: vec![params.len()],
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if m.len() != p.len() {
                return Err(Error::Shape {
                    op: "adamw",
                    left: vec![m.len()],
                    right: p.shape().to_vec(),
                });
            }
            let (values, grad) = p.value_and_grad_mut();
            for i in 0..values.len() {
                let g = grad[i];
                values[i] -= self.lr * self.weight_decay * values[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.check_finite("adamw")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        w.grad_mut();
        let before = w.clone();
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut [&mut w]).unwrap();
        assert_eq!(w.data(), before.data());
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut w = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        w.grad_mut()[0] = 2.0;
        let mut opt = AdamW::new(0.01, 0.01);
        opt.step(&mut [&mut w]).unwrap();
        assert!(w.data()[0].abs() < 1.0);
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(w) = Σ (w_i - c_i)^2
        let target = [3.0, -1.0, 0.25, 2.0];
        let mut w = Tensor::zeros(1, 4);
        let mut opt = AdamW::new(0.05, 0.0);
        let loss = |w: &Tensor| -> f64 {
            w.data().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum()
        };
        let mut last = loss(&w);
        for _ in 0..50 {
            w.zero_grad();
            let g: Vec<f64> = w.data().iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            w.accumulate_grad(&g).unwrap();
            opt.step(&mut [&mut w]).unwrap();
            let now = loss(&w);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut w = Tensor::from_vec(1, 3, vec![0.3, -0.7, 1.1]).unwrap();
            let mut opt = AdamW::new(0.02, 0.01);
            for k in 0..20 {
                w.zero_grad();
                let g: Vec<f64> = w.data().iter().map(|v| v.sin() * (k as f64 + 1.0)).collect();
                w.accumulate_grad(&g).unwrap();
                opt.step(&mut [&mut w]).unwrap();
            }
            w.into_data()
        };
        let a: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
