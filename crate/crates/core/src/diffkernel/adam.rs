use serde::{Deserialize, Serialize};

use super::{Array, KernelError, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `θ ← θ − lr·wd·θ` before the Adam update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept in `f64` regardless
/// of the parameter type.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient rejects the whole step and
    /// leaves parameters and moments untouched.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [&mut Array<T>],
        grads: &[&Array<T>],
    ) -> Result<(), KernelError> {
        if params.len() != grads.len() {
            return Err(KernelError::Invalid(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.all_finite() {
                return Err(KernelError::NonFiniteGradient(i));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(KernelError::Invalid("adam: parameter layout changed".into()));
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (theta, &grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let grad = Scalar::to_f64(grad);
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let mut t = Scalar::to_f64(*theta);
                t -= lr * weight_decay * t;
                t -= lr * m_hat / (v_hat.sqrt() + eps);
                *theta = T::from_f64(t);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Array<f64> {
        Array::scalar(x)
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = Array::from_fn(2, 2, |r, c| (r + c) as f64);
        let before = p.clone();
        adam.step(&mut [&mut p], &[&Array::zeros(2, 2)]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_on_quadratic() {
        // f(θ) = θ²/2, ∇ = θ = 1; bias-corrected m̂ = v̂ = 1, step = lr/(1+ε).
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        let mut p = one(1.0);
        let g = one(1.0);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_only_path() {
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            weight_decay: 0.1,
            ..Default::default()
        });
        let mut p = Array::column(vec![2.0f64, -4.0]);
        adam.step(&mut [&mut p], &[&Array::zeros(2, 1)]).unwrap();
        assert!((p.data()[0] - 1.98).abs() < 1e-12);
        assert!((p.data()[1] + 3.96).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = one(1.0);
        let err = adam.step(&mut [&mut p], &[&one(f64::NAN)]).unwrap_err();
        assert_eq!(err, KernelError::NonFiniteGradient(0));
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..Default::default()
        });
        let mut p = Array::column(vec![3.0f32, -2.0]);
        for _ in 0..500 {
            let g = p.clone();
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!(p.data().iter().all(|v| v.abs() < 0.05), "{p:?}");
    }
}
