use crate::error::{RedError, Result};

/// Bias-corrected Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_hyper(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Applies one update to `param` in place.
    pub fn step(&mut self, param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if param.len() != grad.len() || param.len() != self.first_moment.len() {
            return Err(RedError::shape(
                "adam_step",
                format!(
                    "param {}, grad {}, state {}",
                    param.len(),
                    grad.len(),
                    self.first_moment.len()
                ),
            ));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(RedError::NonFinite("adam gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in param
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let lr = 1e-3;
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -7.0, 1e-2];
        let before = p.clone();
        let mut s = AdamState::new(3);
        s.step(&mut p, &g, lr).unwrap();
        for ((a, b), gi) in p.iter().zip(&before).zip(&g) {
            let delta = a - b;
            assert!((delta.abs() - lr).abs() <= 1e-6 * lr, "delta {delta}");
            assert_eq!(delta.signum(), -gi.signum());
        }
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = vec![0.25; 4];
        let mut s = AdamState::new(4);
        s.step(&mut p, &[0.0; 4], 0.1).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![0.1, 0.2, 0.3];
            let mut s = AdamState::new(3);
            for i in 0..50 {
                let g: Vec<f64> = p.iter().map(|v| v * 2.0 - 0.01 * i as f64).collect();
                s.step(&mut p, &g, 0.01).unwrap();
            }
            (p, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        assert!(s.step(&mut p, &[1.0, f64::NAN], 0.1).is_err());
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn step_count_increments() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        for k in 1..=5 {
            s.step(&mut p, &[1.0, 1.0], 0.1).unwrap();
            assert_eq!(s.step_count, k);
        }
    }
}
