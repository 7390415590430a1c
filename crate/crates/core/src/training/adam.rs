use crate::error::{Error, Result};
use crate::mps::{Gradients, MpsModel};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for every MPS parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &MpsModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update. When `clip_norm` is given, gradients
    /// whose global L2 norm exceeds it are rescaled to that norm first.
    pub fn step(&mut self, model: &mut MpsModel, grads: &Gradients, lr: f64, clip_norm: Option<f64>) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let norm = grads.l2_norm();
        let scale = match clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (((params, g), m), v) in model.params_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..params.len() {
                let gk = g[k] * scale;
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                params[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        if !model.is_finite() {
            return Err(Error::Numeric("non-finite parameter after update".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mps::InitScheme;

    fn model() -> MpsModel {
        MpsModel::new(3, 2, 2, 2, &InitScheme::uniform(), 1).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut state = AdamState::new(&m);
        let mut g = Gradients::zeros_like(&m);
        g.0.iter_mut().flatten().for_each(|v| *v = 1.0);
        state.step(&mut m, &g, 1e-3, None).unwrap();
        let after_first = m.clone();
        let m1 = state.first_moments()[0][0];
        let zero = Gradients::zeros_like(&m);
        state.step(&mut m, &zero, 1e-3, None).unwrap();
        assert_eq!(state.first_moments()[0][0], BETA1 * m1);
        // zero gradient still moves along the remembered momentum
        assert_ne!(m, after_first);

        let mut fresh = before.clone();
        let mut s = AdamState::new(&fresh);
        let zero = Gradients::zeros_like(&fresh);
        s.step(&mut fresh, &zero, 1e-3, None).unwrap();
        assert_eq!(fresh, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = model();
        let before = m.clone();
        let mut state = AdamState::new(&m);
        let mut g = Gradients::zeros_like(&m);
        g.0.iter_mut().flatten().for_each(|v| *v = 1.0);
        let lr = 5e-4;
        state.step(&mut m, &g, lr, None).unwrap();
        let expected = lr * 1.0 / (1.0 + EPSILON);
        for (a, b) in before.params().flatten().zip(m.params().flatten()) {
            assert!((a - b - expected).abs() < 1e-15, "{}", a - b);
        }
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn clipping_limits_norm() {
        let m = model();
        let mut g = Gradients::zeros_like(&m);
        g.0.iter_mut().flatten().for_each(|v| *v = 10.0);
        let mut a = m.clone();
        let mut b = m.clone();
        AdamState::new(&a).step(&mut a, &g, 1e-3, Some(1.0)).unwrap();
        AdamState::new(&b).step(&mut b, &g, 1e-3, None).unwrap();
        // first Adam step is (nearly) scale free, so both land almost together
        for (x, y) in a.params().flatten().zip(b.params().flatten()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut m = model();
        let mut g = Gradients::zeros_like(&m);
        g.0[0][0] = f64::NAN;
        let err = AdamState::new(&m).step(&mut m, &g, 1e-3, Some(1.0));
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
