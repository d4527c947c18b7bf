use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{Error, Result};

/// Adam optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;

    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_params(params: &ParamVector, learning_rate: f64) -> Self {
        Self::new(params.len(), learning_rate)
    }

    /// Applies one bias-corrected Adam update in place.
    ///
    /// Nothing is modified when the gradient has the wrong length or contains
    /// a non-finite entry.
    pub fn apply(&mut self, params: &mut ParamVector, grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::apply`]: returns the updated parameters and
/// state, leaving the inputs untouched.
pub fn adam_step(state: &AdamState, params: &ParamVector, grads: &[f64]) -> Result<(ParamVector, AdamState)> {
    let mut next_state = state.clone();
    let mut next_params = params.clone();
    next_state.apply(&mut next_params, grads)?;
    Ok((next_params, next_state))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::nn::{NetworkSpec, OutputActivation};

    fn params(values: Vec<f64>) -> ParamVector {
        // 1-1-1 net has four parameters
        let spec = Arc::new(NetworkSpec::new(1, vec![1], 1, OutputActivation::Linear).unwrap());
        ParamVector::new(spec, values).unwrap()
    }

    #[test]
    fn zero_gradient_is_identity() {
        let p = params(vec![0.5, -1.0, 2.0, 0.0]);
        let state = AdamState::for_params(&p, 3e-4);
        let (next, next_state) = adam_step(&state, &p, &[0.0; 4]).unwrap();
        assert_eq!(next, p);
        assert_eq!(next_state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let p = params(vec![0.0; 4]);
        let state = AdamState::for_params(&p, 1e-3);
        let grads = [2.0, -0.5, 1e-3, -40.0];
        let (next, _) = adam_step(&state, &p, &grads).unwrap();
        for (x, g) in next.values().iter().zip(grads) {
            let expected = -1e-3 * g.signum();
            assert!((x - expected).abs() < 1e-3 * 1e-8 / g.abs() + 1e-15, "{x} vs {expected}");
        }
    }

    /// Scalar hand-iterated Adam on f(x) = (x - 3)^2 starting at x = 0.
    #[test]
    fn three_steps_on_quadratic_match_reference_trace() {
        let lr = 0.1;
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let (mut x, mut m, mut v) = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut trace = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            trace.push(x);
        }

        let mut p = params(vec![0.0; 4]);
        let mut state = AdamState::for_params(&p, lr);
        for want in trace {
            let x = p.values()[0];
            let g = [2.0 * (x - 3.0), 0.0, 0.0, 0.0];
            state.apply(&mut p, &g).unwrap();
            assert!((p.values()[0] - want).abs() < 1e-15);
        }
        assert_eq!(state.step_count, 3);
        assert!(state.second_moment.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = params(vec![1.0; 4]);
        let mut state = AdamState::for_params(&p, 1e-3);
        let before = (p.clone(), state.clone());
        let err = state.apply(&mut p, &[0.0, f64::INFINITY, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!((p, state), before);
    }
}
