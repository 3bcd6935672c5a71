use super::{Result, TrainError};
use crate::model::Param;
use crate::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters and state are left untouched
/// if any gradient is non-finite.
pub fn adam_step<T: Scalar>(params: &mut [Param<T>], grads: &[Vec<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::Shape(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.len() != p.data.len() {
            return Err(TrainError::Shape(format!("gradient for {} has {} values, expected {}", p.name, g.len(), p.data.len())));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::Numeric(format!("non-finite gradient at {}[{i}]", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(lr), T::lit(ADAM_EPS));
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (x, &g)) in p.data.iter_mut().zip(&grads[i]).enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Vec<Param<f64>> {
        vec![Param {
            name: "w".into(),
            shape: vec![1],
            data: vec![x],
        }]
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let mut p = one(0.7);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut s, 1e-3).unwrap();
        assert_eq!(p[0].data[0], 0.7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = one(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![2.0]], &mut s, 1e-3).unwrap();
        let (m, v) = (s.m[0][0], s.v[0][0]);
        adam_step(&mut p, &[vec![0.0]], &mut s, 1e-3).unwrap();
        assert_eq!(s.m[0][0], 0.9 * m);
        assert_eq!(s.v[0][0], 0.999 * v);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
        let mut p = one(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.5]], &mut s, 0.01).unwrap();
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_trace() {
        let mut p = one(0.3);
        let mut s = AdamState::new(&p);
        let (mut x, mut m, mut v) = (0.3_f64, 0.0_f64, 0.0_f64);
        for t in 1..=2 {
            let g = 0.25;
            adam_step(&mut p, &[vec![g]], &mut s, 0.1).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9_f64.powi(t));
            let vh = v / (1.0 - 0.999_f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p[0].data[0] - x).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_touching_state() {
        let mut p = one(1.0);
        let mut s = AdamState::new(&p);
        let before = (p.clone(), s.clone());
        assert!(matches!(adam_step(&mut p, &[vec![f64::NAN]], &mut s, 0.1), Err(TrainError::Numeric(_))));
        assert_eq!((p, s), before);
    }
}
