//! Adam with bias correction over named parameter sets.

use std::collections::BTreeMap;

use super::{Result, Tensor, TensorError};

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first_moment.get(name).map(|v| v.as_slice())
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second_moment.get(name).map(|v| v.as_slice())
    }
}

/// One Adam update over `names` (in the given order). Every named parameter
/// must carry a gradient; gradients are consumed. Parameters are replaced
/// with fresh leaves holding the updated values.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    names: &[String],
    state: &mut AdamState,
) -> Result<()> {
    // validate before mutating anything
    for name in names {
        let t = params
            .get(name)
            .ok_or_else(|| TensorError::Invalid(format!("unknown parameter `{name}`")))?;
        if t.grad().is_none() {
            return Err(TensorError::MissingGrad(name.clone()));
        }
    }
    state.step_count += 1;
    let t = state.step_count;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    for name in names {
        let tensor = params.get(name).unwrap();
        let grad = tensor.take_grad().unwrap();
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        if m.len() != tensor.numel() {
            return Err(TensorError::ShapeMismatch(format!(
                "moment buffer for `{name}` has {} entries, parameter has {}",
                m.len(),
                tensor.numel()
            )));
        }
        let mut new_values = tensor.values().to_vec();
        for i in 0..grad.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            new_values[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        let shape = tensor.shape().to_vec();
        params.insert(name.clone(), Tensor::param(&shape, new_values)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::param(&[], vec![v]).unwrap());
        m
    }

    #[test]
    fn zero_gradient_is_a_null_update() {
        let mut params = single_param(1.5);
        let mut state = AdamState::new(0.01);
        let names = vec!["w".to_string()];
        // run a graph with zero gradient: loss = 0 * w
        let loss = params["w"].scale(0.0);
        loss.backward().unwrap();
        adam_step(&mut params, &names, &mut state).unwrap();
        assert_eq!(params["w"].values(), &[1.5]);
        assert_eq!(state.step_count, 1);
        assert!(state.first_moment("w").unwrap().iter().all(|&v| v == 0.0));
        assert!(state.second_moment("w").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // grad 1.0 at step 1: bias-corrected update is lr / (1 + eps)
        let mut params = single_param(0.0);
        let mut state = AdamState::new(0.01);
        let loss = params["w"].scale(1.0);
        loss.backward().unwrap();
        adam_step(&mut params, &["w".to_string()], &mut state).unwrap();
        let got = params["w"].item();
        assert!((got + 0.01).abs() < 1e-9, "expected ~-0.01, got {got}");
    }

    #[test]
    fn matches_reference_recurrence_over_steps() {
        // independent implementation of the Adam recurrence
        let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.05, 0.9, 0.999, 1e-8);
        let grads = [0.7, -1.3, 0.2, 0.2, 2.0];
        let mut theta_ref = 0.4;
        let (mut m, mut v) = (0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut params = single_param(0.4);
        let mut state = AdamState::new(lr);
        for g in grads {
            let loss = params["w"].scale(g);
            loss.backward().unwrap();
            adam_step(&mut params, &["w".to_string()], &mut state).unwrap();
        }
        assert!((params["w"].item() - theta_ref).abs() < 1e-12);
        assert_eq!(state.step_count, grads.len() as u64);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut params = single_param(1.0);
        let mut state = AdamState::new(0.01);
        let err = adam_step(&mut params, &["w".to_string()], &mut state).unwrap_err();
        assert!(matches!(err, TensorError::MissingGrad(_)));
        // failed validation must not bump the step counter
        assert_eq!(state.step_count, 0);
    }
}
