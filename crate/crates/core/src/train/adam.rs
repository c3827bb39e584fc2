use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    names: &[String],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(
            "adam",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).map_or("?", String::as_str);
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// [`adam_step`] over every tensor of a model.
pub fn adam_step_model(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let names = params.names();
    let grads = grads.entries();
    let mut params = params.entries_mut();
    adam_step(&mut params, &grads, &names, state, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x0: f64, grad: impl Fn(f64) -> f64, steps: usize) -> (Vec<f64>, AdamState) {
        let mut x = Tensor::scalar(x0);
        let mut state = AdamState::new([&x]);
        let mut trace = vec![x0];
        for _ in 0..steps {
            let g = Tensor::scalar(grad(x.data()[0]));
            adam_step(&mut [&mut x], &[&g], &["x".into()], &mut state, &AdamConfig::default()).unwrap();
            trace.push(x.data()[0]);
        }
        (trace, state)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (trace, state) = run(1.5, |_| 0.0, 3);
        assert!(trace.iter().all(|&x| x == 1.5));
        assert_eq!(state.step, 3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (trace, _) = run(0.0, |_| 1.0, 1);
        assert!((trace[1] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let (trace, _) = run(0.0, |_| 2.5, 2000);
        let last = trace[2000] - trace[1999];
        assert!((last + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut x = Tensor::vector(vec![1.0, 2.0]);
        let mut state = AdamState::new([&x]);
        let g = Tensor::vector(vec![0.0, f64::NAN]);
        let err = adam_step(&mut [&mut x], &[&g], &["gru.0.fwd.w".into()], &mut state, &AdamConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("gru.0.fwd.w"), "{err}");
        assert_eq!(x.data(), &[1.0, 2.0]);
        assert_eq!(state.step, 0);
    }
}
