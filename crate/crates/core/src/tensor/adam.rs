use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub lr: f64,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig, lr: f64) -> Self {
        AdamState {
            config,
            lr,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over every parameter named in `grads`.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves both the parameters and the state untouched.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, state: &mut AdamState) -> Result<()> {
    if !(state.lr > 0.0) {
        return Err(TensorError::Invalid {
            op: "adam_step",
            msg: format!("learning rate must be positive, got {}", state.lr),
        });
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| TensorError::MissingGradient(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(TensorError::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(TensorError::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (name, g) in grads {
        let mom = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Tensor::zeros(g.shape().to_vec()),
            v: Tensor::zeros(g.shape().to_vec()),
        });
        let p = params.get_mut(name).expect("validated above");
        let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
        for (k, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
            v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            *pv -= state.lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::scalar(v));
        s
    }

    fn grads(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("theta".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = scalar_store(0.7);
        let mut st = AdamState::new(AdamConfig::default(), 0.01);
        adam_step(&mut p, &grads(0.0), &mut st).unwrap();
        assert_eq!(p.get("theta").unwrap().data()[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(AdamConfig::default(), 0.001);
        adam_step(&mut p, &grads(1.0), &mut st).unwrap();
        // m_hat = 1, v_hat = 1 => delta = -lr / (1 + eps)
        let delta = p.get("theta").unwrap().data()[0];
        assert!((delta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn descends_a_parabola() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(AdamConfig::default(), 0.01);
        let mut trace = vec![1.0];
        for _ in 0..100 {
            let theta = p.get("theta").unwrap().data()[0];
            adam_step(&mut p, &grads(2.0 * theta), &mut st).unwrap();
            trace.push(p.get("theta").unwrap().data()[0].abs());
        }
        assert!(*trace.last().unwrap() < 0.5);
        // trend: every 10-step window ends lower than it started
        for w in trace.chunks(10) {
            assert!(w.last().unwrap() <= w.first().unwrap());
        }
        assert_eq!(st.step, 100);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = scalar_store(0.3);
        let mut st = AdamState::new(AdamConfig::default(), 0.01);
        let err = adam_step(&mut p, &grads(f64::NAN), &mut st).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteGradient(_)));
        assert_eq!(p.get("theta").unwrap().data()[0], 0.3);
        assert_eq!(st.step, 0);
        assert!(st.moments.is_empty());
    }
}
