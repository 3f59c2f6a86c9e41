//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-2, beta1: 0.9, beta2: 0.99, eps: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    lr_scale: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self { config, m: zeros.clone(), v: zeros, lr_scale: vec![1.0; store.len()], step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Multiplies the learning rate of one tensor.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.lr_scale[id.0] = scale;
    }
}

/// One Adam step. Gradients containing NaN or infinity are rejected and
/// leave both the parameters and the state untouched.
pub fn adam_update(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidInput("adam: state does not match parameter set".into()));
    }
    if !grads.all_finite() {
        return Err(Error::Numerical(format!("adam: non-finite gradient at step {}", state.step + 1)));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for id in store.ids().collect::<Vec<_>>() {
        let g = grads.get(id);
        let rate = lr * state.lr_scale[id.0];
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = store.get_mut(id);
        if p.len() != g.len() {
            return Err(Error::InvalidInput("adam: gradient length mismatch".into()));
        }
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= rate * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::default();
        let id = s.add("p", vec![1], vec![v]);
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = one(1.5);
        let mut st = AdamState::new(&s, AdamConfig::default());
        let g = Gradients::zeros_like(&s);
        adam_update(&mut s, &g, &mut st).unwrap();
        assert_eq!(s.get(id), &[1.5]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let (mut s, id) = one(0.0);
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut st = AdamState::new(&s, cfg);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id)[0] = 3.0;
        adam_update(&mut s, &g, &mut st).unwrap();
        let expected = -0.1 * 3.0 / (3.0 + 1e-8);
        assert!((s.get(id)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_recurrence() {
        let (mut s, id) = one(1.0);
        let cfg = AdamConfig { lr: 0.05, beta1: 0.8, beta2: 0.9, eps: 1e-6 };
        let mut st = AdamState::new(&s, cfg);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id)[0] = -0.5;
        adam_update(&mut s, &g, &mut st).unwrap();
        adam_update(&mut s, &g, &mut st).unwrap();

        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.8 * m + 0.2 * -0.5;
            v = 0.9 * v + 0.1 * 0.25;
            let mh = m / (1.0 - 0.8f64.powi(t));
            let vh = v / (1.0 - 0.9f64.powi(t));
            p -= 0.05 * mh / (vh.sqrt() + 1e-6);
        }
        assert_eq!(s.get(id)[0], p);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn nan_gradient_rejected() {
        let (mut s, id) = one(2.0);
        let mut st = AdamState::new(&s, AdamConfig::default());
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id)[0] = f64::NAN;
        assert!(matches!(adam_update(&mut s, &g, &mut st), Err(Error::Numerical(_))));
        assert_eq!(s.get(id), &[2.0]);
        assert_eq!(st.step(), 0);
    }
}
