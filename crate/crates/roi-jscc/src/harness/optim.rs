//! Adam with bias correction and optional global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::model::ParamSet;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters; `with_lr` applies the usual `(0.9, 0.999, 1e-8)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second-moment accumulators, aligned with the parameter set's
/// registration order (the checkpoint payload layout).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

/// The optimizer itself: configuration plus moment state.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    state: AdamState,
}

impl Adam {
    /// Fresh optimizer with zeroed moments shaped like `ps`.
    pub fn new(ps: &ParamSet, cfg: AdamConfig) -> Self {
        let zeros: Vec<ArrayD<f64>> = ps
            .ids()
            .map(|id| ArrayD::zeros(ps.value(id).raw_dim()))
            .collect();
        Adam { cfg, state: AdamState { t: 0, m: zeros.clone(), v: zeros } }
    }

    /// Restore from checkpointed state; shapes must match `ps` exactly.
    pub fn from_state(ps: &ParamSet, cfg: AdamConfig, state: AdamState) -> Result<Self> {
        if state.m.len() != ps.len() || state.v.len() != ps.len() {
            return Err(Error::protocol(format!(
                "optimizer state holds {} parameters, model has {}",
                state.m.len(),
                ps.len()
            )));
        }
        for (i, id) in ps.ids().enumerate() {
            let shape = ps.value(id).shape();
            if state.m[i].shape() != shape || state.v[i].shape() != shape {
                return Err(Error::protocol(format!(
                    "optimizer moment shape mismatch for {:?}",
                    ps.name(id)
                )));
            }
        }
        Ok(Adam { cfg, state })
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Completed update count `t`.
    pub fn steps(&self) -> u64 {
        self.state.t
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn into_state(self) -> AdamState {
        self.state
    }

    /// One update over all parameters. `grads` must align with `ps.ids()`
    /// order; missing gradients are passed as zero arrays by the caller.
    pub fn step(&mut self, ps: &mut ParamSet, grads: &[ArrayD<f64>]) {
        assert_eq!(grads.len(), ps.len(), "gradient list must align with parameters");
        self.state.t += 1;
        let t = self.state.t as i32;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = ps.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            let p = ps.value_mut(id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

/// Euclidean norm over the concatenation of all gradient arrays.
pub fn global_grad_norm(grads: &[ArrayD<f64>]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [ArrayD<f64>], max_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Init, ParamSet};
    use ndarray::{ArrayD, IxDyn};

    fn scalar_ps(value: f64) -> ParamSet {
        let mut ps = ParamSet::new(0);
        ps.register("p", &[1], Init::Zeros);
        ps.value_mut(ps.lookup("p").unwrap())[0] = value;
        ps
    }

    fn arr(vals: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals.to_vec()).unwrap()
    }

    /// Independent scalar Adam oracle, written against the published
    /// update equations rather than the implementation.
    fn adam_oracle(p0: f64, grads: &[f64], cfg: AdamConfig) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p
    }

    // [DERIVED] First step, worked by hand: m=0.05, v=2.5e-4, m_hat=0.5,
    // v_hat=0.25, so p moves by lr*0.5/(0.5+eps) — one lr, up to eps.
    #[test]
    fn first_step_matches_hand_arithmetic() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut ps = scalar_ps(1.0);
        let mut opt = Adam::new(&ps, cfg);
        opt.step(&mut ps, &[arr(&[0.5])]);
        let expected = 1.0 - 0.1 * 0.5 / (0.25f64.sqrt() + 1e-8);
        let got = ps.value(ps.lookup("p").unwrap())[0];
        assert!((got - expected).abs() < 1e-15, "got {got}, expected {expected}");
        assert_eq!(opt.steps(), 1);
    }

    // [DERIVED] Multi-step trajectory matches the independent oracle to
    // near machine precision, including sign changes.
    #[test]
    fn trajectory_matches_oracle() {
        let cfg = AdamConfig::with_lr(0.01);
        let grads = [0.5, -1.25, 0.0, 3.0, 0.25];
        let mut ps = scalar_ps(2.0);
        let mut opt = Adam::new(&ps, cfg);
        for &g in &grads {
            opt.step(&mut ps, &[arr(&[g])]);
        }
        let got = ps.value(ps.lookup("p").unwrap())[0];
        let expected = adam_oracle(2.0, &grads, cfg);
        assert!((got - expected).abs() < 1e-14, "got {got}, expected {expected}");
    }

    // [DERIVED] Clipping: a (3, 4) gradient has norm 5; clipping at 1
    // multiplies both entries by the 1/5 scale factor, and an in-budget
    // gradient is returned bit-identically.
    #[test]
    fn global_norm_clip() {
        let mut grads = vec![arr(&[3.0]), arr(&[4.0])];
        assert_eq!(global_grad_norm(&grads), 5.0);
        let pre = clip_global_norm(&mut grads, 1.0);
        assert_eq!(pre, 5.0);
        assert_eq!(grads[0][0], 3.0 * (1.0 / 5.0));
        assert_eq!(grads[1][0], 4.0 * (1.0 / 5.0));
        assert!((global_grad_norm(&grads) - 1.0).abs() < 1e-15);
        let mut small = vec![arr(&[0.3]), arr(&[0.4])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0][0], 0.3);
        assert_eq!(small[1][0], 0.4);
    }

    // [DERIVED] State round-trip: save after two steps, restore into a
    // fresh optimizer, and the continued trajectory is bit-identical to
    // the uninterrupted one.
    #[test]
    fn state_round_trip_is_bit_exact() {
        let cfg = AdamConfig::with_lr(0.05);
        let grads = [1.0, -0.5, 0.75, 0.1];
        let mut ps_a = scalar_ps(1.0);
        let mut opt_a = Adam::new(&ps_a, cfg);
        for &g in &grads {
            opt_a.step(&mut ps_a, &[arr(&[g])]);
        }
        let mut ps_b = scalar_ps(1.0);
        let mut opt_b = Adam::new(&ps_b, cfg);
        for &g in &grads[..2] {
            opt_b.step(&mut ps_b, &[arr(&[g])]);
        }
        let state = opt_b.state().clone();
        let mut opt_c = Adam::from_state(&ps_b, cfg, state).unwrap();
        for &g in &grads[2..] {
            opt_c.step(&mut ps_b, &[arr(&[g])]);
        }
        assert_eq!(
            ps_a.value(ps_a.lookup("p").unwrap())[0].to_bits(),
            ps_b.value(ps_b.lookup("p").unwrap())[0].to_bits()
        );
        assert_eq!(opt_c.steps(), 4);
    }

    // [TRIVIAL] Restoring mismatched state is a protocol error.
    #[test]
    fn state_shape_mismatch_rejected() {
        let cfg = AdamConfig::with_lr(0.1);
        let ps = scalar_ps(0.0);
        let bad_len = AdamState { t: 1, m: vec![], v: vec![] };
        assert!(matches!(Adam::from_state(&ps, cfg, bad_len), Err(Error::Protocol(_))));
        let bad_shape = AdamState { t: 1, m: vec![arr(&[0.0, 0.0])], v: vec![arr(&[0.0, 0.0])] };
        assert!(matches!(Adam::from_state(&ps, cfg, bad_shape), Err(Error::Protocol(_))));
    }
}
