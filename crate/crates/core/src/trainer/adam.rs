use crate::diffcore::{GradientMap, ParamId, Tensor};
use crate::error::{config_err, shape_err, Result};
use crate::nn::ParamStore;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(config_err!("adam betas must lie in (0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if self.learning_rate <= 0.0 || self.eps <= 0.0 {
            return Err(config_err!("adam learning rate and eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    /// Number of updates applied to this block.
    pub t: u64,
}

/// Optimizer state; each block keeps its own step counter so blocks that
/// start training late (the auto-encoder after burn-in) get a fresh bias
/// correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    moments: Vec<Option<Moments>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.0).and_then(Option::as_ref)
    }
}

/// One bias-corrected Adam update of the blocks listed in `ids`.
///
/// `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(store: &mut ParamStore, grads: &GradientMap, state: &mut AdamState, cfg: &AdamConfig, ids: &[ParamId]) -> Result<()> {
    for &id in ids {
        let grad = grads
            .get(id)
            .ok_or_else(|| shape_err!("no gradient for parameter {}", store.entry(id).name))?;
        let param = store.get_mut(id);
        if grad.shape() != param.shape() {
            return Err(shape_err!("gradient shape {:?} differs from parameter shape {:?}", grad.shape(), param.shape()));
        }
        if state.moments.len() <= id.0 {
            state.moments.resize(id.0 + 1, None);
        }
        let mom = state.moments[id.0].get_or_insert_with(|| Moments {
            m: param.zeros_like(),
            v: param.zeros_like(),
            t: 0,
        });
        mom.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(mom.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(mom.t as i32);
        let m = mom.m.data_mut();
        let v = mom.v.data_mut();
        for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ParamGroup, ParamRole};

    fn one_param(v: &[f64]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::new(&[v.len()], v.to_vec()).unwrap(), ParamRole::Weight, ParamGroup::Primary);
        (s, id)
    }

    fn grads(id: ParamId, g: &[f64]) -> GradientMap {
        let mut m = GradientMap::default();
        m.insert(id, Tensor::new(&[g.len()], g.to_vec()).unwrap());
        m
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut store, id) = one_param(&[1.5, -2.0]);
        let mut state = AdamState::new();
        adam_step(&mut store, &grads(id, &[0.0, 0.0]), &mut state, &AdamConfig::default(), &[id]).unwrap();
        assert_eq!(store.get(id).data(), &[1.5, -2.0]);
        let m = state.moments(id).unwrap();
        assert_eq!(m.m.data(), &[0.0, 0.0]);
        assert_eq!(m.v.data(), &[0.0, 0.0]);
        assert_eq!(m.t, 1);
    }

    #[test]
    fn first_step_hand_value() {
        // m_hat = v_hat = 1, so theta = -lr * 1 / (1 + 1e-8).
        let (mut store, id) = one_param(&[0.0]);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new();
        adam_step(&mut store, &grads(id, &[1.0]), &mut state, &cfg, &[id]).unwrap();
        let want = -0.1 / (1.0 + 1e-8);
        assert!((store.get(id).data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn descends_a_quadratic() {
        // loss = 0.5 * sum(theta^2), gradient = theta.
        let (mut store, id) = one_param(&[2.0, -3.0, 0.5]);
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new();
        let loss = |s: &ParamStore| s.get(id).data().iter().map(|v| 0.5 * v * v).sum::<f64>();
        let mut prev = loss(&store);
        for _ in 0..2 {
            let g = store.get(id).clone();
            let mut gm = GradientMap::default();
            gm.insert(id, g);
            adam_step(&mut store, &gm, &mut state, &cfg, &[id]).unwrap();
            let now = loss(&store);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut store, id) = one_param(&[0.0, 0.0]);
        let err = adam_step(&mut store, &grads(id, &[1.0]), &mut AdamState::new(), &AdamConfig::default(), &[id]).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(_)));
    }

    #[test]
    fn first_step_direction_is_scale_free() {
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let g = [0.3, -2.0, 1e-3];
            let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
            let (mut a, ia) = one_param(&[0.0; 3]);
            let (mut b, ib) = one_param(&[0.0; 3]);
            let cfg = AdamConfig::default();
            adam_step(&mut a, &grads(ia, &g), &mut AdamState::new(), &cfg, &[ia]).unwrap();
            adam_step(&mut b, &grads(ib, &scaled), &mut AdamState::new(), &cfg, &[ib]).unwrap();
            for (x, y) in a.get(ia).data().iter().zip(b.get(ib).data()) {
                assert_eq!(x.signum(), y.signum());
            }
        }
    }
}
