//! Adam with one learning rate per parameter group.

use crate::tensor::{ParamGroup, ParamStore, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam state over a parameter store. Groups without a learning-rate entry
/// are frozen: their values and moments are never touched, so they stay
/// bit-identical across training.
#[derive(Debug, Clone)]
pub struct Adam {
    rates: Vec<(ParamGroup, f64)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step_count: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, rates: &[(ParamGroup, f64)]) -> Self {
        let m = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect::<Vec<_>>();
        Adam {
            rates: rates.to_vec(),
            v: m.clone(),
            m,
            step_count: 0,
        }
    }

    fn rate_of(&self, group: ParamGroup) -> Option<f64> {
        self.rates
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, lr)| *lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update from the gradients currently accumulated in the store.
    /// The caller resets gradients afterwards.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(lr) = self.rate_of(store.param(id).group) else {
                continue;
            };
            let idx = id.index();
            let g = store.grad(id).data().to_vec();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let value = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }

    /// Raw moment access for checkpoint serialization.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn restore(
        rates: &[(ParamGroup, f64)],
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        step_count: u64,
    ) -> Self {
        Adam {
            rates: rates.to_vec(),
            m,
            v,
            step_count,
        }
    }
}
