use super::{ParamId, ParamStore, Parameter, Result, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(shape: &[usize], cfg: &AdamConfig) -> Self {
        Self {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    /// One bias-corrected Adam update of `p` from its current gradient.
    pub fn step(&mut self, p: &mut Parameter<S>, lr: f64) -> Result<()> {
        if !p.trainable() {
            return Err(TensorError::Frozen(p.name.clone()));
        }
        if self.first_moment.shape() != p.value.shape() {
            return Err(TensorError::Shape {
                op: "adam_step",
                left: self.first_moment.shape().to_vec(),
                right: p.value.shape().to_vec(),
            });
        }
        self.step_count += 1;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let t = self.step_count as i32;
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let (lr, eps) = (S::of(lr), S::of(self.epsilon));
        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
            m[i] = b1 * m[i] + (S::one() - b1) * g;
            v[i] = b2 * v[i] + (S::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam over a fixed subset of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    states: Vec<AdamState<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let states = ids
            .iter()
            .map(|&id| AdamState::new(store.get(id).value.shape(), &config))
            .collect();
        Self { config, ids, states }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn states(&self) -> &[AdamState<S>] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [AdamState<S>] {
        &mut self.states
    }

    /// Steps every managed parameter, then clears their gradients.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        for (&id, state) in self.ids.iter().zip(&mut self.states) {
            let p = store.get_mut(id);
            state.step(p, self.config.lr)?;
            p.grad.fill_zero();
        }
        Ok(())
    }
}
