use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl RmsProp {
    /// `s ← decay·s + (1−decay)·g²; v ← v − lr·g/(√s + ε)`, then clears gradients.
    pub fn step<S: Scalar>(&self, params: &mut ParamStore<S>) {
        let lr = S::of(self.learning_rate);
        let decay = S::of(self.decay);
        let keep = S::one() - decay;
        let eps = S::of(self.epsilon);
        for p in params.iter_mut() {
            let values = p.value.data_mut().iter_mut();
            let state = p.rms_state.data_mut().iter_mut();
            for ((v, s), g) in values.zip(state).zip(p.grad.data_mut().iter_mut()) {
                *s = decay * *s + keep * *g * *g;
                *v -= lr * *g / (s.sqrt() + eps);
                *g = S::zero();
            }
        }
    }
}
