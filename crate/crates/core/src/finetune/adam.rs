use crate::encoder::{Gradients, ParamStore};

/// Adam with L2 weight decay folded into the gradient of decayed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = params.zeros_like().grads;
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (k, param) in params.params_mut().iter_mut().enumerate() {
            let decay = if param.decay { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in param.values.iter_mut().enumerate() {
                let g = grads.grads[k][i] + decay * *p;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Param;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut store = ParamStore::new(vec![Param::new("w", &[2], vec![1.0, -1.0], false)]);
        let mut adam = Adam::new(&store, 0.1, 0.9, 0.98, 1e-12, 0.0);
        let grads = Gradients {
            grads: vec![vec![3.0, -0.5]],
        };
        adam.update(&mut store, &grads);
        let vals = &store.params()[0].values;
        assert!((vals[0] - 0.9).abs() < 1e-9);
        assert!((vals[1] - (-0.9)).abs() < 1e-9);
    }

    #[test]
    fn decay_skips_flagged_params() {
        let mut store = ParamStore::new(vec![
            Param::new("w", &[1], vec![2.0], true),
            Param::new("scale", &[1], vec![2.0], false),
        ]);
        let mut adam = Adam::new(&store, 0.01, 0.9, 0.98, 1e-6, 0.5);
        let grads = Gradients {
            grads: vec![vec![0.0], vec![0.0]],
        };
        adam.update(&mut store, &grads);
        assert!(store.params()[0].values[0] < 2.0);
        assert_eq!(store.params()[1].values[0], 2.0);
    }
}
