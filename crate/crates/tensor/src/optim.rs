//! Adam.

use crate::autograd::Gradients;
use crate::nn::Param;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Serializable optimizer moments, aligned with the parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            config,
            state: AdamState {
                step: 0,
                first: zeros(),
                second: zeros(),
            },
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn restore(&mut self, state: AdamState) {
        assert_eq!(state.first.len(), self.state.first.len(), "optimizer state size mismatch");
        self.state = state;
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &[Param], grads: &Gradients) {
        assert_eq!(params.len(), self.state.first.len());
        self.state.step += 1;
        let c = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            let Some(g) = grads.get(&p.get()) else { continue };
            let m = &mut self.state.first[i];
            let v = &mut self.state.second[i];
            let mut data = p.get().to_vec();
            for (((w, &gi), mi), vi) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
            p.set_data(data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::backward;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let p = Param::new("w", vec![1.0, -2.0], &[2]);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &[p.clone()]);
        let loss = p.get().square().sum();
        opt.step(&[p.clone()], &backward(&loss));
        let d = p.get().to_vec();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let p = Param::new("w", vec![3.0, -1.0, 0.5], &[3]);
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &[p.clone()]);
        for _ in 0..2000 {
            let target = crate::Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3]);
            let loss = p.get().sub(&target).square().sum();
            opt.step(&[p.clone()], &backward(&loss));
        }
        for (a, b) in p.get().data().iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
