use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Decoupled (AdamW-style) decay; off by default.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam moment accumulators for an ordered parameter list.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Param>) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        let second = first.clone();
        OptimState {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using each parameter's `grad`.
    ///
    /// `params` must be passed in the same order as at construction.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        assert_eq!(params.len(), self.first.len(), "parameter list changed");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(p.value.shape(), m.shape(), "accumulator shape mismatch");
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * g[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                *w -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32, g: f32) -> Param {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![v]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_param(1.5, 0.0);
        let mut st = OptimState::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            st.step(&mut [&mut p]);
        }
        assert_eq!(p.value.data()[0], 1.5);
        assert_eq!(st.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g/(|g| + eps).
        let mut p = scalar_param(0.0, 1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = OptimState::new(cfg, [&p]);
        st.step(&mut [&mut p]);
        assert!((p.value.data()[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn identical_runs_give_identical_trajectories() {
        let run = || {
            let mut p = scalar_param(0.3, 0.0);
            let mut st = OptimState::new(AdamConfig::default(), [&p]);
            let mut traj = Vec::new();
            for i in 0..20 {
                p.grad.data_mut()[0] = (i as f32 * 0.7).sin();
                st.step(&mut [&mut p]);
                traj.push(p.value.data()[0].to_bits());
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
