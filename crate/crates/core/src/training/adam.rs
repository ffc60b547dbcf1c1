use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            betas: (0.5, 0.9),
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moments for every tensor in a store (buffers keep
/// empty placeholders), plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> AdamState {
        let zeros = |p: &crate::params::Param| {
            if p.trainable {
                Matrix::zeros(p.value.rows(), p.value.cols())
            } else {
                Matrix::zeros(0, 0)
            }
        };
        AdamState {
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
            step: 0,
        }
    }

    /// One update from the gradients stored in `store`. Weight decay is
    /// decoupled: `θ ← θ·(1 − lr·wd)` precedes the moment-based delta.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, cfg: &AdamConfig) -> Result<()> {
        for (_, p) in store.iter() {
            if p.trainable && !p.grad.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = 1.0 - lr * cfg.weight_decay;
        for (k, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let theta = p.value.data_mut();
            for (((th, &g), mi), vi) in theta.iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *th = *th * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Matrix::row_vector(vec![value]));
        s
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut s = single(2.0);
        s.add_buffer("buf", Matrix::row_vector(vec![3.0]));
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig::default();
        st.step(&mut s, 0.1, &cfg).unwrap();
        assert_eq!(
            s.get(s.id("theta").unwrap()).value.data()[0],
            2.0 * (1.0 - 0.1 * 1e-5)
        );
        assert_eq!(s.get(s.id("buf").unwrap()).value.data()[0], 3.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = single(0.0);
        let id = s.id("theta").unwrap();
        s.get_mut(id).grad = Matrix::row_vector(vec![1.0]);
        let mut st = AdamState::new(&s);
        st.step(&mut s, 2e-4, &AdamConfig::default()).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
        let delta = s.value(id).data()[0];
        assert!((delta + 2e-4 / (1.0 + 1e-8)).abs() < 1e-18, "{delta}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = single(0.0);
        let id = s.id("theta").unwrap();
        s.get_mut(id).grad = Matrix::row_vector(vec![f64::NAN]);
        let err = AdamState::new(&s)
            .step(&mut s, 1e-3, &AdamConfig::default())
            .unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("theta"));
    }

    #[test]
    fn converges_on_a_quadratic() {
        // f(x, y) = (x - 1)² + 10 (y + 2)²
        let mut s = ParamStore::new();
        let id = s.add("xy", Matrix::row_vector(vec![0.0, 0.0]));
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let grad = |v: &[f64]| vec![2.0 * (v[0] - 1.0), 20.0 * (v[1] + 2.0)];
        for _ in 0..100 {
            let g = grad(s.value(id).data());
            s.get_mut(id).grad = Matrix::row_vector(g);
            st.step(&mut s, 0.05, &cfg).unwrap();
        }
        let g = grad(s.value(id).data());
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
    }
}
