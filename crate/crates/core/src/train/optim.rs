//! Adam with clip-by-global-norm.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};

use crate::error::Result;
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// First and second moments keyed by parameter name.
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Collects gradients for every stored parameter (zeros where the graph
    /// did not reach) in name order.
    pub fn gather(store: &ParamStore, grads: &GradStore) -> Result<Vec<(String, Tensor)>> {
        store
            .iter()
            .map(|(name, var)| {
                let g = match grads.get(var.as_tensor()) {
                    Some(g) => g.detach(),
                    None => var.as_tensor().zeros_like()?,
                };
                Ok((name.to_string(), g))
            })
            .collect()
    }

    pub fn global_norm(grads: &[(String, Tensor)]) -> Result<f64> {
        let mut sq = 0.0;
        for (_, g) in grads {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
        Ok(sq.sqrt())
    }

    /// Applies one update. Returns the pre-clipping gradient norm.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<f64> {
        let grads = Self::gather(store, grads)?;
        let norm = Self::global_norm(&grads)?;
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let var = store.get(&name).expect("gathered from the same store");
            let g = (g * scale)?;
            let m_prev = match self.m.get(&name) {
                Some(m) => m.clone(),
                None => g.zeros_like()?,
            };
            let v_prev = match self.v.get(&name) {
                Some(v) => v.clone(),
                None => g.zeros_like()?,
            };
            let m = ((m_prev * beta1)? + (&g * (1.0 - beta1))?)?;
            let v = ((v_prev * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            if lr != 0.0 {
                let m_hat = (&m / bc1)?;
                let v_hat = (&v / bc2)?;
                let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
                var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            }
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut store = ParamStore::new(DType::F64);
        let w = store.builder(0).get("w", &[3], Init::Const(1.0)).unwrap();
        let loss = (&w * Tensor::new(&[2.0, -0.5, 0.0], w.device()).unwrap()).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(AdamConfig {
            clip_norm: None,
            ..AdamConfig::new(0.1)
        });
        adam.step(&store, &grads).unwrap();
        let after: Vec<f64> = store.get("w").unwrap().as_tensor().to_vec1().unwrap();
        assert!((after[0] - 0.9).abs() < 1e-7);
        assert!((after[1] - 1.1).abs() < 1e-7);
        assert_eq!(after[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new(DType::F64);
        store.builder(0).get("w", &[2], Init::Const(3.0)).unwrap();
        let target = Tensor::new(&[1.0, -2.0], &candle_core::Device::Cpu).unwrap();
        let mut adam = Adam::new(AdamConfig::new(0.05));
        for _ in 0..800 {
            let w = store.get("w").unwrap().as_tensor().clone();
            let loss = (w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
            adam.step(&store, &loss.backward().unwrap()).unwrap();
        }
        let w: Vec<f64> = store.get("w").unwrap().as_tensor().to_vec1().unwrap();
        assert!((w[0] - 1.0).abs() < 1e-2 && (w[1] + 2.0).abs() < 1e-2, "{w:?}");
    }

    #[test]
    fn clipping_reports_raw_norm() {
        let mut store = ParamStore::new(DType::F64);
        let w = store.builder(0).get("w", &[2], Init::Const(0.0)).unwrap();
        let loss = (&w * Tensor::new(&[30.0, 40.0], w.device()).unwrap()).unwrap().sum_all().unwrap();
        let mut adam = Adam::new(AdamConfig::new(0.0));
        let norm = adam.step(&store, &loss.backward().unwrap()).unwrap();
        assert!((norm - 50.0).abs() < 1e-9);
        let m: Vec<f64> = adam.m["w"].to_vec1().unwrap();
        assert!((m[0] - 0.1 * 0.6).abs() < 1e-12 && (m[1] - 0.1 * 0.8).abs() < 1e-12);
        assert_eq!(store.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap(), vec![0.0, 0.0]);
    }
}
