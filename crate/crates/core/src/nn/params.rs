//! Named parameter storage and a prefix-scoped builder that either reuses an
//! existing variable or initializes a new one from a seeded stream.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// `U(−1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Normal(f64),
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Inserts or overwrites a variable (used when loading checkpoints).
    pub fn insert(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let value = value.to_dtype(self.dtype)?;
        match self.vars.get(name) {
            Some(v) if v.dims() == value.dims() => v.set(&value)?,
            Some(v) => {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: stored {:?}, given {:?}",
                    v.dims(),
                    value.dims()
                )))
            }
            None => {
                self.vars.insert(name.to_string(), Var::from_tensor(&value)?);
            }
        }
        Ok(())
    }

    /// Deep copy, optionally converting the element type.
    pub fn duplicate(&self, dtype: DType) -> Result<ParamStore> {
        let mut out = ParamStore::new(dtype);
        for (k, v) in &self.vars {
            out.vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().to_dtype(dtype)?.copy()?)?);
        }
        Ok(out)
    }

    /// Host copy of every parameter as `(name, shape, f64 values)`.
    pub fn snapshot(&self) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let vals = v.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                Ok((k.clone(), v.dims().to_vec(), vals))
            })
            .collect()
    }

    pub fn builder(&mut self, seed: u64) -> Builder<'_> {
        Builder {
            store: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: String::new(),
            frozen: false,
        }
    }

    /// Builder that only reads existing variables, handing out detached
    /// tensors so forward passes record no parameter graph.
    pub fn frozen_builder(&mut self) -> Builder<'_> {
        Builder {
            store: self,
            rng: ChaCha8Rng::seed_from_u64(0),
            prefix: String::new(),
            frozen: true,
        }
    }
}

pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    prefix: String,
    frozen: bool,
}

impl Builder<'_> {
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let len = self.prefix.len();
        if !self.prefix.is_empty() {
            self.prefix.push('/');
        }
        self.prefix.push_str(name);
        let out = f(self);
        self.prefix.truncate(len);
        out
    }

    pub fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{}", self.prefix, name)
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = self.full_name(name);
        if let Some(v) = self.store.vars.get(&full) {
            if v.dims() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {full}: stored {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(if self.frozen {
                v.as_tensor().detach()
            } else {
                v.as_tensor().clone()
            });
        }
        if self.frozen {
            return Err(Error::UntrainedModel(format!("missing parameter {full}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::Normal(std) => (0..n)
                .map(|_| std * self.rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.store.vars.insert(full, var);
        Ok(out)
    }
}
