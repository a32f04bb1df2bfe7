use candle_core::{DType, Device, Tensor, D};

use super::params::{Builder, Init};
use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weight stored as (in, out).
    pub fn new(b: &mut Builder<'_>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Self::with_bias_init(b, name, d_in, d_out, Init::Zeros)
    }

    pub fn with_bias_init(b: &mut Builder<'_>, name: &str, d_in: usize, d_out: usize, bias: Init) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Linear {
                weight: b.get("weight", &[d_in, d_out], Init::FanIn(d_in))?,
                bias: b.get("bias", &[d_out], bias)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().unwrap_or(&0);
        let rows = x.elem_count() / d_in.max(1);
        let y = x.reshape((rows, d_in))?.matmul(&self.weight)?.broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(LayerNorm {
                gain: b.get("gain", &[d], Init::Const(1.0))?,
                bias: b.get("bias", &[d], Init::Zeros)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

/// Softmax over the last dimension. The subtracted max is detached; softmax
/// is shift invariant so gradients are unaffected.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Two-layer position-wise feed-forward block.
#[derive(Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize, hidden: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(FeedForward {
                fc1: Linear::new(b, "fc1", d, hidden)?,
                fc2: Linear::new(b, "fc2", hidden, d)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&gelu(&self.fc1.forward(x)?)?)
    }
}

/// Stack of linear layers with GELU between them (none after the last).
#[derive(Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(b: &mut Builder<'_>, name: &str, widths: &[usize]) -> Result<Self> {
        b.scope(name, |b| {
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::new(b, &format!("{i}"), w[0], w[1]))
                .collect::<Result<Vec<_>>>()?;
            Ok(Mlp { layers })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = gelu(&h)?;
            }
        }
        Ok(h)
    }
}

/// Fixed sinusoidal code of a scalar position: `[sin(p·ω_i), cos(p·ω_i)]`
/// with `ω_i = 10000^(−2i/d)`.
pub fn sinusoid(position: f64, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let omega = (-(2.0 * i as f64 / d as f64) * 10000f64.ln()).exp();
        out[i] = (position * omega).sin();
        out[half + i] = (position * omega).cos();
    }
    out
}

/// (T, d) table of frame-index codes.
pub fn positional_table(t: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let flat: Vec<f64> = (0..t).flat_map(|p| sinusoid(p as f64, d)).collect();
    Ok(Tensor::from_vec(flat, (t, d), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;

    fn vec2(t: &Tensor) -> Vec<Vec<f64>> {
        t.to_dtype(DType::F64).unwrap().to_vec2().unwrap()
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut s = ParamStore::new(DType::F64);
        let mut b = s.builder(0);
        let l = Linear::new(&mut b, "l", 3, 2).unwrap();
        let x = Tensor::new(&[[[1.0f64, 2.0, 3.0]], [[0.5, -1.0, 0.0]]], &Device::Cpu).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 1, 2]);
        let w = vec2(&l.weight);
        let y = vec2(&y.squeeze(1).unwrap());
        let xs = [[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]];
        for r in 0..2 {
            for c in 0..2 {
                let manual: f64 = (0..3).map(|k| xs[r][k] * w[k][c]).sum();
                assert!((y[r][c] - manual).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut s = ParamStore::new(DType::F64);
        let ln = LayerNorm::new(&mut s.builder(0), "ln", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 10.0]], &Device::Cpu).unwrap();
        let y = vec2(&ln.forward(&x).unwrap())[0].clone();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_respect_neg_inf() {
        let x = Tensor::new(&[[0.0f64, f64::NEG_INFINITY, 1.0], [5.0, 5.0, 5.0]], &Device::Cpu).unwrap();
        let y = vec2(&softmax_last(&x).unwrap());
        assert_eq!(y[0][1], 0.0);
        assert!((y[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(y[1].iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn sinusoid_first_position() {
        let s = sinusoid(0.0, 8);
        assert_eq!(&s[..4], &[0.0; 4]);
        assert_eq!(&s[4..], &[1.0; 4]);
    }
}
