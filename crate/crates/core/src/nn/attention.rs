//! Multi-head attention with additive masks over dancer-major token layouts
//! (`token = dancer · T + frame`).

use candle_core::{DType, Device, Tensor};

use super::layers::{softmax_last, Linear};
use super::params::Builder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Each dancer attends to its own frames only.
    Local,
    /// Every token attends to every token.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionMask {
    pub kind: MaskKind,
    pub n_dancers: usize,
    pub n_frames: usize,
}

impl AttentionMask {
    pub fn local(n_dancers: usize, n_frames: usize) -> Self {
        AttentionMask {
            kind: MaskKind::Local,
            n_dancers,
            n_frames,
        }
    }

    pub fn global(n_dancers: usize, n_frames: usize) -> Self {
        AttentionMask {
            kind: MaskKind::Global,
            n_dancers,
            n_frames,
        }
    }

    pub fn size(&self) -> usize {
        self.n_dancers * self.n_frames
    }

    /// Explicit (N·T, N·T) additive matrix with entries in {0, −∞}.
    pub fn matrix(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let s = self.size();
        let t = self.n_frames;
        let vals: Vec<f64> = (0..s * s)
            .map(|k| {
                let (r, c) = (k / s, k % s);
                match self.kind {
                    MaskKind::Local if r / t != c / t => f64::NEG_INFINITY,
                    _ => 0.0,
                }
            })
            .collect();
        Ok(Tensor::from_vec(vals, (s, s), device)?.to_dtype(dtype)?)
    }
}

#[derive(Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut Builder<'_>, name: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!("width {d} not divisible by {heads} heads")));
        }
        b.scope(name, |b| {
            Ok(MultiHeadAttention {
                q: Linear::new(b, "q", d, d)?,
                k: Linear::new(b, "k", d, d)?,
                v: Linear::new(b, "v", d, d)?,
                o: Linear::new(b, "o", d, d)?,
                heads,
            })
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s, d) = x.dims3()?;
        Ok(x.reshape((b, s, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// Concatenated head outputs before the output projection:
    /// `softmax(QKᵀ/√d_k + mask)·V`.
    pub fn context(&self, query: &Tensor, kv: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, sq, d) = query.dims3()?;
        let (bk, sk, dk) = kv.dims3()?;
        if bk != b || dk != d {
            return Err(Error::ShapeMismatch(format!(
                "query {:?} vs key/value {:?}",
                query.dims(),
                kv.dims()
            )));
        }
        if let Some(m) = mask {
            if m.dims() != [sq, sk] {
                return Err(Error::ShapeMismatch(format!(
                    "mask {:?} for {sq}×{sk} scores",
                    m.dims()
                )));
            }
        }
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(kv)?)?;
        let v = self.split_heads(&self.v.forward(kv)?)?;
        let dh = d / self.heads;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let att = softmax_last(&scores)?;
        let out = att.matmul(&v)?;
        Ok(out.transpose(1, 2)?.contiguous()?.reshape((b, sq, d))?)
    }

    pub fn forward(&self, query: &Tensor, kv: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        self.o.forward(&self.context(query, kv, mask)?)
    }

    /// Self-attention over (B, N·T, d) tokens. The local kind runs each
    /// dancer as its own batch row, which equals the block-diagonal mask.
    pub fn self_attend(&self, x: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
        let (b, s, d) = x.dims3()?;
        if s != mask.size() {
            return Err(Error::ShapeMismatch(format!(
                "{s} tokens for a {}×{} mask",
                mask.n_dancers, mask.n_frames
            )));
        }
        match mask.kind {
            MaskKind::Global => self.forward(x, x, None),
            MaskKind::Local => {
                let per = x.reshape((b * mask.n_dancers, mask.n_frames, d))?;
                Ok(self.forward(&per, &per, None)?.reshape((b, s, d))?)
            }
        }
    }

    pub fn self_attend_explicit(&self, x: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
        let m = mask.matrix(x.dtype(), x.device())?;
        self.forward(x, x, Some(&m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::process::randn;
    use crate::nn::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tokens(seed: u64, shape: (usize, usize, usize)) -> Tensor {
        randn(shape, DType::F64, &Device::Cpu, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn max_abs(t: &Tensor) -> f64 {
        t.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn mask_matrix_structure() {
        let m = AttentionMask::local(2, 3).matrix(DType::F64, &Device::Cpu).unwrap();
        let v: Vec<Vec<f64>> = m.to_vec2().unwrap();
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(v[r][c] == 0.0, r / 3 == c / 3);
            }
        }
        let g = AttentionMask::global(2, 3).matrix(DType::F64, &Device::Cpu).unwrap();
        assert_eq!(max_abs(&g), 0.0);
    }

    #[test]
    fn local_fast_path_equals_explicit_mask() {
        let mut s = ParamStore::new(DType::F64);
        let att = MultiHeadAttention::new(&mut s.builder(1), "a", 8, 2).unwrap();
        let x = rand_tokens(2, (2, 12, 8));
        let mask = AttentionMask::local(3, 4);
        let fast = att.self_attend(&x, &mask).unwrap();
        let explicit = att.self_attend_explicit(&x, &mask).unwrap();
        assert!(max_abs(&(fast - explicit).unwrap()) < 1e-12);
    }

    #[test]
    fn zeroed_keys_give_uniform_mean_of_values() {
        let mut s = ParamStore::new(DType::F64);
        let mut att = MultiHeadAttention::new(&mut s.builder(3), "a", 4, 2).unwrap();
        att.k.weight = att.k.weight.zeros_like().unwrap();
        att.v.weight = Tensor::eye(4, DType::F64, &Device::Cpu).unwrap();
        // Two dancers, two frames: dancer 0 holds rows {1, 3}.
        let x = Tensor::new(
            &[[[1.0f64; 4], [3.0; 4], [10.0; 4], [20.0; 4]]],
            &Device::Cpu,
        )
        .unwrap();
        let out = att.context(&x, &x, Some(&AttentionMask::local(2, 2).matrix(DType::F64, &Device::Cpu).unwrap())).unwrap();
        let rows: Vec<Vec<f64>> = out.squeeze(0).unwrap().to_vec2().unwrap();
        for r in &rows[..2] {
            assert!(r.iter().all(|v| (v - 2.0).abs() < 1e-12));
        }
        for r in &rows[2..] {
            assert!(r.iter().all(|v| (v - 15.0).abs() < 1e-12));
        }
    }

    #[test]
    fn local_isolates_and_global_mixes() {
        let mut s = ParamStore::new(DType::F64);
        let att = MultiHeadAttention::new(&mut s.builder(4), "a", 8, 2).unwrap();
        let (n, t) = (3, 5);
        let x = rand_tokens(5, (1, n * t, 8));
        let bump = rand_tokens(6, (1, t, 8));
        // Perturb every frame of dancer 2.
        let y = Tensor::cat(&[x.narrow(1, 0, 2 * t).unwrap(), (x.narrow(1, 2 * t, t).unwrap() + bump).unwrap()], 1).unwrap();
        let local = AttentionMask::local(n, t);
        let a = att.self_attend(&x, &local).unwrap().narrow(1, 0, 2 * t).unwrap();
        let b = att.self_attend(&y, &local).unwrap().narrow(1, 0, 2 * t).unwrap();
        assert!(max_abs(&(a - b).unwrap()) < 1e-12);
        let global = AttentionMask::global(n, t);
        let a = att.self_attend(&x, &global).unwrap().narrow(1, 0, 2 * t).unwrap();
        let b = att.self_attend(&y, &global).unwrap().narrow(1, 0, 2 * t).unwrap();
        assert!(max_abs(&(a - b).unwrap()) > 0.0);
    }

    #[test]
    fn mask_size_checked() {
        let mut s = ParamStore::new(DType::F64);
        let att = MultiHeadAttention::new(&mut s.builder(4), "a", 8, 2).unwrap();
        let x = rand_tokens(5, (1, 7, 8));
        assert!(matches!(
            att.self_attend(&x, &AttentionMask::local(2, 3)),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
