use rayon::prelude::*;

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Per-sample, per-channel normalization with a learnable per-channel affine.
#[derive(Debug, Clone)]
pub struct InstanceNorm3d<T> {
    pub channels: usize,
    pub eps: f64,
    /// `[C]` scale and shift; `None` when the layer is not affine.
    pub gamma: Option<Tensor<T>>,
    pub beta: Option<Tensor<T>>,
}

pub struct NormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<f64>,
}

impl<T: Real> InstanceNorm3d<T> {
    fn split(&self, x: &Tensor<T>) -> Result<(usize, usize), NnError> {
        let shape = x.shape();
        if shape.len() < 3 || shape[1] != self.channels {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, {}, spatial..]", self.channels),
                actual: format!("{shape:?}"),
            });
        }
        Ok((shape[0], shape[2..].iter().product()))
    }

    fn affine(&self, c: usize) -> (f64, f64) {
        match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => (g.data()[c].f64(), b.data()[c].f64()),
            _ => (1.0, 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, NormCache<T>), NnError> {
        let (_, s) = self.split(x)?;
        let c = self.channels;
        let mut y = vec![T::zero(); x.numel()];
        let mut xhat = vec![T::zero(); x.numel()];
        let inv_std: Vec<f64> = y
            .par_chunks_mut(s)
            .zip(xhat.par_chunks_mut(s))
            .zip(x.data().par_chunks(s))
            .enumerate()
            .map(|(idx, ((ys, hs), xs))| {
                let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / s as f64;
                let var = xs.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / s as f64;
                let inv = 1.0 / (var + self.eps).sqrt();
                let (g, b) = self.affine(idx % c);
                for ((yv, hv), xv) in ys.iter_mut().zip(hs.iter_mut()).zip(xs) {
                    let h = (xv.f64() - mean) * inv;
                    *hv = T::of(h);
                    *yv = T::of(g * h + b);
                }
                inv
            })
            .collect();
        Ok((
            Tensor::from_vec(x.shape(), y)?,
            NormCache {
                xhat: Tensor::from_vec(x.shape(), xhat)?,
                inv_std,
            },
        ))
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        dy.expect_shape(cache.xhat.shape())?;
        let (_, s) = self.split(dy)?;
        let c = self.channels;
        let mut dx = vec![T::zero(); dy.numel()];
        let sums: Vec<(f64, f64)> = dx
            .par_chunks_mut(s)
            .zip(dy.data().par_chunks(s))
            .zip(cache.xhat.data().par_chunks(s))
            .enumerate()
            .map(|(idx, ((dxs, dys), hs))| {
                let (g, _) = self.affine(idx % c);
                let mut sum_dy = 0.0;
                let mut sum_dy_h = 0.0;
                for (d, h) in dys.iter().zip(hs) {
                    sum_dy += d.f64();
                    sum_dy_h += d.f64() * h.f64();
                }
                // dx = g·inv/S · (S·dy − Σdy − x̂·Σ(dy·x̂))
                let scale = g * cache.inv_std[idx] / s as f64;
                for ((o, d), h) in dxs.iter_mut().zip(dys).zip(hs) {
                    *o = T::of(scale * (s as f64 * d.f64() - sum_dy - h.f64() * sum_dy_h));
                }
                (sum_dy_h, sum_dy)
            })
            .collect();
        let mut grads = Vec::new();
        if self.gamma.is_some() {
            let mut dg = vec![0f64; c];
            let mut dbeta = vec![0f64; c];
            for (idx, &(gh, b)) in sums.iter().enumerate() {
                dg[idx % c] += gh;
                dbeta[idx % c] += b;
            }
            grads.push(Tensor::from_f64(&[c], &dg)?);
            grads.push(Tensor::from_f64(&[c], &dbeta)?);
        }
        Ok((Tensor::from_vec(dy.shape(), dx)?, grads))
    }
}
