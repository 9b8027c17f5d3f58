use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Parametric ReLU with one learnable slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu<T> {
    pub channels: usize,
    /// `[C]`
    pub slope: Tensor<T>,
}

impl<T: Real> PRelu<T> {
    fn inner(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        let shape = x.shape();
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, {}, ..]", self.channels),
                actual: format!("{shape:?}"),
            });
        }
        Ok(shape[2..].iter().product())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let inner = self.inner(x)?;
        let c = self.channels;
        let mut y = x.clone();
        for (i, block) in y.data_mut().chunks_mut(inner.max(1)).enumerate() {
            let a = self.slope.data()[i % c];
            for v in block {
                if *v < T::zero() {
                    *v *= a;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        dy.expect_shape(x.shape())?;
        let inner = self.inner(x)?.max(1);
        let c = self.channels;
        let mut dx = dy.clone();
        let mut ds = vec![0f64; c];
        for (i, (g, xs)) in dx.data_mut().chunks_mut(inner).zip(x.data().chunks(inner)).enumerate() {
            let a = self.slope.data()[i % c];
            let mut acc = 0f64;
            for (gv, &xv) in g.iter_mut().zip(xs) {
                if xv < T::zero() {
                    acc += gv.f64() * xv.f64();
                    *gv *= a;
                }
            }
            ds[i % c] += acc;
        }
        Ok((dx, vec![Tensor::from_f64(&[c], &ds)?]))
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    dy.expect_shape(x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn sigmoid<T: Real>(v: T) -> T {
    let v = v.f64();
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    T::of(s)
}

pub fn sigmoid_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Backward in terms of the forward output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    dy.expect_shape(y.shape())?;
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_vec(y.shape(), data)
}
