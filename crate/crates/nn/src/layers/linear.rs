use crate::error::NnError;
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// `y = W x + b` on features flattened from `[N, ...]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    fn batch(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        let n = x.shape().first().copied().unwrap_or(0);
        if n == 0 || x.numel() != n * self.in_features {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, {}] after flattening", self.in_features),
                actual: format!("{:?}", x.shape()),
            });
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.batch(x)?;
        let (fi, fo) = (self.in_features, self.out_features);
        let mut y: Vec<T> = (0..n).flat_map(|_| self.bias.data().iter().copied()).collect();
        gemm(
            T::one(),
            MatRef::row_major(x.data(), n, fi),
            MatRef::row_major(self.weight.data(), fo, fi).t(),
            T::one(),
            &mut y,
            fo,
        );
        Tensor::from_vec(&[n, fo], y)
    }

    /// Returns `(dx, [dW, db])`; `dx` takes the shape of `x`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        let n = self.batch(x)?;
        let (fi, fo) = (self.in_features, self.out_features);
        dy.expect_shape(&[n, fo])?;
        let dym = MatRef::row_major(dy.data(), n, fo);
        let mut dx = vec![T::zero(); n * fi];
        gemm(T::one(), dym, MatRef::row_major(self.weight.data(), fo, fi), T::zero(), &mut dx, fi);
        let mut dw = vec![T::zero(); fo * fi];
        gemm(T::one(), dym.t(), MatRef::row_major(x.data(), n, fi), T::zero(), &mut dw, fi);
        let db = (0..fo).map(|o| (0..n).map(|s| dy.data()[s * fo + o]).sum()).collect();
        Ok((
            Tensor::from_vec(x.shape(), dx)?,
            vec![Tensor::from_vec(&[fo, fi], dw)?, Tensor::from_vec(&[fo], db)?],
        ))
    }
}
