//! GAN objectives. Values are accumulated in f64.

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Loss value plus the gradient with respect to the (first) input.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// Element mean of `0.5 d²` for `|d| < 1`, `|d| − 0.5` otherwise, `d = x − y`.
pub fn smooth_l1_loss<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<LossGrad<T>, NnError> {
    y.expect_shape(x.shape())?;
    let n = x.numel().max(1) as f64;
    let mut value = 0.0;
    let grad = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.f64() - b.f64();
            if d.abs() < 1.0 {
                value += 0.5 * d * d;
                T::of(d / n)
            } else {
                value += d.abs() - 0.5;
                T::of(d.signum() / n)
            }
        })
        .collect();
    Ok(LossGrad {
        value: value / n,
        grad: Tensor::from_vec(x.shape(), grad)?,
    })
}

/// Mean of `−log D(X)`.
pub fn adversarial_loss<T: Real>(d_fake: &Tensor<T>) -> Result<LossGrad<T>, NnError> {
    let n = d_fake.numel().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(d_fake.numel());
    for &p in d_fake.data() {
        let p = p.f64();
        if !(p > 0.0 && p <= 1.0) {
            return Err(NnError::DomainError(format!("D(X) = {p} outside (0, 1]")));
        }
        value -= p.ln();
        grad.push(T::of(-1.0 / (p * n)));
    }
    Ok(LossGrad {
        value: value / n,
        grad: Tensor::from_vec(d_fake.shape(), grad)?,
    })
}

#[derive(Debug, Clone)]
pub struct DiscLoss<T> {
    pub value: f64,
    pub grad_real: Tensor<T>,
    pub grad_fake: Tensor<T>,
}

/// Mean of `−(log D(Y) + log(1 − D(X)))`, pairing real and fake entries.
pub fn discriminator_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<DiscLoss<T>, NnError> {
    d_fake.expect_shape(d_real.shape())?;
    let n = d_real.numel().max(1) as f64;
    let mut value = 0.0;
    let mut gr = Vec::with_capacity(d_real.numel());
    let mut gf = Vec::with_capacity(d_real.numel());
    for (&r, &f) in d_real.data().iter().zip(d_fake.data()) {
        let (r, f) = (r.f64(), f.f64());
        if !(r > 0.0 && r <= 1.0) {
            return Err(NnError::DomainError(format!("D(Y) = {r} outside (0, 1]")));
        }
        if !(f >= 0.0 && f < 1.0) {
            return Err(NnError::DomainError(format!("D(X) = {f} outside [0, 1)")));
        }
        value -= r.ln() + (1.0 - f).ln();
        gr.push(T::of(-1.0 / (r * n)));
        gf.push(T::of(1.0 / ((1.0 - f) * n)));
    }
    Ok(DiscLoss {
        value: value / n,
        grad_real: Tensor::from_vec(d_real.shape(), gr)?,
        grad_fake: Tensor::from_vec(d_fake.shape(), gf)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenLoss {
    pub total: f64,
    pub l1: f64,
    pub adversarial: f64,
}

/// `smooth_l1(x, y) + alpha · adversarial(D(X))`.
pub fn generator_loss<T: Real>(x: &Tensor<T>, y: &Tensor<T>, d_fake: &Tensor<T>, alpha: f64) -> Result<GenLoss, NnError> {
    if !(alpha >= 0.0) {
        return Err(NnError::InvalidConfig(format!("alpha {alpha} must be >= 0")));
    }
    let l1 = smooth_l1_loss(x, y)?.value;
    let adversarial = adversarial_loss(d_fake)?.value;
    let total = if alpha == 0.0 { l1 } else { l1 + alpha * adversarial };
    Ok(GenLoss { total, l1, adversarial })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn smooth_l1_closed_forms() {
        let z = t(&[0.0; 4]);
        assert!((smooth_l1_loss(&t(&[0.5; 4]), &z).unwrap().value - 0.125).abs() < 1e-15);
        assert!((smooth_l1_loss(&t(&[2.0; 4]), &z).unwrap().value - 1.5).abs() < 1e-15);
        assert_eq!(smooth_l1_loss(&t(&[1.0; 4]), &z).unwrap().value, 0.5);
        assert!((smooth_l1_loss(&t(&[1.0 - 1e-12]), &t(&[0.0])).unwrap().value - 0.5).abs() < 1e-11);
        assert!(smooth_l1_loss(&t(&[1.0]), &t(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn adversarial_closed_forms() {
        assert_eq!(adversarial_loss(&t(&[1.0])).unwrap().value, 0.0);
        assert!((adversarial_loss(&t(&[0.5])).unwrap().value - 2f64.ln()).abs() < 1e-15);
        assert!((adversarial_loss(&t(&[(-1f64).exp()])).unwrap().value - 1.0).abs() < 1e-15);
        assert!(matches!(adversarial_loss(&t(&[0.0])), Err(NnError::DomainError(_))));
    }

    #[test]
    fn discriminator_closed_forms() {
        assert_eq!(discriminator_loss(&t(&[1.0]), &t(&[0.0])).unwrap().value, 0.0);
        let half = discriminator_loss(&t(&[0.5]), &t(&[0.5])).unwrap();
        assert!((half.value - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(half.grad_real.data()[0] < 0.0);
        assert!(half.grad_fake.data()[0] > 0.0);
        assert!(discriminator_loss(&t(&[0.5]), &t(&[1.0])).is_err());
        assert!(discriminator_loss(&t(&[0.0]), &t(&[0.5])).is_err());
    }

    #[test]
    fn generator_loss_mixing() {
        let x = t(&[0.5; 8]);
        let y = t(&[0.0; 8]);
        let d = t(&[0.5, 0.5]);
        let l1 = smooth_l1_loss(&x, &y).unwrap().value;
        assert_eq!(generator_loss(&x, &y, &d, 0.0).unwrap().total, l1);
        assert_eq!(generator_loss(&x, &x, &t(&[1.0]), 0.01).unwrap().total, 0.0);
        let mixed = generator_loss(&x, &y, &d, 0.01).unwrap().total;
        assert!((mixed - (0.125 + 0.01 * 2f64.ln())).abs() < 1e-15);
        assert!(generator_loss(&x, &y, &d, -1.0).is_err());
    }
}
