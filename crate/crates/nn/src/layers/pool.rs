use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// 2×2×2 max pooling, stride 2. Returns the pooled tensor and, per output
/// voxel, the flat input index of the winning element (first max wins).
pub fn maxpool_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let [n, c, d, h, w] = x.dims5()?;
    if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::ShapeMismatch {
            expected: "even spatial dims for 2x pooling".into(),
            actual: format!("{:?}", x.shape()),
        });
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + ((2 * z) * h + 2 * y) * w + 2 * xx;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * xx + dx;
                                if xs[i] > xs[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.push(xs[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, od, oh, ow], out)?, arg))
}

pub fn maxpool_backward<T: Real>(in_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if dy.numel() != argmax.len() {
        return Err(NnError::ShapeMismatch {
            expected: format!("{} pooled values", argmax.len()),
            actual: format!("{:?}", dy.shape()),
        });
    }
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Global average over the spatial dims: `[N, C, ..] -> [N, C, 1, 1, 1]`.
pub fn avgpool_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [n, c, d, h, w] = x.dims5()?;
    let inner = d * h * w;
    let data = x
        .data()
        .chunks(inner)
        .map(|b| T::of(b.iter().map(|v| v.f64()).sum::<f64>() / inner as f64))
        .collect();
    Tensor::from_vec(&[n, c, 1, 1, 1], data)
}

pub fn avgpool_backward<T: Real>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let inner: usize = in_shape[2..].iter().product();
    dy.expect_shape(&[in_shape[0], in_shape[1], 1, 1, 1])?;
    let scale = T::of(1.0 / inner as f64);
    let data = dy
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, inner))
        .collect();
    Tensor::from_vec(in_shape, data)
}
