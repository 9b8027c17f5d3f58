//! ×2 trilinear upsampling with half-pixel centres (`align_corners = false`).

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Source taps `(i0, i1, w0, w1)` for each of the `2n` outputs of a length-`n` axis.
fn taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let t = src - i0 as f64;
            (i0, i1, 1.0 - t, t)
        })
        .collect()
}

/// Applies the 1-D map along `axis` (0 = D, 1 = H, 2 = W) of `[B, D, H, W]`
/// data; `transpose` runs the adjoint (from `2n` back to `n`).
fn along<T: Real>(data: &[T], b: usize, dims: [usize; 3], axis: usize, transpose: bool) -> (Vec<T>, [usize; 3]) {
    let n = if transpose { dims[axis] / 2 } else { dims[axis] };
    let t = taps(n);
    let mut out_dims = dims;
    out_dims[axis] = if transpose { n } else { 2 * n };
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let (len_in, len_out) = (dims[axis], out_dims[axis]);
    let mut out = vec![T::zero(); b * outer * len_out * inner];
    for bo in 0..b * outer {
        let src = &data[bo * len_in * inner..(bo + 1) * len_in * inner];
        let dst = &mut out[bo * len_out * inner..(bo + 1) * len_out * inner];
        for (o, &(i0, i1, w0, w1)) in t.iter().enumerate() {
            let (w0, w1) = (T::of(w0), T::of(w1));
            for k in 0..inner {
                if transpose {
                    let g = src[o * inner + k];
                    dst[i0 * inner + k] += w0 * g;
                    dst[i1 * inner + k] += w1 * g;
                } else {
                    dst[o * inner + k] = w0 * src[i0 * inner + k] + w1 * src[i1 * inner + k];
                }
            }
        }
    }
    (out, out_dims)
}

pub fn upsample_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [n, c, d, h, w] = x.dims5()?;
    let mut dims = [d, h, w];
    let mut data = x.data().to_vec();
    for axis in (0..3).rev() {
        (data, dims) = along(&data, n * c, dims, axis, false);
    }
    Tensor::from_vec(&[n, c, dims[0], dims[1], dims[2]], data)
}

pub fn upsample_backward<T: Real>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c) = (in_shape[0], in_shape[1]);
    dy.expect_shape(&[n, c, 2 * in_shape[2], 2 * in_shape[3], 2 * in_shape[4]])?;
    let mut dims = [dy.shape()[2], dy.shape()[3], dy.shape()[4]];
    let mut data = dy.data().to_vec();
    for axis in 0..3 {
        (data, dims) = along(&data, n * c, dims, axis, true);
    }
    Tensor::from_vec(in_shape, data)
}
