//! Cubic-kernel 3-D convolution (cross-correlation) via slab-wise im2col + GEMM.

use rayon::prelude::*;

use crate::error::NnError;
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Upper bound on im2col buffer elements per sample.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone)]
pub struct Conv3d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k, k]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Option<Tensor<T>>,
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    k: usize,
    s: usize,
    p: usize,
    ind: [usize; 3],
    outd: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn in_volume(&self) -> usize {
        self.ind.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.outd.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.outd[1] * self.outd[2]
    }

    fn slab_planes(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.out_plane()).max(1)).clamp(1, self.outd[0])
    }

    /// Walks the output rows of the slab `[z0, z0 + nz)` for every col row.
    /// `f(dst, None)` marks a row lying fully in the padding; otherwise
    /// `f(dst, Some((src, lo, hi)))` where output columns `lo..hi` read input
    /// `src + (ox - lo) * stride` and the rest are padding.
    #[inline]
    fn for_each_row(&self, z0: usize, nz: usize, mut f: impl FnMut(usize, Option<(usize, usize, usize)>)) {
        let [d, h, w] = self.ind;
        let [_, ho, wo] = self.outd;
        let sv = nz * ho * wo;
        let (k, s, p) = (self.k, self.s, self.p);
        for ci in 0..self.cin {
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((ci * k + kz) * k + ky) * k + kx;
                        let base = row * sv;
                        let lo = if p > kx { (p - kx).div_ceil(s) } else { 0 };
                        let hi = if w + p > kx { ((w - 1 + p - kx) / s + 1).min(wo) } else { 0 };
                        for oz in 0..nz {
                            let iz = ((z0 + oz) * s + kz) as isize - p as isize;
                            for oy in 0..ho {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let dst = base + (oz * ho + oy) * wo;
                                if iz < 0 || iz as usize >= d || iy < 0 || iy as usize >= h || lo >= hi {
                                    f(dst, None);
                                } else {
                                    let src = ((ci * d + iz as usize) * h + iy as usize) * w + lo * s + kx - p;
                                    f(dst, Some((src, lo, hi)));
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T], z0: usize, nz: usize, col: &mut [T]) {
        let (wo, s) = (self.outd[2], self.s);
        self.for_each_row(z0, nz, |dst, seg| {
            let row = &mut col[dst..dst + wo];
            match seg {
                None => row.fill(T::zero()),
                Some((src, lo, hi)) => {
                    row[..lo].fill(T::zero());
                    row[hi..].fill(T::zero());
                    if s == 1 {
                        row[lo..hi].copy_from_slice(&x[src..src + hi - lo]);
                    } else {
                        for (i, v) in row[lo..hi].iter_mut().enumerate() {
                            *v = x[src + i * s];
                        }
                    }
                }
            }
        });
    }

    fn col2im<T: Real>(&self, col: &[T], z0: usize, nz: usize, dx: &mut [T]) {
        let s = self.s;
        self.for_each_row(z0, nz, |dst, seg| {
            if let Some((src, lo, hi)) = seg {
                for (i, &v) in col[dst + lo..dst + hi].iter().enumerate() {
                    dx[src + i * s] += v;
                }
            }
        });
    }
}

impl<T: Real> Conv3d<T> {
    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, Geometry), NnError> {
        let [n, c, d, h, w] = x.dims5()?;
        if c != self.in_channels {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} input channels", self.in_channels),
                actual: format!("{:?}", x.shape()),
            });
        }
        let mut outd = [0; 3];
        for (a, &len) in [d, h, w].iter().enumerate() {
            let padded = len + 2 * self.padding;
            if padded < self.kernel {
                return Err(NnError::ShapeMismatch {
                    expected: format!("spatial extent >= kernel {}", self.kernel),
                    actual: format!("{:?}", x.shape()),
                });
            }
            outd[a] = (padded - self.kernel) / self.stride + 1;
        }
        Ok((
            n,
            Geometry {
                cin: c,
                k: self.kernel,
                s: self.stride,
                p: self.padding,
                ind: [d, h, w],
                outd,
            },
        ))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, g) = self.geometry(x)?;
        let cout = self.out_channels;
        let (vin, vout) = (g.in_volume(), g.out_volume());
        let kdim = g.rows();
        let plane = g.out_plane();
        let slab = g.slab_planes();
        let mut out = vec![T::zero(); n * cout * vout];
        let wmat = MatRef::row_major(self.weight.data(), cout, kdim);
        out.par_chunks_mut(cout * vout)
            .zip(x.data().par_chunks(g.cin * vin))
            .for_each(|(y, xs)| {
                let mut col = vec![T::zero(); kdim * slab * plane];
                let mut z0 = 0;
                while z0 < g.outd[0] {
                    let nz = slab.min(g.outd[0] - z0);
                    let sv = nz * plane;
                    g.im2col(xs, z0, nz, &mut col[..kdim * sv]);
                    gemm(
                        T::one(),
                        wmat,
                        MatRef::row_major(&col[..kdim * sv], kdim, sv),
                        T::zero(),
                        &mut y[z0 * plane..],
                        vout,
                    );
                    z0 += nz;
                }
                if let Some(b) = &self.bias {
                    for (co, &bv) in b.data().iter().enumerate() {
                        y[co * vout..(co + 1) * vout].iter_mut().for_each(|v| *v += bv);
                    }
                }
            });
        Tensor::from_vec(&[n, cout, g.outd[0], g.outd[1], g.outd[2]], out)
    }

    /// Returns `(dx, [dW, db?])`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        let (n, g) = self.geometry(x)?;
        let cout = self.out_channels;
        dy.expect_shape(&[n, cout, g.outd[0], g.outd[1], g.outd[2]])?;
        let (vin, vout) = (g.in_volume(), g.out_volume());
        let kdim = g.rows();
        let plane = g.out_plane();
        let slab = g.slab_planes();
        let wmat = MatRef::row_major(self.weight.data(), cout, kdim);
        let mut dx = vec![T::zero(); x.numel()];
        let per_sample: Vec<(Vec<T>, Vec<T>)> = dx
            .par_chunks_mut(g.cin * vin)
            .zip(x.data().par_chunks(g.cin * vin))
            .zip(dy.data().par_chunks(cout * vout))
            .map(|((dxs, xs), dys)| {
                let mut dw = vec![T::zero(); cout * kdim];
                let mut col = vec![T::zero(); kdim * slab * plane];
                let mut dcol = vec![T::zero(); kdim * slab * plane];
                let mut z0 = 0;
                while z0 < g.outd[0] {
                    let nz = slab.min(g.outd[0] - z0);
                    let sv = nz * plane;
                    let dy_slab = MatRef {
                        data: &dys[z0 * plane..],
                        rows: cout,
                        cols: sv,
                        rs: vout,
                        cs: 1,
                    };
                    g.im2col(xs, z0, nz, &mut col[..kdim * sv]);
                    gemm(
                        T::one(),
                        dy_slab,
                        MatRef::row_major(&col[..kdim * sv], kdim, sv).t(),
                        T::one(),
                        &mut dw,
                        kdim,
                    );
                    gemm(T::one(), wmat.t(), dy_slab, T::zero(), &mut dcol[..kdim * sv], sv);
                    g.col2im(&dcol[..kdim * sv], z0, nz, dxs);
                    z0 += nz;
                }
                let db = (0..cout)
                    .map(|co| dys[co * vout..(co + 1) * vout].iter().copied().sum())
                    .collect();
                (dw, db)
            })
            .collect();
        let mut dw = vec![T::zero(); cout * kdim];
        let mut db = vec![T::zero(); cout];
        for (w, b) in &per_sample {
            dw.iter_mut().zip(w).for_each(|(a, &v)| *a += v);
            db.iter_mut().zip(b).for_each(|(a, &v)| *a += v);
        }
        let mut grads = vec![Tensor::from_vec(self.weight.shape(), dw)?];
        if self.bias.is_some() {
            grads.push(Tensor::from_vec(&[cout], db)?);
        }
        Ok((Tensor::from_vec(x.shape(), dx)?, grads))
    }
}
