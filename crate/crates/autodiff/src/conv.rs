//! 2-D convolution and transposed convolution over `(channels, time, freq)`
//! tensors, lowered to GEMM via im2col / col2im.
//!
//! Backward passes recompute the im2col buffer instead of capturing it, so a
//! graph node only retains its output plus `Rc` handles to its inputs. That
//! keeps single forward passes of large models within a desktop memory
//! budget.

use crate::graph::{Graph, VarId};
use ndarray::{Array2, ArrayD, Ix3, IxDyn};

/// Geometry of a strided, dilated, asymmetrically padded convolution.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dGeom {
    /// (time, freq) stride.
    pub stride: (usize, usize),
    /// (time, freq) dilation.
    pub dilation: (usize, usize),
    /// (time_before, time_after, freq_before, freq_after) zero padding.
    pub pad: (usize, usize, usize, usize),
}

impl Conv2dGeom {
    pub fn unit() -> Self {
        Conv2dGeom {
            stride: (1, 1),
            dilation: (1, 1),
            pad: (0, 0, 0, 0),
        }
    }

    /// Output grid for an input of `(t, f)` with kernel `(kt, kf)`.
    pub fn out_dims(&self, t: usize, f: usize, kt: usize, kf: usize) -> (usize, usize) {
        let eff_kt = (kt - 1) * self.dilation.0 + 1;
        let eff_kf = (kf - 1) * self.dilation.1 + 1;
        let tp = t + self.pad.0 + self.pad.1;
        let fp = f + self.pad.2 + self.pad.3;
        assert!(
            tp >= eff_kt && fp >= eff_kf,
            "conv2d: input ({t}, {f}) too small for effective kernel ({eff_kt}, {eff_kf}) with padding"
        );
        ((tp - eff_kt) / self.stride.0 + 1, (fp - eff_kf) / self.stride.1 + 1)
    }
}

/// Geometry of a transposed convolution. `crop` trims the full output
/// `((t-1)*stride + kernel)` on each side.
#[derive(Clone, Copy, Debug)]
pub struct ConvT2dGeom {
    pub stride: (usize, usize),
    /// (time_front, time_back, freq_front, freq_back) removed from the full output.
    pub crop: (usize, usize, usize, usize),
}

impl ConvT2dGeom {
    pub fn out_dims(&self, t: usize, f: usize, kt: usize, kf: usize) -> (usize, usize) {
        let t_full = (t - 1) * self.stride.0 + kt;
        let f_full = (f - 1) * self.stride.1 + kf;
        assert!(
            t_full > self.crop.0 + self.crop.1 && f_full > self.crop.2 + self.crop.3,
            "conv_transpose2d: crop exceeds full output ({t_full}, {f_full})"
        );
        (t_full - self.crop.0 - self.crop.1, f_full - self.crop.2 - self.crop.3)
    }
}

/// Valid output range along one axis: positions `o` in `start..end` satisfy
/// `0 <= o*stride + k*dil - pad < size`.
fn valid_range(size: usize, stride: usize, dil: usize, pad: usize, k: usize, grid: usize) -> (usize, usize) {
    let off = k as isize * dil as isize - pad as isize;
    let start = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let last_num = size as isize - 1 - off;
    if last_num < 0 {
        return (0, 0);
    }
    let end = (last_num as usize / stride + 1).min(grid);
    (start.min(end), end)
}

/// Gather patches of `x` `(c, t, f)` into a `(c*kt*kf, to*fo)` matrix.
fn im2col(
    x: &ArrayD<f64>,
    kt: usize,
    kf: usize,
    geom: &Conv2dGeom,
    to: usize,
    fo: usize,
) -> Array2<f64> {
    let shape = x.shape();
    let (c, t, f) = (shape[0], shape[1], shape[2]);
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let (st, sf) = geom.stride;
    let (dt, df) = geom.dilation;
    let (pt0, _, pf0, _) = geom.pad;
    let mut col = Array2::zeros((c * kt * kf, to * fo));
    {
        let cs = col.as_slice_mut().unwrap();
        for ci in 0..c {
            for it in 0..kt {
                let (t_start, t_end) = valid_range(t, st, dt, pt0, it, to);
                for jf in 0..kf {
                    let row = (ci * kt + it) * kf + jf;
                    let row_base = row * (to * fo);
                    let (f_start, f_end) = valid_range(f, sf, df, pf0, jf, fo);
                    let f_off = jf as isize * df as isize - pf0 as isize;
                    for ot in t_start..t_end {
                        let tin = (ot * st) as isize + it as isize * dt as isize - pt0 as isize;
                        let x_base = (ci * t + tin as usize) * f;
                        let c_base = row_base + ot * fo;
                        for of in f_start..f_end {
                            let fin = ((of * sf) as isize + f_off) as usize;
                            cs[c_base + of] = xs[x_base + fin];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Reshapes a matrix product, tolerating the reversed layout ndarray
/// returns for some transposed-operand products.
fn reshape_std(a: Array2<f64>, shape: &[usize]) -> ArrayD<f64> {
    let a = if a.is_standard_layout() {
        a
    } else {
        Array2::from_shape_vec(a.raw_dim(), a.iter().copied().collect()).unwrap()
    };
    a.into_shape_with_order(IxDyn(shape)).unwrap()
}

/// Adjoint of [`im2col`]: scatter-add a `(c*kt*kf, to*fo)` matrix back onto
/// an input-shaped `(c, t, f)` tensor.
fn col2im(
    col: &Array2<f64>,
    c: usize,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
    geom: &Conv2dGeom,
    to: usize,
    fo: usize,
) -> ArrayD<f64> {
    let mut x = ArrayD::zeros(IxDyn(&[c, t, f]));
    let (st, sf) = geom.stride;
    let (dt, df) = geom.dilation;
    let (pt0, _, pf0, _) = geom.pad;
    {
        let xs = x.as_slice_mut().unwrap();
        // `col` may arrive in reversed layout when it comes out of a
        // transposed matrix product; normalize before linear indexing.
        let col = col.as_standard_layout();
        let cs = col.as_slice().unwrap();
        for ci in 0..c {
            for it in 0..kt {
                let (t_start, t_end) = valid_range(t, st, dt, pt0, it, to);
                for jf in 0..kf {
                    let row = (ci * kt + it) * kf + jf;
                    let row_base = row * (to * fo);
                    let (f_start, f_end) = valid_range(f, sf, df, pf0, jf, fo);
                    let f_off = jf as isize * df as isize - pf0 as isize;
                    for ot in t_start..t_end {
                        let tin = (ot * st) as isize + it as isize * dt as isize - pt0 as isize;
                        let x_base = (ci * t + tin as usize) * f;
                        let c_base = row_base + ot * fo;
                        for of in f_start..f_end {
                            let fin = ((of * sf) as isize + f_off) as usize;
                            xs[x_base + fin] += cs[c_base + of];
                        }
                    }
                }
            }
        }
    }
    x
}

impl Graph {
    /// 2-D convolution: `x (ci, t, f)` with `w (co, ci, kt, kf)` producing
    /// `(co, to, fo)`. Bias, if any, is added separately.
    pub fn conv2d(&self, x: VarId, w: VarId, geom: Conv2dGeom) -> VarId {
        let xv = self.value(x);
        let wv = self.value(w);
        let xs = xv.shape().to_vec();
        let ws = wv.shape().to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be (c, t, f)");
        assert_eq!(ws.len(), 4, "conv2d weight must be (co, ci, kt, kf)");
        assert_eq!(xs[0], ws[1], "conv2d: channel mismatch {} vs {}", xs[0], ws[1]);
        let (ci, t, f) = (xs[0], xs[1], xs[2]);
        let (co, kt, kf) = (ws[0], ws[2], ws[3]);
        let (to, fo) = geom.out_dims(t, f, kt, kf);

        let col = im2col(&xv, kt, kf, &geom, to, fo);
        let w2 = wv.to_shape((co, ci * kt * kf)).unwrap();
        let y = reshape_std(w2.dot(&col), &[co, to, fo]);
        drop(w2);

        self.custom(
            &[x, w],
            y,
            Some(Box::new(move |g, sink| {
                let g2 = g.to_shape((co, to * fo)).unwrap();
                // Recompute the patch matrix rather than retaining it.
                let col = im2col(&xv, kt, kf, &geom, to, fo);
                let gw = reshape_std(g2.dot(&col.t()), &[co, ci, kt, kf]);
                let w2 = wv.to_shape((co, ci * kt * kf)).unwrap();
                let gcol = w2.t().dot(&g2);
                let gx = col2im(&gcol, ci, t, f, kt, kf, &geom, to, fo);
                sink(0, gx);
                sink(1, gw);
            })),
        )
    }

    /// Transposed 2-D convolution: `x (ci, t, f)` with `w (ci, co, kt, kf)`,
    /// upsampling by `stride` and trimming `crop` from the full output.
    pub fn conv_transpose2d(&self, x: VarId, w: VarId, geom: ConvT2dGeom) -> VarId {
        let xv = self.value(x);
        let wv = self.value(w);
        let xs = xv.shape().to_vec();
        let ws = wv.shape().to_vec();
        assert_eq!(xs.len(), 3, "conv_transpose2d input must be (c, t, f)");
        assert_eq!(ws.len(), 4, "conv_transpose2d weight must be (ci, co, kt, kf)");
        assert_eq!(
            xs[0], ws[0],
            "conv_transpose2d: channel mismatch {} vs {}",
            xs[0], ws[0]
        );
        let (ci, t, f) = (xs[0], xs[1], xs[2]);
        let (co, kt, kf) = (ws[1], ws[2], ws[3]);
        let (st, sf) = geom.stride;
        let t_full = (t - 1) * st + kt;
        let f_full = (f - 1) * sf + kf;
        // Validates that the crop fits inside the full output.
        let _ = geom.out_dims(t, f, kt, kf);

        // col[(co*kt+it)*kf+jf, i*f+j] contributes to y[co, i*st+it, j*sf+jf]:
        // exactly the col2im scatter with stride as the output step.
        let scatter = Conv2dGeom {
            stride: (st, sf),
            dilation: (1, 1),
            pad: (0, 0, 0, 0),
        };
        let w2 = wv.to_shape((ci, co * kt * kf)).unwrap();
        let x2 = xv.to_shape((ci, t * f)).unwrap();
        let col = w2.t().dot(&x2);
        drop(w2);
        drop(x2);
        let y_full = col2im(&col, co, t_full, f_full, kt, kf, &scatter, t, f);
        let y3 = y_full.view().into_dimensionality::<Ix3>().unwrap();
        let y = y3
            .slice(ndarray::s![
                ..,
                geom.crop.0..t_full - geom.crop.1,
                geom.crop.2..f_full - geom.crop.3
            ])
            .to_owned()
            .into_dyn();

        self.custom(
            &[x, w],
            y,
            Some(Box::new(move |g, sink| {
                let mut g_full = ArrayD::zeros(IxDyn(&[co, t_full, f_full]));
                {
                    let mut gf3 = g_full.view_mut().into_dimensionality::<Ix3>().unwrap();
                    let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                    gf3.slice_mut(ndarray::s![
                        ..,
                        geom.crop.0..t_full - geom.crop.1,
                        geom.crop.2..f_full - geom.crop.3
                    ])
                    .assign(&g3);
                }
                let gcol = im2col(&g_full, kt, kf, &scatter, t, f);
                let w2 = wv.to_shape((ci, co * kt * kf)).unwrap();
                let x2 = xv.to_shape((ci, t * f)).unwrap();
                let gx = reshape_std(w2.dot(&gcol), &[ci, t, f]);
                let gw = reshape_std(x2.dot(&gcol.t()), &[ci, co, kt, kf]);
                sink(0, gx);
                sink(1, gw);
            })),
        )
    }
}
