//! Channel-wise layer normalization for `(channels, time, freq)` tensors:
//! each `(t, f)` position is normalized across the channel axis, then scaled
//! and shifted by per-channel affine parameters.

use crate::graph::{Graph, VarId};
use ndarray::{ArrayD, Ix1, Ix3, IxDyn};

impl Graph {
    /// Normalize `x (c, t, f)` over axis 0 with learnable `gamma (c,)` and
    /// `beta (c,)`. Uses the biased variance plus `eps` inside the sqrt.
    pub fn channel_norm(&self, x: VarId, gamma: VarId, beta: VarId, eps: f64) -> VarId {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let x3 = xv
            .view()
            .into_dimensionality::<Ix3>()
            .expect("channel_norm input must be (c, t, f)");
        let (c, t, f) = x3.dim();
        assert_eq!(gv.shape(), [c], "channel_norm: gamma must be ({c},)");
        assert_eq!(bv.shape(), [c], "channel_norm: beta must be ({c},)");
        let g1 = gv.view().into_dimensionality::<Ix1>().unwrap();
        let b1 = bv.view().into_dimensionality::<Ix1>().unwrap();

        let mut xhat = ArrayD::<f64>::zeros(IxDyn(&[c, t, f]));
        let mut inv_s = ndarray::Array2::<f64>::zeros((t, f));
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[c, t, f]));
        {
            let mut xh3 = xhat.view_mut().into_dimensionality::<Ix3>().unwrap();
            let mut out3 = out.view_mut().into_dimensionality::<Ix3>().unwrap();
            for it in 0..t {
                for jf in 0..f {
                    let mut mean = 0.0;
                    for ic in 0..c {
                        mean += x3[[ic, it, jf]];
                    }
                    mean /= c as f64;
                    let mut var = 0.0;
                    for ic in 0..c {
                        let d = x3[[ic, it, jf]] - mean;
                        var += d * d;
                    }
                    var /= c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    inv_s[[it, jf]] = inv;
                    for ic in 0..c {
                        let xh = (x3[[ic, it, jf]] - mean) * inv;
                        xh3[[ic, it, jf]] = xh;
                        out3[[ic, it, jf]] = xh * g1[ic] + b1[ic];
                    }
                }
            }
        }

        self.custom(
            &[x, gamma, beta],
            out,
            Some(Box::new(move |g, sink| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let xh3 = xhat.view().into_dimensionality::<Ix3>().unwrap();
                let g1 = gv.view().into_dimensionality::<Ix1>().unwrap();
                let mut gx = ArrayD::<f64>::zeros(IxDyn(&[c, t, f]));
                let mut ggamma = ArrayD::<f64>::zeros(IxDyn(&[c]));
                let mut gbeta = ArrayD::<f64>::zeros(IxDyn(&[c]));
                {
                    let mut gx3 = gx.view_mut().into_dimensionality::<Ix3>().unwrap();
                    for it in 0..t {
                        for jf in 0..f {
                            let mut sum_dxh = 0.0;
                            let mut sum_dxh_xh = 0.0;
                            for ic in 0..c {
                                let dxh = g3[[ic, it, jf]] * g1[ic];
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * xh3[[ic, it, jf]];
                                ggamma[[ic]] += g3[[ic, it, jf]] * xh3[[ic, it, jf]];
                                gbeta[[ic]] += g3[[ic, it, jf]];
                            }
                            let mean_dxh = sum_dxh / c as f64;
                            let mean_dxh_xh = sum_dxh_xh / c as f64;
                            let inv = inv_s[[it, jf]];
                            for ic in 0..c {
                                let dxh = g3[[ic, it, jf]] * g1[ic];
                                gx3[[ic, it, jf]] =
                                    (dxh - mean_dxh - xh3[[ic, it, jf]] * mean_dxh_xh) * inv;
                            }
                        }
                    }
                }
                sink(0, gx);
                sink(1, ggamma);
                sink(2, gbeta);
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_grads, seeded_tensor};

    #[test]
    fn channel_norm_rows_have_zero_mean_unit_variance() {
        let g = Graph::new();
        let x = g.input(seeded_tensor(&[6, 3, 4], 81));
        let gamma = g.input(ArrayD::ones(IxDyn(&[6])));
        let beta = g.input(ArrayD::zeros(IxDyn(&[6])));
        let y = g.channel_norm(x, gamma, beta, 1e-12);
        let yv = g.value(y);
        let y3 = yv.view().into_dimensionality::<Ix3>().unwrap();
        for it in 0..3 {
            for jf in 0..4 {
                let mut mean = 0.0;
                let mut var = 0.0;
                for ic in 0..6 {
                    mean += y3[[ic, it, jf]];
                }
                mean /= 6.0;
                for ic in 0..6 {
                    var += (y3[[ic, it, jf]] - mean) * (y3[[ic, it, jf]] - mean);
                }
                var /= 6.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn channel_norm_grads_match_finite_differences() {
        check_grads(&[&[4, 3, 2], &[4], &[4]], 82, |g, xs| {
            let y = g.channel_norm(xs[0], xs[1], xs[2], 1e-5);
            let w = g.input(seeded_tensor(&[4, 3, 2], 83));
            g.sum_all(g.mul(y, w))
        });
    }
}
