//! Fused single-layer LSTM over a full sequence.
//!
//! Gate layout along the `4h` axis is `[input, forget, cell, output]`. One
//! bias vector per layer (the usual ih/hh bias pair collapses into a single
//! additive term). Initial hidden and cell states are zero.

use crate::graph::{Graph, VarId};
use ndarray::{Array1, Array2, Ix1, Ix2};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Graph {
    /// Run an LSTM over `x (t, in)` with `w_ih (4h, in)`, `w_hh (4h, h)` and
    /// `b (4h,)`, returning the hidden-state sequence `(t, h)`.
    pub fn lstm_seq(&self, x: VarId, w_ih: VarId, w_hh: VarId, b: VarId) -> VarId {
        let xv = self.value(x);
        let wihv = self.value(w_ih);
        let whhv = self.value(w_hh);
        let bv = self.value(b);
        let x2 = xv
            .view()
            .into_dimensionality::<Ix2>()
            .expect("lstm input must be (t, in)");
        let (t_len, in_dim) = x2.dim();
        let wih2 = wihv.view().into_dimensionality::<Ix2>().unwrap();
        let whh2 = whhv.view().into_dimensionality::<Ix2>().unwrap();
        let h4 = wih2.nrows();
        assert_eq!(h4 % 4, 0, "lstm: w_ih rows must be 4*h");
        let h = h4 / 4;
        assert_eq!(wih2.ncols(), in_dim, "lstm: w_ih columns vs input dim");
        assert_eq!(whh2.dim(), (h4, h), "lstm: w_hh must be (4h, h)");
        assert_eq!(bv.shape(), [h4], "lstm: bias must be (4h,)");
        let b1 = bv.view().into_dimensionality::<Ix1>().unwrap();

        // Input projection for all steps in one GEMM: (4h, t).
        let pre_ih = wih2.dot(&x2.t());

        let mut gi = Array2::<f64>::zeros((t_len, h));
        let mut gf = Array2::<f64>::zeros((t_len, h));
        let mut gg = Array2::<f64>::zeros((t_len, h));
        let mut go = Array2::<f64>::zeros((t_len, h));
        let mut cs = Array2::<f64>::zeros((t_len, h));
        let mut h_prev_rows = Array2::<f64>::zeros((t_len, h));
        let mut out = Array2::<f64>::zeros((t_len, h));

        let mut hstate = Array1::<f64>::zeros(h);
        let mut cstate = Array1::<f64>::zeros(h);
        for t in 0..t_len {
            h_prev_rows.row_mut(t).assign(&hstate);
            let pre_hh = whh2.dot(&hstate);
            for k in 0..h {
                let i = sigmoid(pre_ih[[k, t]] + pre_hh[k] + b1[k]);
                let f = sigmoid(pre_ih[[h + k, t]] + pre_hh[h + k] + b1[h + k]);
                let gc = (pre_ih[[2 * h + k, t]] + pre_hh[2 * h + k] + b1[2 * h + k]).tanh();
                let o = sigmoid(pre_ih[[3 * h + k, t]] + pre_hh[3 * h + k] + b1[3 * h + k]);
                let c = f * cstate[k] + i * gc;
                let hv = o * c.tanh();
                gi[[t, k]] = i;
                gf[[t, k]] = f;
                gg[[t, k]] = gc;
                go[[t, k]] = o;
                cs[[t, k]] = c;
                cstate[k] = c;
                hstate[k] = hv;
            }
            out.row_mut(t).assign(&hstate);
        }

        let value = out.into_dyn();
        self.custom(
            &[x, w_ih, w_hh, b],
            value,
            Some(Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let wih2 = wihv.view().into_dimensionality::<Ix2>().unwrap();
                let whh2 = whhv.view().into_dimensionality::<Ix2>().unwrap();
                let x2 = xv.view().into_dimensionality::<Ix2>().unwrap();

                let mut dgates = Array2::<f64>::zeros((4 * h, t_len));
                let mut dh_next = Array1::<f64>::zeros(h);
                let mut dc_next = Array1::<f64>::zeros(h);
                for t in (0..t_len).rev() {
                    for k in 0..h {
                        let dh = g2[[t, k]] + dh_next[k];
                        let (i, f, gc, o, c) =
                            (gi[[t, k]], gf[[t, k]], gg[[t, k]], go[[t, k]], cs[[t, k]]);
                        let tc = c.tanh();
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                        let c_prev = if t == 0 { 0.0 } else { cs[[t - 1, k]] };
                        dgates[[k, t]] = dc * gc * i * (1.0 - i);
                        dgates[[h + k, t]] = dc * c_prev * f * (1.0 - f);
                        dgates[[2 * h + k, t]] = dc * i * (1.0 - gc * gc);
                        dgates[[3 * h + k, t]] = dh * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                    let dg_col = dgates.column(t).to_owned();
                    dh_next = whh2.t().dot(&dg_col);
                }

                let gx = dgates.t().dot(&wih2);
                let gwih = dgates.dot(&x2);
                let gwhh = dgates.dot(&h_prev_rows);
                let gb = dgates.sum_axis(ndarray::Axis(1));
                sink(0, gx.into_dyn());
                sink(1, gwih.into_dyn());
                sink(2, gwhh.into_dyn());
                sink(3, gb.into_dyn());
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_grads, seeded_tensor};

    #[test]
    fn lstm_state_recursion_matches_scalar_oracle() {
        // h = 1, so the recursion can be replayed with plain scalar math.
        let x = seeded_tensor(&[4, 1], 71);
        let wih = seeded_tensor(&[4, 1], 72);
        let whh = seeded_tensor(&[4, 1], 73);
        let b = seeded_tensor(&[4], 74);

        let g = Graph::new();
        let (xi, wi, wh, bi) = (
            g.input(x.clone()),
            g.input(wih.clone()),
            g.input(whh.clone()),
            g.input(b.clone()),
        );
        let y = g.lstm_seq(xi, wi, wh, bi);
        let yv = g.value(y);

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut hp, mut cp) = (0.0f64, 0.0f64);
        for t in 0..4 {
            let xt = x[[t, 0]];
            let i = sig(wih[[0, 0]] * xt + whh[[0, 0]] * hp + b[[0]]);
            let f = sig(wih[[1, 0]] * xt + whh[[1, 0]] * hp + b[[1]]);
            let gc = (wih[[2, 0]] * xt + whh[[2, 0]] * hp + b[[2]]).tanh();
            let o = sig(wih[[3, 0]] * xt + whh[[3, 0]] * hp + b[[3]]);
            cp = f * cp + i * gc;
            hp = o * cp.tanh();
            assert!(
                (yv[[t, 0]] - hp).abs() < 1e-12,
                "step {t}: {} vs oracle {hp}",
                yv[[t, 0]]
            );
        }
    }

    #[test]
    fn lstm_grads_match_finite_differences() {
        check_grads(&[&[5, 3], &[8, 3], &[8, 2], &[8]], 75, |g, xs| {
            let y = g.lstm_seq(xs[0], xs[1], xs[2], xs[3]);
            g.sum_all(g.square(y))
        });
    }

    #[test]
    fn lstm_is_causal() {
        // Changing x at step t must not affect outputs before t.
        let x0 = seeded_tensor(&[6, 2], 76);
        let wih = seeded_tensor(&[12, 2], 77);
        let whh = seeded_tensor(&[12, 3], 78);
        let b = seeded_tensor(&[12], 79);
        let run = |x: &ndarray::ArrayD<f64>| {
            let g = Graph::new();
            let y = g.lstm_seq(
                g.input(x.clone()),
                g.input(wih.clone()),
                g.input(whh.clone()),
                g.input(b.clone()),
            );
            g.value(y)
        };
        let base = run(&x0);
        let mut pert = x0.clone();
        pert[[3, 0]] += 0.7;
        let out = run(&pert);
        for t in 0..3 {
            for k in 0..3 {
                assert_eq!(base[[t, k]], out[[t, k]], "output changed before the edit");
            }
        }
        assert!((base[[3, 0]] - out[[3, 0]]).abs() > 0.0);
    }
}
