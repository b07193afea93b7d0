//! Latent fusion: masked multi-head cross-attention over frozen
//! enhancer latents.
//!
//! The generator's latent sequence supplies the queries; the frozen
//! enhancer's bottleneck sequence, passed through a learned projection,
//! supplies keys and values. A lookahead mask admits every past frame and
//! a bounded window of future frames, so the fused features at frame `t`
//! depend on the enhancer sequence only up to `t + lookahead`. The fused
//! sequence is concatenated onto the original latents, doubling the
//! feature width. Both streams share the same frame grid, so no
//! positional encoding is added.

use std::rc::Rc;

use autodiff::{Binding, Graph, Linear, ParamStore, VarId};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha20Rng;

use crate::config::AttentionConfig;

/// Attention score offset for disallowed positions; exp(-1e9 - max)
/// underflows, so masked weights are exactly zero after softmax.
pub const MASKED: f64 = -1e9;

/// Additive (T, T) attention mask: entry (t, t') is 0 when frame t may
/// attend to frame t' (t' <= t + lookahead), [`MASKED`] otherwise.
pub fn build_lookahead_mask(t_frames: usize, lookahead: usize) -> ArrayD<f64> {
    let mut m = ArrayD::zeros(IxDyn(&[t_frames, t_frames]));
    for t in 0..t_frames {
        for t2 in (t + lookahead + 1)..t_frames {
            m[[t, t2]] = MASKED;
        }
    }
    m
}

pub struct Conditioner {
    pub cfg: AttentionConfig,
    proj: Linear,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

impl Conditioner {
    /// Registers all parameters under the `cond.` prefix. `source_dim` is
    /// the width of the frozen enhancer's latent vectors.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, cfg: &AttentionConfig, source_dim: usize) -> Self {
        assert_eq!(cfg.model_dim % cfg.num_heads, 0, "head split must be even");
        let d = cfg.model_dim;
        Conditioner {
            cfg: cfg.clone(),
            proj: Linear::new(store, rng, "cond.proj", source_dim, d, true),
            wq: Linear::new(store, rng, "cond.wq", d, d, true),
            wk: Linear::new(store, rng, "cond.wk", d, d, true),
            wv: Linear::new(store, rng, "cond.wv", d, d, true),
            wo: Linear::new(store, rng, "cond.wo", d, d, true),
        }
    }

    /// Aligns enhancer latents (T, source_dim) to the attention width.
    pub fn project_latents(&self, bind: &Binding, d_l: VarId) -> VarId {
        self.proj.forward(bind, d_l)
    }

    /// Per-head masked attention weight matrices, each (T, T). Rows are
    /// convex combinations over the allowed positions.
    fn head_scores(&self, g: &Graph, bind: &Binding, q_in: VarId, kv: VarId) -> Vec<(VarId, VarId)> {
        let t = g.value(q_in).shape()[0];
        assert_eq!(
            g.value(kv).shape()[0],
            t,
            "query and key/value sequences must have equal frame counts"
        );
        let q = self.wq.forward(bind, q_in);
        let k = self.wk.forward(bind, kv);
        let v = self.wv.forward(bind, kv);
        let dh = self.cfg.model_dim / self.cfg.num_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask = Rc::new(build_lookahead_mask(t, self.cfg.lookahead));
        (0..self.cfg.num_heads)
            .map(|h| {
                let qh = g.slice_axis(q, 1, h * dh, dh);
                let kh = g.slice_axis(k, 1, h * dh, dh);
                let vh = g.slice_axis(v, 1, h * dh, dh);
                let scores = g.scale(g.matmul(qh, g.transpose2d(kh)), scale);
                let weights = g.softmax_rows(scores, Some(Rc::clone(&mask)));
                (weights, vh)
            })
            .collect()
    }

    /// Per-head attention weights, exposed for inspection.
    pub fn attention_weights(&self, g: &Graph, bind: &Binding, q_in: VarId, kv: VarId) -> Vec<VarId> {
        self.head_scores(g, bind, q_in, kv).into_iter().map(|(w, _)| w).collect()
    }

    /// Standard multi-head attention with the lookahead mask.
    pub fn masked_mha(&self, g: &Graph, bind: &Binding, q_in: VarId, kv: VarId) -> VarId {
        let per_head: Vec<VarId> = self
            .head_scores(g, bind, q_in, kv)
            .into_iter()
            .map(|(w, vh)| g.matmul(w, vh))
            .collect();
        self.wo.forward(bind, g.concat(1, &per_head))
    }

    /// Fuses generator latents with enhancer latents:
    /// `z_l = concat(g_l, mha(g_l, proj(d_l)))`, width 2 × model_dim.
    pub fn condition(&self, g: &Graph, bind: &Binding, g_l: VarId, d_l: VarId) -> VarId {
        assert_eq!(g.value(g_l).shape()[1], self.cfg.model_dim, "query width must equal model_dim");
        let kv = self.project_latents(bind, d_l);
        let fused = self.masked_mha(g, bind, g_l, kv);
        g.concat(1, &[g_l, fused])
    }
}

/// Width-doubling without conditioning: `z_l = concat(g_l, 0)`. Keeps
/// decoder shapes identical across ablations.
pub fn zero_condition(g: &Graph, g_l: VarId) -> VarId {
    let shape = g.value(g_l).shape().to_vec();
    let zeros = g.input(ArrayD::zeros(IxDyn(&shape)));
    g.concat(1, &[g_l, zeros])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;

    fn seeded(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let data: Vec<f64> = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    fn small_cfg() -> AttentionConfig {
        AttentionConfig { model_dim: 8, num_heads: 2, lookahead: 2 }
    }

    fn build(cfg: &AttentionConfig, source_dim: usize, seed: u64) -> (ParamStore, Conditioner) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let cond = Conditioner::new(&mut store, &mut rng, cfg, source_dim);
        (store, cond)
    }

    #[test]
    fn mask_enumerations() {
        // lookahead 0: strictly lower-triangular-plus-diagonal allowed
        let m = build_lookahead_mask(3, 0);
        for t in 0..3 {
            for t2 in 0..3 {
                let allowed = m[[t, t2]] == 0.0;
                assert_eq!(allowed, t2 <= t);
            }
        }
        // T=5, lookahead 2: row 0 allows {0,1,2}
        let m = build_lookahead_mask(5, 2);
        let row0: Vec<usize> = (0..5).filter(|&j| m[[0, j]] == 0.0).collect();
        assert_eq!(row0, vec![0, 1, 2]);
        // lookahead >= T-1: everything allowed
        let m = build_lookahead_mask(4, 3);
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_maps_source_width_to_model_width() {
        let cfg = small_cfg();
        let (store, cond) = build(&cfg, 12, 1);
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let d_l = g.input(seeded(&[9, 12], 2));
        let p = cond.project_latents(&bind, d_l);
        assert_eq!(g.value(p).shape(), &[9, 8]);
    }

    /// Naive per-frame, per-head attention oracle working directly on the
    /// stored parameter matrices.
    fn attention_oracle(
        store: &ParamStore,
        cfg: &AttentionConfig,
        q_in: &Array2<f64>,
        kv: &Array2<f64>,
    ) -> Array2<f64> {
        let mat = |name: &str| -> Array2<f64> {
            (*store.value(store.find(name).unwrap()))
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
        };
        let vec1 = |name: &str| -> Array1<f64> {
            (*store.value(store.find(name).unwrap()))
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
        };
        let apply = |w: &Array2<f64>, b: &Array1<f64>, x: &Array2<f64>| -> Array2<f64> {
            let mut y = x.dot(&w.t());
            for mut row in y.rows_mut() {
                row += b;
            }
            y
        };
        let q = apply(&mat("cond.wq.w"), &vec1("cond.wq.b"), q_in);
        let k = apply(&mat("cond.wk.w"), &vec1("cond.wk.b"), kv);
        let v = apply(&mat("cond.wv.w"), &vec1("cond.wv.b"), kv);
        let t = q_in.nrows();
        let dh = cfg.model_dim / cfg.num_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cat = Array2::zeros((t, cfg.model_dim));
        for h in 0..cfg.num_heads {
            for ti in 0..t {
                let hi = h * dh;
                let allowed: Vec<usize> = (0..t).filter(|&tj| tj <= ti + cfg.lookahead).collect();
                let scores: Vec<f64> = allowed
                    .iter()
                    .map(|&tj| {
                        (0..dh).map(|d| q[[ti, hi + d]] * k[[tj, hi + d]]).sum::<f64>() * scale
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for d in 0..dh {
                    cat[[ti, hi + d]] = allowed
                        .iter()
                        .zip(&exps)
                        .map(|(&tj, &e)| e / z * v[[tj, hi + d]])
                        .sum();
                }
            }
        }
        apply(&mat("cond.wo.w"), &vec1("cond.wo.b"), &cat)
    }

    #[test]
    fn masked_mha_matches_naive_oracle() {
        let cfg = small_cfg();
        let (store, cond) = build(&cfg, 8, 3);
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let q_arr = seeded(&[7, 8], 4);
        let kv_arr = seeded(&[7, 8], 5);
        let q = g.input(q_arr.clone());
        let kv = g.input(kv_arr.clone());
        let out = cond.masked_mha(&g, &bind, q, kv);
        let want = attention_oracle(
            &store,
            &cfg,
            &q_arr.into_dimensionality().unwrap(),
            &kv_arr.into_dimensionality().unwrap(),
        );
        let got = g.value(out);
        for ti in 0..7 {
            for d in 0..8 {
                assert!(
                    (got[[ti, d]] - want[[ti, d]]).abs() <= 1e-6,
                    "mismatch at ({ti},{d}): {} vs {}",
                    got[[ti, d]],
                    want[[ti, d]]
                );
            }
        }
    }

    #[test]
    fn constant_kv_ignores_the_query() {
        let cfg = small_cfg();
        let (store, cond) = build(&cfg, 8, 6);
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let mut kv_arr = ArrayD::zeros(IxDyn(&[5, 8]));
        for t in 0..5 {
            for d in 0..8 {
                kv_arr[[t, d]] = 0.1 * (d as f64) - 0.3;
            }
        }
        let kv = g.input(kv_arr);
        let out1 = cond.masked_mha(&g, &bind, g.input(seeded(&[5, 8], 7)), kv);
        let out2 = cond.masked_mha(&g, &bind, g.input(seeded(&[5, 8], 8)), kv);
        let (v1, v2) = (g.value(out1), g.value(out2));
        for t in 0..5 {
            for d in 0..8 {
                assert!((v1[[t, d]] - v1[[0, d]]).abs() < 1e-12, "rows must be identical");
                assert!((v1[[t, d]] - v2[[t, d]]).abs() < 1e-12, "query must not matter");
            }
        }
    }

    #[test]
    fn single_frame_passes_projected_value_through() {
        let cfg = small_cfg();
        let (store, cond) = build(&cfg, 8, 9);
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let kv_arr = seeded(&[1, 8], 10);
        let kv = g.input(kv_arr.clone());
        let out = cond.masked_mha(&g, &bind, g.input(seeded(&[1, 8], 11)), kv);
        // oracle: softmax over a single position is 1, so out = Wo(Wv(kv))
        let want = attention_oracle(
            &store,
            &cfg,
            &seeded(&[1, 8], 11).into_dimensionality().unwrap(),
            &kv_arr.into_dimensionality().unwrap(),
        );
        let got = g.value(out);
        for d in 0..8 {
            assert!((got[[0, d]] - want[[0, d]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn conditioning_concatenates_and_respects_lookahead() {
        let cfg = AttentionConfig { model_dim: 8, num_heads: 2, lookahead: 3 };
        let (store, cond) = build(&cfg, 12, 12);
        let t = 10;
        let g_l_arr = seeded(&[t, 8], 13);
        let d_base = seeded(&[t, 12], 14);

        let run = |d_arr: ArrayD<f64>| -> ArrayD<f64> {
            let g = Graph::new();
            let bind = Binding::new(&g, &store);
            let g_l = g.input(g_l_arr.clone());
            let d_l = g.input(d_arr);
            let z = cond.condition(&g, &bind, g_l, d_l);
            (*g.value(z)).clone()
        };

        let z0 = run(d_base.clone());
        assert_eq!(z0.shape(), &[t, 16]);
        // first half is g_l verbatim
        for ti in 0..t {
            for d in 0..8 {
                assert_eq!(z0[[ti, d]], g_l_arr[[ti, d]]);
            }
        }

        // perturbing d_l at frame t0 + lookahead + 1 leaves z_l[0..=t0] bit-identical
        let t0 = 4;
        let mut d_far = d_base.clone();
        for d in 0..12 {
            d_far[[t0 + cfg.lookahead + 1, d]] += 2.5;
        }
        let z_far = run(d_far);
        for ti in 0..=t0 {
            for d in 0..16 {
                assert_eq!(z0[[ti, d]], z_far[[ti, d]], "frame {ti} saw past the lookahead");
            }
        }
        // positive control: perturbing inside the window does change frame t0
        let mut d_near = d_base.clone();
        for d in 0..12 {
            d_near[[t0 + cfg.lookahead, d]] += 2.5;
        }
        let z_near = run(d_near);
        assert!((0..16).any(|d| z_near[[t0, d]] != z0[[t0, d]]));
    }

    #[test]
    fn attention_rows_are_convex_over_allowed_positions() {
        let cfg = small_cfg();
        let (store, cond) = build(&cfg, 8, 15);
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let t = 9;
        let q = g.input(seeded(&[t, 8], 16));
        let kv = g.input(seeded(&[t, 8], 17));
        for w in cond.attention_weights(&g, &bind, q, kv) {
            let wv = g.value(w);
            for ti in 0..t {
                let mut sum = 0.0;
                for tj in 0..t {
                    let x = wv[[ti, tj]];
                    assert!(x >= 0.0);
                    if tj > ti + cfg.lookahead {
                        assert_eq!(x, 0.0, "masked weight must be exactly zero");
                    }
                    sum += x;
                }
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_condition_pads_with_zeros() {
        let g = Graph::new();
        let g_l = g.input(seeded(&[4, 8], 18));
        let z = zero_condition(&g, g_l);
        let zv = g.value(z);
        assert_eq!(zv.shape(), &[4, 16]);
        for t in 0..4 {
            for d in 0..8 {
                assert_eq!(zv[[t, d + 8]], 0.0);
            }
        }
    }

    #[test]
    fn parameter_gradients_flow_through_attention() {
        let cfg = small_cfg();
        let (mut store, cond) = build(&cfg, 10, 19);
        let q_arr = seeded(&[6, 8], 20);
        let d_arr = seeded(&[6, 10], 21);
        let loss_of = |store: &ParamStore| -> (f64, Vec<(autodiff::ParamId, ArrayD<f64>)>) {
            let g = Graph::new();
            let bind = Binding::new(&g, &store);
            let z = cond.condition(&g, &bind, g.input(q_arr.clone()), g.input(d_arr.clone()));
            let loss = g.mean_all(g.square(z));
            let mut grads = g.backward(loss);
            (g.value(loss)[[]], bind.gradients(&mut grads))
        };
        let (_, analytic) = loss_of(&store);
        for name in ["cond.proj.w", "cond.wq.w", "cond.wk.b", "cond.wv.w", "cond.wo.w"] {
            let id = store.find(name).unwrap();
            let got = analytic
                .iter()
                .find(|(pid, _)| *pid == id)
                .map(|(_, a)| a.iter().next().copied().unwrap())
                .unwrap();
            let eps = 1e-5;
            let orig = (*store.value(id)).clone();
            let mut up = orig.clone();
            up.as_slice_mut().unwrap()[0] += eps;
            store.set_value(id, up);
            let (lp, _) = loss_of(&store);
            let mut dn = orig.clone();
            dn.as_slice_mut().unwrap()[0] -= eps;
            store.set_value(id, dn);
            let (lm, _) = loss_of(&store);
            store.set_value(id, orig);
            let fd = (lp - lm) / (2.0 * eps);
            let denom = got.abs().max(fd.abs()).max(1e-7);
            assert!(((got - fd) / denom).abs() < 1e-3, "{name}: analytic {got} vs fd {fd}");
        }
    }
}
