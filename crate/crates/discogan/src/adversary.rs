//! Multi-scale STFT discriminator and its hinge/feature-matching losses.
//!
//! One identical conv net per STFT scale, each consuming the stacked
//! (real, imaginary) planes of that scale's spectrogram. Frequency is
//! strided down in the middle layers while time is preserved, and the
//! final layer emits a one-channel logit map whose frequency axis is
//! averaged into one logit per frame. Losses follow the hinge GAN form;
//! feature matching compares every layer's output (the logit map
//! included) with a per-frame L1 norm.

use autodiff::{Binding, Conv2d, Conv2dGeom, Graph, ParamStore, VarId};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::AdversaryConfig;
use crate::error::{DiscoganError, Result};
use crate::spectral::graph_stft;

const LEAK: f64 = 0.2;
const LAYERS: usize = 5;

/// One scale's outputs: every layer's (post-activation) feature map and
/// the per-frame logits.
pub struct ScaleOutputs {
    /// Layer outputs, shallow to deep; the last is the raw logit map.
    pub features: Vec<VarId>,
    /// (T_k,) — logit map averaged over its frequency axis.
    pub frame_logits: VarId,
}

struct ScaleNet {
    size: usize,
    layers: Vec<Conv2d>,
}

pub struct Adversary {
    pub cfg: AdversaryConfig,
    pub store: ParamStore,
    nets: Vec<ScaleNet>,
}

impl Adversary {
    pub fn new(cfg: &AdversaryConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ch = cfg.base_channels;
        let nets = cfg
            .scales
            .iter()
            .map(|&size| {
                let name = |l: usize| format!("adv.s{size}.l{l}");
                // (kernel, geometry, cin, cout) per layer: symmetric padding
                // keeps time length constant; layers 2-4 stride frequency.
                let wide = |dil_t: usize, stride_f: usize| Conv2dGeom {
                    stride: (1, stride_f),
                    dilation: (dil_t, 1),
                    pad: (dil_t, dil_t, 4, 4),
                };
                let layers = vec![
                    Conv2d::new(&mut store, &mut rng, &name(0), 2, ch, (3, 9), wide(1, 1), true, true),
                    Conv2d::new(&mut store, &mut rng, &name(1), ch, ch, (3, 9), wide(1, 2), true, true),
                    Conv2d::new(&mut store, &mut rng, &name(2), ch, ch, (3, 9), wide(2, 2), true, true),
                    Conv2d::new(&mut store, &mut rng, &name(3), ch, ch, (3, 9), wide(4, 2), true, true),
                    Conv2d::new(
                        &mut store,
                        &mut rng,
                        &name(4),
                        ch,
                        1,
                        (3, 3),
                        Conv2dGeom { stride: (1, 1), dilation: (1, 1), pad: (1, 1, 1, 1) },
                        true,
                        true,
                    ),
                ];
                ScaleNet { size, layers }
            })
            .collect();
        Adversary { cfg: cfg.clone(), store, nets }
    }

    /// Runs every scale net on a waveform node (differentiable through
    /// the STFT, so generator gradients flow into the fake branch).
    pub fn forward(&self, g: &Graph, bind: &Binding, wave: VarId) -> Result<Vec<ScaleOutputs>> {
        let len = g.value(wave).len();
        let largest = *self.cfg.scales.iter().max().expect("validated non-empty");
        if len < largest {
            return Err(DiscoganError::invalid(format!(
                "clip of {len} samples is shorter than the largest scale window {largest}"
            )));
        }
        Ok(self
            .nets
            .iter()
            .map(|net| {
                let spec = graph_stft(g, wave, net.size, net.size / 4);
                let mut x = spec;
                let mut features = Vec::with_capacity(LAYERS);
                for (l, conv) in net.layers.iter().enumerate() {
                    x = conv.forward(bind, x);
                    if l + 1 < LAYERS {
                        x = g.leaky_relu(x, LEAK);
                    }
                    features.push(x);
                }
                let shape = g.shape(x);
                let plane = g.reshape(x, &[shape[1], shape[2]]);
                let frame_logits = g.row_means(plane);
                ScaleOutputs { features, frame_logits }
            })
            .collect())
    }
}

/// Generator-side hinge: (1/K) Σ_k (1/T_k) Σ_t max(0, 1 − D_{k,t}(ŝ)).
pub fn gen_adv_loss(g: &Graph, fake: &[ScaleOutputs]) -> VarId {
    let per_scale: Vec<VarId> = fake
        .iter()
        .map(|s| g.mean_all(g.hinge_one_minus(s.frame_logits)))
        .collect();
    average(g, &per_scale)
}

/// Discriminator objective: hinge on real logits toward +1 and fake
/// logits toward −1, averaged like [`gen_adv_loss`].
pub fn disc_train_loss(g: &Graph, real: &[ScaleOutputs], fake: &[ScaleOutputs]) -> VarId {
    assert_eq!(real.len(), fake.len(), "scale count mismatch");
    let per_scale: Vec<VarId> = real
        .iter()
        .zip(fake)
        .map(|(r, f)| {
            let lr = g.mean_all(g.hinge_one_minus(r.frame_logits));
            let lf = g.mean_all(g.hinge_one_minus(g.neg(f.frame_logits)));
            g.add(lr, lf)
        })
        .collect();
    average(g, &per_scale)
}

/// Feature matching: (1/KL) Σ_{k,l} (1/T_k) Σ_t ‖D^l_k(s) − D^l_k(ŝ)‖₁,
/// the per-frame norm summing channels × frequency.
pub fn feat_match_loss(g: &Graph, real: &[ScaleOutputs], fake: &[ScaleOutputs]) -> VarId {
    assert_eq!(real.len(), fake.len(), "scale count mismatch");
    let mut terms = Vec::new();
    let mut layer_count = 0usize;
    for (r, f) in real.iter().zip(fake) {
        assert_eq!(r.features.len(), f.features.len(), "layer count mismatch");
        layer_count = r.features.len();
        for (&rf, &ff) in r.features.iter().zip(&f.features) {
            let t_k = g.shape(rf)[1];
            let sum = g.sum_all(g.abs(g.sub(rf, ff)));
            terms.push(g.scale(sum, 1.0 / t_k as f64));
        }
    }
    let total = sum_nodes(g, &terms);
    g.scale(total, 1.0 / (real.len() * layer_count) as f64)
}

fn sum_nodes(g: &Graph, nodes: &[VarId]) -> VarId {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n);
    }
    acc
}

fn average(g: &Graph, nodes: &[VarId]) -> VarId {
    g.scale(sum_nodes(g, nodes), 1.0 / nodes.len() as f64)
}
