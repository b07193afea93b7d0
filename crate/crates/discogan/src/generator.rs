//! Time–frequency generator: conv encoder, LSTM bottleneck, conditioned
//! transposed-conv decoder.
//!
//! The encoder downsamples only along frequency, so the frame count is
//! preserved end to end and each decoder stage can be modulated by the
//! resolution-matched encoder skip through a FiLM block (scale and shift,
//! both gated by a learned attention map). The bottleneck flattens each
//! frame, runs a two-layer LSTM, and projects to a compact latent
//! sequence; the decoder starts from the (possibly conditioned,
//! width-doubled) latent sequence.
//!
//! Every kernel is causally padded along time: activations at frame `t`
//! never read input frames after `t`.

use autodiff::{Binding, ChannelNorm, Conv2d, Conv2dGeom, ConvT2d, ConvT2dGeom, Graph, Linear, Lstm, ParamStore, VarId};
use rand_chacha::ChaCha20Rng;

use crate::blocks::{flatten_cf, unflatten_cf};
use crate::config::GeneratorConfig;

/// (3,3) stride-1 geometry: causal in time, centered in frequency.
fn same_geom() -> Conv2dGeom {
    Conv2dGeom { stride: (1, 1), dilation: (1, 1), pad: (2, 0, 1, 1) }
}

/// (2,4) downsampler: causal in time, frequency halved.
fn down_geom() -> Conv2dGeom {
    Conv2dGeom { stride: (1, 2), dilation: (1, 1), pad: (1, 0, 1, 1) }
}

/// (2,4) upsampler mirroring [`down_geom`]: frequency doubled, the one
/// surplus time row cropped at the end so the map stays causal.
fn up_geom() -> ConvT2dGeom {
    ConvT2dGeom { stride: (1, 2), crop: (0, 1, 1, 1) }
}

/// (1,3) pointwise-in-time geometry used by the FiLM convolutions.
fn film_geom() -> Conv2dGeom {
    Conv2dGeom { stride: (1, 1), dilation: (1, 1), pad: (0, 0, 1, 1) }
}

/// Pre-activation residual unit: `x + conv(elu(norm(conv(elu(norm(x))))))`
/// with two (3,3) convolutions at constant channel width.
pub struct ResidualUnit {
    norm1: ChannelNorm,
    conv1: Conv2d,
    norm2: ChannelNorm,
    conv2: Conv2d,
}

impl ResidualUnit {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, channels: usize) -> Self {
        ResidualUnit {
            norm1: ChannelNorm::new(store, &format!("{name}.norm1"), channels),
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), channels, channels, (3, 3), same_geom(), true, false),
            norm2: ChannelNorm::new(store, &format!("{name}.norm2"), channels),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), channels, channels, (3, 3), same_geom(), true, false),
        }
    }

    pub fn forward(&self, g: &Graph, bind: &Binding, x: VarId) -> VarId {
        let h = self.conv1.forward(bind, g.elu(self.norm1.forward(bind, x)));
        let h = self.conv2.forward(bind, g.elu(self.norm2.forward(bind, h)));
        g.add(x, h)
    }
}

/// FiLM conditioning block driven by an encoder skip `e`:
///
/// ```text
/// γ = ReLU(Conv(e))      β = σ(Conv(e))      A = σ(Conv(ReLU(Conv(e))))
/// out = d_f + (γ ⊙ A) ⊙ d_f + (β ⊙ A)
/// ```
///
/// A single attention map `A` (computed through an 8× channel bottleneck)
/// gates both the scale and the shift, so a saturated-off `A` makes the
/// block an exact identity.
pub struct FilmBlock {
    gamma: Conv2d,
    beta: Conv2d,
    attn_reduce: Conv2d,
    attn_expand: Conv2d,
}

impl FilmBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, channels: usize) -> Self {
        let reduced = (channels / 8).max(1);
        FilmBlock {
            gamma: Conv2d::new(store, rng, &format!("{name}.gamma"), channels, channels, (1, 3), film_geom(), true, false),
            beta: Conv2d::new(store, rng, &format!("{name}.beta"), channels, channels, (1, 3), film_geom(), true, false),
            attn_reduce: Conv2d::new(store, rng, &format!("{name}.a1"), channels, reduced, (1, 3), film_geom(), true, false),
            attn_expand: Conv2d::new(store, rng, &format!("{name}.a2"), reduced, channels, (1, 3), film_geom(), true, false),
        }
    }

    /// The three modulation maps, each shaped like `e`.
    pub fn maps(&self, g: &Graph, bind: &Binding, e: VarId) -> (VarId, VarId, VarId) {
        let gamma = g.relu(self.gamma.forward(bind, e));
        let beta = g.sigmoid(self.beta.forward(bind, e));
        let attn = g.sigmoid(self.attn_expand.forward(bind, g.relu(self.attn_reduce.forward(bind, e))));
        (gamma, beta, attn)
    }

    pub fn forward(&self, g: &Graph, bind: &Binding, d_f: VarId, e: VarId) -> VarId {
        let (gamma, beta, attn) = self.maps(g, bind, e);
        let scaled = g.mul(g.mul(gamma, attn), d_f);
        let shifted = g.mul(beta, attn);
        g.add(d_f, g.add(scaled, shifted))
    }
}

/// Encoder products: the latent sequence and the per-block skips
/// (pre-downsampling, shallow to deep).
pub struct EncoderState {
    /// (T, latent_dim)
    pub g_l: VarId,
    /// Feature maps at frequency sizes F, F/2, …, F/2^(B-1).
    pub skips: Vec<VarId>,
}

pub struct Generator {
    pub cfg: GeneratorConfig,
    init: Conv2d,
    enc: Vec<(ResidualUnit, Conv2d)>,
    lstm: Lstm,
    to_latent: Linear,
    from_latent: Linear,
    dec: Vec<(ConvT2d, FilmBlock, ResidualUnit)>,
    out: Conv2d,
    f_in: usize,
    f_bottom: usize,
    c_bottom: usize,
}

impl Generator {
    /// Registers all parameters in `store` under the `gen.` prefix.
    /// `f_in` is the model's frequency size (window/2 after compression).
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, cfg: &GeneratorConfig, f_in: usize) -> Self {
        let sched = cfg.block_channels();
        assert!(
            f_in % (1 << cfg.num_blocks) == 0,
            "frequency size {f_in} not divisible by 2^{}",
            cfg.num_blocks
        );

        let init = Conv2d::new(store, rng, "gen.init", 2, cfg.base_channels, (3, 3), same_geom(), true, false);
        let mut enc = Vec::new();
        let mut cin = cfg.base_channels;
        for (k, &cout) in sched.iter().enumerate() {
            let res = ResidualUnit::new(store, rng, &format!("gen.enc.{k}.res"), cin);
            let down = Conv2d::new(store, rng, &format!("gen.enc.{k}.down"), cin, cout, (2, 4), down_geom(), true, false);
            enc.push((res, down));
            cin = cout;
        }
        let c_bottom = *sched.last().expect("at least one block");
        let f_bottom = f_in >> cfg.num_blocks;
        let flat = c_bottom * f_bottom;

        let lstm = Lstm::new(store, rng, "gen.lstm", flat, cfg.lstm_units, 2);
        let to_latent = Linear::new(store, rng, "gen.to_latent", cfg.lstm_units, cfg.latent_dim, true);
        let from_latent = Linear::new(store, rng, "gen.from_latent", 2 * cfg.latent_dim, flat, true);

        let mut dec = Vec::new();
        let b = cfg.num_blocks;
        let mut din = c_bottom;
        for k in 0..b {
            // mirror of encoder block b-1-k
            let dout = if k + 1 == b { cfg.base_channels } else { sched[b - 2 - k] };
            let up = ConvT2d::new(store, rng, &format!("gen.dec.{k}.up"), din, dout, (2, 4), up_geom(), true);
            let film = FilmBlock::new(store, rng, &format!("gen.dec.{k}.film"), dout);
            let res = ResidualUnit::new(store, rng, &format!("gen.dec.{k}.res"), dout);
            dec.push((up, film, res));
            din = dout;
        }
        let out = Conv2d::new(store, rng, "gen.out", cfg.base_channels, 3, (3, 3), same_geom(), true, false);

        Generator { cfg: cfg.clone(), init, enc, lstm, to_latent, from_latent, dec, out, f_in, f_bottom, c_bottom }
    }

    /// Encoder pass over a (2, T, F) compressed image node.
    pub fn enc_forward(&self, g: &Graph, bind: &Binding, img: VarId) -> EncoderState {
        let shape = g.value(img).shape().to_vec();
        assert_eq!(shape.len(), 3, "encoder input must be (2, T, F)");
        assert_eq!(shape[0], 2, "encoder input must have 2 channels");
        assert_eq!(shape[2], self.f_in, "encoder input frequency size {} != {}", shape[2], self.f_in);

        let mut x = self.init.forward(bind, img);
        let mut skips = Vec::with_capacity(self.enc.len());
        for (res, down) in &self.enc {
            x = res.forward(g, bind, x);
            skips.push(x);
            x = g.elu(down.forward(bind, x));
        }
        let flat = flatten_cf(g, x);
        let h = self.lstm.forward(bind, flat);
        let g_l = self.to_latent.forward(bind, h);
        EncoderState { g_l, skips }
    }

    /// Decoder pass: conditioned latents (T, 2·latent_dim) plus the
    /// encoder skips, producing a (3, T, F) image node.
    pub fn dec_forward(&self, g: &Graph, bind: &Binding, z_l: VarId, skips: &[VarId]) -> VarId {
        assert_eq!(skips.len(), self.cfg.num_blocks, "need one skip per block");
        let entry = self.from_latent.forward(bind, z_l);
        let mut y = unflatten_cf(g, entry, self.c_bottom, self.f_bottom);
        for (k, (up, film, res)) in self.dec.iter().enumerate() {
            y = g.elu(up.forward(bind, y));
            let skip = skips[skips.len() - 1 - k];
            y = film.forward(g, bind, y, skip);
            y = res.forward(g, bind, y);
        }
        self.out.forward(bind, y)
    }

    /// Encoder + decoder with externally supplied latents; callers build
    /// z_l from `EncoderState::g_l` (conditioned or zero-padded).
    pub fn f_in(&self) -> usize {
        self.f_in
    }
}
