//! Discriminative enhancer: a complex-ratio-mask encoder/LSTM/decoder.
//!
//! The model consumes the (real, imaginary) STFT planes of a noisy clip,
//! runs a strided conv encoder, a two-layer LSTM over per-frame flattened
//! features, and a mirrored transposed-conv decoder that emits an
//! unbounded complex ratio mask. Enhancement is mask-times-input followed
//! by inverse STFT; the Nyquist row bypasses the mask.
//!
//! After stage-1 training the model is frozen; its final LSTM layer's
//! output sequence (`latents`) is the conditioning signal for the GAN
//! generator. Freezing is witnessed by a parameter fingerprint that later
//! stages re-verify.
//!
//! All time kernels use causal padding, so a latent frame depends only on
//! present and past input frames.

use autodiff::{Binding, ChannelNorm, Conv2d, Conv2dGeom, ConvT2d, ConvT2dGeom, Graph, Linear, Lstm, ParamStore, VarId};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::audio::AudioClip;
use crate::blocks::{complex_mul, flatten_cf, unflatten_cf};
use crate::checkpoint::param_fingerprint;
use crate::config::{DiscModelConfig, StftConfig};
use crate::dsp;
use crate::error::{DiscoganError, Result};
use crate::spectral::{graph_istft, stack2};

/// STFT planes of one clip, full F = window/2 + 1 bins, plus its length.
pub struct SpecInput {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
    pub len: usize,
}

/// Analyzes a clip into the surrogate/generator input representation.
pub fn analyze(clip: &AudioClip, stft: &StftConfig) -> Result<SpecInput> {
    let spec = dsp::stft(clip, stft.window_size, stft.hop)?;
    Ok(SpecInput {
        re: spec.frames.mapv(|c| c.re),
        im: spec.frames.mapv(|c| c.im),
        len: clip.len(),
    })
}

/// Graph nodes produced by one surrogate forward pass.
pub struct DiscPath {
    /// Final LSTM layer output, (T, lstm_hidden).
    pub latents: VarId,
    /// Complex ratio mask, (2, T, F-1).
    pub mask: VarId,
    /// Enhanced waveform, (len,).
    pub enhanced: VarId,
}

pub struct DiscModel {
    pub cfg: DiscModelConfig,
    pub stft: StftConfig,
    pub store: ParamStore,
    enc: Vec<(Conv2d, ChannelNorm)>,
    to_lstm: Linear,
    lstm: Lstm,
    from_lstm: Linear,
    dec: Vec<(ConvT2d, Option<ChannelNorm>)>,
    /// Frequency bins after the encoder.
    f_bottom: usize,
}

impl DiscModel {
    pub fn new(cfg: &DiscModelConfig, stft: &StftConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        // (2,4) kernels: causal in time (pad 1 before), stride 2 in frequency
        let down = Conv2dGeom { stride: (1, 2), dilation: (1, 1), pad: (1, 0, 1, 1) };
        let up = ConvT2dGeom { stride: (1, 2), crop: (0, 1, 1, 1) };

        let mut enc = Vec::new();
        let mut cin = 2;
        for (i, &cout) in cfg.channels.iter().enumerate() {
            let conv = Conv2d::new(
                &mut store,
                &mut rng,
                &format!("enc.{i}.conv"),
                cin,
                cout,
                (2, 4),
                down,
                true,
                false,
            );
            let norm = ChannelNorm::new(&mut store, &format!("enc.{i}.norm"), cout);
            enc.push((conv, norm));
            cin = cout;
        }
        let c_bottom = *cfg.channels.last().expect("validated non-empty");
        let f_bottom = (stft.window_size / 2) >> cfg.channels.len();
        let flat = c_bottom * f_bottom;

        let to_lstm = Linear::new(&mut store, &mut rng, "to_lstm", flat, cfg.lstm_hidden, true);
        let lstm = Lstm::new(&mut store, &mut rng, "lstm", cfg.lstm_hidden, cfg.lstm_hidden, cfg.lstm_layers);
        let from_lstm = Linear::new(&mut store, &mut rng, "from_lstm", cfg.lstm_hidden, flat, true);

        let mut dec = Vec::new();
        let mut din = c_bottom;
        for i in (0..cfg.channels.len()).rev() {
            let dout = if i == 0 { 2 } else { cfg.channels[i - 1] };
            let convt = ConvT2d::new(
                &mut store,
                &mut rng,
                &format!("dec.{i}.conv"),
                din,
                dout,
                (2, 4),
                up,
                true,
            );
            // the mask output stays linear and unnormalized
            let norm = (i != 0).then(|| ChannelNorm::new(&mut store, &format!("dec.{i}.norm"), dout));
            dec.push((convt, norm));
            din = dout;
        }

        DiscModel { cfg: cfg.clone(), stft: stft.clone(), store, enc, to_lstm, lstm, from_lstm, dec, f_bottom }
    }

    /// Builds the full enhancement path on `g`. The input spectra enter as
    /// constants; gradients flow only into model parameters.
    pub fn build_path(&self, g: &Graph, bind: &Binding, input: &SpecInput) -> DiscPath {
        let (t_frames, n_bins) = input.re.dim();
        assert_eq!(n_bins, self.stft.window_size / 2 + 1);
        let f_used = n_bins - 1;

        // image of the maskable bins, (2, T, F-1)
        let mut img = ArrayD::zeros(IxDyn(&[2, t_frames, f_used]));
        for t in 0..t_frames {
            for k in 0..f_used {
                img[[0, t, k]] = input.re[[t, k]];
                img[[1, t, k]] = input.im[[t, k]];
            }
        }
        let x0 = g.input(img);

        let mut x = x0;
        for (conv, norm) in &self.enc {
            x = g.elu(norm.forward(bind, conv.forward(bind, x)));
        }
        let flat = flatten_cf(g, x);
        let latents = self.lstm.forward(bind, self.to_lstm.forward(bind, flat));
        let c_bottom = *self.cfg.channels.last().unwrap();
        let mut y = unflatten_cf(g, self.from_lstm.forward(bind, latents), c_bottom, self.f_bottom);
        for (convt, norm) in &self.dec {
            y = convt.forward(bind, y);
            if let Some(n) = norm {
                y = g.elu(n.forward(bind, y));
            }
        }
        let mask = y; // (2, T, F-1), unbounded complex ratio mask

        let plane = [t_frames, f_used];
        let mre = g.reshape(g.slice_axis(mask, 0, 0, 1), &plane);
        let mim = g.reshape(g.slice_axis(mask, 0, 1, 1), &plane);
        let xre = g.reshape(g.slice_axis(x0, 0, 0, 1), &plane);
        let xim = g.reshape(g.slice_axis(x0, 0, 1, 1), &plane);
        let (ere, eim) = complex_mul(g, xre, xim, mre, mim);

        // Nyquist bypasses the mask
        let nyq_re = g.input(column(&input.re, f_used));
        let nyq_im = g.input(column(&input.im, f_used));
        let re_full = g.concat(1, &[ere, nyq_re]);
        let im_full = g.concat(1, &[eim, nyq_im]);
        let spec = stack2(g, re_full, im_full);
        let enhanced = graph_istft(g, spec, self.stft.window_size, self.stft.hop, input.len);

        DiscPath { latents, mask, enhanced }
    }

    /// Convenience: no-grad enhancement of a clip.
    pub fn enhance(&self, clip: &AudioClip) -> Result<AudioClip> {
        let input = analyze(clip, &self.stft)?;
        let g = Graph::new();
        let bind = Binding::new(&g, &self.store);
        let path = self.build_path(&g, &bind, &input);
        let wave = g.value(path.enhanced);
        Ok(AudioClip::new(wave.as_slice().expect("contiguous").to_vec(), clip.sample_rate))
    }
}

fn column(a: &Array2<f64>, k: usize) -> ArrayD<f64> {
    let t = a.nrows();
    let mut out = ArrayD::zeros(IxDyn(&[t, 1]));
    for i in 0..t {
        out[[i, 0]] = a[[i, k]];
    }
    out
}

/// A trained surrogate with its parameters frozen and fingerprinted.
pub struct FrozenDisc {
    model: DiscModel,
    pub fingerprint: String,
}

impl FrozenDisc {
    pub fn new(model: DiscModel) -> Self {
        let fingerprint = param_fingerprint(&model.store);
        FrozenDisc { model, fingerprint }
    }

    pub fn model(&self) -> &DiscModel {
        &self.model
    }

    /// Re-hashes the parameters and checks them against the stored
    /// fingerprint.
    pub fn verify(&self) -> Result<()> {
        let now = param_fingerprint(&self.model.store);
        if now != self.fingerprint {
            return Err(DiscoganError::Checkpoint(format!(
                "frozen model drifted: fingerprint {now} != {}",
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Conditioning latents for a clip, computed without gradients,
    /// shape (T, lstm_hidden).
    pub fn latents(&self, input: &SpecInput) -> Array2<f64> {
        let g = Graph::new();
        let bind = Binding::new(&g, &self.model.store);
        let path = self.model.build_path(&g, &bind, input);
        let v = g.value(path.latents);
        let t = v.shape()[0];
        let h = v.shape()[1];
        Array2::from_shape_fn((t, h), |(a, b)| v[[a, b]])
    }

    pub fn enhance(&self, clip: &AudioClip) -> Result<AudioClip> {
        self.model.enhance(clip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::synth_speech_like;

    fn tiny() -> (DiscModelConfig, StftConfig) {
        (
            DiscModelConfig { channels: vec![4, 8], lstm_hidden: 8, lstm_layers: 2 },
            StftConfig { window_size: 32, hop: 8, sample_rate: 16_000 },
        )
    }

    #[test]
    fn shapes_follow_config() {
        let (cfg, stft) = tiny();
        let model = DiscModel::new(&cfg, &stft, 1);
        let clip = synth_speech_like(400, 16_000, 2);
        let input = analyze(&clip, &stft).unwrap();
        let g = Graph::new();
        let bind = Binding::new(&g, &model.store);
        let path = model.build_path(&g, &bind, &input);
        let t = dsp::frame_count(400, 8);
        assert_eq!(g.shape(path.latents), vec![t, 8]);
        assert_eq!(g.shape(path.mask), vec![2, t, 16]);
        assert_eq!(g.shape(path.enhanced), vec![400]);
    }

    #[test]
    fn full_size_latents_have_contract_shape() {
        let cfg = DiscModelConfig::default();
        let stft = StftConfig::default();
        let model = DiscModel::new(&cfg, &stft, 3);
        // 3 s at 16 kHz -> 301 frames, latent width 256
        let clip = synth_speech_like(48_000, 16_000, 4);
        let frozen = FrozenDisc::new(model);
        let d_l = frozen.latents(&analyze(&clip, &stft).unwrap());
        assert_eq!(d_l.dim(), (301, 256));
    }

    #[test]
    fn identity_mask_parameters_reproduce_input() {
        let (cfg, stft) = tiny();
        let mut model = DiscModel::new(&cfg, &stft, 5);
        // force the mask head to emit exactly 1 + 0i: zero the final
        // transposed conv's weights and set its bias to (1, 0)
        let w_id = model.store.find("dec.0.conv.w").unwrap();
        let b_id = model.store.find("dec.0.conv.b").unwrap();
        let w_shape = model.store.value(w_id).shape().to_vec();
        model.store.set_value(w_id, ArrayD::zeros(IxDyn(&w_shape)));
        model
            .store
            .set_value(b_id, ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, 0.0]).unwrap());

        let clip = synth_speech_like(600, 16_000, 6);
        let out = model.enhance(&clip).unwrap();
        let max_err = clip
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9, "identity mask should reproduce the input, err {max_err}");
    }

    #[test]
    fn same_seed_is_bit_identical_different_seed_differs() {
        let (cfg, stft) = tiny();
        let a = DiscModel::new(&cfg, &stft, 7);
        let b = DiscModel::new(&cfg, &stft, 7);
        let c = DiscModel::new(&cfg, &stft, 8);
        for ((na, va), (nb, vb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
        // long enough to clear any leading syllable pause, so the input is
        // guaranteed non-silent and the outputs actually exercise the masks
        let clip = synth_speech_like(4000, 16_000, 9);
        assert!(clip.power() > 0.0);
        assert_eq!(a.enhance(&clip).unwrap().samples, b.enhance(&clip).unwrap().samples);
        assert_ne!(a.enhance(&clip).unwrap().samples, c.enhance(&clip).unwrap().samples);
    }

    #[test]
    fn frozen_fingerprint_detects_drift() {
        let (cfg, stft) = tiny();
        let model = DiscModel::new(&cfg, &stft, 10);
        let mut frozen = FrozenDisc::new(model);
        frozen.verify().unwrap();
        // tamper with one parameter
        let id = frozen.model.store.find("to_lstm.w").unwrap();
        let mut v = (*frozen.model.store.value(id)).clone();
        v[[0, 0]] += 1e-9;
        frozen.model.store.set_value(id, v);
        assert!(frozen.verify().is_err());
    }

    #[test]
    fn latent_frames_are_causal_in_the_input() {
        // changing the tail of the clip must not change early latent frames
        let (cfg, stft) = tiny();
        let model = DiscModel::new(&cfg, &stft, 11);
        let frozen = FrozenDisc::new(model);
        let clip = synth_speech_like(800, 16_000, 12);
        let mut tail = clip.clone();
        for v in tail.samples.iter_mut().skip(600) {
            *v = -*v * 0.5 + 0.1;
        }
        let a = frozen.latents(&analyze(&clip, &stft).unwrap());
        let b = frozen.latents(&analyze(&tail, &stft).unwrap());
        // sample 600 first appears in frame ceil((600 - win/2) / hop) = 73;
        // frames strictly before that see identical windows
        let first_dirty = (600 - stft.window_size / 2 + stft.hop - 1) / stft.hop;
        for t in 0..first_dirty {
            for j in 0..8 {
                assert_eq!(a[[t, j]], b[[t, j]], "latent frame {t} changed");
            }
        }
    }
}
