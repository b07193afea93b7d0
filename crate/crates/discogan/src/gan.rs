//! The complete enhancement model: generator plus optional latent
//! conditioning, from waveform to waveform.
//!
//! A conditioned model fuses the frozen enhancer's latents into the
//! generator bottleneck through masked cross-attention; the unconditioned
//! ablation pads the bottleneck with zeros instead, keeping every shape
//! (and therefore the parameter layout of the generator itself)
//! identical. Input spectra and conditioning latents enter the graph as
//! constants — gradients only ever flow into model parameters.

use autodiff::{Binding, Graph, ParamStore, VarId};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::audio::AudioClip;
use crate::conditioner::{zero_condition, Conditioner};
use crate::config::RunConfig;
use crate::dsp;
use crate::error::{DiscoganError, Result};
use crate::generator::Generator;
use crate::spectral::{graph_decompress, graph_istft};

pub struct GanModel {
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub gen: Generator,
    /// `None` for the unconditioned ablation.
    pub cond: Option<Conditioner>,
}

/// Graph nodes of one generator forward pass.
pub struct GanPath {
    /// Compressed input image constant, (2, T, F).
    pub input: VarId,
    /// Decoder output image, (3, T, F).
    pub image: VarId,
    /// Enhanced waveform, (len,).
    pub wave: VarId,
}

impl GanModel {
    pub fn new(cfg: &RunConfig, conditioned: bool, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let gen = Generator::new(&mut store, &mut rng, &cfg.generator, cfg.stft.freq_bins());
        let cond = conditioned.then(|| {
            Conditioner::new(&mut store, &mut rng, &cfg.attention, cfg.disc_model.lstm_hidden)
        });
        GanModel { cfg: cfg.clone(), store, gen, cond }
    }

    pub fn is_conditioned(&self) -> bool {
        self.cond.is_some()
    }

    /// Builds the waveform-to-waveform path. A conditioned model requires
    /// `latents` (T, source_dim) from the frozen enhancer; an
    /// unconditioned model ignores them.
    pub fn build_path(
        &self,
        g: &Graph,
        bind: &Binding,
        clip: &AudioClip,
        latents: Option<&Array2<f64>>,
    ) -> Result<GanPath> {
        let spec = dsp::stft(clip, self.cfg.stft.window_size, self.cfg.stft.hop)?;
        let img = dsp::compress_tf(&spec)?;
        let input = g.input(img.data.into_dyn());

        let state = self.gen.enc_forward(g, bind, input);
        let z_l = match &self.cond {
            Some(cond) => {
                let lat = latents.ok_or_else(|| {
                    DiscoganError::invalid("conditioned generator needs enhancer latents")
                })?;
                if lat.nrows() != g.value(state.g_l).shape()[0] {
                    return Err(DiscoganError::invalid(format!(
                        "latent frame count {} does not match input frames {}",
                        lat.nrows(),
                        g.value(state.g_l).shape()[0]
                    )));
                }
                let d_l = g.input(lat.to_owned().into_dyn());
                cond.condition(g, bind, state.g_l, d_l)
            }
            None => zero_condition(g, state.g_l),
        };
        let image = self.gen.dec_forward(g, bind, z_l, &state.skips);
        let spec2 = graph_decompress(g, image);
        let wave = graph_istft(g, spec2, self.cfg.stft.window_size, self.cfg.stft.hop, clip.len());
        Ok(GanPath { input, image, wave })
    }

    /// No-grad enhancement convenience.
    pub fn enhance(&self, clip: &AudioClip, latents: Option<&Array2<f64>>) -> Result<AudioClip> {
        let g = Graph::new();
        let bind = Binding::new(&g, &self.store);
        let path = self.build_path(&g, &bind, clip, latents)?;
        let wave = g.value(path.wave);
        Ok(AudioClip::new(wave.iter().copied().collect(), clip.sample_rate))
    }
}
