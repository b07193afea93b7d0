//! Typed configuration for every stage of the pipeline.
//!
//! Defaults reproduce the full-scale setup (512/160 STFT at 16 kHz,
//! 8-block generator capped at 512 channels, 5-scale spectrogram
//! adversary). `RunConfig::toy()` shrinks the generator and adversary far
//! enough that training runs in seconds per hundred steps on a single CPU
//! core, which is what the integration tests use. Configs load from TOML
//! files where every section and field is optional and falls back to the
//! default.

use serde::{Deserialize, Serialize};

use crate::error::{DiscoganError, Result};

/// Analysis/synthesis parameters shared by the whole pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { window_size: 512, hop: 160, sample_rate: 16_000 }
    }
}

impl StftConfig {
    /// Frequency bins kept after dropping the Nyquist row.
    pub fn freq_bins(&self) -> usize {
        self.window_size / 2
    }
}

/// Encoder/decoder shape of the GAN generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Channels after the initial convolution.
    pub base_channels: usize,
    /// Number of encoder blocks (each halves the frequency axis).
    pub num_blocks: usize,
    /// Channel doubling stops at this width.
    pub channel_cap: usize,
    /// Hidden size of the two-layer bottleneck LSTM.
    pub lstm_units: usize,
    /// Width of the per-frame generator latent g_l.
    pub latent_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 32,
            num_blocks: 8,
            channel_cap: 512,
            lstm_units: 512,
            latent_dim: 128,
        }
    }
}

impl GeneratorConfig {
    /// Channel width entering block `k` (0-based), i.e. after `k` doublings.
    pub fn channels_at(&self, k: usize) -> usize {
        (self.base_channels << k.min(63)).min(self.channel_cap)
    }

    /// Channel widths produced by each encoder block.
    pub fn block_channels(&self) -> Vec<usize> {
        (1..=self.num_blocks).map(|k| self.channels_at(k)).collect()
    }
}

/// Masked cross-attention conditioner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    /// Frames of future context the conditioner may read.
    pub lookahead: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { model_dim: 128, num_heads: 2, lookahead: 20 }
    }
}

/// Discriminative enhancer (complex-ratio-mask model) whose bottleneck
/// provides the conditioning latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscModelConfig {
    /// Encoder channel progression; the decoder mirrors it.
    pub channels: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
}

impl Default for DiscModelConfig {
    fn default() -> Self {
        DiscModelConfig { channels: vec![16, 32, 64, 128, 256, 256], lstm_hidden: 256, lstm_layers: 2 }
    }
}

/// Multi-scale spectrogram adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    /// STFT window per sub-discriminator; hop is a quarter window.
    pub scales: Vec<usize>,
    pub base_channels: usize,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig { scales: vec![2048, 1024, 512, 256, 128], base_channels: 32 }
    }
}

/// Weights of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_f: f64,
    pub lambda_adv: f64,
    pub lambda_feat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_t: 1.0,
            lambda_f: 1.0,
            lambda_adv: 1.0 / 9.0,
            lambda_feat: 100.0 / 9.0,
        }
    }
}

/// Optimizer and schedule for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 4,
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.9,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

/// Which model a training stage or enhancement step runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// Discriminative enhancer trained on scale-invariant SDR.
    Disc,
    /// GAN generator conditioned on the frozen enhancer's latents.
    Gan,
    /// GAN generator with the conditioning path zeroed out.
    GanNocond,
}

impl StageKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disc" => Ok(StageKind::Disc),
            "gan" => Ok(StageKind::Gan),
            "gan_nocond" | "nocond" | "nocogan" => Ok(StageKind::GanNocond),
            other => Err(DiscoganError::Config(format!(
                "unknown stage '{other}' (expected disc | gan | gan_nocond)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StageKind::Disc => "disc",
            StageKind::Gan => "gan",
            StageKind::GanNocond => "gan_nocond",
        }
    }
}

/// Complete run configuration; the unit every checkpoint embeds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub generator: GeneratorConfig,
    pub attention: AttentionConfig,
    pub disc_model: DiscModelConfig,
    pub adversary: AdversaryConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Small preset for tests and smoke runs: 8 base channels, 4 encoder
    /// blocks, slim LSTM, 3 adversary scales.
    pub fn toy() -> Self {
        let mut cfg = RunConfig::default();
        cfg.generator.base_channels = 8;
        cfg.generator.num_blocks = 4;
        cfg.generator.lstm_units = 32;
        cfg.generator.latent_dim = 32;
        cfg.attention.model_dim = 32;
        cfg.adversary.scales = vec![512, 256, 128];
        cfg.adversary.base_channels = 16;
        cfg.disc_model.channels = vec![8, 16, 32, 64];
        cfg.disc_model.lstm_hidden = 32;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| DiscoganError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(DiscoganError::Config(msg));
        let s = &self.stft;
        if s.window_size < 8 || s.window_size % 2 != 0 {
            return err(format!("window_size must be even and >= 8, got {}", s.window_size));
        }
        if s.hop == 0 || s.hop > s.window_size {
            return err(format!("hop must be in 1..=window_size, got {}", s.hop));
        }
        let g = &self.generator;
        if g.num_blocks == 0 {
            return err("generator needs at least one block".into());
        }
        if s.freq_bins() % (1 << g.num_blocks) != 0 {
            return err(format!(
                "{} blocks cannot evenly halve {} frequency bins",
                g.num_blocks,
                s.freq_bins()
            ));
        }
        if g.base_channels == 0 || g.channel_cap < g.base_channels {
            return err("generator channel widths must be positive and capped above base".into());
        }
        let a = &self.attention;
        if a.num_heads == 0 || a.model_dim % a.num_heads != 0 {
            return err(format!(
                "model_dim {} must be divisible by num_heads {}",
                a.model_dim, a.num_heads
            ));
        }
        let d = &self.disc_model;
        if d.channels.is_empty() {
            return err("disc_model needs at least one encoder block".into());
        }
        if s.freq_bins() % (1 << d.channels.len()) != 0 {
            return err(format!(
                "{} disc_model blocks cannot evenly halve {} frequency bins",
                d.channels.len(),
                s.freq_bins()
            ));
        }
        if d.lstm_layers == 0 || d.lstm_hidden == 0 {
            return err("disc_model LSTM needs at least one layer and unit".into());
        }
        let adv = &self.adversary;
        if adv.scales.is_empty() {
            return err("adversary needs at least one scale".into());
        }
        for &sc in &adv.scales {
            if sc < 8 || sc % 4 != 0 {
                return err(format!("adversary scale {sc} must be >= 8 and divisible by 4"));
            }
        }
        let t = &self.train;
        if t.batch_size == 0 || t.steps == 0 {
            return err("train.steps and train.batch_size must be positive".into());
        }
        if !(t.lr > 0.0) || !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return err("optimizer hyperparameters out of range".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_matches_reference_shapes() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stft.freq_bins(), 256);
        assert_eq!(cfg.generator.block_channels(), vec![64, 128, 256, 512, 512, 512, 512, 512]);
        assert_eq!(cfg.loss.lambda_adv, 1.0 / 9.0);
        assert_eq!(cfg.loss.lambda_feat, 100.0 / 9.0);
        assert_eq!(cfg.train.lr, 3e-4);
        assert_eq!((cfg.train.beta1, cfg.train.beta2), (0.5, 0.9));
    }

    #[test]
    fn toy_config_is_valid() {
        let cfg = RunConfig::toy();
        cfg.validate().unwrap();
        assert_eq!(cfg.generator.block_channels(), vec![16, 32, 64, 128]);
        assert_eq!(cfg.adversary.scales.len(), 3);
    }

    #[test]
    fn partial_toml_overrides_defaults() {
        let cfg = RunConfig::from_toml_str(
            "[generator]\nbase_channels = 16\n\n[train]\nsteps = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.generator.base_channels, 16);
        assert_eq!(cfg.train.steps, 42);
        // untouched sections keep defaults
        assert_eq!(cfg.stft.window_size, 512);
        assert_eq!(cfg.generator.num_blocks, 8);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.generator.num_blocks = 9; // 256 bins cannot halve 9 times
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.attention.num_heads = 3; // 128 not divisible by 3
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.stft.hop = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_kind_parses_cli_spellings() {
        assert_eq!(StageKind::parse("disc").unwrap(), StageKind::Disc);
        assert_eq!(StageKind::parse("gan").unwrap(), StageKind::Gan);
        assert_eq!(StageKind::parse("gan_nocond").unwrap(), StageKind::GanNocond);
        assert_eq!(StageKind::parse("nocogan").unwrap(), StageKind::GanNocond);
        assert!(StageKind::parse("pesq").is_err());
    }
}
