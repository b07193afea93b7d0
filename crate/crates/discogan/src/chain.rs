//! Serial enhancement chains.
//!
//! A chain is an ordered list of full enhancers applied in the time domain:
//! each stage maps a waveform to a waveform of the same length, and the
//! output of stage `i` is the input of stage `i + 1`. Stages are rebuilt
//! from checkpoint files, so a chain like `disc,gan` composes the
//! first-stage enhancer with a separately trained generator as a
//! post-filter.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::audio::AudioClip;
use crate::checkpoint::Checkpoint;
use crate::config::StageKind;
use crate::discmodel::{analyze, FrozenDisc};
use crate::error::{DiscoganError, Result};
use crate::gan::GanModel;
use crate::trainer::{frozen_from_checkpoint, frozen_from_stage2};

/// Ordered stage list, e.g. `disc,gan`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSpec(pub Vec<StageKind>);

impl ChainSpec {
    /// Parses a comma-separated stage list (`disc`, `gan`, `gan_nocond`;
    /// `nocogan` is accepted as an alias for `gan_nocond`).
    pub fn parse(s: &str) -> Result<ChainSpec> {
        let stages: Vec<StageKind> = s
            .split(',')
            .map(|part| StageKind::parse(part.trim()))
            .collect::<Result<_>>()?;
        if stages.is_empty() {
            return Err(DiscoganError::Config("chain must name at least one stage".into()));
        }
        Ok(ChainSpec(stages))
    }

    /// Stable label used in file names and report rows, e.g. `disc+gan`.
    pub fn label(&self) -> String {
        self.0.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
    }
}

impl fmt::Display for ChainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One loaded enhancement stage.
pub enum Stage {
    /// First-stage discriminative enhancer.
    Disc(FrozenDisc),
    /// Conditioned generator plus the frozen enhancer that feeds it latents.
    Gan { gan: GanModel, frozen: FrozenDisc },
    /// Unconditioned generator ablation.
    GanNocond(GanModel),
}

impl Stage {
    /// Rebuilds the stage a checkpoint holds.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Stage> {
        match ck.kind {
            StageKind::Disc => Ok(Stage::Disc(frozen_from_checkpoint(ck)?)),
            StageKind::Gan => {
                let frozen = frozen_from_stage2(ck)?;
                let mut gan = GanModel::new(&ck.config, true, ck.seed);
                ck.apply_params(&mut gan.store)?;
                Ok(Stage::Gan { gan, frozen })
            }
            StageKind::GanNocond => {
                let mut gan = GanModel::new(&ck.config, false, ck.seed);
                ck.apply_params(&mut gan.store)?;
                Ok(Stage::GanNocond(gan))
            }
        }
    }

    pub fn kind(&self) -> StageKind {
        match self {
            Stage::Disc(_) => StageKind::Disc,
            Stage::Gan { .. } => StageKind::Gan,
            Stage::GanNocond(_) => StageKind::GanNocond,
        }
    }

    /// Sample rate the stage's transforms were configured for.
    pub fn sample_rate(&self) -> u32 {
        match self {
            Stage::Disc(f) => f.model().stft.sample_rate,
            Stage::Gan { gan, .. } | Stage::GanNocond(gan) => gan.cfg.stft.sample_rate,
        }
    }

    /// Enhances one clip. Conditioned generators compute their latents
    /// from the stage's own input, not from the original mixture, so a
    /// preceding stage genuinely changes what the conditioner sees.
    pub fn enhance(&self, clip: &AudioClip) -> Result<AudioClip> {
        match self {
            Stage::Disc(f) => f.enhance(clip),
            Stage::Gan { gan, frozen } => {
                let latents = latents_for(frozen, gan, clip)?;
                gan.enhance(clip, Some(&latents))
            }
            Stage::GanNocond(gan) => gan.enhance(clip, None),
        }
    }
}

fn latents_for(frozen: &FrozenDisc, gan: &GanModel, clip: &AudioClip) -> Result<Array2<f64>> {
    let input = analyze(clip, &gan.cfg.stft)?;
    Ok(frozen.latents(&input))
}

/// Checkpoint paths for each stage kind a chain may reference.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    pub disc: Option<PathBuf>,
    pub gan: Option<PathBuf>,
    pub gan_nocond: Option<PathBuf>,
}

impl CheckpointSet {
    pub fn path_for(&self, kind: StageKind) -> Result<&Path> {
        let slot = match kind {
            StageKind::Disc => &self.disc,
            StageKind::Gan => &self.gan,
            StageKind::GanNocond => &self.gan_nocond,
        };
        slot.as_deref().ok_or_else(|| {
            DiscoganError::Config(format!("no checkpoint given for stage {}", kind.name()))
        })
    }

    /// Loads every stage of `spec` and assembles the chain.
    pub fn load_chain(&self, spec: &ChainSpec) -> Result<Chain> {
        let stages = spec
            .0
            .iter()
            .map(|&kind| {
                let path = self.path_for(kind)?;
                let ck = Checkpoint::load(path)?;
                if ck.kind != kind {
                    return Err(DiscoganError::Checkpoint(format!(
                        "{} holds a {} checkpoint, expected {}",
                        path.display(),
                        ck.kind.name(),
                        kind.name()
                    )));
                }
                Stage::from_checkpoint(&ck)
            })
            .collect::<Result<Vec<_>>>()?;
        Chain::from_stages(stages)
    }
}

/// A fully loaded serial chain.
pub struct Chain {
    stages: Vec<Stage>,
}

impl Chain {
    /// Assembles a chain, rejecting an empty stage list or stages that
    /// disagree on sample rate.
    pub fn from_stages(stages: Vec<Stage>) -> Result<Chain> {
        let first = stages
            .first()
            .ok_or_else(|| DiscoganError::Config("chain must hold at least one stage".into()))?;
        let rate = first.sample_rate();
        for stage in &stages {
            if stage.sample_rate() != rate {
                return Err(DiscoganError::Config(format!(
                    "stage {} expects {} Hz but the chain runs at {} Hz",
                    stage.kind().name(),
                    stage.sample_rate(),
                    rate
                )));
            }
        }
        Ok(Chain { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn spec(&self) -> ChainSpec {
        ChainSpec(self.stages.iter().map(Stage::kind).collect())
    }

    pub fn sample_rate(&self) -> u32 {
        self.stages[0].sample_rate()
    }

    /// Applies the stages serially.
    pub fn enhance(&self, clip: &AudioClip) -> Result<AudioClip> {
        if clip.sample_rate != self.sample_rate() {
            return Err(DiscoganError::InvalidInput(format!(
                "clip is {} Hz but the chain expects {} Hz",
                clip.sample_rate,
                self.sample_rate()
            )));
        }
        let mut current = clip.clone();
        for stage in &self.stages {
            current = stage.enhance(&current)?;
        }
        Ok(current)
    }
}
