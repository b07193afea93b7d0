//! Two-stage training: discriminative pre-training on scale-invariant SDR,
//! then adversarial training of the generator against the frozen
//! first-stage model, with gated discriminator updates.
//!
//! Determinism contract: a training trajectory is a pure function of
//! (seed, config, data). Epoch shuffles come from the seed and the epoch
//! index alone, nothing random survives between steps, and checkpoints
//! restore parameters, optimizer moments, and the step counter, so a
//! resumed run continues the exact trajectory of an uninterrupted one.

use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::{Adam, Binding, GradBuffer, Graph};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{disc_train_loss, feat_match_loss, gen_adv_loss, Adversary, ScaleOutputs};
use crate::audio::{read_wav, AudioClip};
use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, StageKind};
use crate::datagen::mixture_file_names;
use crate::discmodel::{analyze, DiscModel, FrozenDisc, SpecInput};
use crate::error::{DiscoganError, Result};
use crate::gan::GanModel;
use crate::losses::{
    freq_loss_node, si_sdr_loss_node, time_loss_node, total_gen_loss, weighted_total_node,
    LossBreakdown, SpectralLossConfig,
};

/// One aligned (noisy, clean) training pair.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub mix: AudioClip,
    pub reference: AudioClip,
}

/// Loads the `NNNNN_mix.wav` / `NNNNN_ref.wav` pairs a rendered dataset
/// directory holds, in index order.
pub fn load_rendered(dir: &Path) -> Result<Vec<TrainItem>> {
    let mut items = Vec::new();
    loop {
        let (mix_name, ref_name) = mixture_file_names(items.len());
        let mix_path = dir.join(mix_name);
        if !mix_path.exists() {
            break;
        }
        let ref_path = dir.join(ref_name);
        if !ref_path.exists() {
            return Err(DiscoganError::Data(format!(
                "mixture {} has no reference pair",
                mix_path.display()
            )));
        }
        items.push(TrainItem { mix: read_wav(&mix_path)?, reference: read_wav(&ref_path)? });
    }
    if items.is_empty() {
        return Err(DiscoganError::Data(format!("no rendered mixtures in {}", dir.display())));
    }
    Ok(items)
}

/// Pre-training curve entry; `loss` is the batch-mean negative SI-SDR,
/// clamped to ±100 dB like the metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Record {
    pub step: u64,
    pub loss: f64,
}

/// Adversarial-stage curve entry: the batch-mean loss parts, their exact
/// weighted total, and whether the discriminator stepped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_t: f64,
    pub l_f: f64,
    pub l_adv: f64,
    pub l_feat: f64,
    pub total: f64,
    pub disc_updated: bool,
}

/// What a completed (or continued) training run leaves behind.
#[derive(Debug)]
pub struct TrainRun<R> {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub records: Vec<R>,
}

/// The discriminator steps only when its own training loss strictly
/// exceeds the generator's (unweighted) adversarial hinge.
pub fn should_update_disc(l_disc_train: f64, l_adv_gen: f64) -> bool {
    l_disc_train > l_adv_gen
}

/// Indices of global step `step`: epoch `step / ceil(n/batch)` is shuffled
/// by (seed, epoch) and consumed batch by batch.
fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    let bpe = n.div_ceil(batch.max(1)) as u64;
    let epoch = step / bpe;
    let slot = (step % bpe) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    order.shuffle(&mut rng);
    let lo = slot * batch;
    let hi = (lo + batch).min(n);
    order[lo..hi].to_vec()
}

fn check_data(cfg: &RunConfig, data: &[TrainItem]) -> Result<()> {
    if data.is_empty() {
        return Err(DiscoganError::Data("training set is empty".into()));
    }
    for (i, item) in data.iter().enumerate() {
        if item.mix.len() != item.reference.len() {
            return Err(DiscoganError::Data(format!(
                "item {i}: mixture and reference lengths differ ({} vs {})",
                item.mix.len(),
                item.reference.len()
            )));
        }
        if item.mix.sample_rate != cfg.stft.sample_rate {
            return Err(DiscoganError::Data(format!(
                "item {i}: sample rate {} does not match the configured {}",
                item.mix.sample_rate, cfg.stft.sample_rate
            )));
        }
    }
    Ok(())
}

fn append_jsonl<R: Serialize>(file: &mut std::fs::File, record: &R) -> Result<()> {
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    Ok(())
}

fn open_log(path: &Path, fresh: bool) -> Result<std::fs::File> {
    let f = if fresh {
        std::fs::File::create(path)?
    } else {
        std::fs::OpenOptions::new().create(true).append(true).open(path)?
    };
    Ok(f)
}

fn abort_context(e: DiscoganError, step: u64, last_ckpt: &Option<PathBuf>) -> DiscoganError {
    let at = match last_ckpt {
        Some(p) => format!("last good checkpoint: {}", p.display()),
        None => "no checkpoint written yet".to_string(),
    };
    DiscoganError::Numeric(format!("training aborted at step {step}: {e}; {at}"))
}

// ---------------------------------------------------------------------------
// Stage 1: discriminative pre-training
// ---------------------------------------------------------------------------

pub struct Stage1Trainer {
    pub cfg: RunConfig,
    pub model: DiscModel,
    opt: Adam,
    step: u64,
}

impl Stage1Trainer {
    pub fn new(cfg: &RunConfig) -> Self {
        let model = DiscModel::new(&cfg.disc_model, &cfg.stft, cfg.train.seed);
        let opt = Adam::new(cfg.train.lr, cfg.train.beta1, cfg.train.beta2);
        Stage1Trainer { cfg: cfg.clone(), model, opt, step: 0 }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != StageKind::Disc {
            return Err(DiscoganError::Checkpoint(format!(
                "expected a disc checkpoint, found {}",
                ck.kind.name()
            )));
        }
        let mut trainer = Stage1Trainer::new(&ck.config);
        ck.apply_params(&mut trainer.model.store)?;
        trainer.opt.set_t(ck.adam_t);
        trainer.step = ck.step;
        Ok(trainer)
    }

    pub fn completed_steps(&self) -> u64 {
        self.step
    }

    /// One optimizer step at the trainer's current position in the
    /// deterministic batch schedule.
    pub fn step(&mut self, data: &[TrainItem]) -> Result<Stage1Record> {
        check_data(&self.cfg, data)?;
        let idx = batch_indices(data.len(), self.cfg.train.batch_size, self.cfg.train.seed, self.step);
        let prepared: Vec<(&TrainItem, SpecInput)> = idx
            .iter()
            .map(|&i| Ok((&data[i], analyze(&data[i].mix, &self.cfg.stft)?)))
            .collect::<Result<_>>()?;
        self.step_prepared(&prepared)
    }

    fn step_prepared(&mut self, batch: &[(&TrainItem, SpecInput)]) -> Result<Stage1Record> {
        let mut buf = GradBuffer::new(&self.model.store);
        let mut loss_sum = 0.0;
        for (item, input) in batch {
            let g = Graph::new();
            let bind = Binding::new(&g, &self.model.store);
            let path = self.model.build_path(&g, &bind, input);
            let loss = si_sdr_loss_node(&g, &item.reference.samples, path.enhanced)?;
            let raw = g.value(loss)[[]];
            if !raw.is_finite() {
                return Err(DiscoganError::Numeric(format!(
                    "non-finite pre-training loss {raw}"
                )));
            }
            loss_sum += raw.clamp(-100.0, 100.0);
            let mut grads = g.backward(loss);
            buf.add(bind.gradients(&mut grads));
        }
        self.opt.step(&mut self.model.store, &buf.average());
        self.step += 1;
        Ok(Stage1Record { step: self.step, loss: loss_sum / batch.len() as f64 })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        Checkpoint::from_store(
            StageKind::Disc,
            &self.cfg,
            self.step,
            self.cfg.train.seed,
            self.opt.t(),
            &self.model.store,
            None,
        )
        .save(path)
    }

    /// Runs (or continues) the schedule up to `cfg.train.steps`, appending
    /// the training curve to `disc_train.jsonl` and checkpointing every
    /// `checkpoint_every` steps plus a final `disc.ckpt`.
    pub fn run(&mut self, data: &[TrainItem], out_dir: &Path) -> Result<TrainRun<Stage1Record>> {
        check_data(&self.cfg, data)?;
        std::fs::create_dir_all(out_dir)?;
        let log_path = out_dir.join("disc_train.jsonl");
        let mut log = open_log(&log_path, self.step == 0)?;
        let final_path = out_dir.join("disc.ckpt");
        let mut last_ckpt: Option<PathBuf> = None;
        let mut records = Vec::new();

        // batch spectra are constant across steps; analyze each item once
        let inputs: Vec<SpecInput> = data
            .iter()
            .map(|it| analyze(&it.mix, &self.cfg.stft))
            .collect::<Result<_>>()?;

        while self.step < self.cfg.train.steps as u64 {
            let idx =
                batch_indices(data.len(), self.cfg.train.batch_size, self.cfg.train.seed, self.step);
            let batch: Vec<(&TrainItem, SpecInput)> = idx
                .iter()
                .map(|&i| {
                    (&data[i], SpecInput {
                        re: inputs[i].re.clone(),
                        im: inputs[i].im.clone(),
                        len: inputs[i].len,
                    })
                })
                .collect();
            let record = self
                .step_prepared(&batch)
                .map_err(|e| abort_context(e, self.step + 1, &last_ckpt))?;
            append_jsonl(&mut log, &record)?;
            records.push(record);

            if self.cfg.train.checkpoint_every > 0
                && self.step % self.cfg.train.checkpoint_every as u64 == 0
                && self.step < self.cfg.train.steps as u64
            {
                let p = out_dir.join(format!("disc_step{:06}.ckpt", self.step));
                self.save_checkpoint(&p)?;
                last_ckpt = Some(p);
            }
        }
        self.save_checkpoint(&final_path)?;
        log.flush()?;
        Ok(TrainRun { checkpoint: final_path, log: log_path, records })
    }

    /// Freezes the trained model for stage 2.
    pub fn into_frozen(self) -> FrozenDisc {
        FrozenDisc::new(self.model)
    }
}

/// Rebuilds a frozen first-stage model from its checkpoint.
pub fn frozen_from_checkpoint(ck: &Checkpoint) -> Result<FrozenDisc> {
    if ck.kind != StageKind::Disc {
        return Err(DiscoganError::Checkpoint(format!(
            "expected a disc checkpoint, found {}",
            ck.kind.name()
        )));
    }
    let mut model = DiscModel::new(&ck.config.disc_model, &ck.config.stft, ck.seed);
    ck.apply_params(&mut model.store)?;
    Ok(FrozenDisc::new(model))
}

/// Rebuilds the frozen first-stage model an adversarial-stage checkpoint
/// embeds.
pub fn frozen_from_stage2(ck: &Checkpoint) -> Result<FrozenDisc> {
    let mut model = DiscModel::new(&ck.config.disc_model, &ck.config.stft, 0);
    ck.apply_frozen(&mut model.store)?;
    Ok(FrozenDisc::new(model))
}

// ---------------------------------------------------------------------------
// Stage 2: adversarial training
// ---------------------------------------------------------------------------

pub struct Stage2Trainer {
    pub cfg: RunConfig,
    pub kind: StageKind,
    pub gan: GanModel,
    pub adv: Adversary,
    pub frozen: FrozenDisc,
    gen_opt: Adam,
    disc_opt: Adam,
    step: u64,
}

impl Stage2Trainer {
    pub fn new(cfg: &RunConfig, kind: StageKind, frozen: FrozenDisc) -> Result<Self> {
        let conditioned = match kind {
            StageKind::Gan => true,
            StageKind::GanNocond => false,
            StageKind::Disc => {
                return Err(DiscoganError::Config(
                    "adversarial training needs stage gan or gan_nocond".into(),
                ))
            }
        };
        if frozen.model().cfg != cfg.disc_model || frozen.model().stft != cfg.stft {
            return Err(DiscoganError::Config(
                "frozen model was built with a different configuration".into(),
            ));
        }
        let gan = GanModel::new(cfg, conditioned, cfg.train.seed);
        let adv = Adversary::new(&cfg.adversary, cfg.train.seed.wrapping_add(1));
        let gen_opt = Adam::new(cfg.train.lr, cfg.train.beta1, cfg.train.beta2);
        let disc_opt = Adam::new(cfg.train.lr, cfg.train.beta1, cfg.train.beta2);
        Ok(Stage2Trainer { cfg: cfg.clone(), kind, gan, adv, frozen, gen_opt, disc_opt, step: 0 })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind == StageKind::Disc {
            return Err(DiscoganError::Checkpoint(
                "expected a gan or gan_nocond checkpoint, found disc".into(),
            ));
        }
        let frozen = frozen_from_stage2(ck)?;
        let mut trainer = Stage2Trainer::new(&ck.config, ck.kind, frozen)?;
        ck.apply_params(&mut trainer.gan.store)?;
        ck.apply_adversary(&mut trainer.adv.store)?;
        trainer.gen_opt.set_t(ck.adam_t);
        trainer.disc_opt.set_t(ck.disc_adam_t);
        trainer.step = ck.step;
        Ok(trainer)
    }

    pub fn completed_steps(&self) -> u64 {
        self.step
    }

    /// Conditioning latents for every item (`None` entries when the model
    /// is unconditioned).
    fn latents_for(&self, data: &[TrainItem]) -> Result<Vec<Option<Array2<f64>>>> {
        data.iter()
            .map(|item| {
                if self.gan.is_conditioned() {
                    let input = analyze(&item.mix, &self.cfg.stft)?;
                    Ok(Some(self.frozen.latents(&input)))
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    /// One optimizer step at the trainer's current schedule position.
    pub fn step(&mut self, data: &[TrainItem]) -> Result<StepRecord> {
        check_data(&self.cfg, data)?;
        let latents = self.latents_for(data)?;
        self.step_with(data, &latents, None)
    }

    /// Like [`Stage2Trainer::step`], but forces the discriminator-update
    /// decision instead of comparing losses. Diagnostic hook: everything
    /// else (schedule, losses, generator update) is unaffected.
    pub fn step_gated(&mut self, data: &[TrainItem], update_disc: bool) -> Result<StepRecord> {
        check_data(&self.cfg, data)?;
        let latents = self.latents_for(data)?;
        self.step_with(data, &latents, Some(update_disc))
    }

    /// `gate` overrides the discriminator-update decision when set (the
    /// schedule, losses, and generator update are unaffected).
    fn step_with(
        &mut self,
        data: &[TrainItem],
        latents: &[Option<Array2<f64>>],
        gate: Option<bool>,
    ) -> Result<StepRecord> {
        let idx = batch_indices(data.len(), self.cfg.train.batch_size, self.cfg.train.seed, self.step);
        let spectral = SpectralLossConfig::default();
        let sr = self.cfg.stft.sample_rate;

        let mut gen_buf = GradBuffer::new(&self.gan.store);
        let mut disc_buf = GradBuffer::new(&self.adv.store);
        let mut sums = LossBreakdown { l_t: 0.0, l_f: 0.0, l_adv: 0.0, l_feat: 0.0, total: 0.0 };
        let mut disc_loss_sum = 0.0;

        for &i in &idx {
            let item = &data[i];

            // Real branch first: its values condition the generator's
            // feature-matching term as constants.
            let g_d = Graph::new();
            let bind_d = Binding::new(&g_d, &self.adv.store);
            let real_wave = g_d.input(
                ArrayD::from_shape_vec(IxDyn(&[item.reference.len()]), item.reference.samples.clone())
                    .expect("clip is dense"),
            );
            let real_outs = self.adv.forward(&g_d, &bind_d, real_wave)?;

            // Generator graph: reconstruction + adversarial terms.
            let g = Graph::new();
            let bind_g = Binding::new(&g, &self.gan.store);
            let bind_a = Binding::new(&g, &self.adv.store);
            let path = self.gan.build_path(&g, &bind_g, &item.mix, latents[i].as_ref())?;
            let s_const = g.input(
                ArrayD::from_shape_vec(IxDyn(&[item.reference.len()]), item.reference.samples.clone())
                    .expect("clip is dense"),
            );
            let fake_outs = self.adv.forward(&g, &bind_a, path.wave)?;
            let real_consts: Vec<ScaleOutputs> = real_outs
                .iter()
                .map(|s| ScaleOutputs {
                    features: s.features.iter().map(|&f| g.input_shared(g_d.value(f))).collect(),
                    frame_logits: g.input_shared(g_d.value(s.frame_logits)),
                })
                .collect();

            let l_t = time_loss_node(&g, s_const, path.wave);
            let l_f = freq_loss_node(&g, s_const, path.wave, sr, &spectral)?;
            let l_adv = gen_adv_loss(&g, &fake_outs);
            let l_feat = feat_match_loss(&g, &real_consts, &fake_outs);
            let total = weighted_total_node(&g, &self.cfg.loss, l_t, l_f, l_adv, l_feat);

            // item values accumulate into batch means; total_gen_loss
            // re-derives the exact weighted total from them later
            let item_parts = (g.value(l_t)[[]], g.value(l_f)[[]], g.value(l_adv)[[]], g.value(l_feat)[[]]);
            total_gen_loss(item_parts.0, item_parts.1, item_parts.2, item_parts.3, &self.cfg.loss)?;
            sums.l_t += item_parts.0;
            sums.l_f += item_parts.1;
            sums.l_adv += item_parts.2;
            sums.l_feat += item_parts.3;

            let mut grads = g.backward(total);
            gen_buf.add(bind_g.gradients(&mut grads));
            let fake_value = g.value(path.wave);
            drop(g);

            // Discriminator branch continues on the pre-update generator
            // output, detached.
            let fake_const = g_d.input_shared(fake_value);
            let fake_outs_d = self.adv.forward(&g_d, &bind_d, fake_const)?;
            let l_disc = disc_train_loss(&g_d, &real_outs, &fake_outs_d);
            disc_loss_sum += g_d.value(l_disc)[[]];
            let mut dgrads = g_d.backward(l_disc);
            disc_buf.add(bind_d.gradients(&mut dgrads));
        }

        let n = idx.len() as f64;
        let breakdown =
            total_gen_loss(sums.l_t / n, sums.l_f / n, sums.l_adv / n, sums.l_feat / n, &self.cfg.loss)?;
        let disc_updated =
            gate.unwrap_or_else(|| should_update_disc(disc_loss_sum / n, breakdown.l_adv));

        self.gen_opt.step(&mut self.gan.store, &gen_buf.average());
        if disc_updated {
            self.disc_opt.step(&mut self.adv.store, &disc_buf.average());
        }
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            l_t: breakdown.l_t,
            l_f: breakdown.l_f,
            l_adv: breakdown.l_adv,
            l_feat: breakdown.l_feat,
            total: breakdown.total,
            disc_updated,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.frozen.verify()?;
        let mut ck = Checkpoint::from_store(
            self.kind,
            &self.cfg,
            self.step,
            self.cfg.train.seed,
            self.gen_opt.t(),
            &self.gan.store,
            Some(&self.frozen.model().store),
        );
        ck.attach_adversary(&self.adv.store, self.disc_opt.t());
        ck.save(path)
    }

    /// Runs (or continues) the schedule up to `cfg.train.steps`, appending
    /// the loss curve to `<kind>_train.jsonl` and checkpointing every
    /// `checkpoint_every` steps plus a final `<kind>.ckpt`.
    pub fn run(&mut self, data: &[TrainItem], out_dir: &Path) -> Result<TrainRun<StepRecord>> {
        check_data(&self.cfg, data)?;
        std::fs::create_dir_all(out_dir)?;
        let name = self.kind.name();
        let log_path = out_dir.join(format!("{name}_train.jsonl"));
        let mut log = open_log(&log_path, self.step == 0)?;
        let final_path = out_dir.join(format!("{name}.ckpt"));
        let mut last_ckpt: Option<PathBuf> = None;
        let mut records = Vec::new();

        // the frozen model never changes, so latents are per-item constants
        let latents = self.latents_for(data)?;

        while self.step < self.cfg.train.steps as u64 {
            let record = self
                .step_with(data, &latents, None)
                .map_err(|e| abort_context(e, self.step + 1, &last_ckpt))?;
            append_jsonl(&mut log, &record)?;
            records.push(record);

            if self.cfg.train.checkpoint_every > 0
                && self.step % self.cfg.train.checkpoint_every as u64 == 0
                && self.step < self.cfg.train.steps as u64
            {
                let p = out_dir.join(format!("{name}_step{:06}.ckpt", self.step));
                self.save_checkpoint(&p)?;
                last_ckpt = Some(p);
            }
        }
        self.save_checkpoint(&final_path)?;
        log.flush()?;
        Ok(TrainRun { checkpoint: final_path, log: log_path, records })
    }
}
