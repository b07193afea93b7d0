//! Generator reconstruction losses and the weighted training objective.
//!
//! The time loss is a plain sample-domain L1; the frequency loss averages
//! L1 + RMS distances of log-power and log-Mel spectra over six STFT
//! resolutions (windows 32..1024, hop = window/4). Each loss exists twice:
//! a clip-level function built on the dsp routines, and a graph builder
//! producing a differentiable node for the trainer. The two agree to
//! floating-point noise; the clip-level form is the reference.

use autodiff::{Graph, VarId};
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::config::LossWeights;
use crate::dsp;
use crate::error::{DiscoganError, Result};
use crate::spectral::{graph_log_mel, graph_log_power, graph_stft};

/// Additive guard inside the SI-SDR logs so silent estimates stay finite.
pub const SI_SDR_GUARD: f64 = 1e-30;

/// Multi-resolution schedule of the frequency loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralLossConfig {
    /// Smallest window as a power of two.
    pub min_pow: u32,
    /// Largest window as a power of two (inclusive); also the minimum clip
    /// length the loss accepts.
    pub max_pow: u32,
    /// Mel bands per resolution, capped at window/2 for small windows.
    pub n_mels: usize,
}

impl Default for SpectralLossConfig {
    fn default() -> Self {
        SpectralLossConfig { min_pow: 5, max_pow: 10, n_mels: 64 }
    }
}

impl SpectralLossConfig {
    /// Window sizes in ascending order; the default yields {32,...,1024}.
    pub fn windows(&self) -> Vec<usize> {
        (self.min_pow..=self.max_pow).map(|i| 1usize << i).collect()
    }

    /// Shortest clip the schedule can analyze.
    pub fn min_len(&self) -> usize {
        1usize << self.max_pow
    }

    fn mels_for(&self, window: usize) -> usize {
        self.n_mels.min(window / 2)
    }
}

/// One step's generator loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_t: f64,
    pub l_f: f64,
    pub l_adv: f64,
    pub l_feat: f64,
    pub total: f64,
}

fn check_pair(s: &AudioClip, shat: &AudioClip, what: &str) -> Result<()> {
    if s.len() != shat.len() {
        return Err(DiscoganError::invalid(format!(
            "{what} needs equal lengths, got {} and {}",
            s.len(),
            shat.len()
        )));
    }
    if s.sample_rate != shat.sample_rate {
        return Err(DiscoganError::invalid(format!(
            "{what} needs one sample rate, got {} and {}",
            s.sample_rate, shat.sample_rate
        )));
    }
    if s.len() == 0 {
        return Err(DiscoganError::invalid(format!("{what} needs non-empty clips")));
    }
    Ok(())
}

/// Mean absolute sample error between two aligned clips.
pub fn time_loss(s: &AudioClip, shat: &AudioClip) -> Result<f64> {
    check_pair(s, shat, "time loss")?;
    let sum: f64 = s
        .samples
        .iter()
        .zip(&shat.samples)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / s.len() as f64)
}

fn l1_mean(d: &Array2<f64>) -> f64 {
    d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64
}

fn l2_rms(d: &Array2<f64>) -> f64 {
    (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
}

/// Multi-resolution spectral distance: per window, the entrywise-mean L1
/// plus the RMS of the log-power difference and of the log-Mel difference,
/// averaged over the schedule's resolutions.
pub fn freq_loss(s: &AudioClip, shat: &AudioClip, cfg: &SpectralLossConfig) -> Result<f64> {
    check_pair(s, shat, "frequency loss")?;
    if s.len() < cfg.min_len() {
        return Err(DiscoganError::invalid(format!(
            "frequency loss needs at least {} samples, got {}",
            cfg.min_len(),
            s.len()
        )));
    }
    let windows = cfg.windows();
    let mut total = 0.0;
    for &win in &windows {
        let lp_s = dsp::log_power_spectrogram(s, win)?;
        let lp_e = dsp::log_power_spectrogram(shat, win)?;
        let n_mels = cfg.mels_for(win);
        let lm_s = dsp::log_mel_spectrogram(s, win, n_mels)?;
        let lm_e = dsp::log_mel_spectrogram(shat, win, n_mels)?;
        let dp = &lp_s - &lp_e;
        let dm = &lm_s - &lm_e;
        total += l1_mean(&dp) + l2_rms(&dp) + l1_mean(&dm) + l2_rms(&dm);
    }
    Ok(total / windows.len() as f64)
}

/// Combines the four loss parts into the weighted generator total.
/// Errors name the first non-finite term so training aborts legibly.
pub fn total_gen_loss(
    l_t: f64,
    l_f: f64,
    l_adv: f64,
    l_feat: f64,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    for (name, v) in [("l_t", l_t), ("l_f", l_f), ("l_adv", l_adv), ("l_feat", l_feat)] {
        if !v.is_finite() {
            return Err(DiscoganError::Numeric(format!(
                "non-finite generator loss term {name} = {v}"
            )));
        }
    }
    let total =
        (w.lambda_t * l_t + w.lambda_f * l_f) + (w.lambda_adv * l_adv + w.lambda_feat * l_feat);
    Ok(LossBreakdown { l_t, l_f, l_adv, l_feat, total })
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

/// `time_loss` as a differentiable node over two 1-D signal nodes.
pub fn time_loss_node(g: &Graph, s: VarId, shat: VarId) -> VarId {
    g.mean_all(g.abs(g.sub(s, shat)))
}

fn l1_mean_node(g: &Graph, d: VarId) -> VarId {
    g.mean_all(g.abs(d))
}

fn l2_rms_node(g: &Graph, d: VarId) -> VarId {
    g.sqrt(g.mean_all(g.square(d)))
}

/// `freq_loss` as a differentiable node over two 1-D signal nodes.
/// `sample_rate` fixes the Mel filterbanks, which enter as constants.
pub fn freq_loss_node(
    g: &Graph,
    s: VarId,
    shat: VarId,
    sample_rate: u32,
    cfg: &SpectralLossConfig,
) -> Result<VarId> {
    let (ls, le) = (g.shape(s), g.shape(shat));
    if ls.len() != 1 || ls != le {
        return Err(DiscoganError::invalid(format!(
            "frequency loss needs two equal 1-D signals, got {ls:?} and {le:?}"
        )));
    }
    if ls[0] < cfg.min_len() {
        return Err(DiscoganError::invalid(format!(
            "frequency loss needs at least {} samples, got {}",
            cfg.min_len(),
            ls[0]
        )));
    }
    let windows = cfg.windows();
    let mut terms = Vec::with_capacity(windows.len());
    for &win in &windows {
        let hop = win / 4;
        let sp_s = graph_stft(g, s, win, hop);
        let sp_e = graph_stft(g, shat, win, hop);
        let dp = g.sub(graph_log_power(g, sp_s), graph_log_power(g, sp_e));

        let n_mels = cfg.mels_for(win);
        let bank = dsp::mel_filterbank(win / 2 + 1, win, sample_rate, n_mels);
        let bank_t = g.input(
            bank.t()
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order(IxDyn(&[win / 2 + 1, n_mels]))
                .expect("filterbank transpose is dense"),
        );
        let dm = g.sub(graph_log_mel(g, sp_s, bank_t), graph_log_mel(g, sp_e, bank_t));

        let p = g.add(l1_mean_node(g, dp), l2_rms_node(g, dp));
        let m = g.add(l1_mean_node(g, dm), l2_rms_node(g, dm));
        terms.push(g.add(p, m));
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = g.add(sum, t);
    }
    Ok(g.scale(sum, 1.0 / windows.len() as f64))
}

/// Weighted sum of the four scalar loss nodes, same association as
/// [`total_gen_loss`] so logged totals match the differentiated node bit
/// for bit.
pub fn weighted_total_node(
    g: &Graph,
    w: &LossWeights,
    l_t: VarId,
    l_f: VarId,
    l_adv: VarId,
    l_feat: VarId,
) -> VarId {
    let recon = g.add(g.scale(l_t, w.lambda_t), g.scale(l_f, w.lambda_f));
    let gan = g.add(g.scale(l_adv, w.lambda_adv), g.scale(l_feat, w.lambda_feat));
    g.add(recon, gan)
}

/// Negative SI-SDR (dB) of a 1-D estimate node against a fixed reference —
/// the pre-training objective. Uses the closed form
/// ‖αs − e‖² = ‖e‖² − α²‖s‖² so the reference enters only through constants,
/// with a tiny additive guard inside both logs.
pub fn si_sdr_loss_node(g: &Graph, reference: &[f64], estimate: VarId) -> Result<VarId> {
    let shape = g.shape(estimate);
    if shape.len() != 1 || shape[0] != reference.len() {
        return Err(DiscoganError::invalid(format!(
            "si-sdr loss needs a 1-D estimate of length {}, got {shape:?}",
            reference.len()
        )));
    }
    let s_pow: f64 = reference.iter().map(|v| v * v).sum();
    if s_pow <= 0.0 {
        return Err(DiscoganError::invalid("si-sdr loss reference is silent"));
    }
    let s = g.input(
        ArrayD::from_shape_vec(IxDyn(&[reference.len()]), reference.to_vec())
            .expect("reference is dense"),
    );
    let dot = g.sum_all(g.mul(s, estimate));
    let target_pow = g.scale(g.square(dot), 1.0 / s_pow);
    // Clamp shields the log from the tiny negative residue floating point
    // can leave when the estimate is an exact multiple of the reference.
    let err_pow = g.relu(g.sub(g.sum_all(g.square(estimate)), target_pow));
    let db = g.scale(
        g.sub(
            g.ln(g.add_scalar(target_pow, SI_SDR_GUARD)),
            g.ln(g.add_scalar(err_pow, SI_SDR_GUARD)),
        ),
        10.0 / std::f64::consts::LN_10,
    );
    Ok(g.neg(db))
}
