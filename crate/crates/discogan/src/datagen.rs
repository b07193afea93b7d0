//! Noisy/clean mixture synthesis with exact target SNRs.
//!
//! Mixtures are described by a [`MixtureSpec`] (which clean and noise clip,
//! optional room impulse response, target SNR, duration, per-mixture seed)
//! and rendered deterministically: the same spec always produces the same
//! samples. Sources shorter than the requested duration are tiled
//! circularly from a seeded offset; the noise gain is computed from
//! full-clip powers so the realized SNR equals the target to rounding
//! error. When a room impulse response is present the *reverberant* clean
//! signal is the training target and the SNR is measured against it.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, AudioClip, WavFormat};
use crate::error::{DiscoganError, Result};
use crate::metrics::BUCKETS;

/// How to draw one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataRecipe {
    pub count: usize,
    /// Clip length in seconds.
    pub duration: f64,
    /// Inclusive SNR range in dB; per-mixture targets are uniform in it.
    pub snr_range: (f64, f64),
    /// Fraction of mixtures convolved with a room impulse response.
    pub reverb_fraction: f64,
    pub seed: u64,
}

/// One mixture, fully determined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub clean_id: String,
    pub noise_id: String,
    pub rir_id: Option<String>,
    pub target_snr: f64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
}

/// Manifest header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    split: String,
    bucket_edges: Vec<String>,
}

/// A dataset as a list of specs plus its split name.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: String,
    pub bucket_edges: Vec<String>,
    pub entries: Vec<MixtureSpec>,
}

impl DatasetManifest {
    /// Serializes as line-delimited JSON: one header line, one line per
    /// spec. Byte-stable for a fixed manifest.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header =
            ManifestHeader { split: self.split.clone(), bucket_edges: self.bucket_edges.clone() };
        out.push_str(&serde_json::to_string(&header)?);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(
            lines.next().ok_or_else(|| DiscoganError::Data("empty manifest".into()))?,
        )?;
        let mut entries = Vec::new();
        for line in lines {
            entries.push(serde_json::from_str(line)?);
        }
        Ok(DatasetManifest { split: header.split, bucket_edges: header.bucket_edges, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// Draws `recipe.count` mixture specs from the given source pools.
pub fn build_manifest(
    recipe: &DataRecipe,
    clean_ids: &[String],
    noise_ids: &[String],
    rir_ids: &[String],
    split: &str,
) -> Result<DatasetManifest> {
    if clean_ids.is_empty() || noise_ids.is_empty() {
        return Err(DiscoganError::Data("clean and noise pools must be non-empty".into()));
    }
    if recipe.reverb_fraction > 0.0 && rir_ids.is_empty() {
        return Err(DiscoganError::Data(
            "reverb_fraction > 0 requires a non-empty impulse-response pool".into(),
        ));
    }
    let (lo, hi) = recipe.snr_range;
    if !(lo <= hi) {
        return Err(DiscoganError::Data(format!("snr_range ({lo}, {hi}) is reversed")));
    }
    if recipe.duration <= 0.0 {
        return Err(DiscoganError::Data("duration must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(recipe.seed);
    let mut entries = Vec::with_capacity(recipe.count);
    for _ in 0..recipe.count {
        let clean_id = clean_ids[rng.gen_range(0..clean_ids.len())].clone();
        let noise_id = noise_ids[rng.gen_range(0..noise_ids.len())].clone();
        let with_rir = rng.gen::<f64>() < recipe.reverb_fraction;
        let rir_id = if with_rir {
            Some(rir_ids[rng.gen_range(0..rir_ids.len())].clone())
        } else {
            None
        };
        let target_snr = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        entries.push(MixtureSpec {
            clean_id,
            noise_id,
            rir_id,
            target_snr,
            duration: recipe.duration,
            seed: rng.next_u64(),
        });
    }
    Ok(DatasetManifest {
        split: split.to_string(),
        bucket_edges: BUCKETS.iter().map(|s| s.to_string()).collect(),
        entries,
    })
}

/// Gain to apply to `noise` so that clean + gain * noise sits at
/// `target_db` SNR, using full-clip powers.
pub fn scale_noise_for_snr(clean: &AudioClip, noise: &AudioClip, target_db: f64) -> Result<f64> {
    let s_pow = clean.power() * clean.len() as f64;
    let n_pow = noise.power() * noise.len() as f64;
    if s_pow <= 0.0 {
        return Err(DiscoganError::Data("clean source is silent".into()));
    }
    if n_pow <= 0.0 {
        return Err(DiscoganError::Data("noise source is silent".into()));
    }
    Ok((s_pow / (n_pow * 10f64.powf(target_db / 10.0))).sqrt())
}

/// Tiles `src` circularly from `offset` to exactly `len` samples.
fn tile_circular(src: &[f64], len: usize, offset: usize) -> Vec<f64> {
    (0..len).map(|i| src[(offset + i) % src.len()]).collect()
}

/// Direct-form convolution truncated to the input length.
fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let k_max = n.min(h.len() - 1);
        let mut acc = 0.0;
        for k in 0..=k_max {
            acc += h[k] * x[n - k];
        }
        *out = acc;
    }
    y
}

/// Renders one (mixture, target) pair from its spec and source clips.
/// Returns clips whose peak is at most 0.99 (a common rescale preserves
/// the SNR when the raw mixture would clip).
pub fn make_mixture(
    spec: &MixtureSpec,
    clean: &AudioClip,
    noise: &AudioClip,
    rir: Option<&AudioClip>,
) -> Result<(AudioClip, AudioClip)> {
    if spec.rir_id.is_some() != rir.is_some() {
        return Err(DiscoganError::Data(format!(
            "spec for clean '{}' expects rir {:?} but got {}",
            spec.clean_id,
            spec.rir_id,
            if rir.is_some() { "one" } else { "none" }
        )));
    }
    if clean.is_empty() || noise.is_empty() {
        return Err(DiscoganError::Data("empty source clip".into()));
    }
    if clean.sample_rate != noise.sample_rate {
        return Err(DiscoganError::Data("sample-rate mismatch between sources".into()));
    }
    let sr = clean.sample_rate;
    let len = (spec.duration * sr as f64).round() as usize;
    if len == 0 {
        return Err(DiscoganError::Data("duration rounds to zero samples".into()));
    }

    // Offset draws are ordered: clean first, then noise.
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let clean_off = rng.gen_range(0..clean.len());
    let noise_off = rng.gen_range(0..noise.len());

    let clean_t = tile_circular(&clean.samples, len, clean_off);
    let noise_t = tile_circular(&noise.samples, len, noise_off);

    // The (possibly reverberant) clean signal is the target.
    let target_samples = match rir {
        Some(h) => {
            if h.is_empty() {
                return Err(DiscoganError::Data("empty impulse response".into()));
            }
            convolve_truncated(&clean_t, &h.samples)
        }
        None => clean_t,
    };
    let target = AudioClip::new(target_samples, sr);
    let noise_clip = AudioClip::new(noise_t, sr);
    let gain = scale_noise_for_snr(&target, &noise_clip, spec.target_snr)?;

    let mut mix: Vec<f64> =
        target.samples.iter().zip(&noise_clip.samples).map(|(s, n)| s + gain * n).collect();
    let mut ref_samples = target.samples;

    let peak = mix
        .iter()
        .chain(ref_samples.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        // common rescale: SNR is a power ratio, so it is unchanged
        let c = 0.99 / peak;
        for v in mix.iter_mut() {
            *v *= c;
        }
        for v in ref_samples.iter_mut() {
            *v *= c;
        }
    }
    Ok((AudioClip::new(mix, sr), AudioClip::new(ref_samples, sr)))
}

/// Loads every mono WAV in a directory, sorted by file stem.
pub fn load_pool(dir: &Path) -> Result<Vec<(String, AudioClip)>> {
    let mut out = Vec::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "wav").unwrap_or(false))
        .collect();
    paths.sort();
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| DiscoganError::Data(format!("unusable file name {p:?}")))?
            .to_string();
        out.push((id, read_wav(&p)?));
    }
    if out.is_empty() {
        return Err(DiscoganError::Data(format!("no wav files in {dir:?}")));
    }
    Ok(out)
}

/// File names for mixture `idx` inside a rendered dataset directory.
pub fn mixture_file_names(idx: usize) -> (String, String) {
    (format!("{idx:05}_mix.wav"), format!("{idx:05}_ref.wav"))
}

/// Renders every entry of a manifest into `out_dir` as 32-bit float WAV
/// pairs. Existing files are overwritten so a rerun converges to the same
/// bytes.
pub fn render_dataset(
    manifest: &DatasetManifest,
    clean_pool: &[(String, AudioClip)],
    noise_pool: &[(String, AudioClip)],
    rir_pool: &[(String, AudioClip)],
    out_dir: &Path,
) -> Result<()> {
    let index = |pool: &[(String, AudioClip)]| -> BTreeMap<String, usize> {
        pool.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect()
    };
    let clean_idx = index(clean_pool);
    let noise_idx = index(noise_pool);
    let rir_idx = index(rir_pool);
    std::fs::create_dir_all(out_dir)?;
    for (i, spec) in manifest.entries.iter().enumerate() {
        let clean = &clean_pool[*clean_idx
            .get(&spec.clean_id)
            .ok_or_else(|| DiscoganError::Data(format!("clean id '{}' not in pool", spec.clean_id)))?]
        .1;
        let noise = &noise_pool[*noise_idx
            .get(&spec.noise_id)
            .ok_or_else(|| DiscoganError::Data(format!("noise id '{}' not in pool", spec.noise_id)))?]
        .1;
        let rir = match &spec.rir_id {
            Some(id) => Some(
                &rir_pool[*rir_idx
                    .get(id)
                    .ok_or_else(|| DiscoganError::Data(format!("rir id '{id}' not in pool")))?]
                .1,
            ),
            None => None,
        };
        let (mix, reference) = make_mixture(spec, clean, noise, rir)?;
        let (mix_name, ref_name) = mixture_file_names(i);
        write_wav(&mix, &out_dir.join(mix_name), WavFormat::Float32)?;
        write_wav(&reference, &out_dir.join(ref_name), WavFormat::Float32)?;
    }
    Ok(())
}

/// Synthetic speech-like source: a pitch-modulated harmonic stack with
/// syllabic amplitude envelopes and short pauses. Deterministic per seed.
pub fn synth_speech_like(len: usize, sample_rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let f0_base = rng.gen_range(90.0..220.0);
    let n_harm = 8;
    let harm_gains: Vec<f64> = (0..n_harm).map(|h| 1.0 / (1.0 + h as f64)).collect();
    let syllable_rate = rng.gen_range(2.5..4.5);
    let vibrato = rng.gen_range(2.0..7.0);
    let pause_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let sr = sample_rate as f64;
    let mut phase = 0.0f64;
    let mut samples = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sr;
        let f0 = f0_base * (1.0 + 0.04 * (std::f64::consts::TAU * vibrato * t).sin());
        phase += std::f64::consts::TAU * f0 / sr;
        let syllable = (std::f64::consts::TAU * syllable_rate * t + pause_phase).sin();
        let env = (syllable.max(0.0)).powf(0.75);
        let mut v = 0.0;
        for (h, g) in harm_gains.iter().enumerate() {
            v += g * ((h + 1) as f64 * phase).sin();
        }
        samples.push(0.22 * env * v / n_harm as f64 * 4.0);
    }
    AudioClip::new(samples, sample_rate)
}

/// Synthetic noise source: white noise through a one-pole lowpass whose
/// cutoff depends on the seed. Deterministic per seed.
pub fn synth_noise(len: usize, sample_rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let alpha = rng.gen_range(0.02..0.6);
    let mut state = 0.0;
    let mut samples = Vec::with_capacity(len);
    for _ in 0..len {
        let white: f64 = rng.gen_range(-1.0..1.0);
        state += alpha * (white - state);
        samples.push(0.5 * state);
    }
    AudioClip::new(samples, sample_rate)
}

/// Synthetic room impulse response: unit direct path plus exponentially
/// decaying noise tail. Deterministic per seed.
pub fn synth_rir(len: usize, sample_rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let t60 = rng.gen_range(0.15..0.5);
    let decay = (-3.0 * std::f64::consts::LN_10 / (t60 * sample_rate as f64)).exp();
    let mut samples = vec![0.0; len];
    samples[0] = 1.0;
    let mut env = 0.35;
    for s in samples.iter_mut().skip(1) {
        env *= decay;
        *s = env * rng.gen_range(-1.0..1.0f64);
    }
    AudioClip::new(samples, sample_rate)
}
