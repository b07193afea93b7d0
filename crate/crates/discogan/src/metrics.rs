//! SNR-family evaluation metrics and dataset-level reporting.
//!
//! All metrics are plain f64 functions of (reference, estimate) clips:
//! - `snr` / `delta_snr`: broadband ratio, capped at +/-100 dB;
//! - `si_sdr`: scale-invariant SDR with the same cap;
//! - `seg_snr`: per-frame SNR clamped to [-10, 35] dB, averaged over frames
//!   whose reference energy exceeds -60 dBFS;
//! - `fw_seg_snr`: frequency-weighted segmental SNR over 25 mel-spaced
//!   bands of 25 ms frames with 40% overlap, band weights |S|^0.2.
//!
//! Length mismatches between reference and estimate are programmer errors
//! and panic; data-dependent problems surface as per-row failures in
//! [`evaluate_dataset`].

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp;
use crate::error::{DiscoganError, Result};

const CAP_DB: f64 = 100.0;
const SEG_MIN_DB: f64 = -10.0;
const SEG_MAX_DB: f64 = 35.0;
/// Reference frames quieter than this are ignored by segmental metrics.
const ACTIVE_GATE_DBFS: f64 = -60.0;

/// SNR bucket labels, quietest first.
pub const BUCKETS: [&str; 4] = ["[-20,-16]", "[-15,-11]", "[-10,-6]", "[-5,0]"];

fn capped_ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        // zero error: indistinguishable from perfect, cap high
        return CAP_DB;
    }
    if num <= 0.0 {
        return -CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-CAP_DB, CAP_DB)
}

/// Broadband SNR of `estimate` against `reference`, capped at +/-100 dB.
pub fn snr(reference: &AudioClip, estimate: &AudioClip) -> f64 {
    assert_eq!(reference.len(), estimate.len(), "snr needs equal lengths");
    let num: f64 = reference.samples.iter().map(|s| s * s).sum();
    let den: f64 =
        reference.samples.iter().zip(&estimate.samples).map(|(s, e)| (s - e) * (s - e)).sum();
    capped_ratio_db(num, den)
}

/// SNR improvement of the estimate over the mixture.
pub fn delta_snr(reference: &AudioClip, estimate: &AudioClip, mixture: &AudioClip) -> f64 {
    snr(reference, estimate) - snr(reference, mixture)
}

/// Scale-invariant SDR. The reference must be non-silent.
pub fn si_sdr(reference: &AudioClip, estimate: &AudioClip) -> f64 {
    assert_eq!(reference.len(), estimate.len(), "si_sdr needs equal lengths");
    let s_pow: f64 = reference.samples.iter().map(|s| s * s).sum();
    assert!(s_pow > 0.0, "si_sdr reference must be non-silent");
    let dot: f64 = reference.samples.iter().zip(&estimate.samples).map(|(s, e)| s * e).sum();
    let alpha = dot / s_pow;
    let target_pow = alpha * alpha * s_pow;
    let err_pow: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(s, e)| {
            let d = e - alpha * s;
            d * d
        })
        .sum();
    if err_pow < target_pow * 1e-24 {
        return CAP_DB;
    }
    capped_ratio_db(target_pow, err_pow)
}

fn frame_is_active(frame: &[f64]) -> bool {
    let mean_pow = frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64;
    10.0 * mean_pow.max(f64::MIN_POSITIVE).log10() > ACTIVE_GATE_DBFS
}

fn clamp_seg(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return SEG_MAX_DB;
    }
    if num <= 0.0 {
        return SEG_MIN_DB;
    }
    (10.0 * (num / den).log10()).clamp(SEG_MIN_DB, SEG_MAX_DB)
}

/// Segmental SNR over non-overlapping frames of `frame_len` samples.
/// Inactive reference frames (below -60 dBFS) and a partial tail frame are
/// skipped; returns 0 if no frame is active.
pub fn seg_snr(reference: &AudioClip, estimate: &AudioClip, frame_len: usize) -> f64 {
    assert_eq!(reference.len(), estimate.len(), "seg_snr needs equal lengths");
    assert!(frame_len > 0);
    let mut total = 0.0;
    let mut active = 0usize;
    let n_frames = reference.len() / frame_len;
    for t in 0..n_frames {
        let lo = t * frame_len;
        let s = &reference.samples[lo..lo + frame_len];
        let e = &estimate.samples[lo..lo + frame_len];
        if !frame_is_active(s) {
            continue;
        }
        let num: f64 = s.iter().map(|v| v * v).sum();
        let den: f64 = s.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        total += clamp_seg(num, den);
        active += 1;
    }
    if active == 0 {
        0.0
    } else {
        total / active as f64
    }
}

/// Frequency-weighted value of a single frame from band magnitudes of the
/// reference and estimate: sum_j W_j clamp(10 log10(S_j^2 / (S_j-E_j)^2))
/// / sum_j W_j with W_j = S_j^0.2. None if all weights vanish.
pub fn fw_frame_value(s_bands: &[f64], e_bands: &[f64]) -> Option<f64> {
    assert_eq!(s_bands.len(), e_bands.len());
    let mut num = 0.0;
    let mut wsum = 0.0;
    for (&s, &e) in s_bands.iter().zip(e_bands) {
        let w = if s > 0.0 { s.powf(0.2) } else { 0.0 };
        if w == 0.0 {
            continue;
        }
        let d = (s - e) * (s - e);
        num += w * clamp_seg(s * s, d);
        wsum += w;
    }
    if wsum > 0.0 {
        Some(num / wsum)
    } else {
        None
    }
}

/// Mel-band magnitudes of 25 ms frames with 40% overlap: (frames, bands).
fn band_magnitudes(samples: &[f64], sample_rate: u32, n_bands: usize) -> Array2<f64> {
    let frame_len = (0.025 * sample_rate as f64).round() as usize;
    let hop = (frame_len as f64 * 0.6).round() as usize;
    let nfft = frame_len.next_power_of_two();
    let n_bins = nfft / 2 + 1;
    let n_frames = if samples.len() >= frame_len { 1 + (samples.len() - frame_len) / hop } else { 0 };
    let window = dsp::periodic_hann(frame_len);
    let bank = dsp::mel_filterbank(n_bins, nfft, sample_rate, n_bands);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut out = Array2::zeros((n_frames, n_bands));
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for t in 0..n_frames {
        let lo = t * hop;
        for m in 0..nfft {
            let v = if m < frame_len { samples[lo + m] * window[m] } else { 0.0 };
            buf[m] = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for j in 0..n_bands {
            let mut p = 0.0;
            for b in 0..n_bins {
                let w = bank[[j, b]];
                if w > 0.0 {
                    p += w * buf[b].norm_sqr();
                }
            }
            out[[t, j]] = p.sqrt();
        }
    }
    out
}

/// Frequency-weighted segmental SNR over 25 mel-spaced bands. Frames where
/// the reference is below -60 dBFS are skipped; returns 0 if nothing is
/// active.
pub fn fw_seg_snr(reference: &AudioClip, estimate: &AudioClip) -> f64 {
    assert_eq!(reference.len(), estimate.len(), "fw_seg_snr needs equal lengths");
    const N_BANDS: usize = 25;
    let frame_len = (0.025 * reference.sample_rate as f64).round() as usize;
    let hop = (frame_len as f64 * 0.6).round() as usize;
    let s_bands = band_magnitudes(&reference.samples, reference.sample_rate, N_BANDS);
    let e_bands = band_magnitudes(&estimate.samples, estimate.sample_rate, N_BANDS);

    let mut total = 0.0;
    let mut active = 0usize;
    for t in 0..s_bands.nrows() {
        let lo = t * hop;
        if !frame_is_active(&reference.samples[lo..lo + frame_len]) {
            continue;
        }
        if let Some(v) = fw_frame_value(
            s_bands.row(t).as_slice().expect("row contiguous"),
            e_bands.row(t).as_slice().expect("row contiguous"),
        ) {
            total += v;
            active += 1;
        }
    }
    if active == 0 {
        0.0
    } else {
        total / active as f64
    }
}

/// Maps an input SNR in [-20, 0] dB to its bucket label; boundary values
/// join the higher (less noisy) bucket.
pub fn bucket_of_snr(snr_db: f64) -> Result<&'static str> {
    if !snr_db.is_finite() || !(-20.0..=0.0).contains(&snr_db) {
        return Err(DiscoganError::invalid(format!(
            "input SNR {snr_db} dB outside the bucketed range [-20, 0]"
        )));
    }
    Ok(if snr_db >= -5.0 {
        BUCKETS[3]
    } else if snr_db >= -10.0 {
        BUCKETS[2]
    } else if snr_db >= -15.0 {
        BUCKETS[1]
    } else {
        BUCKETS[0]
    })
}

/// One clip to score.
pub struct EvalItem {
    pub clip_id: String,
    pub reference: AudioClip,
    pub mixture: AudioClip,
    pub enhanced: AudioClip,
    /// Construction-time SNR used for bucketing; falls back to the measured
    /// input SNR when absent.
    pub target_snr: Option<f64>,
}

/// Per-clip metric row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub bucket: String,
    pub input_snr: f64,
    pub snr: f64,
    pub delta_snr: f64,
    pub si_sdr: f64,
    pub seg_snr: f64,
    pub fw_seg_snr: f64,
    pub delta_fw_seg_snr: f64,
}

/// Mean metrics over one bucket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketSummary {
    pub bucket: String,
    pub count: usize,
    pub delta_snr: f64,
    pub si_sdr: f64,
    pub seg_snr: f64,
    pub fw_seg_snr: f64,
    pub delta_fw_seg_snr: f64,
}

/// Full evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ClipMetrics>,
    pub buckets: Vec<BucketSummary>,
    pub failures: Vec<(String, String)>,
}

impl MetricReport {
    /// Tab-separated text rendering: one row per clip, a bucket-summary
    /// block, and a failure block when any row failed. Floats print in
    /// shortest round-trip form, so identical reports render to identical
    /// bytes.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "clip_id\tbucket\tinput_snr\tsnr\tdelta_snr\tsi_sdr\tseg_snr\tfw_seg_snr\tdelta_fw_seg_snr\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.clip_id,
                r.bucket,
                r.input_snr,
                r.snr,
                r.delta_snr,
                r.si_sdr,
                r.seg_snr,
                r.fw_seg_snr,
                r.delta_fw_seg_snr
            ));
        }
        out.push_str("\n# buckets\n");
        out.push_str("bucket\tcount\tdelta_snr\tsi_sdr\tseg_snr\tfw_seg_snr\tdelta_fw_seg_snr\n");
        for b in &self.buckets {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                b.bucket, b.count, b.delta_snr, b.si_sdr, b.seg_snr, b.fw_seg_snr, b.delta_fw_seg_snr
            ));
        }
        if !self.failures.is_empty() {
            out.push_str("\n# failures\n");
            for (id, msg) in &self.failures {
                out.push_str(&format!("{id}\t{msg}\n"));
            }
        }
        out
    }
}

/// Segmental frame length used by reports: 25 ms.
pub fn report_seg_frame(sample_rate: u32) -> usize {
    (0.025 * sample_rate as f64).round() as usize
}

/// Scores every item and aggregates by bucket. Items with mismatched
/// lengths or out-of-range SNR are recorded as failures, not panics.
pub fn evaluate_dataset(items: &[EvalItem]) -> MetricReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for item in items {
        let n = item.reference.len();
        if n == 0 || item.mixture.len() != n || item.enhanced.len() != n {
            failures.push((
                item.clip_id.clone(),
                format!(
                    "length mismatch: reference {n}, mixture {}, enhanced {}",
                    item.mixture.len(),
                    item.enhanced.len()
                ),
            ));
            continue;
        }
        let input_snr = snr(&item.reference, &item.mixture);
        let bucket = match bucket_of_snr(item.target_snr.unwrap_or(input_snr)) {
            Ok(b) => b,
            Err(e) => {
                failures.push((item.clip_id.clone(), e.to_string()));
                continue;
            }
        };
        let frame = report_seg_frame(item.reference.sample_rate);
        rows.push(ClipMetrics {
            clip_id: item.clip_id.clone(),
            bucket: bucket.to_string(),
            input_snr,
            snr: snr(&item.reference, &item.enhanced),
            delta_snr: delta_snr(&item.reference, &item.enhanced, &item.mixture),
            si_sdr: si_sdr(&item.reference, &item.enhanced),
            seg_snr: seg_snr(&item.reference, &item.enhanced, frame),
            fw_seg_snr: fw_seg_snr(&item.reference, &item.enhanced),
            delta_fw_seg_snr: fw_seg_snr(&item.reference, &item.enhanced)
                - fw_seg_snr(&item.reference, &item.mixture),
        });
    }

    let mut buckets = Vec::new();
    for label in BUCKETS {
        let members: Vec<&ClipMetrics> = rows.iter().filter(|r| r.bucket == label).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        buckets.push(BucketSummary {
            bucket: label.to_string(),
            count: members.len(),
            delta_snr: members.iter().map(|r| r.delta_snr).sum::<f64>() / n,
            si_sdr: members.iter().map(|r| r.si_sdr).sum::<f64>() / n,
            seg_snr: members.iter().map(|r| r.seg_snr).sum::<f64>() / n,
            fw_seg_snr: members.iter().map(|r| r.fw_seg_snr).sum::<f64>() / n,
            delta_fw_seg_snr: members.iter().map(|r| r.delta_fw_seg_snr).sum::<f64>() / n,
        });
    }
    MetricReport { rows, buckets, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, 16_000)
    }

    /// Adds noise scaled so the result sits at exactly `target_db` SNR.
    fn mix_at(reference: &AudioClip, noise: &[f64], target_db: f64) -> AudioClip {
        let s_pow: f64 = reference.samples.iter().map(|v| v * v).sum();
        let n_pow: f64 = noise.iter().map(|v| v * v).sum();
        let gain = (s_pow / (n_pow * 10f64.powf(target_db / 10.0))).sqrt();
        clip(
            reference
                .samples
                .iter()
                .zip(noise)
                .map(|(s, n)| s + gain * n)
                .collect(),
        )
    }

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn snr_matches_hand_ratio() {
        // error power is one tenth of signal power -> exactly 10 dB
        let s = clip(vec![1.0, 1.0, 1.0, 1.0]);
        let e = clip(vec![1.0 + 0.2, 1.0 - 0.2, 1.0 + 0.2, 1.0 - 0.2]);
        // num = 4, den = 4 * 0.04 = 0.16 -> 10 log10(25) = 13.9794..
        assert!((snr(&s, &e) - 10.0 * 25f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn snr_caps_at_plus_minus_100() {
        let s = clip(vec![1.0; 8]);
        assert_eq!(snr(&s, &s), 100.0);
        let far = clip(vec![1e9; 8]);
        assert_eq!(snr(&s, &far), -100.0);
    }

    #[test]
    fn delta_snr_is_difference_of_snrs() {
        let s = clip(random_vec(4_000, 1));
        let noise = random_vec(4_000, 2);
        let x = mix_at(&s, &noise, -10.0);
        let e = mix_at(&s, &noise, 5.0);
        assert!((snr(&s, &x) + 10.0).abs() < 1e-9);
        assert!((delta_snr(&s, &e, &x) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn si_sdr_hand_example() {
        // reference (1,0), estimate (1,1): projection leaves error (0,1)
        // with equal powers -> 0 dB.
        let s = clip(vec![1.0, 0.0]);
        let e = clip(vec![1.0, 1.0]);
        assert!(si_sdr(&s, &e).abs() < 1e-12);
    }

    #[test]
    fn si_sdr_is_scale_invariant() {
        let s = clip(random_vec(1_000, 3));
        let e = clip(s.samples.iter().map(|v| v * 3.5).collect());
        assert_eq!(si_sdr(&s, &e), 100.0);
        let noisy = mix_at(&s, &random_vec(1_000, 4), 7.0);
        let scaled = clip(noisy.samples.iter().map(|v| v * 0.25).collect());
        assert!((si_sdr(&s, &noisy) - si_sdr(&s, &scaled)).abs() < 1e-9);
    }

    #[test]
    fn seg_snr_single_frame_ratio_ten() {
        // one full frame with signal/error power ratio 10 -> 10 dB
        let s = clip(vec![1.0; 100]);
        let mut e = s.samples.clone();
        for (i, v) in e.iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.1f64.sqrt() } else { -(0.1f64.sqrt()) };
        }
        assert!((seg_snr(&s, &clip(e), 100) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn seg_snr_skips_silent_frames_and_clamps() {
        // frame 1: ratio 10 -> 10 dB; frame 2: silent reference, skipped
        let mut s = vec![1.0; 100];
        s.extend(vec![0.0; 100]);
        let mut e = s.clone();
        for (i, v) in e.iter_mut().enumerate().take(100) {
            *v += if i % 2 == 0 { 0.1f64.sqrt() } else { -(0.1f64.sqrt()) };
        }
        let val = seg_snr(&clip(s.clone()), &clip(e), 100);
        assert!((val - 10.0).abs() < 1e-9);

        // perfect estimate hits the +35 ceiling
        let sc = clip(vec![0.5; 100]);
        assert_eq!(seg_snr(&sc, &sc, 100), 35.0);

        // zero estimate scores the raw 0 dB per active frame
        let zero = clip(vec![0.0; 100]);
        assert!((seg_snr(&sc, &zero, 100) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn fw_frame_value_weighted_mean() {
        // equal band magnitudes, band SNRs of 10 and 20 dB -> mean 15 dB
        let s = [1.0, 1.0];
        let e = [1.0 - 0.1f64.sqrt(), 1.0 - 0.01f64.sqrt()];
        let v = fw_frame_value(&s, &e).unwrap();
        assert!((v - 15.0).abs() < 1e-9);

        // weights follow S^0.2
        let s2 = [1.0, 2f64.powi(5)]; // weights 1 and 2
        let e2 = [1.0 - 0.1f64.sqrt(), 32.0 - 32.0 * 0.01f64.sqrt()];
        let v2 = fw_frame_value(&s2, &e2).unwrap();
        assert!((v2 - (10.0 + 2.0 * 20.0) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn fw_seg_snr_perfect_estimate_hits_ceiling() {
        let s = clip(random_vec(4_000, 5));
        assert!((fw_seg_snr(&s, &s) - 35.0).abs() < 1e-12);
    }

    #[test]
    fn fw_seg_snr_is_finite_and_ordered_for_noisy_inputs() {
        let s = clip(random_vec(8_000, 6));
        let noise = random_vec(8_000, 7);
        let bad = mix_at(&s, &noise, -5.0);
        let good = mix_at(&s, &noise, 15.0);
        let fw_bad = fw_seg_snr(&s, &bad);
        let fw_good = fw_seg_snr(&s, &good);
        assert!(fw_bad.is_finite() && fw_good.is_finite());
        assert!(fw_good > fw_bad);
    }

    #[test]
    fn buckets_match_reference_partition() {
        assert_eq!(bucket_of_snr(-18.0).unwrap(), "[-20,-16]");
        assert_eq!(bucket_of_snr(-20.0).unwrap(), "[-20,-16]");
        assert_eq!(bucket_of_snr(-15.0).unwrap(), "[-15,-11]");
        assert_eq!(bucket_of_snr(-11.0).unwrap(), "[-15,-11]");
        assert_eq!(bucket_of_snr(-10.0).unwrap(), "[-10,-6]");
        assert_eq!(bucket_of_snr(-6.5).unwrap(), "[-10,-6]");
        assert_eq!(bucket_of_snr(-5.0).unwrap(), "[-5,0]");
        assert_eq!(bucket_of_snr(0.0).unwrap(), "[-5,0]");
        assert!(bucket_of_snr(-20.5).is_err());
        assert!(bucket_of_snr(0.5).is_err());
        assert!(bucket_of_snr(f64::NAN).is_err());
    }

    #[test]
    fn evaluate_dataset_buckets_and_failures() {
        let s = clip(random_vec(4_000, 8));
        let noise = random_vec(4_000, 9);
        let items = vec![
            EvalItem {
                clip_id: "a".into(),
                reference: s.clone(),
                mixture: mix_at(&s, &noise, -18.0),
                enhanced: s.clone(),
                target_snr: Some(-18.0),
            },
            EvalItem {
                clip_id: "b".into(),
                reference: s.clone(),
                mixture: mix_at(&s, &noise, -3.0),
                enhanced: mix_at(&s, &noise, 4.0),
                target_snr: Some(-3.0),
            },
            EvalItem {
                clip_id: "short".into(),
                reference: s.clone(),
                mixture: clip(vec![0.0; 10]),
                enhanced: s.clone(),
                target_snr: None,
            },
        ];
        let report = evaluate_dataset(&items);
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].0, "short");
        assert_eq!(report.rows[0].bucket, "[-20,-16]");
        assert_eq!(report.rows[1].bucket, "[-5,0]");
        // perfect enhancement of row a: delta = 100 - (-18)
        assert!((report.rows[0].delta_snr - 118.0).abs() < 1e-6);
        assert!((report.rows[1].delta_snr - 7.0).abs() < 1e-6);
        assert_eq!(report.buckets.len(), 2);
        assert_eq!(report.buckets[0].count, 1);

        // The text rendering carries every row, the bucket block, and the
        // failures, with floats that parse back to the same bits.
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("clip_id\tbucket"));
        assert_eq!(lines.len(), 11);
        assert!(table.contains("# buckets"));
        assert!(table.contains("# failures"));
        let row_a: Vec<&str> = lines[1].split('\t').collect();
        assert_eq!(row_a[0], "a");
        assert_eq!(row_a[4].parse::<f64>().unwrap(), report.rows[0].delta_snr);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bucket_thresholds_are_monotone(x in -20.0f64..=0.0) {
            let idx = BUCKETS.iter().position(|b| *b == bucket_of_snr(x).unwrap()).unwrap();
            for step in 1..4 {
                let y = (x + step as f64).min(0.0);
                let idy = BUCKETS.iter().position(|b| *b == bucket_of_snr(y).unwrap()).unwrap();
                prop_assert!(idy >= idx);
            }
        }

        #[test]
        fn snr_of_scaled_error_moves_10db_per_decade(seed in 0u64..100) {
            let s = clip(random_vec(512, seed));
            let noise = random_vec(512, seed + 1000);
            let a = snr(&s, &mix_at(&s, &noise, 0.0));
            let b = snr(&s, &mix_at(&s, &noise, 10.0));
            prop_assert!((a - 0.0).abs() < 1e-9);
            prop_assert!((b - 10.0).abs() < 1e-9);
        }
    }
}
