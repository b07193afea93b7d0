//! Short-time Fourier analysis/synthesis and spectral features.
//!
//! Conventions used throughout the crate:
//! - periodic Hann window, centered frames with reflect padding of half a
//!   window on both sides;
//! - frame count `T = 1 + floor(len / hop)`, `F = window/2 + 1` bins;
//! - synthesis is weighted overlap-add normalized by the summed squared
//!   window, so reconstruction is exact for any hop that keeps every output
//!   sample covered (the shipped 512/160 pair included);
//! - log features add `LOG_EPS` inside every logarithm.

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{DiscoganError, Result};

/// Additive floor inside every `log` of a power quantity.
pub const LOG_EPS: f64 = 1e-5;

/// Complex STFT of a clip, frames along the first axis.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    /// (T, F) with F = window_size/2 + 1.
    pub frames: Array2<Complex64>,
    pub window_size: usize,
    pub hop: usize,
}

/// Role of a channel in a [`TfImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    /// log(1 + |X|)
    LogMagnitude,
    /// angle / pi in [-1, 1]
    PhaseFraction,
    /// unnormalized cos-component of a phase estimate
    PhaseCos,
    /// unnormalized sin-component of a phase estimate
    PhaseSin,
}

/// Real-valued time-frequency image, channels first: (C, T, F).
#[derive(Debug, Clone)]
pub struct TfImage {
    pub data: Array3<f64>,
    pub roles: Vec<ChannelRole>,
}

/// Periodic Hann window: w[m] = 0.5 (1 - cos(2 pi m / n)).
pub fn periodic_hann(n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|m| {
        0.5 * (1.0 - (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos())
    }))
}

/// Number of centered frames for a clip of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

fn check_stft_params(len: usize, window_size: usize, hop: usize) -> Result<()> {
    if len == 0 {
        return Err(DiscoganError::invalid("stft input must be non-empty"));
    }
    if window_size < 2 || window_size % 2 != 0 {
        return Err(DiscoganError::invalid(format!(
            "window_size must be even and >= 2, got {window_size}"
        )));
    }
    if hop == 0 || hop > window_size {
        return Err(DiscoganError::invalid(format!(
            "hop must be in 1..=window_size, got {hop} (window {window_size})"
        )));
    }
    Ok(())
}

/// Reflect (no edge repeat) index fold into [0, len).
pub(crate) fn reflect_index(mut i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Center-pads with half a window of reflected signal on each side.
pub(crate) fn pad_center_reflect(x: &[f64], half: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + 2 * half);
    for p in 0..x.len() + 2 * half {
        out.push(x[reflect_index(p as isize - half as isize, x.len())]);
    }
    out
}

/// STFT as separate real/imaginary planes, shape (T, F) each.
pub(crate) fn stft_frames(
    samples: &[f64],
    window_size: usize,
    hop: usize,
) -> (Array2<f64>, Array2<f64>) {
    let half = window_size / 2;
    let n_bins = half + 1;
    let t_frames = frame_count(samples.len(), hop);
    let padded = pad_center_reflect(samples, half);
    let window = periodic_hann(window_size);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];

    let mut re = Array2::zeros((t_frames, n_bins));
    let mut im = Array2::zeros((t_frames, n_bins));
    for t in 0..t_frames {
        let start = t * hop;
        for m in 0..window_size {
            buf[m] = Complex64::new(padded[start + m] * window[m], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            re[[t, k]] = buf[k].re;
            im[[t, k]] = buf[k].im;
        }
    }
    (re, im)
}

/// Summed squared analysis window at every padded position.
pub(crate) fn wola_denominator(
    window_size: usize,
    hop: usize,
    t_frames: usize,
    padded_len: usize,
) -> Vec<f64> {
    let window = periodic_hann(window_size);
    let mut den = vec![0.0; padded_len];
    for t in 0..t_frames {
        let start = t * hop;
        for m in 0..window_size {
            if start + m < padded_len {
                den[start + m] += window[m] * window[m];
            }
        }
    }
    den
}

/// One synthesis frame: real part of the inverse FFT of the
/// Hermitian-extended half spectrum. Imaginary parts of the DC and Nyquist
/// bins have no effect on the output by construction.
pub(crate) fn synthesis_frame(
    re_row: &[f64],
    im_row: &[f64],
    window_size: usize,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let half = window_size / 2;
    let ifft = planner.plan_fft_inverse(window_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for k in 0..=half {
        buf[k] = Complex64::new(re_row[k], im_row[k]);
    }
    for k in 1..half {
        buf[window_size - k] = Complex64::new(re_row[k], -im_row[k]);
    }
    ifft.process(&mut buf);
    // rustfft's inverse is unnormalized.
    buf.iter().map(|c| c.re / window_size as f64).collect()
}

/// Normalized weighted overlap-add synthesis to `length` samples.
pub(crate) fn istft_synthesis(
    re: &Array2<f64>,
    im: &Array2<f64>,
    window_size: usize,
    hop: usize,
    length: usize,
) -> Result<Vec<f64>> {
    let half = window_size / 2;
    let t_frames = re.nrows();
    let padded_len = length + 2 * half;
    let window = periodic_hann(window_size);
    let den = wola_denominator(window_size, hop, t_frames, padded_len);

    let mut planner = FftPlanner::<f64>::new();
    let mut num = vec![0.0; padded_len];
    for t in 0..t_frames {
        let frame = synthesis_frame(
            re.row(t).as_slice().expect("row is contiguous"),
            im.row(t).as_slice().expect("row is contiguous"),
            window_size,
            &mut planner,
        );
        let start = t * hop;
        for m in 0..window_size {
            if start + m < padded_len {
                num[start + m] += window[m] * frame[m];
            }
        }
    }

    let mut out = vec![0.0; length];
    for n in 0..length {
        let d = den[n + half];
        if d < 1e-12 {
            return Err(DiscoganError::Numeric(format!(
                "no analysis window covers output sample {n}; hop too large for synthesis"
            )));
        }
        out[n] = num[n + half] / d;
    }
    Ok(out)
}

/// Centered STFT with a periodic Hann window.
pub fn stft(clip: &AudioClip, window_size: usize, hop: usize) -> Result<ComplexSpectrogram> {
    check_stft_params(clip.len(), window_size, hop)?;
    let (re, im) = stft_frames(&clip.samples, window_size, hop);
    let frames = Array2::from_shape_fn(re.dim(), |(t, k)| Complex64::new(re[[t, k]], im[[t, k]]));
    Ok(ComplexSpectrogram { frames, window_size, hop })
}

/// Inverse STFT to exactly `length` samples.
pub fn istft(spec: &ComplexSpectrogram, length: usize, sample_rate: u32) -> Result<AudioClip> {
    check_stft_params(length, spec.window_size, spec.hop)?;
    let expected = frame_count(length, spec.hop);
    if spec.frames.nrows() != expected {
        return Err(DiscoganError::invalid(format!(
            "spectrogram has {} frames but length {} needs {}",
            spec.frames.nrows(),
            length,
            expected
        )));
    }
    if spec.frames.ncols() != spec.window_size / 2 + 1 {
        return Err(DiscoganError::invalid(format!(
            "spectrogram has {} bins but window {} needs {}",
            spec.frames.ncols(),
            spec.window_size,
            spec.window_size / 2 + 1
        )));
    }
    let re = spec.frames.mapv(|c| c.re);
    let im = spec.frames.mapv(|c| c.im);
    let samples = istft_synthesis(&re, &im, spec.window_size, spec.hop, length)?;
    Ok(AudioClip::new(samples, sample_rate))
}

/// Packs a complex spectrogram into a 2-channel real image: log(1 + |X|)
/// and angle/pi. The Nyquist bin is dropped so the frequency axis is a
/// power of two.
pub fn compress_tf(spec: &ComplexSpectrogram) -> Result<TfImage> {
    let (t_frames, n_bins) = spec.frames.dim();
    if n_bins < 2 {
        return Err(DiscoganError::invalid("spectrogram needs at least 2 bins"));
    }
    let f_used = n_bins - 1;
    let mut data = Array3::zeros((2, t_frames, f_used));
    for t in 0..t_frames {
        for k in 0..f_used {
            let x = spec.frames[[t, k]];
            data[[0, t, k]] = (1.0 + x.norm()).ln();
            data[[1, t, k]] = x.arg() / std::f64::consts::PI;
        }
    }
    Ok(TfImage { data, roles: vec![ChannelRole::LogMagnitude, ChannelRole::PhaseFraction] })
}

/// Rebuilds a complex spectrogram from a 3-channel estimate
/// (log-magnitude, phase-cos, phase-sin):
/// mag = max(exp(m) - 1, 0), phase = atan2(sin, cos).
/// A zero Nyquist row is appended.
pub fn decompress_tf(img: &TfImage, window_size: usize, hop: usize) -> Result<ComplexSpectrogram> {
    let (c, t_frames, f_used) = img.data.dim();
    if c != 3 {
        return Err(DiscoganError::invalid(format!("decompress expects 3 channels, got {c}")));
    }
    if f_used + 1 != window_size / 2 + 1 {
        return Err(DiscoganError::invalid(format!(
            "image has {f_used} bins but window {window_size} needs {}",
            window_size / 2
        )));
    }
    let mut frames = Array2::from_elem((t_frames, f_used + 1), Complex64::new(0.0, 0.0));
    for t in 0..t_frames {
        for k in 0..f_used {
            let mag = (img.data[[0, t, k]].exp() - 1.0).max(0.0);
            let phase = img.data[[2, t, k]].atan2(img.data[[1, t, k]]);
            frames[[t, k]] = Complex64::from_polar(mag, phase);
        }
    }
    Ok(ComplexSpectrogram { frames, window_size, hop })
}

/// log(|STFT|^2 + eps), hop fixed at a quarter window. Shape (T, F).
pub fn log_power_spectrogram(clip: &AudioClip, window_size: usize) -> Result<Array2<f64>> {
    let spec = stft(clip, window_size, window_size / 4)?;
    Ok(spec.frames.mapv(|c| (c.norm_sqr() + LOG_EPS).ln()))
}

/// Triangular HTK-mel filterbank, band-integrated so no band is lost
/// between coarse FFT bins. Shape (n_mels, n_bins); every row has positive
/// total weight.
pub fn mel_filterbank(n_bins: usize, nfft: usize, sample_rate: u32, n_mels: usize) -> Array2<f64> {
    assert!(n_mels >= 1 && n_bins >= 2);
    let nyquist = sample_rate as f64 / 2.0;
    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let mel_hi = hz_to_mel(nyquist);
    // n_mels triangles need n_mels + 2 edge points from 0 Hz to Nyquist.
    let edges: Vec<f64> =
        (0..n_mels + 2).map(|j| mel_to_hz(mel_hi * j as f64 / (n_mels + 1) as f64)).collect();

    let df = sample_rate as f64 / nfft as f64;
    let mut bank = Array2::zeros((n_mels, n_bins));
    for j in 0..n_mels {
        let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
        for b in 0..n_bins {
            let a = (b as f64 - 0.5) * df;
            let z = (b as f64 + 0.5) * df;
            let (a, z) = (a.max(0.0), z.min(nyquist));
            if z <= a {
                continue;
            }
            // Average of the triangle over the bin interval, integrating the
            // rising and falling linear segments exactly.
            let mut area = 0.0;
            let (ra, rz) = (a.max(lo), z.min(mid));
            if rz > ra && mid > lo {
                let va = (ra - lo) / (mid - lo);
                let vz = (rz - lo) / (mid - lo);
                area += 0.5 * (va + vz) * (rz - ra);
            }
            let (fa, fz) = (a.max(mid), z.min(hi));
            if fz > fa && hi > mid {
                let va = (hi - fa) / (hi - mid);
                let vz = (hi - fz) / (hi - mid);
                area += 0.5 * (va + vz) * (fz - fa);
            }
            bank[[j, b]] = area / (z - a);
        }
    }
    bank
}

/// log(Mel(|STFT|^2) + eps); hop fixed at a quarter window. Shape (T, n_mels).
pub fn log_mel_spectrogram(clip: &AudioClip, window_size: usize, n_mels: usize) -> Result<Array2<f64>> {
    let spec = stft(clip, window_size, window_size / 4)?;
    let power = spec.frames.mapv(|c| c.norm_sqr());
    let bank = mel_filterbank(power.ncols(), window_size, clip.sample_rate, n_mels);
    let mel = power.dot(&bank.t());
    Ok(mel.mapv(|v| (v + LOG_EPS).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_clip(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        AudioClip::new((0..len).map(|_| rng.gen_range(-0.9..0.9)).collect(), 16_000)
    }

    #[test]
    fn frame_count_matches_convention() {
        // 3 s at 16 kHz with hop 160 -> 301 frames; 512-window -> 257 bins.
        let clip = random_clip(48_000, 1);
        let spec = stft(&clip, 512, 160).unwrap();
        assert_eq!(spec.frames.dim(), (301, 257));
    }

    #[test]
    fn periodic_hann_endpoints() {
        let w = periodic_hann(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        // periodic: w[n] would wrap to 0, so w[7] != w[1] symmetry does hold
        assert!((w[1] - w[7]).abs() < 1e-15);
    }

    #[test]
    fn roundtrip_is_exact_for_non_divisible_hop() {
        // 512/160: hop does not divide the window; normalized overlap-add
        // must still reconstruct exactly.
        let clip = random_clip(8_000, 2);
        let spec = stft(&clip, 512, 160).unwrap();
        let back = istft(&spec, clip.len(), clip.sample_rate).unwrap();
        let err: f64 = clip
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "max roundtrip error {err}");
    }

    #[test]
    fn roundtrip_single_sample_impulse() {
        let clip = AudioClip::new(vec![0.7], 16_000);
        let spec = stft(&clip, 512, 160).unwrap();
        assert_eq!(spec.frames.nrows(), 1);
        let back = istft(&spec, 1, 16_000).unwrap();
        assert!((back.samples[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_impulse_in_long_clip() {
        let mut samples = vec![0.0; 4_000];
        samples[1234] = 1.0;
        let clip = AudioClip::new(samples, 16_000);
        let spec = stft(&clip, 512, 160).unwrap();
        let back = istft(&spec, clip.len(), 16_000).unwrap();
        for (i, (a, b)) in clip.samples.iter().zip(&back.samples).enumerate() {
            assert!((a - b).abs() < 1e-9, "sample {i}");
        }
    }

    #[test]
    fn compress_maps_magnitude_and_phase() {
        let mut frames = Array2::from_elem((1, 3), Complex64::new(0.0, 0.0));
        frames[[0, 0]] = Complex64::from_polar(std::f64::consts::E - 1.0, std::f64::consts::FRAC_PI_2);
        let spec = ComplexSpectrogram { frames, window_size: 4, hop: 1 };
        let img = compress_tf(&spec).unwrap();
        assert_eq!(img.data.dim(), (2, 1, 2));
        assert!((img.data[[0, 0, 0]] - 1.0).abs() < 1e-12);
        assert!((img.data[[1, 0, 0]] - 0.5).abs() < 1e-12);
        // zero input stays zero in both channels
        assert_eq!(img.data[[0, 0, 1]], 0.0);
        assert_eq!(img.data[[1, 0, 1]], 0.0);
    }

    #[test]
    fn decompress_matches_hand_values() {
        let mut data = Array3::zeros((3, 1, 2));
        data[[0, 0, 0]] = 1.0; // log-mag -> e - 1
        data[[1, 0, 0]] = 0.0; // cos part
        data[[2, 0, 0]] = 2.0; // sin part -> phase pi/2
        data[[0, 0, 1]] = -3.0; // exp(-3) - 1 < 0 -> clamped to 0
        let img = TfImage {
            data,
            roles: vec![ChannelRole::LogMagnitude, ChannelRole::PhaseCos, ChannelRole::PhaseSin],
        };
        let spec = decompress_tf(&img, 4, 1).unwrap();
        assert_eq!(spec.frames.dim(), (1, 3));
        let x = spec.frames[[0, 0]];
        assert!((x.norm() - (std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!((x.arg() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(spec.frames[[0, 1]], Complex64::new(0.0, 0.0));
        // appended Nyquist row is zero
        assert_eq!(spec.frames[[0, 2]], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn compress_then_decompress_inverts() {
        let clip = random_clip(2_000, 3);
        let spec = stft(&clip, 64, 16).unwrap();
        let img2 = compress_tf(&spec).unwrap();
        // Re-express the 2-channel image in the decoder's 3-channel
        // parametrization and invert.
        let (_, t, f) = img2.data.dim();
        let mut data = Array3::zeros((3, t, f));
        for ti in 0..t {
            for k in 0..f {
                let ang = img2.data[[1, ti, k]] * std::f64::consts::PI;
                data[[0, ti, k]] = img2.data[[0, ti, k]];
                data[[1, ti, k]] = ang.cos();
                data[[2, ti, k]] = ang.sin();
            }
        }
        let img3 = TfImage {
            data,
            roles: vec![ChannelRole::LogMagnitude, ChannelRole::PhaseCos, ChannelRole::PhaseSin],
        };
        let back = decompress_tf(&img3, 64, 16).unwrap();
        for ti in 0..t {
            for k in 0..f {
                let d = (back.frames[[ti, k]] - spec.frames[[ti, k]]).norm();
                assert!(d < 1e-9, "bin ({ti},{k}) differs by {d}");
            }
        }
    }

    #[test]
    fn log_power_of_silence_is_log_eps() {
        let clip = AudioClip::new(vec![0.0; 1024], 16_000);
        let lp = log_power_spectrogram(&clip, 256).unwrap();
        for &v in lp.iter() {
            assert!((v - LOG_EPS.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mel_filterbank_has_no_empty_band() {
        for (win, n_mels) in [(128, 64), (512, 64), (32, 16), (2048, 64)] {
            let bank = mel_filterbank(win / 2 + 1, win, 16_000, n_mels);
            for j in 0..n_mels {
                let row_sum: f64 = bank.row(j).sum();
                assert!(row_sum > 0.0, "band {j} empty for window {win}");
            }
        }
    }

    #[test]
    fn mel_spectrogram_shape_and_floor() {
        let clip = AudioClip::new(vec![0.0; 2048], 16_000);
        let m = log_mel_spectrogram(&clip, 512, 64).unwrap();
        assert_eq!(m.dim(), (frame_count(2048, 128), 64));
        for &v in m.iter() {
            assert!((v - LOG_EPS.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn istft_rejects_frame_mismatch() {
        let clip = random_clip(1_000, 4);
        let spec = stft(&clip, 64, 16).unwrap();
        assert!(istft(&spec, 5_000, 16_000).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn roundtrip_random_lengths(len in 32usize..2_000, hop_div in 2usize..8, seed in 0u64..1_000) {
            let win = 64usize;
            let hop = win / hop_div;
            let clip = random_clip(len, seed);
            let spec = stft(&clip, win, hop).unwrap();
            prop_assert_eq!(spec.frames.nrows(), 1 + len / hop);
            let back = istft(&spec, len, 16_000).unwrap();
            for (a, b) in clip.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
