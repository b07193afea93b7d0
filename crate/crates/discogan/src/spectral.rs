//! Differentiable spectral ops on the autodiff graph.
//!
//! STFT and inverse STFT are linear in the signal, so their backward passes
//! are the exact adjoint maps, implemented with the same FFT plans as the
//! forward passes. Decompression (log-magnitude + phase components back to
//! a complex spectrum) is composed from primitive graph ops and needs no
//! custom backward.
//!
//! Spectrogram-valued nodes are packed as (2, T, F) with channel 0 = real,
//! channel 1 = imaginary, so a single node can carry a complex plane.

use autodiff::{BackwardFn, Graph, VarId};
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp;

/// Stacks two (T, F) nodes into one (2, T, F) node.
pub fn stack2(g: &Graph, a: VarId, b: VarId) -> VarId {
    let shape = g.shape(a);
    assert_eq!(shape, g.shape(b), "stack2 needs matching shapes");
    assert_eq!(shape.len(), 2);
    let target = [1, shape[0], shape[1]];
    let a3 = g.reshape(a, &target);
    let b3 = g.reshape(b, &target);
    g.concat(0, &[a3, b3])
}

/// Splits a (2, T, F) node into its (T, F) real and imaginary planes.
pub fn unstack2(g: &Graph, spec: VarId) -> (VarId, VarId) {
    let shape = g.shape(spec);
    assert_eq!(shape.len(), 3);
    assert_eq!(shape[0], 2);
    let re = g.reshape(g.slice_axis(spec, 0, 0, 1), &[shape[1], shape[2]]);
    let im = g.reshape(g.slice_axis(spec, 0, 1, 1), &[shape[1], shape[2]]);
    (re, im)
}

/// Adjoint of the centered STFT: spectrogram-gradient (2, T, F) to
/// signal-gradient (len,).
fn stft_adjoint(grad: &ArrayD<f64>, window_size: usize, hop: usize, len: usize) -> ArrayD<f64> {
    let half = window_size / 2;
    let n_bins = half + 1;
    let t_frames = grad.shape()[1];
    let window = dsp::periodic_hann(window_size);
    let padded_len = len + 2 * half;

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(window_size);
    let mut gpadded = vec![0.0; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for t in 0..t_frames {
        for c in buf.iter_mut() {
            *c = Complex64::new(0.0, 0.0);
        }
        for k in 0..n_bins {
            buf[k] = Complex64::new(grad[[0, t, k]], grad[[1, t, k]]);
        }
        // Unnormalized inverse = sum over emitted bins of c_k e^{+i 2pi mk/N},
        // whose real part is exactly d<grad, X>/d(frame sample m).
        ifft.process(&mut buf);
        let start = t * hop;
        for m in 0..window_size {
            if start + m < padded_len {
                gpadded[start + m] += buf[m].re * window[m];
            }
        }
    }

    // Fold the reflect padding back onto the source samples.
    let mut gx = ArrayD::zeros(IxDyn(&[len]));
    for (p, &gp) in gpadded.iter().enumerate() {
        let src = dsp::reflect_index(p as isize - half as isize, len);
        gx[[src]] += gp;
    }
    gx
}

/// Adjoint of normalized overlap-add synthesis: signal-gradient (len,) to
/// spectrogram-gradient (2, T, F).
fn istft_adjoint(
    gy: &ArrayD<f64>,
    window_size: usize,
    hop: usize,
    t_frames: usize,
    length: usize,
) -> ArrayD<f64> {
    let half = window_size / 2;
    let n_bins = half + 1;
    let padded_len = length + 2 * half;
    let window = dsp::periodic_hann(window_size);
    let den = dsp::wola_denominator(window_size, hop, t_frames, padded_len);

    let mut gnum = vec![0.0; padded_len];
    for n in 0..length {
        gnum[n + half] = gy[[n]] / den[n + half];
    }

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_size);
    let scale = 1.0 / window_size as f64;
    let mut out = ArrayD::zeros(IxDyn(&[2, t_frames, n_bins]));
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for t in 0..t_frames {
        let start = t * hop;
        for m in 0..window_size {
            let v = if start + m < padded_len { gnum[start + m] * window[m] } else { 0.0 };
            buf[m] = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        // Hermitian packing doubles interior bins; DC and Nyquist imaginary
        // parts never reach the output, so their gradients are zero.
        out[[0, t, 0]] = buf[0].re * scale;
        out[[0, t, half]] = buf[half].re * scale;
        for k in 1..half {
            out[[0, t, k]] = 2.0 * buf[k].re * scale;
            out[[1, t, k]] = 2.0 * buf[k].im * scale;
        }
    }
    out
}

/// Differentiable centered STFT of a 1-D signal node. Returns a (2, T, F)
/// node (real/imaginary planes).
pub fn graph_stft(g: &Graph, wave: VarId, window_size: usize, hop: usize) -> VarId {
    let x = g.value(wave);
    assert_eq!(x.ndim(), 1, "graph_stft expects a 1-D signal");
    let len = x.len();
    let (re, im) = dsp::stft_frames(x.as_slice().expect("signal is contiguous"), window_size, hop);
    let (t_frames, n_bins) = re.dim();
    let mut out = ArrayD::zeros(IxDyn(&[2, t_frames, n_bins]));
    for t in 0..t_frames {
        for k in 0..n_bins {
            out[[0, t, k]] = re[[t, k]];
            out[[1, t, k]] = im[[t, k]];
        }
    }
    let backward: BackwardFn = Box::new(move |grad, sink| {
        sink(0, stft_adjoint(grad, window_size, hop, len));
    });
    g.custom(&[wave], out, Some(backward))
}

/// Differentiable inverse STFT of a (2, T, F) node to `length` samples.
pub fn graph_istft(g: &Graph, spec: VarId, window_size: usize, hop: usize, length: usize) -> VarId {
    let v = g.value(spec);
    let shape = v.shape();
    assert_eq!(shape.len(), 3, "graph_istft expects (2, T, F)");
    assert_eq!(shape[0], 2);
    assert_eq!(shape[1], dsp::frame_count(length, hop), "frame count must match length");
    assert_eq!(shape[2], window_size / 2 + 1);
    let t_frames = shape[1];

    let re = v.index_axis(ndarray::Axis(0), 0).to_owned().into_dimensionality().unwrap();
    let im = v.index_axis(ndarray::Axis(0), 1).to_owned().into_dimensionality().unwrap();
    let samples = dsp::istft_synthesis(&re, &im, window_size, hop, length)
        .expect("synthesis coverage checked by caller");
    let out = ArrayD::from_shape_vec(IxDyn(&[length]), samples).unwrap();

    let backward: BackwardFn = Box::new(move |grad, sink| {
        sink(0, istft_adjoint(grad, window_size, hop, t_frames, length));
    });
    g.custom(&[spec], out, Some(backward))
}

/// Differentiable decompression of a (3, T, F-1) image (log-magnitude,
/// phase-cos, phase-sin) to a (2, T, F) complex-plane node with a zero
/// Nyquist row appended.
pub fn graph_decompress(g: &Graph, img: VarId) -> VarId {
    let shape = g.shape(img);
    assert_eq!(shape.len(), 3);
    assert_eq!(shape[0], 3, "decompress expects 3 channels");
    let (t_frames, f_used) = (shape[1], shape[2]);
    let plane = [t_frames, f_used];
    let m = g.reshape(g.slice_axis(img, 0, 0, 1), &plane);
    let pc = g.reshape(g.slice_axis(img, 0, 1, 1), &plane);
    let ps = g.reshape(g.slice_axis(img, 0, 2, 1), &plane);

    let mag = g.relu(g.add_scalar(g.exp(m), -1.0));
    let phase = g.atan2(ps, pc);
    let re = g.mul(mag, g.cos(phase));
    let im = g.mul(mag, g.sin(phase));

    let zeros = g.input(ArrayD::zeros(IxDyn(&[t_frames, 1])));
    let re_full = g.concat(1, &[re, zeros]);
    let im_full = g.concat(1, &[im, zeros]);
    stack2(g, re_full, im_full)
}

/// log(|X|^2 + eps) of a (2, T, F) spectrogram node, shape (T, F).
pub fn graph_log_power(g: &Graph, spec: VarId) -> VarId {
    let (re, im) = unstack2(g, spec);
    let power = g.add(g.square(re), g.square(im));
    g.ln(g.add_scalar(power, dsp::LOG_EPS))
}

/// log(Mel(|X|^2) + eps) of a (2, T, F) spectrogram node given a fixed
/// (n_mels, F) filterbank, shape (T, n_mels).
pub fn graph_log_mel(g: &Graph, spec: VarId, bank_t: VarId) -> VarId {
    let (re, im) = unstack2(g, spec);
    let power = g.add(g.square(re), g.square(im));
    let mel = g.matmul(power, bank_t);
    g.ln(g.add_scalar(mel, dsp::LOG_EPS))
}
