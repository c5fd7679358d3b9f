//! Short-time Fourier analysis/synthesis without frame centering.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames for `len` samples: `1 + (len - frame_len) / hop`, or 0 if too short.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        1 + (len - frame_len) / hop
    }
}

pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann_window(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// One-sided spectra, one `Vec` of `n_bins` per frame.
    pub fn analyze(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let frames = frame_count(samples.len(), self.n_fft, self.hop);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        (0..frames)
            .map(|t| {
                let start = t * self.hop;
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = Complex::new(samples[start + i] * self.window[i], 0.0);
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Power spectrogram, `frames x n_bins`.
    pub fn power(&self, samples: &[f64]) -> Vec<Vec<f64>> {
        self.analyze(samples)
            .into_iter()
            .map(|frame| frame.iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`].
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        if spectra.is_empty() {
            return Vec::new();
        }
        let len = (spectra.len() - 1) * self.hop + self.n_fft;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let bins = self.n_bins();
        for (t, frame) in spectra.iter().enumerate() {
            buf[..bins].copy_from_slice(&frame[..bins]);
            for k in bins..self.n_fft {
                buf[k] = frame[self.n_fft - k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * self.hop;
            let scale = 1.0 / self.n_fft as f64;
            for i in 0..self.n_fft {
                let w = self.window[i];
                out[start + i] += buf[i].re * scale * w;
                norm[start + i] += w * w;
            }
        }
        // Edges covered by only a window tail are attenuated, not amplified.
        let floor = 0.1 * norm.iter().cloned().fold(0.0, f64::max);
        for (x, n) in out.iter_mut().zip(&norm) {
            if floor > 0.0 {
                *x /= n.max(floor);
            }
        }
        out
    }
}
