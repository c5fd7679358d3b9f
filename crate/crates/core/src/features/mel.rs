use std::sync::OnceLock;

use ndarray::Array2;

use super::stft::{frame_count, Stft};
use super::ExtractionParams;
use crate::error::{Error, Result};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// `T x n_mels` matrix of natural-log mel power.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub frame_hop: usize,
    pub frame_len: usize,
}

impl MelSpectrogram {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        let p = ExtractionParams::default();
        if frames.ncols() != p.n_mels {
            return Err(Error::Shape(format!(
                "mel spectrogram must have {} bands, got {}",
                p.n_mels,
                frames.ncols()
            )));
        }
        if frames.nrows() == 0 {
            return Err(Error::Shape("mel spectrogram needs at least one frame".into()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mel spectrogram has non-finite entries".into()));
        }
        Ok(Self {
            frames,
            frame_hop: p.hop,
            frame_len: p.frame_len,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels + 2` band edge frequencies equally spaced on the mel scale.
pub fn mel_band_edges(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters with unit peak, `n_mels x (n_fft / 2 + 1)`.
pub fn mel_filterbank(p: &ExtractionParams) -> Array2<f64> {
    let edges = mel_band_edges(p.n_mels, p.fmin, p.fmax);
    let bins = p.n_fft / 2 + 1;
    let bin_hz = p.sample_rate as f64 / p.n_fft as f64;
    Array2::from_shape_fn((p.n_mels, bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let rising = (f - lo) / (center - lo);
        let falling = (hi - f) / (hi - center);
        rising.min(falling).max(0.0)
    })
}

pub(crate) struct MelFrontEnd {
    pub params: ExtractionParams,
    pub stft: Stft,
    pub filterbank: Array2<f64>,
}

impl MelFrontEnd {
    fn new(params: ExtractionParams) -> Self {
        Self {
            stft: Stft::new(params.n_fft, params.hop),
            filterbank: mel_filterbank(&params),
            params,
        }
    }

    pub fn shared() -> &'static MelFrontEnd {
        static FRONT_END: OnceLock<MelFrontEnd> = OnceLock::new();
        FRONT_END.get_or_init(|| MelFrontEnd::new(ExtractionParams::default()))
    }

    pub(crate) fn check_input(&self, wave: &Waveform) -> Result<usize> {
        if wave.sample_rate() != self.params.sample_rate {
            return Err(Error::SampleRate {
                expected: self.params.sample_rate,
                actual: wave.sample_rate(),
            });
        }
        let frames = frame_count(wave.len(), self.params.frame_len, self.params.hop);
        if frames == 0 {
            return Err(Error::TooShort {
                len: wave.len(),
                frame_len: self.params.frame_len,
            });
        }
        Ok(frames)
    }

    /// Log-compress a `T x n_mels` mel power matrix.
    pub fn log_compress(&self, mel_power: &mut Array2<f64>) {
        let eps = self.params.log_eps;
        mel_power.mapv_inplace(|v| (v + eps).ln());
    }

    pub fn mel_power(&self, power: &[Vec<f64>]) -> Array2<f64> {
        let bins = self.stft.n_bins();
        let mut spec = Array2::zeros((power.len(), bins));
        for (t, frame) in power.iter().enumerate() {
            spec.row_mut(t).assign(&ndarray::ArrayView1::from(&frame[..]));
        }
        spec.dot(&self.filterbank.t())
    }

    pub fn compute(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        self.check_input(wave)?;
        let power = self.stft.power(wave.samples());
        let mut mel = self.mel_power(&power);
        self.log_compress(&mut mel);
        MelSpectrogram::new(mel)
    }
}

/// Log-mel spectrogram of a 16 kHz waveform (Hann window, no centering).
pub fn compute_mel(wave: &Waveform) -> Result<MelSpectrogram> {
    MelFrontEnd::shared().compute(wave)
}

/// The log value every band takes on digital silence.
pub fn log_floor() -> f64 {
    ExtractionParams::default().log_eps.ln()
}
