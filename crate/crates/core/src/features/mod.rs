//! Audio front end: log-mel spectrograms, pitch contours, feature caches and
//! corpus ingestion.

pub mod cache;
pub mod corpus;
pub(crate) mod mel;
mod pitch;
pub mod stft;
pub mod toy;
pub mod wav;

use serde::{Deserialize, Serialize};

pub use mel::{
    compute_mel, hz_to_mel, log_floor, mel_band_edges, mel_filterbank, mel_to_hz, MelSpectrogram,
    Waveform,
};
pub use pitch::{extract_pitch, normalize_pitch, renormalize, NormalizedPitchContour, PitchContour};

use crate::error::{Error, Result};

/// Every constant the front end depends on. Stored in each cache record so
/// stale caches are detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_eps: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            n_fft: 1024,
            frame_len: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 90.0,
            fmax: 7600.0,
            log_eps: 1e-10,
            f0_min: 50.0,
            f0_max: 600.0,
            voicing_threshold: 0.3,
        }
    }
}

/// Mel spectrogram and pitch contour of one utterance on a shared time base.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub mel: MelSpectrogram,
    pub pitch: PitchContour,
}

impl UtteranceFeatures {
    pub fn new(mel: MelSpectrogram, pitch: PitchContour) -> Result<Self> {
        if mel.num_frames() != pitch.len() || pitch.voiced.len() != pitch.len() {
            return Err(Error::Shape(format!(
                "mel has {} frames but pitch has {}",
                mel.num_frames(),
                pitch.len()
            )));
        }
        Ok(Self { mel, pitch })
    }

    pub fn num_frames(&self) -> usize {
        self.mel.num_frames()
    }

    pub fn normalized_pitch(&self) -> NormalizedPitchContour {
        normalize_pitch(&self.pitch)
    }
}

pub fn extract_features(wave: &Waveform) -> Result<UtteranceFeatures> {
    UtteranceFeatures::new(compute_mel(wave)?, extract_pitch(wave)?)
}
