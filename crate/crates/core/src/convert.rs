//! Aspect-selective one-shot conversion and a Griffin-Lim fallback vocoder.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::features::stft::Stft;
use crate::features::{log_floor, mel_filterbank, ExtractionParams, MelSpectrogram, NormalizedPitchContour, Waveform};
use crate::model::{FeatureBatch, LatentCodes, Resampling, SrdModel};
use crate::train::TrainState;

/// Which aspects are taken from the target utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AspectSet {
    pub timbre: bool,
    pub pitch: bool,
    pub rhythm: bool,
}

impl AspectSet {
    pub const NONE: AspectSet = AspectSet {
        timbre: false,
        pitch: false,
        rhythm: false,
    };
    pub const ALL: AspectSet = AspectSet {
        timbre: true,
        pitch: true,
        rhythm: true,
    };

    /// All eight subsets, in bit order (timbre = 1, pitch = 2, rhythm = 4).
    pub fn all_subsets() -> impl Iterator<Item = AspectSet> {
        (0u8..8).map(|b| AspectSet {
            timbre: b & 1 != 0,
            pitch: b & 2 != 0,
            rhythm: b & 4 != 0,
        })
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::NONE
    }
}

impl fmt::Display for AspectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.timbre, "timbre"), (self.pitch, "pitch"), (self.rhythm, "rhythm")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for AspectSet {
    type Err = Error;

    /// Comma- or plus-separated aspect names; `none` or empty for the empty
    /// set, `all` for every aspect.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = AspectSet::NONE;
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "timbre" => set.timbre = true,
                "pitch" => set.pitch = true,
                "rhythm" => set.rhythm = true,
                "all" => set = AspectSet::ALL,
                "none" => {}
                other => return Err(Error::InvalidArgument(format!("unknown aspect {other:?}"))),
            }
        }
        Ok(set)
    }
}

/// Mel frames plus normalized pitch of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceInput {
    pub mel: MelSpectrogram,
    pub pitch: NormalizedPitchContour,
}

impl UtteranceInput {
    pub fn new(mel: MelSpectrogram, pitch: NormalizedPitchContour) -> Result<Self> {
        if mel.num_frames() != pitch.len() {
            return Err(Error::Shape(format!("mel has {} frames but pitch has {}", mel.num_frames(), pitch.len())));
        }
        Ok(Self { mel, pitch })
    }

    pub fn from_features(f: &crate::features::UtteranceFeatures) -> Self {
        Self {
            mel: f.mel.clone(),
            pitch: f.normalized_pitch(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.mel.num_frames()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionRequest {
    pub source: UtteranceInput,
    pub target: Option<UtteranceInput>,
    pub aspects: AspectSet,
}

/// Converted mel and the exact codes that were decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub mel: MelSpectrogram,
    /// Padded to the longest provider; rows past a provider's own padded
    /// length are zero.
    pub codes: LatentCodes,
}

/// Inference wrapper around a trained model. Resampling is always off.
#[derive(Debug, Clone)]
pub struct Converter {
    pub model: SrdModel,
}

impl Converter {
    pub fn from_model(model: SrdModel) -> Self {
        Self { model }
    }

    /// Loads a checkpoint, refusing one that has never been trained.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (model, step) = TrainState::load_model(path)?;
        if step == 0 {
            return Err(Error::Untrained(path.to_path_buf()));
        }
        Ok(Self { model })
    }

    /// Codes of one utterance padded to a multiple of the crop length with the
    /// log-mel floor and zero pitch.
    pub fn encode_padded(&self, utt: &UtteranceInput) -> Result<LatentCodes> {
        let crop = self.model.config.crop_frames;
        let t = utt.num_frames();
        let padded = t.div_ceil(crop) * crop;
        let mut mel = Array2::from_elem((padded, utt.mel.frames.ncols()), log_floor());
        mel.slice_mut(s![..t, ..]).assign(&utt.mel.frames);
        let mut pitch = Array2::zeros((padded, 1));
        for (i, v) in utt.pitch.values.iter().enumerate() {
            pitch[[i, 0]] = *v;
        }
        let batch = FeatureBatch {
            mel,
            pitch,
            batch: 1,
            steps: padded,
            speakers: vec![0],
        };
        self.model.encode_batch(&batch, Resampling::Off)
    }

    pub fn convert(&self, req: &ConversionRequest) -> Result<Conversion> {
        let target = match (&req.target, req.aspects.is_empty()) {
            (Some(t), _) => Some(t),
            (None, true) => None,
            (None, false) => {
                return Err(Error::InvalidArgument(format!(
                    "aspects {} need a target utterance",
                    req.aspects
                )))
            }
        };
        let src = self.encode_padded(&req.source)?;
        let tgt = match target {
            Some(t) if !req.aspects.is_empty() => Some(self.encode_padded(t)?),
            _ => None,
        };
        let pick = |on: bool| if on { tgt.as_ref().unwrap() } else { &src };
        let (r, p, t) = (pick(req.aspects.rhythm), pick(req.aspects.pitch), pick(req.aspects.timbre));
        let out_frames = if req.aspects.rhythm {
            target.unwrap().num_frames()
        } else {
            req.source.num_frames()
        };
        let len = r.steps.max(p.steps).max(src.steps);
        let pad = |m: &Array2<f64>| {
            let mut out = Array2::zeros((len, m.ncols()));
            out.slice_mut(s![..m.nrows(), ..]).assign(m);
            out
        };
        let codes = LatentCodes {
            z_r: pad(&r.z_r),
            z_p: pad(&p.z_p),
            z_c: pad(&src.z_c),
            z_t: t.z_t.clone(),
            batch: 1,
            steps: len,
        };
        let frames = self.model.decode_speech_batch(&codes)?;
        let mel = MelSpectrogram::new(frames.slice(s![..out_frames, ..]).to_owned())?;
        Ok(Conversion { mel, codes })
    }
}

fn pseudo_inverse_filterbank() -> &'static Array2<f64> {
    static PINV: OnceLock<Array2<f64>> = OnceLock::new();
    PINV.get_or_init(|| {
        let fb = mel_filterbank(&ExtractionParams::default());
        let (rows, cols) = fb.dim();
        let m = DMatrix::from_fn(rows, cols, |i, j| fb[[i, j]]);
        let pinv = m.pseudo_inverse(1e-10).expect("filterbank SVD");
        Array2::from_shape_fn((cols, rows), |(i, j)| pinv[(i, j)])
    })
}

const NNLS_ITERATIONS: usize = 200;

/// Linear magnitude spectrogram estimated from a log-mel spectrogram,
/// `T x n_bins`. The pseudo-inverse of the filterbank gives the starting
/// power estimate, which multiplicative non-negative least-squares updates
/// then sharpen (the raw pseudo-inverse spreads a tone over its whole band).
pub fn mel_to_magnitude(mel: &MelSpectrogram) -> Array2<f64> {
    let eps = ExtractionParams::default().log_eps;
    let fb = mel_filterbank(&ExtractionParams::default());
    let power = mel.frames.mapv(|v| (v.exp() - eps).max(0.0));
    let target = power.dot(&fb);
    let mut x = power.dot(&pseudo_inverse_filterbank().t()).mapv(|p| p.max(1e-12));
    for _ in 0..NNLS_ITERATIONS {
        let denom = x.dot(&fb.t()).dot(&fb);
        ndarray::Zip::from(&mut x)
            .and(&target)
            .and(&denom)
            .for_each(|x, &t, &d| *x *= t / d.max(1e-30));
    }
    x.mapv(f64::sqrt)
}

const GRIFFIN_LIM_SEED: u64 = 0x6c1f;

/// Griffin-Lim phase reconstruction. Deterministic for a given iteration count.
pub fn synthesize_audio(mel: &MelSpectrogram, iterations: usize) -> Waveform {
    let p = ExtractionParams::default();
    let stft = Stft::new(p.n_fft, p.hop);
    let mag = mel_to_magnitude(mel);
    let mut rng = ChaCha8Rng::seed_from_u64(GRIFFIN_LIM_SEED);
    let mut spectra: Vec<Vec<Complex<f64>>> = mag
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .map(|&a| Complex::from_polar(a, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    for _ in 0..iterations {
        let signal = stft.synthesize(&spectra);
        let rebuilt = stft.analyze(&signal);
        for (t, frame) in rebuilt.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                let a = mag[[t, k]];
                let n = c.norm();
                spectra[t][k] = if n > 1e-12 { c * (a / n) } else { Complex::new(a, 0.0) };
            }
        }
    }
    let samples = stft.synthesize(&spectra);
    Waveform::new(samples, p.sample_rate).expect("finite synthesis")
}
