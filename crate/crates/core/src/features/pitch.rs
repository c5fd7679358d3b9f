//! Frame-synchronous F0 tracking by normalized autocorrelation.

use super::mel::{MelFrontEnd, Waveform};
use crate::error::{Error, Result};

/// Per-frame F0 in Hz with a voicing mask; `f0_hz[t] > 0` iff `voiced[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    /// Builds a contour from raw F0 values; non-positive entries are unvoiced.
    pub fn from_f0(f0_hz: Vec<f64>) -> Self {
        let f0_hz: Vec<f64> = f0_hz.into_iter().map(|f| if f > 0.0 { f } else { 0.0 }).collect();
        let voiced = f0_hz.iter().map(|&f| f > 0.0).collect();
        Self { f0_hz, voiced }
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }
}

/// Z-normalized contour; unvoiced entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPitchContour {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl NormalizedPitchContour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const NORM_EPS: f64 = 1e-8;
/// Frames quieter than this RMS are treated as silence.
const SILENCE_RMS: f64 = 1e-4;
/// A later autocorrelation peak must reach this fraction of the best one to be chosen.
const PEAK_RATIO: f64 = 0.9;

pub fn extract_pitch(wave: &Waveform) -> Result<PitchContour> {
    let fe = MelFrontEnd::shared();
    let frames = fe.check_input(wave)?;
    let p = &fe.params;
    let sr = p.sample_rate as f64;
    let min_lag = (sr / p.f0_max).floor() as usize;
    let max_lag = (sr / p.f0_min).ceil() as usize;
    if max_lag + 2 >= p.frame_len {
        return Err(Error::InvalidArgument("F0 floor too low for the frame length".into()));
    }

    let mut f0 = Vec::with_capacity(frames);
    let mut frame = vec![0.0; p.frame_len];
    let mut acf = vec![0.0; max_lag + 2];
    for t in 0..frames {
        let start = t * p.hop;
        frame.copy_from_slice(&wave.samples()[start..start + p.frame_len]);
        let mean = frame.iter().sum::<f64>() / frame.len() as f64;
        frame.iter_mut().for_each(|x| *x -= mean);
        let rms = (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt();
        if rms < SILENCE_RMS {
            f0.push(0.0);
            continue;
        }
        normalized_autocorrelation(&frame, min_lag - 1, max_lag + 1, &mut acf);
        f0.push(pick_period(&acf, min_lag, max_lag, p.voicing_threshold).map_or(0.0, |lag| sr / lag));
    }
    Ok(PitchContour::from_f0(f0))
}

/// Fills `out[lag]` for `lag` in `lo..=hi` with the energy-normalized autocorrelation.
fn normalized_autocorrelation(x: &[f64], lo: usize, hi: usize, out: &mut [f64]) {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i] * x[i];
    }
    for lag in lo..=hi {
        let dot: f64 = x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        let e0 = prefix[n - lag];
        let e1 = prefix[n] - prefix[lag];
        let denom = (e0 * e1).sqrt();
        out[lag] = if denom > 0.0 { dot / denom } else { 0.0 };
    }
}

/// Returns a fractional period in samples, or `None` when unvoiced.
fn pick_period(acf: &[f64], min_lag: usize, max_lag: usize, threshold: f64) -> Option<f64> {
    let is_peak = |l: usize| acf[l] >= acf[l - 1] && acf[l] >= acf[l + 1];
    let best = (min_lag..=max_lag)
        .filter(|&l| is_peak(l))
        .map(|l| acf[l])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(best >= threshold) {
        return None;
    }
    let lag = (min_lag..=max_lag).find(|&l| is_peak(l) && acf[l] >= PEAK_RATIO * best)?;
    let (a, b, c) = (acf[lag - 1], acf[lag], acf[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature < 0.0 { 0.5 * (a - c) / curvature } else { 0.0 };
    Some(lag as f64 + shift.clamp(-0.5, 0.5))
}

/// Per-utterance z-normalization over voiced frames.
pub fn normalize_pitch(contour: &PitchContour) -> NormalizedPitchContour {
    let voiced_f0: Vec<f64> =
        contour.f0_hz.iter().zip(&contour.voiced).filter(|(_, &v)| v).map(|(&f, _)| f).collect();
    let zeros = || NormalizedPitchContour {
        values: vec![0.0; contour.len()],
        voiced: contour.voiced.clone(),
    };
    if voiced_f0.is_empty() {
        return zeros();
    }
    let n = voiced_f0.len() as f64;
    let mean = voiced_f0.iter().sum::<f64>() / n;
    let var = voiced_f0.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // Zero spread up to summation rounding counts as constant.
    if std <= 1e-12 * mean.abs().max(1.0) {
        return zeros();
    }
    let values = contour
        .f0_hz
        .iter()
        .zip(&contour.voiced)
        .map(|(&f, &v)| if v { (f - mean) / (std + NORM_EPS) } else { 0.0 })
        .collect();
    NormalizedPitchContour {
        values,
        voiced: contour.voiced.clone(),
    }
}

/// Re-normalizes already-normalized values (used to check idempotence).
pub fn renormalize(contour: &NormalizedPitchContour) -> NormalizedPitchContour {
    let as_contour = PitchContour {
        f0_hz: contour.values.clone(),
        voiced: contour.voiced.clone(),
    };
    normalize_pitch(&as_contour)
}
