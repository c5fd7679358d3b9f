//! Objective metrics: mel-cepstral distortion with DTW, log-F0 correlation,
//! and speaker-embedding projections.

mod embed;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use embed::{embed_and_plot, silhouette_score, tsne, EmbedInput, Embedding, TsneConfig};

use crate::convert::{synthesize_audio, AspectSet, ConversionRequest, Converter, UtteranceInput};
use crate::error::{Error, Result};
use crate::features::{compute_mel, extract_features, extract_pitch, MelSpectrogram, PitchContour, Waveform};

pub const CEPSTRAL_ORDER: usize = 13;

/// `10 * sqrt(2) / ln 10`.
pub const MCD_SCALE: f64 = 6.141_851_463_713_754;

/// Mel-cepstral coefficients `1..=order` per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelCepstra {
    pub coeffs: Array2<f64>,
}

impl MelCepstra {
    pub fn new(coeffs: Array2<f64>) -> Result<Self> {
        if coeffs.nrows() == 0 {
            return Err(Error::InvalidArgument("cepstral sequence is empty".into()));
        }
        if coeffs.ncols() < 2 {
            return Err(Error::InvalidArgument("cepstral order must be at least 2".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }
}

/// Orthonormal DCT-II of each log-mel frame, keeping coefficients `1..=order`.
pub fn mel_cepstra(mel: &MelSpectrogram, order: usize) -> Result<MelCepstra> {
    let n = mel.frames.ncols();
    if order >= n {
        return Err(Error::InvalidArgument(format!("order {order} needs more than {n} bands")));
    }
    let basis = Array2::from_shape_fn((n, order), |(j, k)| {
        let k = k + 1;
        (2.0 / n as f64).sqrt() * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()
    });
    MelCepstra::new(mel.frames.dot(&basis))
}

/// Minimal-cost monotone alignment with steps (1,1), (1,0), (0,1), each
/// visited cell adding its local cost. Among equal-cost paths the shortest
/// wins, then the earliest candidate in (diagonal, down, right) order.
/// Returns the path from (0, 0) to (n-1, m-1) and its summed cost.
pub fn dtw(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<(usize, usize)>, f64) {
    assert!(n > 0 && m > 0, "dtw needs non-empty sequences");
    let mut acc = vec![(f64::INFINITY, 0usize); n * m];
    let mut from = vec![0u8; n * m];
    let idx = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j);
            if i == 0 && j == 0 {
                acc[0] = (c, 1);
                continue;
            }
            let mut best = (f64::INFINITY, usize::MAX);
            let mut dir = 0;
            let cands = [
                (i > 0 && j > 0).then(|| acc[idx(i.wrapping_sub(1), j.wrapping_sub(1))]),
                (i > 0).then(|| acc[idx(i.wrapping_sub(1), j)]),
                (j > 0).then(|| acc[idx(i, j.wrapping_sub(1))]),
            ];
            for (d, cand) in cands.iter().enumerate() {
                if let Some((cc, len)) = *cand {
                    if cc < best.0 || (cc == best.0 && len < best.1) {
                        best = (cc, len);
                        dir = d as u8;
                    }
                }
            }
            acc[idx(i, j)] = (best.0 + c, best.1 + 1);
            from[idx(i, j)] = dir;
        }
    }
    let mut path = Vec::with_capacity(acc[idx(n - 1, m - 1)].1);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match from[idx(i, j)] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
    }
    path.reverse();
    (path, acc[idx(n - 1, m - 1)].0)
}

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mel-cepstral distortion in dB over the DTW alignment.
pub fn mcd_dtw(reference: &MelCepstra, hypothesis: &MelCepstra) -> Result<f64> {
    if reference.is_empty() || hypothesis.is_empty() {
        return Err(Error::InvalidArgument("MCD needs non-empty sequences".into()));
    }
    if reference.coeffs.ncols() != hypothesis.coeffs.ncols() {
        return Err(Error::Shape("cepstral orders differ".into()));
    }
    let (r, h) = (&reference.coeffs, &hypothesis.coeffs);
    let (path, total) = dtw(r.nrows(), h.nrows(), |i, j| euclidean(r.row(i), h.row(j)));
    Ok(MCD_SCALE * total / path.len() as f64)
}

/// MCD between two log-mel spectrograms using order-13 cepstra.
pub fn mel_mcd(reference: &MelSpectrogram, hypothesis: &MelSpectrogram) -> Result<f64> {
    mcd_dtw(&mel_cepstra(reference, CEPSTRAL_ORDER)?, &mel_cepstra(hypothesis, CEPSTRAL_ORDER)?)
}

/// Per-contour z-scored log-F0 over voiced frames (`None` where unvoiced).
fn zscored_log_f0(c: &PitchContour) -> Vec<Option<f64>> {
    let logs: Vec<f64> = c.f0_hz.iter().zip(&c.voiced).filter(|(_, v)| **v).map(|(f, _)| f.ln()).collect();
    let n = logs.len().max(1) as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let std = (logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = if std > 1e-12 { std } else { 1.0 };
    c.f0_hz
        .iter()
        .zip(&c.voiced)
        .map(|(f, &v)| v.then(|| (f.ln() - mean) / std))
        .collect()
}

/// Pearson correlation, clamped to [-1, 1]; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let denom = (sxx * syy).sqrt();
    (denom > 0.0).then(|| (sxy / denom).clamp(-1.0, 1.0))
}

/// Pearson correlation of log-F0 on frames voiced in both contours after
/// DTW alignment. The alignment runs on per-contour z-scored log-F0 (a
/// voiced/unvoiced mismatch costs 1, two unvoiced frames cost 0) so a pure
/// pitch shift does not distort it. `None` with fewer than two jointly voiced
/// aligned frames.
pub fn logf0_pcc(source: &PitchContour, converted: &PitchContour) -> Option<f64> {
    if source.is_empty() || converted.is_empty() {
        return None;
    }
    let (za, zb) = (zscored_log_f0(source), zscored_log_f0(converted));
    let (path, _) = dtw(za.len(), zb.len(), |i, j| match (za[i], zb[j]) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => 1.0,
    });
    let (xs, ys): (Vec<f64>, Vec<f64>) = path
        .iter()
        .filter(|&&(i, j)| source.voiced[i] && converted.voiced[j])
        .map(|&(i, j)| (source.f0_hz[i].ln(), converted.f0_hz[j].ln()))
        .unzip();
    pearson(&xs, &ys)
}

/// One evaluated conversion pair. CER and WER are left for an external ASR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pair_id: String,
    pub mcd_db: f64,
    pub logf0_pcc: Option<f64>,
    pub aspects: String,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
}

pub fn write_report(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Griffin-Lim iterations used when F0 has to be measured on converted mels.
pub const EVAL_SYNTH_ITERATIONS: usize = 32;

/// Converts `source` toward `target` on `aspects` and scores the result:
/// MCD against `reference` (default: the target, else the source) and log-F0
/// PCC between the source and the resynthesized conversion.
pub fn evaluate_pair(
    converter: &Converter,
    pair_id: &str,
    source: &Waveform,
    target: Option<&Waveform>,
    reference: Option<&Waveform>,
    aspects: AspectSet,
) -> Result<MetricReport> {
    let src = extract_features(source)?;
    let tgt = target.map(extract_features).transpose()?;
    let req = ConversionRequest {
        source: UtteranceInput::from_features(&src),
        target: tgt.as_ref().map(UtteranceInput::from_features),
        aspects,
    };
    let converted = converter.convert(&req)?;
    let reference_mel = match reference.or(target) {
        Some(w) => compute_mel(w)?,
        None => src.mel.clone(),
    };
    let wave = synthesize_audio(&converted.mel, EVAL_SYNTH_ITERATIONS);
    Ok(MetricReport {
        pair_id: pair_id.to_string(),
        mcd_db: mel_mcd(&reference_mel, &converted.mel)?,
        logf0_pcc: logf0_pcc(&src.pitch, &extract_pitch(&wave)?),
        aspects: aspects.to_string(),
        cer: None,
        wer: None,
    })
}
