//! Timbre-code projection: exact t-SNE, silhouette score, scatter plot and CSV.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::model::SrdModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Row-conditional affinities with each row's entropy matched to ln(perplexity).
fn affinities(d2: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d2.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        let mut row = vec![0.0; n];
        for _ in 0..64 {
            let dmin = (0..n).filter(|&j| j != i).map(|j| d2[[i, j]]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d2[[i, j]] - dmin) * beta).exp() };
                sum += row[j];
            }
            let mut h = 0.0;
            for j in 0..n {
                row[j] /= sum;
                if row[j] > 0.0 {
                    h -= row[j] * row[j].ln();
                }
            }
            if (h - target).abs() < 1e-6 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        for j in 0..n {
            p[[i, j]] = row[j];
        }
    }
    let sym = (&p + &p.t()) / (2.0 * n as f64);
    sym.mapv(|v| v.max(1e-12))
}

/// Exact t-SNE to two dimensions. The perplexity is capped at `(n - 1) / 3`.
pub fn tsne(x: &Array2<f64>, cfg: &TsneConfig) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::InvalidArgument("t-SNE needs at least 3 points".into()));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = affinities(&squared_distances(x), perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Array2<f64> = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-1e-4..1e-4));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let lr = cfg.learning_rate.unwrap_or((n as f64 / cfg.early_exaggeration / 4.0).max(50.0));
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let mut num = Array2::<f64>::zeros((n, n));
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
                    num[[i, j]] = 1.0 / (1.0 + d);
                    z += num[[i, j]];
                }
            }
        }
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let q = (num[[i, j]] / z).max(1e-12);
                    let w = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                    for d in 0..2 {
                        grad[[i, d]] += w * (y[[i, d]] - y[[j, d]]);
                    }
                }
            }
        }
        for ((g, v), gain) in grad.iter().zip(velocity.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*v > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
            *v = momentum * *v - lr * *gain * g;
        }
        y += &velocity;
        let mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        y -= &mean;
    }
    Ok(y)
}

/// Mean silhouette coefficient; points in singleton clusters score 0.
pub fn silhouette_score(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n || n < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two labelled points".into()));
    }
    let k = labels.iter().max().unwrap() + 1;
    if labels.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let d = squared_distances(points).mapv(f64::sqrt);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += d[[i, j]];
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn scatter_png(coords: &Array2<f64>, labels: &[usize], path: &Path) -> Result<()> {
    const SIZE: u32 = 480;
    const MARGIN: f64 = 24.0;
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let range = |c: usize| {
        let col = coords.column(c);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xs), (y0, ys)) = (range(0), range(1));
    let span = SIZE as f64 - 2.0 * MARGIN;
    for (i, &label) in labels.iter().enumerate() {
        let cx = MARGIN + (coords[[i, 0]] - x0) / xs * span;
        let cy = SIZE as f64 - MARGIN - (coords[[i, 1]] - y0) / ys * span;
        let color = Rgb(PALETTE[label % PALETTE.len()]);
        for dx in -4i32..=4 {
            for dy in -4i32..=4 {
                if dx * dx + dy * dy <= 16 {
                    let (px, py) = (cx as i32 + dx, cy as i32 + dy);
                    if (0..SIZE as i32).contains(&px) && (0..SIZE as i32).contains(&py) {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedInput {
    pub id: String,
    pub speaker: String,
    pub mel: MelSpectrogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub ids: Vec<String>,
    pub speakers: Vec<String>,
    pub labels: Vec<usize>,
    pub codes: Array2<f64>,
    pub coords: Array2<f64>,
    pub silhouette: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    utterance_id: &'a str,
    speaker: &'a str,
    x: f64,
    y: f64,
}

/// Projects each utterance's timbre code to 2-D and writes a scatter image
/// and a CSV of coordinates.
pub fn embed_and_plot(model: &SrdModel, inputs: &[EmbedInput], png: &Path, csv_path: &Path, cfg: &TsneConfig) -> Result<Embedding> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for inp in inputs {
        *counts.entry(&inp.speaker).or_default() += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(Error::InvalidArgument(
            "embedding needs at least 2 speakers with at least 2 utterances each".into(),
        ));
    }
    for (i, name) in counts.keys().enumerate() {
        index.insert(name, i);
    }
    let labels: Vec<usize> = inputs.iter().map(|u| index[u.speaker.as_str()]).collect();
    let mut codes = Array2::zeros((inputs.len(), model.config.d_t));
    for (i, u) in inputs.iter().enumerate() {
        codes.row_mut(i).assign(&ndarray::Array1::from(model.timbre_code(&u.mel)));
    }
    let coords = tsne(&codes, cfg)?;
    let silhouette = silhouette_score(&coords, &labels)?;
    let mut w = csv::Writer::from_path(csv_path)?;
    for (i, u) in inputs.iter().enumerate() {
        w.serialize(CsvRow {
            utterance_id: &u.id,
            speaker: &u.speaker,
            x: coords[[i, 0]],
            y: coords[[i, 1]],
        })?;
    }
    w.flush()?;
    scatter_png(&coords, &labels, png)?;
    Ok(Embedding {
        ids: inputs.iter().map(|u| u.id.clone()).collect(),
        speakers: inputs.iter().map(|u| u.speaker.clone()).collect(),
        labels,
        codes,
        coords,
        silhouette,
    })
}
