//! Synthetic "toy speaker" corpora for tests and demos.
//!
//! A toy speaker is a base F0, a spectral tilt and a syllable rate. Each
//! utterance is a chain of harmonic syllables whose vowel (formant pattern)
//! is drawn from an inventory shared by all speakers, so the vowel sequence
//! plays the role of content.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wav::write_wav;
use super::{extract_features, UtteranceFeatures, Waveform};
use crate::error::Result;
use crate::seed::derive_seed;

const SR: f64 = 16000.0;
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];
const NOISE_LEVEL: f64 = 1e-3;
const BLOCK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpeaker {
    pub base_f0: f64,
    pub tilt_db_per_octave: f64,
    pub syllable_rate: f64,
}

impl ToySpeaker {
    /// The `index`-th of `count` speakers, spread over F0 95-260 Hz, tilt
    /// -4..-14 dB/octave and 3-5.5 syllables per second, each axis in a
    /// different order.
    pub fn preset(index: usize, count: usize) -> Self {
        let span = count.saturating_sub(1).max(1) as f64;
        let frac = |k: usize| if count <= 1 { 0.5 } else { (k % count) as f64 / span };
        Self {
            base_f0: 95.0 * (260.0f64 / 95.0).powf(frac(index)),
            tilt_db_per_octave: -4.0 - 10.0 * frac(index * 3 + 1),
            syllable_rate: 3.0 + 2.5 * frac(count - 1 - index % count),
        }
    }

    pub fn synthesize(&self, seed: u64, duration_secs: f64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (duration_secs * SR) as usize;

        // (start sample, length, vowel, accent)
        let mut syllables = Vec::new();
        let mut start = 0usize;
        while start < n {
            let len = ((SR / self.syllable_rate) * rng.random_range(0.75..1.25)) as usize;
            syllables.push((start, len.max(1), rng.random_range(0..VOWELS.len()), rng.random_range(0.94..1.06)));
            start += len.max(1);
        }
        let drift_phase = rng.random_range(0.0..2.0 * PI);

        let mut out = vec![0.0; n];
        let mut phase = 0.0f64;
        let mut amps: Vec<f64> = Vec::new();
        let mut syl = 0;
        for block_start in (0..n).step_by(BLOCK) {
            while syl + 1 < syllables.len() && syllables[syl + 1].0 <= block_start {
                syl += 1;
            }
            let (s_start, s_len, vowel, accent) = syllables[syl];
            let time = block_start as f64 / SR;
            let f0 = self.base_f0 * accent * (1.0 + 0.05 * (2.0 * PI * 0.5 * time + drift_phase).sin());
            amps.clear();
            let mut k = 1;
            while k as f64 * f0 < 7600.0 {
                amps.push(self.harmonic_gain(k as f64 * f0, &VOWELS[vowel]));
                k += 1;
            }
            for i in block_start..(block_start + BLOCK).min(n) {
                let u = (i - s_start) as f64 / s_len as f64;
                let env = if u < 0.8 { (PI * u / 0.8).sin().powi(2) } else { 0.0 };
                if env > 0.0 {
                    // sin(k*phase) by the Chebyshev recurrence.
                    let two_cos = 2.0 * phase.cos();
                    let (mut prev, mut cur) = (0.0, phase.sin());
                    let mut acc = 0.0;
                    for &a in &amps {
                        acc += a * cur;
                        let next = two_cos * cur - prev;
                        prev = cur;
                        cur = next;
                    }
                    out[i] = env * acc;
                }
                phase = (phase + 2.0 * PI * f0 / SR) % (2.0 * PI);
            }
        }

        let peak = out.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let gain = if peak > 0.0 { 0.5 / peak } else { 0.0 };
        for x in &mut out {
            *x = *x * gain + NOISE_LEVEL * rng.random_range(-1.0..1.0);
        }
        Waveform::new(out, SR as u32).expect("synthesized samples are finite")
    }

    fn harmonic_gain(&self, freq: f64, formants: &[f64; 3]) -> f64 {
        let resonance: f64 = formants
            .iter()
            .zip(BANDWIDTHS)
            .map(|(&f, b)| 1.0 / (1.0 + ((freq - f) / b).powi(2)))
            .sum();
        let tilt = 10f64.powf(self.tilt_db_per_octave * (freq / 100.0).log2() / 20.0);
        (resonance + 0.05) * tilt
    }
}

/// One generated utterance.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub speaker: usize,
    pub id: String,
    pub wave: Waveform,
}

fn utterance_duration(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random_range(2.4..3.0)
}

/// Generates `utterances` utterances for each of `speakers` toy speakers.
pub fn toy_corpus(speakers: usize, utterances: usize, seed: u64) -> Vec<ToyUtterance> {
    (0..speakers)
        .flat_map(|s| {
            let spk = ToySpeaker::preset(s, speakers);
            (0..utterances).map(move |u| {
                let useed = derive_seed(seed, s as u64, u as u64);
                ToyUtterance {
                    speaker: s,
                    id: format!("spk{s:02}_utt{u:03}"),
                    wave: spk.synthesize(useed, utterance_duration(useed ^ 0x5eed)),
                }
            })
        })
        .collect()
}

/// Toy corpus already featurized, `(speaker, id, features)`.
pub fn toy_features(speakers: usize, utterances: usize, seed: u64) -> Vec<(usize, String, UtteranceFeatures)> {
    toy_corpus(speakers, utterances, seed)
        .into_iter()
        .map(|u| {
            let f = extract_features(&u.wave).expect("toy utterances are long enough");
            (u.speaker, u.id, f)
        })
        .collect()
}

/// Writes a speaker-per-directory WAV corpus under `root`.
pub fn write_toy_corpus(root: &Path, speakers: usize, utterances: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for utt in toy_corpus(speakers, utterances, seed) {
        let dir = root.join(format!("spk{:02}", utt.speaker));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.wav", utt.id));
        write_wav(&path, &utt.wave)?;
        paths.push(path);
    }
    Ok(paths)
}
