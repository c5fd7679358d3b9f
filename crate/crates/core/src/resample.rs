//! Random resampling along time: the sequence is cut into random-length
//! segments, each stretched or squeezed by a random rate, and the result is
//! trimmed or zero-padded back to the input length.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub seg_min_frames: usize,
    pub seg_max_frames: usize,
    pub rate_min: f64,
    pub rate_max: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            seg_min_frames: 19,
            seg_max_frames: 32,
            rate_min: 0.5,
            rate_max: 1.5,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seg_min_frames == 0 || self.seg_min_frames > self.seg_max_frames {
            return Err(Error::Config(format!(
                "need 0 < seg_min_frames <= seg_max_frames, got {}..{}",
                self.seg_min_frames, self.seg_max_frames
            )));
        }
        if !(self.rate_min > 0.0 && self.rate_min <= self.rate_max && self.rate_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < rate_min <= rate_max, got {}..{}",
                self.rate_min, self.rate_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub rate: f64,
}

impl Segment {
    /// Frames this segment occupies after resampling.
    pub fn output_len(&self) -> usize {
        ((self.len as f64 * self.rate).round() as usize).max(1)
    }
}

/// The segmentation RR would use for a length-`t` sequence with `seed`.
pub fn segment_plan(t: usize, seed: u64, cfg: &ResampleConfig) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::new();
    let mut start = 0;
    while start < t {
        let len = rng.random_range(cfg.seg_min_frames..=cfg.seg_max_frames).min(t - start);
        let rate = if cfg.rate_min == cfg.rate_max {
            cfg.rate_min
        } else {
            rng.random_range(cfg.rate_min..=cfg.rate_max)
        };
        plan.push(Segment { start, len, rate });
        start += len;
    }
    plan
}

/// Total resampled length before trimming/padding back to `t`.
pub fn resampled_len(plan: &[Segment]) -> usize {
    plan.iter().map(Segment::output_len).sum()
}

/// Applies RR to a `T x D` sequence. Output is always `T x D`.
pub fn random_resample(seq: ArrayView2<f64>, seed: u64, cfg: &ResampleConfig) -> Array2<f64> {
    let (t, d) = seq.dim();
    let mut out = Array2::zeros((t, d));
    let mut row = 0;
    'segments: for seg in segment_plan(t, seed, cfg) {
        let n_out = seg.output_len();
        for k in 0..n_out {
            if row == t {
                break 'segments;
            }
            let pos = if n_out == 1 {
                0.0
            } else {
                k as f64 * (seg.len - 1) as f64 / (n_out - 1) as f64
            };
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            let a = seq.row(seg.start + i);
            if frac == 0.0 || i + 1 >= seg.len {
                out.row_mut(row).assign(&a);
            } else {
                let b = seq.row(seg.start + i + 1);
                for c in 0..d {
                    let (lo, hi) = (a[c].min(b[c]), a[c].max(b[c]));
                    out[[row, c]] = (a[c] + frac * (b[c] - a[c])).clamp(lo, hi);
                }
            }
            row += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn fixed(len: usize) -> ResampleConfig {
        ResampleConfig {
            seg_min_frames: len,
            seg_max_frames: len,
            ..Default::default()
        }
    }

    #[test]
    fn forced_tiling_and_remainder() {
        let p = segment_plan(10, 1, &fixed(5));
        assert_eq!(p.iter().map(|s| (s.start, s.len)).collect::<Vec<_>>(), vec![(0, 5), (5, 5)]);
        let p = segment_plan(7, 1, &fixed(5));
        assert_eq!(p.iter().map(|s| (s.start, s.len)).collect::<Vec<_>>(), vec![(0, 5), (5, 2)]);
    }

    #[test]
    fn identity_rate_is_exact() {
        let cfg = ResampleConfig {
            rate_min: 1.0,
            rate_max: 1.0,
            ..Default::default()
        };
        let x = Array2::from_shape_fn((77, 3), |(i, j)| (i * 3 + j) as f64 * 0.37 - 4.0);
        assert_eq!(random_resample(x.view(), 5, &cfg), x);
    }

    #[test]
    fn ramp_stays_in_range_at_half_rate() {
        let cfg = ResampleConfig {
            seg_min_frames: 40,
            seg_max_frames: 40,
            rate_min: 0.5,
            rate_max: 0.5,
        };
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let y = random_resample(x.view(), 0, &cfg);
        // Direct interpolation: 20 output frames spanning 0..=39.
        for k in 0..20 {
            let expected = k as f64 * 39.0 / 19.0;
            assert!((y[[k, 0]] - expected).abs() < 1e-12);
        }
        assert!(y.iter().all(|&v| (0.0..=39.0).contains(&v)));
        assert!(y.slice(ndarray::s![20.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_resampled_length_is_near_t() {
        let cfg = ResampleConfig::default();
        for &t in &[128usize, 200] {
            let mean = (0..1000u64).map(|s| resampled_len(&segment_plan(t, s, &cfg)) as f64).sum::<f64>() / 1000.0;
            assert!((mean / t as f64 - 1.0).abs() < 0.05, "T={t}: mean {mean}");
        }
    }

    proptest! {
        #[test]
        fn plan_tiles_exactly(t in 1usize..400, seed in any::<u64>()) {
            let cfg = ResampleConfig::default();
            let plan = segment_plan(t, seed, &cfg);
            let mut pos = 0;
            for (i, s) in plan.iter().enumerate() {
                prop_assert_eq!(s.start, pos);
                if i + 1 < plan.len() {
                    prop_assert!((cfg.seg_min_frames..=cfg.seg_max_frames).contains(&s.len));
                }
                prop_assert!(s.len >= 1 && s.len <= cfg.seg_max_frames);
                prop_assert!(s.rate >= cfg.rate_min && s.rate <= cfg.rate_max);
                pos += s.len;
            }
            prop_assert_eq!(pos, t);
            prop_assert_eq!(segment_plan(t, seed, &cfg), plan);
        }

        #[test]
        fn columns_are_independent(t in 1usize..150, d in 1usize..5, seed in any::<u64>()) {
            let cfg = ResampleConfig::default();
            let x = Array2::from_shape_fn((t, d), |(i, j)| ((i * 7 + j * 13) % 17) as f64 - 8.0);
            let y = random_resample(x.view(), seed, &cfg);
            prop_assert_eq!(y.dim(), (t, d));
            for j in 0..d {
                let col = x.column(j).to_owned().insert_axis(ndarray::Axis(1));
                let yc = random_resample(col.view(), seed, &cfg);
                prop_assert_eq!(yc.column(0), y.column(j));
            }
        }
    }
}
