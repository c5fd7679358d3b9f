use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::corpus::{CorpusIndex, Split, INDEX_FILE};
use crate::features::{log_floor, UtteranceFeatures};
use crate::model::FeatureBatch;
use crate::seed::derive_seed;

const STREAM_EPOCH: u64 = 0x10;
const STREAM_CROP: u64 = 0x11;

/// One training utterance: log-mel frames, normalized pitch and speaker label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub speaker: usize,
    pub mel: Array2<f64>,
    pub pitch: Vec<f64>,
}

impl TrainItem {
    pub fn from_features(speaker: usize, f: &UtteranceFeatures) -> Self {
        Self {
            speaker,
            mel: f.mel.frames.clone(),
            pitch: f.normalized_pitch().values,
        }
    }

    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }
}

/// In-memory training set with deterministic epoch shuffling and cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub items: Vec<TrainItem>,
    pub num_speakers: usize,
}

impl TrainData {
    pub fn new(items: Vec<TrainItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let num_speakers = items.iter().map(|i| i.speaker).max().unwrap() + 1;
        let mut seen = vec![false; num_speakers];
        for it in &items {
            seen[it.speaker] = true;
            if it.pitch.len() != it.frames() {
                return Err(Error::Shape("mel and pitch frame counts differ".into()));
            }
        }
        if num_speakers < 2 || seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "training needs at least 2 speakers with contiguous labels, found labels 0..{num_speakers} with gaps or fewer than 2"
            )));
        }
        Ok(Self { items, num_speakers })
    }

    pub fn from_features<'a>(labelled: impl IntoIterator<Item = (usize, &'a UtteranceFeatures)>) -> Result<Self> {
        Self::new(labelled.into_iter().map(|(s, f)| TrainItem::from_features(s, f)).collect())
    }

    /// Training split of an ingested feature cache.
    pub fn from_cache(cache_dir: &std::path::Path) -> Result<Self> {
        let index = CorpusIndex::load(&cache_dir.join(INDEX_FILE))?;
        let feats = index.load_features(cache_dir, Split::Train)?;
        Self::new(
            feats
                .iter()
                .map(|(e, f)| TrainItem::from_features(e.speaker_id.expect("training entries are labelled"), f))
                .collect(),
        )
    }

    fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EPOCH, epoch)));
        order
    }

    /// The batch for training step `step` (0-based). Items are drawn without
    /// replacement per epoch; each gets a random `crop`-frame window, and
    /// shorter items are padded with the log-mel floor and zero pitch.
    pub fn batch(&self, seed: u64, step: u64, batch_size: usize, crop: usize) -> FeatureBatch {
        let n = self.items.len() as u64;
        let mut mel = Array2::from_elem((batch_size * crop, self.items[0].mel.ncols()), log_floor());
        let mut pitch = Array2::zeros((batch_size * crop, 1));
        let mut speakers = Vec::with_capacity(batch_size);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for b in 0..batch_size {
            let pos = step * batch_size as u64 + b as u64;
            let epoch = pos / n;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                cached = Some((epoch, self.epoch_order(seed, epoch)));
            }
            let item = &self.items[cached.as_ref().unwrap().1[(pos % n) as usize]];
            let t = item.frames();
            let offset = if t > crop {
                ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CROP, pos)).random_range(0..=t - crop)
            } else {
                0
            };
            let len = t.min(crop);
            let rows = b * crop..b * crop + len;
            mel.slice_mut(s![rows.clone(), ..]).assign(&item.mel.slice(s![offset..offset + len, ..]));
            for (k, r) in rows.enumerate() {
                pitch[[r, 0]] = item.pitch[offset + k];
            }
            speakers.push(item.speaker);
        }
        FeatureBatch {
            mel,
            pitch,
            batch: batch_size,
            steps: crop,
            speakers,
        }
    }
}
