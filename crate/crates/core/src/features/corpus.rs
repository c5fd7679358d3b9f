//! Speaker-per-directory corpus ingestion with a persisted JSON index.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::FeatureRecord;
use super::wav::read_wav;
use super::{extract_features, UtteranceFeatures};
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Speaker counts for the train / validation / test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl std::str::FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad split {s:?}, expected e.g. 100,3,6")))?;
        match parts[..] {
            [train, val, test] => Ok(Self { train, val, test }),
            _ => Err(Error::InvalidArgument(format!("split {s:?} needs three counts"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub utterance_id: String,
    pub speaker: String,
    /// Contiguous label in `0..num_speakers`; only training speakers have one.
    pub speaker_id: Option<usize>,
    pub split: Split,
    pub audio_path: PathBuf,
    /// Relative to the cache directory.
    pub cache_path: PathBuf,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub seed: u64,
    pub split: SplitSpec,
    pub num_speakers: usize,
    pub entries: Vec<IndexEntry>,
}

impl CorpusIndex {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        index.validate().map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })?;
        Ok(index)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = vec![false; self.num_speakers];
        for e in &self.entries {
            match (e.split, e.speaker_id) {
                (Split::Train, Some(id)) if id < self.num_speakers => seen[id] = true,
                (Split::Train, _) => return Err(format!("{}: bad training speaker id", e.utterance_id)),
                (_, None) => {}
                (_, Some(_)) => return Err(format!("{}: held-out entry has a label", e.utterance_id)),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("speaker ids are not contiguous".into());
        }
        Ok(())
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads the cached features of every entry in `split`.
    pub fn load_features(&self, cache_dir: &Path, split: Split) -> Result<Vec<(IndexEntry, UtteranceFeatures)>> {
        self.in_split(split)
            .map(|e| {
                let features = FeatureRecord::read(&cache_dir.join(&e.cache_path))?.features()?;
                Ok((e.clone(), features))
            })
            .collect()
    }
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut items: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    items.sort();
    Ok(items)
}

/// Scans `root/<speaker>/*.wav`, splits speakers with `seed`, extracts and
/// caches features under `cache_dir` and writes `cache_dir/index.json`.
pub fn ingest_corpus(root: &Path, cache_dir: &Path, split: SplitSpec, seed: u64) -> Result<CorpusIndex> {
    let mut speakers: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let wavs: Vec<PathBuf> = sorted_dir(&dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        if wavs.is_empty() {
            log::warn!("skipping speaker directory {} with no wav files", dir.display());
            continue;
        }
        speakers.push((name, wavs));
    }
    let wanted = split.train + split.val + split.test;
    if wanted > speakers.len() {
        return Err(Error::InvalidArgument(format!(
            "split asks for {wanted} speakers but {} has {}",
            root.display(),
            speakers.len()
        )));
    }

    let mut order: Vec<usize> = (0..speakers.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment: Vec<Option<Split>> = vec![None; speakers.len()];
    for (rank, &s) in order.iter().enumerate() {
        assignment[s] = if rank < split.train {
            Some(Split::Train)
        } else if rank < split.train + split.val {
            Some(Split::Val)
        } else if rank < wanted {
            Some(Split::Test)
        } else {
            None
        };
    }

    std::fs::create_dir_all(cache_dir)?;
    let mut entries = Vec::new();
    let mut next_label = 0;
    for ((name, wavs), split_of) in speakers.iter().zip(&assignment) {
        let Some(split_of) = *split_of else { continue };
        let speaker_id = (split_of == Split::Train).then(|| {
            next_label += 1;
            next_label - 1
        });
        std::fs::create_dir_all(cache_dir.join(name))?;
        for wav in wavs {
            let stem = wav.file_stem().unwrap().to_string_lossy().into_owned();
            let features = extract_features(&read_wav(wav)?).map_err(|e| Error::InvalidArgument(format!("{}: {e}", wav.display())))?;
            let cache_path = PathBuf::from(name).join(format!("{stem}.srdf"));
            FeatureRecord::from_features(&features).write(&cache_dir.join(&cache_path))?;
            entries.push(IndexEntry {
                utterance_id: format!("{name}/{stem}"),
                speaker: name.clone(),
                speaker_id,
                split: split_of,
                audio_path: wav.clone(),
                cache_path,
                frames: features.num_frames(),
            });
        }
    }
    let index = CorpusIndex {
        seed,
        split,
        num_speakers: next_label,
        entries,
    };
    index.save(&cache_dir.join(INDEX_FILE))?;
    Ok(index)
}
