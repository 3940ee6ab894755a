//! Weighted multi-dataset example sampling.
//!
//! A draw picks a dataset with probability `w / sum(w)`, then a video of that
//! dataset uniformly, then one of the video's captions uniformly. Draws are
//! with replacement. Every (epoch, worker) pair gets its own ChaCha stream
//! derived from the config seed.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use indexmap::IndexMap;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::VideoRecord;
use crate::DEFAULT_BASE_EPOCH;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("dataset {0:?} has a non-positive or non-finite weight")]
    BadWeight(String),
    #[error("dataset {0:?} is listed twice")]
    DuplicateDataset(String),
    #[error("config has no datasets")]
    NoDatasets,
    #[error("base_epoch must be at least 1")]
    ZeroEpoch,
    #[error("batch_size must be at least 1")]
    ZeroBatch,
    #[error("dataset {0:?} is not in the config")]
    UnknownDataset(String),
    #[error("no datasets selected")]
    EmptySelection,
    #[error("dataset {0:?} has no train video with a caption")]
    EmptyDataset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetWeight {
    pub dataset: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub entries: Vec<DatasetWeight>,
    #[serde(default = "default_base_epoch")]
    pub base_epoch: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_base_epoch() -> u64 {
    DEFAULT_BASE_EPOCH
}

fn default_batch_size() -> usize {
    1
}

impl SamplerConfig {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(dataset, weight)| DatasetWeight {
                    dataset: dataset.into(),
                    weight,
                })
                .collect(),
            base_epoch: DEFAULT_BASE_EPOCH,
            seed: 0,
            batch_size: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.entries.is_empty() {
            return Err(SamplerError::NoDatasets);
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(SamplerError::BadWeight(e.dataset.clone()));
            }
            if !seen.insert(e.dataset.as_str()) {
                return Err(SamplerError::DuplicateDataset(e.dataset.clone()));
            }
        }
        if self.base_epoch == 0 {
            return Err(SamplerError::ZeroEpoch);
        }
        if self.batch_size == 0 {
            return Err(SamplerError::ZeroBatch);
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }
}

/// `w_d / sum(w)` for every dataset, in config order.
pub fn dataset_probabilities(config: &SamplerConfig) -> Result<IndexMap<String, f64>, SamplerError> {
    config.validate()?;
    let total = config.total_weight();
    Ok(config
        .entries
        .iter()
        .map(|e| (e.dataset.clone(), e.weight / total))
        .collect())
}

/// `round(base_epoch * sum of p_d over the included datasets)`.
pub fn epoch_length<S: AsRef<str>>(config: &SamplerConfig, included: &[S]) -> Result<u64, SamplerError> {
    if included.is_empty() {
        return Err(SamplerError::EmptySelection);
    }
    let probs = dataset_probabilities(config)?;
    let mut seen = HashSet::new();
    let mut mass = 0.0;
    for d in included {
        let d = d.as_ref();
        let p = probs
            .get(d)
            .ok_or_else(|| SamplerError::UnknownDataset(d.to_owned()))?;
        if seen.insert(d) {
            mass += p;
        }
    }
    Ok((config.base_epoch as f64 * mass).round() as u64)
}

/// ChaCha stream for one (epoch, worker) pair.
pub fn stream_rng(seed: u64, epoch: u32, worker: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(epoch) << 32) | u64::from(worker));
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub dataset: String,
    pub video_id: String,
    pub caption_index: usize,
}

struct Pool {
    dataset: String,
    videos: Vec<(String, usize)>,
}

/// Hierarchical sampler over the train parts of several datasets.
pub struct Sampler {
    config: SamplerConfig,
    pools: Vec<Pool>,
    chooser: WeightedIndex<f64>,
}

impl Sampler {
    /// Uses only the train records of the configured datasets that carry at
    /// least one caption.
    pub fn new(config: SamplerConfig, records: &[VideoRecord]) -> Result<Self, SamplerError> {
        config.validate()?;
        let mut by_dataset: HashMap<&str, Vec<(String, usize)>> = HashMap::new();
        for r in records {
            if r.is_test() || r.captions.is_empty() {
                continue;
            }
            by_dataset
                .entry(r.dataset.as_str())
                .or_default()
                .push((r.video_id.clone(), r.captions.len()));
        }
        let mut pools = Vec::with_capacity(config.entries.len());
        for e in &config.entries {
            let videos = by_dataset.remove(e.dataset.as_str()).unwrap_or_default();
            if videos.is_empty() {
                return Err(SamplerError::EmptyDataset(e.dataset.clone()));
            }
            pools.push(Pool {
                dataset: e.dataset.clone(),
                videos,
            });
        }
        let chooser = WeightedIndex::new(config.entries.iter().map(|e| e.weight))
            .map_err(|_| SamplerError::NoDatasets)?;
        Ok(Self {
            config,
            pools,
            chooser,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let pool = &self.pools[self.chooser.sample(rng)];
        let (video_id, captions) = &pool.videos[rng.random_range(0..pool.videos.len())];
        Sample {
            dataset: pool.dataset.clone(),
            video_id: video_id.clone(),
            caption_index: rng.random_range(0..*captions),
        }
    }

    pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Sample> {
        (0..self.config.batch_size).map(|_| self.sample(rng)).collect()
    }

    /// All samples of one epoch for one worker, `count` draws long.
    pub fn epoch_samples(&self, epoch: u32, worker: u32, count: u64) -> Vec<Sample> {
        let mut rng = stream_rng(self.config.seed, epoch, worker);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}

pub fn write_samples<W: Write>(mut out: W, samples: &[Sample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
