//! Search curves and total-overlap estimation.
//!
//! `Pos` holds scores of every query video against its own augmented copy,
//! `Neg` holds scores of query videos against the gallery. The search curve
//! maps the x-th best positive to the number of negatives scoring strictly
//! above it, i.e. how many false candidates an assessor wades through before
//! reaching that positive. Inverting the curve at the observed number of
//! negatives gives the fraction of duplicates found so far.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_store::EmbeddingSequence;

pub const MIN_SIDE_FRACTION: f64 = 0.7;
pub const MAX_SIDE_FRACTION: f64 = 1.0;
/// Noise level of the embedding-level crop surrogate.
pub const SURROGATE_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("positive score set is empty")]
    EmptyPositives,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("no positive is reachable within {seen} negatives (first positive needs {needed})")]
    NothingFound { seen: u64, needed: u64 },
    #[error("fraction {0} must lie in (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("curve csv line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Random crop and start shift applied to one video when building `Pos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub video_id: String,
    pub width_fraction: f64,
    pub height_fraction: f64,
    pub start_shift_s: f64,
}

/// One spec per id, deterministic for a fixed seed.
pub fn plan_augmentations<S: AsRef<str>>(video_ids: &[S], seed: u64) -> Vec<AugmentationSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    video_ids
        .iter()
        .map(|id| AugmentationSpec {
            video_id: id.as_ref().to_owned(),
            width_fraction: rng.random_range(MIN_SIDE_FRACTION..=MAX_SIDE_FRACTION),
            height_fraction: rng.random_range(MIN_SIDE_FRACTION..=MAX_SIDE_FRACTION),
            start_shift_s: rng.random_range(0.0..1.0),
        })
        .collect()
}

/// Embedding-level stand-in for re-extracting features from an augmented clip.
///
/// Not a model of real crops: a shift of half a second or more drops the
/// first frame, then every component gets Gaussian noise with sigma 0.05.
/// Weights are carried over for the frames that remain.
pub fn apply_surrogate(seq: &EmbeddingSequence, spec: &AugmentationSpec, seed: u64) -> EmbeddingSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, SURROGATE_NOISE_SIGMA).expect("sigma is positive");
    let skip = usize::from(spec.start_shift_s >= 0.5 && seq.len() > 1);
    let dim = seq.dim();
    let frames: Vec<f32> = seq.raw_frames()[skip * dim..]
        .iter()
        .map(|&x| (f64::from(x) + normal.sample(&mut rng)) as f32)
        .collect();
    let weights = seq.weights()[skip..].to_vec();
    EmbeddingSequence::new(seq.video_id(), dim, frames, Some(weights))
        .expect("noise keeps values finite and shape intact")
}

/// Monotone step function from positive index to negatives ranked above it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchCurve {
    points: Vec<(usize, u64)>,
    pos_count: usize,
    neg_count: usize,
}

impl SearchCurve {
    /// Rebuilds a curve from exported points, checking the invariants.
    pub fn from_points(points: Vec<(usize, u64)>, neg_count: usize) -> Result<Self, CurveError> {
        if points.is_empty() {
            return Err(CurveError::EmptyPositives);
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if x != i {
                return Err(CurveError::InvalidCurve(format!("x = {x} at position {i}")));
            }
            if y > neg_count as u64 {
                return Err(CurveError::InvalidCurve(format!(
                    "y = {y} exceeds {neg_count} negatives"
                )));
            }
            if i > 0 && y < points[i - 1].1 {
                return Err(CurveError::InvalidCurve(format!("y decreases at x = {x}")));
            }
        }
        Ok(Self {
            pos_count: points.len(),
            points,
            neg_count,
        })
    }

    pub fn points(&self) -> &[(usize, u64)] {
        &self.points
    }

    pub fn pos_count(&self) -> usize {
        self.pos_count
    }

    pub fn neg_count(&self) -> usize {
        self.neg_count
    }

    /// Negatives to inspect before reaching the positive at index `x`.
    pub fn y(&self, x: usize) -> Option<u64> {
        self.points.get(x).map(|p| p.1)
    }

    /// CSV with header `x,y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y")?;
        for (x, y) in &self.points {
            writeln!(out, "{x},{y}")?;
        }
        out.flush()
    }

    /// Reads a curve CSV. The negative count is not part of the file, so the
    /// last `y` stands in for it.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, CurveError> {
        let mut points = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != "x,y" {
                    return Err(CurveError::Parse {
                        line: 1,
                        message: format!("expected header x,y, got {line:?}"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| CurveError::Parse { line: i + 1, message };
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected two columns".into()))?;
            let x = x.trim().parse::<usize>().map_err(|e| parse_err(e.to_string()))?;
            let y = y.trim().parse::<u64>().map_err(|e| parse_err(e.to_string()))?;
            points.push((x, y));
        }
        let neg = points.last().map_or(0, |p| p.1 as usize);
        Self::from_points(points, neg)
    }
}

fn sorted_desc(scores: &[f64]) -> Result<Vec<f64>, CurveError> {
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(CurveError::NonFiniteScore(bad));
    }
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// Builds the search curve. Negatives tied with a positive do not count as above it.
pub fn build_curve(pos: &[f64], neg: &[f64]) -> Result<SearchCurve, CurveError> {
    if pos.is_empty() {
        return Err(CurveError::EmptyPositives);
    }
    let pos = sorted_desc(pos)?;
    let neg = sorted_desc(neg)?;
    let points = pos
        .iter()
        .enumerate()
        .map(|(x, &p)| (x, neg.partition_point(|&n| n > p) as u64))
        .collect();
    Ok(SearchCurve {
        points,
        pos_count: pos.len(),
        neg_count: neg.len(),
    })
}

/// Fraction of positives reachable after inspecting `seen_negatives` negatives:
/// `(x + 1) / pos_count` for the largest `x` with `y(x) <= seen_negatives`.
pub fn inverse(curve: &SearchCurve, seen_negatives: u64) -> Result<f64, CurveError> {
    let reachable = curve.points.partition_point(|&(_, y)| y <= seen_negatives);
    if reachable == 0 {
        return Err(CurveError::NothingFound {
            seen: seen_negatives,
            needed: curve.points[0].1,
        });
    }
    Ok(reachable as f64 / curve.pos_count as f64)
}

/// `round(found / fraction)`.
pub fn estimate_total(found: u64, fraction: f64) -> Result<u64, CurveError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CurveError::InvalidFraction(fraction));
    }
    Ok((found as f64 / fraction).round() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub seen_negatives: u64,
    pub found: u64,
    pub fraction: f64,
    pub estimated_total: u64,
}

/// Inverse plus estimate in one step.
pub fn estimate(curve: &SearchCurve, seen_negatives: u64, found: u64) -> Result<EstimateReport, CurveError> {
    let fraction = inverse(curve, seen_negatives)?;
    Ok(EstimateReport {
        seen_negatives,
        found,
        fraction,
        estimated_total: estimate_total(found, fraction)?,
    })
}
