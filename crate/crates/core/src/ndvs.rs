//! Near-duplicate video scoring.
//!
//! For a query/gallery pair the scorer builds the matrix of weighted frame
//! cosines, averages each run of `K` consecutive diagonal cells, and keeps the
//! best window. Every full window is scanned: `a` in `0..=T_q-K`, `b` in
//! `0..=T_g-K`. Clips shorter than `K` seconds are scored with
//! `K' = min(T_q, T_g)`.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_store::{EmbeddingSequence, EmbeddingStore};
use crate::simkit::{self, ScreensaverBlacklist, SimError};

#[derive(Debug, Error)]
pub enum NdvsError {
    #[error("dimension mismatch: query dim {query}, gallery dim {gallery}")]
    DimensionMismatch { query: usize, gallery: usize },
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("{0} store is empty")]
    EmptyStore(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("candidate line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Half-open time range in whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: usize,
    pub end_s: usize,
}

/// A scored (query, gallery) pair with its best-matching segments.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub query_id: String,
    pub gallery_id: String,
    pub score: f64,
    pub query_segment: Segment,
    pub gallery_segment: Segment,
    /// Window length actually used (may be shorter than requested).
    pub k: usize,
}

#[derive(Serialize, Deserialize)]
struct WirePair {
    query_id: String,
    gallery_id: String,
    score: f64,
    q_start: usize,
    q_end: usize,
    g_start: usize,
    g_end: usize,
    k: usize,
}

impl CandidatePair {
    /// One JSON Lines record, score printed with six fractional digits.
    pub fn to_json_line(&self) -> String {
        // serde_json never fails on a String
        let q = serde_json::to_string(&self.query_id).unwrap();
        let g = serde_json::to_string(&self.gallery_id).unwrap();
        format!(
            "{{\"query_id\":{q},\"gallery_id\":{g},\"score\":{:.6},\"q_start\":{},\"q_end\":{},\"g_start\":{},\"g_end\":{},\"k\":{}}}",
            self.score,
            self.query_segment.start_s,
            self.query_segment.end_s,
            self.gallery_segment.start_s,
            self.gallery_segment.end_s,
            self.k
        )
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        let w: WirePair = serde_json::from_str(line)?;
        Ok(Self {
            query_id: w.query_id,
            gallery_id: w.gallery_id,
            score: w.score,
            query_segment: Segment {
                start_s: w.q_start,
                end_s: w.q_end,
            },
            gallery_segment: Segment {
                start_s: w.g_start,
                end_s: w.g_end,
            },
            k: w.k,
        })
    }
}

pub fn write_candidates<W: Write>(mut out: W, pairs: &[CandidatePair]) -> std::io::Result<()> {
    for p in pairs {
        out.write_all(p.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_candidates<R: BufRead>(input: R) -> Result<Vec<CandidatePair>, NdvsError> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = CandidatePair::from_json_line(&line).map_err(|e| NdvsError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// A sequence with its frame norms and weights cached for repeated scoring.
struct Prepared<'a> {
    seq: &'a EmbeddingSequence,
    norms: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(seq: &'a EmbeddingSequence) -> Self {
        Self {
            seq,
            norms: seq.frames().map(simkit::norm).collect(),
            weights: seq.weights().iter().map(|&w| f64::from(w)).collect(),
        }
    }

    fn len(&self) -> usize {
        self.norms.len()
    }

    /// Weighted cosine between frame `i` here and frame `j` of `other`.
    #[inline]
    fn cell(&self, i: usize, other: &Prepared<'_>, j: usize) -> f64 {
        let cos = simkit::cosine_with_norms(
            self.seq.frame(i),
            self.norms[i],
            other.seq.frame(j),
            other.norms[j],
        );
        self.weights[i] * other.weights[j] * cos
    }
}

fn score_prepared(q: &Prepared<'_>, g: &Prepared<'_>, k: usize) -> CandidatePair {
    let (tq, tg) = (q.len(), g.len());
    let k = k.min(tq).min(tg);

    let mut cells = vec![0.0f64; tq * tg];
    for i in 0..tq {
        for j in 0..tg {
            cells[i * tg + j] = q.cell(i, g, j);
        }
    }

    let mut best = f64::NEG_INFINITY;
    let mut best_at = (0, 0);
    for a in 0..=tq - k {
        for b in 0..=tg - k {
            let mut sum = 0.0;
            for t in 0..k {
                sum += cells[(a + t) * tg + b + t];
            }
            let mean = sum / k as f64;
            if mean > best {
                best = mean;
                best_at = (a, b);
            }
        }
    }

    CandidatePair {
        query_id: q.seq.video_id().to_owned(),
        gallery_id: g.seq.video_id().to_owned(),
        score: best,
        query_segment: Segment {
            start_s: best_at.0,
            end_s: best_at.0 + k,
        },
        gallery_segment: Segment {
            start_s: best_at.1,
            end_s: best_at.1 + k,
        },
        k,
    }
}

/// Intersection score of one pair. Ties on the best window resolve to the
/// lexicographically smallest `(a, b)`.
pub fn pair_score(
    q: &EmbeddingSequence,
    g: &EmbeddingSequence,
    k: usize,
) -> Result<CandidatePair, NdvsError> {
    if q.dim() != g.dim() {
        return Err(NdvsError::DimensionMismatch {
            query: q.dim(),
            gallery: g.dim(),
        });
    }
    if k == 0 {
        return Err(NdvsError::ZeroWindow);
    }
    Ok(score_prepared(&Prepared::new(q), &Prepared::new(g), k))
}

/// Descending score, then query id, then gallery id.
pub fn candidate_order(a: &CandidatePair, b: &CandidatePair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.query_id.cmp(&b.query_id))
        .then_with(|| a.gallery_id.cmp(&b.gallery_id))
}

/// Scores every pair of `queries x gallery` and returns them best first.
///
/// `workers == 0` uses the global rayon pool. The result does not depend on
/// the worker count or on store iteration order.
pub fn rank_all_pairs(
    queries: &EmbeddingStore,
    gallery: &EmbeddingStore,
    k: usize,
    blacklist: Option<&ScreensaverBlacklist>,
    workers: usize,
) -> Result<Vec<CandidatePair>, NdvsError> {
    if queries.dim() != gallery.dim() {
        return Err(NdvsError::DimensionMismatch {
            query: queries.dim(),
            gallery: gallery.dim(),
        });
    }
    if queries.is_empty() {
        return Err(NdvsError::EmptyStore("query"));
    }
    if gallery.is_empty() {
        return Err(NdvsError::EmptyStore("gallery"));
    }
    if k == 0 {
        return Err(NdvsError::ZeroWindow);
    }
    if workers == 0 {
        return rank_in_pool(queries, gallery, k, blacklist);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| NdvsError::Pool(e.to_string()))?;
    pool.install(|| rank_in_pool(queries, gallery, k, blacklist))
}

fn rank_in_pool(
    queries: &EmbeddingStore,
    gallery: &EmbeddingStore,
    k: usize,
    blacklist: Option<&ScreensaverBlacklist>,
) -> Result<Vec<CandidatePair>, NdvsError> {
    let clean = |store: &EmbeddingStore| -> Result<Vec<EmbeddingSequence>, NdvsError> {
        match blacklist {
            Some(bl) => store
                .iter()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|s| simkit::suppress_screensavers(s, bl).map_err(NdvsError::from))
                .collect(),
            None => Ok(store.iter().cloned().collect()),
        }
    };
    let q_seqs = clean(queries)?;
    let g_seqs = clean(gallery)?;
    let q_prep: Vec<Prepared<'_>> = q_seqs.par_iter().map(Prepared::new).collect();
    let g_prep: Vec<Prepared<'_>> = g_seqs.par_iter().map(Prepared::new).collect();

    let n_g = g_prep.len();
    let mut pairs: Vec<CandidatePair> = (0..q_prep.len() * n_g)
        .into_par_iter()
        .map(|idx| score_prepared(&q_prep[idx / n_g], &g_prep[idx % n_g], k))
        .collect();
    pairs.par_sort_by(candidate_order);
    Ok(pairs)
}
