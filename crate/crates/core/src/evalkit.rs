//! Retrieval metrics, the bi-directional max-margin ranking loss and
//! weighted multi-modality similarity fusion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("matrix has {values} values, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, values: usize },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("batch size must be at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("ground truth for query {query} is {index}, gallery has {n_gallery} items")]
    GroundTruth { query: usize, index: usize, n_gallery: usize },
    #[error("{0} ground-truth entries for {1} queries")]
    GroundTruthLen(usize, usize),
    #[error("k = {k} exceeds gallery size {n_gallery}")]
    KTooLarge { k: usize, n_gallery: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("similarity at ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
    #[error("modality {0}: dimension mismatch")]
    ModalityDim(usize),
    #[error("bundle has {text} text, {video} video embeddings and {weights} weights")]
    ModalityCount { text: usize, video: usize, weights: usize },
    #[error("modality weight {0} is negative or not finite")]
    BadWeight(usize),
}

/// Query-by-gallery similarities with one correct gallery item per query.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    ground_truth: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, ground_truth: Vec<usize>) -> Result<Self, EvalError> {
        if values.len() != rows * cols {
            return Err(EvalError::Shape { rows, cols, values: values.len() });
        }
        if ground_truth.len() != rows {
            return Err(EvalError::GroundTruthLen(ground_truth.len(), rows));
        }
        if let Some((query, &index)) = ground_truth.iter().enumerate().find(|(_, &g)| g >= cols) {
            return Err(EvalError::GroundTruth { query, index, n_gallery: cols });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite(pos / cols, pos % cols));
        }
        Ok(Self { rows, cols, values, ground_truth })
    }

    /// Square matrix whose ground truth is the diagonal.
    pub fn diagonal(n: usize, values: Vec<f64>) -> Result<Self, EvalError> {
        Self::new(n, n, values, (0..n).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>], ground_truth: Vec<usize>) -> Result<Self, EvalError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(EvalError::Shape { rows: rows.len(), cols, values: rows.iter().map(Vec::len).sum() });
        }
        Self::new(rows.len(), cols, rows.concat(), ground_truth)
    }

    pub fn n_queries(&self) -> usize {
        self.rows
    }

    pub fn n_gallery(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn ground_truth(&self) -> &[usize] {
        &self.ground_truth
    }

    /// Same matrix with every value mapped through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, EvalError> {
        Self::new(self.rows, self.cols, self.values.iter().map(|&v| f(v)).collect(), self.ground_truth.clone())
    }

    /// 1-based rank of the correct item for every query. Ties with the
    /// correct item are broken by gallery index.
    pub fn ranks(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let gt = self.ground_truth[i];
                let target = row[gt];
                1 + row
                    .iter()
                    .enumerate()
                    .filter(|&(j, &s)| s > target || (s == target && j < gt))
                    .count()
            })
            .collect()
    }
}

/// Per-modality text and video embeddings with the query's modality weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBundle {
    pub text: Vec<Vec<f64>>,
    pub video: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// `sum_m w_m * <t_m, v_m>`.
pub fn fuse_similarity(bundle: &ModalityBundle) -> Result<f64, EvalError> {
    let (t, v, w) = (&bundle.text, &bundle.video, &bundle.weights);
    if t.len() != v.len() || t.len() != w.len() {
        return Err(EvalError::ModalityCount { text: t.len(), video: v.len(), weights: w.len() });
    }
    let mut total = 0.0;
    for m in 0..t.len() {
        if t[m].len() != v[m].len() {
            return Err(EvalError::ModalityDim(m));
        }
        if !(w[m].is_finite() && w[m] >= 0.0) {
            return Err(EvalError::BadWeight(m));
        }
        let dot: f64 = t[m].iter().zip(&v[m]).map(|(a, b)| a * b).sum();
        total += w[m] * dot;
    }
    Ok(total)
}

/// Bi-directional max-margin ranking loss over a batch whose matching pairs
/// sit on the diagonal:
/// `1/B * sum_i sum_{j != i} [max(0, s_ij - s_ii + m) + max(0, s_ji - s_ii + m)]`.
pub fn ranking_loss(batch: &SimilarityMatrix, margin: f64) -> Result<f64, EvalError> {
    let (rows, cols) = (batch.rows, batch.cols);
    if rows != cols {
        return Err(EvalError::NotSquare { rows, cols });
    }
    if rows < 2 {
        return Err(EvalError::BatchTooSmall(rows));
    }
    let mut total = 0.0;
    for i in 0..rows {
        let positive = batch.get(i, i);
        for j in (0..rows).filter(|&j| j != i) {
            let text_to_video = (batch.get(i, j) - positive + margin).max(0.0);
            let video_to_text = (batch.get(j, i) - positive + margin).max(0.0);
            total += text_to_video + video_to_text;
        }
    }
    Ok(total / rows as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    /// Percent of queries ranked within the top k.
    pub recall_at: BTreeMap<usize, f64>,
    pub mean_rank: f64,
    /// Lower median.
    pub median_rank: f64,
    pub n_queries: usize,
    pub n_gallery: usize,
}

pub fn metrics_from_ranks(ranks: &[usize], ks: &[usize], n_gallery: usize) -> Result<RetrievalMetrics, EvalError> {
    for &k in ks {
        if k == 0 {
            return Err(EvalError::ZeroK);
        }
        if k > n_gallery {
            return Err(EvalError::KTooLarge { k, n_gallery });
        }
    }
    let n = ranks.len();
    let recall_at = ks
        .iter()
        .map(|&k| (k, 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64))
        .collect();
    let mean_rank = ranks.iter().sum::<usize>() as f64 / n as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let median_rank = if n == 0 { f64::NAN } else { sorted[n.div_ceil(2) - 1] as f64 };
    Ok(RetrievalMetrics { recall_at, mean_rank, median_rank, n_queries: n, n_gallery })
}

pub fn retrieval_metrics(sims: &SimilarityMatrix, ks: &[usize]) -> Result<RetrievalMetrics, EvalError> {
    metrics_from_ranks(&sims.ranks(), ks, sims.n_gallery())
}

/// JSON shape of a metrics report, numbers rounded to one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_at: BTreeMap<String, f64>,
    pub mnr: f64,
    pub mdr: f64,
    pub n_queries: usize,
    pub n_gallery: usize,
}

fn one_decimal(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl From<&RetrievalMetrics> for MetricsReport {
    fn from(m: &RetrievalMetrics) -> Self {
        Self {
            r_at: m.recall_at.iter().map(|(k, v)| (k.to_string(), one_decimal(*v))).collect(),
            mnr: one_decimal(m.mean_rank),
            mdr: one_decimal(m.median_rank),
            n_queries: m.n_queries,
            n_gallery: m.n_gallery,
        }
    }
}
