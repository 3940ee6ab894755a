//! Similarity kernels shared by the scorer and the curve tooling.

use thiserror::Error;

use crate::embed_store::{EmbeddingSequence, EmbeddingStore};
use crate::DEFAULT_SCREENSAVER_THRESHOLD;

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

/// A frame whose prevalent color covers more than this fraction is down-weighted.
pub const PREVALENT_COLOR_LIMIT: f64 = 0.7;

const LEVELS_PER_CHANNEL: usize = 16;
const COLOR_BINS: usize = LEVELS_PER_CHANNEL * LEVELS_PER_CHANNEL * LEVELS_PER_CHANNEL;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid blacklist: {0}")]
    InvalidBlacklist(String),
}

pub fn norm(u: &[f32]) -> f64 {
    u.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

/// Cosine given precomputed norms. Produces the same bits as [`cosine`].
#[inline]
pub(crate) fn cosine_with_norms(u: &[f32], nu: f64, v: &[f32], nv: f64) -> f64 {
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Cosine similarity; zero when either vector has (near) zero norm.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, SimError> {
    check_dims(u.len(), v.len())?;
    Ok(cosine_with_norms(u, norm(u), v, norm(v)))
}

/// `mu_u * mu_v * cosine(u, v)`.
pub fn weighted_cosine(u: &[f32], mu_u: f64, v: &[f32], mu_v: f64) -> Result<f64, SimError> {
    check_unit("mu_u", mu_u)?;
    check_unit("mu_v", mu_v)?;
    Ok(mu_u * mu_v * cosine(u, v)?)
}

fn check_dims(left: usize, right: usize) -> Result<(), SimError> {
    if left != right {
        return Err(SimError::DimensionMismatch { left, right });
    }
    Ok(())
}

fn check_unit(name: &'static str, value: f64) -> Result<(), SimError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(SimError::OutOfRange { name, value });
    }
    Ok(())
}

/// An RGB frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRaster {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl FrameRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self, SimError> {
        if width == 0 || height == 0 {
            return Err(SimError::InvalidRaster(format!("{width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(SimError::InvalidRaster(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Result<Self, SimError> {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

/// Histogram bin of a pixel: 16 levels per channel, 4096 bins in total.
pub fn color_bin([r, g, b]: [u8; 3]) -> usize {
    ((r as usize >> 4) << 8) | ((g as usize >> 4) << 4) | (b as usize >> 4)
}

/// Fraction of the frame covered by its most populated color bin.
pub fn prevalent_color_fraction(frame: &FrameRaster) -> f64 {
    let mut hist = vec![0usize; COLOR_BINS];
    for &px in &frame.pixels {
        hist[color_bin(px)] += 1;
    }
    let best = hist.iter().copied().max().unwrap_or(0);
    best as f64 / (frame.width * frame.height) as f64
}

/// Frame weight from the prevalent-color fraction: `1 - fraction` above 0.7, else 1.
pub fn frame_weight(fraction: f64) -> Result<f64, SimError> {
    check_unit("fraction", fraction)?;
    Ok(if fraction > PREVALENT_COLOR_LIMIT {
        1.0 - fraction
    } else {
        1.0
    })
}

/// Weight of a single raster.
pub fn raster_weight(frame: &FrameRaster) -> f64 {
    // fraction is always within (0, 1]
    frame_weight(prevalent_color_fraction(frame)).unwrap_or(1.0)
}

/// Embeddings of known intro/outro screensavers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreensaverBlacklist {
    dim: usize,
    entries: Vec<Vec<f32>>,
    threshold: f64,
}

impl ScreensaverBlacklist {
    /// Entries must already be unit-norm (within 1e-6).
    pub fn new(dim: usize, entries: Vec<Vec<f32>>, threshold: f64) -> Result<Self, SimError> {
        if dim == 0 {
            return Err(SimError::InvalidBlacklist("dim must be positive".into()));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(SimError::InvalidBlacklist(format!(
                "threshold {threshold} outside (0, 1]"
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            check_dims(dim, e.len())?;
            let n = norm(e);
            if (n - 1.0).abs() > 1e-6 {
                return Err(SimError::InvalidBlacklist(format!(
                    "entry {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self {
            dim,
            entries,
            threshold,
        })
    }

    /// Normalizes raw embeddings before building the blacklist. Zero vectors are rejected.
    pub fn from_raw(dim: usize, raw: Vec<Vec<f32>>, threshold: f64) -> Result<Self, SimError> {
        let mut entries = Vec::with_capacity(raw.len());
        for (i, e) in raw.into_iter().enumerate() {
            check_dims(dim, e.len())?;
            let n = norm(&e);
            if n < ZERO_NORM {
                return Err(SimError::InvalidBlacklist(format!("entry {i} is a zero vector")));
            }
            entries.push(e.iter().map(|&x| (f64::from(x) / n) as f32).collect());
        }
        Self::new(dim, entries, threshold)
    }

    /// Every frame of every record in a store becomes one entry.
    pub fn from_store(store: &EmbeddingStore, threshold: f64) -> Result<Self, SimError> {
        let raw = store
            .iter()
            .flat_map(|s| s.frames().map(<[f32]>::to_vec))
            .collect();
        Self::from_raw(store.dim(), raw, threshold)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            threshold: DEFAULT_SCREENSAVER_THRESHOLD,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Vec<f32>] {
        &self.entries
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether `frame` is strictly more similar than the threshold to any entry.
    pub fn matches(&self, frame: &[f32]) -> bool {
        let nf = norm(frame);
        self.entries
            .iter()
            .any(|e| cosine_with_norms(frame, nf, e, norm(e)) > self.threshold)
    }
}

/// Zeroes every frame that matches a blacklist entry. Other frames are left bit-identical.
pub fn suppress_screensavers(
    seq: &EmbeddingSequence,
    blacklist: &ScreensaverBlacklist,
) -> Result<EmbeddingSequence, SimError> {
    check_dims(blacklist.dim(), seq.dim())?;
    let mut out = seq.clone();
    if blacklist.is_empty() {
        return Ok(out);
    }
    let dim = seq.dim();
    for (i, chunk) in out.frames_mut().chunks_exact_mut(dim).enumerate() {
        if blacklist.matches(seq.frame(i)) {
            chunk.fill(0.0);
        }
    }
    Ok(out)
}
