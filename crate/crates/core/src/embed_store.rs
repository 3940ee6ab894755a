//! Binary storage for per-second frame embeddings.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! "NDVS" | version u32 | dim u32 | record_count u64
//! per record: id_len u16 | id bytes | frame_count u32 | has_weights u8
//!             | frame_count*dim f32 | [frame_count f32 weights]
//! ```
//!
//! Embeddings are kept exactly as produced by the extractor. Normalization
//! happens inside the similarity kernels.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"NDVS";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated in header")]
    TruncatedHeader,
    #[error("file truncated in record {index}")]
    TruncatedRecord { index: u64 },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("dimension mismatch: expected {expected}, got {actual} (video {video_id:?})")]
    DimensionMismatch {
        video_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("invalid record {video_id:?}: {reason}")]
    InvalidRecord { video_id: String, reason: String },
    #[error("record {index}: video id is not valid UTF-8")]
    InvalidId { index: u64 },
    #[error("store must not be empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frame embeddings of one video sampled at one frame per second.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    video_id: String,
    dim: usize,
    frames: Vec<f32>,
    weights: Vec<f32>,
}

impl EmbeddingSequence {
    /// Builds a sequence from a row-major `T x dim` buffer. Missing weights
    /// default to 1.0 for every frame.
    pub fn new(
        video_id: impl Into<String>,
        dim: usize,
        frames: Vec<f32>,
        weights: Option<Vec<f32>>,
    ) -> Result<Self, StoreError> {
        let video_id = video_id.into();
        let invalid = |reason: String| StoreError::InvalidRecord {
            video_id: video_id.clone(),
            reason,
        };
        if dim == 0 {
            return Err(invalid("dim must be positive".into()));
        }
        if frames.is_empty() {
            return Err(invalid("sequence has no frames".into()));
        }
        if !frames.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "{} values do not form rows of length {dim}",
                frames.len()
            )));
        }
        if let Some(pos) = frames.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite value at frame {}, component {}",
                pos / dim,
                pos % dim
            )));
        }
        let len = frames.len() / dim;
        let weights = match weights {
            Some(w) => {
                if w.len() != len {
                    return Err(invalid(format!(
                        "{} weights for {len} frames",
                        w.len()
                    )));
                }
                if let Some(pos) = w.iter().position(|v| !(0.0..=1.0).contains(v)) {
                    return Err(invalid(format!(
                        "weight {} of frame {pos} outside [0, 1]",
                        w[pos]
                    )));
                }
                w
            }
            None => vec![1.0; len],
        };
        Ok(Self {
            video_id,
            dim,
            frames,
            weights,
        })
    }

    /// Convenience constructor from one vector per frame.
    pub fn from_rows(
        video_id: impl Into<String>,
        rows: &[Vec<f32>],
        weights: Option<Vec<f32>>,
    ) -> Result<Self, StoreError> {
        let video_id = video_id.into();
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(StoreError::DimensionMismatch {
                video_id,
                expected: dim,
                actual: bad.len(),
            });
        }
        Self::new(video_id, dim, rows.concat(), weights)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames (seconds).
    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        &self.frames[index * self.dim..(index + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.frames.chunks_exact(self.dim)
    }

    pub fn raw_frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weight(&self, index: usize) -> f32 {
        self.weights[index]
    }

    pub fn has_default_weights(&self) -> bool {
        self.weights.iter().all(|w| w.to_bits() == 1.0f32.to_bits())
    }

    /// Same frames and weights under another id.
    pub fn with_id(&self, video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            ..self.clone()
        }
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [f32] {
        &mut self.frames
    }

    /// Equality on the bit patterns of every float, stricter than `==`.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.video_id == other.video_id
            && self.dim == other.dim
            && self.frames.len() == other.frames.len()
            && self
                .frames
                .iter()
                .zip(&other.frames)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// A set of sequences sharing one dimensionality, keyed by video id.
///
/// Iteration follows insertion (file) order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: IndexMap<String, EmbeddingSequence>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: IndexMap::new(),
        }
    }

    pub fn from_sequences(
        sequences: impl IntoIterator<Item = EmbeddingSequence>,
    ) -> Result<Self, StoreError> {
        let mut iter = sequences.into_iter().peekable();
        let dim = iter.peek().map(EmbeddingSequence::dim).ok_or(StoreError::Empty)?;
        let mut store = Self::new(dim);
        for seq in iter {
            store.insert(seq)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, seq: EmbeddingSequence) -> Result<(), StoreError> {
        if seq.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                video_id: seq.video_id.clone(),
                expected: self.dim,
                actual: seq.dim(),
            });
        }
        if self.records.contains_key(seq.video_id()) {
            return Err(StoreError::DuplicateId(seq.video_id.clone()));
        }
        self.records.insert(seq.video_id.clone(), seq);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&EmbeddingSequence> {
        self.records.get(video_id)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &EmbeddingSequence> + '_ {
        self.records.values()
    }

    pub fn into_sequences(self) -> Vec<EmbeddingSequence> {
        self.records.into_values().collect()
    }

    pub fn bits_eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .all(|(id, seq)| other.records.get(id).is_some_and(|o| seq.bits_eq(o)))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        fs::write(path, encode_records(self.dim, self.records.values()))?;
        Ok(())
    }
}

/// Serializes `sequences` into the binary store layout.
pub fn encode(sequences: &[EmbeddingSequence]) -> Result<Vec<u8>, StoreError> {
    let first = sequences.first().ok_or(StoreError::Empty)?;
    let dim = first.dim();
    let mut seen = std::collections::HashSet::with_capacity(sequences.len());
    for seq in sequences {
        if seq.dim() != dim {
            return Err(StoreError::DimensionMismatch {
                video_id: seq.video_id.clone(),
                expected: dim,
                actual: seq.dim(),
            });
        }
        if !seen.insert(seq.video_id()) {
            return Err(StoreError::DuplicateId(seq.video_id.clone()));
        }
        if seq.video_id.len() > u16::MAX as usize {
            return Err(StoreError::InvalidRecord {
                video_id: seq.video_id.clone(),
                reason: "id longer than 65535 bytes".into(),
            });
        }
        if seq.len() > u32::MAX as usize {
            return Err(StoreError::InvalidRecord {
                video_id: seq.video_id.clone(),
                reason: "more than u32::MAX frames".into(),
            });
        }
    }
    Ok(encode_records(dim, sequences.iter()))
}

fn encode_records<'a>(dim: usize, records: impl ExactSizeIterator<Item = &'a EmbeddingSequence>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for seq in records {
        out.extend_from_slice(&(seq.video_id.len() as u16).to_le_bytes());
        out.extend_from_slice(seq.video_id.as_bytes());
        out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
        let has_weights = !seq.has_default_weights();
        out.push(u8::from(has_weights));
        out.reserve(4 * seq.frames.len());
        for v in &seq.frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if has_weights {
            for w in &seq.weights {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    out
}

pub fn write_store(sequences: &[EmbeddingSequence], path: impl AsRef<Path>) -> Result<(), StoreError> {
    let bytes = encode(sequences)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
    decode(&fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Option<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4)?)?;
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

/// Parses a store from its binary form, validating every invariant.
pub fn decode(bytes: &[u8]) -> Result<EmbeddingStore, StoreError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4) {
        Some(m) => m.try_into().unwrap(),
        None => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            if m[..bytes.len()] != MAGIC[..bytes.len()] {
                return Err(StoreError::BadMagic(m));
            }
            return Err(StoreError::TruncatedHeader);
        }
    };
    if &magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let version = r.u32().ok_or(StoreError::TruncatedHeader)?;
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let dim = r.u32().ok_or(StoreError::TruncatedHeader)? as usize;
    let count = r.u64().ok_or(StoreError::TruncatedHeader)?;
    if dim == 0 {
        return Err(StoreError::InvalidRecord {
            video_id: String::new(),
            reason: "header dim is zero".into(),
        });
    }

    let mut store = EmbeddingStore::new(dim);
    for index in 0..count {
        let truncated = || StoreError::TruncatedRecord { index };
        let id_len = r.u16().ok_or_else(truncated)? as usize;
        let id = r.take(id_len).ok_or_else(truncated)?;
        let id = std::str::from_utf8(id)
            .map_err(|_| StoreError::InvalidId { index })?
            .to_owned();
        let frame_count = r.u32().ok_or_else(truncated)? as usize;
        let has_weights = match r.u8().ok_or_else(truncated)? {
            0 => false,
            1 => true,
            other => {
                return Err(StoreError::InvalidRecord {
                    video_id: id,
                    reason: format!("has_weights flag is {other}"),
                })
            }
        };
        let frames = r
            .f32s(frame_count.checked_mul(dim).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        let weights = if has_weights {
            Some(r.f32s(frame_count).ok_or_else(truncated)?)
        } else {
            None
        };
        store.insert(EmbeddingSequence::new(id, dim, frames, weights)?)?;
    }
    if r.pos != bytes.len() {
        return Err(StoreError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(store)
}
