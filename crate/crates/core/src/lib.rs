//! Near-duplicate video search and dataset hygiene for text-to-video retrieval.
//!
//! The crate covers the whole offline pipeline around a retrieval model:
//!
//! - [`embed_store`]: bit-exact storage of per-second frame embeddings.
//! - [`simkit`]: cosine kernels, black-frame weights and screensaver suppression.
//! - [`ndvs`]: the diagonal-window intersection scorer and the all-pairs ranker.
//! - [`curvekit`]: search curves and total-overlap estimation.
//! - [`registry`]: manifests, identity graph and train-split cleaning.
//! - [`sampler`]: weighted multi-dataset example sampling.
//! - [`evalkit`]: retrieval metrics, ranking loss and modality fusion.
//! - [`assess`]: assessment session state backed by an append-only verdict log.

pub mod assess;
pub mod curvekit;
pub mod embed_store;
pub mod evalkit;
pub mod ndvs;
pub mod registry;
pub mod sampler;
pub mod simkit;

pub use embed_store::{EmbeddingSequence, EmbeddingStore, StoreError};
pub use ndvs::CandidatePair;

/// Default window length in seconds for the intersection scorer.
pub const DEFAULT_WINDOW: usize = 4;
/// Default cosine threshold for screensaver suppression.
pub const DEFAULT_SCREENSAVER_THRESHOLD: f64 = 0.9;
/// Default margin for the bi-directional ranking loss.
pub const DEFAULT_MARGIN: f64 = 0.05;
/// Default number of examples per epoch when every dataset is included.
pub const DEFAULT_BASE_EPOCH: u64 = 150_000;
