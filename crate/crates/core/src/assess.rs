//! Assessment session state behind the review service.
//!
//! Candidate pairs are served in the scorer's ranked order. Assessors mark
//! duplicates explicitly; pairs they scroll past without marking are recorded
//! as implicit negatives. Every accepted event is appended to a JSON Lines log
//! and synced before it is acknowledged, and all derived state is rebuilt
//! from that log on startup.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curvekit::{self, CurveError, SearchCurve};
use crate::ndvs::{self, CandidatePair};
use crate::registry::{Label, Verdict, VideoKey};

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("pair list version mismatch: session has {current}, request has {requested}")]
    VersionConflict { current: String, requested: String },
    #[error("unknown pair {query} / {gallery}")]
    UnknownPair { query: VideoKey, gallery: VideoKey },
    #[error("assessor name must not be empty")]
    MissingAssessor,
    #[error("log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("pair list contains {0} twice")]
    DuplicatePair(String),
    #[error(transparent)]
    Candidates(#[from] ndvs::NdvsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identity of a candidate pair independent of its rank.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairRef {
    pub query: VideoKey,
    pub gallery: VideoKey,
}

/// The ranked candidate list of one query/gallery dataset pair.
#[derive(Debug, Clone)]
pub struct RankedPairs {
    version: String,
    query_dataset: String,
    gallery_dataset: String,
    pairs: Vec<CandidatePair>,
    index: HashMap<PairRef, usize>,
}

/// Hex SHA-256 of the candidate file contents.
pub fn version_of(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RankedPairs {
    /// Parses a candidate JSONL file. The version is the hash of its bytes.
    pub fn from_bytes(bytes: &[u8], query_dataset: &str, gallery_dataset: &str) -> Result<Self, AssessError> {
        let pairs = ndvs::read_candidates(bytes)?;
        Self::new(version_of(bytes), pairs, query_dataset, gallery_dataset)
    }

    pub fn from_file(path: impl AsRef<Path>, query_dataset: &str, gallery_dataset: &str) -> Result<Self, AssessError> {
        Self::from_bytes(&std::fs::read(path)?, query_dataset, gallery_dataset)
    }

    pub fn new(
        version: String,
        pairs: Vec<CandidatePair>,
        query_dataset: &str,
        gallery_dataset: &str,
    ) -> Result<Self, AssessError> {
        let mut index = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            let key = PairRef {
                query: VideoKey::new(query_dataset, &p.query_id),
                gallery: VideoKey::new(gallery_dataset, &p.gallery_id),
            };
            if index.insert(key, i).is_some() {
                return Err(AssessError::DuplicatePair(format!("{} / {}", p.query_id, p.gallery_id)));
            }
        }
        Ok(Self {
            version,
            query_dataset: query_dataset.to_owned(),
            gallery_dataset: gallery_dataset.to_owned(),
            pairs,
            index,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn query_dataset(&self) -> &str {
        &self.query_dataset
    }

    pub fn gallery_dataset(&self) -> &str {
        &self.gallery_dataset
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[CandidatePair] {
        &self.pairs
    }

    pub fn pair_ref(&self, rank: usize) -> Option<PairRef> {
        let p = self.pairs.get(rank.checked_sub(1)?)?;
        Some(PairRef {
            query: VideoKey::new(&self.query_dataset, &p.query_id),
            gallery: VideoKey::new(&self.gallery_dataset, &p.gallery_id),
        })
    }

    /// 1-based rank of a pair.
    pub fn rank_of(&self, pair: &PairRef) -> Option<usize> {
        self.index.get(pair).map(|i| i + 1)
    }

    /// Pairs with ranks in `(after, after + limit]`; empty past the end.
    pub fn page(&self, after: usize, limit: usize) -> Vec<(usize, &CandidatePair)> {
        let start = after.min(self.pairs.len());
        let end = after.saturating_add(limit).min(self.pairs.len());
        (start..end).map(|i| (i + 1, &self.pairs[i])).collect()
    }
}

/// One log line: a verdict plus its sequence number. Implicit negatives from
/// scrolling carry `implicit: true`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictLogEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub implicit: bool,
}

impl VerdictLogEntry {
    pub fn pair(&self) -> PairRef {
        PairRef {
            query: self.verdict.query.clone(),
            gallery: self.verdict.gallery.clone(),
        }
    }
}

/// Append-only JSONL log with durable appends.
#[derive(Debug)]
pub struct VerdictLog {
    path: PathBuf,
    file: File,
}

impl VerdictLog {
    /// Opens (or creates) a log and returns its entries.
    ///
    /// A final line without its newline is an append that never completed and
    /// was never acknowledged; it is cut off. Any other malformed line is an
    /// error.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<VerdictLogEntry>), AssessError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if complete < bytes.len() {
            file.set_len(complete as u64)?;
            file.sync_data()?;
            file.seek(SeekFrom::End(0))?;
        }

        let mut entries: Vec<VerdictLogEntry> = Vec::new();
        for (i, line) in BufReader::new(&bytes[..complete]).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let entry: VerdictLogEntry = serde_json::from_str(&line).map_err(|e| AssessError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(prev) = entries.last() {
                if entry.seq <= prev.seq {
                    return Err(AssessError::CorruptLog {
                        line: i + 1,
                        message: format!("sequence {} after {}", entry.seq, prev.seq),
                    });
                }
            }
            entries.push(entry);
        }
        Ok((Self { path, file }, entries))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes and syncs a batch of entries as one append.
    pub fn append(&mut self, entries: &[VerdictLogEntry]) -> Result<(), AssessError> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e).map_err(std::io::Error::from)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Effective labels derived from the log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssessmentState {
    seen: HashSet<PairRef>,
    duplicates: HashSet<PairRef>,
    submissions: HashMap<(PairRef, Label, String), u64>,
    last_seq: u64,
}

impl AssessmentState {
    pub fn replay<'a>(entries: impl IntoIterator<Item = &'a VerdictLogEntry>) -> Self {
        let mut state = Self::default();
        for e in entries {
            state.apply(e);
        }
        state
    }

    pub fn apply(&mut self, entry: &VerdictLogEntry) {
        let pair = entry.pair();
        self.seen.insert(pair.clone());
        if entry.verdict.label == Label::Duplicate {
            self.duplicates.insert(pair.clone());
        }
        if !entry.implicit {
            self.submissions
                .entry((pair, entry.verdict.label, entry.verdict.assessor.clone()))
                .or_insert(entry.seq);
        }
        self.last_seq = self.last_seq.max(entry.seq);
    }

    pub fn is_seen(&self, pair: &PairRef) -> bool {
        self.seen.contains(pair)
    }

    pub fn is_duplicate(&self, pair: &PairRef) -> bool {
        self.duplicates.contains(pair)
    }

    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }

    pub fn found_count(&self) -> usize {
        self.duplicates.len()
    }

    /// Seen pairs that are not duplicates.
    pub fn negative_count(&self) -> usize {
        self.seen.len() - self.duplicates.len()
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn duplicates(&self) -> impl Iterator<Item = &PairRef> {
        self.duplicates.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub seen: usize,
    pub negatives: usize,
    pub found: usize,
    pub status: ProgressStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_total: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressStatus {
    Ok,
    InsufficientData,
    NoCurve,
}

/// Progress counters with the curve-based overlap estimate when one exists.
pub fn progress_and_estimate(state: &AssessmentState, curve: Option<&SearchCurve>) -> Result<Progress, CurveError> {
    let mut progress = Progress {
        seen: state.seen_count(),
        negatives: state.negative_count(),
        found: state.found_count(),
        status: ProgressStatus::NoCurve,
        fraction: None,
        estimated_total: None,
    };
    let Some(curve) = curve else { return Ok(progress) };
    if progress.found == 0 {
        progress.status = ProgressStatus::InsufficientData;
        return Ok(progress);
    }
    match curvekit::estimate(curve, progress.negatives as u64, progress.found as u64) {
        Ok(report) => {
            progress.status = ProgressStatus::Ok;
            progress.fraction = Some(report.fraction);
            progress.estimated_total = Some(report.estimated_total);
        }
        Err(CurveError::NothingFound { .. }) => progress.status = ProgressStatus::InsufficientData,
        Err(e) => return Err(e),
    }
    Ok(progress)
}

/// Result of a seen batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeenAck {
    /// Pairs newly marked as seen.
    pub recorded: usize,
    pub seen: usize,
}

/// Ranked pairs, derived state and the log that backs it.
#[derive(Debug)]
pub struct AssessmentSession {
    pairs: RankedPairs,
    state: AssessmentState,
    log: VerdictLog,
}

impl AssessmentSession {
    /// Opens the log and rebuilds state. Entries for pairs absent from the
    /// current list still count: the log is the source of truth.
    pub fn open(pairs: RankedPairs, log_path: impl AsRef<Path>) -> Result<Self, AssessError> {
        let (log, entries) = VerdictLog::open(log_path)?;
        let state = AssessmentState::replay(&entries);
        Ok(Self { pairs, state, log })
    }

    pub fn pairs(&self) -> &RankedPairs {
        &self.pairs
    }

    pub fn state(&self) -> &AssessmentState {
        &self.state
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    pub fn check_version(&self, requested: Option<&str>) -> Result<(), AssessError> {
        match requested {
            Some(v) if v != self.pairs.version() => Err(AssessError::VersionConflict {
                current: self.pairs.version().to_owned(),
                requested: v.to_owned(),
            }),
            _ => Ok(()),
        }
    }

    pub fn serve_pairs(
        &self,
        after: usize,
        limit: usize,
        version: Option<&str>,
    ) -> Result<Vec<(usize, &CandidatePair)>, AssessError> {
        self.check_version(version)?;
        Ok(self.pairs.page(after, limit))
    }

    fn require_pair(&self, pair: &PairRef) -> Result<(), AssessError> {
        if self.pairs.rank_of(pair).is_none() {
            return Err(AssessError::UnknownPair {
                query: pair.query.clone(),
                gallery: pair.gallery.clone(),
            });
        }
        Ok(())
    }

    /// Appends an explicit verdict and returns its sequence number. Repeating
    /// an identical submission returns the original number without appending.
    pub fn record_verdict(&mut self, verdict: Verdict) -> Result<u64, AssessError> {
        if verdict.assessor.is_empty() {
            return Err(AssessError::MissingAssessor);
        }
        let pair = PairRef {
            query: verdict.query.clone(),
            gallery: verdict.gallery.clone(),
        };
        self.require_pair(&pair)?;
        if let Some(&seq) = self
            .state
            .submissions
            .get(&(pair, verdict.label, verdict.assessor.clone()))
        {
            return Ok(seq);
        }
        let entry = VerdictLogEntry {
            seq: self.state.last_seq + 1,
            verdict,
            implicit: false,
        };
        self.log.append(std::slice::from_ref(&entry))?;
        self.state.apply(&entry);
        Ok(entry.seq)
    }

    /// Marks scrolled-past pairs as seen. Pairs already seen are skipped, so
    /// retrying a batch changes nothing.
    pub fn record_seen(&mut self, pairs: &[PairRef], assessor: &str, timestamp: i64) -> Result<SeenAck, AssessError> {
        for p in pairs {
            self.require_pair(p)?;
        }
        let mut batch = Vec::new();
        let mut fresh = HashSet::new();
        let mut seq = self.state.last_seq;
        for p in pairs {
            if self.state.is_seen(p) || !fresh.insert(p) {
                continue;
            }
            seq += 1;
            batch.push(VerdictLogEntry {
                seq,
                verdict: Verdict {
                    query: p.query.clone(),
                    gallery: p.gallery.clone(),
                    label: Label::Negative,
                    assessor: assessor.to_owned(),
                    timestamp,
                },
                implicit: true,
            });
        }
        self.log.append(&batch)?;
        for e in &batch {
            self.state.apply(e);
        }
        Ok(SeenAck {
            recorded: batch.len(),
            seen: self.state.seen_count(),
        })
    }

    pub fn progress(&self, curve: Option<&SearchCurve>) -> Result<Progress, CurveError> {
        progress_and_estimate(&self.state, curve)
    }

    /// One duplicate verdict per effectively duplicate pair, in rank order,
    /// for the cleaning step.
    pub fn effective_duplicates(&self) -> Vec<Verdict> {
        let mut dups: Vec<&PairRef> = self.state.duplicates().collect();
        dups.sort_by_key(|p| (self.pairs.rank_of(p).unwrap_or(usize::MAX), (*p).clone()));
        dups.into_iter()
            .map(|p| Verdict {
                query: p.query.clone(),
                gallery: p.gallery.clone(),
                label: Label::Duplicate,
                assessor: String::new(),
                timestamp: 0,
            })
            .collect()
    }
}
