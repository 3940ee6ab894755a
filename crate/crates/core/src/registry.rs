//! Dataset manifests, the identity graph over videos and train-split cleaning.
//!
//! Cleaning runs in two steps. Stage one drops every train record whose
//! YouTube id also appears in a test part. Stage two takes human duplicate
//! verdicts, links the assessed videos, and removes every train record that
//! ends up in a connected component with a test record. Components are taken
//! over all link types (shared YouTube id, shared source movie, shared
//! internal source video, assessed duplicate), so a confirmed duplicate
//! pulls its whole identity group out of train. Test parts are never touched.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate record {0}")]
    DuplicateRecord(VideoKey),
    #[error("verdict references unknown video {0}")]
    UnknownVideo(VideoKey),
    #[error("verdict pairs {0} with itself")]
    SelfVerdict(VideoKey),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VideoKey {
    pub dataset: String,
    pub video_id: String,
}

impl VideoKey {
    pub fn new(dataset: impl Into<String>, video_id: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            video_id: video_id.into(),
        }
    }
}

impl std::fmt::Display for VideoKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.dataset, self.video_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub dataset: String,
    pub video_id: String,
    pub split: Split,
    #[serde(default)]
    pub youtube_id: Option<String>,
    #[serde(default)]
    pub movie: Option<String>,
    #[serde(default)]
    pub source_video_id: Option<String>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default)]
    pub duration_s: f64,
}

impl VideoRecord {
    pub fn new(dataset: impl Into<String>, video_id: impl Into<String>, split: Split) -> Self {
        Self {
            dataset: dataset.into(),
            video_id: video_id.into(),
            split,
            youtube_id: None,
            movie: None,
            source_video_id: None,
            captions: Vec::new(),
            duration_s: 0.0,
        }
    }

    pub fn with_youtube_id(mut self, id: impl Into<String>) -> Self {
        self.youtube_id = Some(id.into());
        self
    }

    pub fn with_movie(mut self, movie: impl Into<String>) -> Self {
        self.movie = Some(movie.into());
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source_video_id = Some(source.into());
        self
    }

    pub fn with_captions<I, S>(mut self, captions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.captions = captions.into_iter().map(Into::into).collect();
        self
    }

    pub fn key(&self) -> VideoKey {
        VideoKey::new(&self.dataset, &self.video_id)
    }

    pub fn is_test(&self) -> bool {
        self.split == Split::Test
    }
}

/// A manifest record together with the exact line it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestLine {
    pub record: VideoRecord,
    pub raw: String,
}

pub fn read_manifest_lines<R: BufRead>(input: R) -> Result<Vec<ManifestLine>, RegistryError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let raw = line?;
        if raw.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&raw).map_err(|e| RegistryError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ManifestLine { record, raw });
    }
    Ok(out)
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<VideoRecord>, RegistryError> {
    Ok(read_manifest_lines(input)?.into_iter().map(|l| l.record).collect())
}

pub fn write_manifest<W: Write>(mut out: W, records: &[VideoRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Duplicate,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Verdict {
    pub query: VideoKey,
    pub gallery: VideoKey,
    pub label: Label,
    pub assessor: String,
    #[serde(default)]
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    SameYoutubeId,
    SameMovie,
    SameSourceVideo,
    AssessedDuplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

/// Videos plus the typed identity links between them.
///
/// Records sharing an identity key are linked as a star around the first
/// member of the group, which keeps the edge count linear while preserving
/// connectivity.
#[derive(Debug, Clone)]
pub struct IdentityGraph {
    nodes: Vec<VideoRecord>,
    index: HashMap<VideoKey, usize>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, EdgeKind)>>,
}

impl IdentityGraph {
    pub fn build(records: Vec<VideoRecord>) -> Result<Self, RegistryError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.key(), i).is_some() {
                return Err(RegistryError::DuplicateRecord(r.key()));
            }
        }
        let mut graph = Self {
            adjacency: vec![Vec::new(); records.len()],
            nodes: records,
            index,
            edges: Vec::new(),
        };

        let mut by_youtube: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut by_movie: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut by_source: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
        for (i, r) in graph.nodes.iter().enumerate() {
            if let Some(y) = &r.youtube_id {
                by_youtube.entry(y).or_default().push(i);
            }
            if let Some(m) = &r.movie {
                by_movie.entry(m).or_default().push(i);
            }
            if let Some(s) = &r.source_video_id {
                by_source.entry((&r.dataset, s)).or_default().push(i);
            }
        }
        let mut pending = Vec::new();
        let groups = [
            (EdgeKind::SameYoutubeId, by_youtube.into_values().collect::<Vec<_>>()),
            (EdgeKind::SameMovie, by_movie.into_values().collect()),
            (EdgeKind::SameSourceVideo, by_source.into_values().collect()),
        ];
        for (kind, members) in groups {
            for group in members {
                for &other in &group[1..] {
                    pending.push(Edge { a: group[0], b: other, kind });
                }
            }
        }
        for e in pending {
            graph.push_edge(e);
        }
        Ok(graph)
    }

    fn push_edge(&mut self, e: Edge) {
        self.adjacency[e.a].push((e.b, e.kind));
        self.adjacency[e.b].push((e.a, e.kind));
        self.edges.push(e);
    }

    pub fn nodes(&self) -> &[VideoRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, EdgeKind)] {
        &self.adjacency[node]
    }

    pub fn lookup(&self, key: &VideoKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Links both endpoints of a duplicate verdict. Negative verdicts are inert.
    pub fn add_verdict(&mut self, v: &Verdict) -> Result<bool, RegistryError> {
        let a = self
            .lookup(&v.query)
            .ok_or_else(|| RegistryError::UnknownVideo(v.query.clone()))?;
        let b = self
            .lookup(&v.gallery)
            .ok_or_else(|| RegistryError::UnknownVideo(v.gallery.clone()))?;
        if a == b {
            return Err(RegistryError::SelfVerdict(v.query.clone()));
        }
        if v.label != Label::Duplicate {
            return Ok(false);
        }
        self.push_edge(Edge {
            a,
            b,
            kind: EdgeKind::AssessedDuplicate,
        });
        Ok(true)
    }

    /// Component label per node: the smallest node index in its component.
    pub fn components(&self) -> Vec<usize> {
        let mut dsu = DisjointSet::new(self.nodes.len());
        for e in &self.edges {
            dsu.union(e.a, e.b);
        }
        let mut min_of_root = vec![usize::MAX; self.nodes.len()];
        let roots: Vec<usize> = (0..self.nodes.len()).map(|i| dsu.find(i)).collect();
        for (i, &r) in roots.iter().enumerate() {
            min_of_root[r] = min_of_root[r].min(i);
        }
        roots.into_iter().map(|r| min_of_root[r]).collect()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Stage one: drop train records whose YouTube id occurs in any test record.
pub fn stage1_clean(train: &[VideoRecord], test: &[VideoRecord]) -> (Vec<VideoRecord>, Vec<VideoRecord>) {
    let test_ids: HashSet<&str> = test.iter().filter_map(|r| r.youtube_id.as_deref()).collect();
    train.iter().cloned().partition(|r| {
        r.youtube_id
            .as_deref()
            .is_none_or(|y| !test_ids.contains(y))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalStage {
    /// Shares a YouTube id with a test record.
    YoutubeId,
    /// Endpoint of a duplicate verdict.
    Assessed,
    /// Reached only through identity links.
    Propagated,
}

/// One line of the removal report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub dataset: String,
    pub video_id: String,
    pub stage: RemovalStage,
    pub component_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutcome {
    pub kept_train: Vec<VideoRecord>,
    pub removed_train: Vec<VideoRecord>,
    pub removals: Vec<Removal>,
}

impl CleanOutcome {
    pub fn removed_keys(&self) -> HashSet<VideoKey> {
        self.removed_train.iter().map(VideoRecord::key).collect()
    }
}

/// Applies duplicate verdicts to the graph and removes every train record
/// whose component contains a test record.
///
/// Any duplicate verdict for a pair wins over negatives for the same pair,
/// since negatives add no links.
pub fn propagate_and_clean(
    graph: &IdentityGraph,
    verdicts: &[Verdict],
) -> Result<CleanOutcome, RegistryError> {
    let mut graph = graph.clone();
    let mut assessed = HashSet::new();
    for v in verdicts {
        if graph.add_verdict(v)? {
            assessed.insert(v.query.clone());
            assessed.insert(v.gallery.clone());
        }
    }
    let components = graph.components();
    let mut has_test = vec![false; graph.nodes.len()];
    for (i, r) in graph.nodes.iter().enumerate() {
        if r.is_test() {
            has_test[components[i]] = true;
        }
    }
    let test_youtube: HashSet<&str> = graph
        .nodes
        .iter()
        .filter(|r| r.is_test())
        .filter_map(|r| r.youtube_id.as_deref())
        .collect();

    let mut out = CleanOutcome {
        kept_train: Vec::new(),
        removed_train: Vec::new(),
        removals: Vec::new(),
    };
    for (i, r) in graph.nodes.iter().enumerate() {
        if r.is_test() {
            continue;
        }
        let component_id = components[i];
        if !has_test[component_id] {
            out.kept_train.push(r.clone());
            continue;
        }
        let stage = if r.youtube_id.as_deref().is_some_and(|y| test_youtube.contains(y)) {
            RemovalStage::YoutubeId
        } else if assessed.contains(&r.key()) {
            RemovalStage::Assessed
        } else {
            RemovalStage::Propagated
        };
        out.removals.push(Removal {
            dataset: r.dataset.clone(),
            video_id: r.video_id.clone(),
            stage,
            component_id,
        });
        out.removed_train.push(r.clone());
    }
    Ok(out)
}

pub fn write_removals<W: Write>(mut out: W, removals: &[Removal]) -> std::io::Result<()> {
    for r in removals {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// A cleaned split for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset: String,
    pub train: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
    pub removals: Vec<Removal>,
}

/// Assembles the clean split of `dataset`: kept train records of that
/// dataset, its test records exactly as given, and the removal provenance.
pub fn emit_clean_split(dataset: &str, outcome: &CleanOutcome, test: &[VideoRecord]) -> DatasetManifest {
    DatasetManifest {
        dataset: dataset.to_owned(),
        train: outcome
            .kept_train
            .iter()
            .filter(|r| r.dataset == dataset)
            .cloned()
            .collect(),
        test: test.iter().filter(|r| r.dataset == dataset).cloned().collect(),
        removals: outcome
            .removals
            .iter()
            .filter(|r| r.dataset == dataset)
            .cloned()
            .collect(),
    }
}

/// Overlap counts for one (train dataset, test dataset) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OverlapCell {
    /// Test records with at least one linked train record of the row dataset.
    pub test: usize,
    /// Train records with at least one linked test record of the column dataset.
    pub train: usize,
}

/// Per-pair overlap counts keyed by `(train dataset, test dataset)`.
pub fn overlap_table(
    graph: &IdentityGraph,
    verdicts: &[Verdict],
) -> Result<BTreeMap<(String, String), OverlapCell>, RegistryError> {
    let mut graph = graph.clone();
    for v in verdicts {
        graph.add_verdict(v)?;
    }
    let components = graph.components();
    let mut train_by_comp: HashMap<usize, BTreeMap<&str, usize>> = HashMap::new();
    let mut test_by_comp: HashMap<usize, BTreeMap<&str, usize>> = HashMap::new();
    for (i, r) in graph.nodes.iter().enumerate() {
        let side = if r.is_test() { &mut test_by_comp } else { &mut train_by_comp };
        *side.entry(components[i]).or_default().entry(&r.dataset).or_default() += 1;
    }
    let mut table: BTreeMap<(String, String), OverlapCell> = BTreeMap::new();
    for (comp, tests) in &test_by_comp {
        let Some(trains) = train_by_comp.get(comp) else { continue };
        for (&train_ds, &n_train) in trains {
            for (&test_ds, &n_test) in tests {
                let cell = table.entry((train_ds.to_owned(), test_ds.to_owned())).or_default();
                cell.test += n_test;
                cell.train += n_train;
            }
        }
    }
    Ok(table)
}
