use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndvkit_apid::ServiceConfig;
use ndvkit_core::assess::{AssessmentSession, RankedPairs};
use ndvkit_core::curvekit::{self, SearchCurve};
use ndvkit_core::embed_store::{self, EmbeddingSequence, EmbeddingStore};
use ndvkit_core::evalkit::{self, MetricsReport, SimilarityMatrix};
use ndvkit_core::ndvs;
use ndvkit_core::registry::{self, IdentityGraph, ManifestLine, Verdict};
use ndvkit_core::sampler::{self, Sampler, SamplerConfig};
use ndvkit_core::simkit::{self, ScreensaverBlacklist};
use serde::{Deserialize, Serialize};

use crate::{
    CleanArgs, Command, CurveArgs, EstimateArgs, EvalArgs, IngestArgs, SampleArgs, ScoreArgs, ScreensaverArgs,
    ServeArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Score(a) => score(a),
        Command::Curve(a) => curve(a),
        Command::Estimate(a) => estimate(a),
        Command::Clean(a) => clean(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_store(path: &Path) -> Result<EmbeddingStore> {
    embed_store::read_store(path).with_context(|| format!("reading store {}", path.display()))
}

fn load_blacklist(args: &ScreensaverArgs) -> Result<Option<ScreensaverBlacklist>> {
    let Some(path) = &args.blacklist else { return Ok(None) };
    let store = load_store(path)?;
    let bl = ScreensaverBlacklist::from_store(&store, args.threshold)
        .with_context(|| format!("screensaver blacklist {}", path.display()))?;
    Ok(Some(bl))
}

#[derive(Deserialize)]
struct IngestLine {
    video_id: String,
    frames: Vec<Vec<f32>>,
    weights: Option<Vec<f32>>,
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut store: Option<EmbeddingStore> = None;
    for path in &a.inputs {
        for (i, line) in open(path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = || format!("{}:{}", path.display(), i + 1);
            let rec: IngestLine = serde_json::from_str(&line).with_context(at)?;
            let seq = EmbeddingSequence::from_rows(rec.video_id, &rec.frames, rec.weights).with_context(at)?;
            let store = store.get_or_insert_with(|| EmbeddingStore::new(seq.dim()));
            store.insert(seq).with_context(at)?;
        }
    }
    let Some(store) = store else { bail!("no sequences in input") };
    store.write(&a.out)?;
    eprintln!("wrote {} sequences of dim {} to {}", store.len(), store.dim(), a.out.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let q = load_store(&a.query)?;
    let g = load_store(&a.gallery)?;
    let bl = load_blacklist(&a.screensaver)?;
    let pairs = ndvs::rank_all_pairs(&q, &g, a.k, bl.as_ref(), a.workers)?;
    ndvs::write_candidates(output(a.out.as_deref())?, &pairs)?;
    eprintln!("scored {} pairs", pairs.len());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn curve(a: CurveArgs) -> Result<()> {
    let (pos, neg) = match (&a.positives, &a.negatives, &a.query, &a.gallery) {
        (Some(p), Some(n), _, _) => (read_scores(p)?, read_scores(n)?),
        (_, _, Some(q), Some(g)) => scores_from_stores(&a, q, g)?,
        _ => bail!("give either --positives/--negatives or --query/--gallery"),
    };
    let curve = curvekit::build_curve(&pos, &neg)?;
    curve.write_csv(output(a.out.as_deref())?)?;
    eprintln!("curve over {} positives and {} negatives", pos.len(), neg.len());
    Ok(())
}

/// Pos from each query against its augmented copy, Neg from every
/// query/gallery pair.
fn scores_from_stores(a: &CurveArgs, q_path: &Path, g_path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = load_store(q_path)?;
    let g = load_store(g_path)?;
    let bl = load_blacklist(&a.screensaver)?;
    let augmented = a.augmented.as_deref().map(load_store).transpose()?;
    let ids: Vec<&str> = q.iter().map(EmbeddingSequence::video_id).collect();
    let plan = curvekit::plan_augmentations(&ids, a.seed);
    if let Some(path) = &a.plan_out {
        let mut w = create(path)?;
        for spec in &plan {
            serde_json::to_writer(&mut w, spec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let clean = |s: &EmbeddingSequence| -> Result<EmbeddingSequence> {
        Ok(match &bl {
            Some(bl) => simkit::suppress_screensavers(s, bl)?,
            None => s.clone(),
        })
    };
    let mut pos = Vec::with_capacity(q.len());
    for (i, (seq, spec)) in q.iter().zip(&plan).enumerate() {
        let aug = match &augmented {
            Some(store) => store
                .get(seq.video_id())
                .with_context(|| format!("no augmented copy of {}", seq.video_id()))?
                .clone(),
            None => curvekit::apply_surrogate(seq, spec, a.seed.wrapping_add(i as u64 + 1)),
        };
        pos.push(ndvs::pair_score(&clean(seq)?, &clean(&aug)?, a.k)?.score);
    }
    let neg = ndvs::rank_all_pairs(&q, &g, a.k, bl.as_ref(), a.workers)?
        .into_iter()
        .map(|p| p.score)
        .collect();
    Ok((pos, neg))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let curve = SearchCurve::read_csv(open(&a.curve)?)?;
    let report = curvekit::estimate(&curve, a.seen, a.found)?;
    let mut out = io::stdout().lock();
    if a.json {
        serde_json::to_writer(&mut out, &report)?;
        writeln!(out)?;
    } else {
        writeln!(out, "{}", report.estimated_total)?;
    }
    Ok(())
}

fn read_manifests(paths: &[std::path::PathBuf]) -> Result<Vec<ManifestLine>> {
    let mut lines = Vec::new();
    for path in paths {
        lines.extend(registry::read_manifest_lines(open(path)?).with_context(|| format!("manifest {}", path.display()))?);
    }
    Ok(lines)
}

fn read_verdicts(paths: &[std::path::PathBuf]) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for path in paths {
        for (i, line) in open(path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
        }
    }
    Ok(out)
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        w.write_all(l.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<out>/<dataset>/{train,test}.jsonl` with the original manifest
/// lines, plus `<out>/removals.jsonl`.
fn clean(a: CleanArgs) -> Result<()> {
    let lines = read_manifests(&a.manifests)?;
    let verdicts = read_verdicts(&a.verdicts)?;
    let graph = IdentityGraph::build(lines.iter().map(|l| l.record.clone()).collect())?;
    let outcome = registry::propagate_and_clean(&graph, &verdicts)?;
    let removed = outcome.removed_keys();

    let mut datasets: Vec<&str> = Vec::new();
    for l in &lines {
        if !datasets.contains(&l.record.dataset.as_str()) {
            datasets.push(&l.record.dataset);
        }
    }
    std::fs::create_dir_all(&a.out)?;
    for ds in datasets {
        if ds.is_empty() || ds.contains(['/', '\\']) || ds == "." || ds == ".." {
            bail!("dataset name {ds:?} cannot be used as a directory");
        }
        let dir = a.out.join(ds);
        std::fs::create_dir_all(&dir)?;
        let of_ds = || lines.iter().filter(move |l| l.record.dataset == ds);
        write_lines(
            &dir.join("train.jsonl"),
            of_ds().filter(|l| !l.record.is_test() && !removed.contains(&l.record.key())).map(|l| l.raw.as_str()),
        )?;
        write_lines(&dir.join("test.jsonl"), of_ds().filter(|l| l.record.is_test()).map(|l| l.raw.as_str()))?;
        let n_removed = outcome.removals.iter().filter(|r| r.dataset == ds).count();
        eprintln!("{ds}: removed {n_removed} train videos");
    }
    let mut w = create(&a.out.join("removals.jsonl"))?;
    registry::write_removals(&mut w, &outcome.removals)?;
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let config: SamplerConfig =
        serde_json::from_reader(open(&a.config)?).with_context(|| format!("config {}", a.config.display()))?;
    let records: Vec<_> = read_manifests(&a.manifests)?.into_iter().map(|l| l.record).collect();
    let selected: Vec<String> = if a.datasets.is_empty() {
        config.entries.iter().map(|e| e.dataset.clone()).collect()
    } else {
        a.datasets.clone()
    };
    // length comes from the full config, draws only from the selection
    let count = match a.count {
        Some(c) => c,
        None => sampler::epoch_length(&config, &selected)?,
    };
    let mut subset = config.clone();
    subset.entries.retain(|e| selected.contains(&e.dataset));
    let sampler = Sampler::new(subset, &records)?;
    let samples = sampler.epoch_samples(a.epoch, a.worker, count);
    sampler::write_samples(output(a.out.as_deref())?, &samples)?;
    eprintln!("drew {count} samples for epoch {} worker {}", a.epoch, a.worker);
    Ok(())
}

#[derive(Deserialize)]
struct SimsFile {
    similarities: Vec<Vec<f64>>,
    ground_truth: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct EvalReport {
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
}

fn eval(a: EvalArgs) -> Result<()> {
    let file: SimsFile =
        serde_json::from_reader(open(&a.sims)?).with_context(|| format!("similarities {}", a.sims.display()))?;
    let gt = file.ground_truth.unwrap_or_else(|| (0..file.similarities.len()).collect());
    let sims = SimilarityMatrix::from_rows(&file.similarities, gt)?;
    let metrics = evalkit::retrieval_metrics(&sims, &a.ks)?;
    let loss = if a.loss { Some(evalkit::ranking_loss(&sims, a.margin)?) } else { None };
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, &EvalReport { metrics: MetricsReport::from(&metrics), loss })?;
    writeln!(out)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let pairs = RankedPairs::from_file(&a.pairs, &a.query_dataset, &a.gallery_dataset)
        .with_context(|| format!("candidates {}", a.pairs.display()))?;
    let session = AssessmentSession::open(pairs, &a.log).with_context(|| format!("verdict log {}", a.log.display()))?;
    let mut config = ServiceConfig::new(session);
    if let Some(path) = &a.curve {
        config.curve = Some(SearchCurve::read_csv(open(path)?).with_context(|| format!("curve {}", path.display()))?);
    }
    config.manifests = read_manifests(&a.manifests)?.into_iter().map(|l| l.record).collect();
    config.media_template = a.media_template;
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on {}", a.addr);
    runtime.block_on(ndvkit_apid::serve(config, &a.addr))?;
    Ok(())
}
