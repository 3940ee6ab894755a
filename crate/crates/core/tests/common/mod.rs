//! Brute-force oracles and fixtures shared by the integration suites.
//!
//! Nothing here calls into the scoring paths it checks, apart from the
//! per-cell kernel `simkit::weighted_cosine` that defines the cell values.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use ndvkit_core::curvekit::{self, AugmentationSpec};
use ndvkit_core::embed_store::{EmbeddingSequence, EmbeddingStore};
use ndvkit_core::ndvs;
use ndvkit_core::registry::{Label, Split, Verdict, VideoKey, VideoRecord};
use ndvkit_core::simkit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Exhaustive window search: every full window, ties to the smallest (a, b).
pub fn window_oracle(q: &EmbeddingSequence, g: &EmbeddingSequence, k: usize) -> (f64, usize, usize, usize) {
    let k = k.min(q.len()).min(g.len());
    let mut all = Vec::new();
    for a in 0..=q.len() - k {
        for b in 0..=g.len() - k {
            let mut sum = 0.0;
            for t in 0..k {
                sum += simkit::weighted_cosine(
                    q.frame(a + t),
                    f64::from(q.weight(a + t)),
                    g.frame(b + t),
                    f64::from(g.weight(b + t)),
                )
                .unwrap();
            }
            all.push((sum / k as f64, a, b));
        }
    }
    all.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let (s, a, b) = all[0];
    (s, a, b, k)
}

/// Negatives strictly above each positive, positives visited best first.
pub fn curve_oracle(pos: &[f64], neg: &[f64]) -> Vec<(usize, u64)> {
    let mut p = pos.to_vec();
    p.sort_by(|a, b| b.partial_cmp(a).unwrap());
    p.iter()
        .enumerate()
        .map(|(x, &pv)| (x, neg.iter().filter(|&&n| n > pv).count() as u64))
        .collect()
}

/// Loss as a literal double loop over all (i, j) with j != i.
pub fn loss_oracle(s: &[Vec<f64>], m: f64) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            total += f64::max(0.0, s[i][j] - s[i][i] + m);
            total += f64::max(0.0, s[j][i] - s[i][i] + m);
        }
    }
    total / b as f64
}

/// Ranks via a full stable sort of each row.
pub fn rank_oracle(rows: &[Vec<f64>], gt: &[usize]) -> Vec<usize> {
    rows.iter()
        .zip(gt)
        .map(|(row, &g)| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            order.iter().position(|&j| j == g).unwrap() + 1
        })
        .collect()
}

pub struct MetricsOracle {
    pub recall: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

pub fn metrics_oracle(ranks: &[usize], ks: &[usize]) -> MetricsOracle {
    let n = ranks.len() as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort();
    MetricsOracle {
        recall: ks
            .iter()
            .map(|&k| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
            .collect(),
        mean: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        median: sorted[(sorted.len() + 1) / 2 - 1] as f64,
    }
}

pub fn random_rows(rng: &mut impl Rng, t: usize, d: usize) -> Vec<Vec<f32>> {
    (0..t)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect()
}

pub fn random_seq(rng: &mut impl Rng, id: &str, t: usize, d: usize, weighted: bool) -> EmbeddingSequence {
    let rows = random_rows(rng, t, d);
    let weights = weighted.then(|| (0..t).map(|_| rng.random_range(0.0f32..=1.0)).collect());
    EmbeddingSequence::from_rows(id, &rows, weights).unwrap()
}

pub fn unit_seq(rng: &mut impl Rng, id: &str, t: usize, d: usize) -> EmbeddingSequence {
    let rows: Vec<Vec<f32>> = (0..t)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / n) as f32).collect()
        })
        .collect();
    EmbeddingSequence::from_rows(id, &rows, None).unwrap()
}

pub fn random_store(rng: &mut impl Rng, prefix: &str, n: usize, d: usize) -> EmbeddingStore {
    EmbeddingStore::from_sequences((0..n).map(|i| {
        let t = rng.random_range(1..=12);
        random_seq(rng, &format!("{prefix}{i:03}"), t, d, i % 3 == 0)
    }))
    .unwrap()
}

// ---------------------------------------------------------------------------
// Planted-overlap simulation
// ---------------------------------------------------------------------------

pub const PLANTED: usize = 20;

pub struct PlantedTrial {
    pub estimate: u64,
    pub found: u64,
    pub seen_negatives: u64,
    pub fraction: f64,
}

fn gaussian_row(rng: &mut impl Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn to_row(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn normalize(v: &[f64], norm: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n * norm).collect()
}

/// Dimensions and budget of the simulated assessment.
pub struct PlantedSetup {
    pub dim: usize,
    pub queries: usize,
    pub hard_negatives: usize,
    pub easy_negatives: usize,
    pub budget: u64,
}

pub const PLANTED_SETUP: PlantedSetup = PlantedSetup {
    dim: 32,
    queries: 60,
    hard_negatives: 400,
    easy_negatives: 60,
    budget: 200,
};

/// One seeded run: build Q, plant `PLANTED` augmented copies among hard and
/// easy negatives in G, build the curve from Q vs augmented Q and Q vs G,
/// walk the ranked pairs until `budget` negatives were seen and extrapolate.
pub fn planted_trial(seed: u64, setup: &PlantedSetup) -> PlantedTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = setup.dim;

    // Query videos: frames of varying norm so the fixed-sigma surrogate noise
    // yields a spread of positive scores.
    let mut raw_q: Vec<Vec<Vec<f64>>> = Vec::new();
    for _ in 0..setup.queries {
        let t = rng.random_range(6..=10);
        let norm = rng.random_range(0.5..1.5);
        raw_q.push((0..t).map(|_| normalize(&gaussian_row(&mut rng, d, 1.0), norm)).collect());
    }
    let q_seqs: Vec<EmbeddingSequence> = raw_q
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let rows: Vec<Vec<f32>> = rows.iter().map(|r| to_row(r)).collect();
            EmbeddingSequence::from_rows(format!("q{i:03}"), &rows, None).unwrap()
        })
        .collect();
    let ids: Vec<&str> = q_seqs.iter().map(|s| s.video_id()).collect();
    let specs: Vec<AugmentationSpec> = curvekit::plan_augmentations(&ids, seed ^ 0xA5A5);

    // Pos: every query against its own augmented copy.
    let pos: Vec<f64> = q_seqs
        .iter()
        .zip(&specs)
        .enumerate()
        .map(|(i, (q, spec))| {
            let aug = curvekit::apply_surrogate(q, spec, seed.wrapping_mul(31).wrapping_add(i as u64));
            ndvs::pair_score(q, &aug, 4).unwrap().score
        })
        .collect();

    // Gallery: planted duplicates (independent augmentation draws), hard
    // negatives correlated with a query, and unrelated videos.
    let mut gallery = Vec::new();
    let mut planted_pairs = BTreeSet::new();
    let mut order: Vec<usize> = (0..setup.queries).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let respecs = curvekit::plan_augmentations(&ids, seed ^ 0x5A5A);
    for (n, &qi) in order[..PLANTED].iter().enumerate() {
        let aug = curvekit::apply_surrogate(&q_seqs[qi], &respecs[qi], seed.wrapping_mul(97).wrapping_add(n as u64));
        let mut rows: Vec<Vec<f32>> = Vec::new();
        for _ in 0..rng.random_range(0..=3) {
            rows.push(to_row(&normalize(&gaussian_row(&mut rng, d, 1.0), 1.0)));
        }
        rows.extend(aug.frames().map(<[f32]>::to_vec));
        for _ in 0..rng.random_range(0..=3) {
            rows.push(to_row(&normalize(&gaussian_row(&mut rng, d, 1.0), 1.0)));
        }
        let id = format!("g{:03}", gallery.len());
        planted_pairs.insert((q_seqs[qi].video_id().to_owned(), id.clone()));
        gallery.push(EmbeddingSequence::from_rows(id, &rows, None).unwrap());
    }
    for _ in 0..setup.hard_negatives {
        let qi = rng.random_range(0..setup.queries);
        let rho: f64 = rng.random_range(0.85..0.99);
        let rows: Vec<Vec<f32>> = raw_q[qi]
            .iter()
            .map(|f| {
                let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                let unit = normalize(f, 1.0);
                let mut noise = gaussian_row(&mut rng, d, 1.0);
                let proj: f64 = noise.iter().zip(&unit).map(|(a, b)| a * b).sum();
                for (x, u) in noise.iter_mut().zip(&unit) {
                    *x -= proj * u;
                }
                let noise = normalize(&noise, 1.0);
                let mixed: Vec<f64> = unit
                    .iter()
                    .zip(&noise)
                    .map(|(u, z)| norm * (rho * u + (1.0 - rho * rho).sqrt() * z))
                    .collect();
                to_row(&mixed)
            })
            .collect();
        let id = format!("g{:03}", gallery.len());
        gallery.push(EmbeddingSequence::from_rows(id, &rows, None).unwrap());
    }
    for _ in 0..setup.easy_negatives {
        let t = rng.random_range(6..=12);
        let rows: Vec<Vec<f32>> = (0..t).map(|_| to_row(&normalize(&gaussian_row(&mut rng, d, 1.0), 1.0))).collect();
        let id = format!("g{:03}", gallery.len());
        gallery.push(EmbeddingSequence::from_rows(id, &rows, None).unwrap());
    }

    let q_store = EmbeddingStore::from_sequences(q_seqs).unwrap();
    let g_store = EmbeddingStore::from_sequences(gallery).unwrap();
    let ranked = ndvs::rank_all_pairs(&q_store, &g_store, 4, None, 0).unwrap();

    // Neg: all query/gallery scores, exactly as an assessor would have them.
    let neg: Vec<f64> = ranked.iter().map(|p| p.score).collect();
    let curve = curvekit::build_curve(&pos, &neg).unwrap();

    let mut found = 0u64;
    let mut negatives = 0u64;
    for p in &ranked {
        if planted_pairs.contains(&(p.query_id.clone(), p.gallery_id.clone())) {
            found += 1;
        } else if negatives == setup.budget {
            break;
        } else {
            negatives += 1;
        }
    }
    let fraction = curvekit::inverse(&curve, negatives).unwrap_or(f64::NAN);
    let estimate = if fraction.is_nan() {
        0
    } else {
        curvekit::estimate_total(found, fraction).unwrap()
    };
    PlantedTrial {
        estimate,
        found,
        seen_negatives: negatives,
        fraction,
    }
}

// ---------------------------------------------------------------------------
// Cleaning fixtures
// ---------------------------------------------------------------------------

/// A cleaning scenario with its hand-derived expected removals.
pub struct CleaningCase {
    pub name: String,
    pub records: Vec<VideoRecord>,
    pub verdicts: Vec<Verdict>,
    pub expected_removed: BTreeSet<VideoKey>,
}

fn rec(ds: &str, id: &str, split: Split) -> VideoRecord {
    VideoRecord::new(ds, id, split).with_captions([format!("caption of {id}")])
}

fn verdict(q: (&str, &str), g: (&str, &str), label: Label, who: &str) -> Verdict {
    Verdict {
        query: VideoKey::new(q.0, q.1),
        gallery: VideoKey::new(g.0, g.1),
        label,
        assessor: who.into(),
        timestamp: 0,
    }
}

fn keys(list: &[(&str, &str)]) -> BTreeSet<VideoKey> {
    list.iter().map(|(d, v)| VideoKey::new(*d, *v)).collect()
}

/// 25 cleaning scenarios. Expected sets are written out by hand from the
/// rules, not computed.
pub fn cleaning_cases() -> Vec<CleaningCase> {
    use Label::{Duplicate as D, Negative as N};
    use Split::{Test as Te, Train as Tr};
    let mut cases = Vec::new();
    let mut push = |name: &str, records: Vec<VideoRecord>, verdicts: Vec<Verdict>, removed: &[(&str, &str)]| {
        cases.push(CleaningCase {
            name: name.into(),
            records,
            verdicts,
            expected_removed: keys(removed),
        })
    };

    // 1. single YouTube collision
    push(
        "youtube collision",
        vec![rec("M", "t1", Te).with_youtube_id("Y1"), rec("M", "a", Tr).with_youtube_id("Y1"), rec("M", "b", Tr).with_youtube_id("Y2")],
        vec![],
        &[("M", "a")],
    );
    // 2. no identity keys, no verdicts
    push("vacuous", vec![rec("M", "t1", Te), rec("M", "a", Tr), rec("M", "b", Tr)], vec![], &[]);
    // 3. cross-dataset YouTube collision
    push(
        "cross dataset youtube",
        vec![rec("A", "t1", Te).with_youtube_id("Y"), rec("M", "a", Tr).with_youtube_id("Y"), rec("A", "b", Tr)],
        vec![],
        &[("M", "a")],
    );
    // 4. YouTube id shared only among train records
    push(
        "train-only youtube group",
        vec![rec("M", "t1", Te).with_youtube_id("Z"), rec("M", "a", Tr).with_youtube_id("Y"), rec("M", "b", Tr).with_youtube_id("Y")],
        vec![],
        &[],
    );
    // 5. duplicate verdict, single hop
    push(
        "single duplicate",
        vec![rec("M", "t1", Te), rec("M", "a", Tr), rec("M", "b", Tr)],
        vec![verdict(("M", "t1"), ("M", "a"), D, "x")],
        &[("M", "a")],
    );
    // 6. duplicate extended by YouTube id
    push(
        "duplicate plus youtube sibling",
        vec![rec("M", "t1", Te), rec("A", "v1", Tr).with_youtube_id("Y"), rec("A", "v2", Tr).with_youtube_id("Y"), rec("A", "v3", Tr)],
        vec![verdict(("M", "t1"), ("A", "v1"), D, "x")],
        &[("A", "v1"), ("A", "v2")],
    );
    // 7. LSMDC movie rule
    push(
        "movie rule",
        vec![
            rec("M", "t1", Te),
            rec("L", "s1", Tr).with_movie("Film"),
            rec("L", "s2", Tr).with_movie("Film"),
            rec("L", "s3", Tr).with_movie("Film"),
            rec("L", "s4", Tr).with_movie("Film"),
            rec("L", "o1", Tr).with_movie("Other"),
        ],
        vec![verdict(("M", "t1"), ("L", "s3"), D, "x")],
        &[("L", "s1"), ("L", "s2"), ("L", "s3"), ("L", "s4")],
    );
    // 8. source video within a dataset
    push(
        "source video siblings",
        vec![rec("M", "t1", Te), rec("M", "c1", Tr).with_source("src"), rec("M", "c2", Tr).with_source("src"), rec("A", "c3", Tr).with_source("src")],
        vec![verdict(("M", "t1"), ("M", "c1"), D, "x")],
        &[("M", "c1"), ("M", "c2")],
    );
    // 9. negatives only
    push(
        "negatives only",
        vec![rec("M", "t1", Te).with_youtube_id("Y"), rec("M", "a", Tr).with_youtube_id("Y"), rec("M", "b", Tr), rec("M", "c", Tr)],
        vec![verdict(("M", "t1"), ("M", "b"), N, "x"), verdict(("M", "t1"), ("M", "c"), N, "y")],
        &[("M", "a")],
    );
    // 10. duplicate sticky over negative
    push(
        "sticky duplicate",
        vec![rec("M", "t1", Te), rec("M", "a", Tr)],
        vec![verdict(("M", "t1"), ("M", "a"), N, "x"), verdict(("M", "t1"), ("M", "a"), D, "y"), verdict(("M", "t1"), ("M", "a"), N, "z")],
        &[("M", "a")],
    );
    // 11. chain: verdict -> youtube -> movie (mixed edge closure)
    push(
        "mixed chain",
        vec![
            rec("M", "t1", Te),
            rec("A", "a", Tr).with_youtube_id("Y"),
            rec("L", "b", Tr).with_youtube_id("Y").with_movie("F"),
            rec("L", "c", Tr).with_movie("F"),
            rec("L", "d", Tr).with_movie("G"),
        ],
        vec![verdict(("M", "t1"), ("A", "a"), D, "x")],
        &[("A", "a"), ("L", "b"), ("L", "c")],
    );
    // 12. duplicate of duplicate between train records
    push(
        "train-train chain",
        vec![rec("M", "t1", Te), rec("M", "a", Tr), rec("A", "b", Tr), rec("A", "c", Tr)],
        vec![verdict(("M", "t1"), ("M", "a"), D, "x"), verdict(("M", "a"), ("A", "b"), D, "x")],
        &[("M", "a"), ("A", "b")],
    );
    // 13. train-only duplicates are not removed
    push(
        "train-only duplicates",
        vec![rec("M", "t1", Te), rec("M", "a", Tr), rec("A", "b", Tr)],
        vec![verdict(("M", "a"), ("A", "b"), D, "x")],
        &[],
    );
    // 14. two test hits sharing one train video
    push(
        "two tests one train",
        vec![rec("M", "t1", Te), rec("M", "t2", Te), rec("M", "a", Tr), rec("M", "b", Tr)],
        vec![verdict(("M", "t1"), ("M", "a"), D, "x"), verdict(("M", "t2"), ("M", "a"), D, "x")],
        &[("M", "a")],
    );
    // 15. one test, two train duplicates
    push(
        "one test two trains",
        vec![rec("A", "t1", Te), rec("M", "a1", Tr), rec("M", "a2", Tr), rec("M", "a3", Tr)],
        vec![verdict(("A", "t1"), ("M", "a1"), D, "x"), verdict(("A", "t1"), ("M", "a2"), D, "x")],
        &[("M", "a1"), ("M", "a2")],
    );
    // 16. test records linked to each other only
    push(
        "test-test link",
        vec![rec("M", "t1", Te).with_youtube_id("Y"), rec("A", "t2", Te).with_youtube_id("Y"), rec("M", "a", Tr)],
        vec![],
        &[],
    );
    // 17. movie group containing a test segment
    push(
        "movie group with test",
        vec![rec("L", "t1", Te).with_movie("F"), rec("L", "s1", Tr).with_movie("F"), rec("L", "s2", Tr).with_movie("H")],
        vec![],
        &[("L", "s1")],
    );
    // 18. verdict reaching a test record through the gallery side
    push(
        "reverse orientation",
        vec![rec("M", "t1", Te), rec("K", "g", Tr).with_youtube_id("Y"), rec("K", "h", Tr).with_youtube_id("Y")],
        vec![verdict(("K", "g"), ("M", "t1"), D, "x")],
        &[("K", "g"), ("K", "h")],
    );
    // 19. multiple independent components
    push(
        "independent components",
        vec![
            rec("M", "t1", Te),
            rec("M", "t2", Te).with_youtube_id("Y2"),
            rec("M", "a", Tr),
            rec("M", "b", Tr).with_youtube_id("Y2"),
            rec("M", "c", Tr),
        ],
        vec![verdict(("M", "t1"), ("M", "a"), D, "x")],
        &[("M", "a"), ("M", "b")],
    );
    // 20. long movie chain reached through a source-video link
    push(
        "source then movie",
        vec![
            rec("L", "t1", Te).with_source("S"),
            rec("L", "a", Tr).with_source("S").with_movie("F"),
            rec("L", "b", Tr).with_movie("F"),
            rec("L", "c", Tr).with_movie("F"),
        ],
        vec![],
        &[("L", "a"), ("L", "b"), ("L", "c")],
    );
    // 21. negative between test and a youtube sibling does not block stage one
    push(
        "negative does not veto youtube",
        vec![rec("M", "t1", Te).with_youtube_id("Y"), rec("M", "a", Tr).with_youtube_id("Y")],
        vec![verdict(("M", "t1"), ("M", "a"), N, "x")],
        &[("M", "a")],
    );
    // 22. repeated identical duplicate verdicts
    push(
        "repeated duplicate",
        vec![rec("M", "t1", Te), rec("M", "a", Tr), rec("M", "b", Tr)],
        vec![verdict(("M", "t1"), ("M", "a"), D, "x"), verdict(("M", "t1"), ("M", "a"), D, "x")],
        &[("M", "a")],
    );
    // 23. everything removed
    push(
        "all train removed",
        vec![rec("M", "t1", Te).with_youtube_id("Y"), rec("M", "a", Tr).with_youtube_id("Y"), rec("M", "b", Tr).with_youtube_id("Y")],
        vec![],
        &[("M", "a"), ("M", "b")],
    );
    // 24. same source id in two datasets stays separate
    push(
        "source scoped by dataset",
        vec![rec("M", "t1", Te).with_source("S"), rec("A", "a", Tr).with_source("S"), rec("M", "b", Tr).with_source("S")],
        vec![],
        &[("M", "b")],
    );
    // 25. no test records at all
    push(
        "no test part",
        vec![rec("M", "a", Tr).with_youtube_id("Y"), rec("M", "b", Tr).with_youtube_id("Y")],
        vec![verdict(("M", "a"), ("M", "b"), D, "x")],
        &[],
    );
    cases
}

/// Groups records by dataset preserving order.
pub fn by_dataset(records: &[VideoRecord]) -> HashMap<String, Vec<VideoRecord>> {
    let mut out: HashMap<String, Vec<VideoRecord>> = HashMap::new();
    for r in records {
        out.entry(r.dataset.clone()).or_default().push(r.clone());
    }
    out
}
