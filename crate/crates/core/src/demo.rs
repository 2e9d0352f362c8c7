//! Deterministic demo assets: a 32→16→4 network, a calibration batch,
//! synthetic tweet and review corpora, and small fixtures for the fairness,
//! ROUGE, Elo and kappa commands.
//!
//! `write_demo` is byte-reproducible; the checked-in `demo/` directory is its output.

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calibkit::{build_fairness_testset, write_collections, CalibError, Corpus, Domain, PoolEntry};
use crate::iofmt::{write_jsonl, write_text, Document, FormatError};
use crate::pipeline::SweepConfig;
use crate::rater::{ComparisonRecord, Vote};
use crate::refnet::{CalibrationBatch, NetError, Network};
use crate::scoring::Method;
use crate::textmetrics::split_sentences;

pub const NET_WIDTHS: [usize; 3] = [32, 16, 4];
pub const NET_SEED: u64 = 7;
pub const BATCH_SEED: u64 = 1;
pub const BATCH_SAMPLES: usize = 128;
pub const BATCH_NOISE: f64 = 0.1;
pub const TWEETS_PER_SIDE: usize = 2500;
pub const REVIEW_PRODUCTS: usize = 40;
pub const REVIEWS_PER_SIDE: usize = 12;

const LEFT_WORDS: &[&str] = &[
    "healthcare", "union", "climate", "equality", "workers", "wages", "public", "welfare",
    "renewable", "diversity", "housing", "rights",
];
const RIGHT_WORDS: &[&str] = &[
    "taxes", "border", "freedom", "business", "tradition", "security", "deregulation", "enterprise",
    "defense", "liberty", "market", "faith",
];
const NEUTRAL_WORDS: &[&str] = &[
    "the", "debate", "today", "vote", "policy", "people", "country", "we", "need", "more", "about",
    "this", "plan", "senate", "bill",
];
const POS_WORDS: &[&str] = &[
    "great", "excellent", "love", "sturdy", "reliable", "comfortable", "perfect", "happy",
    "recommend", "quality", "bright", "fast",
];
const NEG_WORDS: &[&str] = &[
    "broke", "terrible", "disappointed", "flimsy", "refund", "slow", "cheap", "returned",
    "useless", "noisy", "cracked", "waste",
];
const ITEM_WORDS: &[&str] = &[
    "the", "product", "it", "battery", "screen", "price", "after", "a", "week", "my", "order",
    "works", "case", "size", "delivery",
];

fn phrase(rng: &mut ChaCha8Rng, topical: &[&str], filler: &[&str], words: usize) -> Vec<String> {
    (0..words)
        .map(|i| {
            let pool = if i % 3 == 1 { topical } else { filler };
            pool.choose(rng).unwrap().to_string()
        })
        .collect()
}

fn capitalize(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

/// Tweets labeled `left`/`right`, `per_side` of each.
pub fn political_corpus(per_side: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(2 * per_side);
    for (label, topical) in [("left", LEFT_WORDS), ("right", RIGHT_WORDS)] {
        for i in 0..per_side {
            let n = rng.random_range(8..=15);
            let text = format!("{}.", capitalize(&phrase(&mut rng, topical, NEUTRAL_WORDS, n)));
            docs.push(Document::new(format!("{label}-{i:05}"), text, label));
        }
    }
    docs
}

/// Multi-sentence reviews between 30 and 120 words, grouped by product.
pub fn review_corpus(products: usize, per_side: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for p in 0..products {
        let group = format!("product-{p:03}");
        for (label, topical) in [("pos", POS_WORDS), ("neg", NEG_WORDS)] {
            for i in 0..per_side {
                let mut sentences = Vec::new();
                let mut words = 0;
                let target = rng.random_range(30..=90);
                while words < target {
                    let n = rng.random_range(6..=12);
                    words += n;
                    sentences.push(format!("{}.", capitalize(&phrase(&mut rng, topical, ITEM_WORDS, n))));
                }
                docs.push(
                    Document::new(format!("{group}-{label}-{i:02}"), sentences.join(" "), label)
                        .with_group(group.clone()),
                );
            }
        }
    }
    docs
}

#[derive(Serialize)]
struct SummaryLine {
    id: String,
    collection_id: String,
    method: String,
    sparsity: f64,
    text: String,
}

#[derive(Serialize)]
struct RougePair {
    id: String,
    method: String,
    candidate: String,
    reference: String,
}

#[derive(Serialize)]
struct VoteLine {
    labels: Vec<&'static str>,
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Writes every demo asset under `dir`.
pub fn write_demo(dir: impl AsRef<Path>) -> Result<(), DemoError> {
    let dir = dir.as_ref();
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| FormatError::io(p, e));
    mkdir(dir)?;

    let net = Network::seeded(&NET_WIDTHS, NET_SEED);
    net.save(dir.join("net"))?;
    CalibrationBatch::synthesize(&net, BATCH_SAMPLES, BATCH_NOISE, BATCH_SEED).save(dir.join("batch"))?;

    let sweep = SweepConfig {
        methods: Method::ALL.to_vec(),
        ratios: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        granularity: Default::default(),
        seed: 1,
        alpha: crate::scoring::DEFAULT_ALPHA,
        norm_p: 2,
        net: "net".into(),
        batch: None,
        calib_samples: BATCH_SAMPLES,
        eval_samples: 256,
        noise: BATCH_NOISE,
        out: None,
    };
    let mut text = serde_json::to_string_pretty(&sweep).expect("config serializes");
    text.push('\n');
    write_text(dir.join("sweep.json"), &text)?;

    let corpus_dir = dir.join("corpus");
    mkdir(&corpus_dir)?;
    let tweets = political_corpus(TWEETS_PER_SIDE, 11);
    write_jsonl(corpus_dir.join("political.jsonl"), &tweets)?;
    let reviews = review_corpus(REVIEW_PRODUCTS, REVIEWS_PER_SIDE, 12);
    write_jsonl(corpus_dir.join("reviews.jsonl"), &reviews)?;

    // vanilla-SPD pool over random political collections
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pool: Vec<PoolEntry> = (0..600)
        .map(|i| {
            let ids = rand::seq::index::sample(&mut rng, tweets.len(), 30);
            let spd = [-1.0, -0.5, 0.0, 0.0, 0.5, 1.0][i % 6];
            PoolEntry {
                collection_id: format!("pool-{i:04}"),
                doc_ids: ids.into_iter().map(|k| tweets[k].id.clone()).collect(),
                vanilla_spd: spd,
            }
        })
        .collect();
    write_jsonl(corpus_dir.join("political_pool.jsonl"), &pool)?;

    // fairness fixture: a 20-collection slice of the review test set with two
    // synthetic summarizers, one faithful and one positively skewed
    let fair_dir = dir.join("fairness");
    mkdir(&fair_dir)?;
    let testset = build_fairness_testset(&Corpus::new(reviews)?, Domain::Review, 5)?;
    let sources = &testset[..20];
    write_collections(fair_dir.join("sources.jsonl"), sources, None)?;
    let mut summaries = Vec::new();
    for c in sources {
        let first = |label: &str, n: usize| -> Vec<String> {
            c.docs()
                .iter()
                .filter(|d| d.label == label)
                .take(n)
                .map(|d| split_sentences(&d.text).remove(0))
                .collect()
        };
        let balanced = [first("pos", 2), first("neg", 2)].concat().join(" ");
        let skewed = [first("pos", 3), first("neg", 1)].concat().join(" ");
        for (method, text) in [("vanilla", balanced), ("pruned", skewed)] {
            summaries.push(SummaryLine {
                id: format!("{}-{method}", c.id()),
                collection_id: c.id().to_string(),
                method: method.into(),
                sparsity: if method == "vanilla" { 0.0 } else { 0.3 },
                text,
            });
        }
    }
    write_jsonl(fair_dir.join("summaries.jsonl"), &summaries)?;

    let pairs = vec![
        RougePair {
            id: "p0".into(),
            method: "vanilla".into(),
            candidate: "The battery lasts a week and the screen is bright.".into(),
            reference: "Battery life is about a week; the screen is bright and sharp.".into(),
        },
        RougePair {
            id: "p1".into(),
            method: "vanilla".into(),
            candidate: "Reviewers love the case but the delivery was slow.".into(),
            reference: "Customers like the sturdy case, though delivery was slow.".into(),
        },
        RougePair {
            id: "p2".into(),
            method: "pruned".into(),
            candidate: "The product is great.".into(),
            reference: "Battery life is about a week; the screen is bright and sharp.".into(),
        },
    ];
    write_jsonl(dir.join("rouge_pairs.jsonl"), &pairs)?;

    // pairwise judgments drawn from a latent strength per method
    let strengths: [(&str, f64); 5] = [
        ("hgla", 1.0),
        ("wanda", 0.6),
        ("gblm_pruner", 0.3),
        ("gblm_gradient", 0.0),
        ("magnitude", -0.4),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let comparisons: Vec<ComparisonRecord> = (0..100)
        .map(|_| {
            let i = rng.random_range(0..strengths.len());
            let mut j = rng.random_range(0..strengths.len() - 1);
            if j >= i {
                j += 1;
            }
            let p_a = 1.0 / (1.0 + (strengths[j].1 - strengths[i].1).exp());
            let votes = (0..3)
                .map(|_| if rng.random_bool(p_a) { Vote::A } else { Vote::B })
                .collect();
            ComparisonRecord::new(strengths[i].0, strengths[j].0, votes).expect("valid record")
        })
        .collect();
    write_jsonl(dir.join("comparisons.jsonl"), &comparisons)?;

    let votes: Vec<VoteLine> = comparisons
        .iter()
        .take(20)
        .map(|c| VoteLine {
            labels: c
                .votes
                .iter()
                .map(|v| match v {
                    Vote::A => "a",
                    Vote::B => "b",
                })
                .collect(),
        })
        .collect();
    write_jsonl(dir.join("votes.jsonl"), &votes)?;
    Ok(())
}
