//! Calibration sets and fairness test sets built from labeled corpora.
//!
//! Political collections hold 30 tweets, review collections hold 8 reviews of a
//! single product. A calibration set is always 128 collections; a fairness test
//! set is 100.
//!
//! Sampling is uniform without replacement inside each label stratum, so a
//! document never appears twice in one collection. Documents may be reused
//! across collections. All randomness comes from a ChaCha8 stream seeded by the
//! caller, so every builder is a pure function of `(corpus, seed)`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iofmt::{read_jsonl, write_jsonl, Document, FormatError};

pub const CALIBRATION_SET_SIZE: usize = 128;
pub const TEST_SET_SIZE: usize = 100;
pub const POLITICAL_COLLECTION_SIZE: usize = 30;
pub const REVIEW_COLLECTION_SIZE: usize = 8;
pub const REVIEW_MIN_WORDS: usize = 30;
pub const REVIEW_MAX_WORDS: usize = 120;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("insufficient corpus: {what} needs {needed}, found {available}")]
    InsufficientCorpus {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("insufficient pool: {kind} needs {needed} matching collections, {matched} matched")]
    InsufficientPool {
        kind: SetKind,
        needed: usize,
        matched: usize,
    },
    #[error("review `{id}` has {words} words, outside [{REVIEW_MIN_WORDS}, {REVIEW_MAX_WORDS}]")]
    ReviewLength { id: String, words: usize },
    #[error("label `{0}` is not in the corpus value set")]
    UnknownLabel(String),
    #[error("balanced sampling needs exactly two values, corpus has {0:?}")]
    NotBinary(Vec<String>),
    #[error("invalid collection `{id}`: {reason}")]
    InvalidCollection { id: String, reason: String },
    #[error("{0} is not an output-conditioned set kind")]
    NotOutputKind(SetKind),
    #[error("invalid spd tolerance {0}")]
    BadTolerance(f64),
    #[error("pool entry `{id}`: {reason}")]
    BadPoolEntry { id: String, reason: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Political,
    Review,
}

impl Domain {
    pub fn collection_size(self) -> usize {
        match self {
            Domain::Political => POLITICAL_COLLECTION_SIZE,
            Domain::Review => REVIEW_COLLECTION_SIZE,
        }
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "political" => Ok(Domain::Political),
            "review" => Ok(Domain::Review),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    SingleSided,
    FairInput,
    MixedInput,
    BiasedOutput,
    FairOutput,
    MixedOutput,
}

impl SetKind {
    pub const ALL: [SetKind; 6] = [
        SetKind::SingleSided,
        SetKind::FairInput,
        SetKind::MixedInput,
        SetKind::BiasedOutput,
        SetKind::FairOutput,
        SetKind::MixedOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SetKind::SingleSided => "single_sided",
            SetKind::FairInput => "fair_input",
            SetKind::MixedInput => "mixed_input",
            SetKind::BiasedOutput => "biased_output",
            SetKind::FairOutput => "fair_output",
            SetKind::MixedOutput => "mixed_output",
        }
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        SetKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| format!("unknown set kind `{s}`"))
    }
}

/// A labeled corpus with its declared value set.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    values: Vec<String>,
}

impl Corpus {
    /// Value set inferred as the sorted distinct labels.
    pub fn new(docs: Vec<Document>) -> Result<Self, CalibError> {
        let values: BTreeSet<String> = docs.iter().map(|d| d.label.clone()).collect();
        Self::with_values(docs, values.into_iter().collect())
    }

    /// Rejects documents whose label is not in `values`, and duplicate ids.
    pub fn with_values(docs: Vec<Document>, values: Vec<String>) -> Result<Self, CalibError> {
        let mut seen = HashSet::new();
        for d in &docs {
            if !values.contains(&d.label) {
                return Err(CalibError::UnknownLabel(d.label.clone()));
            }
            if d.id.is_empty() || !seen.insert(d.id.as_str()) {
                return Err(CalibError::InvalidCollection {
                    id: d.id.clone(),
                    reason: "empty or duplicate document id in corpus".into(),
                });
            }
        }
        let mut values = values;
        values.sort();
        values.dedup();
        Ok(Self { docs, values })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.id == id)
    }

    fn binary_values(&self) -> Result<(&str, &str), CalibError> {
        match &self.values[..] {
            [a, b] => Ok((a, b)),
            _ => Err(CalibError::NotBinary(self.values.clone())),
        }
    }

    fn check_value(&self, v: &str) -> Result<(), CalibError> {
        if self.values.iter().any(|x| x == v) {
            Ok(())
        } else {
            Err(CalibError::UnknownLabel(v.to_string()))
        }
    }
}

/// Rejects any review outside the word-count bounds.
pub fn check_review_lengths(docs: &[Document]) -> Result<(), CalibError> {
    for d in docs {
        let words = d.word_count();
        if !(REVIEW_MIN_WORDS..=REVIEW_MAX_WORDS).contains(&words) {
            return Err(CalibError::ReviewLength {
                id: d.id.clone(),
                words,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputCollection {
    #[serde(rename = "collection_id")]
    id: String,
    domain: Domain,
    docs: Vec<Document>,
}

impl InputCollection {
    pub fn new(id: impl Into<String>, domain: Domain, docs: Vec<Document>) -> Result<Self, CalibError> {
        let c = Self {
            id: id.into(),
            domain,
            docs,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), CalibError> {
        let bad = |reason: String| CalibError::InvalidCollection {
            id: self.id.clone(),
            reason,
        };
        let size = self.domain.collection_size();
        if self.docs.len() != size {
            return Err(bad(format!(
                "{} documents, {:?} collections hold {size}",
                self.docs.len(),
                self.domain
            )));
        }
        let mut seen = HashSet::new();
        for d in &self.docs {
            if !seen.insert(d.id.as_str()) {
                return Err(bad(format!("document `{}` appears twice", d.id)));
            }
        }
        if self.domain == Domain::Review {
            let group = self.docs[0].group.as_deref();
            if group.is_none() || self.docs.iter().any(|d| d.group.as_deref() != group) {
                return Err(bad("review collections must share one product group".into()));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.label.as_str())
    }

    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for l in self.labels() {
            *counts.entry(l.to_string()).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub kind: SetKind,
    pub side: Option<String>,
    pub collections: Vec<InputCollection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdIndexedCollection {
    pub collection: InputCollection,
    pub vanilla_spd: f64,
}

impl SpdIndexedCollection {
    pub fn new(collection: InputCollection, vanilla_spd: f64) -> Result<Self, CalibError> {
        if !vanilla_spd.is_finite() || !(-1.0..=1.0).contains(&vanilla_spd) {
            return Err(CalibError::BadPoolEntry {
                id: collection.id.clone(),
                reason: format!("vanilla_spd {vanilla_spd} outside [-1,1]"),
            });
        }
        Ok(Self {
            collection,
            vanilla_spd,
        })
    }
}

/// One line of a pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub collection_id: String,
    pub doc_ids: Vec<String>,
    pub vanilla_spd: f64,
}

/// Resolves pool entries against a corpus.
pub fn resolve_pool(
    entries: &[PoolEntry],
    corpus: &Corpus,
    domain: Domain,
) -> Result<Vec<SpdIndexedCollection>, CalibError> {
    let by_id: HashMap<&str, &Document> = corpus.docs.iter().map(|d| (d.id.as_str(), d)).collect();
    entries
        .iter()
        .map(|e| {
            let docs = e
                .doc_ids
                .iter()
                .map(|id| {
                    by_id.get(id.as_str()).map(|d| (*d).clone()).ok_or_else(|| {
                        CalibError::BadPoolEntry {
                            id: e.collection_id.clone(),
                            reason: format!("unknown document `{id}`"),
                        }
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let c = InputCollection::new(e.collection_id.clone(), domain, docs)?;
            SpdIndexedCollection::new(c, e.vanilla_spd)
        })
        .collect()
}

pub fn read_pool(path: impl AsRef<Path>) -> Result<Vec<PoolEntry>, CalibError> {
    Ok(read_jsonl(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CollectionRecord {
    collection_id: String,
    domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<SetKind>,
    docs: Vec<Document>,
}

/// One collection per line: `{collection_id, domain, [kind], docs}`.
pub fn write_collections(
    path: impl AsRef<Path>,
    collections: &[InputCollection],
    kind: Option<SetKind>,
) -> Result<(), CalibError> {
    let records: Vec<CollectionRecord> = collections
        .iter()
        .map(|c| CollectionRecord {
            collection_id: c.id.clone(),
            domain: c.domain,
            kind,
            docs: c.docs.clone(),
        })
        .collect();
    Ok(write_jsonl(path, &records)?)
}

pub fn read_collections(path: impl AsRef<Path>) -> Result<Vec<InputCollection>, CalibError> {
    let records: Vec<CollectionRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .map(|r| InputCollection::new(r.collection_id, r.domain, r.docs))
        .collect()
}

/// Label strata, grouped by product for reviews. Keys are sorted so iteration is
/// deterministic.
struct Strata<'a> {
    domain: Domain,
    // group (or "") -> label -> documents in corpus order
    cells: BTreeMap<&'a str, BTreeMap<&'a str, Vec<&'a Document>>>,
}

impl<'a> Strata<'a> {
    fn new(corpus: &'a Corpus, domain: Domain) -> Result<Self, CalibError> {
        let mut cells: BTreeMap<&str, BTreeMap<&str, Vec<&Document>>> = BTreeMap::new();
        for d in &corpus.docs {
            let group = match domain {
                Domain::Political => "",
                Domain::Review => d.group.as_deref().ok_or_else(|| CalibError::InvalidCollection {
                    id: d.id.clone(),
                    reason: "review document without a product group".into(),
                })?,
            };
            cells.entry(group).or_default().entry(d.label.as_str()).or_default().push(d);
        }
        Ok(Self { domain, cells })
    }

    fn cell(&self, group: &str, label: &str) -> &[&'a Document] {
        self.cells.get(group).and_then(|m| m.get(label)).map_or(&[], Vec::as_slice)
    }

    /// Groups holding at least `need` documents of every label in `labels`.
    fn eligible_groups(&self, labels: &[&str], need: usize) -> Vec<&'a str> {
        self.cells
            .keys()
            .copied()
            .filter(|g| labels.iter().all(|l| self.cell(g, l).len() >= need))
            .collect()
    }

    /// Draws one collection with `per_label[i].1` documents of label `per_label[i].0`.
    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        id: String,
        per_label: &[(&str, usize)],
        what: &str,
    ) -> Result<InputCollection, CalibError> {
        let labels: Vec<&str> = per_label.iter().map(|(l, _)| *l).collect();
        let group = match self.domain {
            Domain::Political => "",
            Domain::Review => {
                let need = per_label.iter().map(|(_, n)| *n).max().unwrap_or(0);
                let groups = self.eligible_groups(&labels, need);
                if groups.is_empty() {
                    return Err(CalibError::InsufficientCorpus {
                        what: format!("{what}: a product with {need} reviews per label {labels:?}"),
                        needed: 1,
                        available: 0,
                    });
                }
                groups[rng.random_range(0..groups.len())]
            }
        };
        let mut docs = Vec::with_capacity(self.domain.collection_size());
        for &(label, n) in per_label {
            let cell = self.cell(group, label);
            if cell.len() < n {
                return Err(CalibError::InsufficientCorpus {
                    what: format!("{what}: documents labeled `{label}`"),
                    needed: n,
                    available: cell.len(),
                });
            }
            for i in index::sample(rng, cell.len(), n) {
                docs.push(cell[i].clone());
            }
        }
        InputCollection::new(id, self.domain, docs)
    }
}

fn set_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn single_sided_collections(
    strata: &Strata<'_>,
    rng: &mut ChaCha8Rng,
    side: &str,
    count: usize,
    prefix: &str,
) -> Result<Vec<InputCollection>, CalibError> {
    let size = strata.domain.collection_size();
    (0..count)
        .map(|i| strata.draw(rng, format!("{prefix}-{i:03}"), &[(side, size)], "single-sided"))
        .collect()
}

fn balanced_collections(
    strata: &Strata<'_>,
    rng: &mut ChaCha8Rng,
    values: (&str, &str),
    count: usize,
    prefix: &str,
) -> Result<Vec<InputCollection>, CalibError> {
    let half = strata.domain.collection_size() / 2;
    (0..count)
        .map(|i| {
            strata.draw(
                rng,
                format!("{prefix}-{i:03}"),
                &[(values.0, half), (values.1, half)],
                "balanced",
            )
        })
        .collect()
}

/// Every collection drawn from documents labeled `side` only.
pub fn build_single_sided(
    corpus: &Corpus,
    domain: Domain,
    side: &str,
    seed: u64,
) -> Result<CalibrationSet, CalibError> {
    corpus.check_value(side)?;
    let strata = Strata::new(corpus, domain)?;
    let mut rng = set_rng(seed);
    let collections =
        single_sided_collections(&strata, &mut rng, side, CALIBRATION_SET_SIZE, "single")?;
    Ok(CalibrationSet {
        kind: SetKind::SingleSided,
        side: Some(side.to_string()),
        collections,
    })
}

/// Every collection split evenly between the corpus's two values.
pub fn build_fair_input(corpus: &Corpus, domain: Domain, seed: u64) -> Result<CalibrationSet, CalibError> {
    let values = corpus.binary_values()?;
    let strata = Strata::new(corpus, domain)?;
    let mut rng = set_rng(seed);
    let collections = balanced_collections(&strata, &mut rng, values, CALIBRATION_SET_SIZE, "fair")?;
    Ok(CalibrationSet {
        kind: SetKind::FairInput,
        side: None,
        collections,
    })
}

/// 64 single-sided collections, alternating between the two values (32 each),
/// followed by 64 balanced ones.
pub fn build_mixed_input(corpus: &Corpus, domain: Domain, seed: u64) -> Result<CalibrationSet, CalibError> {
    let (a, b) = corpus.binary_values()?;
    let strata = Strata::new(corpus, domain)?;
    let mut rng = set_rng(seed);
    let half = CALIBRATION_SET_SIZE / 2;
    let size = domain.collection_size();
    let mut collections = Vec::with_capacity(CALIBRATION_SET_SIZE);
    for i in 0..half {
        let side = if i % 2 == 0 { a } else { b };
        collections.push(strata.draw(
            &mut rng,
            format!("mixed-single-{i:03}"),
            &[(side, size)],
            "single-sided",
        )?);
    }
    collections.extend(balanced_collections(&strata, &mut rng, (a, b), half, "mixed-fair")?);
    Ok(CalibrationSet {
        kind: SetKind::MixedInput,
        side: None,
        collections,
    })
}

fn is_biased(spd: f64, tau: f64) -> bool {
    spd.abs() >= 1.0 - tau
}

fn is_fair(spd: f64, tau: f64) -> bool {
    spd.abs() <= tau
}

fn pick(
    rng: &mut ChaCha8Rng,
    candidates: &[usize],
    n: usize,
    kind: SetKind,
) -> Result<Vec<usize>, CalibError> {
    if candidates.len() < n {
        return Err(CalibError::InsufficientPool {
            kind,
            needed: n,
            matched: candidates.len(),
        });
    }
    let mut chosen: Vec<usize> = index::sample(rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Selects pool collections by the SPD the unpruned model produced on them.
///
/// * `biased_output`: `|spd| ≥ 1 − τ`
/// * `fair_output`: `|spd| ≤ τ`
/// * `mixed_output`: 64 of each, disjoint
pub fn build_output_conditioned(
    pool: &[SpdIndexedCollection],
    kind: SetKind,
    tau_spd: f64,
    seed: u64,
) -> Result<CalibrationSet, CalibError> {
    if !tau_spd.is_finite() || !(0.0..=1.0).contains(&tau_spd) {
        return Err(CalibError::BadTolerance(tau_spd));
    }
    let mut rng = set_rng(seed);
    let matching = |pred: &dyn Fn(f64) -> bool, exclude: &[usize]| -> Vec<usize> {
        pool.iter()
            .enumerate()
            .filter(|(i, e)| pred(e.vanilla_spd) && !exclude.contains(i))
            .map(|(i, _)| i)
            .collect()
    };
    let chosen = match kind {
        SetKind::BiasedOutput => pick(
            &mut rng,
            &matching(&|s| is_biased(s, tau_spd), &[]),
            CALIBRATION_SET_SIZE,
            kind,
        )?,
        SetKind::FairOutput => pick(
            &mut rng,
            &matching(&|s| is_fair(s, tau_spd), &[]),
            CALIBRATION_SET_SIZE,
            kind,
        )?,
        SetKind::MixedOutput => {
            let half = CALIBRATION_SET_SIZE / 2;
            let mut biased = pick(&mut rng, &matching(&|s| is_biased(s, tau_spd), &[]), half, kind)?;
            let fair = pick(&mut rng, &matching(&|s| is_fair(s, tau_spd), &biased), half, kind)?;
            biased.extend(fair);
            biased
        }
        other => return Err(CalibError::NotOutputKind(other)),
    };
    Ok(CalibrationSet {
        kind,
        side: None,
        collections: chosen.into_iter().map(|i| pool[i].collection.clone()).collect(),
    })
}

/// 100 balanced collections for fairness evaluation. Review corpora must respect
/// the 30–120 word bounds.
pub fn build_fairness_testset(
    corpus: &Corpus,
    domain: Domain,
    seed: u64,
) -> Result<Vec<InputCollection>, CalibError> {
    if domain == Domain::Review {
        check_review_lengths(&corpus.docs)?;
    }
    let values = corpus.binary_values()?;
    let strata = Strata::new(corpus, domain)?;
    let mut rng = set_rng(seed);
    balanced_collections(&strata, &mut rng, values, TEST_SET_SIZE, "test")
}
