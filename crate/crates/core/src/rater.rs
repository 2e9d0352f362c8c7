//! Elo aggregation of pairwise human judgments and Fleiss' kappa.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iofmt::{read_jsonl, FormatError};

pub const DEFAULT_INITIAL_RATING: f64 = 1400.0;
pub const DEFAULT_K_FACTOR: f64 = 16.0;
pub const VOTES_PER_COMPARISON: usize = 3;

#[derive(Debug, Error)]
pub enum RaterError {
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("comparison needs {VOTES_PER_COMPARISON} votes, got {0}")]
    WrongVoteCount(usize),
    #[error("a method cannot be compared with itself (`{0}`)")]
    SelfComparison(String),
    #[error("item {item}: counts sum to {sum}, expected {raters}")]
    InconsistentRow { item: usize, sum: u32, raters: u32 },
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(u32),
    #[error("no items")]
    NoItems,
    #[error("item {item}: {reason}")]
    BadItem { item: usize, reason: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub method_a: String,
    pub method_b: String,
    pub votes: Vec<Vote>,
}

impl ComparisonRecord {
    pub fn new(
        method_a: impl Into<String>,
        method_b: impl Into<String>,
        votes: Vec<Vote>,
    ) -> Result<Self, RaterError> {
        let rec = Self {
            method_a: method_a.into(),
            method_b: method_b.into(),
            votes,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), RaterError> {
        if self.votes.len() != VOTES_PER_COMPARISON {
            return Err(RaterError::WrongVoteCount(self.votes.len()));
        }
        if self.method_a == self.method_b {
            return Err(RaterError::SelfComparison(self.method_a.clone()));
        }
        Ok(())
    }

    /// Majority winner; an odd vote count rules out draws.
    pub fn winner(&self) -> Vote {
        let a = self.votes.iter().filter(|&&v| v == Vote::A).count();
        if 2 * a > self.votes.len() {
            Vote::A
        } else {
            Vote::B
        }
    }
}

/// `1 / (1 + 10^((rb − ra)/400))`.
pub fn expected_score(ra: f64, rb: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EloTable {
    ratings: BTreeMap<String, f64>,
    k_factor: f64,
    initial: f64,
    processed: usize,
}

impl EloTable {
    pub fn new<I, S>(methods: I, initial: f64, k_factor: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            ratings: methods.into_iter().map(|m| (m.into(), initial)).collect(),
            k_factor,
            initial,
            processed: 0,
        }
    }

    pub fn with_defaults<I, S>(methods: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(methods, DEFAULT_INITIAL_RATING, DEFAULT_K_FACTOR)
    }

    pub fn rating(&self, method: &str) -> Option<f64> {
        self.ratings.get(method).copied()
    }

    pub fn ratings(&self) -> &BTreeMap<String, f64> {
        &self.ratings
    }

    pub fn k_factor(&self) -> f64 {
        self.k_factor
    }

    pub fn initial_rating(&self) -> f64 {
        self.initial
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn total(&self) -> f64 {
        self.ratings.values().sum()
    }

    /// Moves `K·(1 − E_winner)` points from loser to winner.
    pub fn apply_comparison(&mut self, rec: &ComparisonRecord) -> Result<(), RaterError> {
        rec.validate()?;
        let ra = self
            .rating(&rec.method_a)
            .ok_or_else(|| RaterError::UnknownMethod(rec.method_a.clone()))?;
        let rb = self
            .rating(&rec.method_b)
            .ok_or_else(|| RaterError::UnknownMethod(rec.method_b.clone()))?;
        let (winner, loser, rw, rl) = match rec.winner() {
            Vote::A => (&rec.method_a, &rec.method_b, ra, rb),
            Vote::B => (&rec.method_b, &rec.method_a, rb, ra),
        };
        let delta = self.k_factor * (1.0 - expected_score(rw, rl));
        *self.ratings.get_mut(winner).unwrap() = rw + delta;
        *self.ratings.get_mut(loser).unwrap() = rl - delta;
        self.processed += 1;
        Ok(())
    }

    /// Methods sorted by descending rating, ties by name.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self.ratings.iter().map(|(k, &r)| (k.clone(), r)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }
}

/// Rounds to one decimal place.
pub fn round_rating(r: f64) -> f64 {
    (r * 10.0).round() / 10.0
}

#[derive(Debug, Serialize)]
struct RankedRow<'a> {
    rank: usize,
    method: &'a str,
    rating: f64,
}

/// `[{rank, method, rating}]` in descending rating order, ratings to one decimal.
pub fn ranked_json(table: &EloTable) -> String {
    let ranked = table.ranked();
    let rows: Vec<RankedRow> = ranked
        .iter()
        .enumerate()
        .map(|(i, (m, r))| RankedRow {
            rank: i + 1,
            method: m,
            rating: round_rating(*r),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
    s.push('\n');
    s
}

/// Builds a table over every method named in `records` and applies the records
/// in input order.
pub fn rate(records: &[ComparisonRecord], initial: f64, k_factor: f64) -> Result<EloTable, RaterError> {
    let methods = records
        .iter()
        .flat_map(|r| [r.method_a.clone(), r.method_b.clone()]);
    let mut table = EloTable::new(methods, initial, k_factor);
    for rec in records {
        table.apply_comparison(rec)?;
    }
    Ok(table)
}

pub fn read_comparisons(path: impl AsRef<Path>) -> Result<Vec<ComparisonRecord>, RaterError> {
    let records: Vec<ComparisonRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

/// Fleiss' kappa for `counts[item][category]` with `raters` ratings per item.
///
/// Returns 1 when every item is unanimous in a single category (the chance
/// agreement is then 1 and the ratio undefined).
pub fn fleiss_kappa(counts: &[Vec<u32>], raters: u32) -> Result<f64, RaterError> {
    if raters < 2 {
        return Err(RaterError::TooFewRaters(raters));
    }
    if counts.is_empty() {
        return Err(RaterError::NoItems);
    }
    let n_cat = counts[0].len();
    let r = raters as f64;
    let mut col_totals = vec![0f64; n_cat];
    let mut p_bar = 0.0;
    for (item, row) in counts.iter().enumerate() {
        if row.len() != n_cat {
            return Err(RaterError::BadItem {
                item,
                reason: format!("{} categories, expected {n_cat}", row.len()),
            });
        }
        let sum: u32 = row.iter().sum();
        if sum != raters {
            return Err(RaterError::InconsistentRow { item, sum, raters });
        }
        let sq: f64 = row.iter().map(|&c| (c as f64).powi(2)).sum();
        p_bar += (sq - r) / (r * (r - 1.0));
        for (t, &c) in col_totals.iter_mut().zip(row) {
            *t += c as f64;
        }
    }
    let n_items = counts.len() as f64;
    p_bar /= n_items;
    let total = n_items * r;
    let p_e: f64 = col_totals.iter().map(|&t| (t / total).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Deserialize)]
struct VoteLine {
    #[serde(default)]
    counts: Option<Vec<u32>>,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

/// Reads per-item votes, one JSON object per line, either
/// `{"counts": [n_cat0, n_cat1, ...]}` or `{"labels": ["a", "b", "a"]}`.
/// Label lines are tallied over the sorted set of labels seen in the file.
/// Returns the count matrix and the per-item rater count.
pub fn read_votes(path: impl AsRef<Path>) -> Result<(Vec<Vec<u32>>, u32), RaterError> {
    let lines: Vec<VoteLine> = read_jsonl(path)?;
    if lines.is_empty() {
        return Err(RaterError::NoItems);
    }
    let categories: Vec<String> = {
        let mut c: Vec<String> = lines
            .iter()
            .filter_map(|l| l.labels.as_ref())
            .flatten()
            .cloned()
            .collect();
        c.sort();
        c.dedup();
        c
    };
    let mut counts = Vec::with_capacity(lines.len());
    for (item, line) in lines.iter().enumerate() {
        match (&line.counts, &line.labels) {
            (Some(c), None) => counts.push(c.clone()),
            (None, Some(labels)) => {
                let mut row = vec![0u32; categories.len()];
                for l in labels {
                    let j = categories.binary_search(l).expect("category collected");
                    row[j] += 1;
                }
                counts.push(row);
            }
            _ => {
                return Err(RaterError::BadItem {
                    item,
                    reason: "expected exactly one of `counts` or `labels`".into(),
                })
            }
        }
    }
    if counts.iter().any(|r| r.len() != counts[0].len()) {
        return Err(RaterError::BadItem {
            item: 0,
            reason: "mixed `counts` and `labels` lines or ragged counts".into(),
        });
    }
    let raters = counts[0].iter().sum();
    Ok((counts, raters))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(a: &str, b: &str, votes: [Vote; 3]) -> ComparisonRecord {
        ComparisonRecord::new(a, b, votes.to_vec()).unwrap()
    }

    #[test]
    fn expected_score_examples() {
        assert_eq!(expected_score(1400.0, 1400.0), 0.5);
        let e = expected_score(1450.6, 1350.0);
        // 1 / (1 + 10^(-100.6/400))
        assert!((e - 0.6409).abs() < 5e-5, "{e}");
        assert!((expected_score(1450.6, 1350.0) + expected_score(1350.0, 1450.6) - 1.0).abs() < 1e-15);
        assert!(expected_score(1500.0, 1400.0) > expected_score(1490.0, 1400.0));
        assert!(expected_score(1500.0, 1410.0) < expected_score(1500.0, 1400.0));
    }

    #[test]
    fn equal_ratings_move_by_eight() {
        let mut t = EloTable::with_defaults(["a", "b"]);
        t.apply_comparison(&rec("a", "b", [Vote::A, Vote::B, Vote::A])).unwrap();
        assert_eq!(t.rating("a"), Some(1408.0));
        assert_eq!(t.rating("b"), Some(1392.0));
        assert_eq!(t.processed(), 1);
    }

    #[test]
    fn strong_favourite_gains_little() {
        let mut t = EloTable::with_defaults(["a", "b"]);
        t.ratings.insert("a".into(), 1600.0);
        t.apply_comparison(&rec("a", "b", [Vote::A; 3])).unwrap();
        let gain = t.rating("a").unwrap() - 1600.0;
        let e = 1.0 / (1.0 + 10f64.powf(-0.5));
        assert!((e - 0.7597).abs() < 1e-4);
        assert!((gain - 16.0 * (1.0 - e)).abs() < 1e-9);
        assert!((gain - 3.85).abs() < 0.01, "{gain}");
    }

    #[test]
    fn invalid_records() {
        assert!(matches!(
            ComparisonRecord::new("a", "b", vec![Vote::A, Vote::B]),
            Err(RaterError::WrongVoteCount(2))
        ));
        assert!(matches!(
            ComparisonRecord::new("a", "a", vec![Vote::A; 3]),
            Err(RaterError::SelfComparison(_))
        ));
        let mut t = EloTable::with_defaults(["a", "b"]);
        assert!(matches!(
            t.apply_comparison(&rec("a", "z", [Vote::A; 3])),
            Err(RaterError::UnknownMethod(_))
        ));
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(fleiss_kappa(&[vec![3, 0], vec![0, 3]], 3).unwrap(), 1.0);
        assert_eq!(fleiss_kappa(&[vec![3, 0], vec![3, 0]], 3).unwrap(), 1.0);
        assert!(matches!(
            fleiss_kappa(&[vec![2, 0]], 3),
            Err(RaterError::InconsistentRow { item: 0, sum: 2, raters: 3 })
        ));
        assert!(matches!(fleiss_kappa(&[vec![1]], 1), Err(RaterError::TooFewRaters(1))));
    }

    #[test]
    fn ranked_output_rounds_to_one_decimal() {
        let mut t = EloTable::with_defaults(["hgla", "wanda"]);
        t.ratings.insert("hgla".into(), 1450.6123);
        t.ratings.insert("wanda".into(), 1404.24);
        let json = ranked_json(&t);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v[0]["method"], "hgla");
        assert_eq!(v[0]["rating"], 1450.6);
        assert_eq!(v[1]["rating"], 1404.2);
    }
}
