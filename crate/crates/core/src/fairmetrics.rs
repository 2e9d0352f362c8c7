//! Opinion-fairness metrics for multi-document summaries.
//!
//! A summary is split into sentences, each sentence inherits the value label
//! of its best-matching source document, and the resulting label distribution
//! is compared against the source distribution:
//!
//! * second-order SPD: summary SPD minus source SPD, in `[-2, 2]`
//! * UER: mean absolute per-value gap between target and generated distributions
//! * SOF: population variance of those per-value gaps
//! * BUR: fraction of summaries whose largest per-value gap exceeds `τ_fair`
//!
//! BUR is reported as the *unfair* fraction, so smaller is better for all four.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::calibkit::InputCollection;
use crate::iofmt::{Report, TensorF32};
use crate::textmetrics::TokenSeq;

/// Default per-value gap above which a summary counts as unfair.
pub const DEFAULT_TAU_FAIR: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("label `{0}` is not in the value set")]
    UnknownLabel(String),
    #[error("value sets differ: {0:?} vs {1:?}")]
    MismatchedValues(Vec<String>, Vec<String>),
    #[error("summary has no sentences")]
    EmptySummary,
    #[error("source collection is empty")]
    EmptySource,
    #[error("no rows to aggregate")]
    NoRows,
    #[error("no similarity channels given")]
    NoChannels,
    #[error("channel {channel}: expected dims [{rows}, {cols}], got {got:?}")]
    ChannelShape {
        channel: usize,
        rows: usize,
        cols: usize,
        got: Vec<usize>,
    },
    #[error("channel {channel}: similarity {value} at index {index} outside [0,1]")]
    ChannelRange {
        channel: usize,
        index: usize,
        value: f32,
    },
    #[error("threshold must be finite and >= 0, got {0}")]
    BadThreshold(f64),
}

/// Label proportions over a fixed value set.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDistribution {
    proportions: BTreeMap<String, f64>,
    total_units: usize,
}

impl ValueDistribution {
    /// Proportions of `labels` over `values`. Every value gets an entry, possibly 0.
    pub fn from_labels<'a, I>(labels: I, values: &[String]) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = values.iter().map(|v| (v.clone(), 0)).collect();
        let mut total = 0usize;
        for l in labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| MetricError::UnknownLabel(l.to_string()))? += 1;
            total += 1;
        }
        let proportions = counts
            .into_iter()
            .map(|(k, c)| {
                let p = if total == 0 { 0.0 } else { c as f64 / total as f64 };
                (k, p)
            })
            .collect();
        Ok(Self {
            proportions,
            total_units: total,
        })
    }

    /// Builds a distribution from explicit proportions. Panics unless each is in
    /// `[0,1]` and they sum to 1 within 1e-9.
    pub fn from_proportions<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let proportions: BTreeMap<String, f64> =
            pairs.into_iter().map(|(k, v)| (k.into(), v)).collect();
        assert!(proportions.values().all(|p| (0.0..=1.0).contains(p)));
        let sum: f64 = proportions.values().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "proportions sum to {sum}");
        Self {
            proportions,
            total_units: 0,
        }
    }

    pub fn proportion(&self, value: &str) -> Option<f64> {
        self.proportions.get(value).copied()
    }

    pub fn proportions(&self) -> &BTreeMap<String, f64> {
        &self.proportions
    }

    pub fn values(&self) -> Vec<String> {
        self.proportions.keys().cloned().collect()
    }

    pub fn total_units(&self) -> usize {
        self.total_units
    }
}

/// `p(value_a) − p(value_b)`.
pub fn first_order_spd(
    dist: &ValueDistribution,
    value_a: &str,
    value_b: &str,
) -> Result<f64, MetricError> {
    let a = dist
        .proportion(value_a)
        .ok_or_else(|| MetricError::UnknownLabel(value_a.to_string()))?;
    let b = dist
        .proportion(value_b)
        .ok_or_else(|| MetricError::UnknownLabel(value_b.to_string()))?;
    Ok(a - b)
}

/// Summary sentences paired with their inherited labels.
#[derive(Debug, Clone)]
pub struct LabeledSummary {
    sentences: Vec<(String, String)>,
    source: InputCollection,
    values: Vec<String>,
}

impl LabeledSummary {
    /// `values` is the declared value set; every source and sentence label must
    /// belong to it.
    pub fn new(
        sentences: Vec<(String, String)>,
        source: InputCollection,
        values: Vec<String>,
    ) -> Result<Self, MetricError> {
        if sentences.is_empty() {
            return Err(MetricError::EmptySummary);
        }
        let mut values = values;
        values.sort();
        values.dedup();
        for l in sentences.iter().map(|(_, l)| l.as_str()).chain(source.labels()) {
            if !values.iter().any(|v| v == l) {
                return Err(MetricError::UnknownLabel(l.to_string()));
            }
        }
        Ok(Self {
            sentences,
            source,
            values,
        })
    }

    pub fn sentences(&self) -> &[(String, String)] {
        &self.sentences
    }

    pub fn source(&self) -> &InputCollection {
        &self.source
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    /// One unit per sentence regardless of length.
    pub fn distribution(&self) -> ValueDistribution {
        ValueDistribution::from_labels(self.sentences.iter().map(|(_, l)| l.as_str()), &self.values)
            .expect("labels validated")
    }

    pub fn source_distribution(&self) -> ValueDistribution {
        ValueDistribution::from_labels(self.source.labels(), &self.values).expect("labels validated")
    }
}

/// Summary SPD minus source SPD.
pub fn second_order_spd(
    summary: &LabeledSummary,
    value_a: &str,
    value_b: &str,
) -> Result<f64, MetricError> {
    if summary.source.docs().is_empty() {
        return Err(MetricError::EmptySource);
    }
    Ok(first_order_spd(&summary.distribution(), value_a, value_b)?
        - first_order_spd(&summary.source_distribution(), value_a, value_b)?)
}

fn gaps(target: &ValueDistribution, generated: &ValueDistribution) -> Result<Vec<f64>, MetricError> {
    if target.proportions.keys().ne(generated.proportions.keys()) {
        return Err(MetricError::MismatchedValues(target.values(), generated.values()));
    }
    Ok(target
        .proportions
        .values()
        .zip(generated.proportions.values())
        .map(|(t, g)| (t - g).abs())
        .collect())
}

pub fn uer(target: &ValueDistribution, generated: &ValueDistribution) -> Result<f64, MetricError> {
    let g = gaps(target, generated)?;
    if g.is_empty() {
        return Ok(0.0);
    }
    Ok(g.iter().sum::<f64>() / g.len() as f64)
}

/// Population variance of the per-value gaps.
pub fn sof(target: &ValueDistribution, generated: &ValueDistribution) -> Result<f64, MetricError> {
    Ok(population_variance(&gaps(target, generated)?))
}

/// Variance with divisor `n`; 0 for an empty slice.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Largest per-value gap.
pub fn max_gap(target: &ValueDistribution, generated: &ValueDistribution) -> Result<f64, MetricError> {
    Ok(gaps(target, generated)?.into_iter().fold(0.0, f64::max))
}

/// Fraction of `(target, generated)` rows whose largest gap exceeds `tau_fair`.
pub fn bur(
    rows: &[(ValueDistribution, ValueDistribution)],
    tau_fair: f64,
) -> Result<f64, MetricError> {
    if !tau_fair.is_finite() || tau_fair < 0.0 {
        return Err(MetricError::BadThreshold(tau_fair));
    }
    if rows.is_empty() {
        return Err(MetricError::NoRows);
    }
    let mut unfair = 0usize;
    for (t, g) in rows {
        if max_gap(t, g)? > tau_fair {
            unfair += 1;
        }
    }
    Ok(unfair as f64 / rows.len() as f64)
}

/// A sentence-to-source similarity source.
#[derive(Debug, Clone)]
pub enum Channel {
    /// Precomputed `[n_sentences, n_source_docs]` matrix with entries in `[0,1]`.
    Matrix(TensorF32),
    /// Unigram overlap computed in-process, see [`unigram_overlap`].
    NGram,
}

/// `|unigrams(s) ∩ unigrams(d)| / |unigrams(s)|` over lowercased alphanumeric tokens.
pub fn unigram_overlap(sentence: &str, doc: &str) -> f64 {
    let s: HashSet<String> = TokenSeq::tokenize(sentence).tokens().iter().cloned().collect();
    if s.is_empty() {
        return 0.0;
    }
    let d: HashSet<String> = TokenSeq::tokenize(doc).tokens().iter().cloned().collect();
    s.intersection(&d).count() as f64 / s.len() as f64
}

/// Labels each sentence with the source document that maximizes the
/// channel-averaged similarity. Ties go to the lowest source index.
pub fn match_labels(
    sentences: &[String],
    source: &InputCollection,
    channels: &[Channel],
    values: Vec<String>,
) -> Result<LabeledSummary, MetricError> {
    if channels.is_empty() {
        return Err(MetricError::NoChannels);
    }
    let rows = sentences.len();
    let cols = source.docs().len();
    if cols == 0 {
        return Err(MetricError::EmptySource);
    }
    let mut sim = vec![0.0f64; rows * cols];
    for (ci, ch) in channels.iter().enumerate() {
        match ch {
            Channel::Matrix(t) => {
                if t.dims() != [rows, cols] {
                    return Err(MetricError::ChannelShape {
                        channel: ci,
                        rows,
                        cols,
                        got: t.dims().to_vec(),
                    });
                }
                for (index, (acc, &v)) in sim.iter_mut().zip(t.data()).enumerate() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(MetricError::ChannelRange {
                            channel: ci,
                            index,
                            value: v,
                        });
                    }
                    *acc += v as f64;
                }
            }
            Channel::NGram => {
                for (r, s) in sentences.iter().enumerate() {
                    for (c, d) in source.docs().iter().enumerate() {
                        sim[r * cols + c] += unigram_overlap(s, &d.text);
                    }
                }
            }
        }
    }
    let k = channels.len() as f64;
    for v in &mut sim {
        *v /= k;
    }
    let labeled = sentences
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let row = &sim[r * cols..(r + 1) * cols];
            let mut best = 0;
            for c in 1..cols {
                if row[c] > row[best] {
                    best = c;
                }
            }
            (s.clone(), source.docs()[best].label.clone())
        })
        .collect();
    LabeledSummary::new(labeled, source.clone(), values)
}

/// Change in a fairness metric relative to the unpruned model.
///
/// `delta = sign(vanilla) · (vanilla − pruned)`; for `vanilla = 0` any deviation
/// is a regression, `delta = −|pruned|`. The change is genuine when
/// `0 ≤ delta ≤ |vanilla|`, i.e. the pruned model moved towards zero without
/// overshooting past it.
pub fn fairness_improvement(vanilla: f64, pruned: f64) -> (f64, bool) {
    let delta = if vanilla == 0.0 {
        -pruned.abs()
    } else {
        vanilla.signum() * (vanilla - pruned)
    };
    (delta, (0.0..=vanilla.abs()).contains(&delta))
}

/// Per-summary fairness numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessReportRow {
    pub spd2: f64,
    pub bur: f64,
    pub uer: f64,
    pub sof: f64,
}

/// Evaluates one labeled summary against its source. `bur` is 0 or 1 for a single row.
pub fn evaluate_summary(
    summary: &LabeledSummary,
    value_a: &str,
    value_b: &str,
    tau_fair: f64,
) -> Result<FairnessReportRow, MetricError> {
    let target = summary.source_distribution();
    let generated = summary.distribution();
    Ok(FairnessReportRow {
        spd2: second_order_spd(summary, value_a, value_b)?,
        bur: bur(&[(target.clone(), generated.clone())], tau_fair)?,
        uer: uer(&target, &generated)?,
        sof: sof(&target, &generated)?,
    })
}

/// Corpus-level reports, one per `(method, sparsity)` group in sorted order.
///
/// Metrics: `bur` (unfair fraction), `mean_spd2`, `mean_abs_spd2`, `mean_uer`,
/// `mean_sof` and `n_summaries`.
pub fn aggregate_rows(rows: &[(String, f64, FairnessReportRow)]) -> Vec<Report> {
    let mut groups: Vec<(&str, f64, Vec<&FairnessReportRow>)> = Vec::new();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| {
        rows[i].0.cmp(&rows[j].0).then(rows[i].1.total_cmp(&rows[j].1)).then(i.cmp(&j))
    });
    for i in order {
        let (method, sparsity, row) = &rows[i];
        match groups.last_mut() {
            Some((m, s, v)) if *m == method.as_str() && *s == *sparsity => v.push(row),
            _ => groups.push((method, *sparsity, vec![row])),
        }
    }
    groups
        .into_iter()
        .map(|(method, sparsity, v)| {
            let n = v.len() as f64;
            let mean = |f: fn(&FairnessReportRow) -> f64| v.iter().map(|r| f(r)).sum::<f64>() / n;
            Report::new(method, sparsity)
                .with("bur", mean(|r| r.bur))
                .with("mean_spd2", mean(|r| r.spd2))
                .with("mean_abs_spd2", mean(|r| r.spd2.abs()))
                .with("mean_uer", mean(|r| r.uer))
                .with("mean_sof", mean(|r| r.sof))
                .with("n_summaries", n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibkit::Domain;
    use crate::iofmt::Document;

    fn dist(pairs: &[(&str, f64)]) -> ValueDistribution {
        ValueDistribution::from_proportions(pairs.iter().map(|&(k, v)| (k, v)))
    }

    fn pn(pos: f64) -> ValueDistribution {
        dist(&[("pos", pos), ("neg", 1.0 - pos)])
    }

    fn review_source(labels: &[&str]) -> InputCollection {
        let docs = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Document::new(format!("d{i}"), format!("doc number {i} says {l}"), *l).with_group("g"))
            .collect();
        InputCollection::new("c", Domain::Review, docs).unwrap()
    }

    fn balanced() -> InputCollection {
        review_source(&["pos", "pos", "pos", "pos", "neg", "neg", "neg", "neg"])
    }

    fn values() -> Vec<String> {
        vec!["neg".into(), "pos".into()]
    }

    fn summary(labels: &[&str]) -> LabeledSummary {
        let s = labels.iter().map(|l| ("s".to_string(), l.to_string())).collect();
        LabeledSummary::new(s, balanced(), values()).unwrap()
    }

    #[test]
    fn first_order_examples() {
        assert_eq!(first_order_spd(&pn(0.5), "pos", "neg").unwrap(), 0.0);
        assert_eq!(first_order_spd(&pn(1.0), "pos", "neg").unwrap(), 1.0);
        assert_eq!(first_order_spd(&pn(0.75), "pos", "neg").unwrap(), 0.5);
        assert_eq!(
            first_order_spd(&pn(0.5), "pos", "meh"),
            Err(MetricError::UnknownLabel("meh".into()))
        );
    }

    #[test]
    fn second_order_examples() {
        assert_eq!(second_order_spd(&summary(&["pos", "pos", "pos", "neg"]), "pos", "neg").unwrap(), 0.5);
        assert_eq!(second_order_spd(&summary(&["pos", "neg"]), "pos", "neg").unwrap(), 0.0);
        assert_eq!(second_order_spd(&summary(&["neg"; 4]), "pos", "neg").unwrap(), -1.0);
        let s = summary(&["pos", "pos", "neg"]);
        assert_eq!(
            second_order_spd(&s, "pos", "neg").unwrap(),
            -second_order_spd(&s, "neg", "pos").unwrap()
        );
    }

    #[test]
    fn empty_summary_rejected() {
        assert!(matches!(
            LabeledSummary::new(vec![], balanced(), values()),
            Err(MetricError::EmptySummary)
        ));
    }

    #[test]
    fn uer_sof_examples() {
        assert_eq!(uer(&pn(0.5), &pn(0.5)).unwrap(), 0.0);
        assert_eq!(uer(&pn(0.5), &pn(0.75)).unwrap(), 0.25);
        assert_eq!(uer(&pn(1.0), &pn(0.0)).unwrap(), 1.0);
        assert_eq!(sof(&pn(0.5), &pn(0.5)).unwrap(), 0.0);
        assert_eq!(sof(&pn(0.5), &pn(0.75)).unwrap(), 0.0);
        // gaps 0.1, 0.1, 0.4: mean 0.2, squared deviations 0.01, 0.01, 0.04
        let expected = (0.01 + 0.01 + 0.04) / 3.0;
        assert!((population_variance(&[0.1, 0.1, 0.4]) - expected).abs() < 1e-15);
        assert!((expected - 0.02).abs() < 1e-15);
        // three-value distributions: gaps 0.1, 0.1, 0.2
        let t = dist(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        let g = dist(&[("a", 0.4), ("b", 0.2), ("c", 0.4)]);
        let expected = population_variance(&[0.1, 0.1, 0.2]);
        assert!((sof(&t, &g).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.02 / 9.0).abs() < 1e-12);
        assert!(matches!(
            uer(&pn(0.5), &dist(&[("x", 1.0)])),
            Err(MetricError::MismatchedValues(..))
        ));
    }

    #[test]
    fn bur_examples() {
        let rows = vec![(pn(0.5), pn(0.5)), (pn(0.5), pn(0.5))];
        assert_eq!(bur(&rows, 0.0).unwrap(), 0.0);
        let rows = vec![(pn(0.5), pn(0.55)), (pn(0.5), pn(1.0))];
        assert_eq!(bur(&rows, 0.1).unwrap(), 0.5);
        assert_eq!(bur(&rows, 1.0).unwrap(), 0.0);
        assert_eq!(bur(&[], 0.1), Err(MetricError::NoRows));
    }

    #[test]
    fn match_labels_examples() {
        let src = review_source(&["pos", "neg", "pos", "neg", "pos", "neg", "pos", "neg"]);
        let mut row = vec![0.0f32; 8];
        row[0] = 0.9;
        row[1] = 0.1;
        let ch = Channel::Matrix(TensorF32::new(vec![1, 8], row).unwrap());
        let s = match_labels(&["x".into()], &src, &[ch], values()).unwrap();
        assert_eq!(s.sentences()[0].1, "pos");

        let mut a = vec![0.0f32; 8];
        let mut b = vec![0.0f32; 8];
        a[1] = 0.2;
        a[2] = 0.8;
        b[1] = 0.8;
        b[2] = 0.2;
        let chans = [
            Channel::Matrix(TensorF32::new(vec![1, 8], a).unwrap()),
            Channel::Matrix(TensorF32::new(vec![1, 8], b).unwrap()),
        ];
        let s = match_labels(&["x".into()], &src, &chans, values()).unwrap();
        // docs 1 and 2 tie at 0.5; doc 1 wins
        assert_eq!(s.sentences()[0].1, "neg");
    }

    #[test]
    fn ngram_channel_finds_identical_doc() {
        let src = review_source(&["pos", "pos", "pos", "neg", "pos", "pos", "pos", "pos"]);
        let text = src.docs()[3].text.clone();
        assert_eq!(unigram_overlap(&text, &text), 1.0);
        let s = match_labels(&[text], &src, &[Channel::NGram], values()).unwrap();
        assert_eq!(s.sentences()[0].1, "neg");
    }

    #[test]
    fn channel_validation() {
        let src = balanced();
        assert_eq!(
            match_labels(&["x".into()], &src, &[], values()).unwrap_err(),
            MetricError::NoChannels
        );
        let bad = Channel::Matrix(TensorF32::new(vec![2, 8], vec![0.0; 16]).unwrap());
        assert!(matches!(
            match_labels(&["x".into()], &src, &[bad], values()),
            Err(MetricError::ChannelShape { .. })
        ));
        let bad = Channel::Matrix(TensorF32::new(vec![1, 8], vec![1.5; 8]).unwrap());
        assert!(matches!(
            match_labels(&["x".into()], &src, &[bad], values()),
            Err(MetricError::ChannelRange { .. })
        ));
    }

    #[test]
    fn improvement_examples() {
        let (d, ok) = fairness_improvement(0.496, 0.411);
        assert!((d - 0.085).abs() < 1e-12 && ok);
        assert_eq!(fairness_improvement(0.496, 0.496), (0.0, true));
        let (d, ok) = fairness_improvement(0.187, -0.1);
        assert!((d - 0.287).abs() < 1e-12 && !ok);
        let (d, ok) = fairness_improvement(-0.3, -0.1);
        assert!((d - 0.2).abs() < 1e-12 && ok);
        assert_eq!(fairness_improvement(0.0, -0.2), (-0.2, false));
        assert_eq!(fairness_improvement(0.0, 0.0), (-0.0, true));
    }

    #[test]
    fn echo_summary_is_fair() {
        let s = summary(&["pos", "pos", "neg", "neg"]);
        let row = evaluate_summary(&s, "pos", "neg", DEFAULT_TAU_FAIR).unwrap();
        assert_eq!(row, FairnessReportRow { spd2: 0.0, bur: 0.0, uer: 0.0, sof: 0.0 });
    }

    #[test]
    fn aggregate_groups_and_means() {
        let row = |spd2: f64, bur: f64| FairnessReportRow { spd2, bur, uer: spd2.abs() / 2.0, sof: 0.0 };
        let rows = vec![
            ("pruned".to_string(), 0.3, row(0.5, 1.0)),
            ("vanilla".to_string(), 0.0, row(0.0, 0.0)),
            ("pruned".to_string(), 0.3, row(-0.25, 0.0)),
        ];
        let reports = aggregate_rows(&rows);
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].method, "pruned");
        assert_eq!(reports[0].get("bur"), Some(0.5));
        assert_eq!(reports[0].get("mean_spd2"), Some(0.125));
        assert_eq!(reports[0].get("mean_abs_spd2"), Some(0.375));
        assert_eq!(reports[0].get("n_summaries"), Some(2.0));
        assert_eq!(reports[1].get("bur"), Some(0.0));
    }
}
