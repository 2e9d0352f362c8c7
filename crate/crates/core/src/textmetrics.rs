//! Sentence splitting, tokenization and ROUGE-1/2/L.

use std::collections::HashMap;

use serde::Serialize;

/// Lowercased alphanumeric tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokenize(text: &str) -> Self {
        let tokens = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        TokenSeq(tokens)
    }

    /// Panics on an empty token.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        assert!(tokens.iter().all(|t| !t.is_empty()), "empty token");
        TokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Splits after `.`, `!` or `?` when followed by whitespace or end of text.
///
/// Abbreviations such as "Dr." are not special-cased.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            let boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if boundary {
                push_trimmed(&mut out, &text[start..end]);
                start = end;
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let precision = ratio(overlap, cand_total);
        let recall = ratio(overlap, ref_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let cand = ngram_counts(&candidate.0, n);
    let refs = ngram_counts(&reference.0, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        overlap,
        cand.values().sum(),
        refs.values().sum(),
    )
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let lcs = lcs_len(&candidate.0, &reference.0);
    RougeScore::from_counts(lcs, candidate.len(), reference.len())
}

/// F1 of ROUGE-1, ROUGE-2 and ROUGE-L for a pair of raw texts.
pub fn rouge_f1_triplet(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let c = TokenSeq::tokenize(candidate);
    let r = TokenSeq::tokenize(reference);
    (
        rouge_n(&c, &r, 1).f1,
        rouge_n(&c, &r, 2).f1,
        rouge_l(&c, &r).f1,
    )
}
