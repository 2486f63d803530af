//! Trace-similarity metrics: Len, BLEU, token-overlap F1 and ROUGE-1/2/L.
//!
//! Every metric works on the output of [`tokenize`], so Len and the overlap
//! scores always agree on what a token is. Scores are on a 0..=100 scale.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::ReasoningRecord;
use crate::exec::Execution;
use crate::{THINK_CLOSE, THINK_OPEN};

/// Smoothing value substituted for a zero n-gram precision in BLEU.
pub const BLEU_EPSILON: f64 = 1e-9;
/// Highest n-gram order used by [`bleu`] in reports.
pub const BLEU_MAX_N: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("no candidate id matches a reference id")]
    NoMatchedPairs,
    #[error("none of the {0} matched pairs could be scored")]
    NoScoredPairs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Candidate,
    Reference,
}

/// Normalized tokens of one text, tagged with the side of the comparison it
/// belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    origin: Origin,
}

impl TokenSequence {
    pub fn candidate(text: &str) -> Self {
        Self {
            tokens: tokenize(text),
            origin: Origin::Candidate,
        }
    }

    pub fn reference(text: &str) -> Self {
        Self {
            tokens: tokenize(text),
            origin: Origin::Reference,
        }
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.tokens
    }
}

impl Deref for TokenSequence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.tokens
    }
}

/// Splits text into normalized tokens.
///
/// Think-delimiters are removed, the text is NFC-normalized and lowercased,
/// then split on whitespace. Inside each whitespace-separated chunk, every
/// maximal run of alphanumeric characters and every maximal run of other
/// characters becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let stripped = text.replace(THINK_OPEN, " ").replace(THINK_CLOSE, " ");
    let normalized: String = stripped.nfc().collect::<String>().to_lowercase();
    let mut tokens = Vec::new();
    for chunk in normalized.split_whitespace() {
        let mut current = String::new();
        let mut current_is_word = None;
        for c in chunk.chars() {
            let is_word = c.is_alphanumeric();
            if current_is_word.is_some_and(|w| w != is_word) {
                tokens.push(std::mem::take(&mut current));
            }
            current.push(c);
            current_is_word = Some(is_word);
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Token count under [`tokenize`]; the Len column.
pub fn token_len(text: &str) -> usize {
    tokenize(text).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut map = HashMap::new();
    if n == 0 || tokens.len() < n {
        return map;
    }
    for gram in tokens.windows(n) {
        *map.entry(gram).or_insert(0) += 1;
    }
    map
}

/// Size of the clipped multiset intersection of the order-`n` n-grams.
pub fn clipped_overlap<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> usize {
    let reference_counts = counts(reference, n);
    counts(candidate, n)
        .into_iter()
        .map(|(gram, c)| c.min(reference_counts.get(gram).copied().unwrap_or(0)))
        .sum()
}

fn ngram_total(len: usize, n: usize) -> usize {
    if len >= n {
        len - n + 1
    } else {
        0
    }
}

fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Token-overlap precision, recall and F1, each scaled to 0..=100.
///
/// Recall is the "token recovery" figure.
pub fn token_f1<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Result<TokenF1, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let overlap = clipped_overlap(candidate, reference, 1) as f64;
    let precision = if candidate.is_empty() {
        0.0
    } else {
        overlap / candidate.len() as f64
    };
    let recall = overlap / reference.len() as f64;
    Ok(TokenF1 {
        precision: precision * 100.0,
        recall: recall * 100.0,
        f1: f_measure(precision, recall) * 100.0,
    })
}

/// Sentence-level BLEU on a 0..=100 scale.
///
/// Orders 1..=min(max_n, |reference|) are combined by geometric mean; a zero
/// clipped precision is replaced by [`BLEU_EPSILON`]. The brevity penalty
/// applies when the candidate is shorter than the reference.
pub fn bleu<T: Eq + Hash>(
    candidate: &[T],
    reference: &[T],
    max_n: usize,
) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if max_n == 0 {
        return Err(MetricError::ZeroOrder);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let orders = max_n.min(reference.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let total = ngram_total(candidate.len(), n);
        let clipped = clipped_overlap(candidate, reference, n);
        let p = if clipped == 0 {
            BLEU_EPSILON
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let brevity = if candidate.len() < reference.len() {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * (log_sum / orders as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    R1,
    R2,
    RL,
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(row[j])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    let cand_total = ngram_total(candidate.len(), n);
    let ref_total = ngram_total(reference.len(), n);
    if cand_total == 0 || ref_total == 0 {
        // Too short for this order on at least one side.
        return if cand_total == ref_total && candidate == reference {
            100.0
        } else {
            0.0
        };
    }
    let overlap = clipped_overlap(candidate, reference, n) as f64;
    f_measure(overlap / cand_total as f64, overlap / ref_total as f64) * 100.0
}

/// ROUGE F1 (β = 1) on a 0..=100 scale.
pub fn rouge<T: Eq + Hash>(
    candidate: &[T],
    reference: &[T],
    variant: RougeVariant,
) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(match variant {
        RougeVariant::R1 => rouge_n(candidate, reference, 1),
        RougeVariant::R2 => rouge_n(candidate, reference, 2),
        RougeVariant::RL => {
            if candidate.is_empty() {
                return Ok(0.0);
            }
            let l = lcs_len(candidate, reference) as f64;
            f_measure(l / candidate.len() as f64, l / reference.len() as f64) * 100.0
        }
    })
}

/// Scores for one synthesized trace against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceScore {
    /// Candidate token count (a mean when aggregated).
    pub len: f64,
    pub bleu: f64,
    pub tf1: f64,
    pub token_recall: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
}

impl TraceScore {
    pub fn compute<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Result<Self, MetricError> {
        let f1 = token_f1(candidate, reference)?;
        Ok(Self {
            len: candidate.len() as f64,
            bleu: bleu(candidate, reference, BLEU_MAX_N)?,
            tf1: f1.f1,
            token_recall: f1.recall,
            rouge1: rouge(candidate, reference, RougeVariant::R1)?,
            rouge2: rouge(candidate, reference, RougeVariant::R2)?,
            rouge_l: rouge(candidate, reference, RougeVariant::RL)?,
        })
    }

    fn mean(scores: &[TraceScore]) -> Self {
        let n = scores.len() as f64;
        let sum = |f: fn(&TraceScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Self {
            len: sum(|s| s.len),
            bleu: sum(|s| s.bleu),
            tf1: sum(|s| s.tf1),
            token_recall: sum(|s| s.token_recall),
            rouge1: sum(|s| s.rouge1),
            rouge2: sum(|s| s.rouge2),
            rouge_l: sum(|s| s.rouge_l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub id: String,
    #[serde(flatten)]
    pub score: TraceScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub id: String,
    pub reason: String,
}

/// Per-record and mean scores of a candidate set against references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub means: TraceScore,
    pub per_record: Vec<RecordScore>,
    pub unmatched_candidates: Vec<String>,
    pub unmatched_references: Vec<String>,
    pub failed: Vec<ScoreFailure>,
}

/// Column labels of the text table, in report order.
pub const TABLE_COLUMNS: [&str; 7] = ["Len", "BLEU", "TF1", "R-1", "R-2", "R-L", "TokenRecall"];

impl MetricReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for col in TABLE_COLUMNS {
            let _ = write!(out, " {col:>11}");
        }
        out.push('\n');
        let m = &self.means;
        let _ = write!(out, "{:<8}", "mean");
        for value in [
            m.len,
            m.bleu,
            m.tf1,
            m.rouge1,
            m.rouge2,
            m.rouge_l,
            m.token_recall,
        ] {
            let width = 11;
            let _ = write!(out, " {value:>width$.2}");
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "scored {} pair(s); {} failed; {} unmatched candidate(s); {} unmatched reference(s)",
            self.count,
            self.failed.len(),
            self.unmatched_candidates.len(),
            self.unmatched_references.len()
        );
        out
    }
}

/// Pairs candidates with references by id and scores each pair's traces.
///
/// Per-record output follows candidate order regardless of `exec`.
pub fn score_pairs(
    candidates: &[ReasoningRecord],
    references: &[ReasoningRecord],
    exec: Execution,
) -> Result<MetricReport, MetricError> {
    let by_id: HashMap<&str, &ReasoningRecord> =
        references.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut pairs = Vec::new();
    let mut unmatched_candidates = Vec::new();
    for cand in candidates {
        match by_id.get(cand.id.as_str()) {
            Some(reference) => pairs.push((cand, *reference)),
            None => unmatched_candidates.push(cand.id.clone()),
        }
    }
    if pairs.is_empty() {
        return Err(MetricError::NoMatchedPairs);
    }
    let candidate_ids: std::collections::HashSet<&str> =
        candidates.iter().map(|c| c.id.as_str()).collect();
    let unmatched_references = references
        .iter()
        .filter(|r| !candidate_ids.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();

    let outcomes = exec.map(&pairs, |(cand, reference)| score_one(cand, reference));
    let mut per_record = Vec::new();
    let mut failed = Vec::new();
    for ((cand, _), outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok(score) => per_record.push(RecordScore {
                id: cand.id.clone(),
                score,
            }),
            Err(reason) => failed.push(ScoreFailure {
                id: cand.id.clone(),
                reason,
            }),
        }
    }
    if per_record.is_empty() {
        return Err(MetricError::NoScoredPairs(pairs.len()));
    }
    let scores: Vec<TraceScore> = per_record.iter().map(|r| r.score).collect();
    Ok(MetricReport {
        count: per_record.len(),
        means: TraceScore::mean(&scores),
        per_record,
        unmatched_candidates,
        unmatched_references,
        failed,
    })
}

fn score_one(
    candidate: &ReasoningRecord,
    reference: &ReasoningRecord,
) -> Result<TraceScore, String> {
    let cand_trace = candidate.trace.as_deref().ok_or("candidate has no trace")?;
    let ref_trace = reference.trace.as_deref().ok_or("reference has no trace")?;
    let cand = TokenSequence::candidate(cand_trace);
    let reference = TokenSequence::reference(ref_trace);
    TraceScore::compute(&cand, &reference).map_err(|e| e.to_string())
}
