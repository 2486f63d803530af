//! Record ingestion, JSONL emission and deterministic surrogate/victim splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::UsageStats;
use crate::sha256_hex;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {}{message}", field.as_ref().map(|f| format!("field `{f}`: ")).unwrap_or_default())]
    Malformed {
        line: usize,
        field: Option<String>,
        message: String,
    },
    #[error("line {line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("corpus has {available} records but {requested} were requested")]
    TooSmall { requested: usize, available: usize },
    #[error("split sizes must both be at least 1")]
    ZeroSize,
    #[error("manifest does not match corpus: {0}")]
    ManifestMismatch(String),
}

/// Which pipeline role produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    #[default]
    Corpus,
    Surrogate,
    Victim,
    Compressor,
    Inversion,
}

impl RecordSource {
    fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(Value::String(s.to_owned())).ok()
    }
}

/// One example moving through the pipeline: input, optional trace, answer
/// and summary, plus who produced it and what it cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningRecord {
    pub id: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default)]
    pub source: RecordSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageStats>,
}

impl ReasoningRecord {
    pub fn new(id: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            input: input.into(),
            trace: None,
            answer: None,
            summary: None,
            source: RecordSource::Corpus,
            usage: None,
        }
    }

    /// Checks the per-record invariants; returns the offending field.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str)> {
        if self.id.is_empty() {
            return Err(("id", "must be non-empty"));
        }
        if self.input.is_empty() {
            return Err(("input", "must be non-empty"));
        }
        match self.source {
            RecordSource::Inversion if self.trace.is_none() => {
                Err(("trace", "required for source = inversion"))
            }
            RecordSource::Victim if self.answer.is_none() => {
                Err(("answer", "required for source = victim"))
            }
            _ => Ok(()),
        }
    }

    /// Canonical single-line JSON form used for emission and digests.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// One [`ReasoningRecord`] object per line.
    Jsonl,
    /// Conversation-style reasoning dataset rows: `{"id"?, "conversations":
    /// [{"from": "user", "value": ..}, {"from": "assistant", "value": ..}]}`.
    TraceDataset,
}

/// Ordered, id-unique collection of records. Read-only once built.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    records: Vec<ReasoningRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, rejecting invalid records and duplicate ids.
    /// Line numbers in errors are 1-based positions in `records`.
    pub fn from_records(records: Vec<ReasoningRecord>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            if let Err((field, message)) = record.validate() {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    field: Some(field.to_owned()),
                    message: message.to_owned(),
                });
            }
            if let Some(first) = index.insert(record.id.clone(), i) {
                return Err(CorpusError::DuplicateId {
                    id: record.id.clone(),
                    line: i + 1,
                    first_line: first + 1,
                });
            }
        }
        Ok(Self { records, index })
    }

    pub fn ingest(path: &Path, format: CorpusFormat) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, format)
    }

    /// Parses JSONL text. Blank lines are skipped but still counted, so error
    /// line numbers match the file.
    pub fn parse(text: &str, format: CorpusFormat) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
                line,
                field: None,
                message: e.to_string(),
            })?;
            let record = match format {
                CorpusFormat::Jsonl => record_from_value(value),
                CorpusFormat::TraceDataset => record_from_conversation(value, line),
            }
            .map_err(|(field, message)| CorpusError::Malformed {
                line,
                field,
                message,
            })?;
            records.push(record);
            lines.push(line);
        }
        Self::from_records(records).map_err(|e| match e {
            CorpusError::Malformed {
                line,
                field,
                message,
            } => CorpusError::Malformed {
                line: lines[line - 1],
                field,
                message,
            },
            CorpusError::DuplicateId {
                id,
                line,
                first_line,
            } => CorpusError::DuplicateId {
                id,
                line: lines[line - 1],
                first_line: lines[first_line - 1],
            },
            other => other,
        })
    }

    pub fn records(&self) -> &[ReasoningRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ReasoningRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ReasoningRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    /// Records for `ids`, in the given order.
    pub fn select<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a ReasoningRecord>, CorpusError> {
        ids.iter()
            .map(|id| {
                self.get(id).ok_or_else(|| {
                    CorpusError::ManifestMismatch(format!("id {id:?} not in corpus"))
                })
            })
            .collect()
    }

    pub fn emit_jsonl(&self) -> String {
        emit_jsonl(&self.records)
    }

    /// SHA-256 over the canonical JSONL form.
    pub fn digest(&self) -> String {
        sha256_hex(self.emit_jsonl().as_bytes())
    }
}

pub fn emit_jsonl(records: &[ReasoningRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

type FieldError = (Option<String>, String);

fn record_from_value(value: Value) -> Result<ReasoningRecord, FieldError> {
    let Value::Object(map) = &value else {
        return Err((None, "expected a JSON object".to_owned()));
    };
    for (key, v) in map {
        check_field(key, v).map_err(|m| (Some(key.clone()), m))?;
    }
    for required in ["id", "input"] {
        if !map.contains_key(required) {
            return Err((Some(required.to_owned()), "missing".to_owned()));
        }
    }
    serde_json::from_value(value).map_err(|e| (None, e.to_string()))
}

fn check_field(key: &str, v: &Value) -> Result<(), String> {
    match key {
        "id" | "input" => v
            .is_string()
            .then_some(())
            .ok_or_else(|| "expected a string".to_owned()),
        "trace" | "answer" | "summary" => (v.is_string() || v.is_null())
            .then_some(())
            .ok_or_else(|| "expected a string or null".to_owned()),
        "source" => v
            .as_str()
            .and_then(RecordSource::parse)
            .map(|_| ())
            .ok_or_else(|| format!("unknown source {v}")),
        "usage" => {
            if v.is_null() {
                return Ok(());
            }
            serde_json::from_value::<UsageStats>(v.clone())
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
        _ => Err("unknown field".to_owned()),
    }
}

const THOUGHT_OPEN: &str = "<|begin_of_thought|>";
const THOUGHT_CLOSE: &str = "<|end_of_thought|>";
const SOLUTION_OPEN: &str = "<|begin_of_solution|>";
const SOLUTION_CLOSE: &str = "<|end_of_solution|>";

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<(&'a str, &'a str)> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some((&text[start..end], &text[end + close.len()..]))
}

/// Splits an assistant turn of a reasoning dataset into (trace, answer).
pub fn split_assistant_turn(text: &str) -> (Option<String>, String) {
    if let Some((thought, rest)) = between(text, THOUGHT_OPEN, THOUGHT_CLOSE) {
        let answer = between(rest, SOLUTION_OPEN, SOLUTION_CLOSE)
            .map(|(s, _)| s)
            .unwrap_or(rest);
        return (Some(thought.trim().to_owned()), answer.trim().to_owned());
    }
    match crate::stages::split_think(text) {
        Some((trace, answer)) => (Some(trace), answer),
        None => (None, text.trim().to_owned()),
    }
}

fn record_from_conversation(value: Value, line: usize) -> Result<ReasoningRecord, FieldError> {
    let id = match value.get("id") {
        None | Some(Value::Null) => format!("row-{line}"),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err((Some("id".into()), "expected a string or number".into())),
    };
    let turns = value
        .get("conversations")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            (
                Some("conversations".to_owned()),
                "expected an array".to_owned(),
            )
        })?;
    let turn = |who: &str| {
        turns.iter().find_map(|t| {
            let from = t.get("from").or_else(|| t.get("role"))?.as_str()?;
            let body = t.get("value").or_else(|| t.get("content"))?.as_str()?;
            matches!(
                (who, from),
                ("user", "user" | "human") | ("assistant", "assistant" | "gpt")
            )
            .then(|| body.to_owned())
        })
    };
    let input = turn("user")
        .ok_or_else(|| (Some("conversations".to_owned()), "no user turn".to_owned()))?;
    let mut record = ReasoningRecord::new(id, input);
    if let Some(reply) = turn("assistant") {
        let (trace, answer) = split_assistant_turn(&reply);
        record.trace = trace;
        record.answer = Some(answer);
    }
    Ok(record)
}

/// Seeded Fisher–Yates shuffle, identical on every platform for a given seed.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Disjoint surrogate and victim id lists over one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub corpus_digest: String,
    pub seed: u64,
    pub surrogate_ids: Vec<String>,
    pub victim_ids: Vec<String>,
    pub sizes: (usize, usize),
}

impl SplitManifest {
    /// Shuffles the sorted id list with `seed`; the first `size_surrogate`
    /// ids form the surrogate split and the next `size_victim` the victim split.
    pub fn make(
        corpus: &Corpus,
        size_surrogate: usize,
        size_victim: usize,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        if size_surrogate == 0 || size_victim == 0 {
            return Err(CorpusError::ZeroSize);
        }
        let requested = size_surrogate + size_victim;
        if requested > corpus.len() {
            return Err(CorpusError::TooSmall {
                requested,
                available: corpus.len(),
            });
        }
        let mut ids: Vec<String> = corpus.ids().map(str::to_owned).collect();
        ids.sort();
        seeded_shuffle(&mut ids, seed);
        ids.truncate(requested);
        let victim_ids = ids.split_off(size_surrogate);
        Ok(Self {
            corpus_digest: corpus.digest(),
            seed,
            surrogate_ids: ids,
            victim_ids,
            sizes: (size_surrogate, size_victim),
        })
    }

    /// Checks digest, sizes, disjointness and membership against `corpus`.
    pub fn verify(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        let mismatch = |m: String| Err(CorpusError::ManifestMismatch(m));
        if self.corpus_digest != corpus.digest() {
            return mismatch("corpus digest differs".into());
        }
        if self.sizes != (self.surrogate_ids.len(), self.victim_ids.len()) {
            return mismatch("split sizes differ from id list lengths".into());
        }
        let surrogate: HashSet<&str> = self.surrogate_ids.iter().map(String::as_str).collect();
        if let Some(id) = self
            .victim_ids
            .iter()
            .find(|id| surrogate.contains(id.as_str()))
        {
            return mismatch(format!("id {id:?} is in both splits"));
        }
        if let Some(id) = self
            .surrogate_ids
            .iter()
            .chain(&self.victim_ids)
            .find(|id| corpus.get(id).is_none())
        {
            return mismatch(format!("id {id:?} not in corpus"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization is infallible") + "\n"
    }
}
