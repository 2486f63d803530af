//! Pipeline stages as dataset transformations.
//!
//! Stage 1 collects surrogate traces, compresses them into summaries and
//! builds the inversion SFT sets. Stage 2 runs a served inversion model over
//! victim outputs. Stage 3 builds student SFT sets whose targets are the
//! trace and answer joined in the surrogate's own think-delimited envelope.
//! [`cross_entropy`] scores an example under teacher forcing against any
//! [`ProbabilityOracle`], masking the prompt.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ReasoningRecord, RecordSource};
use crate::exec::Execution;
use crate::gateway::{ChatMessage, EndpointConfig, Gateway, GatewayError, UsageStats};
use crate::metrics::{token_len, tokenize};
use crate::prompts::{PromptError, PromptSet};
use crate::{THINK_CLOSE, THINK_OPEN};

/// Separator between trace and answer inside a student target.
pub const TRACE_ANSWER_SEPARATOR: &str = "</think>\n";
/// Maximum prompt plus target length, in tokenizer tokens, of an emitted SFT example.
pub const DEFAULT_CUTOFF_LEN: usize = 16_384;

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("target has no tokens")]
    EmptyTarget,
    #[error("oracle returned invalid probability {value} at target token {position}")]
    InvalidProbability { position: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionSetting {
    Summary,
    NoSummary,
}

impl InversionSetting {
    pub fn uses_summary(self) -> bool {
        self == InversionSetting::Summary
    }

    pub fn sft_setting(self) -> SftSetting {
        match self {
            InversionSetting::Summary => SftSetting::InversionSummary,
            InversionSetting::NoSummary => SftSetting::InversionNosummary,
        }
    }
}

impl fmt::Display for InversionSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            InversionSetting::Summary => "summary",
            InversionSetting::NoSummary => "no_summary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftSetting {
    InversionSummary,
    InversionNosummary,
    Student,
    AnswerOnly,
    AnswerPlusSummary,
    SurrogateTrace,
}

/// Fine-tuning data options for the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentVariant {
    /// Victim answers with inverted traces.
    SynthesizedTrace,
    /// Victim answers with the victim's own traces (open-weight victims only).
    VictimTrace,
    /// Surrogate traces and answers.
    SurrogateTrace,
    AnswerOnly,
    AnswerPlusSummary,
}

impl StudentVariant {
    pub const ALL: [StudentVariant; 5] = [
        StudentVariant::SynthesizedTrace,
        StudentVariant::VictimTrace,
        StudentVariant::SurrogateTrace,
        StudentVariant::AnswerOnly,
        StudentVariant::AnswerPlusSummary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudentVariant::SynthesizedTrace => "synthesized_trace",
            StudentVariant::VictimTrace => "victim_trace",
            StudentVariant::SurrogateTrace => "surrogate_trace",
            StudentVariant::AnswerOnly => "answer_only",
            StudentVariant::AnswerPlusSummary => "answer_plus_summary",
        }
    }

    pub fn sft_setting(self) -> SftSetting {
        match self {
            StudentVariant::SynthesizedTrace | StudentVariant::VictimTrace => SftSetting::Student,
            StudentVariant::SurrogateTrace => SftSetting::SurrogateTrace,
            StudentVariant::AnswerOnly => SftSetting::AnswerOnly,
            StudentVariant::AnswerPlusSummary => SftSetting::AnswerPlusSummary,
        }
    }

    fn needs_trace(self) -> bool {
        matches!(
            self,
            StudentVariant::SynthesizedTrace
                | StudentVariant::VictimTrace
                | StudentVariant::SurrogateTrace
        )
    }
}

impl fmt::Display for StudentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// One supervision pair for an external trainer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub id: String,
    pub prompt: String,
    pub target: String,
    pub setting: SftSetting,
}

impl SftExample {
    pub fn token_len(&self) -> usize {
        token_len(&self.prompt) + token_len(&self.target)
    }
}

/// Hyperparameters written next to every SFT file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub num_train_epochs: u32,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub cutoff_len: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            num_train_epochs: 3,
            learning_rate: 1e-5,
            warmup_ratio: 0.1,
            cutoff_len: DEFAULT_CUTOFF_LEN,
        }
    }
}

impl TrainingConfig {
    /// Sidecar JSON; the learning rate is written in exponent form.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"num_train_epochs\": {}, \"learning_rate\": {:e}, \"warmup_ratio\": {}, \"cutoff_len\": {}}}\n",
            self.num_train_epochs, self.learning_rate, self.warmup_ratio, self.cutoff_len
        )
    }
}

pub fn emit_sft_jsonl(examples: &[SftExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// A record-level problem that does not stop the stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordIssue {
    pub id: String,
    pub reason: String,
}

impl RecordIssue {
    fn new(id: &str, reason: impl Into<String>) -> Self {
        Self {
            id: id.to_owned(),
            reason: reason.into(),
        }
    }

    fn missing(id: &str, field: &str) -> Self {
        Self::new(id, format!("missing field `{field}`"))
    }
}

/// Records produced by an endpoint-driven stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutput {
    pub records: Vec<ReasoningRecord>,
    /// Records that could not be produced at all.
    pub failures: Vec<RecordIssue>,
    /// Records kept but suspicious (no delimiters, empty output, ...).
    pub flagged: Vec<RecordIssue>,
    pub usage: UsageStats,
    pub calls: usize,
}

/// Splits a model response at its first think-delimiter pair into
/// `(trace, answer)`, both trimmed. A response holding only a closing
/// delimiter is split there.
pub fn split_think(text: &str) -> Option<(String, String)> {
    if let Some(open) = text.find(THINK_OPEN) {
        let inner = &text[open + THINK_OPEN.len()..];
        let close = inner.find(THINK_CLOSE)?;
        return Some((
            inner[..close].trim().to_owned(),
            inner[close + THINK_CLOSE.len()..].trim().to_owned(),
        ));
    }
    let close = text.find(THINK_CLOSE)?;
    Some((
        text[..close].trim().to_owned(),
        text[close + THINK_CLOSE.len()..].trim().to_owned(),
    ))
}

pub fn wrap_think(trace: &str) -> String {
    format!("{THINK_OPEN}{trace}{THINK_CLOSE}")
}

/// Inverse of the trace-variant student target construction.
pub fn split_student_target(target: &str) -> Option<(&str, &str)> {
    let body = target.strip_prefix(THINK_OPEN)?;
    let at = body.find(TRACE_ANSWER_SEPARATOR)?;
    Some((&body[..at], &body[at + TRACE_ANSWER_SEPARATOR.len()..]))
}

fn run_jobs(
    gateway: &Gateway,
    cfg: &EndpointConfig,
    jobs: Vec<(String, Vec<ChatMessage>)>,
    out: &mut StageOutput,
    mut on_success: impl FnMut(&str, crate::gateway::ChatExchange, &mut StageOutput),
) -> Result<(), StageError> {
    if jobs.is_empty() {
        return Ok(());
    }
    let batch = gateway.run_batch(cfg, &jobs)?;
    out.calls += jobs.len();
    out.usage += batch.total;
    for (id, result) in batch.results {
        match result {
            Ok(exchange) => on_success(&id, exchange, out),
            Err(e) => out.failures.push(RecordIssue::new(&id, e.to_string())),
        }
    }
    Ok(())
}

/// Which side of the attack a collection run queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectRole {
    Surrogate,
    Victim,
}

/// Queries an endpoint with each record's input.
///
/// Surrogate responses are split into trace and answer; a response without
/// delimiters is kept whole as the trace and flagged. Victim responses keep
/// the trace only if one is visible, and the provider summary if exposed.
pub fn collect(
    gateway: &Gateway,
    cfg: &EndpointConfig,
    inputs: &[&ReasoningRecord],
    role: CollectRole,
) -> Result<StageOutput, StageError> {
    let jobs = inputs
        .iter()
        .map(|r| (r.id.clone(), vec![ChatMessage::user(&r.input)]))
        .collect();
    let by_id: HashMap<&str, &ReasoningRecord> =
        inputs.iter().map(|r| (r.id.as_str(), *r)).collect();
    let mut out = StageOutput::default();
    run_jobs(gateway, cfg, jobs, &mut out, |id, ex, out| {
        let source = by_id[id];
        let mut record = ReasoningRecord::new(id, &source.input);
        record.usage = Some(ex.usage);
        let content = ex.response_content;
        if content.trim().is_empty() {
            out.flagged.push(RecordIssue::new(id, "empty response"));
        }
        match role {
            CollectRole::Surrogate => {
                record.source = RecordSource::Surrogate;
                match split_think(&content) {
                    Some((trace, answer)) => {
                        record.trace = Some(trace);
                        record.answer = Some(answer);
                    }
                    None => {
                        if !content.trim().is_empty() {
                            out.flagged.push(RecordIssue::new(
                                id,
                                "no think delimiters; whole response kept as trace",
                            ));
                        }
                        record.trace = Some(content.trim().to_owned());
                        record.answer = Some(String::new());
                    }
                }
            }
            CollectRole::Victim => {
                record.source = RecordSource::Victim;
                record.summary = ex.response_summary;
                match split_think(&content) {
                    Some((trace, answer)) => {
                        record.trace = Some(trace);
                        record.answer = Some(answer);
                    }
                    None => record.answer = Some(content.trim().to_owned()),
                }
            }
        }
        out.records.push(record);
    })?;
    reorder(&mut out.records, inputs.iter().map(|r| r.id.as_str()));
    Ok(out)
}

fn reorder<'a>(records: &mut [ReasoningRecord], order: impl Iterator<Item = &'a str>) {
    let rank: HashMap<&str, usize> = order.enumerate().map(|(i, id)| (id, i)).collect();
    records.sort_by_key(|r| rank.get(r.id.as_str()).copied().unwrap_or(usize::MAX));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionStat {
    pub trace_tokens: usize,
    pub summary_tokens: usize,
    pub ratio: f64,
}

pub fn compression_ratio(trace_tokens: f64, summary_tokens: f64) -> f64 {
    trace_tokens / summary_tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionSummary {
    pub per_record: Vec<(String, CompressionStat)>,
    pub mean_trace_tokens: f64,
    pub mean_summary_tokens: f64,
    /// Mean trace length over mean summary length; the headline figure.
    pub ratio_of_means: f64,
    pub mean_ratio: f64,
}

impl CompressionSummary {
    pub fn from_stats(per_record: Vec<(String, CompressionStat)>) -> Option<Self> {
        if per_record.is_empty() {
            return None;
        }
        let n = per_record.len() as f64;
        let mean =
            |f: fn(&CompressionStat) -> f64| per_record.iter().map(|(_, s)| f(s)).sum::<f64>() / n;
        let mean_trace_tokens = mean(|s| s.trace_tokens as f64);
        let mean_summary_tokens = mean(|s| s.summary_tokens as f64);
        let mean_ratio = mean(|s| s.ratio);
        Some(Self {
            ratio_of_means: compression_ratio(mean_trace_tokens, mean_summary_tokens),
            mean_trace_tokens,
            mean_summary_tokens,
            mean_ratio,
            per_record,
        })
    }
}

/// Attaches a compressor-written summary to each record that has a trace.
///
/// Summaries that come back empty are flagged and left out of the ratio
/// statistics.
pub fn compress_traces(
    gateway: &Gateway,
    cfg: &EndpointConfig,
    prompts: &PromptSet,
    records: &[ReasoningRecord],
) -> Result<(StageOutput, Option<CompressionSummary>), StageError> {
    let mut out = StageOutput::default();
    let mut jobs = Vec::new();
    for r in records {
        match r.trace.as_deref() {
            Some(t) if !t.trim().is_empty() => jobs.push((r.id.clone(), prompts.compression(t)?)),
            _ => out
                .failures
                .push(RecordIssue::new(&r.id, "no trace to compress")),
        }
    }
    let by_id: HashMap<&str, &ReasoningRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut stats = Vec::new();
    run_jobs(gateway, cfg, jobs, &mut out, |id, ex, out| {
        let original = by_id[id];
        let summary = match split_think(&ex.response_content) {
            Some((_, after)) => after,
            None => ex.response_content.trim().to_owned(),
        };
        let mut record = original.clone();
        record.source = RecordSource::Compressor;
        record.usage = Some(ex.usage);
        let summary_tokens = token_len(&summary);
        if summary_tokens == 0 {
            out.flagged.push(RecordIssue::new(id, "empty summary"));
        } else {
            let trace_tokens = token_len(original.trace.as_deref().unwrap_or_default());
            let ratio = compression_ratio(trace_tokens as f64, summary_tokens as f64);
            stats.push((
                id.to_owned(),
                CompressionStat {
                    trace_tokens,
                    summary_tokens,
                    ratio,
                },
            ));
        }
        record.summary = Some(summary);
        out.records.push(record);
    })?;
    reorder(&mut out.records, records.iter().map(|r| r.id.as_str()));
    let order: HashMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    stats.sort_by_key(|(id, _)| order[id.as_str()]);
    Ok((out, CompressionSummary::from_stats(stats)))
}

/// Examples built from records plus the records that were left out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SftBuild {
    pub examples: Vec<SftExample>,
    pub errors: Vec<RecordIssue>,
    /// Ids dropped because prompt plus target exceed the cutoff.
    pub over_length: Vec<String>,
    /// Ids dropped by the answer filter.
    pub filtered: Vec<String>,
}

/// Predicate deciding whether a record's answer is kept (e.g. correct
/// against a gold label).
pub type AnswerFilter = dyn Fn(&ReasoningRecord) -> bool + Sync + Send;

pub struct SftOptions<'a> {
    /// `None` keeps every example regardless of length.
    pub cutoff_len: Option<usize>,
    pub answer_filter: Option<&'a AnswerFilter>,
    pub exec: Execution,
}

impl Default for SftOptions<'_> {
    fn default() -> Self {
        Self {
            cutoff_len: Some(DEFAULT_CUTOFF_LEN),
            answer_filter: None,
            exec: Execution::default(),
        }
    }
}

fn finish_build(
    records: &[ReasoningRecord],
    built: Vec<Result<SftExample, RecordIssue>>,
    options: &SftOptions<'_>,
) -> SftBuild {
    let lengths = match options.cutoff_len {
        Some(_) => options.exec.map(&built, |b| {
            b.as_ref().map(SftExample::token_len).unwrap_or(0)
        }),
        None => vec![0; built.len()],
    };
    let mut build = SftBuild::default();
    for ((record, result), len) in records.iter().zip(built).zip(lengths) {
        match result {
            Err(issue) => build.errors.push(issue),
            Ok(_) if options.answer_filter.is_some_and(|f| !f(record)) => {
                build.filtered.push(record.id.clone())
            }
            Ok(example) if options.cutoff_len.is_some_and(|c| len > c) => {
                build.over_length.push(example.id)
            }
            Ok(example) => build.examples.push(example),
        }
    }
    build
}

fn checked_trace(r: &ReasoningRecord) -> Result<&str, RecordIssue> {
    let trace = r
        .trace
        .as_deref()
        .ok_or_else(|| RecordIssue::missing(&r.id, "trace"))?;
    if trace.is_empty() {
        return Err(RecordIssue::new(&r.id, "trace is empty"));
    }
    if trace.contains(THINK_CLOSE) {
        return Err(RecordIssue::new(
            &r.id,
            "trace contains a closing think-delimiter",
        ));
    }
    Ok(trace)
}

/// Builds the inversion training set: prompt conditions on (input, answer
/// [, summary]), target is the think-delimited surrogate trace.
pub fn build_inversion_set(
    records: &[ReasoningRecord],
    setting: InversionSetting,
    prompts: &PromptSet,
    options: &SftOptions<'_>,
) -> SftBuild {
    let built = options.exec.map(records, |r| {
        let trace = checked_trace(r)?;
        let answer = r
            .answer
            .as_deref()
            .ok_or_else(|| RecordIssue::missing(&r.id, "answer"))?;
        let summary = match setting {
            InversionSetting::Summary => Some(
                r.summary
                    .as_deref()
                    .ok_or_else(|| RecordIssue::missing(&r.id, "summary"))?,
            ),
            InversionSetting::NoSummary => None,
        };
        let prompt = prompts
            .trained_inversion(setting.uses_summary(), &r.input, answer, summary)
            .map_err(|e| RecordIssue::new(&r.id, e.to_string()))?;
        Ok(SftExample {
            id: r.id.clone(),
            prompt,
            target: wrap_think(trace),
            setting: setting.sft_setting(),
        })
    });
    finish_build(records, built, options)
}

/// Builds a student fine-tuning set for one data variant. The prompt is the
/// input verbatim.
pub fn build_student_set(
    records: &[ReasoningRecord],
    variant: StudentVariant,
    options: &SftOptions<'_>,
) -> SftBuild {
    let built = options.exec.map(records, |r| {
        let answer = r
            .answer
            .as_deref()
            .ok_or_else(|| RecordIssue::missing(&r.id, "answer"))?;
        let target = if variant.needs_trace() {
            let trace = checked_trace(r)?;
            format!("{THINK_OPEN}{trace}{TRACE_ANSWER_SEPARATOR}{answer}")
        } else if variant == StudentVariant::AnswerPlusSummary {
            let summary = r
                .summary
                .as_deref()
                .ok_or_else(|| RecordIssue::missing(&r.id, "summary"))?;
            format!("{summary}\n{answer}")
        } else {
            answer.to_owned()
        };
        if target.is_empty() {
            return Err(RecordIssue::new(&r.id, "target is empty"));
        }
        Ok(SftExample {
            id: r.id.clone(),
            prompt: r.input.clone(),
            target,
            setting: variant.sft_setting(),
        })
    });
    finish_build(records, built, options)
}

/// Runs a served inversion model over victim records, producing
/// `source = inversion` records that carry the synthesized trace.
pub fn invert(
    gateway: &Gateway,
    cfg: &EndpointConfig,
    prompts: &PromptSet,
    victims: &[ReasoningRecord],
    setting: InversionSetting,
) -> Result<StageOutput, StageError> {
    let mut out = StageOutput::default();
    let mut jobs = Vec::new();
    for r in victims {
        let Some(answer) = r.answer.as_deref() else {
            out.failures.push(RecordIssue::missing(&r.id, "answer"));
            continue;
        };
        let summary = match (setting, r.summary.as_deref()) {
            (InversionSetting::Summary, None) => {
                out.failures.push(RecordIssue::missing(&r.id, "summary"));
                continue;
            }
            (InversionSetting::Summary, s) => s,
            (InversionSetting::NoSummary, _) => None,
        };
        let prompt =
            prompts.trained_inversion(setting.uses_summary(), &r.input, answer, summary)?;
        jobs.push((r.id.clone(), vec![ChatMessage::user(prompt)]));
    }
    let by_id: HashMap<&str, &ReasoningRecord> =
        victims.iter().map(|r| (r.id.as_str(), r)).collect();
    run_jobs(gateway, cfg, jobs, &mut out, |id, ex, out| {
        let victim = by_id[id];
        let trace = match split_think(&ex.response_content) {
            Some((trace, _)) => trace,
            None => {
                out.flagged.push(RecordIssue::new(
                    id,
                    "no think delimiters; whole response kept as trace",
                ));
                ex.response_content.trim().to_owned()
            }
        };
        if trace.is_empty() {
            out.flagged
                .push(RecordIssue::new(id, "empty synthesized trace"));
        }
        let mut record = ReasoningRecord::new(id, &victim.input);
        record.answer = victim.answer.clone();
        record.summary = victim.summary.clone();
        record.trace = Some(trace);
        record.source = RecordSource::Inversion;
        record.usage = Some(ex.usage);
        out.records.push(record);
    })?;
    reorder(&mut out.records, victims.iter().map(|r| r.id.as_str()));
    Ok(out)
}

/// Next-token probabilities of the model being scored.
pub trait ProbabilityOracle {
    fn vocab_size(&self) -> usize;
    /// Probability of `token` following `context`.
    fn probability(&self, context: &[String], token: &str) -> f64;
}

/// Uniform distribution over a vocabulary; ignores context.
#[derive(Debug, Clone, Copy)]
pub struct UniformOracle {
    pub vocab_size: usize,
}

impl ProbabilityOracle for UniformOracle {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn probability(&self, _context: &[String], _token: &str) -> f64 {
        1.0 / self.vocab_size as f64
    }
}

/// Assigns the same probability to whatever token is asked about.
#[derive(Debug, Clone, Copy)]
pub struct ConstantOracle {
    pub p: f64,
    pub vocab_size: usize,
}

impl ProbabilityOracle for ConstantOracle {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn probability(&self, _context: &[String], _token: &str) -> f64 {
        self.p
    }
}

/// Knows the full token sequence and predicts it with certainty.
#[derive(Debug, Clone)]
pub struct PerfectOracle {
    pub sequence: Vec<String>,
}

impl ProbabilityOracle for PerfectOracle {
    fn vocab_size(&self) -> usize {
        self.sequence.len().max(1)
    }

    fn probability(&self, context: &[String], token: &str) -> f64 {
        match self.sequence.get(context.len()) {
            Some(expected) if expected == token => 1.0,
            _ => 0.0,
        }
    }
}

/// Mean negative log-likelihood (nats) of the example's target tokens under
/// teacher forcing. Prompt tokens are context only.
pub fn cross_entropy(
    oracle: &dyn ProbabilityOracle,
    example: &SftExample,
    tokenizer: &dyn Fn(&str) -> Vec<String>,
) -> Result<f64, StageError> {
    let mut context = tokenizer(&example.prompt);
    let target = tokenizer(&example.target);
    if target.is_empty() {
        return Err(StageError::EmptyTarget);
    }
    let mut total = 0.0;
    for (position, token) in target.iter().enumerate() {
        let p = oracle.probability(&context, token);
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(StageError::InvalidProbability { position, value: p });
        }
        total -= p.ln();
        context.push(token.clone());
    }
    Ok(total / target.len() as f64)
}

/// [`cross_entropy`] with the metrics tokenizer.
pub fn cross_entropy_default(
    oracle: &dyn ProbabilityOracle,
    example: &SftExample,
) -> Result<f64, StageError> {
    cross_entropy(oracle, example, &tokenize)
}
