//! Prompt templates with literal `{name}` placeholder substitution.
//!
//! The compression and zero-shot inversion templates ship as text assets
//! under `assets/prompts/`; their SHA-256 digests are pinned in
//! `assets/prompts.sha256`. The trained-inversion templates are a compact
//! sectioned format used for both inversion training and inference.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ChatMessage;

pub const COMPRESSION_BODY: &str = include_str!("../assets/prompts/compression.txt");
pub const ZEROSHOT_WITH_SUMMARY_BODY: &str =
    include_str!("../assets/prompts/zeroshot_inversion_with_summary.txt");
pub const ZEROSHOT_NO_SUMMARY_BODY: &str =
    include_str!("../assets/prompts/zeroshot_inversion_no_summary.txt");
/// `sha256sum` output for the three asset templates.
pub const ASSET_DIGESTS: &str = include_str!("../assets/prompts.sha256");

const TRAINED_WITH_SUMMARY_BODY: &str = "### Problem\n{user_prompt}\n\n### Final Answer\n{assistant_answer}\n\n### Reasoning Summary\n{reasoning_summary}\n\n### Reconstruct the full reasoning trace:";
const TRAINED_NO_SUMMARY_BODY: &str =
    "### Problem\n{user_prompt}\n\n### Final Answer\n{assistant_answer}\n\n### Reconstruct the full reasoning trace:";

/// Placeholder names a template may use.
pub const PLACEHOLDERS: [&str; 4] = [
    "thinking_content",
    "user_prompt",
    "assistant_answer",
    "reasoning_summary",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("missing binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("binding `{0}` does not match any placeholder of the template")]
    ExtraneousBinding(String),
    #[error("template contains unresolved placeholder `{{{0}}}`")]
    UnresolvedPlaceholder(String),
    #[error("summary setting requires a reasoning summary")]
    MissingSummary,
    #[error("no-summary setting must not be given a reasoning summary")]
    UnexpectedSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Compression,
    ZeroshotInversionWithSummary,
    ZeroshotInversionNoSummary,
    TrainedInversionWithSummary,
    TrainedInversionNoSummary,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::Compression,
        TemplateName::ZeroshotInversionWithSummary,
        TemplateName::ZeroshotInversionNoSummary,
        TemplateName::TrainedInversionWithSummary,
        TemplateName::TrainedInversionNoSummary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Compression => "compression",
            TemplateName::ZeroshotInversionWithSummary => "zeroshot_inversion_with_summary",
            TemplateName::ZeroshotInversionNoSummary => "zeroshot_inversion_no_summary",
            TemplateName::TrainedInversionWithSummary => "trained_inversion_with_summary",
            TemplateName::TrainedInversionNoSummary => "trained_inversion_no_summary",
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateName::Compression => COMPRESSION_BODY,
            TemplateName::ZeroshotInversionWithSummary => ZEROSHOT_WITH_SUMMARY_BODY,
            TemplateName::ZeroshotInversionNoSummary => ZEROSHOT_NO_SUMMARY_BODY,
            TemplateName::TrainedInversionWithSummary => TRAINED_WITH_SUMMARY_BODY,
            TemplateName::TrainedInversionNoSummary => TRAINED_NO_SUMMARY_BODY,
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

/// A parsed template. Construction fails if the body uses a `{name}` token
/// outside [`PLACEHOLDERS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: TemplateName,
    body: String,
    segments: Vec<Segment>,
    placeholders: BTreeSet<String>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn parse_segments(body: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let name = &after[..close];
                if !PLACEHOLDERS.contains(&name) {
                    return Err(PromptError::UnresolvedPlaceholder(name.to_owned()));
                }
                if !text.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                }
                segments.push(Segment::Slot(name.to_owned()));
                rest = &after[close + 1..];
            }
            _ => {
                text.push('{');
                rest = after;
            }
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        segments.push(Segment::Text(text));
    }
    Ok(segments)
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let segments = parse_segments(&body)?;
        let placeholders = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.clone()),
                Segment::Text(_) => None,
            })
            .collect();
        Ok(Self {
            name,
            body,
            segments,
            placeholders,
        })
    }

    pub fn builtin(name: TemplateName) -> Self {
        Self::new(name, name.builtin_body()).expect("built-in templates are valid")
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    pub fn digest(&self) -> String {
        crate::sha256_hex(self.body.as_bytes())
    }

    /// Substitutes bindings literally; binding text is never re-expanded.
    /// Bindings must cover exactly the template's placeholders.
    pub fn render_text(&self, bindings: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
        if let Some(extra) = bindings.keys().find(|k| !self.placeholders.contains(**k)) {
            return Err(PromptError::ExtraneousBinding((*extra).to_owned()));
        }
        let mut out = String::with_capacity(self.body.len());
        for segment in &self.segments {
            match segment {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let value = bindings
                        .get(name.as_str())
                        .ok_or_else(|| PromptError::MissingBinding(name.clone()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    /// Renders into a single user message.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<Vec<ChatMessage>, PromptError> {
        Ok(vec![ChatMessage::user(self.render_text(bindings)?)])
    }
}

/// The set of templates a pipeline run uses; built-ins unless overridden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: TemplateName::ALL
                .iter()
                .map(|&n| (n, PromptTemplate::builtin(n)))
                .collect(),
        }
    }
}

impl PromptSet {
    pub fn with_override(
        mut self,
        name: TemplateName,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        self.templates
            .insert(name, PromptTemplate::new(name, body)?);
        Ok(self)
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn compression(&self, trace: &str) -> Result<Vec<ChatMessage>, PromptError> {
        self.get(TemplateName::Compression)
            .render(&BTreeMap::from([("thinking_content", trace)]))
    }

    /// Conditioning prompt for a fine-tuned inversion model.
    pub fn trained_inversion(
        &self,
        with_summary: bool,
        input: &str,
        answer: &str,
        summary: Option<&str>,
    ) -> Result<String, PromptError> {
        let mut bindings = BTreeMap::from([("user_prompt", input), ("assistant_answer", answer)]);
        let name = match (with_summary, summary) {
            (true, Some(s)) => {
                bindings.insert("reasoning_summary", s);
                TemplateName::TrainedInversionWithSummary
            }
            (true, None) => return Err(PromptError::MissingSummary),
            (false, None) => TemplateName::TrainedInversionNoSummary,
            (false, Some(_)) => return Err(PromptError::UnexpectedSummary),
        };
        self.get(name).render_text(&bindings)
    }
}

/// Zero-shot inversion prompt for an untuned instruction model.
pub fn zeroshot_inversion(
    input: &str,
    answer: &str,
    summary: Option<&str>,
) -> Result<Vec<ChatMessage>, PromptError> {
    let mut bindings = BTreeMap::from([("user_prompt", input), ("assistant_answer", answer)]);
    let name = match summary {
        Some(s) => {
            bindings.insert("reasoning_summary", s);
            TemplateName::ZeroshotInversionWithSummary
        }
        None => TemplateName::ZeroshotInversionNoSummary,
    };
    PromptTemplate::builtin(name).render(&bindings)
}

/// Trained-inversion prompt with the built-in templates.
pub fn trained_inversion_prompt(
    with_summary: bool,
    input: &str,
    answer: &str,
    summary: Option<&str>,
) -> Result<Vec<ChatMessage>, PromptError> {
    PromptSet::default()
        .trained_inversion(with_summary, input, answer, summary)
        .map(|text| vec![ChatMessage::user(text)])
}
