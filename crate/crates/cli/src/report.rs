use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::Result;
use serde::Serialize;
use serde_json::{json, Value};
use tinv_core::economics::BudgetPlan;
use tinv_core::metrics::{MetricReport, TraceScore};
use tinv_core::stages::CompressionSummary;
use tinv_core::{Role, SplitManifest, UsageStats};

use crate::commands::{
    load_compression, read_json, read_records, CostLine, Layout, Outcome, UsageLog,
};
use crate::config::PipelineConfig;
use crate::runlog::RunManifest;

/// Stages a complete run goes through, in order. `build_sft` matches any
/// student variant.
pub const PIPELINE_STAGES: [&str; 8] = [
    "split",
    "collect_surrogate",
    "collect_victim",
    "compress",
    "build_inversion",
    "invert",
    "build_sft",
    "score",
];

const NOT_RUN: &str = "not run";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLine {
    pub stage: String,
    pub records: usize,
    pub failures: usize,
    pub flagged: usize,
    pub usage: UsageStats,
    pub cost: Option<CostLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetLine {
    pub budget: usize,
    /// Victim records of this budget's subset that were actually collected.
    pub collected: usize,
    pub usage: UsageStats,
    pub cost: Option<CostLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Section<T> {
    Present(T),
    Missing(&'static str),
}

impl<T> Section<T> {
    fn from_option(v: Option<T>) -> Self {
        v.map_or(Section::Missing(NOT_RUN), Section::Present)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionLine {
    pub records: usize,
    pub mean_trace_tokens: f64,
    pub mean_summary_tokens: f64,
    pub ratio_of_means: f64,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsLine {
    pub count: usize,
    pub means: TraceScore,
}

/// Everything a run directory says about itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub setting: String,
    pub splits: Section<Value>,
    pub stages: Vec<StageLine>,
    pub compression: Section<CompressionLine>,
    pub metrics: Section<MetricsLine>,
    pub usage_by_role: BTreeMap<Role, UsageStats>,
    pub cost_by_role: BTreeMap<Role, CostLine>,
    pub budgets: Section<Vec<BudgetLine>>,
    pub chain_violations: Vec<String>,
    pub gaps: Vec<String>,
}

fn usage_logs(layout: &Layout, run: &RunManifest) -> Result<Vec<UsageLog>> {
    let mut logs = Vec::new();
    for entry in run.stages.values() {
        for key in entry.outputs.keys().filter(|k| k.ends_with(".usage.json")) {
            logs.push(read_json::<UsageLog>(&layout.dir.join(key))?);
        }
    }
    Ok(logs)
}

fn budget_lines(
    config: &PipelineConfig,
    layout: &Layout,
    manifest: &SplitManifest,
) -> Result<Option<Vec<BudgetLine>>> {
    let victim_path = layout.records("victim", None);
    if config.budgets.is_empty() || !victim_path.is_file() {
        return Ok(None);
    }
    let usage: BTreeMap<String, UsageStats> = read_records(&victim_path)?
        .into_iter()
        .filter_map(|r| r.usage.map(|u| (r.id, u)))
        .collect();
    let plan = BudgetPlan {
        budgets: config.budgets.clone(),
        seed: config.seed,
    };
    let pricing = config.pricing.get(&Role::Victim);
    let lines = plan
        .subsets(manifest)?
        .into_iter()
        .map(|(budget, ids)| {
            let spent: Vec<UsageStats> =
                ids.iter().filter_map(|id| usage.get(id).copied()).collect();
            let total: UsageStats = spent.iter().sum();
            BudgetLine {
                budget,
                collected: spent.len(),
                usage: total,
                cost: pricing.map(|p| p.cost(&total).into()),
            }
        })
        .collect();
    Ok(Some(lines))
}

pub fn build(config: &PipelineConfig) -> Result<Option<RunReport>> {
    let layout = Layout::new(&config.out_dir);
    let Some(run) = RunManifest::load(&layout.dir)? else {
        return Ok(None);
    };
    let chain_violations = run.verify_chain(&layout.dir);
    let ran = |stage: &str| {
        run.stages
            .keys()
            .any(|k| k == stage || k.starts_with(&format!("{stage}.")))
    };
    let gaps = PIPELINE_STAGES
        .iter()
        .filter(|s| !ran(s))
        .map(|s| s.to_string())
        .collect();

    let manifest: Option<SplitManifest> = if ran("split") {
        Some(read_json(&layout.manifest())?)
    } else {
        None
    };
    let splits = manifest.as_ref().map(|m| {
        json!({
            "corpus_digest": m.corpus_digest,
            "seed": m.seed,
            "surrogate": m.surrogate_ids.len(),
            "victim": m.victim_ids.len(),
        })
    });

    let logs = usage_logs(&layout, &run)?;
    let mut usage_by_role: BTreeMap<Role, UsageStats> = BTreeMap::new();
    for log in &logs {
        *usage_by_role.entry(log.role).or_default() += log.total;
    }
    let cost_by_role = usage_by_role
        .iter()
        .filter_map(|(role, usage)| {
            config
                .pricing
                .get(role)
                .map(|p| (*role, p.cost(usage).into()))
        })
        .collect();
    let stages = logs
        .iter()
        .map(|l| StageLine {
            stage: l.stage.clone(),
            records: l.records,
            failures: l.failures.len(),
            flagged: l.flagged.len(),
            usage: l.total,
            cost: l.cost.clone(),
        })
        .collect();

    let compression = if ran("compress") {
        load_compression(&layout)?
    } else {
        None
    };
    let compression = compression.map(|s: CompressionSummary| CompressionLine {
        records: s.per_record.len(),
        mean_trace_tokens: s.mean_trace_tokens,
        mean_summary_tokens: s.mean_summary_tokens,
        ratio_of_means: s.ratio_of_means,
        mean_ratio: s.mean_ratio,
    });
    let metrics = if run.stages.contains_key("score") {
        let m: MetricReport = read_json(&layout.score(None, "json"))?;
        Some(MetricsLine {
            count: m.count,
            means: m.means,
        })
    } else {
        None
    };
    let budgets = match &manifest {
        Some(m) => budget_lines(config, &layout, m)?,
        None => None,
    };

    let setting = run
        .stages
        .get("build_inversion")
        .or_else(|| run.stages.get("invert"))
        .and_then(|e| e.params.get("setting"))
        .and_then(Value::as_str)
        .unwrap_or(NOT_RUN)
        .to_owned();

    Ok(Some(RunReport {
        setting,
        splits: Section::from_option(splits),
        stages,
        compression: Section::from_option(compression),
        metrics: Section::from_option(metrics),
        usage_by_role,
        cost_by_role,
        budgets: Section::from_option(budgets),
        chain_violations,
        gaps,
    }))
}

fn missing_or<T>(section: &Section<T>, out: &mut String, f: impl FnOnce(&T, &mut String)) {
    match section {
        Section::Present(v) => f(v, out),
        Section::Missing(why) => {
            let _ = writeln!(out, "  {why}");
        }
    }
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "setting: {}", self.setting);
        let _ = writeln!(out, "\nsplits:");
        missing_or(&self.splits, &mut out, |s, out| {
            let _ = writeln!(
                out,
                "  surrogate {}  victim {}  seed {}",
                s["surrogate"], s["victim"], s["seed"]
            );
        });
        let _ = writeln!(out, "\nstages:");
        for s in &self.stages {
            let cost = s.cost.as_ref().map(|c| c.display.as_str()).unwrap_or("-");
            let _ = writeln!(
                out,
                "  {:<24} records {:>6}  failures {:>4}  flagged {:>4}  in {:>10}  out {:>10}  cost {cost}",
                s.stage, s.records, s.failures, s.flagged, s.usage.prompt_tokens, s.usage.completion_tokens
            );
        }
        let _ = writeln!(out, "\ncompression:");
        missing_or(&self.compression, &mut out, |c, out| {
            let _ = writeln!(
                out,
                "  {} records  mean trace {:.1}  mean summary {:.1}  ratio {:.2}x",
                c.records, c.mean_trace_tokens, c.mean_summary_tokens, c.ratio_of_means
            );
        });
        let _ = writeln!(out, "\nmetrics:");
        missing_or(&self.metrics, &mut out, |m, out| {
            let s = &m.means;
            let _ = writeln!(
                out,
                "  n={}  Len {:.2}  BLEU {:.2}  TF1 {:.2}  R-1 {:.2}  R-2 {:.2}  R-L {:.2}  TokenRecall {:.2}",
                m.count, s.len, s.bleu, s.tf1, s.rouge1, s.rouge2, s.rouge_l, s.token_recall
            );
        });
        let _ = writeln!(out, "\ncost by role:");
        for (role, usage) in &self.usage_by_role {
            let cost = self
                .cost_by_role
                .get(role)
                .map(|c| c.display.as_str())
                .unwrap_or("-");
            let _ = writeln!(
                out,
                "  {role:<10} in {:>10}  out {:>10}  cost {cost}",
                usage.prompt_tokens, usage.completion_tokens
            );
        }
        let _ = writeln!(out, "\nbudgets:");
        missing_or(&self.budgets, &mut out, |lines, out| {
            for b in lines {
                let cost = b.cost.as_ref().map(|c| c.display.as_str()).unwrap_or("-");
                let _ = writeln!(
                    out,
                    "  {:>8} queries  collected {:>8}  cost {cost}",
                    b.budget, b.collected
                );
            }
        });
        if !self.gaps.is_empty() {
            let _ = writeln!(out, "\nnot run: {}", self.gaps.join(", "));
        }
        if !self.chain_violations.is_empty() {
            let _ = writeln!(out, "\nchain violations:");
            for v in &self.chain_violations {
                let _ = writeln!(out, "  {v}");
            }
        }
        out
    }

    pub fn outcome(&self) -> Outcome {
        if self.chain_violations.is_empty() {
            Outcome::Success
        } else {
            Outcome::Partial
        }
    }
}
