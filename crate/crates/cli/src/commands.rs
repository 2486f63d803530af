use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tinv_core::corpus::{emit_jsonl, Corpus, CorpusFormat};
use tinv_core::economics::budget_subset;
use tinv_core::metrics::{score_pairs, MetricReport};
use tinv_core::stages::{
    build_inversion_set, build_student_set, collect, compress_traces, emit_sft_jsonl, invert,
    CollectRole, CompressionSummary, RecordIssue, SftBuild, SftOptions, StageOutput,
    TrainingConfig,
};
use tinv_core::{
    Execution, Gateway, InversionSetting, ReasoningRecord, Role, SplitManifest, StudentVariant,
    TemplateName, UsageStats, UsdAmount,
};

use crate::config::{Backend, PipelineConfig};
use crate::runlog::RunManifest;

/// How a command finished when it did not hit a configuration error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some records failed; outputs hold the rest.
    Partial,
}

impl Outcome {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Outcome::Success
        } else {
            Outcome::Partial
        }
    }
}

/// File names inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

fn suffixed(stem: &str, budget: Option<usize>, ext: &str) -> String {
    match budget {
        Some(b) => format!("{stem}.b{b}.{ext}"),
        None => format!("{stem}.{ext}"),
    }
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn records(&self, stem: &str, budget: Option<usize>) -> PathBuf {
        self.dir.join(suffixed(stem, budget, "jsonl"))
    }

    pub fn usage_log(&self, stem: &str, budget: Option<usize>) -> PathBuf {
        self.dir.join(suffixed(stem, budget, "usage.json"))
    }

    pub fn compression_stats(&self) -> PathBuf {
        self.dir.join("compressed.stats.json")
    }

    pub fn sft(&self, name: &str, ext: &str) -> PathBuf {
        self.dir.join("sft").join(format!("{name}.{ext}"))
    }

    pub fn score(&self, budget: Option<usize>, ext: &str) -> PathBuf {
        self.dir.join(suffixed("score", budget, ext))
    }

    pub fn report(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("report.{ext}"))
    }
}

fn stage_name(base: &str, budget: Option<usize>) -> String {
    match budget {
        Some(b) => format!("{base}.b{b}"),
        None => base.to_owned(),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub(crate) fn read_records(path: &Path) -> Result<Vec<ReasoningRecord>> {
    if !path.is_file() {
        bail!(
            "{} not found; run the stage that produces it first",
            path.display()
        );
    }
    Ok(Corpus::ingest(path, CorpusFormat::Jsonl)?.into_records())
}

fn load_split(layout: &Layout) -> Result<SplitManifest> {
    let path = layout.manifest();
    if !path.is_file() {
        bail!("{} not found; run `split` first", path.display());
    }
    read_json(&path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordUsage {
    pub id: String,
    pub usage: UsageStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLine {
    pub picodollars: u128,
    pub display: String,
}

impl From<UsdAmount> for CostLine {
    fn from(a: UsdAmount) -> Self {
        Self {
            picodollars: a.picodollars,
            display: a.to_string(),
        }
    }
}

/// Per-stage sidecar: what was called, what failed, and what it cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageLog {
    pub stage: String,
    pub role: Role,
    pub model: String,
    pub calls: usize,
    pub records: usize,
    pub failures: Vec<RecordIssue>,
    pub flagged: Vec<RecordIssue>,
    pub total: UsageStats,
    pub per_record: Vec<RecordUsage>,
    pub cost: Option<CostLine>,
}

/// Where an endpoint stage writes and what it read.
struct EndpointStage<'p> {
    stage: &'p str,
    role: Role,
    records_path: &'p Path,
    usage_path: &'p Path,
    inputs: &'p [&'p Path],
    extra_outputs: &'p [&'p Path],
    params: BTreeMap<String, Value>,
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    layout: Layout,
}

impl Ctx<'_> {
    fn gateway(&self, role: Role) -> Result<(Gateway, Backend, &tinv_core::EndpointConfig)> {
        let endpoint = self.config.endpoint(role)?;
        let backend = Backend::for_endpoint(endpoint, &self.config.base_dir)?;
        Ok((Gateway::new(backend.chat()), backend, &endpoint.config))
    }

    fn usage_log(&self, stage: &str, role: Role, out: &StageOutput) -> Result<UsageLog> {
        let endpoint = self.config.endpoint(role)?;
        let per_record: Vec<RecordUsage> = out
            .records
            .iter()
            .filter_map(|r| {
                r.usage.map(|usage| RecordUsage {
                    id: r.id.clone(),
                    usage,
                })
            })
            .collect();
        Ok(UsageLog {
            stage: stage.to_owned(),
            role,
            model: endpoint.config.model_name.clone(),
            calls: out.calls,
            records: out.records.len(),
            failures: out.failures.clone(),
            flagged: out.flagged.clone(),
            total: out.usage,
            per_record,
            cost: self
                .config
                .pricing
                .get(&role)
                .map(|p| p.cost(&out.usage).into()),
        })
    }

    fn params(&self, pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs
            .iter()
            .map(|(k, v)| ((*k).to_owned(), v.clone()))
            .collect()
    }

    fn record(
        &self,
        stage: &str,
        inputs: &[&Path],
        outputs: &[&Path],
        params: BTreeMap<String, Value>,
        concurrency: Option<(usize, usize)>,
    ) -> Result<()> {
        RunManifest::record(
            &self.layout.dir,
            stage,
            inputs,
            outputs,
            &self.config.digest(),
            params,
            concurrency,
        )
    }

    /// Writes an endpoint stage's records and usage log and records the stage.
    fn finish_endpoint_stage(
        &self,
        spec: EndpointStage<'_>,
        out: &StageOutput,
        backend: &Backend,
    ) -> Result<Outcome> {
        let EndpointStage {
            stage,
            role,
            records_path,
            usage_path,
            inputs,
            extra_outputs,
            params,
        } = spec;
        write(records_path, &emit_jsonl(&out.records))?;
        let log = self.usage_log(stage, role, out)?;
        write_json(usage_path, &log)?;
        let max_in_flight = self.config.endpoint(role)?.config.max_in_flight;
        let concurrency = backend.high_water_mark().map(|h| (h, max_in_flight));
        let mut outputs = vec![records_path, usage_path];
        outputs.extend_from_slice(extra_outputs);
        self.record(stage, inputs, &outputs, params, concurrency)?;
        let cost = log
            .cost
            .as_ref()
            .map(|c| format!(", cost {}", c.display))
            .unwrap_or_default();
        println!(
            "{stage}: {} record(s), {} failure(s), {} flagged; tokens in {} / out {}{cost}",
            out.records.len(),
            out.failures.len(),
            out.flagged.len(),
            out.usage.prompt_tokens,
            out.usage.completion_tokens,
        );
        for f in &out.failures {
            eprintln!("  failed {}: {}", f.id, f.reason);
        }
        Ok(Outcome::from_failures(out.failures.len()))
    }

    fn write_sft(
        &self,
        stage: &str,
        name: &str,
        build: &SftBuild,
        inputs: &[&Path],
        params: BTreeMap<String, Value>,
    ) -> Result<Outcome> {
        let data = self.layout.sft(name, "jsonl");
        let sidecar = self.layout.sft(name, "config.json");
        let issues = self.layout.sft(name, "issues.json");
        write(&data, &emit_sft_jsonl(&build.examples))?;
        write(&sidecar, &TrainingConfig::default().to_json())?;
        write_json(
            &issues,
            &json!({"errors": build.errors, "over_length": build.over_length, "filtered": build.filtered}),
        )?;
        self.record(stage, inputs, &[&data, &sidecar, &issues], params, None)?;
        println!(
            "{name}: {} example(s), {} error(s), {} over length",
            build.examples.len(),
            build.errors.len(),
            build.over_length.len()
        );
        for e in &build.errors {
            eprintln!("  skipped {}: {}", e.id, e.reason);
        }
        Ok(Outcome::from_failures(build.errors.len()))
    }

    fn victim_ids(&self, manifest: &SplitManifest, budget: Option<usize>) -> Result<Vec<String>> {
        match budget {
            None => Ok(manifest.victim_ids.clone()),
            Some(b) => Ok(budget_subset(manifest, b, self.config.seed)?),
        }
    }
}

pub fn split(config: &PipelineConfig) -> Result<Outcome> {
    let ctx = Ctx {
        config,
        layout: Layout::new(&config.out_dir),
    };
    let corpus = Corpus::ingest(&config.corpus.path, config.corpus.format)?;
    let manifest = SplitManifest::make(
        &corpus,
        config.splits.surrogate,
        config.splits.victim,
        config.seed,
    )?;
    let path = ctx.layout.manifest();
    write(&path, &manifest.to_json())?;
    ctx.record(
        "split",
        &[&config.corpus.path],
        &[&path],
        ctx.params(&[("seed", json!(config.seed))]),
        None,
    )?;
    println!(
        "split: {} records -> {} surrogate, {} victim (seed {})",
        corpus.len(),
        manifest.surrogate_ids.len(),
        manifest.victim_ids.len(),
        config.seed
    );
    Ok(Outcome::Success)
}

pub fn collect_role(
    config: &PipelineConfig,
    role: CollectRole,
    budget: Option<usize>,
) -> Result<Outcome> {
    let ctx = Ctx {
        config,
        layout: Layout::new(&config.out_dir),
    };
    let manifest = load_split(&ctx.layout)?;
    let corpus = Corpus::ingest(&config.corpus.path, config.corpus.format)?;
    manifest.verify(&corpus)?;
    let (stem, endpoint_role, ids) = match role {
        CollectRole::Surrogate => {
            if budget.is_some() {
                bail!("--budget applies to victim collection only");
            }
            ("surrogate", Role::Surrogate, manifest.surrogate_ids.clone())
        }
        CollectRole::Victim => ("victim", Role::Victim, ctx.victim_ids(&manifest, budget)?),
    };
    let inputs = corpus.select(&ids)?;
    let (gateway, backend, cfg) = ctx.gateway(endpoint_role)?;
    let out = collect(&gateway, cfg, &inputs, role)?;
    let stage = stage_name(&format!("collect_{stem}"), budget);
    let params = ctx.params(&[("budget", json!(budget))]);
    let spec = EndpointStage {
        stage: &stage,
        role: endpoint_role,
        records_path: &ctx.layout.records(stem, budget),
        usage_path: &ctx.layout.usage_log(stem, budget),
        inputs: &[&config.corpus.path, &ctx.layout.manifest()],
        extra_outputs: &[],
        params,
    };
    ctx.finish_endpoint_stage(spec, &out, &backend)
}

pub fn compress(config: &PipelineConfig) -> Result<Outcome> {
    let ctx = Ctx {
        config,
        layout: Layout::new(&config.out_dir),
    };
    let source = ctx.layout.records("surrogate", None);
    let records = read_records(&source)?;
    let prompts = config.prompts()?;
    let (gateway, backend, cfg) = ctx.gateway(Role::Compressor)?;
    let (out, summary) = compress_traces(&gateway, cfg, &prompts, &records)?;
    let stats_path = ctx.layout.compression_stats();
    write_json(&stats_path, &summary)?;
    if let Some(s) = &summary {
        println!(
            "compress: mean trace {:.1} tokens, mean summary {:.1} tokens, ratio {:.2}x",
            s.mean_trace_tokens, s.mean_summary_tokens, s.ratio_of_means
        );
    }
    let spec = EndpointStage {
        stage: "compress",
        role: Role::Compressor,
        records_path: &ctx.layout.records("compressed", None),
        usage_path: &ctx.layout.usage_log("compressed", None),
        inputs: &[&source],
        extra_outputs: &[&stats_path],
        params: ctx.params(&[(
            "template",
            json!(prompts.get(TemplateName::Compression).digest()),
        )]),
    };
    ctx.finish_endpoint_stage(spec, &out, &backend)
}

fn setting_value(setting: InversionSetting) -> Value {
    json!(setting.to_string())
}

pub fn build_inversion(config: &PipelineConfig, setting: InversionSetting) -> Result<Outcome> {
    let ctx = Ctx {
        config,
        layout: Layout::new(&config.out_dir),
    };
    let source = match setting {
        InversionSetting::Summary => ctx.layout.records("compressed", None),
        InversionSetting::NoSummary => ctx.layout.records("surrogate", None),
    };
    let records = read_records(&source)?;
    let build = build_inversion_set(
        &records,
        setting,
        &config.prompts()?,
        &SftOptions::default(),
    );
    ctx.write_sft(
        "build_inversion",
        "inversion",
        &build,
        &[&source],
        ctx.params(&[("setting", setting_value(setting))]),
    )
}

pub fn run_invert(
    config: &PipelineConfig,
    setting: InversionSetting,
    budget: Option<usize>,
) -> Result<Outcome> {
    let ctx = Ctx {
        config,
        layout: Layout::new(&config.out_dir),
    };
    if let Some(run) = RunManifest::load(&ctx.layout.dir)? {
        run.check_param("build_inversion", "setting", &setting_value(setting))?;
    }
    let source = ctx.layout.records("victim", budget);
    let victims = read_records(&source)?;
    let (gateway, backend, cfg) = ctx.gateway(Role::Inversion)?;
    let out = invert(&gateway, cfg, &config.prompts()?, &victims, setting)?;
    let spec = EndpointStage {
        stage: &stage_name("invert", budget),
        role: Role::Inversion,
        records_path: &ctx.layout.records("inverted", budget),
        usage_path: &ctx.layout.usage_log("inverted", budget),
        inputs: &[&source],
        extra_outputs: &[],
        params: ctx.params(&[
            ("setting", setting_value(setting)),
            ("budget", json!(budget)),
        ]),
    };
    ctx.finish_endpoint_stage(spec, &out, &backend)
}

pub fn build_sft(
    config: &PipelineConfig,
    variant: StudentVariant,
    budget: Option<usize>,
) -> Result<Outcome> {
    let ctx = Ctx {
        config,
        layout: Layout::new(&config.out_dir),
    };
    let source = match variant {
        StudentVariant::SynthesizedTrace => ctx.layout.records("inverted", budget),
        StudentVariant::SurrogateTrace => {
            if budget.is_some() {
                bail!("--budget does not apply to the surrogate_trace variant");
            }
            ctx.layout.records("surrogate", None)
        }
        StudentVariant::VictimTrace
        | StudentVariant::AnswerOnly
        | StudentVariant::AnswerPlusSummary => ctx.layout.records("victim", budget),
    };
    let records = read_records(&source)?;
    let build = build_student_set(&records, variant, &SftOptions::default());
    let name = match budget {
        Some(b) => format!("student_{variant}.b{b}"),
        None => format!("student_{variant}"),
    };
    ctx.write_sft(
        &format!("build_sft.{name}"),
        &name,
        &build,
        &[&source],
        ctx.params(&[("variant", json!(variant)), ("budget", json!(budget))]),
    )
}

pub fn score(
    config: &PipelineConfig,
    candidates: Option<PathBuf>,
    references: Option<PathBuf>,
    budget: Option<usize>,
) -> Result<Outcome> {
    let ctx = Ctx {
        config,
        layout: Layout::new(&config.out_dir),
    };
    let candidates = candidates.unwrap_or_else(|| ctx.layout.records("inverted", budget));
    let references = references.unwrap_or_else(|| ctx.layout.records("victim", budget));
    let report: MetricReport = score_pairs(
        &read_records(&candidates)?,
        &read_records(&references)?,
        Execution::default(),
    )
    .with_context(|| {
        format!(
            "scoring {} against {}",
            candidates.display(),
            references.display()
        )
    })?;
    let json_path = ctx.layout.score(budget, "json");
    let text_path = ctx.layout.score(budget, "txt");
    write_json(&json_path, &report)?;
    let table = report.to_table();
    write(&text_path, &table)?;
    ctx.record(
        &stage_name("score", budget),
        &[&candidates, &references],
        &[&json_path, &text_path],
        BTreeMap::new(),
        None,
    )?;
    print!("{table}");
    Ok(Outcome::from_failures(report.failed.len()))
}

pub(crate) fn load_compression(layout: &Layout) -> Result<Option<CompressionSummary>> {
    read_json(&layout.compression_stats())
}
