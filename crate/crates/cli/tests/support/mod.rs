//! Builds a self-contained mock run: corpus, per-role fixture files and a
//! config whose endpoints all use the in-process mock backend.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tinv_core::metrics::token_len;
use tinv_core::prompts::PromptSet;

pub const MAX_IN_FLIGHT: usize = 4;

pub struct MockRun {
    pub dir: tempfile::TempDir,
    pub records: usize,
}

fn trace(i: usize, who: &str) -> String {
    let steps = 5 + i % 7;
    (0..steps)
        .map(|s| format!("{who} step {s}: combine {} and {} carefully, then double-check the partial result.", i + s, 3 * s + 1))
        .collect::<Vec<_>>()
        .join(" ")
}

fn answer(i: usize) -> String {
    format!("The answer is {}.", i * 7 + 3)
}

fn input(i: usize) -> String {
    format!("Problem {i}: find the value of {} times 7 plus 3.", i)
}

fn summary(i: usize) -> String {
    format!("1. Multiply {i} by 7.\n2. Add 3.")
}

fn usage(prompt: &str, completion: &str) -> Value {
    json!({"prompt_tokens": token_len(prompt), "completion_tokens": token_len(completion)})
}

fn write_jsonl(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| r.to_string() + "\n").collect();
    fs::write(path, text).unwrap();
}

impl MockRun {
    /// `records` corpus rows split evenly between surrogate and victim.
    pub fn new(records: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let prompts = PromptSet::default();
        let mut corpus = Vec::new();
        let mut fixtures: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
        for i in 0..records {
            let x = input(i);
            corpus.push(json!({"id": format!("q{i:03}"), "input": x}));

            let s_trace = trace(i, "surrogate");
            let s_reply = format!("<think>{s_trace}</think>\n{}", answer(i));
            fixtures
                .entry("surrogate")
                .or_default()
                .push(json!({"prompt": x, "content": s_reply, "usage": usage(&x, &s_reply)}));

            let compress_msgs = prompts.compression(&s_trace).unwrap();
            let bubbles = format!("1. Combine the numbers for problem {i}.\n2. Check the result.");
            fixtures.entry("compressor").or_default().push(json!({
                "messages": compress_msgs,
                "content": bubbles,
                "usage": usage(&compress_msgs[0].content, &bubbles),
            }));

            let v_trace = trace(i, "victim");
            let v_reply = format!("<think>{v_trace}</think>\n{}", answer(i));
            fixtures.entry("victim").or_default().push(json!({
                "prompt": x,
                "content": v_reply,
                "summary": summary(i),
                "usage": {
                    "prompt_tokens": token_len(&x),
                    "completion_tokens": token_len(&v_reply),
                    "reasoning_tokens": token_len(&v_trace),
                },
            }));

            for with_summary in [true, false] {
                let b = with_summary.then(|| summary(i));
                let prompt = prompts
                    .trained_inversion(with_summary, &x, &answer(i), b.as_deref())
                    .unwrap();
                // The synthesized trace shares most steps with the victim's.
                let synthetic = format!(
                    "<think>{}</think>",
                    trace(i, "victim").replacen("carefully", "quickly", 2)
                );
                fixtures.entry("inversion").or_default().push(json!({
                    "prompt": prompt,
                    "content": synthetic,
                    "usage": usage(&prompt, &synthetic),
                }));
            }
        }
        write_jsonl(&root.join("corpus.jsonl"), &corpus);
        let mut endpoints = serde_json::Map::new();
        for (role, rows) in &fixtures {
            let file = format!("{role}.fixtures.jsonl");
            write_jsonl(&root.join(&file), rows);
            endpoints.insert(
                (*role).to_owned(),
                json!({
                    "base_url": "mock:",
                    "model_name": format!("{role}-mock"),
                    "max_in_flight": MAX_IN_FLIGHT,
                    "retry_base_ms": 1,
                    "mock": {"fallback": "error", "fixtures": file, "latency_ms": 2},
                }),
            );
        }
        let half = records / 2;
        let mut budgets = vec![half / 5, half / 2, records - half];
        budgets.retain(|&b| b > 0);
        budgets.dedup();
        let config = json!({
            "corpus": {"path": "corpus.jsonl", "format": "jsonl"},
            "splits": {"surrogate": half, "victim": records - half},
            "seed": 11,
            "endpoints": endpoints,
            "setting": "summary",
            "pricing": {"victim": {"input_usd_per_million": 0.25, "output_usd_per_million": 2.0, "reasoning_billed_as_output": true}},
            "budgets": budgets,
            "out_dir": "run",
        });
        fs::write(
            root.join("tinv.json"),
            serde_json::to_string_pretty(&config).unwrap(),
        )
        .unwrap();
        Self { dir, records }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PathBuf {
        self.root().join("tinv.json")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root().join("run")
    }

    /// Rewrites one top-level config field.
    pub fn set_config(&self, key: &str, value: Value) {
        let mut cfg: Value =
            serde_json::from_str(&fs::read_to_string(self.config()).unwrap()).unwrap();
        cfg[key] = value;
        fs::write(self.config(), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    }

    pub fn tinv(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tinv"))
            .arg("--config")
            .arg(self.config())
            .args(args)
            .output()
            .expect("tinv binary runs")
    }

    /// The full stage sequence, optionally into another run directory.
    pub fn pipeline(&self, out: Option<&Path>) -> Vec<(String, Output)> {
        let steps: [&[&str]; 10] = [
            &["split"],
            &["collect", "--role", "surrogate"],
            &["collect", "--role", "victim"],
            &["compress"],
            &["build-inversion", "--setting", "summary"],
            &["invert", "--setting", "summary"],
            &["build-sft", "--variant", "synthesized-trace"],
            &["build-sft", "--variant", "answer-plus-summary"],
            &["score"],
            &["report"],
        ];
        steps
            .iter()
            .map(|step| {
                let mut args: Vec<&str> = step.to_vec();
                let out_str;
                if let Some(o) = out {
                    out_str = o.to_string_lossy().into_owned();
                    args.extend(["--out", out_str.as_str()]);
                }
                (step.join(" "), self.tinv(&args))
            })
            .collect()
    }
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every regular file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(key, fs::read(&path).unwrap());
            }
        }
    }
    out
}
