use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tinv_core::sha256_hex;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// One command's entry in the run manifest.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageEntry {
    /// Input artifact -> sha256 of its bytes when the stage ran.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config_digest: String,
    /// Stage parameters such as setting, variant or budget.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
    /// Largest number of concurrent requests observed, when measurable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_in_flight: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageEntry>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Key under which an artifact is recorded: relative to the run directory
/// when inside it, otherwise the path as given.
pub fn artifact_key(out_dir: &Path, path: &Path) -> String {
    path.strip_prefix(out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn artifact_path(out_dir: &Path, key: &str) -> PathBuf {
    let p = Path::new(key);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

impl RunManifest {
    pub fn load(out_dir: &Path) -> Result<Option<Self>> {
        let path = out_dir.join(RUN_MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(manifest))
    }

    /// Records a finished stage, hashing its inputs and outputs now.
    pub fn record(
        out_dir: &Path,
        stage: &str,
        inputs: &[&Path],
        outputs: &[&Path],
        config_digest: &str,
        params: BTreeMap<String, Value>,
        concurrency: Option<(usize, usize)>,
    ) -> Result<()> {
        let mut manifest = Self::load(out_dir)?.unwrap_or_default();
        let hash_all = |paths: &[&Path]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((artifact_key(out_dir, p), file_digest(p)?)))
                .collect()
        };
        let entry = StageEntry {
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
            config_digest: config_digest.to_owned(),
            params,
            observed_in_flight: concurrency.map(|c| c.0),
            max_in_flight: concurrency.map(|c| c.1),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        manifest.stages.insert(stage.to_owned(), entry);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(out_dir.join(RUN_MANIFEST), text).context("writing run manifest")
    }

    /// Chain violations: outputs changed on disk since they were recorded,
    /// and inputs whose recorded digest differs from what the producing
    /// stage wrote.
    pub fn verify_chain(&self, out_dir: &Path) -> Vec<String> {
        let mut producers: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
        let mut problems = Vec::new();
        for (stage, entry) in &self.stages {
            for (key, digest) in &entry.outputs {
                producers.insert(key, (stage, digest));
                match file_digest(&artifact_path(out_dir, key)) {
                    Ok(d) if d == *digest => {}
                    Ok(_) => problems.push(format!(
                        "{stage}: output {key} changed after it was written"
                    )),
                    Err(_) => problems.push(format!("{stage}: output {key} is missing")),
                }
            }
        }
        for (stage, entry) in &self.stages {
            for (key, digest) in &entry.inputs {
                if let Some((producer, produced)) = producers.get(key.as_str()) {
                    if produced != digest {
                        problems.push(format!("{stage}: input {key} differs from what {producer} produced; rerun {stage}"));
                    }
                }
            }
        }
        problems
    }

    /// Fails when a dependent stage ran with a different value of `param`.
    pub fn check_param(&self, stage: &str, param: &str, value: &Value) -> Result<()> {
        if let Some(recorded) = self.stages.get(stage).and_then(|e| e.params.get(param)) {
            if recorded != value {
                bail!("{stage} ran with {param} = {recorded}, but this command uses {value}");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_detects_stale_inputs_and_edits() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
        fs::write(&a, "one").unwrap();
        RunManifest::record(
            dir.path(),
            "first",
            &[],
            &[&a],
            "cfg",
            BTreeMap::new(),
            None,
        )
        .unwrap();
        fs::write(&b, "two").unwrap();
        RunManifest::record(
            dir.path(),
            "second",
            &[&a],
            &[&b],
            "cfg",
            BTreeMap::new(),
            Some((2, 4)),
        )
        .unwrap();
        let run = RunManifest::load(dir.path()).unwrap().unwrap();
        assert!(run.verify_chain(dir.path()).is_empty());
        assert_eq!(
            run.stages["second"].inputs.keys().collect::<Vec<_>>(),
            ["a.txt"]
        );

        fs::write(&a, "changed").unwrap();
        RunManifest::record(
            dir.path(),
            "first",
            &[],
            &[&a],
            "cfg",
            BTreeMap::new(),
            None,
        )
        .unwrap();
        let problems = RunManifest::load(dir.path())
            .unwrap()
            .unwrap()
            .verify_chain(dir.path());
        assert_eq!(problems.len(), 1, "{problems:?}");
        assert!(problems[0].starts_with("second: input a.txt"));
    }

    #[test]
    fn param_mismatch_is_an_error() {
        let mut run = RunManifest::default();
        let mut entry = StageEntry::default();
        entry
            .params
            .insert("setting".into(), Value::from("summary"));
        run.stages.insert("build_inversion".into(), entry);
        assert!(run
            .check_param("build_inversion", "setting", &Value::from("summary"))
            .is_ok());
        assert!(run
            .check_param("build_inversion", "setting", &Value::from("no_summary"))
            .is_err());
        assert!(run
            .check_param("invert", "setting", &Value::from("no_summary"))
            .is_ok());
    }
}
