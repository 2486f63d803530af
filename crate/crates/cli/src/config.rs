use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tinv_core::corpus::CorpusFormat;
use tinv_core::gateway::{ChatBackend, HttpBackend, MockBackend, MockSpec};
use tinv_core::prompts::PromptSet;
use tinv_core::{EndpointConfig, InversionSetting, PricingModel, Role, TemplateName};

/// Endpoint `base_url` that selects the in-process mock backend.
pub const MOCK_URL: &str = "mock:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub surrogate: usize,
    pub victim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub config: EndpointConfig,
    pub mock: Option<MockSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    corpus: CorpusSource,
    splits: SplitSizes,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    endpoints: BTreeMap<Role, Map<String, Value>>,
    #[serde(default)]
    prompt_overrides: BTreeMap<TemplateName, PathBuf>,
    #[serde(default = "default_setting")]
    setting: InversionSetting,
    #[serde(default)]
    pricing: BTreeMap<Role, PricingModel>,
    #[serde(default)]
    budgets: Vec<usize>,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
}

fn default_setting() -> InversionSetting {
    InversionSetting::Summary
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

/// A validated run configuration with every path resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub corpus: CorpusSource,
    pub splits: SplitSizes,
    pub seed: u64,
    pub endpoints: BTreeMap<Role, Endpoint>,
    pub prompt_overrides: BTreeMap<TemplateName, PathBuf>,
    pub setting: InversionSetting,
    pub pricing: BTreeMap<Role, PricingModel>,
    pub budgets: Vec<usize>,
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base_dir).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)?;
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let mut endpoints = BTreeMap::new();
        for (role, mut fields) in raw.endpoints {
            let mock = match fields.remove("mock") {
                Some(v) => Some(
                    serde_json::from_value::<MockSpec>(v)
                        .with_context(|| format!("{role} endpoint mock"))?,
                ),
                None => None,
            };
            match fields.get("role") {
                None => {
                    fields.insert("role".into(), serde_json::to_value(role)?);
                }
                Some(v) if *v == serde_json::to_value(role)? => {}
                Some(v) => bail!("endpoint under key {role} declares role {v}"),
            }
            let config: EndpointConfig = serde_json::from_value(Value::Object(fields))
                .with_context(|| format!("{role} endpoint"))?;
            config.validate()?;
            if mock.is_some() && config.base_url != MOCK_URL {
                bail!("{role} endpoint has a mock section but base_url is not {MOCK_URL:?}");
            }
            endpoints.insert(role, Endpoint { config, mock });
        }
        for (role, pricing) in &raw.pricing {
            pricing
                .validate()
                .with_context(|| format!("{role} pricing"))?;
        }
        if raw.budgets.windows(2).any(|w| w[0] >= w[1]) || raw.budgets.first() == Some(&0) {
            bail!("budgets must be strictly ascending positive integers");
        }
        let config = Self {
            corpus: CorpusSource {
                path: resolve(&raw.corpus.path),
                format: raw.corpus.format,
            },
            splits: raw.splits,
            seed: raw.seed,
            endpoints,
            prompt_overrides: raw
                .prompt_overrides
                .iter()
                .map(|(k, p)| (*k, resolve(p)))
                .collect(),
            setting: raw.setting,
            pricing: raw.pricing,
            budgets: raw.budgets,
            out_dir: resolve(&raw.out_dir),
            base_dir: base_dir.to_path_buf(),
        };
        for path in std::iter::once(&config.corpus.path).chain(config.prompt_overrides.values()) {
            if !path.is_file() {
                bail!("referenced file {} does not exist", path.display());
            }
        }
        Ok(config)
    }

    pub fn endpoint(&self, role: Role) -> Result<&Endpoint> {
        self.endpoints
            .get(&role)
            .with_context(|| format!("config has no {role} endpoint"))
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        let mut set = PromptSet::default();
        for (name, path) in &self.prompt_overrides {
            let body =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            set = set
                .with_override(*name, body)
                .with_context(|| format!("prompt override {name}"))?;
        }
        Ok(set)
    }

    /// Digest of the effective configuration, recorded with every stage.
    pub fn digest(&self) -> String {
        tinv_core::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

/// A live backend for one endpoint; keeps the concrete mock around so its
/// concurrency high-water mark can be reported.
pub enum Backend {
    Mock(Arc<MockBackend>),
    Http(Arc<HttpBackend>),
}

impl Backend {
    pub fn for_endpoint(endpoint: &Endpoint, base_dir: &Path) -> Result<Self> {
        if endpoint.config.base_url == MOCK_URL {
            let spec = endpoint.mock.clone().unwrap_or_default();
            let mock = MockBackend::from_spec(&spec, base_dir).map_err(anyhow::Error::msg)?;
            Ok(Backend::Mock(Arc::new(mock)))
        } else {
            Ok(Backend::Http(Arc::new(HttpBackend::new())))
        }
    }

    pub fn chat(&self) -> Arc<dyn ChatBackend> {
        match self {
            Backend::Mock(m) => m.clone(),
            Backend::Http(h) => h.clone(),
        }
    }

    pub fn high_water_mark(&self) -> Option<usize> {
        match self {
            Backend::Mock(m) => Some(m.high_water_mark()),
            Backend::Http(_) => None,
        }
    }
}
