//! Pipeline configuration: dataset presets, config files, environment and
//! command-line overrides.
//!
//! Precedence, highest first: flags, config file, environment, preset.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::enhance::{EnhanceConfig, EnhanceSteps, StepTokens};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::gateway::{load_mock_rules, Gateway, GenerationConfig, HttpBackend, HttpSettings, MockBackend, ResponseCache, RetryPolicy, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TEMPERATURE};
use crate::metrics::{EvalConfig, Gain};
use crate::retrieval::{AnalyzerConfig, Bm25Params, Similarity};
use crate::rewrite::{RewriteConfig, RewriteFlags};
use crate::supervision::{Ablation, InputHistory, SupervisionConfig};
use crate::text::{INPUT_TOKEN_LIMIT, PASSAGE_TOKEN_LIMIT, QUERY_TOKEN_LIMIT};

pub const ENV_LLM_URL: &str = "CHIQ_LLM_URL";
pub const ENV_LLM_MODEL: &str = "CHIQ_LLM_MODEL";
pub const ENV_LLM_KEY: &str = "CHIQ_LLM_KEY";
pub const ENV_CACHE_DIR: &str = "CHIQ_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Topiocqa,
    Qrecc,
    Cast19,
    Cast20,
    Cast21,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 6] = [Preset::Topiocqa, Preset::Qrecc, Preset::Cast19, Preset::Cast20, Preset::Cast21, Preset::Custom];

    pub fn bm25(self) -> Bm25Params {
        match self {
            Preset::Qrecc => Bm25Params::QRECC,
            _ => Bm25Params::TOPIOCQA,
        }
    }

    pub fn binary_threshold(self) -> u32 {
        match self {
            Preset::Cast20 | Preset::Cast21 => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Sparse,
    Dense,
}

/// Whitespace-token budgets. Query and input budgets are fixed; the passage
/// budget is applied when an index is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub query_tokens: usize,
    pub input_tokens: usize,
    pub passage_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    pub ndcg_cutoff: usize,
    pub recall_cutoff: usize,
    pub mrr_depth: Option<usize>,
    pub gain: Gain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhanceSettings {
    pub steps: EnhanceSteps,
    pub max_new_tokens: StepTokens,
    pub fallback_on_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteSettings {
    /// Label such as `H+QD+RE+PR+TS+HS`.
    pub configuration: String,
    pub max_new_tokens: u32,
    pub fallback_on_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionSettings {
    pub m: usize,
    pub ablation: Ablation,
    pub input_history: InputHistory,
    pub ndcg_cutoff: usize,
    pub max_new_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySettings {
    /// Chat endpoint; unset selects the mock backend.
    pub url: Option<String>,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
    /// Mock rules file; when set the mock backend is used even if `url` is.
    pub mock_rules: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSettings {
    /// Embedding endpoint; unset selects the offline hashing embedder.
    pub embedder_url: Option<String>,
    pub dim: usize,
    pub similarity: Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_preset: Preset,
    pub retriever: RetrieverKind,
    pub bm25: Bm25Params,
    pub analyzer: AnalyzerConfig,
    pub binary_threshold: u32,
    pub truncation: Truncation,
    pub retrieval_depth: usize,
    pub fusion: FusionConfig,
    pub evaluation: EvaluationSettings,
    pub generation: GenerationSettings,
    pub enhance: EnhanceSettings,
    pub rewrite: RewriteSettings,
    pub supervision: SupervisionSettings,
    pub gateway: GatewaySettings,
    pub dense: DenseSettings,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        let enhance = EnhanceConfig::default();
        let supervision = SupervisionConfig::default();
        let eval = EvalConfig::default();
        Self {
            dataset_preset: preset,
            retriever: RetrieverKind::Sparse,
            bm25: preset.bm25(),
            analyzer: AnalyzerConfig::default(),
            binary_threshold: preset.binary_threshold(),
            truncation: Truncation {
                query_tokens: QUERY_TOKEN_LIMIT,
                input_tokens: INPUT_TOKEN_LIMIT,
                passage_tokens: PASSAGE_TOKEN_LIMIT,
            },
            retrieval_depth: 100,
            fusion: FusionConfig::default(),
            evaluation: EvaluationSettings {
                ndcg_cutoff: eval.ndcg_cutoff,
                recall_cutoff: eval.recall_cutoff,
                mrr_depth: eval.mrr_depth,
                gain: eval.gain,
            },
            generation: GenerationSettings { temperature: DEFAULT_TEMPERATURE, seed: None },
            enhance: EnhanceSettings {
                steps: enhance.steps,
                max_new_tokens: enhance.max_new_tokens,
                fallback_on_error: enhance.fallback_on_error,
            },
            rewrite: RewriteSettings {
                configuration: RewriteFlags::ALL.to_string(),
                max_new_tokens: RewriteConfig::default().generation.max_new_tokens,
                fallback_on_error: true,
            },
            supervision: SupervisionSettings {
                m: supervision.m,
                ablation: supervision.ablation,
                input_history: supervision.input_history,
                ndcg_cutoff: supervision.ndcg_cutoff,
                max_new_tokens: supervision.generation.max_new_tokens,
            },
            gateway: GatewaySettings {
                url: None,
                model: "default".into(),
                api_key: None,
                timeout_secs: 120,
                max_in_flight: DEFAULT_MAX_IN_FLIGHT,
                retry: RetryPolicy::default(),
                cache_dir: None,
                mock_rules: None,
            },
            dense: DenseSettings { embedder_url: None, dim: 256, similarity: Similarity::Cosine },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.truncation;
        if t.query_tokens != QUERY_TOKEN_LIMIT || t.input_tokens != INPUT_TOKEN_LIMIT {
            return Err(Error::Config(format!(
                "query and input budgets are fixed at {QUERY_TOKEN_LIMIT} and {INPUT_TOKEN_LIMIT} tokens"
            )));
        }
        if t.passage_tokens == 0 || self.retrieval_depth == 0 || self.gateway.max_in_flight == 0 || self.dense.dim == 0 {
            return Err(Error::Config("passage budget, retrieval depth, max_in_flight and dense dim must be >= 1".into()));
        }
        if self.binary_threshold == 0 {
            return Err(Error::Config("binary threshold must be >= 1".into()));
        }
        if self.fusion.alpha.is_nan() || self.fusion.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.fusion.alpha)));
        }
        self.bm25.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.rewrite_flags()?;
        self.eval_config().validate()?;
        self.supervision_config().validate()?;
        GenerationConfig { temperature: self.generation.temperature, max_new_tokens: 1, seed: None }.validate()
    }

    fn generation_config(&self, max_new_tokens: u32) -> GenerationConfig {
        GenerationConfig {
            temperature: self.generation.temperature,
            max_new_tokens,
            seed: self.generation.seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ndcg_cutoff: self.evaluation.ndcg_cutoff,
            recall_cutoff: self.evaluation.recall_cutoff,
            mrr_depth: self.evaluation.mrr_depth,
            binary_threshold: Some(self.binary_threshold),
            gain: self.evaluation.gain,
        }
    }

    pub fn enhance_config(&self) -> EnhanceConfig {
        EnhanceConfig {
            steps: self.enhance.steps,
            max_new_tokens: self.enhance.max_new_tokens.clone(),
            generation: self.generation_config(1),
            fallback_on_error: self.enhance.fallback_on_error,
        }
    }

    pub fn rewrite_flags(&self) -> Result<RewriteFlags> {
        self.rewrite.configuration.parse()
    }

    pub fn rewrite_config(&self) -> Result<RewriteConfig> {
        Ok(RewriteConfig {
            flags: self.rewrite_flags()?,
            generation: self.generation_config(self.rewrite.max_new_tokens),
            fallback_on_error: self.rewrite.fallback_on_error,
        })
    }

    pub fn supervision_config(&self) -> SupervisionConfig {
        SupervisionConfig {
            m: self.supervision.m,
            ablation: self.supervision.ablation,
            input_history: self.supervision.input_history,
            ndcg_cutoff: self.supervision.ndcg_cutoff,
            generation: self.generation_config(self.supervision.max_new_tokens),
            enhance: self.enhance_config(),
        }
    }

    /// Mock backend when rules are given or no URL is set, HTTP otherwise.
    pub fn build_gateway(&self) -> Result<Gateway> {
        let g = &self.gateway;
        let gateway = match (&g.mock_rules, &g.url) {
            (Some(path), _) => Gateway::new(Box::new(MockBackend::with_rules(load_mock_rules(path)?.rules))),
            (None, Some(url)) => {
                let mut settings = HttpSettings::new(url.clone(), g.model.clone());
                settings.api_key = g.api_key.clone();
                settings.timeout = Duration::from_secs(g.timeout_secs);
                settings.retry = g.retry.clone();
                Gateway::new(Box::new(HttpBackend::new(settings)))
            }
            (None, None) => {
                log::warn!("no LLM endpoint or mock rules configured; every prompt will be unmatched");
                Gateway::mock()
            }
        };
        let gateway = gateway.with_max_in_flight(g.max_in_flight);
        Ok(match &g.cache_dir {
            Some(dir) => gateway.with_cache(ResponseCache::new(dir)?),
            None => gateway,
        })
    }

    /// Effective configuration as pretty JSON, with the API key masked.
    pub fn to_dump_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if self.gateway.api_key.is_some() {
            v["gateway"]["api_key"] = Value::String("<redacted>".into());
        }
        serde_json::to_string_pretty(&v).expect("config serializes") + "\n"
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(Preset::Custom)
    }
}

/// Values given on the command line. `None` leaves lower layers untouched.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub retriever: Option<RetrieverKind>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub threshold: Option<u32>,
    pub alpha: Option<f64>,
    pub temperature: Option<f64>,
    pub llm_url: Option<String>,
    pub llm_model: Option<String>,
    pub llm_key: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub mock_rules: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
}

/// Parses a TOML (`.toml`) or JSON config file into a JSON tree.
pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?
    };
    if !value.is_object() {
        return Err(Error::Config(format!("{}: top level must be a table", path.display())));
    }
    Ok(value)
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Resolves the effective configuration. `env` looks up environment
/// variables so tests can supply their own.
pub fn resolve(file: Option<&Path>, env: impl Fn(&str) -> Option<String>, flags: &FlagOverrides) -> Result<PipelineConfig> {
    let file_value = file.map(read_config_file).transpose()?;
    let file_preset = match file_value.as_ref().and_then(|v| v.get("dataset_preset")) {
        Some(p) => Some(serde_json::from_value::<Preset>(p.clone()).map_err(|e| Error::Config(format!("dataset_preset: {e}")))?),
        None => None,
    };
    let preset = flags.preset.or(file_preset).unwrap_or(Preset::Custom);
    let mut config = PipelineConfig::preset(preset);

    let env = |k: &str| env(k).filter(|v| !v.is_empty());
    if let Some(url) = env(ENV_LLM_URL) {
        config.gateway.url = Some(url);
    }
    if let Some(model) = env(ENV_LLM_MODEL) {
        config.gateway.model = model;
    }
    if let Some(key) = env(ENV_LLM_KEY) {
        config.gateway.api_key = Some(key);
    }
    if let Some(dir) = env(ENV_CACHE_DIR) {
        config.gateway.cache_dir = Some(dir.into());
    }

    if let Some(overlay) = &file_value {
        let mut tree = serde_json::to_value(&config).expect("config serializes");
        merge(&mut tree, overlay);
        config = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        config.dataset_preset = preset;
    }

    let f = flags;
    if let Some(v) = f.seed {
        config.generation.seed = Some(v);
    }
    if let Some(v) = f.retriever {
        config.retriever = v;
    }
    if let Some(v) = f.k1 {
        config.bm25.k1 = v;
    }
    if let Some(v) = f.b {
        config.bm25.b = v;
    }
    if let Some(v) = f.threshold {
        config.binary_threshold = v;
    }
    if let Some(v) = f.alpha {
        config.fusion.alpha = v;
    }
    if let Some(v) = f.temperature {
        config.generation.temperature = v;
    }
    if let Some(v) = &f.llm_url {
        config.gateway.url = Some(v.clone());
    }
    if let Some(v) = &f.llm_model {
        config.gateway.model = v.clone();
    }
    if let Some(v) = &f.llm_key {
        config.gateway.api_key = Some(v.clone());
    }
    if let Some(v) = &f.cache_dir {
        config.gateway.cache_dir = Some(v.clone());
    }
    if let Some(v) = &f.mock_rules {
        config.gateway.mock_rules = Some(v.clone());
    }
    if let Some(v) = f.max_in_flight {
        config.gateway.max_in_flight = v;
    }
    config.validate()?;
    Ok(config)
}
