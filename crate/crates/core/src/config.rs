//! Run configuration: a TOML file, overridden by `EVALKIT_*` environment
//! variables, overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{canonical_json, sha256_hex, Endpoints, Mode};
use crate::coverage::{ClosedMode, CoverageSettings, DEFAULT_DELTA, DEFAULT_GAMMA, DEFAULT_T};
use crate::fairness::{Attribute, AttributeSpec};
use crate::realism::RateDenominator;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model under test; also sent to the generator.
    pub model: String,
    pub seed: u64,
    pub images_per_prompt: usize,
    /// Relative paths in the config resolve against the config file's
    /// directory.
    pub out_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    pub backend: BackendConfig,
    pub quality: QualityConfig,
    pub aesthetics: AestheticsConfig,
    pub realism: RealismConfig,
    pub coverage: CoverageConfig,
    pub fairness: FairnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            seed: 0,
            images_per_prompt: 500,
            out_dir: "out".into(),
            limit: None,
            backend: BackendConfig::default(),
            quality: QualityConfig::default(),
            aesthetics: AestheticsConfig::default(),
            realism: RealismConfig::default(),
            coverage: CoverageConfig::default(),
            fairness: FairnessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: Mode,
    pub cache_dir: String,
    pub max_in_flight: usize,
    #[serde(flatten)]
    pub endpoints: Endpoints,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence_template: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { mode: Mode::Replay, cache_dir: "cache".into(), max_in_flight: 8, endpoints: Endpoints::default(), equivalence_template: None }
    }
}

/// Images scored by the aesthetics and realism stages: one image per
/// prompt drawn from the prompt pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub prompts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_spec: Option<String>,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { prompts: 50_000, prompt_spec: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AestheticsConfig {
    /// CAN checkpoint used to score the quality images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Precomputed scores (JSONL of image_id, score); used instead of a
    /// checkpoint when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealismConfig {
    /// Directory of `<target>.json` defect-model checkpoints.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models_dir: Option<String>,
    /// Annotation JSONL supplying face/body boxes for generated images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boxes: Option<String>,
    /// Non-standard: use the whole image as face and body box when no box is known.
    pub full_frame: bool,
    /// Precomputed predictions; used instead of models when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    pub denominator: RateDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub t: usize,
    pub delta: f64,
    pub gamma: f64,
    pub closed_mode: ClosedMode,
    pub open_question: usize,
    /// Concept names; empty means all 30.
    pub concepts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub human_eval: Option<String>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            t: DEFAULT_T,
            delta: DEFAULT_DELTA,
            gamma: DEFAULT_GAMMA,
            closed_mode: ClosedMode::FirstTemplate,
            open_question: 0,
            concepts: Vec::new(),
            human_eval: None,
        }
    }
}

impl CoverageConfig {
    pub fn settings(&self) -> CoverageSettings {
        CoverageSettings { t: self.t, delta: self.delta, gamma: self.gamma, closed_mode: self.closed_mode, open_question: self.open_question }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeConfig {
    pub threshold: f64,
    pub question: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairnessConfig {
    /// Prompts; empty means the 51 built-in prompts.
    pub prompts: Vec<String>,
    pub attributes: BTreeMap<Attribute, AttributeConfig>,
    /// Grouped VQA accuracy CSV (attribute, group, accuracy) to audit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vqa_accuracy: Option<String>,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        let s = AttributeSpec::default_for(Attribute::Gender);
        Self { threshold: s.threshold, question: s.question, values: s.values }
    }
}

impl Default for FairnessConfig {
    fn default() -> Self {
        let attributes = AttributeSpec::defaults()
            .into_iter()
            .map(|s| (s.name, AttributeConfig { threshold: s.threshold, question: s.question, values: s.values }))
            .collect();
        Self { prompts: Vec::new(), attributes, vqa_accuracy: None }
    }
}

impl FairnessConfig {
    pub fn specs(&self) -> Vec<AttributeSpec> {
        self.attributes
            .iter()
            .map(|(name, a)| AttributeSpec { name: *name, values: a.values.clone(), threshold: a.threshold, question: a.question.clone() })
            .collect()
    }
}

/// Environment variables read by [`RunConfig::apply_env`].
pub const ENV_VARS: [&str; 10] = [
    "EVALKIT_MODEL",
    "EVALKIT_SEED",
    "EVALKIT_IMAGES_PER_PROMPT",
    "EVALKIT_OUT_DIR",
    "EVALKIT_MODE",
    "EVALKIT_CACHE_DIR",
    "EVALKIT_GENERATOR_URL",
    "EVALKIT_VQA_URL",
    "EVALKIT_EQUIV_URL",
    "EVALKIT_EMBED_URL",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text).map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })
    }

    /// Applies `EVALKIT_*` overrides from `lookup` (normally `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |k: &str| lookup(k).filter(|v| !v.is_empty());
        let num = |k: &str, v: String| v.parse::<u64>().map_err(|e| ConfigError::Invalid(format!("{k}={v:?}: {e}")));
        if let Some(v) = get("EVALKIT_MODEL") {
            self.model = v;
        }
        if let Some(v) = get("EVALKIT_SEED") {
            self.seed = num("EVALKIT_SEED", v)?;
        }
        if let Some(v) = get("EVALKIT_IMAGES_PER_PROMPT") {
            self.images_per_prompt = num("EVALKIT_IMAGES_PER_PROMPT", v)? as usize;
        }
        if let Some(v) = get("EVALKIT_OUT_DIR") {
            self.out_dir = v;
        }
        if let Some(v) = get("EVALKIT_MODE") {
            self.backend.mode = v.parse().map_err(|e| ConfigError::Invalid(format!("EVALKIT_MODE: {e}")))?;
        }
        if let Some(v) = get("EVALKIT_CACHE_DIR") {
            self.backend.cache_dir = v;
        }
        let ep = &mut self.backend.endpoints;
        for (k, slot) in [
            ("EVALKIT_GENERATOR_URL", &mut ep.generator),
            ("EVALKIT_VQA_URL", &mut ep.vqa),
            ("EVALKIT_EQUIV_URL", &mut ep.equivalence),
            ("EVALKIT_EMBED_URL", &mut ep.embed),
        ] {
            if let Some(v) = get(k) {
                *slot = Some(v);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.model.trim().is_empty() {
            return bad("model must be set".into());
        }
        if self.images_per_prompt == 0 {
            return bad("images_per_prompt must be at least 1".into());
        }
        if self.limit == Some(0) {
            return bad("limit must be at least 1".into());
        }
        if self.backend.max_in_flight == 0 {
            return bad("backend.max_in_flight must be at least 1".into());
        }
        if self.coverage.t < 2 {
            return bad(format!("coverage.t must be at least 2, got {}", self.coverage.t));
        }
        if !(self.coverage.delta > 0.0) {
            return bad(format!("coverage.delta must be positive, got {}", self.coverage.delta));
        }
        for (name, a) in &self.fairness.attributes {
            if a.values.is_empty() || !(a.threshold >= 0.0) {
                return bad(format!("fairness.attributes.{name} needs values and a non-negative threshold"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the effective config.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        sha256_hex(canonical_json(&v).as_bytes())
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, base: &Path, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_values() {
        let c = RunConfig::parse("model = \"sdxl\"").unwrap();
        assert_eq!(c.images_per_prompt, 500);
        assert_eq!((c.coverage.delta, c.coverage.gamma, c.coverage.t), (0.8, 0.2, 5));
        let th: Vec<f64> = c.fairness.specs().iter().map(|s| s.threshold).collect();
        assert_eq!(th, vec![0.8, 1.0, 1.0]);
        c.validate().unwrap();
    }

    #[test]
    fn nested_values_and_env_override() {
        let text = r#"
model = "sd2.1"
[backend]
mode = "mixed"
vqa = "http://localhost:9000/vqa"
[coverage]
delta = 0.5
concepts = ["run", "talk"]
[fairness.attributes.gender]
threshold = 0.7
question = "Gender?"
values = ["male", "female"]
"#;
        let mut c = RunConfig::parse(text).unwrap();
        assert_eq!(c.backend.mode, Mode::Mixed);
        assert_eq!(c.backend.endpoints.vqa.as_deref(), Some("http://localhost:9000/vqa"));
        assert_eq!(c.fairness.attributes[&Attribute::Gender].threshold, 0.7);
        let before = c.hash();
        c.apply_env(|k| match k {
            "EVALKIT_MODE" => Some("replay".into()),
            "EVALKIT_VQA_URL" => Some("http://other/vqa".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.backend.mode, Mode::Replay);
        assert_eq!(c.backend.endpoints.vqa.as_deref(), Some("http://other/vqa"));
        assert_ne!(before, c.hash());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::parse("model = \"x\"\nbogus = 1").is_err());
        assert!(RunConfig::parse("").unwrap().validate().is_err());
        let mut c = RunConfig::parse("model = \"x\"").unwrap();
        assert!(c.apply_env(|k| (k == "EVALKIT_SEED").then(|| "abc".to_string())).is_err());
    }

    #[test]
    fn hash_is_stable() {
        let a = RunConfig::parse("model = \"x\"\nseed = 3").unwrap();
        let b = RunConfig::parse("seed = 3\nmodel = \"x\"").unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
