//! Subcommand execution and report files.
//!
//! Every stage re-derives its image list from generation requests, so in
//! replay mode no manifest is needed beyond the cache itself. Each stage
//! writes `<stage>_report.json` wrapped in an [`Envelope`] plus a CSV
//! table; `report` merges the envelopes into `eval_report.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::aesthetics::{self, AestheticsError, CanModel, ScoreSummary};
use crate::backends::{sha256_hex, BackendError, Cache, GeneratorParams, HttpTransport, ImageRef, Mode, Oracle, Transport, TRANSCRIPTS_FILE};
use crate::config::{ConfigError, RunConfig};
use crate::coverage::{self, ConceptCoverage, CoverageError, CoverageRow, Metric};
use crate::fairness::{self, FairnessError, FairnessReport, VqaAudit};
use crate::promptforge::{self, Concept, PromptSpec};
use crate::realism::{self, DefectModel, DefectTarget, LabeledImage, RealismError, TargetRate};
use crate::schema::{read_annotations, AnnotationRecord, BoundingBox, ComponentLabel, Components, SchemaError};
use crate::stats::round_to;

pub const TOOL: &str = "evalkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A stage's JSON result and the named tables written next to it.
type StageOutput = (Value, Vec<(String, Vec<u8>)>);

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Aesthetics(#[from] AestheticsError),
    #[error(transparent)]
    Realism(#[from] RealismError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{0}")]
    Input(String),
    #[error("cannot merge reports: {0}")]
    Merge(String),
    #[error("io error: {0}")]
    Io(String),
}

impl PipelineError {
    fn backend(&self) -> Option<&BackendError> {
        match self {
            Self::Backend(e) | Self::Coverage(CoverageError::Backend(e)) | Self::Fairness(FairnessError::Backend(e)) => Some(e),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            _ if self.cache_miss().is_some() => "cache_miss",
            Self::Backend(_) => "backend",
            Self::Coverage(_) => "coverage",
            Self::Fairness(_) => "fairness",
            Self::Aesthetics(_) => "aesthetics",
            Self::Realism(_) => "realism",
            Self::Schema(_) => "schema",
            Self::Input(_) => "input",
            Self::Merge(_) => "merge",
            Self::Io(_) => "io",
        }
    }

    pub fn cache_miss(&self) -> Option<(&str, u32)> {
        match self.backend() {
            Some(BackendError::CacheMiss { hash, sample_index }) => Some((hash, *sample_index)),
            _ => None,
        }
    }

    /// 2 for a strict-replay cache miss, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        if self.cache_miss().is_some() {
            2
        } else {
            1
        }
    }

    /// Machine-readable form written to stderr by the CLI.
    pub fn to_json(&self) -> Value {
        let mut v = json!({"error": self.kind(), "message": self.to_string()});
        if let Some((hash, sample)) = self.cache_miss() {
            v["request_hash"] = json!(hash);
            v["sample_index"] = json!(sample);
        }
        v
    }
}

fn io(path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Generate,
    Aesthetics,
    Realism,
    Coverage,
    Fairness,
    Report,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [Self::Generate, Self::Aesthetics, Self::Realism, Self::Coverage, Self::Fairness, Self::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Aesthetics => "aesthetics",
            Self::Realism => "realism",
            Self::Coverage => "coverage",
            Self::Fairness => "fairness",
            Self::Report => "report",
        }
    }

    pub fn report_file(self) -> &'static str {
        match self {
            Self::Generate => "generation_report.json",
            Self::Aesthetics => "aesthetics_report.json",
            Self::Realism => "realism_report.json",
            Self::Coverage => "coverage_report.json",
            Self::Fairness => "fairness_report.json",
            Self::Report => "eval_report.json",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subcommand {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown subcommand {s:?}"))
    }
}

/// Common wrapper of every report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub tool: String,
    pub version: String,
    pub subcommand: Subcommand,
    pub model: String,
    pub config_hash: String,
    pub cache_identity: String,
    pub config: RunConfig,
    pub result: T,
}

/// Command-line overrides, applied after the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub limit: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub struct Run {
    pub config: RunConfig,
    /// Directory relative config paths resolve against.
    pub base_dir: PathBuf,
    /// `--out` from the command line, relative to the working directory.
    out_override: Option<PathBuf>,
    transport: Option<Arc<dyn Transport>>,
}

impl Run {
    pub fn new(config: RunConfig, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config, base_dir: base_dir.into(), out_override: None, transport: None })
    }

    /// Loads a config file, then applies environment and flag overrides.
    pub fn from_file(path: &Path, env: impl Fn(&str) -> Option<String>, overrides: &Overrides) -> Result<Self, PipelineError> {
        let mut config = RunConfig::load(path)?;
        config.apply_env(env)?;
        if let Some(m) = overrides.mode {
            config.backend.mode = m;
        }
        if let Some(l) = overrides.limit {
            config.limit = Some(l);
        }
        if let Some(o) = &overrides.out_dir {
            config.out_dir = o.display().to_string();
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut run = Self::new(config, base)?;
        run.out_override = overrides.out_dir.clone();
        Ok(run)
    }

    /// Replaces the HTTP transport used outside replay mode.
    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn path(&self, p: &str) -> PathBuf {
        self.config.resolve(&self.base_dir, p)
    }

    pub fn out_dir(&self) -> PathBuf {
        match &self.out_override {
            Some(o) => o.clone(),
            None => self.path(&self.config.out_dir),
        }
    }

    fn cache_dir(&self) -> PathBuf {
        self.path(&self.config.backend.cache_dir)
    }

    /// Hash of the transcript file, or of the empty string when there is none.
    pub fn cache_identity(&self) -> Result<String, PipelineError> {
        let p = self.cache_dir().join(TRANSCRIPTS_FILE);
        match std::fs::read(&p) {
            Ok(bytes) => Ok(sha256_hex(&bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(sha256_hex(b"")),
            Err(e) => Err(io(&p, e)),
        }
    }

    pub fn oracle(&self) -> Result<Oracle, PipelineError> {
        let b = &self.config.backend;
        let cache = match b.mode {
            Mode::Replay => Cache::open_read_only(self.cache_dir())?,
            _ => Cache::open(self.cache_dir())?,
        };
        let mut builder = Oracle::builder(cache).mode(b.mode).endpoints(b.endpoints.clone()).max_in_flight(b.max_in_flight);
        if b.mode != Mode::Replay {
            let t = self.transport.clone().unwrap_or_else(|| Arc::new(HttpTransport::from_env()));
            builder = builder.transport(t);
        }
        if let Some(t) = &b.equivalence_template {
            builder = builder.equivalence_template(t.clone());
        }
        Ok(builder.build())
    }

    fn params(&self) -> GeneratorParams {
        let mut extra = Map::new();
        extra.insert("model".into(), json!(self.config.model));
        GeneratorParams { seed: self.config.seed, extra }
    }

    fn limited<T: Ord>(&self, mut items: Vec<T>) -> Vec<T> {
        items.sort();
        if let Some(n) = self.config.limit {
            items.truncate(n);
        }
        items
    }

    fn coverage_concepts(&self) -> Result<Vec<Concept>, PipelineError> {
        let all = promptforge::coverage_concepts();
        if self.config.coverage.concepts.is_empty() {
            return Ok(all);
        }
        self.config
            .coverage
            .concepts
            .iter()
            .map(|name| {
                all.iter()
                    .find(|c| &c.name == name || &c.phrase == name || c.gerund.as_deref() == Some(name.as_str()))
                    .cloned()
                    .ok_or_else(|| PipelineError::Input(format!("{name:?} is not a coverage concept")))
            })
            .collect()
    }

    fn fairness_prompts(&self) -> Vec<String> {
        if self.config.fairness.prompts.is_empty() {
            promptforge::fairness_prompts()
        } else {
            self.config.fairness.prompts.clone()
        }
    }

    fn quality_prompts(&self) -> Result<Vec<String>, PipelineError> {
        let spec = match &self.config.quality.prompt_spec {
            Some(p) => {
                let path = self.path(p);
                let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
                PromptSpec::parse(&text).map_err(|e| PipelineError::Input(e.to_string()))?
            }
            None => PromptSpec::default_spec(),
        };
        (0..self.config.quality.prompts as u64)
            .map(|i| promptforge::build_prompt(&spec, self.config.seed.wrapping_add(i)).map_err(|e| PipelineError::Input(e.to_string())))
            .collect()
    }

    fn quality_images(&self, oracle: &Oracle) -> Result<Vec<(ImageRef, String)>, PipelineError> {
        let prompts = self.quality_prompts()?;
        let params = self.params();
        let refs = oracle.par_map(&prompts, |p| Ok((oracle.generate_images(p, 1, &params)?.remove(0), p.clone())))?;
        Ok(self.limited(refs))
    }

    fn prompt_images(&self, oracle: &Oracle, prompt: &str) -> Result<Vec<ImageRef>, PipelineError> {
        Ok(self.limited(oracle.generate_images(prompt, self.config.images_per_prompt, &self.params())?))
    }

    /// Runs one subcommand and returns the files written.
    pub fn execute(&self, sub: Subcommand) -> Result<Vec<PathBuf>, PipelineError> {
        let out = self.out_dir();
        std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
        let (result, tables) = match sub {
            Subcommand::Generate => self.generate()?,
            Subcommand::Aesthetics => self.aesthetics()?,
            Subcommand::Realism => self.realism()?,
            Subcommand::Coverage => self.coverage()?,
            Subcommand::Fairness => self.fairness()?,
            Subcommand::Report => (serde_json::to_value(self.merge()?).expect("report serializes"), Vec::new()),
        };
        let mut written = Vec::new();
        for (name, bytes) in tables {
            let p = out.join(name);
            std::fs::write(&p, bytes).map_err(|e| io(&p, e))?;
            written.push(p);
        }
        let envelope = Envelope {
            tool: TOOL.into(),
            version: VERSION.into(),
            subcommand: sub,
            model: self.config.model.clone(),
            config_hash: self.config.hash(),
            cache_identity: self.cache_identity()?,
            config: self.config.clone(),
            result,
        };
        let p = out.join(sub.report_file());
        write_json(&p, &envelope)?;
        written.push(p);
        Ok(written)
    }

    fn generate(&self) -> Result<StageOutput, PipelineError> {
        let oracle = self.oracle()?;
        let params = self.params();
        let n = self.config.limit.map_or(self.config.images_per_prompt, |l| l.min(self.config.images_per_prompt));
        let mut rows: Vec<GeneratedImage> = Vec::new();
        let mut push = |set: &str, prompt: &str, refs: Vec<ImageRef>| {
            for (i, r) in refs.into_iter().enumerate() {
                rows.push(GeneratedImage { set: set.into(), prompt: prompt.into(), index: i as u32, image_id: r.0 });
            }
        };
        for c in self.coverage_concepts()? {
            let p = coverage::coverage_prompt(&c);
            push("coverage", &p, oracle.generate_images(&p, n, &params)?);
        }
        for p in self.fairness_prompts() {
            push("fairness", &p, oracle.generate_images(&p, n, &params)?);
        }
        let mut quality = self.quality_prompts()?;
        if let Some(l) = self.config.limit {
            quality.truncate(l);
        }
        let refs = oracle.par_map(&quality, |p| Ok(oracle.generate_images(p, 1, &params)?.remove(0)))?;
        for (p, r) in quality.iter().zip(refs) {
            push("quality", p, vec![r]);
        }
        oracle.cache().flush()?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in &rows {
            *counts.entry(r.set.clone()).or_default() += 1;
        }
        let mut jsonl = Vec::new();
        for r in &rows {
            writeln!(jsonl, "{}", serde_json::to_string(r).unwrap()).unwrap();
        }
        Ok((json!({"images": counts, "images_per_prompt": n, "live_calls": oracle.live_calls()}), vec![("images.jsonl".into(), jsonl)]))
    }

    fn aesthetics(&self) -> Result<StageOutput, PipelineError> {
        let a = &self.config.aesthetics;
        let mut csv = String::new();
        let (source, summary) = if let Some(scores) = &a.scores {
            let rows = aesthetics::read_manifest(self.path(scores))?;
            let rows = self.limited(rows.into_iter().map(|r| (r.image_id, OrdF64(r.score))).collect());
            csv.push_str("image_id,general\n");
            for (id, s) in &rows {
                csv.push_str(&format!("{id},{}\n", s.0));
            }
            let scores: Vec<f64> = rows.iter().map(|(_, s)| s.0).collect();
            ("scores", aesthetics::aesthetic_summary(&scores)?)
        } else if let Some(ck) = &a.checkpoint {
            let model = CanModel::load(self.path(ck))?;
            let oracle = self.oracle()?;
            let imgs = self.quality_images(&oracle)?;
            let loaded: Vec<(String, crate::image::Image)> =
                imgs.iter().map(|(r, _)| Ok((r.0.clone(), oracle.load_image(r)?))).collect::<Result<_, BackendError>>()?;
            let (rows, summary) = aesthetics::aesthetic_report(&model, &loaded)?;
            csv.push_str("image_id");
            for n in aesthetics::OUTPUT_NAMES {
                csv.push_str(&format!(",{n}"));
            }
            csv.push('\n');
            for r in rows {
                csv.push_str(&r.image_id);
                for n in aesthetics::OUTPUT_NAMES {
                    csv.push_str(&format!(",{}", r.scores[n]));
                }
                csv.push('\n');
            }
            ("checkpoint", summary)
        } else {
            return Err(PipelineError::Input("aesthetics needs aesthetics.scores or aesthetics.checkpoint".into()));
        };
        let result = AestheticsResult { source: source.into(), summary: summary.rounded(), exact: summary };
        Ok((serde_json::to_value(result).unwrap(), vec![("aesthetics_scores.csv".into(), csv.into_bytes())]))
    }

    fn realism(&self) -> Result<StageOutput, PipelineError> {
        let r = &self.config.realism;
        let mut skipped = Vec::new();
        let (source, preds) = if let Some(p) = &r.predictions {
            let preds = realism::read_predictions(self.path(p))?;
            let ids = self.limited(preds.iter().map(|p| p.image_id.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect());
            let keep: std::collections::HashSet<String> = ids.into_iter().collect();
            ("predictions", preds.into_iter().filter(|p| keep.contains(&p.image_id)).collect::<Vec<_>>())
        } else if let Some(dir) = &r.models_dir {
            let dir = self.path(dir);
            let models: Vec<DefectModel> = DefectTarget::all()
                .into_iter()
                .map(|t| dir.join(format!("{t}.json")))
                .filter(|p| p.exists())
                .map(DefectModel::load)
                .collect::<Result<_, _>>()?;
            if models.is_empty() {
                return Err(PipelineError::Input(format!("no defect models in {}", dir.display())));
            }
            let boxes: BTreeMap<String, AnnotationRecord> = match &r.boxes {
                Some(p) => {
                    let path = self.path(p);
                    let f = std::fs::File::open(&path).map_err(|e| io(&path, e))?;
                    read_annotations(BufReader::new(f))?.into_iter().map(|a| (a.image_id.clone(), a)).collect()
                }
                None => BTreeMap::new(),
            };
            let oracle = self.oracle()?;
            let mut items = Vec::new();
            for (img_ref, prompt) in self.quality_images(&oracle)? {
                let image = oracle.load_image(&img_ref)?;
                let record = match boxes.get(img_ref.as_str()) {
                    Some(rec) => rec.clone(),
                    None => {
                        let mut rec = AnnotationRecord::generated(img_ref.0.clone(), prompt, Components::uniform(ComponentLabel::Invisible));
                        if r.full_frame {
                            let b = BoundingBox::new(0.0, 0.0, image.width() as f64, image.height() as f64);
                            rec.face_box = Some(b);
                            rec.body_box = Some(b);
                        }
                        rec
                    }
                };
                items.push(LabeledImage { record, image });
            }
            let mut preds = Vec::new();
            for m in &models {
                let (p, s) = realism::predict_all(m, &items, false)?;
                preds.extend(p);
                skipped.extend(s.into_iter().map(|id| format!("{}:{id}", m.target)));
            }
            ("models", preds)
        } else {
            return Err(PipelineError::Input("realism needs realism.predictions or realism.models_dir".into()));
        };
        let rates = realism::rates_by_target(&preds, r.denominator);
        let mut csv = String::from("target,good,bad,invisible,defect_rate_percent\n");
        for (t, row) in &rates {
            csv.push_str(&format!("{t},{},{},{},{}\n", row.good, row.bad, row.invisible, row.percent.map(|p| p.to_string()).unwrap_or_default()));
        }
        let mut tables = vec![("defect_rates.csv".to_string(), csv.into_bytes())];
        if source == "models" {
            let mut jsonl = Vec::new();
            for p in &preds {
                writeln!(jsonl, "{}", serde_json::to_string(p).unwrap()).unwrap();
            }
            tables.push(("predictions.jsonl".into(), jsonl));
        }
        let result = RealismResult {
            source: source.into(),
            denominator: r.denominator,
            n_predictions: preds.len(),
            skipped,
            face_defect_percent: rates.get("face").and_then(|t| t.percent),
            rates,
        };
        Ok((serde_json::to_value(result).unwrap(), tables))
    }

    fn coverage(&self) -> Result<StageOutput, PipelineError> {
        let oracle = self.oracle()?;
        let settings = self.config.coverage.settings();
        let mut per_concept: Vec<ConceptCoverage> = Vec::new();
        let mut concept_of: BTreeMap<String, String> = BTreeMap::new();
        for c in self.coverage_concepts()? {
            let imgs = self.prompt_images(&oracle, &coverage::coverage_prompt(&c))?;
            for i in &imgs {
                concept_of.insert(i.0.clone(), c.name.clone());
            }
            per_concept.push(coverage::concept_coverage(&oracle, &c, &imgs, &settings)?);
        }
        let human = match &self.config.coverage.human_eval {
            Some(p) => {
                let verdicts = coverage::load_human_eval(&self.path(p))?;
                let verdicts: Vec<_> = verdicts
                    .into_iter()
                    .filter(|v| v.concept.is_some() || concept_of.contains_key(&v.image_id))
                    .collect();
                coverage::human_metrics_by_concept(&verdicts, |id| concept_of.get(id).cloned())?
            }
            None => BTreeMap::new(),
        };
        let rows: Vec<CoverageRow> = per_concept
            .iter()
            .map(|c| CoverageRow {
                concept: c.concept.clone(),
                model: self.config.model.clone(),
                cov_closed: c.cov_closed,
                cov_open: c.cov_open,
                cov_clip: c.cov_clip,
                human_loose: human.get(&c.concept).map(|h| h.human_loose),
                human_strict: human.get(&c.concept).map(|h| h.human_strict),
            })
            .collect();
        let mut csv = Vec::new();
        coverage::write_coverage_csv(&rows, &mut csv)?;
        let mut details = Vec::new();
        for c in &per_concept {
            for i in &c.images {
                writeln!(details, "{}", serde_json::to_string(&json!({"concept": c.concept, "image": i})).unwrap()).unwrap();
            }
        }
        let result = CoverageResult::from_rows(&rows, &settings_value(&settings));
        oracle.cache().flush()?;
        Ok((serde_json::to_value(result).unwrap(), vec![("coverage_report.csv".into(), csv), ("coverage_images.jsonl".into(), details)]))
    }

    fn fairness(&self) -> Result<StageOutput, PipelineError> {
        let oracle = self.oracle()?;
        let specs = self.config.fairness.specs();
        let mut images = Vec::new();
        for p in self.fairness_prompts() {
            let imgs = self.prompt_images(&oracle, &p)?;
            images.push((p, imgs));
        }
        let report = fairness::fairness_report(&oracle, &self.config.model, &images, &specs)?;
        let audit = match &self.config.fairness.vqa_accuracy {
            Some(p) => {
                let path = self.path(p);
                let f = std::fs::File::open(&path).map_err(|e| io(&path, e))?;
                Some(fairness::vqa_audit(&fairness::read_group_accuracy(f)?, fairness::AUDIT_GAP_POINTS)?)
            }
            None => None,
        };
        let mut csv = String::from("prompt,attribute,entropy,biased,dominant_value,other_flag\n");
        for a in &report.attributes {
            for r in &a.rows {
                csv.push_str(&format!("\"{}\",{},{:.4},{},{},{}\n", r.prompt, r.attribute, r.entropy, r.biased, r.dominant_value, r.other_flag));
            }
        }
        oracle.cache().flush()?;
        let result = FairnessResult { report, audit };
        Ok((serde_json::to_value(result).unwrap(), vec![("fairness_rows.csv".into(), csv.into_bytes())]))
    }

    /// Reads the partial reports in the output directory. A missing file
    /// leaves its section null; a report from another config or model is
    /// an error.
    pub fn merge(&self) -> Result<EvalReport, PipelineError> {
        let out = self.out_dir();
        let hash = self.config.hash();
        let load = |sub: Subcommand| -> Result<Option<Value>, PipelineError> {
            let p = out.join(sub.report_file());
            if !p.exists() {
                return Ok(None);
            }
            let text = std::fs::read_to_string(&p).map_err(|e| io(&p, e))?;
            let env: Envelope<Value> = serde_json::from_str(&text).map_err(|e| io(&p, e))?;
            if env.subcommand != sub {
                return Err(PipelineError::Merge(format!("{} holds a {} report", p.display(), env.subcommand)));
            }
            if env.model != self.config.model {
                return Err(PipelineError::Merge(format!("{} is for model {:?}, not {:?}", p.display(), env.model, self.config.model)));
            }
            if env.config_hash != hash {
                return Err(PipelineError::Merge(format!("{} was produced with config {}, current config is {}", p.display(), env.config_hash, hash)));
            }
            Ok(Some(env.result))
        };
        let aesthetics = match load(Subcommand::Aesthetics)? {
            Some(v) => Some(serde_json::from_value::<AestheticsResult>(v).map_err(|e| PipelineError::Merge(e.to_string()))?.summary),
            None => None,
        };
        let realism = match load(Subcommand::Realism)? {
            Some(v) => {
                let r: RealismResult = serde_json::from_value(v).map_err(|e| PipelineError::Merge(e.to_string()))?;
                Some(RealismSummary {
                    face_defect_percent: r.face_defect_percent,
                    component_defect_percent: r.rates.iter().filter(|(k, _)| k.as_str() != "face").map(|(k, t)| (k.clone(), t.percent)).collect(),
                })
            }
            None => None,
        };
        let coverage = match load(Subcommand::Coverage)? {
            Some(v) => {
                let mut r: CoverageResult = serde_json::from_value(v).map_err(|e| PipelineError::Merge(e.to_string()))?;
                r.concepts.clear();
                Some(r)
            }
            None => None,
        };
        let fairness = match load(Subcommand::Fairness)? {
            Some(v) => {
                let r: FairnessResult = serde_json::from_value(v).map_err(|e| PipelineError::Merge(e.to_string()))?;
                Some(FairnessSummary {
                    attributes: r
                        .report
                        .attributes
                        .iter()
                        .map(|a| (a.attribute.to_string(), BiasSummary { biased_fraction: a.biased_fraction, mean_entropy_of_biased: a.mean_entropy_of_biased }))
                        .collect(),
                    audit_flags: r.audit.map(|a| a.flagged.iter().map(|f| format!("{}/{}", f.attribute, f.group)).collect()),
                })
            }
            None => None,
        };
        Ok(EvalReport { aesthetics, realism, coverage, fairness })
    }
}

fn settings_value(s: &coverage::CoverageSettings) -> Value {
    serde_json::to_value(s).unwrap()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io(path, e))
}

/// Total order for sorting scored rows by id; scores never compare.
#[derive(Debug, Clone, Copy)]
struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0).is_eq()
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub set: String,
    pub prompt: String,
    pub index: u32,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AestheticsResult {
    pub source: String,
    /// Mean and std to two decimals.
    pub summary: ScoreSummary,
    pub exact: ScoreSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismResult {
    pub source: String,
    pub denominator: realism::RateDenominator,
    pub n_predictions: usize,
    pub skipped: Vec<String>,
    pub face_defect_percent: Option<u32>,
    pub rates: BTreeMap<String, TargetRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub settings: Value,
    pub n_concepts: usize,
    /// Mean over concepts, percent to two decimals.
    pub avg_cov_closed: f64,
    pub avg_cov_open: f64,
    pub avg_cov_clip: f64,
    /// Spearman correlations between machine and human columns; null when
    /// human data is missing or a column is constant.
    pub spearman: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concepts: Vec<CoverageRow>,
}

impl CoverageResult {
    pub fn from_rows(rows: &[CoverageRow], settings: &Value) -> Self {
        let avg = |m: Metric| round_to(100.0 * rows.iter().filter_map(|r| r.get(m)).sum::<f64>() / rows.len().max(1) as f64, 2);
        let mut spearman = BTreeMap::new();
        for a in [Metric::CovClosed, Metric::CovOpen, Metric::CovClip] {
            for b in [Metric::HumanLoose, Metric::HumanStrict] {
                spearman.insert(format!("{a}~{b}"), coverage::spearman_validate(rows, a, b).ok().map(|v| round_to(v, 4)));
            }
        }
        Self {
            settings: settings.clone(),
            n_concepts: rows.len(),
            avg_cov_closed: avg(Metric::CovClosed),
            avg_cov_open: avg(Metric::CovOpen),
            avg_cov_clip: avg(Metric::CovClip),
            spearman,
            concepts: rows.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessResult {
    pub report: FairnessReport,
    pub audit: Option<VqaAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismSummary {
    pub face_defect_percent: Option<u32>,
    pub component_defect_percent: BTreeMap<String, Option<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub biased_fraction: u32,
    pub mean_entropy_of_biased: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub attributes: BTreeMap<String, BiasSummary>,
    pub audit_flags: Option<Vec<String>>,
}

/// Per-model aggregate; sections whose stage was not run are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aesthetics: Option<ScoreSummary>,
    pub realism: Option<RealismSummary>,
    pub coverage: Option<CoverageResult>,
    pub fairness: Option<FairnessSummary>,
}

/// Reads `<out>/eval_report.json`.
pub fn read_eval_report(path: &Path) -> Result<Envelope<EvalReport>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| io(path, e))
}
