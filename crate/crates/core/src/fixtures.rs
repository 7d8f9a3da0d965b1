//! Reference fixtures: the published result tables, a scripted backend whose
//! answers realize those tables, and a builder that records replay caches
//! and score/prediction files for four models.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::backends::{sha256_hex, BackendError, Endpoints, Mode, SynonymOracle, Transport};
use crate::config::RunConfig;
use crate::coverage::{self, CoverageRow};
use crate::fairness::{self, Attribute, AttributeSpec, EntropyEntry, GroupAccuracy};
use crate::image::Image;
use crate::pipeline::{PipelineError, Run, Subcommand};
use crate::promptforge::{self, Concept};
use crate::realism::{DefectTarget, Prediction};
use crate::schema::{Component, ComponentLabel};
use crate::stats;

const COVERAGE_TABLES: &str = include_str!("../fixtures/coverage_tables.csv");
const ENTROPY_TABLE: &str = include_str!("../fixtures/entropy_table.csv");
const VQA_ACCURACY: &str = include_str!("../fixtures/vqa_group_accuracy.csv");

pub const MODELS: [&str; 4] = ["midjourney", "sdxl", "sd2.1", "sd1.5"];

/// Aesthetic score mean and std per model.
pub const AESTHETIC_TABLE: [(&str, f64, f64); 4] =
    [("midjourney", 6.35, 0.45), ("sdxl", 6.23, 0.55), ("sd2.1", 5.62, 0.57), ("sd1.5", 5.54, 0.55)];

/// Face defect rate (percent) per model.
pub const FACE_DEFECT_TABLE: [(&str, u32); 4] = [("midjourney", 29), ("sdxl", 61), ("sd2.1", 79), ("sd1.5", 86)];

/// Component defect rates (percent) for SDXL and SD2.1.
pub const COMPONENT_DEFECT_TABLE: [(Component, u32, u32); 10] = [
    (Component::Eye, 35, 50),
    (Component::Nose, 42, 56),
    (Component::Mouth, 48, 64),
    (Component::Hair, 1, 1),
    (Component::Cheek, 31, 47),
    (Component::Hand, 99, 98),
    (Component::Arm, 38, 54),
    (Component::Leg, 40, 43),
    (Component::Foot, 77, 78),
    (Component::Trunk, 20, 37),
];

/// The 30-concept coverage tables for sd1.5, sd2.1 and sdxl (fractions).
pub fn published_coverage_rows() -> Vec<CoverageRow> {
    coverage::read_coverage_csv(COVERAGE_TABLES.as_bytes(), "coverage_tables.csv").expect("bundled coverage table parses")
}

/// The 51 x 3 x 3 entropy table.
pub fn published_entropy_table() -> Vec<EntropyEntry> {
    fairness::read_entropy_table(ENTROPY_TABLE.as_bytes()).expect("bundled entropy table parses")
}

pub fn published_vqa_accuracy() -> Vec<GroupAccuracy> {
    fairness::read_group_accuracy(VQA_ACCURACY.as_bytes()).expect("bundled accuracy table parses")
}

/// Table rows name action concepts by base name and the rest by phrase.
pub fn entropy_entry<'a>(table: &'a [EntropyEntry], model: &str, concept: &Concept, attribute: Attribute) -> Option<&'a EntropyEntry> {
    let find = |key: &str| table.iter().find(|r| r.model == model && r.concept == key && r.attribute == attribute);
    find(&concept.phrase).or_else(|| find(&concept.name))
}

/// Scores with exactly the requested mean and population std.
pub fn aesthetic_scores(n: usize, mean: f64, std: f64, seed: u64) -> Vec<f64> {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (m, s) = (stats::mean(&z), stats::std_pop(&z));
    z.iter().map(|v| mean + std * (v - m) / s).collect()
}

/// `visible` visible predictions per target at the given percent, plus a
/// few invisible ones that must not enter the rate.
pub fn defect_predictions(prefix: &str, face: u32, components: &[(Component, u32)], visible: usize) -> Vec<Prediction> {
    let mut out = Vec::new();
    let mut emit = |target: DefectTarget, percent: u32| {
        let bad = (visible as u64 * percent as u64 / 100) as usize;
        for i in 0..visible + visible / 10 {
            let label = if i >= visible {
                ComponentLabel::Invisible
            } else if i < bad {
                ComponentLabel::Bad
            } else {
                ComponentLabel::Good
            };
            out.push(Prediction { image_id: format!("{prefix}-{i:05}"), target, label });
        }
    };
    emit(DefectTarget::Face, face);
    for (c, p) in components {
        emit(DefectTarget::Component(*c), *p);
    }
    out
}

/// Cluster sizes over `n` items whose entropy rounds to `target` (two
/// decimals) and stays on the same side of `threshold`. Uses the fewest
/// clusters that can reach the target, one dominant and the rest equal,
/// then repairs rounding by moving single items between clusters.
pub fn realize_entropy(target: f64, n: usize, max_clusters: usize, threshold: f64) -> Vec<usize> {
    assert!(n > 0 && max_clusters > 0);
    if target <= 0.0 {
        return vec![n];
    }
    let k = (1..=max_clusters).find(|k| (*k as f64).log2() >= target - 1e-12).unwrap_or(max_clusters);
    let h = |p1: f64| {
        let rest = (1.0 - p1) / (k - 1) as f64;
        let mut e = if p1 > 0.0 { -p1 * p1.log2() } else { 0.0 };
        if rest > 0.0 {
            e -= (k - 1) as f64 * rest * rest.log2();
        }
        e
    };
    let (mut lo, mut hi) = (1.0 / k as f64, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p1 = 0.5 * (lo + hi);
    let mut probs = vec![(1.0 - p1) / (k - 1).max(1) as f64; k];
    probs[0] = p1;
    // largest-remainder rounding
    let raw: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| (raw[*b] - raw[*b].floor()).total_cmp(&(raw[*a] - raw[*a].floor())).then(a.cmp(b)));
    let short = n - counts.iter().sum::<usize>();
    for i in order.into_iter().take(short) {
        counts[i] += 1;
    }
    let ok = |c: &[usize]| {
        let e = stats::entropy_bits(c);
        stats::round_to(e, 2) == stats::round_to(target, 2) && (e < threshold) == (target < threshold)
    };
    let err = |c: &[usize]| {
        let e = stats::entropy_bits(c);
        let wrong_side = if (e < threshold) == (target < threshold) { 0.0 } else { 1.0 };
        (e - target).abs() + wrong_side
    };
    while !ok(&counts) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..k {
            for j in 0..k {
                if i == j || counts[i] == 0 {
                    continue;
                }
                let mut c = counts.clone();
                c[i] -= 1;
                c[j] += 1;
                let e = err(&c);
                if e < err(&counts) && best.is_none_or(|b| e < b.0) {
                    best = Some((e, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                counts[i] -= 1;
                counts[j] += 1;
            }
            None => panic!("cannot realize entropy {target} with {n} items"),
        }
    }
    counts.retain(|c| *c > 0);
    counts
}

/// Paraphrases the scripted VQA model uses for each anchor value.
fn paraphrases() -> Vec<(&'static str, &'static [&'static str])> {
    vec![
        ("male", &["a man", "man", "male"]),
        ("female", &["a woman", "woman", "female"]),
        ("White", &["White", "a white person", "caucasian"]),
        ("African", &["African", "black", "an african person"]),
        ("Asian", &["Asian", "an asian person", "east asian"]),
        ("Indian", &["Indian", "south asian"]),
        ("baby", &["baby", "an infant"]),
        ("toddler", &["toddler", "a small child"]),
        ("teenager", &["teenager", "a teen"]),
        ("middle-aged", &["middle-aged", "middle aged adult"]),
        ("old", &["old", "elderly", "a senior"]),
    ]
}

const OPEN_FILLERS: [&str; 4] = ["standing", "sitting", "posing for the camera", "looking around"];

/// Per-prompt answer plan, indexed by generation draw.
#[derive(Debug, Clone, Default)]
struct PromptPlan {
    /// (gerund, closed yes count, open covered count, clip aligned count)
    coverage: Option<(String, usize, usize, usize)>,
    attributes: BTreeMap<Attribute, Vec<String>>,
}

/// Scripted backend answering from [`PromptPlan`]s.
pub struct FixtureBackend {
    plans: HashMap<String, PromptPlan>,
    images: Mutex<HashMap<String, (String, u32)>>,
    synonyms: SynonymOracle,
    questions: HashMap<String, Attribute>,
    closed_questions: HashMap<String, String>,
    open_questions: Vec<String>,
}

impl Default for FixtureBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl FixtureBackend {
    pub fn new() -> Self {
        let mut synonyms = SynonymOracle::new();
        for (anchor, words) in paraphrases() {
            synonyms = synonyms.group(anchor, words);
        }
        for c in promptforge::coverage_concepts() {
            let g = c.gerund().to_string();
            let variants = [format!("the person is {g}"), format!("{g}.")];
            synonyms = synonyms.group(&g, &variants.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let questions = AttributeSpec::defaults().into_iter().map(|s| (s.question, s.name)).collect();
        Self {
            plans: HashMap::new(),
            images: Mutex::new(HashMap::new()),
            synonyms,
            questions,
            closed_questions: HashMap::new(),
            open_questions: promptforge::OPEN_QUESTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Images `0..closed` answer yes, `0..open` give coherent answers
    /// equivalent to the concept, `0..clip` embed above gamma.
    pub fn plan_coverage(&mut self, concept: &Concept, n: usize, closed: usize, open: usize, clip: usize) {
        assert!(closed <= n && open <= n && clip <= n);
        let prompt = coverage::coverage_prompt(concept);
        for q in promptforge::coverage_questions(concept).expect("coverage concept").closed {
            self.closed_questions.insert(q, prompt.clone());
        }
        self.plans.entry(prompt).or_default().coverage = Some((concept.gerund().to_string(), closed, open, clip));
    }

    /// Answers per draw for one attribute of a prompt.
    pub fn plan_attribute(&mut self, prompt: &str, attribute: Attribute, answers: Vec<String>) {
        self.plans.entry(prompt.to_string()).or_default().attributes.insert(attribute, answers);
    }

    fn image_png(prompt: &str, params: &Value, index: u64) -> Vec<u8> {
        let mut bytes = Vec::new();
        let mut seed = format!("{prompt}|{params}|{index}");
        while bytes.len() < 8 * 8 * 3 {
            let h = sha256_hex(seed.as_bytes());
            bytes.extend(hex::decode(&h).unwrap());
            seed = h;
        }
        bytes.truncate(8 * 8 * 3);
        Image::from_rgb8(8, 8, &bytes).encode_png().expect("png encodes")
    }

    fn lookup(&self, image: &str) -> Result<(String, u32), BackendError> {
        self.images
            .lock()
            .unwrap()
            .get(image)
            .cloned()
            .ok_or_else(|| BackendError::Transport(format!("fixture backend never generated {image}")))
    }

    fn open_answers(gerund: &str, covered: bool, idx: u32, sample: usize) -> String {
        if covered {
            return if sample.is_multiple_of(2) { gerund.to_string() } else { format!("the person is {gerund}") };
        }
        if idx.is_multiple_of(2) {
            // coherent but wrong
            return OPEN_FILLERS[0].to_string();
        }
        // mostly right but too uncertain: (3, 1, 1) for T = 5
        match sample {
            0..=2 => gerund.to_string(),
            s => OPEN_FILLERS[s % OPEN_FILLERS.len()].to_string(),
        }
    }

    fn vqa(&self, payload: &Value, sample: usize) -> Result<String, BackendError> {
        let image = payload["image"].as_str().unwrap_or_default();
        let question = payload["question"].as_str().unwrap_or_default();
        let (prompt, idx) = self.lookup(image)?;
        let plan = self.plans.get(&prompt).ok_or_else(|| BackendError::Transport(format!("no plan for {prompt:?}")))?;
        let i = idx as usize;
        if let Some(attr) = self.questions.get(question) {
            let answers = plan.attributes.get(attr).ok_or_else(|| BackendError::Transport(format!("no {attr} plan for {prompt:?}")))?;
            return Ok(answers[i % answers.len()].clone());
        }
        let (gerund, closed, open, _) =
            plan.coverage.as_ref().ok_or_else(|| BackendError::Transport(format!("no coverage plan for {prompt:?}")))?;
        if self.closed_questions.contains_key(question) {
            return Ok(if i < *closed { format!("Yes, the person is {gerund}.") } else { "No.".into() });
        }
        if self.open_questions.iter().any(|q| q == question) {
            return Ok(Self::open_answers(gerund, i < *open, idx, sample));
        }
        Err(BackendError::Transport(format!("unexpected question {question:?}")))
    }

    fn embed_image(&self, payload: &Value) -> Result<Vec<f64>, BackendError> {
        let (prompt, idx) = self.lookup(payload["image"].as_str().unwrap_or_default())?;
        let clip = self.plans.get(&prompt).and_then(|p| p.coverage.as_ref()).map_or(0, |c| c.3);
        let c: f64 = if (idx as usize) < clip { 0.3 } else { 0.1 };
        Ok(vec![c, (1.0 - c * c).sqrt()])
    }
}

impl Transport for FixtureBackend {
    fn post(&self, _url: &str, body: &str) -> Result<String, BackendError> {
        let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Transport(e.to_string()))?;
        let payload = &v["payload"];
        let sample = v["sample_index"].as_u64().unwrap_or(0);
        let reply = match v["kind"].as_str().unwrap_or_default() {
            "generate" => {
                let prompt = payload["prompt"].as_str().unwrap_or_default().to_string();
                let png = Self::image_png(&prompt, &payload["params"], sample);
                self.images.lock().unwrap().insert(sha256_hex(&png), (prompt, sample as u32));
                json!({"image_base64": base64::engine::general_purpose::STANDARD.encode(png)})
            }
            "vqa" => json!({"answer": self.vqa(payload, sample as usize)?}),
            "equivalence" => {
                let yes = self
                    .synonyms
                    .implies(payload["premise"].as_str().unwrap_or_default(), payload["hypothesis"].as_str().unwrap_or_default());
                json!({"answer": if yes { "Yes" } else { "No" }})
            }
            "embed_image" => json!({"embedding": self.embed_image(payload)?}),
            "embed_text" => json!({"embedding": [1.0, 0.0]}),
            k => return Err(BackendError::Transport(format!("unknown kind {k}"))),
        };
        let mut reply = reply;
        reply["backend"] = json!("fixture");
        Ok(reply.to_string())
    }
}

/// Which parts of the reference fixtures to build.
#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub models: Vec<String>,
    /// Images per coverage concept and per fairness prompt.
    pub images_per_prompt: usize,
    /// Coverage concepts to record; empty means all 30.
    pub concepts: Vec<String>,
    /// Fairness prompts to record, by index into the 51; empty means all.
    pub fairness_prompts: Vec<usize>,
    pub coverage: bool,
    pub fairness: bool,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            models: MODELS.iter().map(|s| s.to_string()).collect(),
            images_per_prompt: 500,
            concepts: Vec::new(),
            fairness_prompts: Vec::new(),
            coverage: true,
            fairness: true,
            seed: 7,
        }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

fn write_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io(path, e))?);
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r).unwrap()).map_err(|e| io(path, e))?;
    }
    f.flush().map_err(|e| io(path, e))
}

fn counts_of(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Writes `<dir>/cache` and `<dir>/<model>/{config.toml, ...}` for each
/// requested model and returns the config paths. `dir` must be empty or
/// absent.
pub fn write_reference_fixtures(dir: &Path, opts: &FixtureOptions) -> Result<Vec<PathBuf>, PipelineError> {
    if dir.exists() && std::fs::read_dir(dir).map_err(|e| io(dir, e))?.next().is_some() {
        return Err(PipelineError::Input(format!("{} is not empty", dir.display())));
    }
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let coverage_rows = published_coverage_rows();
    let entropies = published_entropy_table();
    let all_concepts = promptforge::coverage_concepts();
    let concepts: Vec<Concept> = if opts.concepts.is_empty() {
        all_concepts.clone()
    } else {
        opts.concepts
            .iter()
            .map(|n| all_concepts.iter().find(|c| &c.name == n).cloned().ok_or_else(|| PipelineError::Input(format!("unknown concept {n}"))))
            .collect::<Result<_, _>>()?
    };
    let fairness_concepts = promptforge::fairness_concepts();
    let prompt_idx: Vec<usize> =
        if opts.fairness_prompts.is_empty() { (0..fairness_concepts.len()).collect() } else { opts.fairness_prompts.clone() };
    let n = opts.images_per_prompt;
    let mut configs = Vec::new();

    for (mi, model) in opts.models.iter().enumerate() {
        let mdir = dir.join(model);
        std::fs::create_dir_all(&mdir).map_err(|e| io(&mdir, e))?;
        let mut cfg = RunConfig { model: model.clone(), seed: opts.seed, images_per_prompt: n, ..Default::default() };
        cfg.backend.cache_dir = "../cache".into();
        cfg.quality.prompts = 0;

        let &(_, mean, std) = AESTHETIC_TABLE
            .iter()
            .find(|(m, _, _)| m == model)
            .ok_or_else(|| PipelineError::Input(format!("no published values for model {model}")))?;
        let scores: Vec<Value> = aesthetic_scores(1000, mean, std, opts.seed + mi as u64)
            .into_iter()
            .enumerate()
            .map(|(i, s)| json!({"image_id": format!("{model}-{i:05}"), "score": s}))
            .collect();
        write_lines(&mdir.join("scores.jsonl"), &scores)?;
        cfg.aesthetics.scores = Some("scores.jsonl".into());

        let face = FACE_DEFECT_TABLE.iter().find(|(m, _)| m == model).unwrap().1;
        let comps: Vec<(Component, u32)> = match model.as_str() {
            "sdxl" => COMPONENT_DEFECT_TABLE.iter().map(|(c, x, _)| (*c, *x)).collect(),
            "sd2.1" => COMPONENT_DEFECT_TABLE.iter().map(|(c, _, y)| (*c, *y)).collect(),
            _ => Vec::new(),
        };
        write_lines(&mdir.join("predictions.jsonl"), &defect_predictions(model, face, &comps, 1000))?;
        cfg.realism.predictions = Some("predictions.jsonl".into());

        let has_tables = coverage_rows.iter().any(|r| &r.model == model);
        let mut backend = FixtureBackend::new();
        let mut record_coverage = false;
        let mut record_fairness = false;
        if opts.coverage && has_tables {
            for c in &concepts {
                let row = coverage_rows.iter().find(|r| &r.model == model && r.concept == c.name).unwrap();
                backend.plan_coverage(c, n, counts_of(row.cov_closed, n), counts_of(row.cov_open, n), counts_of(row.cov_clip, n));
            }
            cfg.coverage.concepts = concepts.iter().map(|c| c.name.clone()).collect();
            record_coverage = true;
        }
        if opts.fairness && has_tables {
            let prompts: Vec<String> = prompt_idx.iter().map(|i| promptforge::fairness_prompt(&fairness_concepts[*i])).collect();
            for (pi, (&i, prompt)) in prompt_idx.iter().zip(&prompts).enumerate() {
                let concept = &fairness_concepts[i];
                for spec in AttributeSpec::defaults() {
                    let e = entropy_entry(&entropies, model, concept, spec.name)
                        .ok_or_else(|| PipelineError::Input(format!("no entropy for {} / {}", concept.name, spec.name)))?
                        .entropy;
                    let counts = realize_entropy(e, n, spec.values.len(), spec.threshold);
                    let para = paraphrases();
                    let mut answers = Vec::with_capacity(n);
                    for (ci, c) in counts.iter().enumerate() {
                        let anchor = &spec.values[(ci + pi) % spec.values.len()];
                        let words = para.iter().find(|(a, _)| a == anchor).unwrap().1;
                        for j in 0..*c {
                            answers.push(words[j % words.len()].to_string());
                        }
                    }
                    backend.plan_attribute(prompt, spec.name, answers);
                }
            }
            if !opts.fairness_prompts.is_empty() {
                cfg.fairness.prompts = prompts;
            }
            cfg.fairness.vqa_accuracy = Some("vqa_accuracy.csv".into());
            let p = mdir.join("vqa_accuracy.csv");
            std::fs::write(&p, VQA_ACCURACY).map_err(|e| io(&p, e))?;
            record_fairness = true;
        }

        if record_coverage || record_fairness {
            let backend = Arc::new(backend);
            let mut rec = cfg.clone();
            rec.backend.mode = Mode::Mixed;
            rec.backend.endpoints = Endpoints {
                generator: Some("fixture://generate".into()),
                vqa: Some("fixture://vqa".into()),
                equivalence: Some("fixture://equivalence".into()),
                embed: Some("fixture://embed".into()),
            };
            rec.out_dir = "record".into();
            if !record_coverage {
                rec.coverage.concepts.clear();
            }
            let run = Run::new(rec, &mdir)?.with_transport(backend.clone());
            let imgs = generate_for(&run, record_coverage, record_fairness)?;
            if record_coverage {
                run.execute(Subcommand::Coverage)?;
            }
            if record_fairness {
                run.execute(Subcommand::Fairness)?;
            }
            let rec_dir = mdir.join("record");
            std::fs::remove_dir_all(&rec_dir).map_err(|e| io(&rec_dir, e))?;

            if record_coverage {
                let mut verdicts = Vec::new();
                for c in &concepts {
                    let row = coverage_rows.iter().find(|r| &r.model == model && r.concept == c.name).unwrap();
                    let (loose, strict) = (counts_of(row.human_loose.unwrap_or(0.0), n), counts_of(row.human_strict.unwrap_or(0.0), n));
                    let mut ids = imgs[&coverage::coverage_prompt(c)].clone();
                    ids.sort();
                    for (j, id) in ids.iter().enumerate() {
                        verdicts.push(coverage::HumanVerdict {
                            image_id: id.clone(),
                            captures_concept: j < loose,
                            defect_free: j < strict,
                            concept: None,
                        });
                    }
                }
                write_lines(&mdir.join("human_eval.jsonl"), &verdicts)?;
                cfg.coverage.human_eval = Some("human_eval.jsonl".into());
            }
        }
        if !record_coverage {
            cfg.coverage.concepts = Vec::new();
        }

        let text = toml::to_string(&cfg).map_err(|e| PipelineError::Input(e.to_string()))?;
        let p = mdir.join("config.toml");
        std::fs::write(&p, text).map_err(|e| io(&p, e))?;
        configs.push(p);
    }
    Ok(configs)
}

/// Records generation for the coverage and fairness prompts and returns
/// image ids per prompt.
fn generate_for(run: &Run, coverage_on: bool, fairness_on: bool) -> Result<HashMap<String, Vec<String>>, PipelineError> {
    let oracle = run.oracle()?;
    let cfg = &run.config;
    let mut params = crate::backends::GeneratorParams { seed: cfg.seed, ..Default::default() };
    params.extra.insert("model".into(), json!(cfg.model));
    let mut prompts = Vec::new();
    if coverage_on {
        for name in &cfg.coverage.concepts {
            let c = promptforge::coverage_concepts().into_iter().find(|c| &c.name == name).unwrap();
            prompts.push(coverage::coverage_prompt(&c));
        }
    }
    if fairness_on {
        if cfg.fairness.prompts.is_empty() {
            prompts.extend(promptforge::fairness_prompts());
        } else {
            prompts.extend(cfg.fairness.prompts.iter().cloned());
        }
    }
    let mut out = HashMap::new();
    for p in prompts {
        let refs = oracle.generate_images(&p, cfg.images_per_prompt, &params)?;
        out.insert(p, refs.into_iter().map(|r| r.0).collect());
    }
    oracle.cache().flush()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realized_entropies_round_back() {
        for (e, k, th) in [(0.43, 2, 0.8), (0.8, 2, 0.8), (1.0, 4, 1.0), (1.0, 2, 0.8), (0.79, 2, 0.8), (1.77, 4, 1.0), (1.0, 4, 1.0), (0.02, 4, 1.0), (1.84, 5, 1.0), (0.99, 5, 1.0)] {
            let c = realize_entropy(e, 500, k, th);
            assert_eq!(c.iter().sum::<usize>(), 500);
            let h = stats::entropy_bits(&c);
            assert_eq!(stats::round_to(h, 2), e, "{e} -> {c:?} = {h}");
            assert_eq!(h < th, e < th);
        }
    }

    #[test]
    fn every_table_entropy_is_realizable_at_1000() {
        for e in published_entropy_table() {
            let spec = AttributeSpec::default_for(e.attribute);
            let c = realize_entropy(e.entropy, 1000, spec.values.len(), spec.threshold);
            assert_eq!(stats::round_to(stats::entropy_bits(&c), 2), e.entropy);
        }
    }

    #[test]
    fn scores_hit_mean_and_std() {
        let s = aesthetic_scores(1000, 6.35, 0.45, 1);
        assert!((stats::mean(&s) - 6.35).abs() < 1e-9);
        assert!((stats::std_pop(&s) - 0.45).abs() < 1e-9);
    }

    #[test]
    fn bundled_tables_have_expected_shape() {
        assert_eq!(published_coverage_rows().len(), 90);
        assert_eq!(published_entropy_table().len(), 459);
        assert_eq!(published_vqa_accuracy().len(), 20);
    }
}
