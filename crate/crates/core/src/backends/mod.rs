//! Oracle clients (image generator, VQA, semantic equivalence, embeddings)
//! behind a record/replay transcript cache.
//!
//! Every query is a [`BackendRequest`]: a backend kind, a JSON payload and a
//! sample index. In `replay` mode answers come only from the cache and a
//! miss is an error naming the request hash. `record` queries the live
//! backend for every request and writes through; `mixed` reads the cache
//! first and records misses.
//!
//! Live backends receive an HTTP POST whose body is the canonical JSON
//!
//! ```text
//! {"attachments":{...},"kind":"vqa","payload":{...},"sample_index":0}
//! ```
//!
//! where `attachments.image_base64` carries PNG bytes for image-consuming
//! kinds. Responses are JSON objects with `answer` (vqa, equivalence),
//! `embedding` (embed_image, embed_text) or `image_base64` (generate), plus
//! an optional `backend` identity string.

mod cache;
mod request;
mod transport;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use cache::{Cache, OracleTranscript, Response, IMAGES_DIR, TRANSCRIPTS_FILE};
pub use request::{canonical_json, request_hash, sha256_hex, BackendKind, BackendRequest};
pub use transport::{HttpTransport, Transport};

use crate::image::Image;

pub const DEFAULT_EQUIVALENCE_TEMPLATE: &str = "Does '{a}' imply '{b}'? Answer yes or no.";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("cache miss for request {hash} (sample {sample_index})")]
    CacheMiss { hash: String, sample_index: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend config error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("equivalence protocol error: {0}")]
    EquivalenceProtocol(String),
    #[error("backend contract violated: {0}")]
    Contract(String),
    #[error("image {0} not found in cache")]
    MissingImage(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Record,
    #[default]
    Replay,
    Mixed,
}

impl FromStr for Mode {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "mixed" => Ok(Self::Mixed),
            other => Err(BackendError::Config(format!("unknown mode {other:?} (record|replay|mixed)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Record => "record",
            Self::Replay => "replay",
            Self::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<String>,
}

impl Endpoints {
    pub fn for_kind(&self, kind: BackendKind) -> Option<&str> {
        match kind {
            BackendKind::Generate => self.generator.as_deref(),
            BackendKind::Vqa => self.vqa.as_deref(),
            BackendKind::Equivalence => self.equivalence.as_deref(),
            BackendKind::EmbedImage | BackendKind::EmbedText => self.embed.as_deref(),
        }
    }
}

/// Content hash of a generated image stored in the cache.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Generator settings hashed into every generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GeneratorParams {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    /// yes/no question; answers are normalized.
    Closed,
    /// free-form; answers are trimmed only.
    Open,
}

/// Maps a closed-ended answer to `"yes"`/`"no"`. Returns `None` when the
/// answer starts with neither word.
pub fn normalize_closed(answer: &str) -> Option<&'static str> {
    let lower = answer.trim().trim_start_matches(['"', '\'']).to_lowercase();
    for word in ["yes", "no"] {
        if let Some(rest) = lower.strip_prefix(word) {
            if rest.chars().next().is_none_or(|c| !c.is_alphanumeric()) {
                return Some(if word == "yes" { "yes" } else { "no" });
            }
        }
    }
    None
}

/// Decides whether two answers are semantically equivalent.
pub trait Equivalence: Sync {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool, BackendError>;
}

impl<F> Equivalence for F
where
    F: Fn(&str, &str) -> bool + Sync,
{
    fn equivalent(&self, a: &str, b: &str) -> Result<bool, BackendError> {
        Ok(self(a, b))
    }
}

/// Rule-based equivalence: strings are equivalent iff they share a
/// canonical form. Unlisted strings are their own canonical form
/// (compared case-insensitively).
#[derive(Debug, Clone, Default)]
pub struct SynonymOracle {
    canon: HashMap<String, String>,
}

impl SynonymOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn group(mut self, canonical: &str, members: &[&str]) -> Self {
        self.canon.insert(canonical.to_lowercase(), canonical.to_lowercase());
        for m in members {
            self.canon.insert(m.trim().to_lowercase(), canonical.to_lowercase());
        }
        self
    }

    pub fn canonical(&self, s: &str) -> String {
        let key = s.trim().to_lowercase();
        self.canon.get(&key).cloned().unwrap_or(key)
    }

    /// Directed implication used by scripted equivalence backends.
    pub fn implies(&self, a: &str, b: &str) -> bool {
        self.canonical(a) == self.canonical(b)
    }
}

impl Equivalence for SynonymOracle {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool, BackendError> {
        Ok(self.implies(a, b))
    }
}

/// Parses an equivalence verdict: leading yes/no after trimming.
pub fn parse_verdict(answer: &str) -> Result<bool, BackendError> {
    match normalize_closed(answer) {
        Some("yes") => Ok(true),
        Some(_) => Ok(false),
        None => Err(BackendError::EquivalenceProtocol(format!("unparseable verdict {answer:?}"))),
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, BackendError> {
    if a.len() != b.len() {
        return Err(BackendError::Contract(format!("embedding dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(BackendError::Contract("zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub struct OracleBuilder {
    cache: Cache,
    mode: Mode,
    endpoints: Endpoints,
    transport: Option<Arc<dyn Transport>>,
    equivalence_template: String,
    max_in_flight: usize,
}

impl OracleBuilder {
    pub fn mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn endpoints(mut self, endpoints: Endpoints) -> Self {
        self.endpoints = endpoints;
        self
    }

    pub fn transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn equivalence_template(mut self, template: impl Into<String>) -> Self {
        self.equivalence_template = template.into();
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn build(self) -> Oracle {
        Oracle {
            cache: self.cache,
            mode: self.mode,
            endpoints: self.endpoints,
            transport: self.transport,
            equivalence_template: self.equivalence_template,
            max_in_flight: self.max_in_flight,
            live_calls: AtomicU64::new(0),
            normalization_warnings: AtomicU64::new(0),
            equivalence_memo: Mutex::new(HashMap::new()),
        }
    }
}

/// Front door to all backends.
pub struct Oracle {
    cache: Cache,
    mode: Mode,
    endpoints: Endpoints,
    transport: Option<Arc<dyn Transport>>,
    equivalence_template: String,
    max_in_flight: usize,
    live_calls: AtomicU64,
    normalization_warnings: AtomicU64,
    equivalence_memo: Mutex<HashMap<(String, String), bool>>,
}

impl Oracle {
    pub fn builder(cache: Cache) -> OracleBuilder {
        OracleBuilder {
            cache,
            mode: Mode::Replay,
            endpoints: Endpoints::default(),
            transport: None,
            equivalence_template: DEFAULT_EQUIVALENCE_TEMPLATE.to_string(),
            max_in_flight: 8,
        }
    }

    /// Strict replay over an existing cache directory.
    pub fn replay(dir: impl AsRef<std::path::Path>) -> Result<Oracle, BackendError> {
        Ok(Oracle::builder(Cache::open_read_only(dir)?).mode(Mode::Replay).build())
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Number of requests sent to live backends so far.
    pub fn live_calls(&self) -> u64 {
        self.live_calls.load(Ordering::Relaxed)
    }

    /// Closed answers that were neither yes nor no and were counted as no.
    pub fn normalization_warnings(&self) -> u64 {
        self.normalization_warnings.load(Ordering::Relaxed)
    }

    /// Resolves a request through the cache and, depending on mode, the
    /// live backend.
    pub fn query(&self, request: &BackendRequest, attachments: &[(&str, &[u8])]) -> Result<OracleTranscript, BackendError> {
        if self.mode != Mode::Record {
            if let Some(t) = self.cache.get(request) {
                return Ok(t);
            }
            if self.mode == Mode::Replay {
                return Err(BackendError::CacheMiss { hash: request.hash(), sample_index: request.sample_index });
            }
        }
        let transcript = self.call_live(request, attachments)?;
        self.cache.put(transcript.clone())?;
        Ok(transcript)
    }

    fn call_live(&self, request: &BackendRequest, attachments: &[(&str, &[u8])]) -> Result<OracleTranscript, BackendError> {
        let url = self
            .endpoints
            .for_kind(request.kind)
            .ok_or_else(|| BackendError::Config(format!("no endpoint configured for {}", request.kind)))?;
        let transport =
            self.transport.as_ref().ok_or_else(|| BackendError::Config("no live transport configured".into()))?;
        let engine = base64::engine::general_purpose::STANDARD;
        let attached: Map<String, Value> =
            attachments.iter().map(|(k, v)| (format!("{k}_base64"), Value::String(engine.encode(v)))).collect();
        let body = canonical_json(&json!({
            "attachments": attached,
            "kind": request.kind.as_str(),
            "payload": request.payload,
            "sample_index": request.sample_index,
        }));
        self.live_calls.fetch_add(1, Ordering::Relaxed);
        let raw = transport.post(url, &body)?;
        let reply: Value = serde_json::from_str(&raw)
            .map_err(|e| BackendError::Contract(format!("{} returned non-JSON body: {e}", request.kind)))?;
        let identity = reply.get("backend").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("live:{url}"));
        let missing = |field: &str| BackendError::Contract(format!("{} response lacks `{field}`", request.kind));
        let response = match request.kind {
            BackendKind::Vqa | BackendKind::Equivalence => {
                Response::Text(reply.get("answer").and_then(Value::as_str).ok_or_else(|| missing("answer"))?.to_string())
            }
            BackendKind::EmbedImage | BackendKind::EmbedText => {
                let arr = reply.get("embedding").and_then(Value::as_array).ok_or_else(|| missing("embedding"))?;
                let v = arr
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| missing("embedding")))
                    .collect::<Result<Vec<f64>, _>>()?;
                Response::Vector(v)
            }
            BackendKind::Generate => {
                let b64 = reply.get("image_base64").and_then(Value::as_str).ok_or_else(|| missing("image_base64"))?;
                let png = engine
                    .decode(b64)
                    .map_err(|e| BackendError::Contract(format!("generator returned bad base64: {e}")))?;
                Image::decode(&png).map_err(|e| BackendError::Contract(format!("generator returned {e}")))?;
                Response::Image(self.cache.put_image(&png)?)
            }
        };
        let mut t = OracleTranscript::new(request, response, identity);
        if request.kind == BackendKind::Vqa && request.payload.get("answer_kind") == Some(&json!("closed")) {
            if let Response::Text(a) = &t.response {
                if normalize_closed(a).is_none() {
                    t.warning = Some("closed answer is neither yes nor no; counted as no".into());
                }
            }
        }
        Ok(t)
    }

    pub fn generation_request(prompt: &str, params: &GeneratorParams, index: u32) -> BackendRequest {
        BackendRequest::new(BackendKind::Generate, json!({"prompt": prompt, "params": params}), index)
    }

    /// Produces `n` images for a prompt; draw `i` is sample index `i`.
    pub fn generate_images(&self, prompt: &str, n: usize, params: &GeneratorParams) -> Result<Vec<ImageRef>, BackendError> {
        if n == 0 {
            return Err(BackendError::Precondition("n must be at least 1".into()));
        }
        let indices: Vec<u32> = (0..n as u32).collect();
        self.par_map(&indices, |i| {
            let t = self.query(&Self::generation_request(prompt, params, *i), &[])?;
            match t.response {
                Response::Image(hash) if self.cache.has_image(&hash) => Ok(ImageRef(hash)),
                Response::Image(hash) => Err(BackendError::MissingImage(hash)),
                other => Err(BackendError::Contract(format!("generate transcript holds {other:?}"))),
            }
        })
    }

    pub fn load_image(&self, image: &ImageRef) -> Result<Image, BackendError> {
        let bytes = self.cache.image_bytes(image.as_str())?;
        Image::decode(&bytes).map_err(|e| BackendError::Contract(e.to_string()))
    }

    pub fn vqa_request(image: &ImageRef, question: &str, kind: AnswerKind, sample: u32) -> BackendRequest {
        let answer_kind = match kind {
            AnswerKind::Closed => "closed",
            AnswerKind::Open => "open",
        };
        BackendRequest::new(
            BackendKind::Vqa,
            json!({"answer_kind": answer_kind, "image": image.as_str(), "question": question}),
            sample,
        )
    }

    fn attachment(&self, image: &ImageRef) -> Result<Vec<u8>, BackendError> {
        if self.mode == Mode::Replay {
            return Ok(Vec::new());
        }
        self.cache.image_bytes(image.as_str())
    }

    /// Asks `samples` times; closed answers come back as `"yes"`/`"no"`,
    /// open answers trimmed and otherwise verbatim, in sample order.
    pub fn vqa_ask(&self, image: &ImageRef, question: &str, kind: AnswerKind, samples: usize) -> Result<Vec<String>, BackendError> {
        if samples == 0 {
            return Err(BackendError::Precondition("T must be at least 1".into()));
        }
        let mut answers = Vec::with_capacity(samples);
        for s in 0..samples as u32 {
            let req = Self::vqa_request(image, question, kind, s);
            let t = match self.cache.get(&req) {
                Some(t) if self.mode != Mode::Record => t,
                _ => self.query(&req, &[("image", &self.attachment(image)?)])?,
            };
            let Response::Text(raw) = t.response else {
                return Err(BackendError::Contract("vqa transcript is not text".into()));
            };
            answers.push(match kind {
                AnswerKind::Open => raw.trim().to_string(),
                AnswerKind::Closed => match normalize_closed(&raw) {
                    Some(a) => a.to_string(),
                    None => {
                        self.normalization_warnings.fetch_add(1, Ordering::Relaxed);
                        log::warn!("closed answer {raw:?} is neither yes nor no; counted as no");
                        "no".to_string()
                    }
                },
            });
        }
        Ok(answers)
    }

    pub fn implication_request(&self, premise: &str, hypothesis: &str) -> BackendRequest {
        let prompt = self.equivalence_template.replace("{a}", premise).replace("{b}", hypothesis);
        BackendRequest::new(
            BackendKind::Equivalence,
            json!({"hypothesis": hypothesis, "premise": premise, "prompt": prompt}),
            0,
        )
    }

    fn implies(&self, premise: &str, hypothesis: &str) -> Result<bool, BackendError> {
        let t = self.query(&self.implication_request(premise, hypothesis), &[])?;
        match t.response {
            Response::Text(answer) => parse_verdict(&answer),
            _ => Err(BackendError::EquivalenceProtocol("equivalence transcript is not text".into())),
        }
    }

    /// Bidirectional implication check. Arguments are ordered before
    /// querying, so the result does not depend on argument order.
    pub fn sem_equivalent(&self, a: &str, b: &str) -> Result<bool, BackendError> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(BackendError::Precondition("sem_equivalent needs non-empty strings".into()));
        }
        if a == b {
            return Ok(true);
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let key = (lo.to_string(), hi.to_string());
        if let Some(v) = self.equivalence_memo.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let verdict = self.implies(lo, hi)? && self.implies(hi, lo)?;
        self.equivalence_memo.lock().unwrap().insert(key, verdict);
        Ok(verdict)
    }

    pub fn image_embedding_request(image: &ImageRef) -> BackendRequest {
        BackendRequest::new(BackendKind::EmbedImage, json!({"image": image.as_str()}), 0)
    }

    pub fn text_embedding_request(text: &str) -> BackendRequest {
        BackendRequest::new(BackendKind::EmbedText, json!({"text": text}), 0)
    }

    fn vector(t: OracleTranscript) -> Result<Vec<f64>, BackendError> {
        match t.response {
            Response::Vector(v) => Ok(v),
            other => Err(BackendError::Contract(format!("embedding transcript holds {other:?}"))),
        }
    }

    pub fn embed_image(&self, image: &ImageRef) -> Result<Vec<f64>, BackendError> {
        let req = Self::image_embedding_request(image);
        let t = match self.cache.get(&req) {
            Some(t) if self.mode != Mode::Record => t,
            _ => self.query(&req, &[("image", &self.attachment(image)?)])?,
        };
        Self::vector(t)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        Self::vector(self.query(&Self::text_embedding_request(text), &[])?)
    }

    /// Raw cosine similarity between image and text embeddings.
    pub fn clip_score(&self, image: &ImageRef, text: &str) -> Result<f64, BackendError> {
        cosine(&self.embed_image(image)?, &self.embed_text(text)?)
    }

    /// Order-preserving parallel map bounded by the in-flight limit.
    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>, BackendError>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R, BackendError> + Sync + Send,
    {
        use rayon::prelude::*;
        if self.max_in_flight <= 1 || items.len() <= 1 {
            return items.iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_in_flight)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        pool.install(|| items.par_iter().map(&f).collect())
    }
}

impl Equivalence for Oracle {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool, BackendError> {
        self.sem_equivalent(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Answers from a fixed table keyed by (kind, payload field).
    struct Scripted {
        synonyms: SynonymOracle,
    }

    impl Transport for Scripted {
        fn post(&self, _url: &str, body: &str) -> Result<String, BackendError> {
            let v: Value = serde_json::from_str(body).unwrap();
            let p = &v["payload"];
            Ok(match v["kind"].as_str().unwrap() {
                "equivalence" => {
                    let yes = self.synonyms.implies(p["premise"].as_str().unwrap(), p["hypothesis"].as_str().unwrap());
                    json!({"answer": if yes { "Yes." } else { "No." }, "backend": "scripted"})
                }
                "vqa" => json!({"answer": format!("Yes, sample {}", v["sample_index"])}),
                "embed_text" => json!({"embedding": [1.0, 0.0]}),
                "embed_image" => json!({"embedding": [0.6, 0.8]}),
                "generate" => {
                    let img = Image::filled(4, 4, [v["sample_index"].as_u64().unwrap() as f32 / 10.0, 0.0, 0.0]);
                    let b64 = base64::engine::general_purpose::STANDARD.encode(img.encode_png().unwrap());
                    json!({"image_base64": b64})
                }
                _ => unreachable!(),
            }
            .to_string())
        }
    }

    fn recording_oracle(dir: &std::path::Path) -> Oracle {
        let synonyms = SynonymOracle::new().group("run", &["running", "jogging"]);
        Oracle::builder(Cache::open(dir).unwrap())
            .mode(Mode::Mixed)
            .endpoints(Endpoints {
                generator: Some("http://gen".into()),
                vqa: Some("http://vqa".into()),
                equivalence: Some("http://eq".into()),
                embed: Some("http://embed".into()),
            })
            .transport(Arc::new(Scripted { synonyms }))
            .build()
    }

    #[test]
    fn closed_normalization() {
        assert_eq!(normalize_closed("Yes, she is."), Some("yes"));
        assert_eq!(normalize_closed("  no"), Some("no"));
        assert_eq!(normalize_closed("NO."), Some("no"));
        assert_eq!(normalize_closed("nobody knows"), None);
        assert_eq!(normalize_closed("yesterday"), None);
        assert_eq!(normalize_closed("maybe"), None);
    }

    #[test]
    fn equivalence_is_reflexive_without_calls() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = Oracle::builder(Cache::open(dir.path()).unwrap()).build();
        assert!(oracle.sem_equivalent("running", "running").unwrap());
        assert_eq!(oracle.live_calls(), 0);
    }

    #[test]
    fn equivalence_through_scripted_backend() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = recording_oracle(dir.path());
        assert!(oracle.sem_equivalent("jogging", "running").unwrap());
        assert!(oracle.sem_equivalent("running", "jogging").unwrap());
        assert!(!oracle.sem_equivalent("running", "sleeping").unwrap());
        assert!(!oracle.sem_equivalent("sleeping", "running").unwrap());
        // jogging<->running needs both directions, running->sleeping stops after one
        assert_eq!(oracle.live_calls(), 3);
        drop(oracle);
        let replay = Oracle::replay(dir.path()).unwrap();
        assert!(replay.sem_equivalent("running", "jogging").unwrap());
        assert!(!replay.sem_equivalent("sleeping", "running").unwrap());
        assert_eq!(replay.live_calls(), 0);
    }

    #[test]
    fn verdict_parse_errors() {
        assert!(parse_verdict("Yes").unwrap());
        assert!(!parse_verdict("no, they differ").unwrap());
        assert!(matches!(parse_verdict("perhaps"), Err(BackendError::EquivalenceProtocol(_))));
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 0.0], &[0.6, 0.8]).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(BackendError::Contract(_))));
    }

    #[test]
    fn generate_vqa_clip_record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = recording_oracle(dir.path());
        let params = GeneratorParams { seed: 1, extra: Map::new() };
        let refs = oracle.generate_images("a photo", 3, &params).unwrap();
        assert_eq!(refs.len(), 3);
        let answers = oracle.vqa_ask(&refs[0], "Is the person running in the image?", AnswerKind::Closed, 2).unwrap();
        assert_eq!(answers, ["yes", "yes"]);
        let open = oracle.vqa_ask(&refs[0], "What?", AnswerKind::Open, 2).unwrap();
        assert_eq!(open, ["Yes, sample 0", "Yes, sample 1"]);
        assert!((oracle.clip_score(&refs[1], "running").unwrap() - 0.6).abs() < 1e-12);
        let calls = oracle.live_calls();
        drop(oracle);

        let replay = Oracle::replay(dir.path()).unwrap();
        assert_eq!(replay.generate_images("a photo", 3, &params).unwrap(), refs);
        assert_eq!(replay.vqa_ask(&refs[0], "What?", AnswerKind::Open, 2).unwrap(), open);
        assert!((replay.clip_score(&refs[1], "running").unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(replay.live_calls(), 0);
        assert!(calls > 0);

        let miss = replay.generate_images("another prompt", 1, &params).unwrap_err();
        let BackendError::CacheMiss { hash, .. } = miss else { panic!("{miss}") };
        assert_eq!(hash, Oracle::generation_request("another prompt", &params, 0).hash());
        assert!(matches!(replay.generate_images("a photo", 0, &params), Err(BackendError::Precondition(_))));
    }

    #[test]
    fn unparseable_closed_answer_counts_as_no() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let img = ImageRef("ab".repeat(32));
        let req = Oracle::vqa_request(&img, "Is it?", AnswerKind::Closed, 0);
        cache.put(OracleTranscript::new(&req, Response::Text("The person is jogging.".into()), "fixture")).unwrap();
        let oracle = Oracle::builder(cache).build();
        assert_eq!(oracle.vqa_ask(&img, "Is it?", AnswerKind::Closed, 1).unwrap(), ["no"]);
        assert_eq!(oracle.normalization_warnings(), 1);
    }
}
