//! Concept coverage: semantic clustering of open answers, closed/open VQA
//! coverage, the CLIP-similarity baseline and human-evaluation ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::{AnswerKind, BackendError, Equivalence, ImageRef, Oracle};
use crate::promptforge::{self, Concept};
use crate::stats::{self, StatsError};

pub const DEFAULT_T: usize = 5;
pub const DEFAULT_DELTA: f64 = 0.8;
pub const DEFAULT_GAMMA: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum CoverageError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub image_id: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster id of each answer, by answer index.
    pub semantic_set_ids: Vec<usize>,
    pub semantic_set_counts: BTreeMap<usize, usize>,
    pub semantic_entropy: f64,
    pub final_answer: String,
}

/// Empty answers never reach the equivalence backend; they only match
/// each other.
fn equivalent<E: Equivalence + ?Sized>(eq: &E, a: &str, b: &str) -> Result<bool, BackendError> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Ok(a.trim() == b.trim());
    }
    eq.equivalent(a, b)
}

/// Semantic clustering. Every ordered pair (m, n) with m < n is compared and a
/// match overwrites n's id with m's current id, so a non-transitive
/// oracle gives an order-dependent partition.
pub fn semantic_cluster<E: Equivalence + ?Sized>(answers: &[String], eq: &E) -> Result<ClusterResult, CoverageError> {
    if answers.is_empty() {
        return Err(CoverageError::Precondition("answer set is empty".into()));
    }
    let t = answers.len();
    let mut ids: Vec<usize> = (0..t).collect();
    for m in 0..t {
        for n in m + 1..t {
            if equivalent(eq, &answers[m], &answers[n])? {
                ids[n] = ids[m];
            }
        }
    }
    let mut counts = BTreeMap::new();
    for id in &ids {
        *counts.entry(*id).or_insert(0usize) += 1;
    }
    let count_vec: Vec<usize> = counts.values().copied().collect();
    let entropy = stats::entropy_bits(&count_vec);
    // BTreeMap iterates ids in ascending order, so the first maximum is the lowest id
    let mut best = (0usize, 0usize);
    for (id, c) in &counts {
        if *c > best.1 {
            best = (*id, *c);
        }
    }
    let rep = ids.iter().position(|id| *id == best.0).expect("cluster has a member");
    Ok(ClusterResult {
        semantic_set_ids: ids,
        semantic_set_counts: counts,
        semantic_entropy: entropy,
        final_answer: answers[rep].clone(),
    })
}

/// How an image's closed answers turn into one indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedMode {
    #[default]
    FirstTemplate,
    /// Non-standard: yes if any template answers yes.
    AnyTemplate,
}

impl FromStr for ClosedMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first_template" => Ok(Self::FirstTemplate),
            "any_template" => Ok(Self::AnyTemplate),
            _ => Err(format!("unknown closed mode {s:?}")),
        }
    }
}

/// Fraction of normalized closed answers equal to "yes".
pub fn cov_closed_from_answers(answers: &[String]) -> Result<f64, CoverageError> {
    if answers.is_empty() {
        return Err(CoverageError::Precondition("cov_closed needs at least one image".into()));
    }
    Ok(answers.iter().filter(|a| a.as_str() == "yes").count() as f64 / answers.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenOutcome {
    pub image_id: String,
    pub cluster: ClusterResult,
    pub covered: bool,
}

/// One image's contribution to cov_open.
pub fn open_outcome<E: Equivalence + ?Sized>(
    set: &AnswerSet,
    concept: &str,
    eq: &E,
    delta: f64,
) -> Result<OpenOutcome, CoverageError> {
    let cluster = semantic_cluster(&set.answers, eq)?;
    let covered = cluster.semantic_entropy <= delta && equivalent(eq, &cluster.final_answer, concept)?;
    Ok(OpenOutcome { image_id: set.image_id.clone(), cluster, covered })
}

fn check_open(sets: &[AnswerSet], delta: f64) -> Result<(), CoverageError> {
    if sets.is_empty() {
        return Err(CoverageError::Precondition("cov_open needs at least one image".into()));
    }
    if !(delta > 0.0) {
        return Err(CoverageError::Precondition(format!("delta must be positive, got {delta}")));
    }
    if let Some(s) = sets.iter().find(|s| s.answers.len() < 2) {
        return Err(CoverageError::Precondition(format!("image {} has T = {} < 2", s.image_id, s.answers.len())));
    }
    Ok(())
}

pub fn cov_open_from_answers<E: Equivalence + ?Sized>(
    sets: &[AnswerSet],
    concept: &str,
    eq: &E,
    delta: f64,
) -> Result<f64, CoverageError> {
    check_open(sets, delta)?;
    let mut hits = 0;
    for s in sets {
        if open_outcome(s, concept, eq, delta)?.covered {
            hits += 1;
        }
    }
    Ok(hits as f64 / sets.len() as f64)
}

/// Fraction of scores at or above gamma.
pub fn cov_clip_from_scores(scores: &[f64], gamma: f64) -> Result<f64, CoverageError> {
    if scores.is_empty() {
        return Err(CoverageError::Precondition("cov_clip needs at least one image".into()));
    }
    Ok(scores.iter().filter(|s| **s >= gamma).count() as f64 / scores.len() as f64)
}

/// Prompt used both to generate coverage images and as the CLIP text.
pub fn coverage_prompt(concept: &Concept) -> String {
    promptforge::fairness_prompt(concept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSettings {
    pub t: usize,
    pub delta: f64,
    pub gamma: f64,
    pub closed_mode: ClosedMode,
    /// Index into the open question templates.
    pub open_question: usize,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        Self { t: DEFAULT_T, delta: DEFAULT_DELTA, gamma: DEFAULT_GAMMA, closed_mode: ClosedMode::default(), open_question: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCoverage {
    pub image_id: String,
    pub closed_yes: bool,
    pub semantic_entropy: f64,
    pub final_answer: String,
    pub open_covered: bool,
    pub clip_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCoverage {
    pub concept: String,
    pub n_images: usize,
    pub cov_closed: f64,
    pub cov_open: f64,
    pub cov_clip: f64,
    pub images: Vec<ImageCoverage>,
}

/// Runs all three machine metrics for one concept. Images are processed
/// in the order given; callers sort by image id.
pub fn concept_coverage(
    oracle: &Oracle,
    concept: &Concept,
    images: &[ImageRef],
    settings: &CoverageSettings,
) -> Result<ConceptCoverage, CoverageError> {
    if images.is_empty() {
        return Err(CoverageError::Precondition(format!("no images for concept {}", concept.name)));
    }
    if settings.t < 2 {
        return Err(CoverageError::Precondition(format!("T must be at least 2, got {}", settings.t)));
    }
    let questions = promptforge::coverage_questions(concept).map_err(|e| CoverageError::Precondition(e.to_string()))?;
    let open_q = questions
        .open
        .get(settings.open_question)
        .ok_or_else(|| CoverageError::Precondition(format!("no open question #{}", settings.open_question)))?;
    let target = concept.gerund().to_string();
    let prompt = coverage_prompt(concept);

    let per_image = oracle.par_map(images, |img| {
        let closed_yes = match settings.closed_mode {
            ClosedMode::FirstTemplate => oracle.vqa_ask(img, &questions.closed[0], AnswerKind::Closed, 1)?[0] == "yes",
            ClosedMode::AnyTemplate => {
                let mut any = false;
                for q in &questions.closed {
                    any |= oracle.vqa_ask(img, q, AnswerKind::Closed, 1)?[0] == "yes";
                }
                any
            }
        };
        let answers = oracle.vqa_ask(img, open_q, AnswerKind::Open, settings.t)?;
        let clip_score = oracle.clip_score(img, &prompt)?;
        Ok((img.as_str().to_string(), closed_yes, answers, clip_score))
    })?;

    let mut rows = Vec::with_capacity(per_image.len());
    for (image_id, closed_yes, answers, clip_score) in per_image {
        let o = open_outcome(&AnswerSet { image_id: image_id.clone(), answers }, &target, oracle, settings.delta)?;
        rows.push(ImageCoverage {
            image_id,
            closed_yes,
            semantic_entropy: o.cluster.semantic_entropy,
            final_answer: o.cluster.final_answer,
            open_covered: o.covered,
            clip_score,
        });
    }
    let n = rows.len() as f64;
    let frac = |f: &dyn Fn(&ImageCoverage) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(ConceptCoverage {
        concept: concept.name.clone(),
        n_images: rows.len(),
        cov_closed: frac(&|r| r.closed_yes),
        cov_open: frac(&|r| r.open_covered),
        cov_clip: frac(&|r| r.clip_score >= settings.gamma),
        images: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanVerdict {
    pub image_id: String,
    pub captures_concept: bool,
    pub defect_free: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanEval {
    pub n: usize,
    pub human_loose: f64,
    pub human_strict: f64,
}

pub fn read_human_eval(reader: impl BufRead, source_name: &str) -> Result<Vec<HumanVerdict>, CoverageError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: HumanVerdict = serde_json::from_str(&line).map_err(|e| CoverageError::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn load_human_eval(path: &Path) -> Result<Vec<HumanVerdict>, CoverageError> {
    let f = std::fs::File::open(path)?;
    read_human_eval(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn human_metrics(verdicts: &[HumanVerdict]) -> Result<HumanEval, CoverageError> {
    if verdicts.is_empty() {
        return Err(CoverageError::Precondition("no human verdicts".into()));
    }
    let n = verdicts.len();
    let loose = verdicts.iter().filter(|v| v.captures_concept).count();
    let strict = verdicts.iter().filter(|v| v.captures_concept && v.defect_free).count();
    Ok(HumanEval { n, human_loose: loose as f64 / n as f64, human_strict: strict as f64 / n as f64 })
}

/// Groups verdicts by concept. Rows without a `concept` field are looked
/// up through `concept_of(image_id)`; rows that resolve to nothing are
/// an error.
pub fn human_metrics_by_concept(
    verdicts: &[HumanVerdict],
    concept_of: impl Fn(&str) -> Option<String>,
) -> Result<BTreeMap<String, HumanEval>, CoverageError> {
    let mut groups: BTreeMap<String, Vec<HumanVerdict>> = BTreeMap::new();
    for v in verdicts {
        let c = v
            .concept
            .clone()
            .or_else(|| concept_of(&v.image_id))
            .ok_or_else(|| CoverageError::Precondition(format!("no concept known for human verdict on {}", v.image_id)))?;
        groups.entry(c).or_default().push(v.clone());
    }
    groups.into_iter().map(|(c, vs)| Ok((c, human_metrics(&vs)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub concept: String,
    pub model: String,
    pub cov_closed: f64,
    pub cov_open: f64,
    pub cov_clip: f64,
    pub human_loose: Option<f64>,
    pub human_strict: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CovClosed,
    CovOpen,
    CovClip,
    HumanLoose,
    HumanStrict,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Self::CovClosed, Self::CovOpen, Self::CovClip, Self::HumanLoose, Self::HumanStrict];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CovClosed => "cov_closed",
            Self::CovOpen => "cov_open",
            Self::CovClip => "cov_clip",
            Self::HumanLoose => "human_loose",
            Self::HumanStrict => "human_strict",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl CoverageRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::CovClosed => Some(self.cov_closed),
            Metric::CovOpen => Some(self.cov_open),
            Metric::CovClip => Some(self.cov_clip),
            Metric::HumanLoose => self.human_loose,
            Metric::HumanStrict => self.human_strict,
        }
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        for m in Metric::ALL {
            if let Some(v) = self.get(m) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CoverageError::Precondition(format!("{} {} for {} is outside [0, 1]", m, v, self.concept)));
                }
            }
        }
        Ok(())
    }
}

/// Spearman correlation between two per-concept columns, over rows where
/// both are present.
pub fn spearman_validate(rows: &[CoverageRow], a: Metric, b: Metric) -> Result<f64, CoverageError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| Some((r.get(a)?, r.get(b)?))).unzip();
    if xs.len() < 3 {
        return Err(CoverageError::Precondition(format!("need at least 3 rows with {a} and {b}, got {}", xs.len())));
    }
    Ok(stats::spearman(&xs, &ys)?)
}

pub const CSV_COLUMNS: [&str; 7] = ["concept", "model", "cov_closed", "cov_open", "cov_clip", "human_loose", "human_strict"];

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_default()
}

/// Percent with one decimal; absent human columns are empty cells.
pub fn write_coverage_csv(rows: &[CoverageRow], out: impl Write) -> Result<(), CoverageError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.concept.clone(),
            r.model.clone(),
            pct(Some(r.cov_closed)),
            pct(Some(r.cov_open)),
            pct(Some(r.cov_clip)),
            pct(r.human_loose),
            pct(r.human_strict),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the percent layout written by [`write_coverage_csv`].
pub fn read_coverage_csv(input: impl std::io::Read, source_name: &str) -> Result<Vec<CoverageRow>, CoverageError> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let perr = |message: String| CoverageError::Parse { source_name: source_name.to_string(), line, message };
        if rec.len() != CSV_COLUMNS.len() {
            return Err(perr(format!("expected {} fields, got {}", CSV_COLUMNS.len(), rec.len())));
        }
        let num = |k: usize| -> Result<Option<f64>, CoverageError> {
            let s = rec[k].trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(|v| Some(v / 100.0))
                .map_err(|e| perr(format!("{}: {e}", CSV_COLUMNS[k])))
        };
        let req = |k: usize| num(k)?.ok_or_else(|| perr(format!("{} is required", CSV_COLUMNS[k])));
        let row = CoverageRow {
            concept: rec[0].to_string(),
            model: rec[1].to_string(),
            cov_closed: req(2)?,
            cov_open: req(3)?,
            cov_clip: req(4)?,
            human_loose: num(5)?,
            human_strict: num(6)?,
        };
        row.validate().map_err(|e| perr(e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::SynonymOracle;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn run_oracle() -> SynonymOracle {
        SynonymOracle::new().group("running", &["jogging", "run"])
    }

    #[test]
    fn running_jogging_sleeping() {
        let r = semantic_cluster(&strs(&["running", "jogging", "sleeping"]), &run_oracle()).unwrap();
        assert_eq!(r.semantic_set_ids, vec![0, 0, 2]);
        assert_eq!(r.semantic_set_counts.values().copied().collect::<Vec<_>>(), vec![2, 1]);
        let h = -(2.0f64 / 3.0 * (2.0f64 / 3.0).log2() + 1.0 / 3.0 * (1.0f64 / 3.0).log2());
        assert!((r.semantic_entropy - h).abs() < 1e-12);
        assert_eq!(r.final_answer, "running");
    }

    #[test]
    fn trivial_partitions() {
        let same = semantic_cluster(&strs(&["a", "a", "a"]), &run_oracle()).unwrap();
        assert_eq!(same.semantic_entropy, 0.0);
        assert_eq!(same.final_answer, "a");
        let distinct = semantic_cluster(&strs(&["a", "b", "c", "d"]), &run_oracle()).unwrap();
        assert!((distinct.semantic_entropy - 2.0).abs() < 1e-12);
        assert_eq!(distinct.final_answer, "a");
        assert!(semantic_cluster(&[], &run_oracle()).is_err());
    }

    #[test]
    fn tie_goes_to_lowest_cluster_id() {
        let r = semantic_cluster(&strs(&["sleeping", "running", "sleeping", "jogging"]), &run_oracle()).unwrap();
        assert_eq!(r.final_answer, "sleeping");
    }

    #[test]
    fn open_coverage_threshold() {
        let sets = vec![
            AnswerSet { image_id: "a".into(), answers: strs(&["run"; 5]) },
            AnswerSet { image_id: "b".into(), answers: strs(&["running", "jogging", "running", "sitting", "sitting"]) },
        ];
        // second image splits 3/2: entropy 0.971 > 0.8
        assert_eq!(cov_open_from_answers(&sets, "running", &run_oracle(), 0.8).unwrap(), 0.5);
        assert_eq!(cov_open_from_answers(&sets, "running", &run_oracle(), 1.0).unwrap(), 1.0);
        let one = vec![AnswerSet { image_id: "x".into(), answers: strs(&["run"]) }];
        assert!(cov_open_from_answers(&one, "running", &run_oracle(), 0.8).is_err());
    }

    #[test]
    fn closed_and_clip() {
        let mut ans = vec!["yes".to_string(); 494];
        ans.extend(vec!["no".to_string(); 6]);
        assert!((cov_closed_from_answers(&ans).unwrap() - 0.988).abs() < 1e-12);
        assert_eq!(cov_clip_from_scores(&[0.19, 0.21], 0.2).unwrap(), 0.5);
        assert_eq!(cov_clip_from_scores(&[0.2], 0.2).unwrap(), 1.0);
    }

    #[test]
    fn human_eval_counts_and_errors() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!(
                "{{\"image_id\":\"i{i}\",\"captures_concept\":{},\"defect_free\":{}}}\n",
                i < 8,
                i < 5 || i == 9
            ));
        }
        let v = read_human_eval(text.as_bytes(), "h.jsonl").unwrap();
        let h = human_metrics(&v).unwrap();
        assert_eq!((h.human_loose, h.human_strict), (0.8, 0.5));
        let bad = "{\"image_id\":\"a\",\"captures_concept\":true,\"defect_free\":true}\n{\"image_id\":\"b\"}\n";
        match read_human_eval(bad.as_bytes(), "h.jsonl") {
            Err(CoverageError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![CoverageRow {
            concept: "cry".into(),
            model: "sd1.5".into(),
            cov_closed: 0.84,
            cov_open: 0.516,
            cov_clip: 0.964,
            human_loose: Some(0.782),
            human_strict: None,
        }];
        let mut buf = Vec::new();
        write_coverage_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "cry,sd1.5,84.0,51.6,96.4,78.2,");
        let back = read_coverage_csv(&buf[..], "x").unwrap();
        assert!((back[0].cov_open - 0.516).abs() < 1e-12);
        assert_eq!(back[0].human_strict, None);
    }

    #[test]
    fn spearman_needs_three_rows() {
        let row = |c: f64, l: f64| CoverageRow {
            concept: "c".into(),
            model: "m".into(),
            cov_closed: c,
            cov_open: c,
            cov_clip: c,
            human_loose: Some(l),
            human_strict: None,
        };
        let rows = vec![row(0.1, 0.2), row(0.5, 0.4), row(0.9, 0.8)];
        assert_eq!(spearman_validate(&rows, Metric::CovClosed, Metric::HumanLoose).unwrap(), 1.0);
        assert!(spearman_validate(&rows, Metric::CovClosed, Metric::HumanStrict).is_err());
    }
}
