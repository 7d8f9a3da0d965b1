//! Aesthetic scoring: the CAN predictor, its distortion suite, rank
//! metrics and the per-model score summary.

pub mod distortion;
pub mod metrics;
pub mod model;
pub mod toy;
pub mod train;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use distortion::{apply_distortion, DistortionError, DistortionKind, ParamRange};
pub use metrics::{rank_accuracy, srcc};
pub use model::{Ablation, CanConfig, CanModel, LossBreakdown, StyleEncoder, OUTPUT_NAMES};
pub use train::{distortion_accuracy, finetune_attributes, train_can, StepLog, TrainConfig, TrainLog, TrainSample};

use crate::image::Image;
use crate::stats::{mean, round_to, std_pop, StatsError};

#[derive(Debug, thiserror::Error)]
pub enum AestheticsError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },
}

/// One row of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, f64>,
}

impl ScoredImage {
    /// Attribute scores in output order, if all five are present.
    pub fn attribute_vector(&self) -> Option<[f64; 5]> {
        let mut out = [0.0; 5];
        for (i, name) in OUTPUT_NAMES[1..].iter().enumerate() {
            out[i] = *self.attributes.get(*name)?;
        }
        Some(out)
    }
}

/// Mean of a 1..=10 vote histogram (index 0 counts votes for score 1).
pub fn ava_mean_score(votes: &[u64; 10]) -> Option<f64> {
    let n: u64 = votes.iter().sum();
    (n > 0).then(|| votes.iter().enumerate().map(|(i, c)| (i as f64 + 1.0) * *c as f64).sum::<f64>() / n as f64)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ScoredImage>, AestheticsError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| AestheticsError::Io(format!("{name}: {e}")))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AestheticsError::Io(format!("{name}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ScoredImage = serde_json::from_str(&line).map_err(|e| AestheticsError::Parse {
            source_name: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !row.score.is_finite() {
            return Err(AestheticsError::Parse { source_name: name.clone(), line: i + 1, message: "score is not finite".into() });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads the images named by a manifest; relative paths resolve against
/// `base`.
pub fn load_training_set(rows: &[ScoredImage], base: &Path) -> Result<Vec<TrainSample>, AestheticsError> {
    rows.iter()
        .map(|r| {
            let rel = r.path.as_ref().ok_or_else(|| AestheticsError::Input(format!("{} has no path", r.image_id)))?;
            let image = Image::load(base.join(rel)).map_err(|e| AestheticsError::Input(format!("{}: {e}", r.image_id)))?;
            Ok(TrainSample { image, score: r.score, attributes: r.attribute_vector() })
        })
        .collect()
}

/// Mean and population standard deviation of general scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl ScoreSummary {
    /// Rounded to two decimals as reported.
    pub fn rounded(&self) -> Self {
        Self { n: self.n, mean: round_to(self.mean, 2), std: round_to(self.std, 2) }
    }
}

pub fn aesthetic_summary(scores: &[f64]) -> Result<ScoreSummary, AestheticsError> {
    if scores.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: scores.len() }.into());
    }
    Ok(ScoreSummary { n: scores.len(), mean: mean(scores), std: std_pop(scores) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image_id: String,
    pub scores: BTreeMap<String, f64>,
}

impl ImageScores {
    pub fn new(image_id: impl Into<String>, scores: &[f64; 6]) -> Self {
        Self { image_id: image_id.into(), scores: OUTPUT_NAMES.iter().map(|n| n.to_string()).zip(scores.iter().copied()).collect() }
    }

    pub fn general(&self) -> f64 {
        self.scores["general"]
    }
}

/// Scores every image and summarizes the general score.
pub fn aesthetic_report(model: &CanModel, images: &[(String, Image)]) -> Result<(Vec<ImageScores>, ScoreSummary), AestheticsError> {
    let imgs: Vec<Image> = images.iter().map(|(_, i)| i.clone()).collect();
    let out = model.forward_batch(&imgs);
    let rows: Vec<ImageScores> = images.iter().zip(&out).map(|((id, _), s)| ImageScores::new(id.clone(), s)).collect();
    let general: Vec<f64> = rows.iter().map(ImageScores::general).collect();
    Ok((rows, aesthetic_summary(&general)?))
}
