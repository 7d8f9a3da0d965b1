//! Defect identification: one classifier per body component plus a binary
//! face classifier, each looking at an annotated box crop, and the defect
//! rates derived from their predictions.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, ImageError};
use crate::nn::{argmax, softmax, Adam, AttentionBlock, AttentionCache, Linear, Module, Param};
use crate::schema::{AnnotationRecord, BoundingBox, Component, ComponentLabel};

#[derive(Debug, thiserror::Error)]
pub enum RealismError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{image_id}: no {which} box")]
    MissingBox { image_id: String, which: &'static str },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("class {class} absent from training data for {target}")]
    Stratification { target: DefectTarget, class: ComponentLabel },
    #[error("defect rate undefined: no visible predictions")]
    UndefinedRate,
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DefectTarget {
    Face,
    Component(Component),
}

impl DefectTarget {
    pub fn all() -> Vec<DefectTarget> {
        std::iter::once(Self::Face).chain(Component::ALL.iter().map(|c| Self::Component(*c))).collect()
    }

    pub fn classes(self) -> &'static [ComponentLabel] {
        match self {
            Self::Face => &[ComponentLabel::Good, ComponentLabel::Bad],
            Self::Component(_) => &[ComponentLabel::Good, ComponentLabel::Bad, ComponentLabel::Invisible],
        }
    }

    pub fn input_box(self) -> InputBox {
        match self {
            Self::Face => InputBox::Face,
            Self::Component(_) => InputBox::Body,
        }
    }

    /// Ground-truth label of a record for this target (coarse face label
    /// for the face model).
    pub fn label_of(self, record: &AnnotationRecord) -> ComponentLabel {
        match self {
            Self::Face => record.coarse().face,
            Self::Component(c) => record.components.get(c),
        }
    }
}

impl fmt::Display for DefectTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Face => f.write_str("face"),
            Self::Component(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for DefectTarget {
    type Err = RealismError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "face" {
            return Ok(Self::Face);
        }
        s.parse::<Component>().map(Self::Component).map_err(|_| RealismError::UnknownTarget(s.to_string()))
    }
}

impl Serialize for DefectTarget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DefectTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputBox {
    Face,
    Body,
}

impl InputBox {
    fn name(self) -> &'static str {
        match self {
            Self::Face => "face",
            Self::Body => "body",
        }
    }

    pub fn of(self, record: &AnnotationRecord) -> Option<BoundingBox> {
        match self {
            Self::Face => record.face_box,
            Self::Body => record.body_box,
        }
    }
}

/// Crops a box out of an image. Out-of-bounds boxes are an error in strict
/// mode and are otherwise clipped to the image (the flag reports clipping).
pub fn crop_region(img: &Image, b: &BoundingBox, strict: bool) -> Result<(Image, bool), RealismError> {
    match img.crop(b) {
        Ok(c) => Ok((c, false)),
        Err(ImageError::OutOfBounds { .. }) if !strict => {
            let x0 = b.x.max(0.0);
            let y0 = b.y.max(0.0);
            let x1 = b.right().min(img.width() as f64);
            let y1 = b.bottom().min(img.height() as f64);
            if x1 <= x0 || y1 <= y0 {
                return Err(ImageError::Empty.into());
            }
            log::warn!("box {b:?} exceeds {}x{} image; clipped", img.width(), img.height());
            Ok((img.crop(&BoundingBox::new(x0, y0, x1 - x0, y1 - y0))?, true))
        }
        Err(e) => Err(e.into()),
    }
}

/// Anything that labels a crop for one target.
pub trait DefectClassifier: Sync {
    fn target(&self) -> DefectTarget;
    fn predict(&self, record: &AnnotationRecord, crop: &Image) -> ComponentLabel;
}

/// Returns the same label for every input.
pub struct ConstantClassifier {
    pub target: DefectTarget,
    pub label: ComponentLabel,
}

impl DefectClassifier for ConstantClassifier {
    fn target(&self) -> DefectTarget {
        self.target
    }

    fn predict(&self, _: &AnnotationRecord, _: &Image) -> ComponentLabel {
        self.label
    }
}

/// Echoes the record's own annotation.
pub struct GroundTruthClassifier(pub DefectTarget);

impl DefectClassifier for GroundTruthClassifier {
    fn target(&self) -> DefectTarget {
        self.0
    }

    fn predict(&self, record: &AnnotationRecord, _: &Image) -> ComponentLabel {
        self.0.label_of(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Crops are letterboxed to `input_size x input_size`.
    pub input_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of eligible records held out for evaluation.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { input_size: 32, patch: 4, dim: 32, layers: 1, steps: 300, batch_size: 16, lr: 2e-3, holdout: 0.2, seed: 0 }
    }
}

/// Patch-embedding transformer: patches -> linear embedding + learned
/// positions -> attention blocks -> mean pool -> linear head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VitClassifier {
    pub input_size: usize,
    pub patch: usize,
    pub embed: Linear,
    pub pos: Param,
    pub blocks: Vec<AttentionBlock>,
    pub head: Linear,
}

struct VitCache {
    patches: Vec<Vec<f64>>,
    inputs: Vec<Vec<Vec<f64>>>,
    caches: Vec<AttentionCache>,
    pooled: Vec<f64>,
}

impl VitClassifier {
    pub fn new(cfg: &ClassifierConfig, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self, RealismError> {
        if cfg.patch == 0 || !cfg.input_size.is_multiple_of(cfg.patch) || cfg.dim == 0 {
            return Err(RealismError::Config("input_size must be a positive multiple of patch".into()));
        }
        let n = (cfg.input_size / cfg.patch).pow(2);
        Ok(Self {
            input_size: cfg.input_size,
            patch: cfg.patch,
            embed: Linear::new(3 * cfg.patch * cfg.patch, cfg.dim, rng),
            pos: Param::uniform(n * cfg.dim, 0.02, rng),
            blocks: (0..cfg.layers).map(|_| AttentionBlock::new(cfg.dim, rng)).collect(),
            head: Linear::new(cfg.dim, classes, rng),
        })
    }

    fn patches(&self, crop: &Image) -> Vec<Vec<f64>> {
        let img = crop.letterbox(self.input_size);
        let g = self.input_size / self.patch;
        let mut out = Vec::with_capacity(g * g);
        for py in 0..g {
            for px in 0..g {
                let mut v = Vec::with_capacity(3 * self.patch * self.patch);
                for y in 0..self.patch {
                    for x in 0..self.patch {
                        v.extend(img.get(px * self.patch + x, py * self.patch + y).iter().map(|c| *c as f64 - 0.5));
                    }
                }
                out.push(v);
            }
        }
        out
    }

    fn forward_cached(&self, crop: &Image) -> (Vec<f64>, VitCache) {
        let dim = self.embed.output;
        let patches = self.patches(crop);
        let mut tokens: Vec<Vec<f64>> = patches
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut t = self.embed.forward(p);
                t.iter_mut().zip(&self.pos.value[i * dim..(i + 1) * dim]).for_each(|(a, b)| *a += b);
                t
            })
            .collect();
        let mut inputs = Vec::new();
        let mut caches = Vec::new();
        for b in &self.blocks {
            let (y, c) = b.forward(&tokens);
            inputs.push(std::mem::replace(&mut tokens, y));
            caches.push(c);
        }
        let mut pooled = vec![0.0; dim];
        for t in &tokens {
            pooled.iter_mut().zip(t).for_each(|(a, b)| *a += b / tokens.len() as f64);
        }
        (self.head.forward(&pooled), VitCache { patches, inputs, caches, pooled })
    }

    pub fn logits(&self, crop: &Image) -> Vec<f64> {
        self.forward_cached(crop).0
    }

    fn backward(&mut self, cache: &VitCache, dlogits: &[f64]) {
        let dim = self.embed.output;
        let n = cache.patches.len();
        let dpooled = self.head.backward(&cache.pooled, dlogits);
        let mut d: Vec<Vec<f64>> = (0..n).map(|_| dpooled.iter().map(|v| v / n as f64).collect()).collect();
        for (i, b) in self.blocks.iter_mut().enumerate().rev() {
            d = b.backward(&cache.inputs[i], &cache.caches[i], &d);
        }
        for (i, dt) in d.iter().enumerate() {
            self.pos.grad[i * dim..(i + 1) * dim].iter_mut().zip(dt).for_each(|(g, v)| *g += v);
            self.embed.backward(&cache.patches[i], dt);
        }
    }
}

impl Module for VitClassifier {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.embed.params_mut();
        p.push(&mut self.pos);
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }
}

/// A trained classifier for one target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefectModel {
    pub target: DefectTarget,
    pub classes: Vec<ComponentLabel>,
    pub input_box: InputBox,
    /// How crops reach the fixed input size.
    pub crop_policy: String,
    pub config: ClassifierConfig,
    pub classifier: VitClassifier,
}

impl DefectModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RealismError> {
        let text = serde_json::to_string(self).map_err(|e| RealismError::Io(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| RealismError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RealismError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| RealismError::Io(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| RealismError::Io(e.to_string()))
    }
}

impl DefectClassifier for DefectModel {
    fn target(&self) -> DefectTarget {
        self.target
    }

    fn predict(&self, _: &AnnotationRecord, crop: &Image) -> ComponentLabel {
        self.classes[argmax(&self.classifier.logits(crop))]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub target: DefectTarget,
    pub train_size: usize,
    pub holdout_size: usize,
    /// Records dropped before splitting (invisible faces, missing boxes).
    pub excluded: usize,
    pub accuracy: Option<f64>,
    pub per_class: BTreeMap<ComponentLabel, ClassAccuracy>,
}

/// One annotated image.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub record: AnnotationRecord,
    pub image: Image,
}

/// Trains one classifier. For the face target, records whose coarse face
/// label is invisible are dropped. Records lacking the needed box are
/// dropped and counted.
pub fn train_defect_model(
    dataset: &[LabeledImage],
    target: DefectTarget,
    cfg: &ClassifierConfig,
) -> Result<(DefectModel, TrainReport), RealismError> {
    if !(0.0..1.0).contains(&cfg.holdout) || cfg.batch_size == 0 {
        return Err(RealismError::Config("holdout must be in [0,1) and batch_size positive".into()));
    }
    let classes = target.classes().to_vec();
    let mut eligible: Vec<(&LabeledImage, Image, usize)> = Vec::new();
    let mut excluded = 0;
    let mut order: Vec<&LabeledImage> = dataset.iter().collect();
    order.sort_by(|a, b| a.record.image_id.cmp(&b.record.image_id));
    for item in order {
        let label = target.label_of(&item.record);
        let Some(class) = classes.iter().position(|c| *c == label) else {
            excluded += 1;
            continue;
        };
        let Some(b) = target.input_box().of(&item.record) else {
            excluded += 1;
            continue;
        };
        let (crop, _) = crop_region(&item.image, &b, false)?;
        eligible.push((item, crop, class));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eligible.shuffle(&mut rng);
    let n_hold = (eligible.len() as f64 * cfg.holdout).round() as usize;
    let (hold, train) = eligible.split_at(n_hold);
    for (k, class) in classes.iter().enumerate() {
        if !train.iter().any(|(_, _, c)| *c == k) {
            return Err(RealismError::Stratification { target, class: *class });
        }
    }
    let mut model = VitClassifier::new(cfg, classes.len(), &mut rng)?;
    let mut opt = Adam::new(cfg.lr);
    for _ in 0..cfg.steps {
        model.zero_grad();
        for _ in 0..cfg.batch_size {
            let (_, crop, class) = &train[rng.gen_range(0..train.len())];
            let (logits, cache) = model.forward_cached(crop);
            let mut d = softmax(&logits);
            d[*class] -= 1.0;
            model.backward(&cache, &d);
        }
        model.scale_grad(1.0 / cfg.batch_size as f64);
        opt.step(model.params_mut());
    }
    let mut per_class: BTreeMap<ComponentLabel, ClassAccuracy> =
        classes.iter().map(|c| (*c, ClassAccuracy::default())).collect();
    for (_, crop, class) in hold {
        let pred = argmax(&model.logits(crop));
        let e = per_class.get_mut(&classes[*class]).unwrap();
        e.n += 1;
        e.correct += (pred == *class) as usize;
    }
    for e in per_class.values_mut() {
        e.accuracy = (e.n > 0).then(|| e.correct as f64 / e.n as f64);
    }
    let correct: usize = per_class.values().map(|e| e.correct).sum();
    let report = TrainReport {
        target,
        train_size: train.len(),
        holdout_size: hold.len(),
        excluded,
        accuracy: (!hold.is_empty()).then(|| correct as f64 / hold.len() as f64),
        per_class,
    };
    let model = DefectModel {
        target,
        classes,
        input_box: target.input_box(),
        crop_policy: format!("letterbox to {0}x{0}, black padding", cfg.input_size),
        config: cfg.clone(),
        classifier: model,
    };
    Ok((model, report))
}

/// Labels one record with the classifier's input crop.
pub fn classify(model: &dyn DefectClassifier, record: &AnnotationRecord, image: &Image, strict: bool) -> Result<ComponentLabel, RealismError> {
    let which = model.target().input_box();
    let b = which
        .of(record)
        .ok_or_else(|| RealismError::MissingBox { image_id: record.image_id.clone(), which: which.name() })?;
    let (crop, _) = crop_region(image, &b, strict)?;
    Ok(model.predict(record, &crop))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub target: DefectTarget,
    pub label: ComponentLabel,
}

/// Runs a classifier over a dataset in image_id order. Records without the
/// required box are skipped and returned by id.
pub fn predict_all(model: &dyn DefectClassifier, items: &[LabeledImage], strict: bool) -> Result<(Vec<Prediction>, Vec<String>), RealismError> {
    let mut sorted: Vec<&LabeledImage> = items.iter().collect();
    sorted.sort_by(|a, b| a.record.image_id.cmp(&b.record.image_id));
    let mut preds = Vec::new();
    let mut skipped = Vec::new();
    for item in sorted {
        match classify(model, &item.record, &item.image, strict) {
            Ok(label) => preds.push(Prediction { image_id: item.record.image_id.clone(), target: model.target(), label }),
            Err(RealismError::MissingBox { image_id, .. }) => skipped.push(image_id),
            Err(e) => return Err(e),
        }
    }
    Ok((preds, skipped))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateDenominator {
    /// bad / (bad + good)
    #[default]
    Visible,
    /// bad / all predictions
    All,
}

pub fn defect_rate(labels: &[ComponentLabel], denominator: RateDenominator) -> Result<f64, RealismError> {
    let bad = labels.iter().filter(|l| **l == ComponentLabel::Bad).count();
    let good = labels.iter().filter(|l| **l == ComponentLabel::Good).count();
    let denom = match denominator {
        RateDenominator::Visible => bad + good,
        RateDenominator::All => labels.len(),
    };
    if bad + good == 0 || denom == 0 {
        return Err(RealismError::UndefinedRate);
    }
    Ok(bad as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRate {
    pub good: usize,
    pub bad: usize,
    pub invisible: usize,
    /// Fraction; null when undefined.
    pub rate: Option<f64>,
    /// Rounded integer percent.
    pub percent: Option<u32>,
}

/// Per-target defect rates for one model, keyed by target name.
pub fn rates_by_target(preds: &[Prediction], denominator: RateDenominator) -> BTreeMap<String, TargetRate> {
    let mut grouped: BTreeMap<DefectTarget, Vec<ComponentLabel>> = BTreeMap::new();
    for p in preds {
        grouped.entry(p.target).or_default().push(p.label);
    }
    grouped
        .into_iter()
        .map(|(t, labels)| {
            let count = |l| labels.iter().filter(|x| **x == l).count();
            let rate = defect_rate(&labels, denominator).ok();
            let row = TargetRate {
                good: count(ComponentLabel::Good),
                bad: count(ComponentLabel::Bad),
                invisible: count(ComponentLabel::Invisible),
                rate,
                percent: rate.map(|r| (r * 100.0).round() as u32),
            };
            (t.to_string(), row)
        })
        .collect()
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, RealismError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| RealismError::Io(format!("{name}: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RealismError::Io(format!("{name}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RealismError::Parse {
            source_name: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<(), RealismError> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| RealismError::Io(format!("{}: {e}", path.display())))?,
    );
    for p in preds {
        writeln!(f, "{}", serde_json::to_string(p).unwrap()).map_err(|e| RealismError::Io(e.to_string()))?;
    }
    f.flush().map_err(|e| RealismError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Components;
    use ComponentLabel::*;

    fn record(id: &str, hand: ComponentLabel) -> AnnotationRecord {
        let mut r = AnnotationRecord::generated(id, "a person", Components::uniform(Good).with(Component::Hand, hand));
        r.face_box = Some(BoundingBox::new(4.0, 2.0, 8.0, 8.0));
        r.body_box = Some(BoundingBox::new(2.0, 0.0, 16.0, 20.0));
        r.width = Some(20);
        r.height = Some(20);
        r
    }

    #[test]
    fn rate_examples() {
        assert_eq!(defect_rate(&[Good, Good], RateDenominator::Visible).unwrap(), 0.0);
        assert!((defect_rate(&[Bad, Good, Invisible, Bad], RateDenominator::Visible).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(defect_rate(&[Bad, Good, Invisible, Bad], RateDenominator::All).unwrap(), 0.5);
        assert!(matches!(defect_rate(&[Invisible], RateDenominator::Visible), Err(RealismError::UndefinedRate)));
    }

    #[test]
    fn class_sets() {
        assert_eq!(DefectTarget::Face.classes().len(), 2);
        assert_eq!(DefectTarget::Component(Component::Hand).classes().len(), 3);
        assert_eq!(DefectTarget::all().len(), 11);
        assert_eq!("hand".parse::<DefectTarget>().unwrap(), DefectTarget::Component(Component::Hand));
        assert_eq!(serde_json::to_string(&DefectTarget::Face).unwrap(), "\"face\"");
    }

    #[test]
    fn face_crop_inside_body_crop() {
        let r = record("a", Good);
        let (f, b) = (r.face_box.unwrap(), r.body_box.unwrap());
        assert!(f.x >= b.x && f.y >= b.y && f.right() <= b.right() && f.bottom() <= b.bottom());
    }

    #[test]
    fn crop_clipping_modes() {
        let img = Image::filled(10, 10, [0.2; 3]);
        let b = BoundingBox::new(5.0, 5.0, 10.0, 10.0);
        assert!(crop_region(&img, &b, true).is_err());
        let (c, clipped) = crop_region(&img, &b, false).unwrap();
        assert!(clipped);
        assert_eq!((c.width(), c.height()), (5, 5));
    }

    #[test]
    fn stub_classifiers() {
        let img = Image::filled(20, 20, [0.5; 3]);
        let items: Vec<LabeledImage> =
            (0..4).map(|i| LabeledImage { record: record(&format!("r{i}"), if i % 2 == 0 { Bad } else { Good }), image: img.clone() }).collect();
        let hand = DefectTarget::Component(Component::Hand);
        let all_bad = ConstantClassifier { target: hand, label: Bad };
        let (preds, skipped) = predict_all(&all_bad, &items, true).unwrap();
        assert!(skipped.is_empty());
        let labels: Vec<_> = preds.iter().map(|p| p.label).collect();
        assert_eq!(defect_rate(&labels, RateDenominator::Visible).unwrap(), 1.0);
        let (preds, _) = predict_all(&GroundTruthClassifier(hand), &items, true).unwrap();
        assert!(preds.iter().zip(&items).all(|(p, i)| p.label == i.record.components.get(Component::Hand)));
    }

    #[test]
    fn missing_box_is_skipped() {
        let mut r = record("x", Good);
        r.body_box = None;
        let items = vec![LabeledImage { record: r, image: Image::filled(20, 20, [0.0; 3]) }];
        let hand = DefectTarget::Component(Component::Hand);
        let (preds, skipped) = predict_all(&ConstantClassifier { target: hand, label: Good }, &items, true).unwrap();
        assert!(preds.is_empty());
        assert_eq!(skipped, vec!["x".to_string()]);
    }

    #[test]
    fn stratification_error() {
        let img = Image::filled(20, 20, [0.5; 3]);
        let items: Vec<LabeledImage> = (0..6).map(|i| LabeledImage { record: record(&format!("r{i}"), Good), image: img.clone() }).collect();
        let err = train_defect_model(&items, DefectTarget::Component(Component::Hand), &ClassifierConfig::default()).unwrap_err();
        assert!(matches!(err, RealismError::Stratification { .. }));
    }
}
