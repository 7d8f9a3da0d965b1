//! Annotation data model for human images: component labels, coarse-label
//! merging, record validation and dataset statistics.
//!
//! Records are stored as JSON-lines with snake_case keys. Object keys are
//! written in alphabetical order, and coarse labels are re-derived from the
//! component labels on every load.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Three-valued verdict on a body component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentLabel {
    Good,
    Bad,
    Invisible,
}

impl ComponentLabel {
    pub const ALL: [ComponentLabel; 3] = [Self::Good, Self::Bad, Self::Invisible];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Good => "good",
            Self::Bad => "bad",
            Self::Invisible => "invisible",
        }
    }
}

impl fmt::Display for ComponentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentLabel {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "good" => Ok(Self::Good),
            "bad" => Ok(Self::Bad),
            "invisible" => Ok(Self::Invisible),
            other => Err(SchemaError::UnknownLabel(other.to_string())),
        }
    }
}

/// The ten annotated body components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Eye,
    Nose,
    Mouth,
    Hair,
    Cheek,
    Hand,
    Arm,
    Foot,
    Leg,
    Trunk,
}

impl Component {
    pub const ALL: [Component; 10] = [
        Self::Eye,
        Self::Nose,
        Self::Mouth,
        Self::Hair,
        Self::Cheek,
        Self::Hand,
        Self::Arm,
        Self::Foot,
        Self::Leg,
        Self::Trunk,
    ];

    pub const FACE: [Component; 5] = [Self::Eye, Self::Nose, Self::Mouth, Self::Hair, Self::Cheek];
    pub const BODY: [Component; 5] = [Self::Hand, Self::Arm, Self::Foot, Self::Leg, Self::Trunk];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Eye => "eye",
            Self::Nose => "nose",
            Self::Mouth => "mouth",
            Self::Hair => "hair",
            Self::Cheek => "cheek",
            Self::Hand => "hand",
            Self::Arm => "arm",
            Self::Foot => "foot",
            Self::Leg => "leg",
            Self::Trunk => "trunk",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SchemaError::UnknownComponent(s.to_string()))
    }
}

/// Merged label groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseGroup {
    Face,
    Body,
    Whole,
}

impl CoarseGroup {
    pub const ALL: [CoarseGroup; 3] = [Self::Face, Self::Body, Self::Whole];

    pub fn members(self) -> &'static [Component] {
        match self {
            Self::Face => &Component::FACE,
            Self::Body => &Component::BODY,
            Self::Whole => &Component::ALL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Face => "face",
            Self::Body => "body",
            Self::Whole => "whole",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Generated,
    Real,
}

/// Axis-aligned box, top-left origin, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

/// Labels of all ten components, indexed by [`Component::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Components([ComponentLabel; 10]);

impl Components {
    pub fn uniform(label: ComponentLabel) -> Self {
        Self([label; 10])
    }

    pub fn get(&self, c: Component) -> ComponentLabel {
        self.0[c.index()]
    }

    pub fn set(&mut self, c: Component, label: ComponentLabel) {
        self.0[c.index()] = label;
    }

    pub fn with(mut self, c: Component, label: ComponentLabel) -> Self {
        self.set(c, label);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (Component, ComponentLabel)> + '_ {
        Component::ALL.iter().map(move |c| (*c, self.get(*c)))
    }

    /// Builds from a string-keyed map, rejecting missing and unknown keys.
    pub fn from_map(map: &BTreeMap<String, ComponentLabel>) -> Result<Self, SchemaError> {
        if let Some(unknown) = map.keys().find(|k| k.parse::<Component>().is_err()) {
            return Err(SchemaError::UnknownComponent(unknown.clone()));
        }
        let mut labels = [ComponentLabel::Invisible; 10];
        for c in Component::ALL {
            match map.get(c.as_str()) {
                Some(l) => labels[c.index()] = *l,
                None => return Err(SchemaError::MissingComponent(c.as_str().to_string())),
            }
        }
        Ok(Self(labels))
    }

    pub fn to_map(&self) -> BTreeMap<String, ComponentLabel> {
        self.iter().map(|(c, l)| (c.as_str().to_string(), l)).collect()
    }

    pub fn coarse(&self) -> CoarseLabels {
        CoarseLabels {
            face: merge_group(self, CoarseGroup::Face),
            body: merge_group(self, CoarseGroup::Body),
            whole: merge_group(self, CoarseGroup::Whole),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoarseLabels {
    pub face: ComponentLabel,
    pub body: ComponentLabel,
    pub whole: ComponentLabel,
}

impl CoarseLabels {
    pub fn get(&self, group: CoarseGroup) -> ComponentLabel {
        match group {
            CoarseGroup::Face => self.face,
            CoarseGroup::Body => self.body,
            CoarseGroup::Whole => self.whole,
        }
    }
}

fn merge_group(components: &Components, group: CoarseGroup) -> ComponentLabel {
    let members = group.members();
    if members.iter().any(|c| components.get(*c) == ComponentLabel::Bad) {
        ComponentLabel::Bad
    } else if members.iter().all(|c| components.get(*c) == ComponentLabel::Invisible) {
        ComponentLabel::Invisible
    } else {
        ComponentLabel::Good
    }
}

/// Merges component labels into face/body/whole: bad if any member is bad,
/// invisible if every member is invisible, good otherwise.
pub fn merge_coarse(components: &BTreeMap<String, ComponentLabel>) -> Result<CoarseLabels, SchemaError> {
    Ok(Components::from_map(components)?.coarse())
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchemaError {
    #[error("missing: {0}")]
    MissingComponent(String),
    #[error("unknown component key: {0}")]
    UnknownComponent(String),
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid record {image_id}: {}", format_violations(.violations))]
    Invalid { image_id: String, violations: Vec<Violation> },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is not `PartialEq`; keep only the rendered message.
#[derive(Debug, thiserror::Error, PartialEq)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for SchemaError {
    fn from(e: std::io::Error) -> Self {
        SchemaError::Io(IoError(e.to_string()))
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// One invariant failure, addressed by field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Record as it appears on disk, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub image_id: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_box: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_box: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub components: BTreeMap<String, ComponentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse: Option<BTreeMap<String, ComponentLabel>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A validated annotation record. Coarse labels are always derived.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub source: Source,
    pub prompt: Option<String>,
    pub face_box: Option<BoundingBox>,
    pub body_box: Option<BoundingBox>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub components: Components,
    /// Unknown input fields, kept for round trips.
    pub extra: Map<String, Value>,
}

impl AnnotationRecord {
    pub fn generated(image_id: impl Into<String>, prompt: impl Into<String>, components: Components) -> Self {
        Self {
            image_id: image_id.into(),
            source: Source::Generated,
            prompt: Some(prompt.into()),
            face_box: None,
            body_box: None,
            width: None,
            height: None,
            components,
            extra: Map::new(),
        }
    }

    pub fn coarse(&self) -> CoarseLabels {
        self.components.coarse()
    }

    pub fn to_raw(&self) -> RawRecord {
        let coarse = self.coarse();
        RawRecord {
            image_id: self.image_id.clone(),
            source: self.source,
            prompt: self.prompt.clone(),
            face_box: self.face_box,
            body_box: self.body_box,
            width: self.width,
            height: self.height,
            components: self.components.to_map(),
            coarse: Some(
                CoarseGroup::ALL
                    .iter()
                    .map(|g| (g.as_str().to_string(), coarse.get(*g)))
                    .collect(),
            ),
            extra: self.extra.clone(),
        }
    }

    /// Canonical single-line JSON with alphabetically ordered keys.
    pub fn to_canonical_json(&self) -> String {
        // serde_json's Map is a BTreeMap here, so going through Value sorts keys.
        let value = serde_json::to_value(self.to_raw()).expect("record serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn from_json(line: &str) -> Result<Self, SchemaError> {
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| SchemaError::Parse { line: 1, message: e.to_string() })?;
        validate_record(raw)
    }
}

fn check_box(path: &str, b: &BoundingBox, width: Option<u32>, height: Option<u32>, out: &mut Vec<Violation>) {
    let mut push = |msg: String| out.push(Violation { path: path.to_string(), message: msg });
    if !(b.x.is_finite() && b.y.is_finite() && b.w.is_finite() && b.h.is_finite()) {
        push("non-finite coordinate".into());
        return;
    }
    if b.x < 0.0 || b.y < 0.0 {
        push(format!("negative origin ({}, {})", b.x, b.y));
    }
    if b.w <= 0.0 || b.h <= 0.0 {
        push(format!("non-positive size {}x{}", b.w, b.h));
    }
    if let Some(w) = width {
        if b.right() > w as f64 {
            push(format!("extends past image width {w}"));
        }
    }
    if let Some(h) = height {
        if b.bottom() > h as f64 {
            push(format!("extends past image height {h}"));
        }
    }
}

/// Checks every record invariant and returns the record with derived
/// coarse labels. All violations are reported together.
pub fn validate_record(raw: RawRecord) -> Result<AnnotationRecord, SchemaError> {
    let mut violations = Vec::new();

    for key in raw.components.keys() {
        if key.parse::<Component>().is_err() {
            violations.push(Violation {
                path: format!("components.{key}"),
                message: format!("unknown: {key}"),
            });
        }
    }
    for c in Component::ALL {
        if !raw.components.contains_key(c.as_str()) {
            violations.push(Violation { path: format!("components.{c}"), message: format!("missing: {c}") });
        }
    }

    if raw.source == Source::Generated && raw.prompt.as_deref().is_none_or(str::is_empty) {
        violations.push(Violation { path: "prompt".into(), message: "generated records require a prompt".into() });
    }
    if raw.source == Source::Real {
        for (key, label) in &raw.components {
            if *label == ComponentLabel::Bad {
                violations.push(Violation {
                    path: format!("components.{key}"),
                    message: "real records may not carry bad".into(),
                });
            }
        }
    }
    if let Some(b) = &raw.face_box {
        check_box("face_box", b, raw.width, raw.height, &mut violations);
    }
    if let Some(b) = &raw.body_box {
        check_box("body_box", b, raw.width, raw.height, &mut violations);
    }

    let components = if violations.iter().any(|v| v.path.starts_with("components.") && !v.message.starts_with("real")) {
        None
    } else {
        Components::from_map(&raw.components).ok()
    };

    if let (Some(components), Some(stored)) = (&components, &raw.coarse) {
        let derived = components.coarse();
        for (key, label) in stored {
            match CoarseGroup::ALL.iter().find(|g| g.as_str() == key) {
                Some(g) if derived.get(*g) != *label => violations.push(Violation {
                    path: format!("coarse.{key}"),
                    message: format!("stored {label} but components merge to {}", derived.get(*g)),
                }),
                Some(_) => {}
                None => violations.push(Violation {
                    path: format!("coarse.{key}"),
                    message: format!("unknown coarse group: {key}"),
                }),
            }
        }
    }

    match components {
        Some(components) if violations.is_empty() => Ok(AnnotationRecord {
            image_id: raw.image_id,
            source: raw.source,
            prompt: raw.prompt,
            face_box: raw.face_box,
            body_box: raw.body_box,
            width: raw.width,
            height: raw.height,
            components,
            extra: raw.extra,
        }),
        _ => Err(SchemaError::Invalid { image_id: raw.image_id, violations }),
    }
}

/// Reads `annotations.jsonl`. Blank lines are skipped; the first bad line aborts.
pub fn read_annotations<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>, SchemaError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| SchemaError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(validate_record(raw)?);
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(mut writer: W, records: &[AnnotationRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(writer, "{}", r.to_canonical_json())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub good: u64,
    pub bad: u64,
    pub invisible: u64,
}

impl LabelCounts {
    pub fn add(&mut self, label: ComponentLabel) {
        match label {
            ComponentLabel::Good => self.good += 1,
            ComponentLabel::Bad => self.bad += 1,
            ComponentLabel::Invisible => self.invisible += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.good + self.bad + self.invisible
    }
}

/// Label counts for one record source.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub records: u64,
    pub components: BTreeMap<Component, LabelCounts>,
    pub coarse: BTreeMap<CoarseGroup, LabelCounts>,
}

impl SourceStats {
    fn empty() -> Self {
        Self {
            records: 0,
            components: Component::ALL.iter().map(|c| (*c, LabelCounts::default())).collect(),
            coarse: CoarseGroup::ALL.iter().map(|g| (*g, LabelCounts::default())).collect(),
        }
    }

    fn add(&mut self, record: &AnnotationRecord) {
        self.records += 1;
        for (c, l) in record.components.iter() {
            self.components.get_mut(&c).unwrap().add(l);
        }
        let coarse = record.coarse();
        for g in CoarseGroup::ALL {
            self.coarse.get_mut(&g).unwrap().add(coarse.get(g));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub all: SourceStats,
    pub generated: SourceStats,
    pub real: SourceStats,
}

pub fn dataset_stats(records: &[AnnotationRecord]) -> DatasetStats {
    records.iter().fold(
        DatasetStats { all: SourceStats::empty(), generated: SourceStats::empty(), real: SourceStats::empty() },
        |mut acc, r| {
            acc.all.add(r);
            match r.source {
                Source::Generated => acc.generated.add(r),
                Source::Real => acc.real.add(r),
            }
            acc
        },
    )
}
