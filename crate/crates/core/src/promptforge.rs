//! Concept vocabulary and prompt construction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifier of the pseudo-random stream used for prompt sampling,
/// recorded in reports.
pub const RNG_ALGORITHM: &str = "chacha8rng/seed_from_u64";

const CONCEPTS_JSONL: &str = include_str!("../data/concepts.jsonl");
const DEFAULT_PROMPT_SPEC: &str = include_str!("../data/prompt_spec.cfg");

/// Template for the fairness prompts.
pub const FAIRNESS_TEMPLATE: &str = "a realistic photo of a person who is {c}.";

/// Interaction indices left out of the fairness prompts because they put
/// several people in the frame.
pub const FAIRNESS_EXCLUDED_INTERACTIONS: [u32; 3] = [14, 19, 20];

pub const OPEN_QUESTIONS: [&str; 2] = [
    "What action is the person performing in the image?",
    "Can you describe the activity being carried out by the person?",
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported concept category {0} for coverage questions")]
    UnsupportedCategory(Category),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Action,
    Interaction,
    AgeStage,
    Ethnicity,
    EyeColor,
    Gender,
    HairColor,
    Hairstyle,
    Height,
    SkinTone,
    Weight,
}

impl Category {
    pub const ALL: [Category; 11] = [
        Self::Action,
        Self::Interaction,
        Self::AgeStage,
        Self::Ethnicity,
        Self::EyeColor,
        Self::Gender,
        Self::HairColor,
        Self::Hairstyle,
        Self::Height,
        Self::SkinTone,
        Self::Weight,
    ];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

/// A human concept. Verbs carry a base form (`name`) and a gerund; `phrase`
/// is the text used inside prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gerund: Option<String>,
    pub phrase: String,
}

impl Concept {
    pub fn gerund(&self) -> &str {
        self.gerund.as_deref().unwrap_or(&self.phrase)
    }
}

/// The full checked-in vocabulary in file order.
pub fn concepts() -> Vec<Concept> {
    CONCEPTS_JSONL
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled concepts.jsonl is valid"))
        .collect()
}

pub fn concepts_in(category: Category) -> Vec<Concept> {
    concepts().into_iter().filter(|c| c.category == category).collect()
}

/// Looks a concept up by base name, gerund or phrase. Coverage concepts
/// (actions and interactions) win over attribute concepts.
pub fn find_concept(name: &str) -> Option<Concept> {
    let all = concepts();
    let matches = |c: &Concept| c.name == name || c.phrase == name || c.gerund.as_deref() == Some(name);
    all.iter()
        .find(|c| matches(c) && matches!(c.category, Category::Action | Category::Interaction))
        .or_else(|| all.iter().find(|c| matches(c)))
        .cloned()
}

/// The 30 action and interaction concepts used for coverage.
pub fn coverage_concepts() -> Vec<Concept> {
    concepts()
        .into_iter()
        .filter(|c| matches!(c.category, Category::Action | Category::Interaction))
        .collect()
}

pub fn fairness_prompt(concept: &Concept) -> String {
    FAIRNESS_TEMPLATE.replace("{c}", &concept.phrase)
}

/// Concepts behind the fairness prompts, in prompt order.
pub fn fairness_concepts() -> Vec<Concept> {
    concepts()
        .into_iter()
        .filter(|c| {
            !(c.category == Category::Interaction
                && c.index.is_some_and(|i| FAIRNESS_EXCLUDED_INTERACTIONS.contains(&i)))
        })
        .collect()
}

/// The 51 fairness prompts.
pub fn fairness_prompts() -> Vec<String> {
    fairness_concepts().iter().map(fairness_prompt).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageQuestions {
    pub closed: Vec<String>,
    pub open: Vec<String>,
}

pub fn coverage_questions(concept: &Concept) -> Result<CoverageQuestions, PromptError> {
    if !matches!(concept.category, Category::Action | Category::Interaction) {
        return Err(PromptError::UnsupportedCategory(concept.category));
    }
    let c = concept.gerund();
    Ok(CoverageQuestions {
        closed: vec![
            format!("Is the person {c} in the image?"),
            format!("Is the picture depicting that a human is {c}?"),
        ],
        open: OPEN_QUESTIONS.iter().map(|q| q.to_string()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Image,
    Human,
    Scene,
}

impl Section {
    pub const ORDER: [Section; 3] = [Self::Image, Self::Human, Self::Scene];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPart {
    pub probability: f64,
    #[serde(default)]
    pub values: Vec<String>,
}

/// Per-part inclusion probabilities and value pools, grouped by section.
/// Within a section parts are kept (and emitted) in alphabetical order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    #[serde(default)]
    pub image: BTreeMap<String, PromptPart>,
    #[serde(default)]
    pub human: BTreeMap<String, PromptPart>,
    #[serde(default)]
    pub scene: BTreeMap<String, PromptPart>,
}

impl PromptSpec {
    /// Parses the plain-text `prompt_spec.cfg` format.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let spec: PromptSpec = toml::from_str(text).map_err(|e| PromptError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn default_spec() -> Self {
        Self::parse(DEFAULT_PROMPT_SPEC).expect("bundled prompt_spec.cfg is valid")
    }

    pub fn section(&self, section: Section) -> &BTreeMap<String, PromptPart> {
        match section {
            Section::Image => &self.image,
            Section::Human => &self.human,
            Section::Scene => &self.scene,
        }
    }

    pub fn section_mut(&mut self, section: Section) -> &mut BTreeMap<String, PromptPart> {
        match section {
            Section::Image => &mut self.image,
            Section::Human => &mut self.human,
            Section::Scene => &mut self.scene,
        }
    }

    pub fn part_count(&self) -> usize {
        Section::ORDER.iter().map(|s| self.section(*s).len()).sum()
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for section in Section::ORDER {
            for (name, part) in self.section(section) {
                if !(0.0..=1.0).contains(&part.probability) {
                    return Err(PromptError::Config(format!(
                        "{section:?}.{name}: probability {} outside [0, 1]",
                        part.probability
                    )));
                }
                if part.probability > 0.0 && part.values.is_empty() {
                    return Err(PromptError::Config(format!(
                        "{section:?}.{name}: empty value pool with probability {}",
                        part.probability
                    )));
                }
            }
        }
        Ok(())
    }

    /// Samples the parts for one prompt as `(section, part, value)` triples.
    pub fn sample(&self, seed: u64) -> Result<Vec<(Section, String, String)>, PromptError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for section in Section::ORDER {
            for (name, part) in self.section(section) {
                // one inclusion draw per part keeps the stream aligned across specs
                let draw: f64 = rng.gen();
                if draw < part.probability {
                    let value = &part.values[rng.gen_range(0..part.values.len())];
                    out.push((section, name.clone(), value.clone()));
                }
            }
        }
        Ok(out)
    }
}

/// Builds one prompt: sampled parts in section order, comma separated.
pub fn build_prompt(spec: &PromptSpec, seed: u64) -> Result<String, PromptError> {
    let parts = spec.sample(seed)?;
    Ok(parts.into_iter().map(|(_, _, v)| v).collect::<Vec<_>>().join(", "))
}

impl FromStr for PromptSpec {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn vocabulary_shape() {
        let all = concepts();
        assert_eq!(all.len(), 54);
        let mut keys = HashSet::new();
        for c in &all {
            assert!(keys.insert((c.category, c.name.clone())), "duplicate {:?}", c);
        }
        let actions = concepts_in(Category::Action);
        assert_eq!(actions.iter().map(|c| c.index.unwrap()).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
        let inter = concepts_in(Category::Interaction);
        assert_eq!(inter.iter().map(|c| c.index.unwrap()).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
        assert_eq!(coverage_concepts().len(), 30);
    }

    #[test]
    fn fairness_prompt_set() {
        let prompts = fairness_prompts();
        assert_eq!(prompts.len(), 51);
        assert!(prompts.contains(&"a realistic photo of a person who is walking dog.".to_string()));
        assert!(!prompts.iter().any(|p| p.contains("socializing")));
        assert!(!prompts.iter().any(|p| p.contains("attending concert")));
        assert!(!prompts.iter().any(|p| p.contains("playing with children")));

        let per_cat: Vec<usize> = Category::ALL
            .iter()
            .map(|cat| fairness_concepts().iter().filter(|c| c.category == *cat).count())
            .collect();
        assert_eq!(per_cat, [10, 17, 5, 3, 2, 2, 2, 4, 2, 2, 2]);
        assert_eq!(per_cat.iter().sum::<usize>(), 51);
    }

    #[test]
    fn fairness_prompts_match_golden() {
        let golden = include_str!("../data/fairness_prompts.txt");
        let expected: Vec<&str> = golden.lines().collect();
        assert_eq!(fairness_prompts(), expected);
    }

    #[test]
    fn closed_questions_use_gerund() {
        let run = find_concept("run").unwrap();
        let q = coverage_questions(&run).unwrap();
        assert_eq!(q.closed[0], "Is the person running in the image?");
        assert_eq!(q.closed[1], "Is the picture depicting that a human is running?");
        let cook = find_concept("cooking meal").unwrap();
        assert_eq!(coverage_questions(&cook).unwrap().open, q.open);
        assert_eq!(q.open[0], OPEN_QUESTIONS[0]);
    }

    #[test]
    fn coverage_questions_reject_attributes() {
        let tall = find_concept("tall").unwrap();
        assert!(matches!(coverage_questions(&tall), Err(PromptError::UnsupportedCategory(Category::Height))));
    }

    #[test]
    fn default_spec_has_eighteen_parts() {
        let spec = PromptSpec::default_spec();
        assert_eq!(spec.part_count(), 18);
        assert_eq!(spec.image["style"].probability, 1.0);
        assert_eq!(spec.human["count"].probability, 1.0);
        assert_eq!(spec.human["action"].probability, 1.0);
    }

    #[test]
    fn degenerate_spec() {
        let spec = PromptSpec::parse(
            r#"
            [image.style]
            probability = 1.0
            values = ["a realistic photo"]
            [scene.weather]
            probability = 0.0
            values = ["on a sunny day"]
            [human.action]
            probability = 0.0
            "#,
        )
        .unwrap();
        for seed in 0..20 {
            assert_eq!(build_prompt(&spec, seed).unwrap(), "a realistic photo");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PromptSpec::default_spec();
        assert_eq!(build_prompt(&spec, 7).unwrap(), build_prompt(&spec, 7).unwrap());
        let distinct: HashSet<String> = (0..50).map(|s| build_prompt(&spec, s).unwrap()).collect();
        assert!(distinct.len() > 40);
    }

    #[test]
    fn section_order_is_fixed() {
        let spec = PromptSpec::default_spec();
        let parts = spec.sample(3).unwrap();
        let sections: Vec<Section> = parts.iter().map(|p| p.0).collect();
        let mut sorted = sections.clone();
        sorted.sort();
        assert_eq!(sections, sorted);
        assert_eq!(sections[0], Section::Image);
        assert!(parts.iter().any(|(s, name, _)| *s == Section::Image && name == "style"));
    }

    #[test]
    fn weather_inclusion_rate() {
        let spec = PromptSpec::default_spec();
        let p = spec.scene["weather"].probability;
        let hits = (0..1000u64)
            .filter(|s| spec.sample(*s).unwrap().iter().any(|(_, name, _)| name == "weather"))
            .count();
        let rate = hits as f64 / 1000.0;
        assert!((rate - p).abs() <= 0.05, "rate {rate} vs {p}");
    }

    #[test]
    fn config_errors() {
        let empty_pool = "[scene.weather]\nprobability = 0.3\nvalues = []\n";
        assert!(matches!(PromptSpec::parse(empty_pool), Err(PromptError::Config(_))));
        let bad_prob = "[scene.weather]\nprobability = 1.3\nvalues = [\"x\"]\n";
        assert!(matches!(PromptSpec::parse(bad_prob), Err(PromptError::Config(_))));
        let mut spec = PromptSpec::default_spec();
        spec.scene.get_mut("time").unwrap().values.clear();
        assert!(build_prompt(&spec, 1).is_err());
    }
}
