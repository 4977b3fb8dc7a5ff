//! Emotion vocabularies, cue categories, and dataset profiles.
//!
//! Everything downstream references these canonical types: emotion labels are
//! lowercase identifiers drawn from a dataset profile's vocabulary, and visual
//! cues are short phrases assigned to one of six fixed categories.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown dataset id '{0}'")]
    UnknownDataset(String),
    #[error("invalid cue phrase: {0}")]
    InvalidCue(String),
    #[error("invalid profile '{id}': {reason}")]
    InvalidProfile { id: String, reason: String },
}

/// Maximum length of a cue phrase; cues are concise by definition.
pub const MAX_CUE_LEN: usize = 120;

// ---------------------------------------------------------------------------
// Emotion labels and sets
// ---------------------------------------------------------------------------

/// A single emotion identifier, canonically lowercase.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionLabel(String);

impl EmotionLabel {
    /// Parses a label, folding case and trimming whitespace.
    pub fn new(name: &str) -> Self {
        EmotionLabel(name.trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An ordered, duplicate-free set of emotion labels.
///
/// Ordering is canonical: sets built against a [`DatasetProfile`] keep the
/// profile's vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionSet {
    labels: Vec<EmotionLabel>,
}

impl EmotionSet {
    pub fn empty() -> Self {
        EmotionSet { labels: Vec::new() }
    }

    /// Builds a set from raw labels, keeping only those in the profile
    /// vocabulary, deduplicating, and sorting into profile order.
    pub fn from_labels<I, S>(profile: &DatasetProfile, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for raw in labels {
            let label = EmotionLabel::new(raw.as_ref());
            if profile.vocabulary.contains(&label) && !out.contains(&label) {
                out.push(label);
            }
        }
        out.sort_by_key(|l| profile.position(l));
        EmotionSet { labels: out }
    }

    /// Builds a vocabulary set, preserving the given declaration order.
    /// Duplicates are dropped.
    pub fn from_vocabulary<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<EmotionLabel> = Vec::new();
        for raw in labels {
            let label = EmotionLabel::new(raw.as_ref());
            if !label.as_str().is_empty() && !out.contains(&label) {
                out.push(label);
            }
        }
        EmotionSet { labels: out }
    }

    pub fn contains(&self, label: &EmotionLabel) -> bool {
        self.labels.contains(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmotionLabel> {
        self.labels.iter()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn union(&self, other: &EmotionSet, profile: &DatasetProfile) -> EmotionSet {
        EmotionSet::from_labels(profile, self.iter().chain(other.iter()).map(|l| l.as_str()))
    }

    pub fn intersection(&self, other: &EmotionSet, profile: &DatasetProfile) -> EmotionSet {
        EmotionSet::from_labels(
            profile,
            self.iter()
                .filter(|l| other.contains(l))
                .map(|l| l.as_str()),
        )
    }

    /// The profile vocabulary minus this set.
    pub fn complement(&self, profile: &DatasetProfile) -> EmotionSet {
        EmotionSet::from_labels(
            profile,
            profile
                .vocabulary
                .iter()
                .filter(|l| !self.contains(l))
                .map(|l| l.as_str()),
        )
    }

    /// Renders the set as a comma-separated list, e.g. `"sadness, fear"`.
    pub fn render(&self) -> String {
        self.labels
            .iter()
            .map(|l| l.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for EmotionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

// ---------------------------------------------------------------------------
// Cue categories and cues
// ---------------------------------------------------------------------------

/// The six semantically independent categories that organize visual emotion
/// cues. Indices run 1..=6 with no gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueCategory {
    HumanAndAnimalCharacters,
    SceneryAndEnvironment,
    ArtisticAndStylisticElements,
    ObjectPresence,
    ActionAndNarrative,
    TextOverlayAndGraphicElements,
}

impl CueCategory {
    pub const ALL: [CueCategory; 6] = [
        CueCategory::HumanAndAnimalCharacters,
        CueCategory::SceneryAndEnvironment,
        CueCategory::ArtisticAndStylisticElements,
        CueCategory::ObjectPresence,
        CueCategory::ActionAndNarrative,
        CueCategory::TextOverlayAndGraphicElements,
    ];

    /// 1-based index of the category.
    pub fn index(self) -> u8 {
        match self {
            CueCategory::HumanAndAnimalCharacters => 1,
            CueCategory::SceneryAndEnvironment => 2,
            CueCategory::ArtisticAndStylisticElements => 3,
            CueCategory::ObjectPresence => 4,
            CueCategory::ActionAndNarrative => 5,
            CueCategory::TextOverlayAndGraphicElements => 6,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            CueCategory::HumanAndAnimalCharacters => "Human and Animal Characters",
            CueCategory::SceneryAndEnvironment => "Scenery and Environment",
            CueCategory::ArtisticAndStylisticElements => "Artistic and Stylistic Elements",
            CueCategory::ObjectPresence => "Object Presence",
            CueCategory::ActionAndNarrative => "Action and Narrative",
            CueCategory::TextOverlayAndGraphicElements => "Text Overlay and Graphic Elements",
        }
    }

    pub fn from_index(index: u8) -> Option<CueCategory> {
        Self::ALL.iter().copied().find(|c| c.index() == index)
    }

    /// Case-insensitive title lookup, tolerant of surrounding whitespace.
    pub fn from_title(title: &str) -> Option<CueCategory> {
        let wanted = title.trim().to_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.title().to_lowercase() == wanted)
    }
}

impl fmt::Display for CueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}. {}", self.index(), self.title())
    }
}

/// Returns the six canonical categories in index order.
pub fn canonical_categories() -> [CueCategory; 6] {
    CueCategory::ALL
}

/// Whether a cue marks an emotion as induced or suppressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuePolarity {
    Positive,
    Negative,
}

/// A visual emotion cue: a short phrase naming an image feature that
/// influences viewer emotion, assigned to one category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cue {
    pub phrase: String,
    pub category: CueCategory,
    pub polarity: CuePolarity,
}

impl Cue {
    pub fn new(
        phrase: &str,
        category: CueCategory,
        polarity: CuePolarity,
    ) -> Result<Cue, TaxonomyError> {
        let phrase = normalize_phrase(phrase);
        if phrase.is_empty() {
            return Err(TaxonomyError::InvalidCue("empty phrase".into()));
        }
        if phrase.chars().count() > MAX_CUE_LEN {
            return Err(TaxonomyError::InvalidCue(format!(
                "phrase exceeds {MAX_CUE_LEN} characters: '{phrase}'"
            )));
        }
        Ok(Cue {
            phrase,
            category,
            polarity,
        })
    }
}

/// Collapses internal whitespace runs and trims the ends.
pub fn normalize_phrase(phrase: &str) -> String {
    phrase.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The curated seed cues, one entry per category. Two entries carry corrected
/// spellings ("Weapons", "Threatening Objects") for garbled source rows.
const SEED_CUES: [(&str, CueCategory); 62] = {
    use CueCategory::*;
    [
        ("Facial Expressions", HumanAndAnimalCharacters),
        ("Body Language", HumanAndAnimalCharacters),
        ("Archetypes", HumanAndAnimalCharacters),
        ("Emotional Contagion", HumanAndAnimalCharacters),
        ("Cuteness", HumanAndAnimalCharacters),
        ("Lighting", SceneryAndEnvironment),
        ("Perspective", SceneryAndEnvironment),
        ("Ephemeral Elements", SceneryAndEnvironment),
        ("Seasonal Depictions", SceneryAndEnvironment),
        ("Time of Day", SceneryAndEnvironment),
        ("Weather/Climate", SceneryAndEnvironment),
        ("Nature/Urban", SceneryAndEnvironment),
        ("Color Palette", ArtisticAndStylisticElements),
        ("Contrast", ArtisticAndStylisticElements),
        ("Symmetry/Asymmetry", ArtisticAndStylisticElements),
        ("Texture", ArtisticAndStylisticElements),
        ("Depth of Field", ArtisticAndStylisticElements),
        ("Sharpness/Blurriness", ArtisticAndStylisticElements),
        ("Rule of Thirds", ArtisticAndStylisticElements),
        ("Leading Lines", ArtisticAndStylisticElements),
        ("Visual Weight", ArtisticAndStylisticElements),
        ("Repetition/Patterns", ArtisticAndStylisticElements),
        ("Framing", ArtisticAndStylisticElements),
        ("Balance/Imbalance", ArtisticAndStylisticElements),
        ("Gestalt Principles", ArtisticAndStylisticElements),
        ("Stylization", ArtisticAndStylisticElements),
        ("Brushwork/Texture", ArtisticAndStylisticElements),
        ("Filters/Effects", ArtisticAndStylisticElements),
        ("Artistic Medium", ArtisticAndStylisticElements),
        ("Objects", ObjectPresence),
        ("Scale/Proportion", ObjectPresence),
        ("Personal Items", ObjectPresence),
        ("Machines", ObjectPresence),
        ("Weapons", ObjectPresence),
        ("Threatening Objects", ObjectPresence),
        ("Technology", ObjectPresence),
        ("Food and Drinks", ObjectPresence),
        ("Cultural Objects", ObjectPresence),
        ("Motion Blur", ActionAndNarrative),
        ("Juxtaposition", ActionAndNarrative),
        ("Symbolism", ActionAndNarrative),
        ("Historical References", ActionAndNarrative),
        ("Metaphors", ActionAndNarrative),
        ("Mythological Motifs", ActionAndNarrative),
        ("Nostalgia", ActionAndNarrative),
        ("Familiarity", ActionAndNarrative),
        ("Novelty", ActionAndNarrative),
        ("Holiday", ActionAndNarrative),
        ("Subliminal Messaging", ActionAndNarrative),
        ("Personal Memories", ActionAndNarrative),
        ("Cultural Narratives", ActionAndNarrative),
        ("Social Conditioning", ActionAndNarrative),
        ("Political Context", ActionAndNarrative),
        ("Cultural Appropriation", ActionAndNarrative),
        ("Perceived Movement", ActionAndNarrative),
        ("Perceived Authenticity", ActionAndNarrative),
        ("Inclusion of Text", TextOverlayAndGraphicElements),
        ("Iconography", TextOverlayAndGraphicElements),
        ("Captions", TextOverlayAndGraphicElements),
        ("Memes", TextOverlayAndGraphicElements),
        ("Hashtags", TextOverlayAndGraphicElements),
        ("Emojis/Emoticons", TextOverlayAndGraphicElements),
    ]
};

/// Returns every seed cue with its category, polarity positive.
pub fn seed_cues() -> Vec<Cue> {
    SEED_CUES
        .iter()
        .map(|(phrase, category)| {
            Cue::new(phrase, *category, CuePolarity::Positive).expect("seed cue phrases are valid")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset profiles
// ---------------------------------------------------------------------------

/// Describes one dataset's emotion vocabulary and labeling conventions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub dataset_id: String,
    pub vocabulary: EmotionSet,
    pub includes_neutral: bool,
    pub multi_label: bool,
}

impl DatasetProfile {
    pub fn new(
        dataset_id: &str,
        labels: &[&str],
        includes_neutral: bool,
        multi_label: bool,
    ) -> Result<DatasetProfile, TaxonomyError> {
        let vocabulary = EmotionSet::from_vocabulary(labels.iter().copied());
        let profile = DatasetProfile {
            dataset_id: dataset_id.trim().to_lowercase(),
            vocabulary,
            includes_neutral,
            multi_label,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if self.vocabulary.is_empty() {
            return Err(TaxonomyError::InvalidProfile {
                id: self.dataset_id.clone(),
                reason: "empty vocabulary".into(),
            });
        }
        let neutral = EmotionLabel::new("neutral");
        if !self.includes_neutral && self.vocabulary.contains(&neutral) {
            return Err(TaxonomyError::InvalidProfile {
                id: self.dataset_id.clone(),
                reason: "'neutral' present in a profile that excludes it".into(),
            });
        }
        if self.includes_neutral && !self.vocabulary.contains(&neutral) {
            return Err(TaxonomyError::InvalidProfile {
                id: self.dataset_id.clone(),
                reason: "profile declares neutral but vocabulary lacks it".into(),
            });
        }
        Ok(())
    }

    /// Position of a label in the vocabulary; unknown labels sort last.
    fn position(&self, label: &EmotionLabel) -> usize {
        self.vocabulary
            .iter()
            .position(|l| l == label)
            .unwrap_or(usize::MAX)
    }
}

const CORE_SEVEN: [&str; 7] = [
    "sadness", "joy", "fear", "disgust", "anger", "surprise", "neutral",
];

/// Registry of dataset profiles: the three built-ins plus any custom
/// profiles loaded from configuration.
#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, DatasetProfile>,
}

impl ProfileRegistry {
    pub fn builtin() -> ProfileRegistry {
        let mut profiles = BTreeMap::new();
        for profile in [
            DatasetProfile::new("emotion6", &CORE_SEVEN, true, true).unwrap(),
            DatasetProfile::new("emoset", &CORE_SEVEN[..6], false, true).unwrap(),
            DatasetProfile::new("m-disaster", &CORE_SEVEN, true, true).unwrap(),
        ] {
            profiles.insert(profile.dataset_id.clone(), profile);
        }
        ProfileRegistry { profiles }
    }

    pub fn register(&mut self, profile: DatasetProfile) -> Result<(), TaxonomyError> {
        profile.validate()?;
        self.profiles.insert(profile.dataset_id.clone(), profile);
        Ok(())
    }

    pub fn get(&self, dataset_id: &str) -> Result<&DatasetProfile, TaxonomyError> {
        let key = dataset_id.trim().to_lowercase();
        self.profiles
            .get(&key)
            .ok_or(TaxonomyError::UnknownDataset(key))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(|k| k.as_str())
    }

    /// A synthetic profile spanning several datasets: the vocabulary union in
    /// the order datasets sort by id, first occurrence wins.
    pub fn union_profile(&self, dataset_ids: &[String]) -> Result<DatasetProfile, TaxonomyError> {
        let mut ids: Vec<String> = dataset_ids
            .iter()
            .map(|s| s.trim().to_lowercase())
            .collect();
        ids.sort();
        ids.dedup();
        let mut labels: Vec<String> = Vec::new();
        let mut includes_neutral = false;
        let mut multi_label = false;
        for id in &ids {
            let profile = self.get(id)?;
            includes_neutral |= profile.includes_neutral;
            multi_label |= profile.multi_label;
            for label in profile.vocabulary.iter() {
                if !labels.iter().any(|l| l == label.as_str()) {
                    labels.push(label.as_str().to_string());
                }
            }
        }
        let profile = DatasetProfile {
            dataset_id: ids.join("+"),
            vocabulary: EmotionSet::from_vocabulary(labels),
            includes_neutral,
            multi_label,
        };
        profile.validate()?;
        Ok(profile)
    }
}

/// Looks up a built-in dataset profile by id.
pub fn dataset_profile(dataset_id: &str) -> Result<DatasetProfile, TaxonomyError> {
    ProfileRegistry::builtin().get(dataset_id).cloned()
}

// ---------------------------------------------------------------------------
// Label parsing
// ---------------------------------------------------------------------------

/// Extracts emotion labels from raw model output by case-insensitive
/// whole-word match against the profile vocabulary. Unmatched words are
/// ignored; the result is deduplicated and in canonical order.
///
/// ```
/// use evoke::taxonomy::{dataset_profile, parse_emotion_labels};
///
/// let profile = dataset_profile("emotion6").unwrap();
/// let set = parse_emotion_labels("Sadness and FEAR, not melancholy", &profile);
/// assert_eq!(set.render(), "sadness, fear");
/// ```
pub fn parse_emotion_labels(text: &str, profile: &DatasetProfile) -> EmotionSet {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();
    let mut found: Vec<&EmotionLabel> = Vec::new();
    for label in profile.vocabulary.iter() {
        let words: Vec<String> = label
            .as_str()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_string())
            .collect();
        if words.is_empty() {
            continue;
        }
        let hit = tokens
            .windows(words.len())
            .any(|window| window.iter().zip(&words).all(|(a, b)| a == b));
        if hit {
            found.push(label);
        }
    }
    EmotionSet::from_labels(profile, found.iter().map(|l| l.as_str()))
}
