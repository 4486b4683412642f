use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Front-matter tag keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKey {
    Languages,
    TaskCategories,
    TaskIds,
    Licenses,
    SizeCategory,
    Multilinguality,
}

impl TagKey {
    pub const ALL: [TagKey; 6] = [
        TagKey::Languages,
        TagKey::TaskCategories,
        TagKey::TaskIds,
        TagKey::Licenses,
        TagKey::SizeCategory,
        TagKey::Multilinguality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TagKey::Languages => "languages",
            TagKey::TaskCategories => "task_categories",
            TagKey::TaskIds => "task_ids",
            TagKey::Licenses => "licenses",
            TagKey::SizeCategory => "size_category",
            TagKey::Multilinguality => "multilinguality",
        }
    }

    /// Name of the vocabulary file backing this key.
    pub fn vocab_file(self) -> &'static str {
        match self {
            TagKey::SizeCategory => "size_categories.txt",
            TagKey::Multilinguality => "multilinguality.txt",
            TagKey::Languages => "languages.txt",
            TagKey::TaskCategories => "task_categories.txt",
            TagKey::TaskIds => "task_ids.txt",
            TagKey::Licenses => "licenses.txt",
        }
    }

    pub fn is_single(self) -> bool {
        matches!(self, TagKey::SizeCategory | TagKey::Multilinguality)
    }
}

impl fmt::Display for TagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagKey {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        TagKey::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

/// Structured tags of one dataset. Lists keep first-seen order without
/// duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    #[serde(default)]
    pub languages: Vec<String>,
    #[serde(default)]
    pub task_categories: Vec<String>,
    #[serde(default)]
    pub task_ids: Vec<String>,
    #[serde(default)]
    pub licenses: Vec<String>,
    #[serde(default)]
    pub size_category: Option<String>,
    #[serde(default)]
    pub multilinguality: Option<String>,
}

impl TagSet {
    pub fn values(&self, key: TagKey) -> Vec<&str> {
        match key {
            TagKey::Languages => self.languages.iter().map(String::as_str).collect(),
            TagKey::TaskCategories => self.task_categories.iter().map(String::as_str).collect(),
            TagKey::TaskIds => self.task_ids.iter().map(String::as_str).collect(),
            TagKey::Licenses => self.licenses.iter().map(String::as_str).collect(),
            TagKey::SizeCategory => self.size_category.iter().map(String::as_str).collect(),
            TagKey::Multilinguality => self.multilinguality.iter().map(String::as_str).collect(),
        }
    }

    pub(crate) fn set(&mut self, key: TagKey, values: Vec<String>) {
        let mut seen = BTreeSet::new();
        let mut vals: Vec<String> = values.into_iter().filter(|v| seen.insert(v.clone())).collect();
        match key {
            TagKey::Languages => self.languages = vals,
            TagKey::TaskCategories => self.task_categories = vals,
            TagKey::TaskIds => self.task_ids = vals,
            TagKey::Licenses => self.licenses = vals,
            TagKey::SizeCategory => self.size_category = vals.pop(),
            TagKey::Multilinguality => self.multilinguality = vals.pop(),
        }
    }
}

const EMBEDDED: [(TagKey, &str); 6] = [
    (TagKey::Languages, include_str!("../../vocab/languages.txt")),
    (TagKey::TaskCategories, include_str!("../../vocab/task_categories.txt")),
    (TagKey::TaskIds, include_str!("../../vocab/task_ids.txt")),
    (TagKey::Licenses, include_str!("../../vocab/licenses.txt")),
    (TagKey::SizeCategory, include_str!("../../vocab/size_categories.txt")),
    (TagKey::Multilinguality, include_str!("../../vocab/multilinguality.txt")),
];

fn parse_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Controlled vocabularies, one per tag key.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    sets: BTreeMap<TagKey, BTreeSet<String>>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            sets: EMBEDDED.iter().map(|(k, t)| (*k, parse_list(t))).collect(),
        }
    }
}

impl Vocabulary {
    /// Built-in vocabularies, each replaced by `<registry>/vocab/<file>` when
    /// that file exists.
    pub fn load(registry_dir: &Path) -> Self {
        let mut v = Self::default();
        for key in TagKey::ALL {
            let p = registry_dir.join("vocab").join(key.vocab_file());
            if let Ok(text) = std::fs::read_to_string(&p) {
                v.sets.insert(key, parse_list(&text));
            }
        }
        v
    }

    pub fn contains(&self, key: TagKey, value: &str) -> bool {
        self.sets.get(&key).is_some_and(|s| s.contains(value))
    }

    pub fn values(&self, key: TagKey) -> impl Iterator<Item = &str> {
        self.sets.get(&key).into_iter().flatten().map(String::as_str)
    }
}
