//! Data cards: `---`-delimited tag front matter followed by markdown.
//!
//! Front matter is a flat list of `key: value`, `key: [a, b]` or `key:`
//! followed by `- item` lines. Split counts are read from the body of the
//! "Data Splits" section, either as table rows whose first cell is the
//! split name (`| train | 1,000 |`) or as `name: count` lines.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::vocab::{TagKey, TagSet, Vocabulary};
use crate::builder::DatasetInfo;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CardError {
    #[error("card has no front matter")]
    MissingFrontMatter,
    #[error("malformed tag on line {line}: {reason}")]
    MalformedTag { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub level: u8,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataCard {
    pub tags: TagSet,
    pub sections: Vec<Section>,
}

/// Required sections as (parent, children).
pub const REQUIRED_SECTIONS: [(&str, &[&str]); 6] = [
    ("Dataset Description", &[]),
    ("Languages", &[]),
    ("Dataset Structure", &["Data Fields", "Data Splits"]),
    (
        "Considerations for Using the Data",
        &["Social Impact", "Known Limitations"],
    ),
    ("Licensing Information", &[]),
    ("Citation Information", &[]),
];

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\''] {
        if let Some(inner) = s.strip_prefix(q).and_then(|r| r.strip_suffix(q)) {
            return inner;
        }
    }
    s
}

fn inline_values(rest: &str) -> Option<Vec<String>> {
    let rest = rest.trim();
    if let Some(inner) = rest.strip_prefix('[') {
        let inner = inner.strip_suffix(']')?;
        return Some(
            inner
                .split(',')
                .map(unquote)
                .filter(|v| !v.is_empty())
                .map(str::to_owned)
                .collect(),
        );
    }
    Some(vec![unquote(rest).to_owned()])
}

fn parse_front_matter(lines: &[&str], first_line: usize) -> Result<TagSet, CardError> {
    let mut tags = TagSet::default();
    let mut seen: BTreeMap<TagKey, Vec<String>> = BTreeMap::new();
    let mut current: Option<TagKey> = None;
    for (i, raw) in lines.iter().enumerate() {
        let line = first_line + i;
        let bad = |reason: &str| CardError::MalformedTag {
            line,
            reason: reason.to_owned(),
        };
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(item) = t.strip_prefix("- ").or(if t == "-" { Some("") } else { None }) {
            let key = current.ok_or_else(|| bad("list item outside a key"))?;
            let v = unquote(item);
            if v.is_empty() {
                return Err(bad("empty list item"));
            }
            seen.get_mut(&key).unwrap().push(v.to_owned());
            continue;
        }
        let (k, rest) = t.split_once(':').ok_or_else(|| bad("expected `key: value`"))?;
        let key: TagKey = k
            .trim()
            .parse()
            .map_err(|_| bad(&format!("unknown tag key {:?}", k.trim())))?;
        if seen.contains_key(&key) {
            return Err(bad(&format!("duplicate tag key {key}")));
        }
        let vals = if rest.trim().is_empty() {
            Vec::new()
        } else {
            inline_values(rest).ok_or_else(|| bad("unterminated list"))?
        };
        seen.insert(key, vals);
        current = Some(key);
    }
    for (key, vals) in seen {
        if key.is_single() && vals.len() > 1 {
            return Err(CardError::MalformedTag {
                line: first_line,
                reason: format!("{key} takes a single value"),
            });
        }
        tags.set(key, vals);
    }
    Ok(tags)
}

fn heading(line: &str) -> Option<(u8, &str)> {
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    if !(1..=3).contains(&hashes) {
        return None;
    }
    let rest = &line[hashes..];
    if !rest.starts_with(' ') && !rest.is_empty() {
        return None;
    }
    Some((hashes as u8, rest.trim().trim_end_matches('#').trim()))
}

/// Parses a card. Headings at levels 1–3 outside fenced code blocks start
/// sections; text before the first heading is ignored.
pub fn parse_card(text: &str) -> Result<DataCard, CardError> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .ok_or(CardError::MissingFrontMatter)?;
    if lines[start].trim_end() != "---" {
        return Err(CardError::MissingFrontMatter);
    }
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim_end() == "---")
        .map(|p| p + start + 1)
        .ok_or(CardError::MissingFrontMatter)?;
    let tags = parse_front_matter(&lines[start + 1..end], start + 2)?;

    let mut sections: Vec<Section> = Vec::new();
    let mut fenced = false;
    for line in &lines[end + 1..] {
        if line.trim_start().starts_with("```") {
            fenced = !fenced;
        }
        match (fenced, heading(line)) {
            (false, Some((level, title))) => sections.push(Section {
                level,
                title: title.to_owned(),
                body: String::new(),
            }),
            _ => {
                if let Some(s) = sections.last_mut() {
                    s.body.push_str(line);
                    s.body.push('\n');
                }
            }
        }
    }
    Ok(DataCard { tags, sections })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MissingFrontMatter,
    MalformedFrontMatter,
    MissingSection,
    EmptySection,
    SplitCountMismatch,
    UnknownSplit,
    VocabularyViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
    pub message: String,
}

impl Finding {
    fn error(kind: FindingKind, message: String) -> Self {
        Finding {
            severity: Severity::Error,
            kind,
            message,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}", self.message)
    }
}

fn same_title(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

impl DataCard {
    pub fn section(&self, title: &str) -> Option<&Section> {
        self.sections.iter().find(|s| same_title(&s.title, title))
    }

    /// Sections nested under the section at `idx`.
    fn children(&self, idx: usize) -> &[Section] {
        let level = self.sections[idx].level;
        let end = self.sections[idx + 1..]
            .iter()
            .position(|s| s.level <= level)
            .map_or(self.sections.len(), |p| p + idx + 1);
        &self.sections[idx + 1..end]
    }

    /// Split counts stated in the "Data Splits" section.
    pub fn stated_split_counts(&self) -> Vec<(String, u64)> {
        let Some(s) = self.section("Data Splits") else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for line in s.body.lines() {
            let t = line.trim();
            if let Some(row) = t.strip_prefix('|') {
                let cells: Vec<&str> = row.trim_end_matches('|').split('|').map(str::trim).collect();
                let name = cells[0].trim_matches('`');
                if name.is_empty() || name.chars().all(|c| matches!(c, '-' | ':' | ' ')) {
                    continue;
                }
                if let Some(n) = cells[1..].iter().find_map(|c| parse_count(c)) {
                    out.push((name.to_owned(), n));
                }
            } else {
                let t = t.trim_start_matches(['-', '*']).trim();
                if let Some((name, n)) = t.split_once(':') {
                    let name = name.trim().trim_matches(['`', '*']);
                    if let Some(n) = parse_count(n) {
                        if !name.is_empty() && !name.contains(' ') {
                            out.push((name.to_owned(), n));
                        }
                    }
                }
            }
        }
        out
    }
}

fn parse_count(s: &str) -> Option<u64> {
    let t: String = s.trim().chars().filter(|&c| c != ',' && c != '_').collect();
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    t.parse().ok()
}

/// Checks a parsed card. An empty list means the card is fully valid.
pub fn validate_card(card: &DataCard, info: Option<&DatasetInfo>, vocab: &Vocabulary) -> Vec<Finding> {
    let mut out = Vec::new();
    for key in TagKey::ALL {
        for v in card.tags.values(key) {
            if !vocab.contains(key, v) {
                out.push(Finding::error(
                    FindingKind::VocabularyViolation,
                    format!("{key} value {v:?} is not in the vocabulary"),
                ));
            }
        }
    }

    for (parent, children) in REQUIRED_SECTIONS {
        let Some(idx) = card.sections.iter().position(|s| same_title(&s.title, parent)) else {
            out.push(Finding::error(
                FindingKind::MissingSection,
                format!("missing section {parent:?}"),
            ));
            continue;
        };
        let nested = card.children(idx);
        for child in children {
            if !nested.iter().any(|s| same_title(&s.title, child)) {
                out.push(Finding::error(
                    FindingKind::MissingSection,
                    format!("missing section {child:?} under {parent:?}"),
                ));
            }
        }
    }

    for (i, s) in card.sections.iter().enumerate() {
        if s.body.trim().is_empty() && card.children(i).is_empty() {
            out.push(Finding {
                severity: Severity::Warning,
                kind: FindingKind::EmptySection,
                message: format!("section {:?} is empty", s.title),
            });
        }
    }

    if let Some(info) = info {
        for (name, stated) in card.stated_split_counts() {
            match info.splits.get(&name) {
                None => out.push(Finding::error(
                    FindingKind::UnknownSplit,
                    format!("card describes split {name:?} which the dataset does not have"),
                )),
                Some(si) if si.num_rows != stated => out.push(Finding::error(
                    FindingKind::SplitCountMismatch,
                    format!("card says {name} has {stated} rows, dataset has {}", si.num_rows),
                )),
                _ => {}
            }
        }
    }
    out
}

/// Parses and validates in one step; parse failures become findings.
pub fn check_card(text: &str, info: Option<&DatasetInfo>, vocab: &Vocabulary) -> Vec<Finding> {
    match parse_card(text) {
        Ok(card) => validate_card(&card, info, vocab),
        Err(CardError::MissingFrontMatter) => vec![Finding::error(
            FindingKind::MissingFrontMatter,
            "card has no front matter".into(),
        )],
        Err(e @ CardError::MalformedTag { .. }) => {
            vec![Finding::error(FindingKind::MalformedFrontMatter, e.to_string())]
        }
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

/// A card that passes validation, for fixtures and templates.
pub fn card_template(tags: &TagSet, splits: &[(&str, u64)]) -> String {
    let mut s = String::from("---\n");
    for key in TagKey::ALL {
        let vals = tags.values(key);
        if vals.is_empty() {
            continue;
        }
        if key.is_single() {
            s += &format!("{key}: {}\n", vals[0]);
        } else {
            s += &format!("{key}: [{}]\n", vals.join(", "));
        }
    }
    s += "---\n\n# Dataset Card\n\n## Dataset Description\n\nSynthetic fixture data.\n\n";
    s += "## Languages\n\nSee the languages tag.\n\n## Dataset Structure\n\n";
    s += "### Data Fields\n\nText and label columns.\n\n### Data Splits\n\n| split | rows |\n|---|---|\n";
    for (name, n) in splits {
        s += &format!("| {name} | {n} |\n");
    }
    s += "\n## Considerations for Using the Data\n\n### Social Impact\n\nNone known.\n\n";
    s += "### Known Limitations\n\nSmall and synthetic.\n\n## Licensing Information\n\nSee the licenses tag.\n\n";
    s += "## Citation Information\n\nNone.\n";
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags() -> TagSet {
        TagSet {
            languages: vec!["en".into()],
            task_categories: vec!["text-classification".into()],
            size_category: Some("n<1K".into()),
            ..TagSet::default()
        }
    }

    #[test]
    fn template_is_valid() {
        let text = card_template(&tags(), &[("train", 3)]);
        let card = parse_card(&text).unwrap();
        assert_eq!(card.tags, tags());
        let f = validate_card(&card, None, &Vocabulary::default());
        assert!(f.is_empty(), "{f:?}");
        assert_eq!(card.stated_split_counts(), [("train".to_owned(), 3)]);
    }

    #[test]
    fn front_matter_forms() {
        let text = "---\nlanguages:\n- en\n- 'es'\nlicenses: mit\ntask_ids: [\"extractive-qa\", open-domain-qa]\n---\n# A\nbody\n";
        let card = parse_card(text).unwrap();
        assert_eq!(card.tags.languages, ["en", "es"]);
        assert_eq!(card.tags.licenses, ["mit"]);
        assert_eq!(card.tags.task_ids, ["extractive-qa", "open-domain-qa"]);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_card("# Title\n"), Err(CardError::MissingFrontMatter));
        assert_eq!(parse_card("---\nlanguages: [en]\n"), Err(CardError::MissingFrontMatter));
        match parse_card("---\nlanguages: [en]\ncolour: red\n---\n") {
            Err(CardError::MalformedTag { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_card("---\nsize_category: [n<1K, n>10M]\n---\n"),
            Err(CardError::MalformedTag { .. })
        ));
    }

    #[test]
    fn headings_in_code_fences_ignored() {
        let card = parse_card("---\n---\n# A\n```\n# not a heading\n```\n#### deep\n").unwrap();
        assert_eq!(card.sections.len(), 1);
        assert!(card.sections[0].body.contains("# not a heading"));
    }

    #[test]
    fn missing_nested_section() {
        let text = card_template(&tags(), &[]).replace("### Known Limitations\n\nSmall and synthetic.\n\n", "");
        let f = validate_card(&parse_card(&text).unwrap(), None, &Vocabulary::default());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, FindingKind::MissingSection);
    }

    #[test]
    fn split_count_lines() {
        let text = "---\n---\n### Data Splits\n- train: 1,000\n- `test`: 20\nNote: see above\n";
        let card = parse_card(text).unwrap();
        assert_eq!(
            card.stated_split_counts(),
            [("train".to_owned(), 1000), ("test".to_owned(), 20)]
        );
    }
}
