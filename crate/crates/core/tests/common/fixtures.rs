use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use dataforge::builder::{BuilderDef, FieldAccessor, FormatOptions, SourceFormat, SourceRef};
use dataforge::registry::{card_template, Registry, TagSet};
use dataforge::schema::{Column, FeatureType, Schema};

pub const WORDS: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "dog", "ran", "fast", "slow", "river", "bank", "money", "tree", "green", "blue",
    "red", "big", "small", "data", "set", "model", "token", "word", "line", "Été", "naïve", "東京", "x1", "42",
];

pub fn sentence(rng: &mut impl Rng, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    let seps = [" ", " ", " ", ", ", "-", ". "];
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s += seps[rng.gen_range(0..seps.len())];
        }
        s += WORDS[rng.gen_range(0..WORDS.len())];
    }
    s
}

/// `id: int64, text: string (nullable), label: class_label[neg, pos, neu]`.
pub fn text_schema() -> Schema {
    Schema::new(vec![
        Column::new("id", FeatureType::Int64),
        Column::new("text", FeatureType::Utf8String).nullable(),
        Column::new("label", FeatureType::class_label(["neg", "pos", "neu"])),
    ])
    .unwrap()
}

pub fn text_field_map() -> BTreeMap<String, FieldAccessor> {
    ["id", "text", "label"]
        .into_iter()
        .map(|k| (k.to_owned(), FieldAccessor::Name(k.to_owned())))
        .collect()
}

/// Writes `rows` JSON lines matching [`text_schema`], ids from `first_id`.
pub fn write_jsonl(path: &Path, first_id: i64, rows: usize, seed: u64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut f = std::io::BufWriter::new(fs::File::create(path).unwrap());
    for i in 0..rows {
        let text = if rng.gen_ratio(1, 20) {
            serde_json::Value::Null
        } else {
            json!(sentence(&mut rng, 8))
        };
        let rec = json!({"id": first_id + i as i64, "text": text, "label": rng.gen_range(0..3)});
        writeln!(f, "{rec}").unwrap();
    }
}

/// Writes `shards` JSONL files of `rows_per_shard` rows into `dir`.
pub fn write_shards(dir: &Path, shards: usize, rows_per_shard: usize, seed: u64) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    (0..shards)
        .map(|s| {
            let p = dir.join(format!("shard-{s:02}.jsonl"));
            write_jsonl(
                &p,
                (s * rows_per_shard) as i64,
                rows_per_shard,
                seed.wrapping_add(s as u64),
            );
            p
        })
        .collect()
}

pub fn jsonl_def(id: &str, sources: BTreeMap<String, Vec<SourceRef>>) -> BuilderDef {
    BuilderDef {
        id: id.to_owned(),
        version: "1.0.0".into(),
        description: format!("Fixture dataset {id}."),
        citation: String::new(),
        license: "cc-by-4.0".into(),
        sources,
        format: SourceFormat::Jsonl,
        format_options: FormatOptions::default(),
        schema: text_schema(),
        field_map: text_field_map(),
        recommended_metrics: vec!["accuracy".into()],
    }
}

pub fn source(path: &Path) -> SourceRef {
    SourceRef {
        url: path.to_string_lossy().into_owned(),
        sha256: None,
    }
}

/// Writes split files under `data_dir`, registers the dataset with a valid
/// card carrying `tags`, and returns its definition.
pub fn register_dataset(
    registry: &Registry,
    data_dir: &Path,
    id: &str,
    splits: &[(&str, usize)],
    tags: &TagSet,
    seed: u64,
) -> BuilderDef {
    let dir = data_dir.join(id);
    fs::create_dir_all(&dir).unwrap();
    let mut sources = BTreeMap::new();
    for (i, (name, rows)) in splits.iter().enumerate() {
        let p = dir.join(format!("{name}.jsonl"));
        write_jsonl(&p, 0, *rows, seed.wrapping_mul(31).wrapping_add(i as u64));
        sources.insert(name.to_string(), vec![source(&p)]);
    }
    let def = jsonl_def(id, sources);
    let counts: Vec<(&str, u64)> = splits.iter().map(|(n, r)| (*n, *r as u64)).collect();
    registry
        .add_entry(&def, Some(&card_template(tags, &counts)), Vec::new())
        .unwrap();
    def
}

/// Deterministic tags for the `i`-th fixture entry, spread over a few values
/// per key so searches have non-trivial intersections.
pub fn fixture_tags(i: usize) -> TagSet {
    let langs = ["en", "es", "fr", "de", "zh"];
    let tasks = [
        "text-classification",
        "question-answering",
        "translation",
        "summarization",
    ];
    let licenses = ["mit", "cc-by-4.0", "apache-2.0"];
    let sizes = ["n<1K", "1K<n<10K", "10K<n<100K"];
    let mut languages = vec![langs[i % 5].to_owned()];
    if i % 3 == 0 {
        languages.push(langs[(i / 3) % 5].to_owned());
    }
    languages.sort();
    languages.dedup();
    let multi = if languages.len() > 1 {
        "multilingual"
    } else {
        "monolingual"
    };
    TagSet {
        languages,
        task_categories: vec![tasks[(i / 2) % 4].to_owned()],
        task_ids: Vec::new(),
        licenses: vec![licenses[i % 3].to_owned()],
        size_category: Some(sizes[(i / 5) % 3].to_owned()),
        multilinguality: Some(multi.to_owned()),
    }
}

/// Rows matching [`text_schema`] generated in memory.
pub fn text_rows(n: usize, seed: u64) -> Vec<dataforge::schema::Row> {
    use dataforge::schema::Value;
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let text = if rng.gen_ratio(1, 20) {
                Value::Null
            } else {
                Value::Text(sentence(&mut rng, 8))
            };
            vec![Value::Int(i as i64), text, Value::Int(rng.gen_range(0..3))]
        })
        .collect()
}

/// Writes [`text_rows`] to `path` and returns the opened table.
pub fn text_table(path: &Path, n: usize, seed: u64) -> dataforge::Table {
    dataforge::store::write_table(&text_schema(), &text_rows(n, seed), path).unwrap()
}
