//! Named, versioned transform functions.
//!
//! Built-ins:
//!
//! | id | kind | params |
//! |----|------|--------|
//! | `identity` | map | none |
//! | `lowercase` | map | `column` |
//! | `concat_fields` | map | `columns`, `output`, `separator` (default `" "`) |
//! | `whitespace_tokenize` | map | `column`, `output` (default `<column>_tokens`) |
//! | `length` | map | `column`, `output` (default `<column>_length`) |
//! | `non_empty` | filter | `column` |
//! | `not_null` | filter | `column` |
//! | `min_length` | filter | `column`, `min` |

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde_json::Value as Json;

use crate::schema::{Column, FeatureType, Row, Schema, Value};

/// What a transform function sees besides its rows.
pub struct FnContext<'a> {
    pub schema: &'a Schema,
    pub params: &'a Json,
}

impl FnContext<'_> {
    pub fn str_param(&self, key: &str) -> Result<&str, String> {
        self.params
            .get(key)
            .and_then(Json::as_str)
            .ok_or_else(|| format!("missing string parameter {key:?}"))
    }

    pub fn column_index(&self, key: &str) -> Result<usize, String> {
        let name = self.str_param(key)?;
        self.schema
            .index_of(name)
            .ok_or_else(|| format!("unknown column {name:?}"))
    }
}

pub type MapFunction = dyn Fn(&FnContext<'_>, Vec<Row>) -> Result<Vec<Row>, String> + Send + Sync;
pub type PredicateFunction = dyn Fn(&FnContext<'_>, &[Row]) -> Result<Vec<bool>, String> + Send + Sync;
pub type SchemaFunction = dyn Fn(&Schema, &Json) -> Result<Schema, String> + Send + Sync;

#[derive(Clone)]
pub struct MapEntry {
    pub version: String,
    pub func: Arc<MapFunction>,
    pub output_schema: Option<Arc<SchemaFunction>>,
}

#[derive(Clone)]
pub struct PredicateEntry {
    pub version: String,
    pub func: Arc<PredicateFunction>,
}

/// Registered functions plus a counter of how many times any of them ran.
#[derive(Default)]
pub struct TransformRegistry {
    maps: HashMap<String, MapEntry>,
    predicates: HashMap<String, PredicateEntry>,
    invocations: AtomicU64,
}

impl std::fmt::Debug for TransformRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut maps: Vec<_> = self.maps.keys().collect();
        let mut preds: Vec<_> = self.predicates.keys().collect();
        maps.sort();
        preds.sort();
        f.debug_struct("TransformRegistry")
            .field("maps", &maps)
            .field("predicates", &preds)
            .finish()
    }
}

impl TransformRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register_map_with_schema("identity", "1", |_, rows| Ok(rows), |s, _| Ok(s.clone()));
        r.register_map("lowercase", "1", lowercase);
        r.register_map_with_schema("concat_fields", "1", concat_fields, |s, p| {
            add_column(s, p, "output", None, FeatureType::Utf8String)
        });
        r.register_map_with_schema("whitespace_tokenize", "1", whitespace_tokenize, |s, p| {
            add_column(
                s,
                p,
                "output",
                Some("_tokens"),
                FeatureType::sequence(FeatureType::Utf8String),
            )
        });
        r.register_map_with_schema("length", "1", length, |s, p| {
            add_column(s, p, "output", Some("_length"), FeatureType::Int64)
        });
        r.register_predicate("non_empty", "1", |ctx, rows| {
            let c = ctx.column_index("column")?;
            Ok(rows
                .iter()
                .map(|r| match &r[c] {
                    Value::Text(s) => !s.is_empty(),
                    Value::Bytes(b) => !b.is_empty(),
                    Value::List(l) => !l.is_empty(),
                    Value::Null => false,
                    _ => true,
                })
                .collect())
        });
        r.register_predicate("not_null", "1", |ctx, rows| {
            let c = ctx.column_index("column")?;
            Ok(rows.iter().map(|r| !r[c].is_null()).collect())
        });
        r.register_predicate("min_length", "1", |ctx, rows| {
            let c = ctx.column_index("column")?;
            let min = ctx
                .params
                .get("min")
                .and_then(Json::as_u64)
                .ok_or("missing integer parameter \"min\"")?;
            rows.iter()
                .map(|r| value_length(&r[c]).map(|n| n.is_some_and(|n| n >= min)))
                .collect()
        });
        r
    }

    /// Registers a map whose output schema equals its input schema.
    pub fn register_map<F>(&mut self, id: &str, version: &str, f: F)
    where
        F: Fn(&FnContext<'_>, Vec<Row>) -> Result<Vec<Row>, String> + Send + Sync + 'static,
    {
        self.maps.insert(
            id.to_owned(),
            MapEntry {
                version: version.to_owned(),
                func: Arc::new(f),
                output_schema: None,
            },
        );
    }

    pub fn register_map_with_schema<F, S>(&mut self, id: &str, version: &str, f: F, schema: S)
    where
        F: Fn(&FnContext<'_>, Vec<Row>) -> Result<Vec<Row>, String> + Send + Sync + 'static,
        S: Fn(&Schema, &Json) -> Result<Schema, String> + Send + Sync + 'static,
    {
        self.maps.insert(
            id.to_owned(),
            MapEntry {
                version: version.to_owned(),
                func: Arc::new(f),
                output_schema: Some(Arc::new(schema)),
            },
        );
    }

    pub fn register_predicate<F>(&mut self, id: &str, version: &str, f: F)
    where
        F: Fn(&FnContext<'_>, &[Row]) -> Result<Vec<bool>, String> + Send + Sync + 'static,
    {
        self.predicates.insert(
            id.to_owned(),
            PredicateEntry {
                version: version.to_owned(),
                func: Arc::new(f),
            },
        );
    }

    pub fn map_entry(&self, id: &str) -> Option<&MapEntry> {
        self.maps.get(id)
    }

    pub fn predicate_entry(&self, id: &str) -> Option<&PredicateEntry> {
        self.predicates.get(id)
    }

    pub fn map_ids(&self) -> Vec<&str> {
        let mut v: Vec<_> = self.maps.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    pub fn predicate_ids(&self) -> Vec<&str> {
        let mut v: Vec<_> = self.predicates.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    /// Output schema of map `id` applied to `input`.
    pub fn output_schema(&self, id: &str, input: &Schema, params: &Json) -> Result<Schema, String> {
        let e = self.maps.get(id).ok_or_else(|| format!("unknown transform {id:?}"))?;
        match &e.output_schema {
            Some(f) => f(input, params),
            None => Ok(input.clone()),
        }
    }

    /// Total user-function calls made through this registry.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    pub(crate) fn call_map(&self, e: &MapEntry, ctx: &FnContext<'_>, rows: Vec<Row>) -> Result<Vec<Row>, String> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        (e.func)(ctx, rows)
    }

    pub(crate) fn call_predicate(
        &self,
        e: &PredicateEntry,
        ctx: &FnContext<'_>,
        rows: &[Row],
    ) -> Result<Vec<bool>, String> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let keep = (e.func)(ctx, rows)?;
        if keep.len() != rows.len() {
            return Err(format!(
                "predicate returned {} flags for {} rows",
                keep.len(),
                rows.len()
            ));
        }
        Ok(keep)
    }
}

fn add_column(
    s: &Schema,
    p: &Json,
    key: &str,
    default_suffix: Option<&str>,
    ty: FeatureType,
) -> Result<Schema, String> {
    let name = match (p.get(key).and_then(Json::as_str), default_suffix) {
        (Some(n), _) => n.to_owned(),
        (None, Some(sfx)) => {
            let col = p
                .get("column")
                .and_then(Json::as_str)
                .ok_or("missing string parameter \"column\"")?;
            format!("{col}{sfx}")
        }
        (None, None) => return Err(format!("missing string parameter {key:?}")),
    };
    let mut cols = s.columns().to_vec();
    cols.push(Column::new(name, ty).nullable());
    Schema::new(cols).map_err(|e| e.to_string())
}

fn value_length(v: &Value) -> Result<Option<u64>, String> {
    Ok(match v {
        Value::Null => None,
        Value::Text(s) => Some(s.chars().count() as u64),
        Value::Bytes(b) => Some(b.len() as u64),
        Value::List(l) => Some(l.len() as u64),
        other => return Err(format!("length undefined for {other:?}")),
    })
}

fn lowercase(ctx: &FnContext<'_>, mut rows: Vec<Row>) -> Result<Vec<Row>, String> {
    let c = ctx.column_index("column")?;
    for r in &mut rows {
        match &mut r[c] {
            Value::Text(s) => *s = s.to_lowercase(),
            Value::Null => {}
            other => return Err(format!("lowercase expects a string, got {other:?}")),
        }
    }
    Ok(rows)
}

fn concat_fields(ctx: &FnContext<'_>, mut rows: Vec<Row>) -> Result<Vec<Row>, String> {
    let cols = ctx
        .params
        .get("columns")
        .and_then(Json::as_array)
        .ok_or("missing array parameter \"columns\"")?
        .iter()
        .map(|v| {
            let n = v.as_str().ok_or("column names must be strings")?;
            ctx.schema.index_of(n).ok_or_else(|| format!("unknown column {n:?}"))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let sep = ctx.params.get("separator").and_then(Json::as_str).unwrap_or(" ");
    for r in &mut rows {
        let mut parts = Vec::with_capacity(cols.len());
        for &c in &cols {
            match &r[c] {
                Value::Text(s) => parts.push(s.clone()),
                Value::Null => {}
                other => return Err(format!("concat_fields expects strings, got {other:?}")),
            }
        }
        r.push(Value::Text(parts.join(sep)));
    }
    Ok(rows)
}

fn whitespace_tokenize(ctx: &FnContext<'_>, mut rows: Vec<Row>) -> Result<Vec<Row>, String> {
    let c = ctx.column_index("column")?;
    for r in &mut rows {
        let v = match &r[c] {
            Value::Text(s) => Value::List(s.split_whitespace().map(Value::from).collect()),
            Value::Null => Value::Null,
            other => return Err(format!("whitespace_tokenize expects a string, got {other:?}")),
        };
        r.push(v);
    }
    Ok(rows)
}

fn length(ctx: &FnContext<'_>, mut rows: Vec<Row>) -> Result<Vec<Row>, String> {
    let c = ctx.column_index("column")?;
    for r in &mut rows {
        let n = value_length(&r[c])?;
        r.push(n.map_or(Value::Null, |n| Value::Int(n as i64)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn schema() -> Schema {
        Schema::new(vec![
            Column::new("a", FeatureType::Utf8String),
            Column::new("b", FeatureType::Utf8String).nullable(),
        ])
        .unwrap()
    }

    fn run(id: &str, params: Json, rows: Vec<Row>) -> (Schema, Vec<Row>) {
        let r = TransformRegistry::with_builtins();
        let s = schema();
        let out = r.output_schema(id, &s, &params).unwrap();
        let ctx = FnContext {
            schema: &s,
            params: &params,
        };
        let rows = r.call_map(r.map_entry(id).unwrap(), &ctx, rows).unwrap();
        for row in &rows {
            out.validate_row(row).unwrap();
        }
        (out, rows)
    }

    #[test]
    fn builtin_maps() {
        let rows = vec![vec![Value::from("Hello  World"), Value::Null]];
        let (_, out) = run("lowercase", json!({"column": "a"}), rows.clone());
        assert_eq!(out[0][0], Value::from("hello  world"));

        let (s, out) = run("whitespace_tokenize", json!({"column": "a"}), rows.clone());
        assert_eq!(s.columns()[2].name, "a_tokens");
        assert_eq!(out[0][2], Value::List(vec!["Hello".into(), "World".into()]));

        let (s, out) = run("length", json!({"column": "a"}), rows.clone());
        assert_eq!(s.columns()[2].name, "a_length");
        assert_eq!(out[0][2], Value::Int(12));

        let rows = vec![vec![Value::from("x"), Value::from("y")]];
        let (_, out) = run(
            "concat_fields",
            json!({"columns": ["a", "b"], "output": "ab", "separator": "-"}),
            rows,
        );
        assert_eq!(out[0][2], Value::from("x-y"));
    }

    #[test]
    fn predicates_and_counter() {
        let r = TransformRegistry::with_builtins();
        let s = schema();
        let p = json!({"column": "b"});
        let ctx = FnContext { schema: &s, params: &p };
        let rows = vec![
            vec![Value::from("x"), Value::from("")],
            vec![Value::from("x"), Value::Null],
            vec![Value::from("x"), Value::from("z")],
        ];
        let keep = r
            .call_predicate(r.predicate_entry("non_empty").unwrap(), &ctx, &rows)
            .unwrap();
        assert_eq!(keep, [false, false, true]);
        assert_eq!(r.invocations(), 1);
    }

    #[test]
    fn bad_params() {
        let r = TransformRegistry::with_builtins();
        let s = schema();
        let p = json!({"column": "nope"});
        let ctx = FnContext { schema: &s, params: &p };
        assert!(r.call_map(r.map_entry("lowercase").unwrap(), &ctx, vec![]).is_err());
    }
}
