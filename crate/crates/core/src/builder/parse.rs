//! Source parsing: CSV (RFC 4180), JSON lines and plain text into rows
//! validated against a schema.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde_json::Value as Json;

use super::{BuildError, FieldAccessor, FormatOptions, SourceFormat};
use crate::schema::{class_label_str2int, FeatureType, Row, Schema, TensorDtype, Value};

/// Converts one raw record into a typed row.
enum Access {
    CsvIndex(usize),
    Pointer(String),
    Line,
}

/// Iterator over validated rows parsed from a reader.
pub struct RowParser {
    schema: Schema,
    access: Vec<Access>,
    kind: ParserKind,
    failed: bool,
}

enum ParserKind {
    Csv(csv::StringRecordsIntoIter<Box<dyn BufRead + Send>>),
    Lines {
        reader: Box<dyn BufRead + Send>,
        line: usize,
        json: bool,
        buf: String,
    },
}

/// Starts parsing `reader` in the given format. Column accessors are
/// resolved up front (CSV header names need the header row).
pub fn parse_source(
    format: SourceFormat,
    options: &FormatOptions,
    field_map: &BTreeMap<String, FieldAccessor>,
    schema: &Schema,
    reader: Box<dyn BufRead + Send>,
) -> Result<RowParser, BuildError> {
    let missing = |name: &str| BuildError::InvalidDef(format!("no field_map entry for column {name:?}"));
    match format {
        SourceFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(options.has_header)
                .delimiter(options.delimiter_byte()?)
                .from_reader(reader);
            let headers = if options.has_header {
                Some(rdr.headers().map_err(csv_error)?.clone())
            } else {
                None
            };
            let access = schema
                .columns()
                .iter()
                .map(|c| match field_map.get(&c.name) {
                    Some(FieldAccessor::Index(i)) => Ok(Access::CsvIndex(*i)),
                    Some(FieldAccessor::Name(n)) => headers
                        .as_ref()
                        .and_then(|h| h.iter().position(|x| x == n))
                        .map(Access::CsvIndex)
                        .ok_or_else(|| BuildError::InvalidDef(format!("csv header has no column {n:?}"))),
                    None => Err(missing(&c.name)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(RowParser {
                schema: schema.clone(),
                access,
                kind: ParserKind::Csv(rdr.into_records()),
                failed: false,
            })
        }
        SourceFormat::Jsonl | SourceFormat::Text => {
            let json = format == SourceFormat::Jsonl;
            let access = schema
                .columns()
                .iter()
                .map(|c| match (field_map.get(&c.name), json) {
                    (Some(FieldAccessor::Name(p)), true) => Ok(Access::Pointer(json_pointer(p))),
                    (Some(FieldAccessor::Name(l)), false) if l == "line" => Ok(Access::Line),
                    (Some(other), _) => Err(BuildError::InvalidDef(format!(
                        "accessor {other:?} not valid for {format:?} column {:?}",
                        c.name
                    ))),
                    (None, _) => Err(missing(&c.name)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(RowParser {
                schema: schema.clone(),
                access,
                kind: ParserKind::Lines {
                    reader,
                    line: 0,
                    json,
                    buf: String::new(),
                },
                failed: false,
            })
        }
    }
}

/// Accepts either a JSON pointer (`/a/b`) or a bare top-level key.
fn json_pointer(p: &str) -> String {
    if p.is_empty() || p.starts_with('/') {
        p.to_owned()
    } else {
        format!("/{}", p.replace('~', "~0").replace('/', "~1"))
    }
}

fn csv_error(e: csv::Error) -> BuildError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    BuildError::Parse {
        line,
        message: e.to_string(),
    }
}

impl RowParser {
    fn next_row(&mut self) -> Option<Result<Row, BuildError>> {
        match &mut self.kind {
            ParserKind::Csv(records) => {
                let rec = match records.next()? {
                    Ok(r) => r,
                    Err(e) => return Some(Err(csv_error(e))),
                };
                let line = rec.position().map_or(0, |p| p.line() as usize);
                let row = self
                    .schema
                    .columns()
                    .iter()
                    .zip(&self.access)
                    .map(|(col, acc)| {
                        let Access::CsvIndex(i) = acc else { unreachable!() };
                        let cell = rec.get(*i).ok_or_else(|| BuildError::Parse {
                            line,
                            message: format!("record has no field {i}"),
                        })?;
                        value_from_text(&col.ty, cell, col.nullable).map_err(|reason| BuildError::Type {
                            line,
                            path: col.name.clone(),
                            reason,
                        })
                    })
                    .collect::<Result<Row, _>>();
                Some(row.and_then(|r| check(&self.schema, r, line)))
            }
            ParserKind::Lines {
                reader,
                line,
                json,
                buf,
            } => loop {
                buf.clear();
                *line += 1;
                match reader.read_line(buf) {
                    Ok(0) => return None,
                    Ok(_) => {}
                    Err(e) => {
                        return Some(Err(BuildError::Parse {
                            line: *line,
                            message: e.to_string(),
                        }))
                    }
                }
                let text = buf.strip_suffix('\n').unwrap_or(buf);
                let text = text.strip_suffix('\r').unwrap_or(text);
                if !*json {
                    let row = vec![Value::Text(text.to_owned()); self.access.len()];
                    return Some(check(&self.schema, row, *line));
                }
                if text.trim().is_empty() {
                    continue;
                }
                let lineno = *line;
                let doc: Json = match serde_json::from_str(text) {
                    Ok(d) => d,
                    Err(e) => {
                        return Some(Err(BuildError::Parse {
                            line: lineno,
                            message: e.to_string(),
                        }))
                    }
                };
                let row = self
                    .schema
                    .columns()
                    .iter()
                    .zip(&self.access)
                    .map(|(col, acc)| {
                        let Access::Pointer(p) = acc else { unreachable!() };
                        let v = doc.pointer(p).unwrap_or(&Json::Null);
                        value_from_json(&col.ty, v, col.nullable).map_err(|reason| BuildError::Type {
                            line: lineno,
                            path: col.name.clone(),
                            reason,
                        })
                    })
                    .collect::<Result<Row, _>>();
                return Some(row.and_then(|r| check(&self.schema, r, lineno)));
            },
        }
    }
}

fn check(schema: &Schema, row: Row, line: usize) -> Result<Row, BuildError> {
    match schema.validate_row(&row) {
        Ok(()) => Ok(row),
        Err(crate::schema::SchemaError::Type { path, reason }) => Err(BuildError::Type { line, path, reason }),
        Err(e) => Err(BuildError::Type {
            line,
            path: String::new(),
            reason: e.to_string(),
        }),
    }
}

impl Iterator for RowParser {
    type Item = Result<Row, BuildError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_row();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Converts a CSV cell. Scalars parse from text; nested types are read as
/// embedded JSON. An empty cell is null for nullable non-string columns.
pub fn value_from_text(ty: &FeatureType, cell: &str, nullable: bool) -> Result<Value, String> {
    if cell.is_empty() && nullable && !matches!(ty, FeatureType::Utf8String | FeatureType::Binary) {
        return Ok(Value::Null);
    }
    match ty {
        FeatureType::Int64 => cell
            .trim()
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| format!("{cell:?} is not an integer")),
        FeatureType::Float64 => cell
            .trim()
            .parse::<f64>()
            .map(Value::Float)
            .map_err(|_| format!("{cell:?} is not a number")),
        FeatureType::Bool => match cell.trim().to_ascii_lowercase().as_str() {
            "true" | "1" => Ok(Value::Bool(true)),
            "false" | "0" => Ok(Value::Bool(false)),
            _ => Err(format!("{cell:?} is not a boolean")),
        },
        FeatureType::Utf8String => Ok(Value::Text(cell.to_owned())),
        FeatureType::Binary => Ok(Value::Bytes(cell.as_bytes().to_vec())),
        FeatureType::ClassLabel { .. } => match cell.trim().parse::<i64>() {
            Ok(code) => Ok(Value::Int(code)),
            Err(_) => class_label_str2int(ty, cell).map(Value::Int).map_err(|e| e.to_string()),
        },
        _ => {
            let doc: Json = serde_json::from_str(cell).map_err(|e| format!("embedded JSON: {e}"))?;
            value_from_json(ty, &doc, nullable)
        }
    }
}

/// Converts a JSON document into a value of the given type, applying the
/// coercions sources need: label strings to codes, nested tensors flattened,
/// float32 elements rounded to single precision.
pub fn value_from_json(ty: &FeatureType, v: &Json, nullable: bool) -> Result<Value, String> {
    if v.is_null() {
        return if nullable {
            Ok(Value::Null)
        } else {
            Err("missing or null value".into())
        };
    }
    convert(ty, v, 0)
}

fn convert(ty: &FeatureType, v: &Json, depth: usize) -> Result<Value, String> {
    if depth > crate::schema::MAX_DEPTH {
        return Err("value nested too deeply".into());
    }
    let kind = || format!("expected {}, found {v}", ty.tag());
    Ok(match ty {
        FeatureType::Int64 => Value::Int(v.as_i64().ok_or_else(kind)?),
        FeatureType::Float64 => Value::Float(v.as_f64().ok_or_else(kind)?),
        FeatureType::Bool => Value::Bool(v.as_bool().ok_or_else(kind)?),
        FeatureType::Utf8String => Value::Text(v.as_str().ok_or_else(kind)?.to_owned()),
        FeatureType::Binary => match v {
            Json::String(s) => Value::Bytes(s.as_bytes().to_vec()),
            Json::Array(items) => Value::Bytes(
                items
                    .iter()
                    .map(|b| b.as_u64().filter(|&x| x < 256).map(|x| x as u8))
                    .collect::<Option<Vec<u8>>>()
                    .ok_or_else(kind)?,
            ),
            _ => return Err(kind()),
        },
        FeatureType::ClassLabel { .. } => match v {
            Json::String(s) => Value::Int(class_label_str2int(ty, s).map_err(|e| e.to_string())?),
            _ => Value::Int(v.as_i64().ok_or_else(kind)?),
        },
        FeatureType::Sequence { inner, .. } => Value::List(
            v.as_array()
                .ok_or_else(kind)?
                .iter()
                .map(|x| convert(inner, x, depth + 1))
                .collect::<Result<_, _>>()?,
        ),
        FeatureType::Translation { .. } => Value::Map(
            v.as_object()
                .ok_or_else(kind)?
                .iter()
                .map(|(k, x)| Ok((k.clone(), Value::Text(x.as_str().ok_or_else(kind)?.to_owned()))))
                .collect::<Result<_, String>>()?,
        ),
        FeatureType::Tensor { dtype, .. } => {
            let mut flat = Vec::new();
            flatten(v, *dtype, &mut flat, 0)?;
            Value::List(flat)
        }
        FeatureType::Record { fields } => {
            let obj = v.as_object().ok_or_else(kind)?;
            let mut m = BTreeMap::new();
            for (name, fty) in fields {
                let fv = obj.get(name).ok_or_else(|| format!("missing field {name:?}"))?;
                m.insert(name.clone(), convert(fty, fv, depth + 1)?);
            }
            Value::Map(m)
        }
    })
}

fn flatten(v: &Json, dtype: TensorDtype, out: &mut Vec<Value>, depth: usize) -> Result<(), String> {
    if depth > crate::schema::MAX_DEPTH {
        return Err("tensor nested too deeply".into());
    }
    match v {
        Json::Array(items) => {
            for x in items {
                flatten(x, dtype, out, depth + 1)?;
            }
            Ok(())
        }
        Json::Number(n) => {
            out.push(match dtype {
                TensorDtype::Int64 => Value::Int(n.as_i64().ok_or("tensor element is not an integer")?),
                TensorDtype::Float64 => Value::Float(n.as_f64().ok_or("bad number")?),
                TensorDtype::Float32 => Value::Float(n.as_f64().ok_or("bad number")? as f32 as f64),
            });
            Ok(())
        }
        other => Err(format!("tensor element {other} is not a number")),
    }
}
