//! Feature type system: column types, schemas, dynamically tagged values and
//! the validation rules every other module relies on.
//!
//! A [`Schema`] is an ordered list of typed, optionally nullable columns. A
//! [`Row`] is a `Vec<Value>` aligned with the schema's columns. Values are
//! checked against a [`FeatureType`] with [`validate_value`]; anything that
//! validates can be stored and read back bit-for-bit by the store.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use crate::canonical::canonical_json;

/// Maximum nesting depth of a feature type.
pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("invalid feature type at {path}: {reason}")]
    InvalidType { path: String, reason: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("type error at {path}: {reason}")]
    Type { path: String, reason: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label code {0} out of range")]
    CodeOutOfRange(i64),
    #[error("not a class label type")]
    NotClassLabel,
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown type tag {0:?}")]
    UnknownTypeTag(String),
}

impl SchemaError {
    fn type_error(path: &Path<'_>, reason: impl Into<String>) -> Self {
        SchemaError::Type {
            path: path.render(),
            reason: reason.into(),
        }
    }

    fn invalid(path: &Path<'_>, reason: impl Into<String>) -> Self {
        SchemaError::InvalidType {
            path: path.render(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorDtype {
    Int64,
    Float32,
    Float64,
}

impl TensorDtype {
    pub fn as_str(self) -> &'static str {
        match self {
            TensorDtype::Int64 => "int64",
            TensorDtype::Float32 => "float32",
            TensorDtype::Float64 => "float64",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "int64" => Some(TensorDtype::Int64),
            "float32" => Some(TensorDtype::Float32),
            "float64" => Some(TensorDtype::Float64),
            _ => None,
        }
    }

    /// Width of one element in bytes.
    pub fn width(self) -> usize {
        match self {
            TensorDtype::Float32 => 4,
            TensorDtype::Int64 | TensorDtype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureType {
    Int64,
    Float64,
    Bool,
    Utf8String,
    Binary,
    ClassLabel {
        names: Vec<String>,
    },
    Sequence {
        inner: Box<FeatureType>,
        fixed_length: Option<u64>,
    },
    Translation {
        languages: Vec<String>,
    },
    Tensor {
        dtype: TensorDtype,
        shape: Vec<u64>,
    },
    Record {
        fields: Vec<(String, FeatureType)>,
    },
}

impl FeatureType {
    pub fn class_label<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        FeatureType::ClassLabel {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn sequence(inner: FeatureType) -> Self {
        FeatureType::Sequence {
            inner: Box::new(inner),
            fixed_length: None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FeatureType::Int64 => "int64",
            FeatureType::Float64 => "float64",
            FeatureType::Bool => "bool",
            FeatureType::Utf8String => "string",
            FeatureType::Binary => "binary",
            FeatureType::ClassLabel { .. } => "class_label",
            FeatureType::Sequence { .. } => "sequence",
            FeatureType::Translation { .. } => "translation",
            FeatureType::Tensor { .. } => "tensor",
            FeatureType::Record { .. } => "record",
        }
    }

    /// Checks the structural invariants of the type (label uniqueness,
    /// sorted translation languages, positive tensor dims, unique record
    /// field names, bounded depth).
    pub fn check(&self) -> Result<(), SchemaError> {
        self.check_at(&Path::Root, 1)
    }

    fn check_at(&self, path: &Path<'_>, depth: usize) -> Result<(), SchemaError> {
        if depth > MAX_DEPTH {
            return Err(SchemaError::invalid(path, "nesting deeper than 32"));
        }
        match self {
            FeatureType::ClassLabel { names } => {
                if names.is_empty() {
                    return Err(SchemaError::invalid(path, "class label needs at least one name"));
                }
                let mut seen = std::collections::BTreeSet::new();
                for n in names {
                    if n.is_empty() {
                        return Err(SchemaError::invalid(path, "empty class label name"));
                    }
                    if !seen.insert(n.as_str()) {
                        return Err(SchemaError::invalid(path, format!("duplicate label {n:?}")));
                    }
                }
            }
            FeatureType::Translation { languages } => {
                if languages.is_empty() {
                    return Err(SchemaError::invalid(path, "translation needs at least one language"));
                }
                for l in languages {
                    if l.is_empty() || l.chars().any(|c| c.is_uppercase()) {
                        return Err(SchemaError::invalid(
                            path,
                            format!("language code {l:?} must be non-empty lowercase"),
                        ));
                    }
                }
                if languages.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(SchemaError::invalid(path, "languages must be unique and sorted"));
                }
            }
            FeatureType::Tensor { shape, .. } => {
                if shape.is_empty() {
                    return Err(SchemaError::invalid(path, "tensor needs at least one dimension"));
                }
                if shape.iter().any(|&d| d == 0) {
                    return Err(SchemaError::invalid(path, "tensor dimensions must be >= 1"));
                }
                if tensor_len(shape).is_none() {
                    return Err(SchemaError::invalid(path, "tensor too large"));
                }
            }
            FeatureType::Sequence { inner, .. } => {
                inner.check_at(&Path::Index(path, 0), depth + 1)?;
            }
            FeatureType::Record { fields } => {
                let mut seen = std::collections::BTreeSet::new();
                for (name, ty) in fields {
                    if name.is_empty() {
                        return Err(SchemaError::invalid(path, "empty record field name"));
                    }
                    if !seen.insert(name.as_str()) {
                        return Err(SchemaError::invalid(path, format!("duplicate field {name:?}")));
                    }
                    ty.check_at(&Path::Field(path, name), depth + 1)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether values of this type have a total order usable for sorting.
    pub fn is_orderable(&self) -> bool {
        matches!(
            self,
            FeatureType::Int64
                | FeatureType::Float64
                | FeatureType::Bool
                | FeatureType::Utf8String
                | FeatureType::ClassLabel { .. }
        )
    }

    pub fn to_json(&self) -> Json {
        let mut m = Map::new();
        m.insert("tag".into(), json!(self.tag()));
        match self {
            FeatureType::ClassLabel { names } => {
                m.insert("names".into(), json!(names));
            }
            FeatureType::Sequence { inner, fixed_length } => {
                m.insert("inner".into(), inner.to_json());
                if let Some(n) = fixed_length {
                    m.insert("length".into(), json!(n));
                }
            }
            FeatureType::Translation { languages } => {
                m.insert("languages".into(), json!(languages));
            }
            FeatureType::Tensor { dtype, shape } => {
                m.insert("dtype".into(), json!(dtype.as_str()));
                m.insert("shape".into(), json!(shape));
            }
            FeatureType::Record { fields } => {
                let fs: Vec<Json> = fields
                    .iter()
                    .map(|(n, t)| json!({"name": n, "type": t.to_json()}))
                    .collect();
                m.insert("fields".into(), Json::Array(fs));
            }
            _ => {}
        }
        Json::Object(m)
    }

    pub fn from_json(v: &Json) -> Result<Self, SchemaError> {
        Self::from_json_at(v, 1)
    }

    fn from_json_at(v: &Json, depth: usize) -> Result<Self, SchemaError> {
        if depth > MAX_DEPTH {
            return Err(SchemaError::InvalidSchema("type nesting deeper than 32".into()));
        }
        let obj = v
            .as_object()
            .ok_or_else(|| SchemaError::InvalidSchema("type must be an object".into()))?;
        let tag = obj
            .get("tag")
            .and_then(Json::as_str)
            .ok_or_else(|| SchemaError::InvalidSchema("type without string \"tag\"".into()))?;
        let strings = |key: &str| -> Result<Vec<String>, SchemaError> {
            obj.get(key)
                .and_then(Json::as_array)
                .ok_or_else(|| SchemaError::InvalidSchema(format!("{tag}: missing array {key:?}")))?
                .iter()
                .map(|x| {
                    x.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| SchemaError::InvalidSchema(format!("{tag}: {key} must hold strings")))
                })
                .collect()
        };
        let ty = match tag {
            "int64" => FeatureType::Int64,
            "float64" => FeatureType::Float64,
            "bool" => FeatureType::Bool,
            "string" => FeatureType::Utf8String,
            "binary" => FeatureType::Binary,
            "class_label" => FeatureType::ClassLabel {
                names: strings("names")?,
            },
            "translation" => FeatureType::Translation {
                languages: strings("languages")?,
            },
            "sequence" => {
                let inner = obj
                    .get("inner")
                    .ok_or_else(|| SchemaError::InvalidSchema("sequence: missing \"inner\"".into()))?;
                let fixed_length = match obj.get("length") {
                    None | Some(Json::Null) => None,
                    Some(n) => Some(n.as_u64().ok_or_else(|| {
                        SchemaError::InvalidSchema("sequence: length must be a non-negative integer".into())
                    })?),
                };
                FeatureType::Sequence {
                    inner: Box::new(Self::from_json_at(inner, depth + 1)?),
                    fixed_length,
                }
            }
            "tensor" => {
                let dname = obj
                    .get("dtype")
                    .and_then(Json::as_str)
                    .ok_or_else(|| SchemaError::InvalidSchema("tensor: missing \"dtype\"".into()))?;
                let dtype =
                    TensorDtype::from_name(dname).ok_or_else(|| SchemaError::UnknownTypeTag(dname.to_owned()))?;
                let shape = obj
                    .get("shape")
                    .and_then(Json::as_array)
                    .ok_or_else(|| SchemaError::InvalidSchema("tensor: missing \"shape\"".into()))?
                    .iter()
                    .map(|d| {
                        d.as_u64()
                            .ok_or_else(|| SchemaError::InvalidSchema("tensor: bad dimension".into()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                FeatureType::Tensor { dtype, shape }
            }
            "record" => {
                let fields = obj
                    .get("fields")
                    .and_then(Json::as_array)
                    .ok_or_else(|| SchemaError::InvalidSchema("record: missing \"fields\"".into()))?
                    .iter()
                    .map(|f| {
                        let name = f
                            .get("name")
                            .and_then(Json::as_str)
                            .ok_or_else(|| SchemaError::InvalidSchema("record field without name".into()))?;
                        let ty = f
                            .get("type")
                            .ok_or_else(|| SchemaError::InvalidSchema("record field without type".into()))?;
                        Ok((name.to_owned(), Self::from_json_at(ty, depth + 1)?))
                    })
                    .collect::<Result<Vec<_>, SchemaError>>()?;
                FeatureType::Record { fields }
            }
            other => return Err(SchemaError::UnknownTypeTag(other.to_owned())),
        };
        Ok(ty)
    }
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_json(&self.to_json()))
    }
}

pub(crate) fn tensor_len(shape: &[u64]) -> Option<u64> {
    shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= u32::MAX as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Column {
    pub name: String,
    pub ty: FeatureType,
    pub nullable: bool,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: FeatureType) -> Self {
        Column {
            name: name.into(),
            ty,
            nullable: false,
        }
    }

    pub fn nullable(mut self) -> Self {
        self.nullable = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schema {
    columns: Vec<Column>,
}

fn valid_column_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self, SchemaError> {
        if columns.is_empty() {
            return Err(SchemaError::InvalidSchema("schema needs at least one column".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &columns {
            if !valid_column_name(&c.name) {
                return Err(SchemaError::InvalidSchema(format!("invalid column name {:?}", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(SchemaError::InvalidSchema(format!("duplicate column {:?}", c.name)));
            }
            c.ty.check_at(&Path::Field(&Path::Root, &c.name), 1)?;
        }
        Ok(Schema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Validates a full row against the schema.
    pub fn validate_row(&self, row: &[Value]) -> Result<(), SchemaError> {
        if row.len() != self.columns.len() {
            return Err(SchemaError::Type {
                path: "<row>".into(),
                reason: format!("expected {} values, got {}", self.columns.len(), row.len()),
            });
        }
        for (c, v) in self.columns.iter().zip(row) {
            let path = Path::Field(&Path::Root, &c.name);
            if v.is_null() {
                if !c.nullable {
                    return Err(SchemaError::type_error(&path, "null in non-nullable column"));
                }
                continue;
            }
            validate_at(&c.ty, v, &path)?;
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> Json {
        let cols: Vec<Json> = self
            .columns
            .iter()
            .map(|c| json!({"name": c.name, "nullable": c.nullable, "type": c.ty.to_json()}))
            .collect();
        json!({ "columns": cols })
    }

    /// Canonical text: sorted keys, no insignificant whitespace.
    pub fn to_json(&self) -> String {
        canonical_json(&self.to_json_value())
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let v: Json = serde_json::from_str(text).map_err(|e| SchemaError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_json_value(&v)
    }

    pub fn from_json_value(v: &Json) -> Result<Self, SchemaError> {
        let cols = v
            .get("columns")
            .and_then(Json::as_array)
            .ok_or_else(|| SchemaError::InvalidSchema("missing \"columns\" array".into()))?;
        let columns = cols
            .iter()
            .map(|c| {
                let name = c
                    .get("name")
                    .and_then(Json::as_str)
                    .ok_or_else(|| SchemaError::InvalidSchema("column without name".into()))?;
                let nullable = match c.get("nullable") {
                    None => false,
                    Some(b) => b
                        .as_bool()
                        .ok_or_else(|| SchemaError::InvalidSchema("nullable must be a bool".into()))?,
                };
                let ty = c
                    .get("type")
                    .ok_or_else(|| SchemaError::InvalidSchema(format!("column {name:?} without type")))?;
                Ok(Column {
                    name: name.to_owned(),
                    ty: FeatureType::from_json(ty)?,
                    nullable,
                })
            })
            .collect::<Result<Vec<_>, SchemaError>>()?;
        Schema::new(columns)
    }
}

impl serde::Serialize for Schema {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json_value().serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Json::deserialize(d)?;
        Schema::from_json_value(&v).map_err(serde::de::Error::custom)
    }
}

/// A dynamically tagged value. Interpretation depends on the feature type it
/// is validated against.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

/// One row, aligned with the columns of its schema.
pub type Row = Vec<Value>;

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Null, Null) => true,
            (Int(a), Int(b)) => a == b,
            // bitwise so that stored NaNs compare equal to themselves
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Bool(a), Bool(b)) => a == b,
            (Text(a), Text(b)) => a == b,
            (Bytes(a), Bytes(b)) => a == b,
            (List(a), List(b)) => a == b,
            (Map(a), Map(b)) => a == b,
            _ => false,
        }
    }
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Int(_) => "integer",
            Value::Float(_) => "float",
            Value::Bool(_) => "bool",
            Value::Text(_) => "text",
            Value::Bytes(_) => "bytes",
            Value::List(_) => "list",
            Value::Map(_) => "map",
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

/// Path to a leaf inside a nested value, rendered like `answers.text[3]`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Path<'a> {
    Root,
    Field(&'a Path<'a>, &'a str),
    Index(&'a Path<'a>, usize),
}

impl Path<'_> {
    pub(crate) fn render(&self) -> String {
        match self {
            Path::Root => "<root>".to_owned(),
            _ => {
                let mut s = String::new();
                self.write(&mut s);
                s
            }
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            Path::Root => {}
            Path::Field(parent, name) => {
                parent.write(out);
                if !out.is_empty() {
                    out.push('.');
                }
                out.push_str(name);
            }
            Path::Index(parent, i) => {
                parent.write(out);
                out.push_str(&format!("[{i}]"));
            }
        }
    }
}

/// Checks that `v` is well-typed against `t`. Null is rejected here; column
/// nullability is handled by [`Schema::validate_row`].
pub fn validate_value(t: &FeatureType, v: &Value) -> Result<(), SchemaError> {
    validate_at(t, v, &Path::Root)
}

fn validate_at(t: &FeatureType, v: &Value, path: &Path<'_>) -> Result<(), SchemaError> {
    let mismatch = || SchemaError::type_error(path, format!("expected {}, found {}", t.tag(), v.kind()));
    match (t, v) {
        (FeatureType::Int64, Value::Int(_)) => Ok(()),
        (FeatureType::Float64, Value::Float(_)) => Ok(()),
        (FeatureType::Bool, Value::Bool(_)) => Ok(()),
        (FeatureType::Utf8String, Value::Text(_)) => Ok(()),
        (FeatureType::Binary, Value::Bytes(_)) => Ok(()),
        (FeatureType::ClassLabel { names }, Value::Int(code)) => {
            if *code >= 0 && (*code as u64) < names.len() as u64 {
                Ok(())
            } else {
                Err(SchemaError::type_error(
                    path,
                    format!("label code {code} outside [0, {})", names.len()),
                ))
            }
        }
        (FeatureType::Sequence { inner, fixed_length }, Value::List(items)) => {
            if let Some(n) = fixed_length {
                if items.len() as u64 != *n {
                    return Err(SchemaError::type_error(
                        path,
                        format!("expected {n} elements, found {}", items.len()),
                    ));
                }
            }
            for (i, item) in items.iter().enumerate() {
                validate_at(inner, item, &Path::Index(path, i))?;
            }
            Ok(())
        }
        (FeatureType::Translation { languages }, Value::Map(m)) => {
            if m.len() != languages.len() || !languages.iter().all(|l| m.contains_key(l)) {
                return Err(SchemaError::type_error(
                    path,
                    format!("translation keys must be exactly {languages:?}"),
                ));
            }
            for (k, text) in m {
                if !matches!(text, Value::Text(_)) {
                    return Err(SchemaError::type_error(
                        &Path::Field(path, k),
                        "translation value must be text",
                    ));
                }
            }
            Ok(())
        }
        (FeatureType::Tensor { dtype, shape }, Value::List(items)) => {
            let expect = tensor_len(shape).unwrap_or(u64::MAX);
            if items.len() as u64 != expect {
                return Err(SchemaError::type_error(
                    path,
                    format!("tensor expects {expect} elements, found {}", items.len()),
                ));
            }
            for (i, item) in items.iter().enumerate() {
                let ok = match (dtype, item) {
                    (TensorDtype::Int64, Value::Int(_)) => true,
                    (TensorDtype::Float64, Value::Float(_)) => true,
                    // float32 payloads must survive narrowing unchanged
                    (TensorDtype::Float32, Value::Float(f)) => f.is_nan() || (*f as f32) as f64 == *f,
                    _ => false,
                };
                if !ok {
                    return Err(SchemaError::type_error(
                        &Path::Index(path, i),
                        format!("not a valid {} element", dtype.as_str()),
                    ));
                }
            }
            Ok(())
        }
        (FeatureType::Record { fields }, Value::Map(m)) => {
            if m.len() != fields.len() {
                if let Some(extra) = m.keys().find(|k| !fields.iter().any(|(n, _)| n == *k)) {
                    return Err(SchemaError::type_error(&Path::Field(path, extra), "unexpected field"));
                }
            }
            for (name, ty) in fields {
                let fpath = Path::Field(path, name);
                match m.get(name) {
                    Some(fv) => validate_at(ty, fv, &fpath)?,
                    None => return Err(SchemaError::type_error(&fpath, "missing field")),
                }
            }
            Ok(())
        }
        _ => Err(mismatch()),
    }
}

/// Index of `name` among the labels of a `ClassLabel` type.
pub fn class_label_str2int(t: &FeatureType, name: &str) -> Result<i64, SchemaError> {
    match t {
        FeatureType::ClassLabel { names } => names
            .iter()
            .position(|n| n == name)
            .map(|i| i as i64)
            .ok_or_else(|| SchemaError::UnknownLabel(name.to_owned())),
        _ => Err(SchemaError::NotClassLabel),
    }
}

pub fn class_label_int2str(t: &FeatureType, code: i64) -> Result<&str, SchemaError> {
    match t {
        FeatureType::ClassLabel { names } => usize::try_from(code)
            .ok()
            .and_then(|i| names.get(i))
            .map(String::as_str)
            .ok_or(SchemaError::CodeOutOfRange(code)),
        _ => Err(SchemaError::NotClassLabel),
    }
}

/// Renders a value as display JSON: class labels become `{"code","label"}`,
/// tensors nested lists following the shape, binary as lowercase hex, and
/// non-finite floats as the strings `NaN`, `inf`, `-inf`.
pub fn render_value(t: &FeatureType, v: &Value) -> Json {
    match (t, v) {
        (_, Value::Null) => Json::Null,
        (FeatureType::ClassLabel { names }, Value::Int(code)) => {
            let label = usize::try_from(*code).ok().and_then(|i| names.get(i));
            json!({"code": code, "label": label})
        }
        (FeatureType::Tensor { shape, .. }, Value::List(items)) => {
            let flat: Vec<Json> = items.iter().map(render_scalar).collect();
            nest(&flat, shape)
        }
        (FeatureType::Sequence { inner, .. }, Value::List(items)) => {
            Json::Array(items.iter().map(|x| render_value(inner, x)).collect())
        }
        (FeatureType::Record { fields }, Value::Map(m)) => {
            let mut out = Map::new();
            for (name, ty) in fields {
                if let Some(fv) = m.get(name) {
                    out.insert(name.clone(), render_value(ty, fv));
                }
            }
            Json::Object(out)
        }
        _ => render_scalar(v),
    }
}

fn render_scalar(v: &Value) -> Json {
    match v {
        Value::Null => Json::Null,
        Value::Int(i) => json!(i),
        Value::Float(f) if f.is_finite() => json!(f),
        Value::Float(f) if f.is_nan() => json!("NaN"),
        Value::Float(f) if *f > 0.0 => json!("inf"),
        Value::Float(_) => json!("-inf"),
        Value::Bool(b) => json!(b),
        Value::Text(s) => json!(s),
        Value::Bytes(b) => json!(hex::encode(b)),
        Value::List(items) => Json::Array(items.iter().map(render_scalar).collect()),
        Value::Map(m) => Json::Object(m.iter().map(|(k, x)| (k.clone(), render_scalar(x))).collect()),
    }
}

fn nest(flat: &[Json], shape: &[u64]) -> Json {
    match shape {
        [] | [_] => Json::Array(flat.to_vec()),
        [_, rest @ ..] => {
            let step = rest.iter().product::<u64>() as usize;
            if step == 0 {
                return Json::Array(vec![]);
            }
            Json::Array(flat.chunks(step).map(|c| nest(c, rest)).collect())
        }
    }
}

/// Renders a full row as a JSON object keyed by column name.
pub fn render_row(schema: &Schema, row: &[Value]) -> Json {
    let mut out = Map::new();
    for (c, v) in schema.columns().iter().zip(row) {
        out.insert(c.name.clone(), render_value(&c.ty, v));
    }
    Json::Object(out)
}
