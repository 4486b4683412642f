use std::collections::BTreeMap;

use proptest::collection::vec;
use proptest::prelude::*;

use dataforge::schema::{Column, FeatureType, Row, Schema, TensorDtype, Value};

fn leaf_type() -> impl Strategy<Value = FeatureType> {
    prop_oneof![
        Just(FeatureType::Int64),
        Just(FeatureType::Float64),
        Just(FeatureType::Bool),
        Just(FeatureType::Utf8String),
        Just(FeatureType::Binary),
        (1usize..5).prop_map(|n| FeatureType::class_label((0..n).map(|i| format!("c{i}")))),
        proptest::sample::subsequence(vec!["de", "en", "es", "fr"], 1..4).prop_map(|l| FeatureType::Translation {
            languages: l.into_iter().map(String::from).collect(),
        }),
        (
            prop_oneof![
                Just(TensorDtype::Int64),
                Just(TensorDtype::Float32),
                Just(TensorDtype::Float64)
            ],
            vec(1u64..4, 1..3)
        )
            .prop_map(|(dtype, shape)| FeatureType::Tensor { dtype, shape }),
    ]
}

pub fn arb_type() -> impl Strategy<Value = FeatureType> {
    leaf_type().prop_recursive(2, 8, 3, |inner| {
        prop_oneof![
            (inner.clone(), proptest::option::of(0u64..4)).prop_map(|(t, fixed_length)| FeatureType::Sequence {
                inner: Box::new(t),
                fixed_length,
            }),
            vec(inner, 1..4).prop_map(|ts| FeatureType::Record {
                fields: ts.into_iter().enumerate().map(|(i, t)| (format!("f{i}"), t)).collect(),
            }),
        ]
    })
}

fn arb_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => any::<f64>(),
        1 => Just(f64::NAN),
        1 => Just(-0.0),
        1 => Just(f64::INFINITY),
    ]
}

fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![".{0,12}", "[a-z ]{0,20}"]
}

/// A value inhabiting `t` (never null).
pub fn arb_value(t: &FeatureType) -> BoxedStrategy<Value> {
    match t {
        FeatureType::Int64 => any::<i64>().prop_map(Value::Int).boxed(),
        FeatureType::Float64 => arb_f64().prop_map(Value::Float).boxed(),
        FeatureType::Bool => any::<bool>().prop_map(Value::Bool).boxed(),
        FeatureType::Utf8String => arb_text().prop_map(Value::Text).boxed(),
        FeatureType::Binary => vec(any::<u8>(), 0..16).prop_map(Value::Bytes).boxed(),
        FeatureType::ClassLabel { names } => (0..names.len() as i64).prop_map(Value::Int).boxed(),
        FeatureType::Translation { languages } => {
            let langs = languages.clone();
            vec(arb_text(), langs.len())
                .prop_map(move |texts| {
                    Value::Map(langs.iter().cloned().zip(texts.into_iter().map(Value::Text)).collect())
                })
                .boxed()
        }
        FeatureType::Tensor { dtype, shape } => {
            let n = shape.iter().product::<u64>() as usize;
            let elem: BoxedStrategy<Value> = match dtype {
                TensorDtype::Int64 => any::<i64>().prop_map(Value::Int).boxed(),
                TensorDtype::Float64 => arb_f64().prop_map(Value::Float).boxed(),
                TensorDtype::Float32 => any::<f32>()
                    .prop_filter("finite", |f| f.is_finite())
                    .prop_map(|f| Value::Float(f as f64))
                    .boxed(),
            };
            vec(elem, n).prop_map(Value::List).boxed()
        }
        FeatureType::Sequence { inner, fixed_length } => {
            let len = match fixed_length {
                Some(n) => *n as usize..*n as usize + 1,
                None => 0..5,
            };
            vec(arb_value(inner), len).prop_map(Value::List).boxed()
        }
        FeatureType::Record { fields } => {
            let names: Vec<String> = fields.iter().map(|(n, _)| n.clone()).collect();
            let strats: Vec<BoxedStrategy<Value>> = fields.iter().map(|(_, t)| arb_value(t)).collect();
            strats
                .prop_map(move |vals| Value::Map(names.iter().cloned().zip(vals).collect::<BTreeMap<_, _>>()))
                .boxed()
        }
    }
}

pub fn arb_schema() -> impl Strategy<Value = Schema> {
    vec((arb_type(), any::<bool>()), 1..5).prop_map(|cols| {
        Schema::new(
            cols.into_iter()
                .enumerate()
                .map(|(i, (ty, nullable))| {
                    let c = Column::new(format!("col_{i}"), ty);
                    if nullable {
                        c.nullable()
                    } else {
                        c
                    }
                })
                .collect(),
        )
        .expect("generated schema is valid")
    })
}

fn arb_row(schema: &Schema) -> BoxedStrategy<Row> {
    let cells: Vec<BoxedStrategy<Value>> = schema
        .columns()
        .iter()
        .map(|c| {
            if c.nullable {
                prop_oneof![1 => Just(Value::Null), 4 => arb_value(&c.ty)].boxed()
            } else {
                arb_value(&c.ty)
            }
        })
        .collect();
    cells.boxed()
}

/// A schema with up to `max_rows` rows conforming to it.
pub fn arb_table(max_rows: usize) -> impl Strategy<Value = (Schema, Vec<Row>)> {
    arb_schema().prop_flat_map(move |s| {
        let rows = vec(arb_row(&s), 0..max_rows);
        (Just(s), rows)
    })
}
