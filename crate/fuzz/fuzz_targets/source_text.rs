#![no_main]

use std::collections::BTreeMap;

use dataforge::builder::{parse_source, FieldAccessor, FormatOptions, SourceFormat};
use dataforge::{Column, FeatureType, Schema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = Schema::new(vec![Column::new("line", FeatureType::Utf8String)]).unwrap();
    let fields: BTreeMap<String, FieldAccessor> = [("line", "line")]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), FieldAccessor::Name(v.to_owned())))
        .collect();
    let reader = Box::new(std::io::Cursor::new(data.to_vec()));
    let Ok(rows) = parse_source(SourceFormat::Text, &FormatOptions::default(), &fields, &schema, reader) else {
        return;
    };
    for row in rows {
        match row {
            Ok(r) => schema.validate_row(&r).expect("parsed rows match the schema"),
            Err(_) => break,
        }
    }
});
