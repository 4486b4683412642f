mod common;

use proptest::prelude::*;

use dataforge::schema::{Column, FeatureType, Schema, Value};
use dataforge::store::{
    concat_tables, open_table, open_table_verified, write_table_with, StoreError, Table, WriteOptions,
};

use common::gen::arb_table;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn write_open_read_all_round_trips((schema, rows) in arb_table(40), batch_rows in 1usize..9) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dset");
        let written = write_table_with(&schema, &rows, &path, WriteOptions { batch_rows }).unwrap();
        let t = open_table_verified(&path).unwrap();
        prop_assert_eq!(t.schema(), &schema);
        prop_assert_eq!(t.num_rows(), rows.len() as u64);
        prop_assert_eq!(t.fingerprint(), written.fingerprint());
        prop_assert_eq!(t.read_all().unwrap(), rows.clone());

        let bytes = std::fs::read(&path).unwrap();
        prop_assert_eq!(Table::from_bytes(bytes, true).unwrap().read_all().unwrap(), rows);
    }

    #[test]
    fn slices_agree_with_read_all((schema, rows) in arb_table(30), a in 0usize..30, b in 0usize..30) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dset");
        write_table_with(&schema, &rows, &path, WriteOptions { batch_rows: 4 }).unwrap();
        let t = open_table(&path).unwrap();
        let (lo, hi) = (a.min(b).min(rows.len()), a.max(b).min(rows.len()));
        prop_assert_eq!(t.slice(lo as u64, hi as u64).unwrap(), rows[lo..hi].to_vec());
        if hi < rows.len() {
            prop_assert_eq!(t.row(hi as u64).unwrap(), rows[hi].clone());
        }
    }
}

fn sample() -> (Schema, Vec<Vec<Value>>) {
    let schema = Schema::new(vec![
        Column::new("id", FeatureType::Int64),
        Column::new("text", FeatureType::Utf8String).nullable(),
        Column::new("tags", FeatureType::sequence(FeatureType::Utf8String)),
        Column::new("score", FeatureType::Float64),
    ])
    .unwrap();
    let rows = (0..23)
        .map(|i| {
            vec![
                Value::Int(i),
                if i % 5 == 0 {
                    Value::Null
                } else {
                    Value::Text(format!("row {i}"))
                },
                Value::List((0..i % 3).map(|j| Value::Text(format!("t{j}"))).collect()),
                Value::Float(i as f64 / 3.0),
            ]
        })
        .collect();
    (schema, rows)
}

fn sample_bytes() -> Vec<u8> {
    let (schema, rows) = sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dset");
    write_table_with(&schema, &rows, &path, WriteOptions { batch_rows: 7 }).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn every_truncation_is_rejected() {
    let bytes = sample_bytes();
    assert!(Table::from_bytes(bytes.clone(), true).is_ok());
    for len in 0..bytes.len() {
        let r = Table::from_bytes(bytes[..len].to_vec(), false);
        assert!(r.is_err(), "prefix of {len} bytes opened");
    }
}

#[test]
fn every_single_bit_flip_is_detected_on_verified_open() {
    let bytes = sample_bytes();
    for i in 0..bytes.len() {
        for bit in 0..8 {
            let mut b = bytes.clone();
            b[i] ^= 1 << bit;
            assert!(
                Table::from_bytes(b, true).is_err(),
                "flip of bit {bit} at byte {i} went unnoticed"
            );
        }
    }
}

#[test]
fn bad_magic_and_version() {
    let bytes = sample_bytes();
    let mut b = bytes.clone();
    b[0] = b'X';
    assert!(matches!(Table::from_bytes(b, false), Err(StoreError::BadMagic)));
    let mut b = bytes.clone();
    b[6] = 9;
    assert!(matches!(
        Table::from_bytes(b, false),
        Err(StoreError::UnsupportedVersion(9))
    ));
    assert!(matches!(
        Table::from_bytes(Vec::new(), false),
        Err(StoreError::BadMagic)
    ));
}

#[test]
fn data_flips_pass_plain_open_but_fail_verification() {
    let bytes = sample_bytes();
    let (schema, _) = sample();
    // a flip inside the first string payload still parses without verification
    let needle = b"row 1";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut b = bytes.clone();
    b[at] ^= 0x01;
    let t = Table::from_bytes(b.clone(), false).unwrap();
    assert_eq!(t.schema(), &schema);
    assert!(matches!(Table::from_bytes(b, true), Err(StoreError::ChecksumMismatch)));
}

#[test]
fn slice_bounds_and_empty_table() {
    let (schema, rows) = sample();
    let dir = tempfile::tempdir().unwrap();
    let t = write_table_with(
        &schema,
        &rows,
        dir.path().join("a.dset"),
        WriteOptions { batch_rows: 7 },
    )
    .unwrap();
    assert!(matches!(t.slice(5, 24), Err(StoreError::OutOfBounds { .. })));
    assert!(matches!(t.slice(6, 5), Err(StoreError::OutOfBounds { .. })));
    assert!(t.slice(23, 23).unwrap().is_empty());

    let empty = write_table_with(&schema, &[], dir.path().join("e.dset"), WriteOptions::default()).unwrap();
    assert_eq!(empty.num_rows(), 0);
    assert!(open_table_verified(dir.path().join("e.dset"))
        .unwrap()
        .read_all()
        .unwrap()
        .is_empty());
}

#[test]
fn slice_touches_only_the_batches_it_needs() {
    let (schema, rows) = sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.dset");
    write_table_with(&schema, &rows, &path, WriteOptions { batch_rows: 7 }).unwrap();
    let t = open_table(&path).unwrap();
    assert_eq!(t.stats().batches_opened(), 0);
    t.slice(8, 10).unwrap();
    assert_eq!(t.stats().batches_opened(), 1);
}

#[test]
fn fingerprint_depends_on_content_not_batching() {
    let (schema, rows) = sample();
    let dir = tempfile::tempdir().unwrap();
    let a = write_table_with(
        &schema,
        &rows,
        dir.path().join("a.dset"),
        WriteOptions { batch_rows: 7 },
    )
    .unwrap();
    let b = write_table_with(
        &schema,
        &rows,
        dir.path().join("b.dset"),
        WriteOptions { batch_rows: 7 },
    )
    .unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let c = write_table_with(
        &schema,
        &rows[1..],
        dir.path().join("c.dset"),
        WriteOptions { batch_rows: 7 },
    )
    .unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn concat_preserves_row_order() {
    let (schema, rows) = sample();
    let dir = tempfile::tempdir().unwrap();
    let a = write_table_with(&schema, &rows[..10], dir.path().join("a.dset"), WriteOptions::default()).unwrap();
    let b = write_table_with(&schema, &rows[10..], dir.path().join("b.dset"), WriteOptions::default()).unwrap();
    let c = concat_tables(&[a, b]).unwrap();
    assert_eq!(c.read_all().unwrap(), rows);
    assert!(matches!(concat_tables(&[]), Err(StoreError::EmptyConcat)));
}

#[test]
fn type_errors_name_the_column() {
    let (schema, _) = sample();
    let dir = tempfile::tempdir().unwrap();
    let bad = vec![vec![
        Value::Text("x".into()),
        Value::Null,
        Value::List(vec![]),
        Value::Float(0.0),
    ]];
    let err = write_table_with(&schema, &bad, dir.path().join("x.dset"), WriteOptions::default()).unwrap_err();
    assert!(err.to_string().contains("id"), "{err}");
    assert!(!dir.path().join("x.dset").exists());
}
