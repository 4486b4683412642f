#![no_main]

use dataforge::index::{bm25_query, InvertedIndex};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ix) = InvertedIndex::from_bytes(data) {
        let _ = bm25_query(&ix, "the cat", 5);
        let again = InvertedIndex::from_bytes(&ix.to_bytes(serde_json::json!({}))).expect("re-parse");
        assert_eq!(again, ix);
    }
});
