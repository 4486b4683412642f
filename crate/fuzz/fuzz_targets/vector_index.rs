#![no_main]

use dataforge::index::{knn_query, VectorIndex};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ix) = VectorIndex::from_bytes(data) {
        let q = vec![0.5; ix.dim()];
        let _ = knn_query(&ix, &q, 3);
    }
});
