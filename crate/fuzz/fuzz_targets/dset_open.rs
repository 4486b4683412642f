#![no_main]

use dataforge::Table;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = Table::from_bytes(data.to_vec(), false) {
        let _ = t.read_all();
        let n = t.num_rows();
        let _ = t.slice(n / 2, n);
    }
    if let Ok(t) = Table::from_bytes(data.to_vec(), true) {
        t.read_all().expect("a verified table decodes");
    }
});
