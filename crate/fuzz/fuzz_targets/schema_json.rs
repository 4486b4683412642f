#![no_main]

use dataforge::Schema;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(schema) = Schema::from_json(text) {
        // A parsed schema must survive its own serialization.
        let again = Schema::from_json(&schema.to_json()).expect("re-parse");
        assert_eq!(again, schema);
    }
});
