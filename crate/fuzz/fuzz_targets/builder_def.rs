#![no_main]

use dataforge::BuilderDef;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(def) = BuilderDef::from_json(text) {
        let _ = def.fingerprint();
    }
});
