#![no_main]

use dataforge::stream::StreamPipeline;
use dataforge::TransformRegistry;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = StreamPipeline::from_json(text) {
        let _ = p.output_schema(&TransformRegistry::with_builtins());
    }
});
