#![no_main]

use dataforge::registry::{parse_card, validate_card, Vocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(card) = parse_card(text) {
        let _ = card.stated_split_counts();
        let _ = validate_card(&card, None, &Vocabulary::default());
    }
});
