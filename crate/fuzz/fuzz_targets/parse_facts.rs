#![no_main]

use libfuzzer_sys::fuzz_target;
use tkgc_core::data::parse_facts;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(facts) = parse_facts(text, "fuzz.txt", 1 << 16, 512) {
        for f in &facts {
            assert!(f.subject < 1 << 16 && f.object < 1 << 16 && f.relation < 512);
        }
    }
});
