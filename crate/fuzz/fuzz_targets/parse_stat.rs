#![no_main]

use libfuzzer_sys::fuzz_target;
use tkgc_core::data::parse_stat;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((e, r)) = parse_stat(text, "stat.txt") {
            assert!(e > 0 && r > 0);
        }
    }
});
