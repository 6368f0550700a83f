#![no_main]

use libfuzzer_sys::fuzz_target;
use tkgc_core::data::{parse_dataset, LoadOptions, Split};

// Input is stat.txt, train.txt, valid.txt and test.txt joined by NUL bytes.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let mut parts = text.splitn(4, '\0');
    let stat = parts.next().unwrap_or("");
    let train = parts.next().unwrap_or("");
    let valid = parts.next().unwrap_or("");
    let test = parts.next().unwrap_or("");
    let Ok(dataset) = parse_dataset(stat, [train, valid, test], LoadOptions::default()) else {
        return;
    };
    for split in Split::ALL {
        for q in dataset.split(split) {
            assert!(q.timestamp < dataset.num_snapshots());
        }
    }
    if dataset.num_snapshots() <= 4096 {
        let aug = dataset.add_inverses().unwrap();
        assert_eq!(aug.strip_inverses(), dataset);
        aug.build_snapshots().unwrap();
    }
});
