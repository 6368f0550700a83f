//! Replays the checked-in fuzz seeds through the fuzzed entry points so the
//! corpus stays meaningful without a nightly toolchain.

use std::fs;
use std::path::PathBuf;

use tkgc_core::checkpoint::AnyCheckpoint;
use tkgc_core::data::{parse_dataset, parse_facts, parse_stat, LoadOptions};
use tkgc_core::model::ModelConfig;
use tkgc_core::train::TrainConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn fact_seeds() {
    for (name, bytes) in seeds("parse_facts") {
        let result = parse_facts(text(&bytes), &name, 1 << 16, 512);
        let expect_ok = !matches!(name.as_str(), "missing_timestamp" | "negative_id");
        assert_eq!(result.is_ok(), expect_ok, "{name}: {result:?}");
    }
}

#[test]
fn stat_seeds() {
    for (name, bytes) in seeds("parse_stat") {
        let result = parse_stat(text(&bytes), "stat.txt");
        assert_eq!(result.is_ok(), name != "truncated", "{name}: {result:?}");
    }
}

#[test]
fn dataset_seeds() {
    for (name, bytes) in seeds("parse_dataset") {
        let parts: Vec<&str> = text(&bytes).splitn(4, '\0').collect();
        assert_eq!(parts.len(), 4, "{name}");
        let result = parse_dataset(
            parts[0],
            [parts[1], parts[2], parts[3]],
            LoadOptions::default(),
        );
        assert_eq!(
            result.is_ok(),
            name != "overlapping_splits",
            "{name}: {result:?}"
        );
        if name == "gapped_grid" {
            assert_eq!(result.unwrap().num_snapshots(), 5);
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("decode_checkpoint") {
        match (name.as_str(), AnyCheckpoint::decode(&bytes)) {
            ("f32_distmult", Ok(AnyCheckpoint::F32(_)))
            | ("f64_convtranse", Ok(AnyCheckpoint::F64(_))) => {}
            ("truncated" | "magic_only", Err(_)) => {}
            (_, other) => panic!("{name}: unexpected {:?}", other.map(|c| c.epoch())),
        }
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("parse_config") {
        let train = serde_json::from_slice::<TrainConfig>(&bytes);
        let model = serde_json::from_slice::<ModelConfig>(&bytes);
        match name.as_str() {
            "defaults" | "full" => train.unwrap().validate().unwrap(),
            "zero_dim" => assert!(train.unwrap().validate().is_err()),
            "model_config" => model.unwrap().validate().unwrap(),
            other => panic!("unlisted seed {other}"),
        }
    }
}
