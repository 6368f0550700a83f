use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Phase, Split, TkgDataset};

/// Summary counts of a dataset, computed over original (non-inverse) facts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStatistics {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_facts: usize,
    pub num_snapshots: usize,
    pub num_train_snapshots: usize,
    pub num_valid_snapshots: usize,
    pub num_test_snapshots: usize,
    pub num_train_facts: usize,
    pub num_valid_facts: usize,
    pub num_test_facts: usize,
    pub facts_per_snapshot: f64,
    /// Percentage of test facts that also occur verbatim one timestamp
    /// earlier anywhere in the dataset. `None` for an empty test split.
    pub repetition_pct: Option<f64>,
}

pub fn compute_statistics(dataset: &TkgDataset) -> DatasetStatistics {
    let original = |s: Split| {
        dataset
            .split(s)
            .iter()
            .filter(|q| q.phase == Phase::Original)
    };
    let count = |s: Split| original(s).count();
    let snaps = |s: Split| {
        original(s)
            .map(|q| q.timestamp)
            .collect::<HashSet<_>>()
            .len()
    };

    let seen: HashSet<(usize, usize, usize, usize)> = dataset
        .facts()
        .filter(|q| q.phase == Phase::Original)
        .map(|q| (q.subject, q.relation, q.object, q.timestamp))
        .collect();
    let num_test = count(Split::Test);
    let repetition_pct = (num_test > 0).then(|| {
        let repeated = original(Split::Test)
            .filter(|q| {
                q.timestamp > 0
                    && seen.contains(&(q.subject, q.relation, q.object, q.timestamp - 1))
            })
            .count();
        100.0 * repeated as f64 / num_test as f64
    });

    let num_facts = count(Split::Train) + count(Split::Valid) + num_test;
    DatasetStatistics {
        num_entities: dataset.num_entities(),
        num_relations: dataset.num_base_relations(),
        num_facts,
        num_snapshots: dataset.num_snapshots(),
        num_train_snapshots: snaps(Split::Train),
        num_valid_snapshots: snaps(Split::Valid),
        num_test_snapshots: snaps(Split::Test),
        num_train_facts: count(Split::Train),
        num_valid_facts: count(Split::Valid),
        num_test_facts: num_test,
        facts_per_snapshot: if dataset.num_snapshots() == 0 {
            0.0
        } else {
            num_facts as f64 / dataset.num_snapshots() as f64
        },
        repetition_pct,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Quadruplet, SyntheticPattern};

    #[test]
    fn repeated_everything_is_hundred_percent() {
        // one relation: the cyclic pattern emits identical facts at every step
        let ds = generate_synthetic(1, 10, 1, 20, SyntheticPattern::CyclicDeterministic).unwrap();
        let st = compute_statistics(&ds);
        assert_eq!(st.repetition_pct, Some(100.0));
    }

    #[test]
    fn empty_test_split_has_no_proportion() {
        let ds =
            TkgDataset::new(2, 1, 2, vec![Quadruplet::new(0, 0, 1, 0)], vec![], vec![]).unwrap();
        assert_eq!(compute_statistics(&ds).repetition_pct, None);
    }

    #[test]
    fn counts_ignore_inverses() {
        let ds = generate_synthetic(3, 12, 2, 20, SyntheticPattern::UniformRandom).unwrap();
        let plain = compute_statistics(&ds);
        let aug = compute_statistics(&ds.add_inverses().unwrap());
        assert_eq!(plain, aug);
        assert_eq!(plain.num_train_snapshots, 16);
        assert_eq!(plain.num_valid_snapshots, 2);
        assert_eq!(plain.num_test_snapshots, 2);
        assert_eq!(plain.num_facts, 12 * 20);
        assert!((plain.facts_per_snapshot - 12.0).abs() < 1e-12);
    }

    #[test]
    fn json_field_names() {
        let ds = generate_synthetic(3, 6, 2, 10, SyntheticPattern::UniformRandom).unwrap();
        let v = serde_json::to_value(compute_statistics(&ds)).unwrap();
        for key in [
            "num_facts",
            "repetition_pct",
            "facts_per_snapshot",
            "num_test_snapshots",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
