//! Deterministic synthetic datasets for desk-scale checks.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Quadruplet, TkgDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticPattern {
    /// At every `t`, each entity `e` links to `(e + 1) mod |E|` through
    /// relation `(e + t) mod |R|`. Every query is answerable from history.
    CyclicDeterministic,
    /// `|E|` distinct random facts per timestamp; history carries no signal.
    UniformRandom,
    /// A few random facts per timestamp over disjoint entity pairs. History
    /// carries no signal, so a model can only beat chance by learning from
    /// the relation/inverse-relation pairing of the query set itself.
    LeakProbe,
}

impl FromStr for SyntheticPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" | "cyclic-deterministic" => Ok(Self::CyclicDeterministic),
            "uniform" | "uniform-random" => Ok(Self::UniformRandom),
            "leak-probe" => Ok(Self::LeakProbe),
            other => Err(Error::Config(format!(
                "unknown synthetic pattern {other:?} (cyclic, uniform, leak-probe)"
            ))),
        }
    }
}

/// Split sizes in snapshots: roughly 80/10/10 with at least one valid and
/// one test timestamp.
fn split_sizes(num_timestamps: usize) -> (usize, usize, usize) {
    let tenth = ((num_timestamps as f64) * 0.1).round().max(1.0) as usize;
    (num_timestamps - 2 * tenth, tenth, tenth)
}

pub fn generate_synthetic(
    seed: u64,
    num_entities: usize,
    num_relations: usize,
    num_timestamps: usize,
    pattern: SyntheticPattern,
) -> Result<TkgDataset> {
    if num_entities < 2 {
        return Err(Error::Dataset(format!(
            "synthetic data needs at least 2 entities, got {num_entities}"
        )));
    }
    if num_relations < 1 {
        return Err(Error::Dataset(
            "synthetic data needs at least 1 relation".into(),
        ));
    }
    if num_timestamps < 4 {
        return Err(Error::Dataset(format!(
            "synthetic data needs at least 4 timestamps, got {num_timestamps}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts: Vec<Quadruplet> = Vec::new();
    for t in 0..num_timestamps {
        match pattern {
            SyntheticPattern::CyclicDeterministic => {
                for e in 0..num_entities {
                    facts.push(Quadruplet::new(
                        e,
                        (e + t) % num_relations,
                        (e + 1) % num_entities,
                        t,
                    ));
                }
            }
            SyntheticPattern::UniformRandom => {
                let capacity = num_entities * (num_entities - 1) * num_relations;
                let want = num_entities.min(capacity);
                let mut chosen = BTreeSet::new();
                while chosen.len() < want {
                    let s = rng.gen_range(0..num_entities);
                    let mut o = rng.gen_range(0..num_entities - 1);
                    if o >= s {
                        o += 1;
                    }
                    chosen.insert((s, rng.gen_range(0..num_relations), o));
                }
                facts.extend(
                    chosen
                        .into_iter()
                        .map(|(s, r, o)| Quadruplet::new(s, r, o, t)),
                );
            }
            SyntheticPattern::LeakProbe => {
                let mut order: Vec<usize> = (0..num_entities).collect();
                order.shuffle(&mut rng);
                let pairs = (num_entities / 4).max(1);
                for p in 0..pairs {
                    facts.push(Quadruplet::new(
                        order[2 * p],
                        rng.gen_range(0..num_relations),
                        order[2 * p + 1],
                        t,
                    ));
                }
            }
        }
    }
    let (n_train, n_valid, _) = split_sizes(num_timestamps);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for q in facts {
        if q.timestamp < n_train {
            train.push(q);
        } else if q.timestamp < n_train + n_valid {
            valid.push(q);
        } else {
            test.push(q);
        }
    }
    TkgDataset::new(
        num_entities,
        num_relations,
        num_timestamps,
        train,
        valid,
        test,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_statistics, Split};

    #[test]
    fn same_seed_same_dataset() {
        for pattern in [
            SyntheticPattern::CyclicDeterministic,
            SyntheticPattern::UniformRandom,
            SyntheticPattern::LeakProbe,
        ] {
            let a = generate_synthetic(7, 20, 4, 30, pattern).unwrap();
            let b = generate_synthetic(7, 20, 4, 30, pattern).unwrap();
            assert_eq!(a, b);
        }
        let a = generate_synthetic(7, 20, 4, 30, SyntheticPattern::UniformRandom).unwrap();
        let b = generate_synthetic(8, 20, 4, 30, SyntheticPattern::UniformRandom).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn eighty_ten_ten_split() {
        let ds = generate_synthetic(7, 20, 4, 30, SyntheticPattern::CyclicDeterministic).unwrap();
        assert_eq!(ds.split_timestamps(Split::Train).len(), 24);
        assert_eq!(ds.split_timestamps(Split::Valid).len(), 3);
        assert_eq!(ds.split_timestamps(Split::Test).len(), 3);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        assert!(generate_synthetic(1, 1, 4, 30, SyntheticPattern::UniformRandom).is_err());
        assert!(generate_synthetic(1, 5, 0, 30, SyntheticPattern::UniformRandom).is_err());
        assert!(generate_synthetic(1, 5, 2, 3, SyntheticPattern::UniformRandom).is_err());
    }

    #[test]
    fn uniform_random_rarely_repeats() {
        // 200 entities, 10 relations, 200 facts per step: chance of a given
        // fact recurring is 200 / (200 * 199 * 10) per step.
        let ds = generate_synthetic(3, 200, 10, 20, SyntheticPattern::UniformRandom).unwrap();
        let pct = compute_statistics(&ds).repetition_pct.unwrap();
        assert!(pct < 1.0, "{pct}");
    }

    #[test]
    fn leak_probe_pairs_are_disjoint() {
        let ds = generate_synthetic(2, 24, 3, 10, SyntheticPattern::LeakProbe).unwrap();
        for t in 0..10 {
            let facts: Vec<_> = ds.facts().filter(|q| q.timestamp == t).collect();
            assert_eq!(facts.len(), 6);
            let mut seen = BTreeSet::new();
            for q in facts {
                assert!(seen.insert(q.subject));
                assert!(seen.insert(q.object));
            }
        }
    }

    #[test]
    fn cyclic_relation_rotates() {
        let ds = generate_synthetic(0, 5, 3, 10, SyntheticPattern::CyclicDeterministic).unwrap();
        let at = |t| {
            ds.facts()
                .find(|q| q.timestamp == t && q.subject == 2)
                .copied()
                .unwrap()
        };
        assert_eq!(at(0).triple(), (2, 2, 3));
        assert_eq!(at(1).triple(), (2, 0, 3));
        assert_eq!(at(4).triple(), (2, 0, 3));
    }
}
