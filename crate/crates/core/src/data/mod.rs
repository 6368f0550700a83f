//! Temporal knowledge graph datasets: facts, splits, inverse augmentation,
//! per-timestamp snapshots, statistics and synthetic generators.

mod load;
mod snapshot;
mod stats;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use load::{
    load_dataset, load_dataset_with, parse_dataset, parse_facts, parse_stat, write_dataset,
    LoadOptions, RawFact, MAX_SNAPSHOTS,
};
pub use snapshot::{Edge, Snapshot};
pub use stats::{compute_statistics, DatasetStatistics};
pub use synth::{generate_synthetic, SyntheticPattern};

/// Whether a fact was read from the data or added as the inverse of one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Original,
    Inverse,
}

/// One fact `(subject, relation, object, timestamp)`.
///
/// Relation ids of inverse facts live in `[|R|, 2|R|)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruplet {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    pub timestamp: usize,
    pub phase: Phase,
}

impl Quadruplet {
    pub fn new(subject: usize, relation: usize, object: usize, timestamp: usize) -> Self {
        Self {
            subject,
            relation,
            object,
            timestamp,
            phase: Phase::Original,
        }
    }

    /// `(o, r + |R|, s, t)`, tagged as an inverse.
    pub fn inverse(&self, num_base_relations: usize) -> Self {
        Self {
            subject: self.object,
            relation: self.relation + num_base_relations,
            object: self.subject,
            timestamp: self.timestamp,
            phase: Phase::Inverse,
        }
    }

    pub fn triple(&self) -> (usize, usize, usize) {
        (self.subject, self.relation, self.object)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, valid or test)"
            ))),
        }
    }
}

/// A temporal knowledge graph with a chronological train/valid/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct TkgDataset {
    num_entities: usize,
    num_base_relations: usize,
    num_snapshots: usize,
    train: Vec<Quadruplet>,
    valid: Vec<Quadruplet>,
    test: Vec<Quadruplet>,
    augmented: bool,
}

impl TkgDataset {
    /// Builds a dataset of original facts, checking id bounds and that the
    /// splits are chronological.
    pub fn new(
        num_entities: usize,
        num_base_relations: usize,
        num_snapshots: usize,
        train: Vec<Quadruplet>,
        valid: Vec<Quadruplet>,
        test: Vec<Quadruplet>,
    ) -> Result<Self> {
        if num_entities == 0 || num_base_relations == 0 {
            return Err(Error::Dataset(
                "entity and relation counts must be positive".into(),
            ));
        }
        let ds = Self {
            num_entities,
            num_base_relations,
            num_snapshots,
            train,
            valid,
            test,
            augmented: false,
        };
        for split in Split::ALL {
            for q in ds.split(split) {
                ds.check_fact(q)?;
                if q.phase != Phase::Original {
                    return Err(Error::Dataset(format!(
                        "{} split contains an inverse fact {q:?}",
                        split.name()
                    )));
                }
            }
        }
        ds.check_chronology()?;
        Ok(ds)
    }

    fn check_fact(&self, q: &Quadruplet) -> Result<()> {
        let rel_bound = self.num_relations();
        if q.subject >= self.num_entities || q.object >= self.num_entities {
            return Err(Error::Dataset(format!(
                "entity id out of range in {q:?} (|E| = {})",
                self.num_entities
            )));
        }
        if q.relation >= rel_bound {
            return Err(Error::Dataset(format!(
                "relation id out of range in {q:?} (bound {rel_bound})"
            )));
        }
        if q.timestamp >= self.num_snapshots {
            return Err(Error::Dataset(format!(
                "timestamp out of range in {q:?} (|T| = {})",
                self.num_snapshots
            )));
        }
        Ok(())
    }

    fn check_chronology(&self) -> Result<()> {
        let range = |s: Split| {
            let facts = self.split(s);
            let lo = facts.iter().map(|q| q.timestamp).min();
            let hi = facts.iter().map(|q| q.timestamp).max();
            lo.zip(hi)
        };
        let mut prev: Option<(Split, usize)> = None;
        for split in Split::ALL {
            if let Some((lo, hi)) = range(split) {
                if let Some((ps, phi)) = prev {
                    if lo <= phi {
                        return Err(Error::Dataset(format!(
                            "splits are not chronological: {} starts at {lo} but {} ends at {phi}",
                            split.name(),
                            ps.name()
                        )));
                    }
                }
                prev = Some((split, hi));
            }
        }
        Ok(())
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    /// Size of the relation id space: `2|R|` once augmented, `|R|` before.
    pub fn num_relations(&self) -> usize {
        if self.augmented {
            2 * self.num_base_relations
        } else {
            self.num_base_relations
        }
    }

    pub fn num_snapshots(&self) -> usize {
        self.num_snapshots
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn split(&self, split: Split) -> &[Quadruplet] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn facts(&self) -> impl Iterator<Item = &Quadruplet> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn num_facts(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    /// Sorted distinct timestamps that carry at least one fact of `split`.
    pub fn split_timestamps(&self, split: Split) -> Vec<usize> {
        self.split(split)
            .iter()
            .map(|q| q.timestamp)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Adds `(o, r + |R|, s, t)` for every fact. Each inverse directly follows
    /// its original in the split lists.
    pub fn add_inverses(&self) -> Result<Self> {
        if self.augmented {
            return Err(Error::Dataset("dataset is already augmented".into()));
        }
        let aug = |facts: &[Quadruplet]| -> Vec<Quadruplet> {
            facts
                .iter()
                .flat_map(|q| [*q, q.inverse(self.num_base_relations)])
                .collect()
        };
        Ok(Self {
            train: aug(&self.train),
            valid: aug(&self.valid),
            test: aug(&self.test),
            augmented: true,
            ..self.clone()
        })
    }

    /// Drops every inverse-tagged fact.
    pub fn strip_inverses(&self) -> Self {
        let keep = |facts: &[Quadruplet]| -> Vec<Quadruplet> {
            facts
                .iter()
                .filter(|q| q.phase == Phase::Original)
                .copied()
                .collect()
        };
        Self {
            train: keep(&self.train),
            valid: keep(&self.valid),
            test: keep(&self.test),
            augmented: false,
            ..self.clone()
        }
    }

    /// One snapshot per timestamp in `[0, |T|)`, holding every fact of every
    /// split at that timestamp. Requires an augmented dataset.
    pub fn build_snapshots(&self) -> Result<Vec<Snapshot>> {
        if !self.augmented {
            return Err(Error::Dataset(
                "snapshots are built from the augmented dataset; call add_inverses first".into(),
            ));
        }
        let mut per_time: Vec<Vec<Edge>> = vec![Vec::new(); self.num_snapshots];
        for q in self.facts() {
            per_time[q.timestamp].push(Edge {
                subject: q.subject,
                relation: q.relation,
                object: q.object,
            });
        }
        Ok(per_time
            .into_iter()
            .enumerate()
            .map(|(t, edges)| Snapshot::new(t, edges, self.num_entities))
            .collect())
    }

    /// Facts of `split` at `timestamp`, optionally restricted to one phase.
    pub fn facts_at(
        &self,
        split: Split,
        timestamp: usize,
        phase: Option<Phase>,
    ) -> Vec<Quadruplet> {
        self.split(split)
            .iter()
            .filter(|q| q.timestamp == timestamp && phase.is_none_or(|p| q.phase == p))
            .copied()
            .collect()
    }
}
