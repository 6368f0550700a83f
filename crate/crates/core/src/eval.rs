//! Filtered ranking metrics, evaluation over a split and score ensembles.

use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Scalar;
use crate::data::{Phase, Snapshot, Split, TkgDataset};
use crate::encoder::QueryBatch;
use crate::error::{Error, Result};
use crate::model::Model;

/// Rank of `gold` among `scores` after removing every other candidate in
/// `filter`. Ties are resolved in favor of the gold candidate.
pub fn rank_query(scores: &[f64], gold: usize, filter: &[usize]) -> Result<usize> {
    if gold >= scores.len() {
        return Err(Error::OutOfRange {
            what: "gold candidate",
            index: gold,
            size: scores.len(),
        });
    }
    let g = scores[gold];
    if g.is_nan() {
        return Err(Error::NonFinite { op: "rank_query" });
    }
    let mut removed = vec![false; scores.len()];
    for &c in filter {
        if c < scores.len() {
            removed[c] = true;
        }
    }
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| s > g && !removed[c])
        .count();
    Ok(above + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub num_queries: usize,
}

pub fn aggregate_metrics(ranks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Evaluation("no ranks to aggregate".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Evaluation("ranks start at 1".into()));
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
        num_queries: ranks.len(),
    })
}

/// JSON report of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: String,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub num_queries: usize,
    pub config_digest: String,
}

impl EvaluationReport {
    pub fn new(split: Split, metrics: Metrics, config_digest: String) -> Self {
        Self {
            split: split.name().to_string(),
            mrr: metrics.mrr,
            hits1: metrics.hits1,
            hits3: metrics.hits3,
            hits10: metrics.hits10,
            num_queries: metrics.num_queries,
            config_digest,
        }
    }
}

/// Hex sha256 of the JSON form of `config`.
pub fn config_digest(config: &impl Serialize) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// True objects of every `(subject, relation, timestamp)` in the dataset.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    objects: HashMap<(usize, usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn new(dataset: &TkgDataset) -> Self {
        let mut objects: HashMap<_, Vec<usize>> = HashMap::new();
        for q in dataset.facts() {
            objects
                .entry((q.subject, q.relation, q.timestamp))
                .or_default()
                .push(q.object);
        }
        for v in objects.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { objects }
    }

    pub fn true_objects(&self, subject: usize, relation: usize, timestamp: usize) -> &[usize] {
        self.objects
            .get(&(subject, relation, timestamp))
            .map_or(&[], Vec::as_slice)
    }
}

/// Query batches of `split` at `timestamp`: one per phase, or a single mixed
/// batch when `single_phase` is set. Empty batches are left out.
pub fn query_batches(
    dataset: &TkgDataset,
    split: Split,
    timestamp: usize,
    single_phase: bool,
) -> Result<Vec<QueryBatch>> {
    let phases: &[Option<Phase>] = if single_phase {
        &[None]
    } else {
        &[Some(Phase::Original), Some(Phase::Inverse)]
    };
    let mut out = Vec::new();
    for &phase in phases {
        let facts = dataset.facts_at(split, timestamp, phase);
        if !facts.is_empty() {
            out.push(QueryBatch::new(
                timestamp,
                phase,
                &facts,
                dataset.num_entities(),
            )?);
        }
    }
    Ok(out)
}

/// Anything that scores every candidate object for a query batch.
pub trait Scorer: Sync {
    fn num_entities(&self) -> usize;

    /// One row of raw scores per query.
    fn score_batch(&self, snapshots: &[Snapshot], batch: &QueryBatch) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> Scorer for Model<T> {
    fn num_entities(&self) -> usize {
        self.config().num_entities
    }

    fn score_batch(&self, snapshots: &[Snapshot], batch: &QueryBatch) -> Result<Vec<Vec<f64>>> {
        let scores = self.scores(snapshots, batch)?;
        let e = self.config().num_entities;
        Ok(scores
            .data()
            .chunks(e)
            .map(|row| row.iter().map(|v| v.as_f64()).collect())
            .collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub single_phase: bool,
    pub parallel: bool,
}

fn split_batches(
    dataset: &TkgDataset,
    split: Split,
    single_phase: bool,
) -> Result<Vec<QueryBatch>> {
    if !dataset.is_augmented() {
        return Err(Error::Evaluation(
            "evaluation needs a dataset with inverse facts".into(),
        ));
    }
    let mut batches = Vec::new();
    for t in dataset.split_timestamps(split) {
        if t == 0 {
            continue;
        }
        batches.extend(query_batches(dataset, split, t, single_phase)?);
    }
    if batches.is_empty() {
        return Err(Error::Evaluation(format!(
            "split {} has no queries with history",
            split.name()
        )));
    }
    Ok(batches)
}

fn rank_batches<F>(
    batches: &[QueryBatch],
    filter: &FilterIndex,
    parallel: bool,
    score: F,
) -> Result<Vec<usize>>
where
    F: Fn(&QueryBatch) -> Result<Vec<Vec<f64>>> + Sync,
{
    let rank_one = |batch: &QueryBatch| -> Result<Vec<usize>> {
        let rows = score(batch)?;
        batch
            .queries
            .iter()
            .zip(&rows)
            .map(|(q, row)| {
                rank_query(
                    row,
                    q.object,
                    filter.true_objects(q.subject, q.relation, batch.timestamp),
                )
            })
            .collect()
    };
    let per_batch: Vec<Result<Vec<usize>>> = if parallel {
        batches.par_iter().map(rank_one).collect()
    } else {
        batches.iter().map(rank_one).collect()
    };
    let mut ranks = Vec::new();
    for r in per_batch {
        ranks.extend(r?);
    }
    Ok(ranks)
}

/// Filtered ranks of every query (both phases) in `split`, using the true
/// history before each query time.
pub fn evaluate_ranks<S: Scorer + ?Sized>(
    scorer: &S,
    dataset: &TkgDataset,
    snapshots: &[Snapshot],
    split: Split,
    options: EvalOptions,
) -> Result<Vec<usize>> {
    if scorer.num_entities() != dataset.num_entities() {
        return Err(Error::Evaluation(format!(
            "model has {} entities, dataset has {}",
            scorer.num_entities(),
            dataset.num_entities()
        )));
    }
    let batches = split_batches(dataset, split, options.single_phase)?;
    let filter = FilterIndex::new(dataset);
    rank_batches(&batches, &filter, options.parallel, |b| {
        scorer.score_batch(snapshots, b)
    })
}

pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    dataset: &TkgDataset,
    snapshots: &[Snapshot],
    split: Split,
    options: EvalOptions,
) -> Result<Metrics> {
    aggregate_metrics(&evaluate_ranks(scorer, dataset, snapshots, split, options)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Avg,
    Max,
    Min,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Self::Avg),
            "max" => Ok(Self::Max),
            "min" => Ok(Self::Min),
            other => Err(Error::Config(format!(
                "unknown pooling {other:?} (avg, max, min)"
            ))),
        }
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Elementwise pooling of several score vectors, each softmax-normalized
/// first unless `normalize` is false.
pub fn ensemble_scores(
    vectors: &[Vec<f64>],
    pooling: Pooling,
    normalize: bool,
) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Evaluation("ensemble needs at least one model".into()))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::Evaluation("score vectors differ in length".into()));
    }
    let prepared: Vec<Vec<f64>> = if normalize {
        vectors.iter().map(|v| softmax(v)).collect()
    } else {
        vectors.to_vec()
    };
    let k = prepared.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let col = prepared.iter().map(|v| v[i]);
            match pooling {
                Pooling::Avg => col.sum::<f64>() / k,
                Pooling::Max => col.fold(f64::NEG_INFINITY, f64::max),
                Pooling::Min => col.fold(f64::INFINITY, f64::min),
            }
        })
        .collect())
}

/// Evaluates the pooled scores of several models.
pub fn evaluate_ensemble(
    scorers: &[&dyn Scorer],
    dataset: &TkgDataset,
    snapshots: &[Snapshot],
    split: Split,
    pooling: Pooling,
    normalize: bool,
    options: EvalOptions,
) -> Result<Metrics> {
    if scorers.is_empty() {
        return Err(Error::Evaluation(
            "ensemble needs at least one model".into(),
        ));
    }
    if let Some(s) = scorers
        .iter()
        .find(|s| s.num_entities() != dataset.num_entities())
    {
        return Err(Error::Evaluation(format!(
            "model has {} entities, dataset has {}",
            s.num_entities(),
            dataset.num_entities()
        )));
    }
    let batches = split_batches(dataset, split, options.single_phase)?;
    let filter = FilterIndex::new(dataset);
    let ranks = rank_batches(&batches, &filter, options.parallel, |b| {
        let per_model = scorers
            .iter()
            .map(|s| s.score_batch(snapshots, b))
            .collect::<Result<Vec<_>>>()?;
        (0..b.queries.len())
            .map(|q| {
                let rows: Vec<Vec<f64>> = per_model.iter().map(|m| m[q].clone()).collect();
                ensemble_scores(&rows, pooling, normalize)
            })
            .collect()
    })?;
    aggregate_metrics(&ranks)
}
