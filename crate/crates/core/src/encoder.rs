//! Sequential multi-relational graph encoder with relation-aware skip flow.
//!
//! For each snapshot in the history window the entity states pass through
//! `L` composition graph layers
//!
//! ```text
//! H'[e] = rrelu( mean_{(n, r) -> e} f(H[n], R[r]) · W_agg + H[e] · W_self )
//! ```
//!
//! and are then mixed with the inputs of earlier window steps by additive
//! attention keyed on the query relations of each entity:
//!
//! ```text
//! score_0 = 0,  score_j = (h_{i-j} + pool[e]) · W_a        (j = 1..m)
//! beta    = softmax over j, per coordinate
//! h_{i+1} = beta_0 * H'_L + sum_j beta_j * h_{i-j}
//! ```

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, NodeId, Scalar, Tape};
use crate::data::{Phase, Quadruplet, Snapshot};
use crate::embedding::{RelationTable, TemporalEmbedding};
use crate::error::{Error, Result};
use crate::params::{xavier, Bound, ParamId, ParamStore};

/// How a neighbor state is combined with the edge relation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    #[default]
    Sum,
    Mult,
}

/// Shape of the skip-flow attention score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionScore {
    /// `W_a` is `d × d`; each coordinate gets its own softmax.
    #[default]
    Vector,
    /// `W_a` is `d × 1`; one weight per position, shared by all coordinates.
    Scalar,
}

/// Which parts of the skip flow are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SkipFlow {
    #[default]
    Full,
    /// Scores ignore the pooled query relations.
    WithoutRelation,
    /// No attention: the next input is the last layer output.
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

/// Queries of one timestamp together with each subject's relation pool.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub timestamp: usize,
    /// `None` for a batch mixing both phases.
    pub phase: Option<Phase>,
    pub queries: Vec<Query>,
    pool_offsets: Vec<usize>,
    pool_relations: Vec<usize>,
}

impl QueryBatch {
    /// Builds the batch; every fact must sit at `timestamp` and, when a
    /// phase is given, carry that phase. Pools only see these facts.
    pub fn new(
        timestamp: usize,
        phase: Option<Phase>,
        facts: &[Quadruplet],
        num_entities: usize,
    ) -> Result<Self> {
        let mut pools: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_entities];
        let mut queries = Vec::with_capacity(facts.len());
        for q in facts {
            if q.timestamp != timestamp {
                return Err(Error::invalid(
                    "query_batch",
                    format!("fact {q:?} is not at timestamp {timestamp}"),
                ));
            }
            if phase.is_some_and(|p| p != q.phase) {
                return Err(Error::invalid(
                    "query_batch",
                    format!("fact {q:?} does not belong to phase {phase:?}"),
                ));
            }
            if q.subject >= num_entities || q.object >= num_entities {
                return Err(Error::OutOfRange {
                    what: "query entity",
                    index: q.subject.max(q.object),
                    size: num_entities,
                });
            }
            pools[q.subject].insert(q.relation);
            queries.push(Query {
                subject: q.subject,
                relation: q.relation,
                object: q.object,
            });
        }
        let mut pool_offsets = Vec::with_capacity(num_entities + 1);
        let mut pool_relations = Vec::new();
        pool_offsets.push(0);
        for p in pools {
            pool_relations.extend(p);
            pool_offsets.push(pool_relations.len());
        }
        Ok(Self {
            timestamp,
            phase,
            queries,
            pool_offsets,
            pool_relations,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.pool_offsets.len() - 1
    }

    /// Distinct query relations of `entity` as a subject in this batch.
    pub fn pool(&self, entity: usize) -> &[usize] {
        &self.pool_relations[self.pool_offsets[entity]..self.pool_offsets[entity + 1]]
    }

    /// Every relation that appears in some pool.
    pub fn pooled_relations(&self) -> BTreeSet<usize> {
        self.pool_relations.iter().copied().collect()
    }

    pub fn subjects(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.subject).collect()
    }

    pub fn relations(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.relation).collect()
    }

    pub fn objects(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.object).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub composition: Composition,
    pub dropout: f64,
    pub rrelu_lower: f64,
    pub rrelu_upper: f64,
    pub skip: SkipFlow,
    pub attention_score: AttentionScore,
}

/// Test hooks that override parts of the skip flow.
#[derive(Clone, Copy, Debug, Default)]
pub struct AttentionProbe {
    /// Use `beta_0 = 1` and zero for every earlier position.
    pub force_current: bool,
    /// Replace every relation pool by the zero vector.
    pub zero_pools: bool,
}

/// Result of running the encoder over a history window.
#[derive(Clone, Debug)]
pub struct EncodedHistory {
    /// Entity states after the last window step: `[|E|, d]`.
    pub states: NodeId,
    /// Attention weights of each window step, `[m + 1, |E|, d]` (or
    /// `[m + 1, |E|, 1]` for scalar scores). Empty when the skip flow is off.
    pub attention_weights: Vec<NodeId>,
    /// Pooled query relations `[|E|, d]`, when used.
    pub pooled: Option<NodeId>,
    pub window: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct GraphEncoder {
    config: EncoderConfig,
    aggregate: Vec<ParamId>,
    self_loop: Vec<ParamId>,
    attention: Option<ParamId>,
}

impl GraphEncoder {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        config: EncoderConfig,
    ) -> Self {
        let d = config.dim;
        let mut aggregate = Vec::with_capacity(config.layers);
        let mut self_loop = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            aggregate.push(store.add(
                &format!("encoder.layer{l}.aggregate"),
                xavier(rng, &[d, d], d, d),
            ));
            self_loop.push(store.add(
                &format!("encoder.layer{l}.self_loop"),
                xavier(rng, &[d, d], d, d),
            ));
        }
        let attention = match (config.skip, config.attention_score) {
            (SkipFlow::Disabled, _) => None,
            (_, AttentionScore::Vector) => {
                Some(store.add("encoder.attention", xavier(rng, &[d, d], d, d)))
            }
            (_, AttentionScore::Scalar) => {
                Some(store.add("encoder.attention", xavier(rng, &[d, 1], d, 1)))
            }
        };
        Self {
            config,
            aggregate,
            self_loop,
            attention,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Graph-layer weights, `2d²` per layer.
    pub fn graph_parameter_count(&self) -> usize {
        2 * self.config.layers * self.config.dim * self.config.dim
    }

    /// `W_a`: `d²` (vector scores), `d` (scalar scores), 0 when disabled.
    pub fn skip_parameter_count(&self) -> usize {
        match (self.attention, self.config.attention_score) {
            (None, _) => 0,
            (Some(_), AttentionScore::Vector) => self.config.dim * self.config.dim,
            (Some(_), AttentionScore::Scalar) => self.config.dim,
        }
    }

    /// One composition graph layer over `snapshot`.
    pub fn compgcn_layer<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        snapshot: &Snapshot,
        input: NodeId,
        relations: NodeId,
        layer: usize,
    ) -> Result<NodeId> {
        let self_term = tape.matmul(input, bound[self.self_loop[layer]])?;
        let pre = if snapshot.neighbor_pairs().is_empty() {
            self_term
        } else {
            let (neighbors, rels): (Vec<usize>, Vec<usize>) =
                snapshot.neighbor_pairs().iter().copied().unzip();
            let h = tape.gather_rows(input, &neighbors)?;
            let r = tape.gather_rows(relations, &rels)?;
            let messages = match self.config.composition {
                Composition::Sum => tape.add(h, r)?,
                Composition::Mult => tape.mul(h, r)?,
            };
            let mean = tape.segment_mean(messages, snapshot.neighbor_offsets().to_vec())?;
            let agg = tape.matmul(mean, bound[self.aggregate[layer]])?;
            tape.add(agg, self_term)?
        };
        let act = tape.rrelu(pre, self.config.rrelu_lower, self.config.rrelu_upper)?;
        tape.dropout(act, self.config.dropout)
    }

    /// Mean relation embedding of each entity's query pool; zero rows for
    /// entities that are not query subjects in `batch`.
    pub fn pool_query_relations<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        relations: NodeId,
        batch: &QueryBatch,
    ) -> Result<NodeId> {
        let n = batch.num_entities();
        if batch.pool_relations.is_empty() {
            return Ok(tape.leaf(Array::zeros(&[n, self.config.dim])));
        }
        let rows = tape.gather_rows(relations, &batch.pool_relations)?;
        tape.segment_mean(rows, batch.pool_offsets.clone())
    }

    /// Mixes the current layer output with earlier inputs (most recent
    /// first). Returns the next input and the attention weights.
    pub fn skip_attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        current: NodeId,
        previous: &[NodeId],
        pooled: Option<NodeId>,
        force_current: bool,
    ) -> Result<(NodeId, NodeId)> {
        let w_a = self
            .attention
            .map(|id| bound[id])
            .ok_or_else(|| Error::invalid("skip_attention", "skip flow is disabled"))?;
        let shape = tape.shape(current).to_vec();
        let (n, d) = (shape[0], shape[1]);
        let score_width = match self.config.attention_score {
            AttentionScore::Vector => d,
            AttentionScore::Scalar => 1,
        };

        let weights = if force_current {
            let mut w = Array::zeros(&[previous.len() + 1, n, score_width]);
            w.data_mut()[..n * score_width].fill(T::one());
            tape.leaf(w)
        } else {
            let mut scores = vec![tape.leaf(Array::zeros(&[n, score_width]))];
            for &prev in previous {
                let key = match pooled {
                    Some(p) => tape.add(prev, p)?,
                    None => prev,
                };
                scores.push(tape.matmul(key, w_a)?);
            }
            let stacked = tape.stack(&scores)?;
            tape.softmax_over_positions(stacked)?
        };

        let mut values = Vec::with_capacity(previous.len() + 1);
        values.push(current);
        values.extend_from_slice(previous);
        let values = tape.stack(&values)?;
        let expanded = match self.config.attention_score {
            AttentionScore::Vector => weights,
            AttentionScore::Scalar => {
                let p = previous.len() + 1;
                let cols = tape.reshape(weights, &[p * n, 1])?;
                let wide = tape.broadcast_cols(cols, d)?;
                tape.reshape(wide, &[p, n, d])?
            }
        };
        let weighted = tape.mul(expanded, values)?;
        Ok((tape.sum_positions(weighted)?, weights))
    }

    /// Runs the window `[max(0, t_q - k), t_q)` and returns the final states.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_sequence<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        embedding: &TemporalEmbedding,
        relation_table: &RelationTable,
        snapshots: &[Snapshot],
        batch: &QueryBatch,
        history_length: usize,
        probe: AttentionProbe,
    ) -> Result<EncodedHistory> {
        let t_q = batch.timestamp;
        if t_q < 1 {
            return Err(Error::invalid(
                "encode_sequence",
                "query timestamp 0 has no history",
            ));
        }
        if history_length == 0 {
            return Err(Error::invalid(
                "encode_sequence",
                "history length must be at least 1",
            ));
        }
        if t_q > snapshots.len() {
            return Err(Error::OutOfRange {
                what: "history snapshot",
                index: t_q - 1,
                size: snapshots.len(),
            });
        }
        let window = t_q.saturating_sub(history_length)..t_q;
        let relations = relation_table.all(bound);
        let mut state = embedding.all_entities(tape, bound, window.start)?;

        let pooled = match self.config.skip {
            SkipFlow::Full if probe.zero_pools => {
                Some(tape.leaf(Array::zeros(&[batch.num_entities(), self.config.dim])))
            }
            SkipFlow::Full => Some(self.pool_query_relations(tape, relations, batch)?),
            _ => None,
        };

        let mut inputs: Vec<NodeId> = Vec::with_capacity(window.len());
        let mut attention_weights = Vec::new();
        for t in window.clone() {
            let mut out = state;
            for layer in 0..self.config.layers {
                out = self.compgcn_layer(tape, bound, &snapshots[t], out, relations, layer)?;
            }
            let next = match self.config.skip {
                SkipFlow::Disabled => out,
                _ => {
                    let previous: Vec<NodeId> = inputs.iter().rev().copied().collect();
                    let (next, beta) = self.skip_attention(
                        tape,
                        bound,
                        out,
                        &previous,
                        pooled,
                        probe.force_current,
                    )?;
                    attention_weights.push(beta);
                    next
                }
            };
            inputs.push(state);
            state = next;
        }
        Ok(EncodedHistory {
            states: state,
            attention_weights,
            pooled,
            window,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Edge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(dim: usize, skip: SkipFlow) -> EncoderConfig {
        EncoderConfig {
            dim,
            layers: 1,
            composition: Composition::Sum,
            dropout: 0.0,
            rrelu_lower: 0.125,
            rrelu_upper: 1.0 / 3.0,
            skip,
            attention_score: AttentionScore::Vector,
        }
    }

    fn identity_encoder(dim: usize, skip: SkipFlow) -> (ParamStore<f64>, GraphEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = GraphEncoder::init(&mut store, &mut rng, config(dim, skip));
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        for name in ["encoder.layer0.aggregate", "encoder.layer0.self_loop"] {
            store
                .by_name_mut(name)
                .unwrap()
                .data_mut()
                .copy_from_slice(&eye);
        }
        (store, enc)
    }

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], v: &[f64]) -> NodeId {
        tape.leaf(Array::from_f64(shape, v).unwrap())
    }

    #[test]
    fn isolated_entity_keeps_self_loop() {
        let (store, enc) = identity_encoder(2, SkipFlow::Disabled);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let snap = Snapshot::new(0, vec![], 1);
        let h = leaf(&mut tape, &[1, 2], &[1.0, 0.5]);
        let r = leaf(&mut tape, &[1, 2], &[0.0, 0.0]);
        let out = enc
            .compgcn_layer(&mut tape, &bound, &snap, h, r, 0)
            .unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 0.5]);
    }

    #[test]
    fn one_neighbor_sum() {
        let (store, enc) = identity_encoder(2, SkipFlow::Disabled);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let edge = Edge {
            subject: 0,
            relation: 0,
            object: 1,
        };
        let snap = Snapshot::new(0, vec![edge], 2);
        let h = leaf(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let r = leaf(&mut tape, &[1, 2], &[0.0, 1.0]);
        let out = enc
            .compgcn_layer(&mut tape, &bound, &snap, h, r, 0)
            .unwrap();
        assert_eq!(&tape.value(out).data()[2..], &[1.0, 1.0]);
    }

    #[test]
    fn edge_order_does_not_matter() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = GraphEncoder::init(&mut store, &mut rng, config(3, SkipFlow::Disabled));
        let mut edges: Vec<Edge> = (0..12)
            .map(|i| Edge {
                subject: (i * 7) % 5,
                relation: i % 3,
                object: (i * 3 + 1) % 5,
            })
            .collect();
        let run = |edges: Vec<Edge>| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let snap = Snapshot::new(0, edges, 5);
            let h = tape.leaf(crate::params::uniform(
                &mut ChaCha8Rng::seed_from_u64(1),
                &[5, 3],
                1.0,
            ));
            let r = tape.leaf(crate::params::uniform(
                &mut ChaCha8Rng::seed_from_u64(2),
                &[3, 3],
                1.0,
            ));
            let out = enc
                .compgcn_layer(&mut tape, &bound, &snap, h, r, 0)
                .unwrap();
            tape.value(out).clone()
        };
        let a = run(edges.clone());
        edges.reverse();
        edges.swap(1, 7);
        assert_eq!(a, run(edges));
    }

    #[test]
    fn pools() {
        let (_, enc) = identity_encoder(2, SkipFlow::Full);
        let facts = [
            Quadruplet::new(0, 0, 1, 4),
            Quadruplet::new(1, 0, 2, 4),
            Quadruplet::new(1, 1, 2, 4),
        ];
        let batch = QueryBatch::new(4, Some(Phase::Original), &facts, 3).unwrap();
        assert_eq!(batch.pool(1), &[0, 1]);
        assert!(batch.pool(2).is_empty());
        let mut tape = Tape::new();
        let rel = leaf(&mut tape, &[2, 2], &[0.4, -1.0, -0.4, 1.0]);
        let pooled = enc.pool_query_relations(&mut tape, rel, &batch).unwrap();
        assert_eq!(tape.value(pooled).data(), &[0.4, -1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_rejects_wrong_phase_or_time() {
        let q = Quadruplet::new(0, 0, 1, 4);
        assert!(QueryBatch::new(3, None, &[q], 2).is_err());
        assert!(QueryBatch::new(4, Some(Phase::Inverse), &[q], 2).is_err());
    }

    #[test]
    fn attention_examples() {
        let (mut store, enc) = identity_encoder(1, SkipFlow::Full);
        store.by_name_mut("encoder.attention").unwrap().data_mut()[0] = 2.0;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let cur = leaf(&mut tape, &[1, 1], &[1.0]);
        let prev = leaf(&mut tape, &[1, 1], &[0.5]);
        let pool = leaf(&mut tape, &[1, 1], &[0.3]);

        let (out, beta) = enc
            .skip_attention(&mut tape, &bound, cur, &[], Some(pool), false)
            .unwrap();
        assert_eq!(tape.value(out).data(), &[1.0]);
        assert_eq!(tape.value(beta).data(), &[1.0]);

        let (out, beta) = enc
            .skip_attention(&mut tape, &bound, cur, &[prev], Some(pool), false)
            .unwrap();
        let b1 = 1.6f64.exp() / (1.0 + 1.6f64.exp());
        assert!((tape.value(beta).data()[1] - b1).abs() < 1e-12);
        assert!((tape.value(out).item() - ((1.0 - b1) + b1 * 0.5)).abs() < 1e-12);
        assert!((tape.value(out).item() - 0.584).abs() < 1e-3);
    }

    #[test]
    fn zero_attention_weight_is_uniform() {
        let (mut store, enc) = identity_encoder(2, SkipFlow::Full);
        store
            .by_name_mut("encoder.attention")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let cur = leaf(&mut tape, &[1, 2], &[1.0, 2.0]);
        let p1 = leaf(&mut tape, &[1, 2], &[3.0, -1.0]);
        let p2 = leaf(&mut tape, &[1, 2], &[0.5, 0.0]);
        let (_, beta) = enc
            .skip_attention(&mut tape, &bound, cur, &[p1, p2], None, false)
            .unwrap();
        for &b in tape.value(beta).data() {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn no_history_before_first_snapshot() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = TemporalEmbedding::init(&mut store, &mut rng, 2, 2, 4, true);
        let rel = RelationTable::init(&mut store, &mut rng, 1, 2);
        let enc = GraphEncoder::init(&mut store, &mut rng, config(2, SkipFlow::Full));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let snaps = vec![Snapshot::new(0, vec![], 2)];
        let batch = QueryBatch::new(0, None, &[Quadruplet::new(0, 0, 1, 0)], 2).unwrap();
        let err = enc
            .encode_sequence(
                &mut tape,
                &bound,
                &emb,
                &rel,
                &snaps,
                &batch,
                3,
                AttentionProbe::default(),
            )
            .unwrap_err();
        assert!(err.to_string().contains("no history"));
    }
}
