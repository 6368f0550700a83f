//! The full model: temporal inputs, graph encoder and decoder over one
//! parameter store.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, NodeId, Scalar, Tape};
use crate::data::Snapshot;
use crate::decoder::{classification_loss, Decoder, DecoderConfig, DecoderKind};
use crate::embedding::{RelationTable, TemporalEmbedding};
use crate::encoder::{
    AttentionProbe, AttentionScore, Composition, EncodedHistory, EncoderConfig, GraphEncoder,
    QueryBatch, SkipFlow,
};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

/// Components that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Entity inputs keep only the static table.
    Dynamic,
    /// Attention scores ignore the pooled query relations.
    RelationAware,
    /// No attention; each step feeds its layer output forward.
    Skip,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(Self::Dynamic),
            "relation-aware" | "relation_aware" => Ok(Self::RelationAware),
            "skip" => Ok(Self::Skip),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (dynamic, relation-aware, skip)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_entities: usize,
    pub num_base_relations: usize,
    pub num_snapshots: usize,
    pub dim: usize,
    pub history_length: usize,
    pub layers: usize,
    pub dropout: f64,
    pub composition: Composition,
    pub decoder: DecoderKind,
    pub channels: usize,
    pub kernel_size: usize,
    pub decoder_bias: bool,
    pub attention_score: AttentionScore,
    pub rrelu_lower: f64,
    pub rrelu_upper: f64,
    pub ablations: Vec<Ablation>,
}

impl ModelConfig {
    pub fn new(num_entities: usize, num_base_relations: usize, num_snapshots: usize) -> Self {
        Self {
            num_entities,
            num_base_relations,
            num_snapshots,
            dim: 200,
            history_length: 3,
            layers: 2,
            dropout: 0.2,
            composition: Composition::Sum,
            decoder: DecoderKind::ConvTransE,
            channels: 50,
            kernel_size: 3,
            decoder_bias: true,
            attention_score: AttentionScore::Vector,
            rrelu_lower: 1.0 / 8.0,
            rrelu_upper: 1.0 / 3.0,
            ablations: Vec::new(),
        }
    }

    pub fn has_ablation(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    pub fn skip_flow(&self) -> SkipFlow {
        if self.has_ablation(Ablation::Skip) {
            SkipFlow::Disabled
        } else if self.has_ablation(Ablation::RelationAware) {
            SkipFlow::WithoutRelation
        } else {
            SkipFlow::Full
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_entities < 1 || self.num_base_relations < 1 || self.num_snapshots < 1 {
            return fail("dataset dimensions must be positive".into());
        }
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if self.history_length == 0 {
            return fail("history_length must be at least 1".into());
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.rrelu_lower > 0.0
            && self.rrelu_lower <= self.rrelu_upper
            && self.rrelu_upper < 1.0)
        {
            return fail(format!(
                "rrelu bounds must satisfy 0 < lower <= upper < 1, got {} and {}",
                self.rrelu_lower, self.rrelu_upper
            ));
        }
        if self.channels == 0 || self.kernel_size.is_multiple_of(2) {
            return fail(format!(
                "decoder needs at least one channel and an odd kernel, got {} and {}",
                self.channels, self.kernel_size
            ));
        }
        Ok(())
    }
}

/// Parameter counts per component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub entity_input: usize,
    pub relation_table: usize,
    /// Entity inputs plus the relation table.
    pub input: usize,
    pub graph_layers: usize,
    pub skip_flow: usize,
    pub decoder: usize,
    /// `ch(2ke + d + 2)`, printed for comparison with `decoder`.
    pub decoder_quoted_formula: usize,
    pub total: usize,
}

pub struct Forward {
    /// `[B, |E|]` raw candidate scores.
    pub scores: NodeId,
    pub history: EncodedHistory,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    store: ParamStore<T>,
    embedding: TemporalEmbedding,
    relations: RelationTable,
    encoder: GraphEncoder,
    decoder: Decoder,
}

impl<T: Scalar> Model<T> {
    /// Initializes every parameter from a ChaCha stream seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let embedding = TemporalEmbedding::init(
            &mut store,
            &mut rng,
            config.num_entities,
            d,
            config.num_snapshots,
            !config.has_ablation(Ablation::Dynamic),
        );
        let relations = RelationTable::init(&mut store, &mut rng, config.num_base_relations, d);
        let encoder = GraphEncoder::init(
            &mut store,
            &mut rng,
            EncoderConfig {
                dim: d,
                layers: config.layers,
                composition: config.composition,
                dropout: config.dropout,
                rrelu_lower: config.rrelu_lower,
                rrelu_upper: config.rrelu_upper,
                skip: config.skip_flow(),
                attention_score: config.attention_score,
            },
        );
        let decoder = Decoder::init(
            &mut store,
            &mut rng,
            DecoderConfig {
                kind: config.decoder,
                dim: d,
                channels: config.channels,
                kernel_size: config.kernel_size,
                dropout: config.dropout,
                bias: config.decoder_bias,
            },
        )?;
        Ok(Self {
            config,
            store,
            embedding,
            relations,
            encoder,
            decoder,
        })
    }

    /// Rebuilds a model around previously trained parameters.
    pub fn from_parameters(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.store.replace_values(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn embedding(&self) -> &TemporalEmbedding {
        &self.embedding
    }

    pub fn relation_table(&self) -> &RelationTable {
        &self.relations
    }

    pub fn encoder(&self) -> &GraphEncoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Copies every parameter whose name and shape also exist in `other`.
    /// Returns how many were copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for (name, value) in other.iter() {
            if let Some(mine) = self.store.by_name_mut(name) {
                if mine.shape() == value.shape() {
                    *mine = value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    fn check_inputs(&self, snapshots: &[Snapshot], batch: &QueryBatch) -> Result<()> {
        let e = self.config.num_entities;
        if batch.num_entities() != e {
            return Err(Error::invalid(
                "forward",
                format!(
                    "batch built for {} entities, model has {e}",
                    batch.num_entities()
                ),
            ));
        }
        if let Some(s) = snapshots.iter().find(|s| s.num_entities() != e) {
            return Err(Error::invalid(
                "forward",
                format!(
                    "snapshot {} has {} entities, model has {e}",
                    s.timestamp,
                    s.num_entities()
                ),
            ));
        }
        if batch.queries.is_empty() {
            return Err(Error::invalid("forward", "empty query batch"));
        }
        let r = 2 * self.config.num_base_relations;
        if let Some(q) = batch.queries.iter().find(|q| q.relation >= r) {
            return Err(Error::OutOfRange {
                what: "query relation",
                index: q.relation,
                size: r,
            });
        }
        Ok(())
    }

    /// Encodes the history before `batch.timestamp` and scores every
    /// candidate object for each query.
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        snapshots: &[Snapshot],
        batch: &QueryBatch,
        probe: AttentionProbe,
    ) -> Result<Forward> {
        self.check_inputs(snapshots, batch)?;
        let history = self.encoder.encode_sequence(
            tape,
            bound,
            &self.embedding,
            &self.relations,
            snapshots,
            batch,
            self.config.history_length,
            probe,
        )?;
        let subjects = tape.gather_rows(history.states, &batch.subjects())?;
        let relations = tape.gather_rows(self.relations.all(bound), &batch.relations())?;
        let scores = self
            .decoder
            .score_all(tape, bound, subjects, relations, history.states)?;
        Ok(Forward { scores, history })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        snapshots: &[Snapshot],
        batch: &QueryBatch,
    ) -> Result<Forward> {
        self.forward_with(tape, bound, snapshots, batch, AttentionProbe::default())
    }

    /// Mean classification loss of `batch`, as a scalar node on `tape`.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        snapshots: &[Snapshot],
        batch: &QueryBatch,
    ) -> Result<NodeId> {
        let out = self.forward(tape, bound, snapshots, batch)?;
        classification_loss(tape, out.scores, &batch.objects())
    }

    /// Evaluation-mode scores, `[B, |E|]`.
    pub fn scores(&self, snapshots: &[Snapshot], batch: &QueryBatch) -> Result<Array<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, snapshots, batch)?;
        Ok(tape.value(out.scores).clone())
    }

    pub fn parameter_report(&self) -> ParameterReport {
        let entity_input = self.embedding.parameter_count();
        let relation_table = self.relations.parameter_count();
        let graph_layers = self.encoder.graph_parameter_count();
        let skip_flow = self.encoder.skip_parameter_count();
        let decoder = self.decoder.parameter_count();
        ParameterReport {
            entity_input,
            relation_table,
            input: entity_input + relation_table,
            graph_layers,
            skip_flow,
            decoder,
            decoder_quoted_formula: self.decoder.quoted_parameter_formula(),
            total: entity_input + relation_table + graph_layers + skip_flow + decoder,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_matches_store() {
        for ablations in [vec![], vec![Ablation::Skip], vec![Ablation::Dynamic]] {
            let mut cfg = ModelConfig::new(9, 3, 12);
            cfg.dim = 6;
            cfg.channels = 4;
            cfg.ablations = ablations;
            let m = Model::<f64>::new(cfg, 3).unwrap();
            let r = m.parameter_report();
            assert_eq!(r.total, m.params().num_scalars());
        }
    }

    #[test]
    fn skip_ablation_has_no_attention_weight() {
        let mut cfg = ModelConfig::new(9, 3, 12);
        cfg.dim = 6;
        cfg.ablations = vec![Ablation::Skip];
        let m = Model::<f64>::new(cfg, 3).unwrap();
        assert!(m.params().by_name("encoder.attention").is_none());
        assert_eq!(m.parameter_report().skip_flow, 0);
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = ModelConfig::new(9, 3, 12);
        cfg.history_length = 0;
        assert!(Model::<f64>::new(cfg.clone(), 0).is_err());
        cfg.history_length = 1;
        cfg.dropout = 1.0;
        assert!(Model::<f64>::new(cfg, 0).is_err());
    }

    #[test]
    fn ablation_names() {
        assert_eq!(
            "relation-aware".parse::<Ablation>().unwrap(),
            Ablation::RelationAware
        );
        assert!("bogus".parse::<Ablation>().is_err());
    }
}
