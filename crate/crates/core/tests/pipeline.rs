use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tkgc_core::autodiff::{AdamConfig, AdamState, Tape};
use tkgc_core::checkpoint::Checkpoint;
use tkgc_core::data::{
    generate_synthetic, Phase, Quadruplet, Snapshot, Split, SyntheticPattern, TkgDataset,
};
use tkgc_core::decoder::DecoderKind;
use tkgc_core::encoder::{AttentionProbe, QueryBatch};
use tkgc_core::eval::{evaluate, query_batches, EvalOptions, Scorer};
use tkgc_core::model::{Ablation, Model, ModelConfig};
use tkgc_core::train::{fit, train_epoch, TrainConfig};
use tkgc_core::Result;

fn small(e: usize, r: usize, t: usize) -> ModelConfig {
    ModelConfig {
        dim: 8,
        channels: 3,
        history_length: 2,
        ..ModelConfig::new(e, r, t)
    }
}

#[test]
fn single_training_timestamp_has_no_history() {
    let data = TkgDataset::new(
        3,
        1,
        3,
        vec![Quadruplet::new(0, 0, 1, 0)],
        vec![Quadruplet::new(1, 0, 2, 1)],
        vec![Quadruplet::new(2, 0, 0, 2)],
    )
    .unwrap()
    .add_inverses()
    .unwrap();
    let snapshots = data.build_snapshots().unwrap();
    let mut model = Model::<f64>::new(small(3, 1, 3), 0).unwrap();
    let mut opt = AdamState::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_epoch(&mut model, &mut opt, &data, &snapshots, false, &mut rng).unwrap_err();
    assert!(err.to_string().contains("no history"), "{err}");
}

#[test]
fn empty_validation_split_is_rejected() {
    let data = TkgDataset::new(
        3,
        1,
        3,
        vec![Quadruplet::new(0, 0, 1, 0), Quadruplet::new(0, 0, 1, 1)],
        vec![],
        vec![Quadruplet::new(2, 0, 0, 2)],
    )
    .unwrap();
    let config = TrainConfig {
        dim: 4,
        channels: 2,
        ..TrainConfig::default()
    };
    assert!(fit::<f64>(&data, &config, |_| {}).is_err());
}

#[test]
fn phase_pools_never_mix() {
    let data = generate_synthetic(3, 15, 4, 12, SyntheticPattern::UniformRandom)
        .unwrap()
        .add_inverses()
        .unwrap();
    let r = data.num_base_relations();
    for t in data.split_timestamps(Split::Train) {
        let batches = query_batches(&data, Split::Train, t, false).unwrap();
        assert_eq!(batches.len(), 2);
        for b in batches {
            let pooled = b.pooled_relations();
            match b.phase {
                Some(Phase::Original) => assert!(pooled.iter().all(|&x| x < r)),
                Some(Phase::Inverse) => assert!(pooled.iter().all(|&x| x >= r)),
                None => unreachable!(),
            }
            // No query's own inverse pairing is visible to its phase.
            for q in &b.queries {
                let inv = if q.relation < r {
                    q.relation + r
                } else {
                    q.relation - r
                };
                assert!(!b.pool(q.object).contains(&inv));
            }
        }
    }
}

#[test]
fn cyclic_training_loss_decreases() {
    let data = generate_synthetic(0, 20, 4, 30, SyntheticPattern::CyclicDeterministic)
        .unwrap()
        .add_inverses()
        .unwrap();
    let snapshots = data.build_snapshots().unwrap();
    let config = TrainConfig {
        dim: 32,
        history_length: 3,
        ..TrainConfig::default()
    };
    let mut model = Model::<f64>::new(config.model_config(&data), 0).unwrap();
    let mut opt = AdamState::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let losses: Vec<f64> = (0..5)
        .map(|_| train_epoch(&mut model, &mut opt, &data, &snapshots, false, &mut rng).unwrap())
        .collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn untrained_model_ranks_like_chance() {
    let data = generate_synthetic(11, 20, 4, 70, SyntheticPattern::UniformRandom)
        .unwrap()
        .add_inverses()
        .unwrap();
    let snapshots = data.build_snapshots().unwrap();
    let model = Model::<f64>::new(small(20, 4, 70), 5).unwrap();
    let mut ranks = Vec::new();
    for split in [Split::Valid, Split::Test] {
        let m = evaluate(&model, &data, &snapshots, split, EvalOptions::default()).unwrap();
        ranks.push((m.mrr, m.num_queries));
    }
    let n: usize = ranks.iter().map(|r| r.1).sum();
    let mrr = ranks.iter().map(|r| r.0 * r.1 as f64).sum::<f64>() / n as f64;
    let chance = (1..=20).map(|r| 1.0 / r as f64).sum::<f64>() / 20.0;
    assert!(n >= 500);
    assert!((mrr - chance).abs() <= 0.05, "mrr {mrr}, chance {chance}");
}

/// Scores the true answer of each query above everything else.
struct Oracle {
    data: TkgDataset,
}

impl Scorer for Oracle {
    fn num_entities(&self) -> usize {
        self.data.num_entities()
    }

    fn score_batch(&self, _: &[Snapshot], batch: &QueryBatch) -> Result<Vec<Vec<f64>>> {
        Ok(batch
            .queries
            .iter()
            .map(|q| {
                let mut row = vec![0.0; self.num_entities()];
                row[q.object] = 1.0;
                row
            })
            .collect())
    }
}

#[test]
fn perfect_scorer_gets_mrr_one() {
    let data = generate_synthetic(1, 20, 4, 20, SyntheticPattern::UniformRandom)
        .unwrap()
        .add_inverses()
        .unwrap();
    let snapshots = data.build_snapshots().unwrap();
    let oracle = Oracle { data: data.clone() };
    let m = evaluate(
        &oracle,
        &data,
        &snapshots,
        Split::Test,
        EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(m.mrr, 1.0);
    assert_eq!(m.hits1, 1.0);
}

#[test]
fn parallel_and_serial_evaluation_agree() {
    let data = generate_synthetic(2, 12, 3, 20, SyntheticPattern::UniformRandom)
        .unwrap()
        .add_inverses()
        .unwrap();
    let snapshots = data.build_snapshots().unwrap();
    let model = Model::<f64>::new(small(12, 3, 20), 1).unwrap();
    let serial = EvalOptions {
        single_phase: false,
        parallel: false,
    };
    let parallel = EvalOptions {
        single_phase: false,
        parallel: true,
    };
    assert_eq!(
        evaluate(&model, &data, &snapshots, Split::Test, serial).unwrap(),
        evaluate(&model, &data, &snapshots, Split::Test, parallel).unwrap()
    );
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let data = generate_synthetic(4, 12, 3, 14, SyntheticPattern::CyclicDeterministic).unwrap();
    let config = TrainConfig {
        dim: 8,
        channels: 2,
        epochs: 2,
        precision: tkgc_core::train::Precision::F32,
        ..TrainConfig::default()
    };
    let out = fit::<f32>(&data, &config, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.best.save(&path).unwrap();
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(loaded, out.best);
    assert!(loaded.optimizer.step_count() > 0);

    let aug = data.add_inverses().unwrap();
    let snapshots = aug.build_snapshots().unwrap();
    let before = Model::from_parameters(out.best.model.clone(), out.best.params.clone()).unwrap();
    let after = Model::from_parameters(loaded.model, loaded.params).unwrap();
    assert_eq!(
        evaluate(
            &before,
            &aug,
            &snapshots,
            Split::Test,
            EvalOptions::default()
        )
        .unwrap(),
        evaluate(
            &after,
            &aug,
            &snapshots,
            Split::Test,
            EvalOptions::default()
        )
        .unwrap()
    );
}

#[test]
fn mismatched_parameters_are_rejected() {
    let a = Model::<f64>::new(small(5, 2, 6), 0).unwrap();
    let other = ModelConfig {
        dim: 6,
        ..small(5, 2, 6)
    };
    assert!(Model::<f64>::from_parameters(other, a.params().clone()).is_err());
}

/// Sets every parameter of a one-entity, one-dimensional model by name.
fn scalar_model(ablations: Vec<Ablation>, history_length: usize) -> Model<f64> {
    let cfg = ModelConfig {
        dim: 1,
        layers: 1,
        history_length,
        decoder: DecoderKind::DistMult,
        ablations,
        ..ModelConfig::new(1, 1, 4)
    };
    let mut m = Model::<f64>::new(cfg, 0).unwrap();
    let set = |m: &mut Model<f64>, name: &str, v: &[f64]| {
        if let Some(p) = m.params_mut().by_name_mut(name) {
            p.data_mut().copy_from_slice(v);
        }
    };
    set(&mut m, "entity.static", &[0.5]);
    set(&mut m, "entity.trend", &[0.1]);
    set(&mut m, "entity.seasonal", &[0.25]);
    set(&mut m, "entity.projection", &[1.0, 0.0]);
    set(&mut m, "relation.table", &[0.3, -0.2]);
    set(&mut m, "encoder.layer0.aggregate", &[1.0]);
    set(&mut m, "encoder.layer0.self_loop", &[2f64.sqrt()]);
    set(&mut m, "encoder.attention", &[2.0]);
    m
}

#[test]
fn scalar_pipeline_matches_hand_computation() {
    let model = scalar_model(vec![], 2);
    let snapshots: Vec<Snapshot> = (0..3).map(|t| Snapshot::new(t, vec![], 1)).collect();
    let batch =
        QueryBatch::new(2, Some(Phase::Original), &[Quadruplet::new(0, 0, 0, 2)], 1).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let out = model
        .forward(&mut tape, &bound, &snapshots, &batch)
        .unwrap();

    // Window t = 0, 1. The projection keeps only the static half.
    let h0 = 0.5;
    let h1 = h0 * 2f64.sqrt(); // first step: no earlier inputs, beta_0 = 1
    let current = h1 * 2f64.sqrt(); // = 1.0
    let score = (h0 + 0.3) * 2.0; // previous input 0.5, pooled relation 0.3
    let beta1 = score.exp() / (1.0 + score.exp());
    let h2 = (1.0 - beta1) * current + beta1 * h0;
    assert!((h2 - 0.584).abs() < 1e-3);
    assert!((tape.value(out.history.states).item() - h2).abs() < 1e-12);
    let expected = h2 * 0.3 * h2;
    assert!((tape.value(out.scores).item() - expected).abs() < 1e-12);
}

#[test]
fn one_step_without_skip_is_a_plain_graph_stack() {
    let model = scalar_model(vec![Ablation::Skip], 1);
    let snapshots: Vec<Snapshot> = (0..4).map(|t| Snapshot::new(t, vec![], 1)).collect();
    let batch =
        QueryBatch::new(3, Some(Phase::Original), &[Quadruplet::new(0, 0, 0, 3)], 1).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let out = model
        .forward(&mut tape, &bound, &snapshots, &batch)
        .unwrap();

    let mut t2 = Tape::new();
    let b2 = model.params().bind(&mut t2);
    let input = model.embedding().all_entities(&mut t2, &b2, 2).unwrap();
    let rel = model.relation_table().all(&b2);
    let layer = model
        .encoder()
        .compgcn_layer(&mut t2, &b2, &snapshots[2], input, rel, 0)
        .unwrap();
    assert_eq!(tape.value(out.history.states), t2.value(layer));
    assert_eq!(out.history.window, 2..3);
}

#[test]
fn short_history_is_truncated() {
    let model = Model::<f64>::new(
        ModelConfig {
            history_length: 5,
            ..small(4, 1, 6)
        },
        0,
    )
    .unwrap();
    let snapshots: Vec<Snapshot> = (0..6).map(|t| Snapshot::new(t, vec![], 4)).collect();
    let batch = QueryBatch::new(2, None, &[Quadruplet::new(0, 0, 1, 2)], 4).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let out = model
        .forward_with(
            &mut tape,
            &bound,
            &snapshots,
            &batch,
            AttentionProbe::default(),
        )
        .unwrap();
    assert_eq!(out.history.window, 0..2);
    assert_eq!(out.history.attention_weights.len(), 2);
}
