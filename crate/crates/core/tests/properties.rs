use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tkgc_core::autodiff::{Array, Tape};
use tkgc_core::checkpoint::Checkpoint;
use tkgc_core::data::{parse_facts, Edge, Quadruplet, Snapshot, TkgDataset};
use tkgc_core::embedding::TemporalEmbedding;
use tkgc_core::encoder::{AttentionScore, Composition, EncoderConfig, GraphEncoder, SkipFlow};
use tkgc_core::eval::{ensemble_scores, rank_query, Pooling};
use tkgc_core::model::{Model, ModelConfig};
use tkgc_core::params::ParamStore;
use tkgc_core::train::TrainConfig;

fn facts(max_e: usize, max_r: usize, t: usize) -> impl Strategy<Value = Vec<Quadruplet>> {
    prop::collection::vec((0..max_e, 0..max_r, 0..max_e), 0..6).prop_map(move |v| {
        v.into_iter()
            .map(|(s, r, o)| Quadruplet::new(s, r, o, t))
            .collect()
    })
}

fn dataset() -> impl Strategy<Value = TkgDataset> {
    (
        facts(6, 3, 0),
        facts(6, 3, 1),
        facts(6, 3, 2),
        facts(6, 3, 3),
    )
        .prop_map(|(a, b, c, d)| {
            let mut train = a;
            train.extend(b);
            TkgDataset::new(6, 3, 4, train, c, d).unwrap()
        })
}

proptest! {
    #[test]
    fn augmentation_round_trips(data in dataset()) {
        let aug = data.add_inverses().unwrap();
        prop_assert_eq!(aug.num_facts(), 2 * data.num_facts());
        prop_assert_eq!(aug.num_relations(), 2 * data.num_base_relations());
        prop_assert_eq!(aug.strip_inverses(), data.clone());
        for q in data.facts() {
            let inv = q.inverse(3);
            prop_assert_eq!(inv.triple(), (q.object, q.relation + 3, q.subject));
            prop_assert_eq!(inv.timestamp, q.timestamp);
        }
        prop_assert!(aug.add_inverses().is_err());
    }

    #[test]
    fn filtering_only_improves_rank(
        scores in prop::collection::vec(-3i32..3, 2..30),
        gold_pick in any::<prop::sample::Index>(),
        filter in prop::collection::vec(any::<prop::sample::Index>(), 0..8),
    ) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let gold = gold_pick.index(scores.len());
        let filter: Vec<usize> = filter.iter().map(|i| i.index(scores.len())).collect();
        let filtered = rank_query(&scores, gold, &filter).unwrap();
        let raw = rank_query(&scores, gold, &[]).unwrap();
        prop_assert!(filtered >= 1);
        prop_assert!(filtered <= raw);
        let mut with_gold = filter.clone();
        with_gold.push(gold);
        prop_assert_eq!(rank_query(&scores, gold, &with_gold).unwrap(), filtered);
    }

    #[test]
    fn lowering_gold_score_never_helps(
        scores in prop::collection::vec(-5.0f64..5.0, 2..30),
        gold_pick in any::<prop::sample::Index>(),
        drop in 0.0f64..4.0,
    ) {
        let gold = gold_pick.index(scores.len());
        let before = rank_query(&scores, gold, &[]).unwrap();
        let mut lowered = scores.clone();
        lowered[gold] -= drop;
        let after = rank_query(&lowered, gold, &[]).unwrap();
        prop_assert!(after >= before);
        // Strict once the gold score falls below a competitor it used to beat.
        let passed = scores
            .iter()
            .enumerate()
            .any(|(c, &s)| c != gold && s <= scores[gold] && s > lowered[gold]);
        if passed {
            prop_assert!(1.0 / (after as f64) < 1.0 / (before as f64));
        }
    }

    #[test]
    fn loss_is_shift_invariant_and_nonnegative(
        scores in prop::collection::vec(-10.0f64..10.0, 1..20),
        gold_pick in any::<prop::sample::Index>(),
        shift in -50.0f64..50.0,
    ) {
        let gold = gold_pick.index(scores.len());
        let n = scores.len();
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Array::from_f64(&[n], &scores).unwrap());
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let b = tape.leaf(Array::from_f64(&[n], &shifted).unwrap());
        let la = tape.cross_entropy(a, &[gold]).unwrap();
        let lb = tape.cross_entropy(b, &[gold]).unwrap();
        let (la, lb) = (tape.value(la).item(), tape.value(lb).item());
        prop_assert!(la >= 0.0);
        prop_assert!((la - lb).abs() <= 1e-9);
        if n == 1 {
            prop_assert_eq!(la, 0.0);
        }
    }

    #[test]
    fn pooling_identical_vectors_is_identity(
        scores in prop::collection::vec(-5.0f64..5.0, 1..20),
        copies in 1usize..4,
    ) {
        let vectors = vec![scores.clone(); copies];
        let single = ensemble_scores(std::slice::from_ref(&scores), Pooling::Avg, true).unwrap();
        for pooling in [Pooling::Avg, Pooling::Max, Pooling::Min] {
            let pooled = ensemble_scores(&vectors, pooling, true).unwrap();
            for (p, s) in pooled.iter().zip(&single) {
                prop_assert!((p - s).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn seasonal_term_and_output_shape(t in 0usize..500, seed in any::<u64>()) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = TemporalEmbedding::init(&mut store, &mut rng, 3, 4, 50, true);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let all = emb.all_entities(&mut tape, &bound, t).unwrap();
        prop_assert_eq!(tape.shape(all), &[3, 4]);
        let w1 = tape.value(bound.ids()[2]).clone();
        let w1n = tape.leaf(w1);
        let seasonal = tape.periodic(w1n, t as f64).unwrap();
        prop_assert!(tape.value(seasonal).data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn edge_order_is_irrelevant(
        edges in prop::collection::vec((0usize..5, 0usize..4, 0usize..5), 1..20),
        seed in any::<u64>(),
        perm_seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let cfg = EncoderConfig {
            dim: 3,
            layers: 1,
            composition: Composition::Mult,
            dropout: 0.0,
            rrelu_lower: 0.125,
            rrelu_upper: 1.0 / 3.0,
            skip: SkipFlow::Disabled,
            attention_score: AttentionScore::Vector,
        };
        let enc = GraphEncoder::init(&mut store, &mut rng, cfg);
        let emb = TemporalEmbedding::init(&mut store, &mut rng, 5, 3, 4, true);
        let rel = tkgc_core::embedding::RelationTable::init(&mut store, &mut rng, 2, 3);
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|(subject, relation, object)| Edge { subject, relation, object })
            .collect();
        let run = |edges: &[Edge]| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let h = emb.all_entities(&mut tape, &bound, 1).unwrap();
            let snap = Snapshot::new(0, edges.to_vec(), 5);
            let out = enc.compgcn_layer(&mut tape, &bound, &snap, h, rel.all(&bound), 0).unwrap();
            tape.value(out).clone()
        };
        let a = run(&edges);
        use rand::seq::SliceRandom;
        edges.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        prop_assert_eq!(a, run(&edges));
    }

    #[test]
    fn parsed_facts_keep_their_fields(rows in prop::collection::vec((0usize..9, 0usize..4, 0usize..9, 0u64..1000), 1..20)) {
        let text: String = rows.iter().map(|(s, r, o, t)| format!("{s} {r}\t{o} {t} extra\n")).collect();
        let parsed = parse_facts(&text, "x.txt", 9, 4).unwrap();
        prop_assert_eq!(parsed.len(), rows.len());
        for (p, (s, r, o, t)) in parsed.iter().zip(&rows) {
            prop_assert_eq!((p.subject, p.relation, p.object, p.time), (*s, *r, *o, *t));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), dim in 1usize..6, epoch in 0usize..50) {
        let cfg = ModelConfig { dim, channels: 2, ..ModelConfig::new(4, 2, 5) };
        let model = Model::<f64>::new(cfg.clone(), seed).unwrap();
        let ckpt = Checkpoint {
            model: cfg,
            train: TrainConfig { seed, ..TrainConfig::default() },
            epoch,
            val_mrr_history: vec![0.5; epoch],
            params: model.params().clone(),
            optimizer: tkgc_core::autodiff::AdamState::new(Default::default()),
        };
        let bytes = ckpt.encode().unwrap();
        let back = Checkpoint::<f64>::decode(&bytes).unwrap();
        for (a, b) in ckpt.params.values().iter().zip(back.params.values()) {
            let bits = |x: &Array<f64>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(back, ckpt);
    }
}

fn resealed(mut bytes: Vec<u8>) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    let body = bytes.len() - 32;
    let digest = Sha256::digest(&bytes[..body]);
    bytes[body..].copy_from_slice(&digest);
    bytes
}

fn sample_checkpoint() -> Vec<u8> {
    let cfg = ModelConfig {
        dim: 2,
        channels: 1,
        ..ModelConfig::new(3, 1, 4)
    };
    let model = Model::<f64>::new(cfg.clone(), 0).unwrap();
    Checkpoint {
        model: cfg,
        train: TrainConfig::default(),
        epoch: 1,
        val_mrr_history: vec![0.25],
        params: model.params().clone(),
        optimizer: tkgc_core::autodiff::AdamState::new(Default::default()),
    }
    .encode()
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    // Mutations are resealed so they reach the header and payload checks.
    #[test]
    fn mutated_checkpoints_never_panic(
        edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
        cut in any::<prop::sample::Index>(),
        truncate in any::<bool>(),
    ) {
        let mut bytes = sample_checkpoint();
        for (at, b) in &edits {
            let i = at.index(bytes.len() - 32);
            bytes[i] = *b;
        }
        if truncate {
            let keep = cut.index(bytes.len() - 32).max(21);
            bytes.drain(keep..bytes.len() - 32);
        }
        let _ = tkgc_core::checkpoint::AnyCheckpoint::decode(&resealed(bytes));
    }

    #[test]
    fn arbitrary_dataset_text_never_panics(
        stat in "[0-9 ]{0,8}\n?",
        splits in prop::collection::vec("([0-9]{1,3}[ \t]){3}[0-9]{1,20}\n", 0..6).prop_map(|v| v.concat()),
        valid in "[0-9 \t\n]{0,40}",
    ) {
        if let Ok(d) = tkgc_core::data::parse_dataset(&stat, [&splits, &valid, ""], Default::default()) {
            prop_assert!(d.num_snapshots() as u64 <= tkgc_core::data::MAX_SNAPSHOTS);
        }
    }
}
