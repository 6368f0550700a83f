use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use tkgc_core::checkpoint::AnyCheckpoint;
use tkgc_core::data::{
    compute_statistics, generate_synthetic, load_dataset, write_dataset, Split, TkgDataset,
};
use tkgc_core::eval::{
    config_digest, evaluate, evaluate_ensemble, EvalOptions, EvaluationReport, Scorer,
};
use tkgc_core::model::{Model, ModelConfig};
use tkgc_core::train::{augmented, fit, Precision, TrainConfig};
use tkgc_core::{Error, Result};

use crate::args::{Cli, Command, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { data, out } => {
            let stats = compute_statistics(&load_dataset(&data)?);
            emit(&stats, out.as_deref())
        }
        Command::Synth {
            pattern,
            entities,
            relations,
            timestamps,
            seed,
            out,
        } => {
            let data = generate_synthetic(seed, entities, relations, timestamps, pattern)?;
            write_dataset(&data, &out)?;
            log(json!({ "event": "synth", "out": out, "facts": data.num_facts() }));
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::Eval {
            data,
            checkpoint,
            split,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let loaded = LoadedModel::load(&checkpoint)?;
            loaded.check_dataset(&dataset)?;
            let data = augmented(&dataset)?;
            let snapshots = data.build_snapshots()?;
            let options = loaded.train.eval_options();
            let metrics = evaluate(loaded.scorer(), &data, &snapshots, split, options)?;
            emit(
                &EvaluationReport::new(split, metrics, loaded.digest.clone()),
                out.as_deref(),
            )
        }
        Command::Ensemble {
            data,
            checkpoints,
            pooling,
            split,
            raw_scores,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let models = checkpoints
                .iter()
                .map(|p| LoadedModel::load(p))
                .collect::<Result<Vec<_>>>()?;
            for m in &models {
                m.check_dataset(&dataset)?;
            }
            let single_phase = models[0].train.single_phase;
            if models.iter().any(|m| m.train.single_phase != single_phase) {
                return Err(Error::Config(
                    "ensemble members disagree on single-phase propagation".into(),
                ));
            }
            let data = augmented(&dataset)?;
            let snapshots = data.build_snapshots()?;
            let scorers: Vec<&dyn Scorer> = models.iter().map(LoadedModel::scorer).collect();
            let options = EvalOptions {
                single_phase,
                parallel: true,
            };
            let metrics = evaluate_ensemble(
                &scorers,
                &data,
                &snapshots,
                split,
                pooling,
                !raw_scores,
                options,
            )?;
            let digests: Vec<&str> = models.iter().map(|m| m.digest.as_str()).collect();
            let report = EvaluationReport::new(split, metrics, config_digest(&(digests, pooling))?);
            let provenance: Vec<_> = models
                .iter()
                .map(|m| {
                    json!({
                        "checkpoint": m.path,
                        "history_length": m.model.history_length,
                        "epoch": m.epoch,
                        "config_digest": m.digest,
                    })
                })
                .collect();
            let mut value = serde_json::to_value(&report)?;
            value["pooling"] = serde_json::to_value(pooling)?;
            value["normalized"] = json!(!raw_scores);
            value["models"] = json!(provenance);
            emit(&value, out.as_deref())
        }
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    apply_overrides(&mut config, &args);
    config.validate()?;
    let seeds = if args.seeds.is_empty() {
        vec![config.seed]
    } else {
        args.seeds.clone()
    };

    let dataset = load_dataset(&args.data)?;
    let data = augmented(&dataset)?;
    let snapshots = data.build_snapshots()?;
    let mut test_mrr = Vec::new();
    for &seed in &seeds {
        let config = TrainConfig {
            seed,
            ..config.clone()
        };
        let out = if seeds.len() == 1 {
            args.out.clone()
        } else {
            let mut name = args.out.clone().into_os_string();
            name.push(format!(".seed{seed}"));
            PathBuf::from(name)
        };
        let metrics = match config.precision {
            Precision::F32 => train_one::<f32>(&data, &snapshots, &config, &out)?,
            Precision::F64 => train_one::<f64>(&data, &snapshots, &config, &out)?,
        };
        test_mrr.push(metrics);
    }
    if seeds.len() > 1 {
        let mean = test_mrr.iter().sum::<f64>() / test_mrr.len() as f64;
        log(
            json!({ "event": "summary", "seeds": seeds, "test_mrr": test_mrr, "mean_test_mrr": mean }),
        );
    }
    Ok(())
}

fn train_one<T: tkgc_core::autodiff::Scalar>(
    data: &TkgDataset,
    snapshots: &[tkgc_core::data::Snapshot],
    config: &TrainConfig,
    out: &Path,
) -> Result<f64> {
    let model_config = config.model_config(data);
    let report = Model::<T>::new(model_config.clone(), config.seed)?.parameter_report();
    log(json!({
        "event": "config",
        "config": config,
        "model": model_config,
        "parameters": report,
        "out": out,
    }));
    let mut clock = Instant::now();
    let outcome = fit::<T>(data, config, |rec| {
        log(json!({
            "event": "epoch",
            "epoch": rec.epoch,
            "loss": rec.loss,
            "val_mrr": rec.val_mrr,
            "improved": rec.improved,
            "wall_ms": clock.elapsed().as_millis() as u64,
        }));
        clock = Instant::now();
    })?;
    outcome.best.save(out)?;
    let model = Model::from_parameters(outcome.best.model.clone(), outcome.best.params.clone())?;
    let test = evaluate(&model, data, snapshots, Split::Test, config.eval_options())?;
    log(json!({
        "event": "done",
        "checkpoint": out,
        "best_epoch": outcome.best.epoch,
        "epochs_run": outcome.epochs.len(),
        "stopped_early": outcome.stopped_early,
        "test_mrr": test.mrr,
    }));
    Ok(test.mrr)
}

fn apply_overrides(config: &mut TrainConfig, args: &TrainArgs) {
    if let Some(v) = args.dim {
        config.dim = v;
    }
    if let Some(v) = args.history_length {
        config.history_length = v as usize;
    }
    if let Some(v) = args.layers {
        config.layers = v as usize;
    }
    if let Some(v) = args.dropout {
        config.dropout = v;
    }
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.patience {
        config.patience = v as usize;
    }
    if let Some(v) = args.decoder {
        config.decoder = v;
    }
    if let Some(v) = args.composition {
        config.composition = v;
    }
    if !args.ablations.is_empty() {
        config.ablations = args.ablations.clone();
    }
    if let Some(v) = args.precision {
        config.precision = v;
    }
    if let Some(v) = args.channels {
        config.channels = v;
    }
    if let Some(v) = args.kernel_size {
        config.kernel_size = v;
    }
    if args.single_phase {
        config.single_phase = true;
    }
}

enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

struct LoadedModel {
    path: PathBuf,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    digest: String,
    inner: AnyModel,
}

impl LoadedModel {
    fn load(path: &Path) -> Result<Self> {
        let ckpt = AnyCheckpoint::load(path)?;
        let model = ckpt.model_config().clone();
        let train = ckpt.train_config().clone();
        let digest = config_digest(&(&model, &train))?;
        let epoch = ckpt.epoch();
        let inner = match ckpt {
            AnyCheckpoint::F32(c) => AnyModel::F32(Model::from_parameters(c.model, c.params)?),
            AnyCheckpoint::F64(c) => AnyModel::F64(Model::from_parameters(c.model, c.params)?),
        };
        Ok(Self {
            path: path.to_path_buf(),
            model,
            train,
            epoch,
            digest,
            inner,
        })
    }

    fn scorer(&self) -> &dyn Scorer {
        match &self.inner {
            AnyModel::F32(m) => m,
            AnyModel::F64(m) => m,
        }
    }

    fn check_dataset(&self, data: &TkgDataset) -> Result<()> {
        let m = &self.model;
        if m.num_entities != data.num_entities()
            || m.num_base_relations != data.num_base_relations()
        {
            return Err(Error::Config(format!(
                "checkpoint {} was trained for {} entities and {} relations; dataset has {} and {}",
                self.path.display(),
                m.num_entities,
                m.num_base_relations,
                data.num_entities(),
                data.num_base_relations()
            )));
        }
        Ok(())
    }
}

fn log(value: serde_json::Value) {
    println!("{value}");
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}
