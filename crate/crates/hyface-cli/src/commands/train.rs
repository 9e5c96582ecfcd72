//! `train`: stage 1 fits the geometry encoders against detected landmarks
//! from scratch; stage 2 resumes from a stage-1 checkpoint and alternates
//! appearance/synthesizer updates under the full objective.

use std::path::Path;
use std::sync::Arc;

use hyface_core::head::load_rig;
use hyface_nn::checkpoint::{save_checkpoint, TrainMeta};
use hyface_nn::model::ModelBundle;
use hyface_nn::store::ParamStore;
use hyface_nn::trainer::{
    load_samples, make_batch, train_stage1, write_training_log, BatchSampler, Stage2Trainer,
    StepRecord,
};
use hyface_nn::{Error, Result};

use crate::config::CliConfig;
use crate::manifest::RunManifest;
use crate::pipeline::resolve_dataset;

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const TRAINING_LOG: &str = "training_log.csv";

pub fn run(
    config: &CliConfig,
    data: &Path,
    stage: u8,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<RunManifest> {
    let (records, root) = resolve_dataset(data)?;
    let mut manifest = RunManifest::new("train");
    manifest.seed(config.train.seed);
    manifest.input("data", data.display());
    manifest.input("stage", stage);
    manifest.input("frames", records.len());
    manifest.output(CHECKPOINT_FILE);
    manifest.output(TRAINING_LOG);

    let log = match stage {
        1 => stage1(config, &records, &root, checkpoint, out)?,
        2 => stage2(config, &records, checkpoint, out)?,
        other => {
            return Err(Error::Validation(format!(
                "stage must be 1 or 2, got {other}"
            )))
        }
    };
    write_training_log(out.join(TRAINING_LOG), &log)?;
    if let Some(last) = log.last() {
        println!(
            "train stage {stage}: {} steps, final total loss {:.6}",
            log.len(),
            last.report.total
        );
    }
    Ok(manifest)
}

fn stage1(
    config: &CliConfig,
    records: &[hyface_core::data::SampleRecord],
    root: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Vec<StepRecord>> {
    if checkpoint.is_some() {
        return Err(Error::Validation(
            "stage-1 training starts from scratch; --checkpoint only applies to stage 2".into(),
        ));
    }
    let rig = load_rig(root.join("rig.safetensors"))?;
    let model_config = match &config.model {
        Some(m) => m.clone(),
        None => hyface_nn::model::ModelConfig::desk(&rig, config.resolution),
    };
    let mut store = ParamStore::new(config.train.seed);
    let bundle = ModelBundle::new(&mut store, &model_config, Arc::new(rig))?;
    let samples = load_samples(records, bundle.config.geometry.input_resolution)?;

    let log = train_stage1(&bundle, &store, &samples, &config.train)?;
    let meta = TrainMeta {
        seed: store.seed(),
        step: log.len() as u64,
        stage: 1,
    };
    save_checkpoint(
        out.join(CHECKPOINT_FILE),
        &store,
        &bundle.config,
        &bundle.rig,
        &meta,
    )?;
    Ok(log)
}

fn stage2(
    config: &CliConfig,
    records: &[hyface_core::data::SampleRecord],
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Vec<StepRecord>> {
    let checkpoint = checkpoint.ok_or_else(|| {
        Error::Validation("stage-2 training requires --checkpoint from a stage-1 run".into())
    })?;
    let (bundle, store, meta) = hyface_nn::checkpoint::load_model(checkpoint)?;
    let samples = load_samples(records, bundle.config.geometry.input_resolution)?;
    let mut trainer = Stage2Trainer::new(bundle, store, config.train.clone(), &meta)?;

    let steps = config.train.stage2_steps;
    let mut sampler = BatchSampler::new(samples.len(), config.train.batch_size, config.train.seed)?;
    let mut log = Vec::with_capacity(steps);
    for i in 0..steps {
        let batch = make_batch(&samples, &sampler.next_batch())?;
        let report = trainer.step(&batch)?;
        log.push(StepRecord {
            step: trainer.meta().step,
            report,
        });
        if (i + 1) % 200 == 0 || i + 1 == steps {
            let last = &log[log.len() - 1];
            eprintln!(
                "stage 2: step {}/{} total {:.6}",
                i + 1,
                steps,
                last.report.total
            );
        }
    }
    let meta = trainer.meta();
    let (bundle, store) = trainer.into_parts();
    save_checkpoint(
        out.join(CHECKPOINT_FILE),
        &store,
        &bundle.config,
        &bundle.rig,
        &meta,
    )?;
    Ok(log)
}
