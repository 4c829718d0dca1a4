use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::TrainConfig;
use super::model::{prepare_clip, stack_clips, JointsGait, LossRecord};
use crate::datapipe::{pk_sample, DatasetIndex, Split};
use crate::error::{Error, Result};
use crate::evalproto::EmbeddingSet;
use crate::exec::{self, Execution};
use crate::numerics::{Adam, Rng};
use crate::skeleton::SkeletonSequence;

const MODEL_STREAM: u64 = 0;
const SAMPLING_STREAM: u64 = 1;
const EMBED_STREAM_BASE: u64 = 1 << 32;
const EMBED_BATCH: usize = 16;

pub const LOSS_HEADER: &str = "iteration,total,triplet,arcface";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.iteration, self.total, self.triplet, self.arcface)
    }
}

/// PK-batched Adam optimisation of the fusion loss.
pub struct Trainer {
    cfg: TrainConfig,
    index: DatasetIndex,
    model: JointsGait,
    adam: Adam,
    rng: Rng,
    clips: Vec<Option<Arc<SkeletonSequence>>>,
    iteration: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, index: DatasetIndex) -> Result<Self> {
        cfg.validate()?;
        if index.layout().kind() != Some(cfg.layout) {
            return Err(Error::Config(format!(
                "model.layout is {} but the dataset uses {}",
                cfg.layout,
                index.layout().name()
            )));
        }
        let classes = index.train_classes();
        if classes < cfg.p {
            return Err(Error::Sampling(format!(
                "batch.p = {} identities requested but the training split has {classes}",
                cfg.p
            )));
        }
        let model = JointsGait::new(&cfg, classes, &mut Rng::with_stream(cfg.seed, MODEL_STREAM))?;
        Ok(Self {
            adam: Adam::new(cfg.optim),
            rng: Rng::with_stream(cfg.seed, SAMPLING_STREAM),
            clips: vec![None; index.len()],
            iteration: 0,
            cfg,
            index,
            model,
        })
    }

    pub fn model(&self) -> &JointsGait {
        &self.model
    }

    pub fn into_model(self) -> JointsGait {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn clip(&mut self, i: usize) -> Result<Arc<SkeletonSequence>> {
        if let Some(c) = &self.clips[i] {
            return Ok(c.clone());
        }
        let c = Arc::new(self.index.load(&self.index.entries()[i])?);
        self.clips[i] = Some(c.clone());
        Ok(c)
    }

    /// Samples a batch, prepares its clips and returns `([N, 2, T, V], labels)`.
    pub fn sample_batch(&mut self) -> Result<(crate::numerics::DenseArray, Vec<usize>)> {
        let batch = pk_sample(&self.index, self.cfg.p, self.cfg.k, &mut self.rng)?;
        let mut prepared = Vec::with_capacity(batch.entries.len());
        for &e in &batch.entries {
            let raw = self.clip(e)?;
            prepared.push(prepare_clip(&raw, self.cfg.t_target, &mut self.rng)?);
        }
        let x = stack_clips(prepared, self.cfg.t_target, self.model.joint_count())?;
        Ok((x, batch.labels))
    }

    pub fn step(&mut self) -> Result<LossRecord> {
        let (x, labels) = self.sample_batch()?;
        let exec = self.cfg.execution();
        let mut rec = self.model.forward_backward(&x, &labels, &self.cfg.loss, exec)?;
        if !rec.total.is_finite() {
            return Err(Error::DegenerateInput(format!(
                "non-finite loss at iteration {}",
                self.iteration + 1
            )));
        }
        self.adam.step(&mut self.model.parameters_mut());
        self.iteration += 1;
        rec.iteration = self.iteration;
        Ok(rec)
    }
}

/// Files written by [`run_training`].
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub loss_log: PathBuf,
    pub model: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub records: Vec<LossRecord>,
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint-{iteration:06}.ckpt"))
}

/// Trains for `cfg.iterations` steps, writing `config.txt`, `loss.csv`,
/// periodic checkpoints and `model.ckpt` under `cfg.output_dir`.
pub fn run_training(
    cfg: &TrainConfig,
    index: DatasetIndex,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<(JointsGait, TrainOutputs)> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut trainer = Trainer::new(cfg.clone(), index)?;
    let cfg_path = dir.join("config.txt");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let loss_log = dir.join("loss.csv");
    let mut log = BufWriter::new(File::create(&loss_log).map_err(|e| Error::io(&loss_log, e))?);
    let io = |e| Error::io(&loss_log, e);
    writeln!(log, "{LOSS_HEADER}").map_err(io)?;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();
    for _ in 0..cfg.iterations {
        let rec = trainer.step()?;
        writeln!(log, "{}", rec.csv_row()).map_err(io)?;
        log.flush().map_err(io)?;
        on_step(&rec);
        records.push(rec);
        if rec.iteration % cfg.checkpoint_every == 0 {
            let p = checkpoint_path(&dir, rec.iteration);
            trainer.model().save(&p)?;
            checkpoints.push(p);
        }
    }
    let model_path = dir.join("model.ckpt");
    trainer.model().save(&model_path)?;
    Ok((
        trainer.into_model(),
        TrainOutputs {
            loss_log,
            model: model_path,
            checkpoints,
            records,
        },
    ))
}

/// Embeds every clip of `splits`. Each clip's frames are drawn from its own
/// seeded stream, so results do not depend on batching or execution mode.
pub fn embed_index(
    model: &JointsGait,
    index: &DatasetIndex,
    splits: &[Split],
    seed: u64,
    exec: Execution,
) -> Result<EmbeddingSet> {
    let chosen: Vec<usize> = (0..index.len())
        .filter(|&i| splits.contains(&index.entries()[i].split))
        .collect();
    let mut set = EmbeddingSet::new(model.embedding_dim());
    for chunk in chosen.chunks(EMBED_BATCH) {
        let prepared = exec::map(exec, chunk.len(), |j| {
            let i = chunk[j];
            let raw = index.load(&index.entries()[i])?;
            prepare_clip(&raw, model.t_target(), &mut Rng::with_stream(seed, EMBED_STREAM_BASE + i as u64))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let x = stack_clips(prepared, model.t_target(), model.joint_count())?;
        let e = model.embed(&x, exec)?;
        for (j, &i) in chunk.iter().enumerate() {
            let entry = &index.entries()[i];
            let d = set.dim();
            set.push(
                entry.id.clone(),
                entry.meta.subject,
                entry.meta.view_deg,
                entry.meta.condition,
                &e.data()[j * d..(j + 1) * d],
            )?;
        }
    }
    Ok(set)
}
