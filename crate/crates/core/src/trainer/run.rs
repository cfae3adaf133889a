use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment_slice, AugmentConfig};
use super::backbone::{Backbone, BackboneSpec, ModelKind};
use super::schedule::{ScheduleConfig, ScheduleKind};
use crate::corpus::Corpus;
use crate::labelgen::{compute_resample_plan, subsample_fraction, LabeledExample};
use crate::nn::{
    fit, top1_accuracy, Activation, Dataset, History, Linear, LossKind, Mlp, OptimizerConfig,
    Sampler, TrainConfig,
};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// How long a run lasts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "unit", content = "value", rename_all = "lowercase")]
pub enum RunLength {
    /// Passes over the (possibly subsampled) training set, rounded up to whole batches.
    Epochs(f64),
    Steps(usize),
}

impl RunLength {
    pub fn steps(&self, n_items: usize, batch_size: usize) -> usize {
        match *self {
            RunLength::Steps(s) => s,
            RunLength::Epochs(e) => (e * n_items as f64 / batch_size.max(1) as f64).ceil() as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub backbone: BackboneSpec,
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleKind,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub length: RunLength,
    pub augment: AugmentConfig,
    /// Draw batches by inverse-square-root label frequency instead of shuffling.
    pub resample: bool,
    /// Fraction of labeled examples used, as a nested seeded subsample.
    pub fraction: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::mlp_default(),
            loss: LossKind::MultiLabelSoftmax,
            optimizer: OptimizerConfig::adamw(1e-4),
            schedule: ScheduleKind::Cosine,
            base_lr: 3e-3,
            warmup_steps: 100,
            batch_size: 64,
            length: RunLength::Epochs(2.0),
            augment: AugmentConfig::none(),
            resample: false,
            fraction: 1.0,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "fraction {} not in (0, 1]",
                self.fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "base_lr {} must be positive",
                self.base_lr
            )));
        }
        if let RunLength::Epochs(e) = self.length {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("epochs {e} must be non-negative")));
            }
        }
        self.augment.validate()
    }

    /// The step schedule for a run of `total` steps. Warmup longer than the run is
    /// shortened to half the run, with a warning.
    pub fn schedule_for(&self, total: usize) -> ScheduleConfig {
        let mut warmup = self.warmup_steps;
        if total > 0 && warmup >= total {
            warmup = total / 2;
            log::warn!(
                "warmup of {} steps is not shorter than the {total}-step run; using {warmup}",
                self.warmup_steps
            );
        }
        if total == 0 {
            warmup = 0;
        }
        ScheduleConfig {
            kind: self.schedule,
            warmup_steps: warmup,
            total_steps: total,
            base_lr: self.base_lr,
        }
    }
}

/// Model inputs for the given records: base embeddings for MLPs, flattened pixels for ViTs.
pub fn model_inputs(corpus: &Corpus, ids: &[&str], kind: ModelKind) -> Result<(Vec<f64>, usize)> {
    let index = corpus.index_by_id();
    let mut out = Vec::new();
    let mut dim = 0;
    for id in ids {
        let rec = &corpus.records()[*index.get(id).ok_or_else(|| {
            Error::UnknownReference(format!("labeled id {id:?} is not in the corpus"))
        })?];
        let row: Vec<f64> = match kind {
            ModelKind::Mlp => rec.embedding_f64(),
            ModelKind::Vit => rec
                .pixels
                .as_ref()
                .ok_or_else(|| {
                    Error::invalid(format!("record {id:?} has no pixels for a vit backbone"))
                })?
                .as_slice()
                .iter()
                .map(|&v| v as f64)
                .collect(),
        };
        if dim == 0 {
            dim = row.len();
        } else if row.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("inputs of record {id:?}"),
                expected: dim,
                found: row.len(),
            });
        }
        out.extend(row);
    }
    Ok((out, dim))
}

fn linear_head(d: usize, k: usize, seed: u64) -> Result<Mlp> {
    Mlp::with_activations(&[d, k], &[Activation::Identity], seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    pub backbone: Backbone,
    pub head: Linear,
    pub history: History,
    pub steps: usize,
    pub n_examples: usize,
}

/// Trains a fresh backbone plus a linear head on labeled examples.
///
/// Seeds: backbone init, head init, batch order and subsample are separate streams
/// of `config.seed`; the subsample stream does not depend on the fraction, so
/// smaller fractions are subsets of larger ones.
pub fn pretrain(
    corpus: &Corpus,
    labels: &[LabeledExample],
    n_labels: usize,
    config: &TrainRunConfig,
) -> Result<Pretrained> {
    config.validate()?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("labeled examples".into()));
    }
    if let Some(bad) = labels
        .iter()
        .flat_map(|e| &e.labels)
        .find(|&&l| l as usize >= n_labels)
    {
        return Err(Error::invalid(format!(
            "label id {bad} out of range for {n_labels} labels"
        )));
    }
    let used = if config.fraction < 1.0 {
        subsample_fraction(labels, config.fraction, derive_seed(config.seed, 4))?
    } else {
        labels.to_vec()
    };
    if used.is_empty() {
        return Err(Error::EmptyInput(format!(
            "fraction {} leaves no examples",
            config.fraction
        )));
    }
    let kind = config.backbone.kind();
    let ids: Vec<&str> = used.iter().map(|e| e.id.as_str()).collect();
    let (inputs, dim) = model_inputs(corpus, &ids, kind)?;
    let data = Dataset::new(
        inputs,
        dim,
        used.iter()
            .map(|e| e.labels.iter().copied().collect())
            .collect(),
    )?;
    let sampler = if config.resample {
        Sampler::Weighted(compute_resample_plan(&used)?.weights)
    } else {
        Sampler::Shuffle
    };
    let steps = config.length.steps(used.len(), config.batch_size);
    let train = TrainConfig {
        loss: config.loss,
        optimizer: config.optimizer,
        schedule: config.schedule_for(steps),
        batch_size: config.batch_size,
        seed: derive_seed(config.seed, 3),
        log_every: config.log_every,
    };
    let backbone = Backbone::init(&config.backbone, dim, derive_seed(config.seed, 1))?;
    let head_seed = derive_seed(config.seed, 2);
    match backbone {
        Backbone::Mlp(enc) => {
            if !config.augment.is_identity() {
                log::warn!("augmentation applies to pixels only; ignored for the mlp backbone");
            }
            let depth = enc.layers().len();
            let mut model = Mlp::stack(&enc, &linear_head(enc.output_dim(), n_labels, head_seed)?)?;
            let history = fit(&mut model, &data, &train, &sampler, None)?;
            let (enc, head) = model.split_at(depth)?;
            Ok(Pretrained {
                backbone: Backbone::Mlp(enc),
                head: head.layers()[0].clone(),
                history,
                steps,
                n_examples: used.len(),
            })
        }
        Backbone::Vit(v) => {
            let mut model = v.with_head(n_labels, head_seed);
            let size = model.config.image_size;
            let aug = config.augment;
            let transform = move |row: &mut [f64], seed: u64| {
                augment_slice(row, size, size, &aug, seed)
                    .expect("augmentation validated with the run config");
            };
            let history = if aug.is_identity() {
                fit(&mut model, &data, &train, &sampler, None)?
            } else {
                fit(&mut model, &data, &train, &sampler, Some(&transform))?
            };
            let head = model.head.clone().expect("head attached above");
            Ok(Pretrained {
                backbone: Backbone::Vit(model.without_head()),
                head,
                history,
                steps,
                n_examples: used.len(),
            })
        }
    }
}

/// One downstream classification task over raw model inputs (single- or multi-label).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub n_classes: usize,
    pub train: Dataset,
    pub eval: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Train only the head on frozen embeddings.
    pub freeze_backbone: bool,
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleKind,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            freeze_backbone: true,
            loss: LossKind::MultiLabelSoftmax,
            optimizer: OptimizerConfig::adamw(0.0),
            schedule: ScheduleKind::Cosine,
            base_lr: 1e-2,
            warmup_steps: 0,
            steps: 300,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let schedule = ScheduleConfig {
            kind: self.schedule,
            warmup_steps: if self.steps == 0 {
                0
            } else {
                self.warmup_steps
            },
            total_steps: self.steps,
            base_lr: self.base_lr,
        };
        schedule.validate()?;
        Ok(TrainConfig {
            loss: self.loss,
            optimizer: self.optimizer,
            schedule,
            batch_size: self.batch_size,
            seed,
            log_every: (self.steps / 20).max(1),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskResult {
    pub name: String,
    /// Top-1 precision on the task's eval split.
    pub p_at_1: f64,
    pub head: Linear,
    pub history: History,
    /// The updated encoder when the backbone was not frozen.
    pub backbone: Option<Backbone>,
}

fn embed_dataset(backbone: &Backbone, data: &Dataset) -> Result<Dataset> {
    let emb = backbone.embed(data.inputs(), data.len())?;
    Dataset::new(emb, backbone.embedding_dim(), data.labels().to_vec())
}

/// Fine-tunes one head per task; tasks are independent and run in parallel.
pub fn finetune(
    backbone: &Backbone,
    tasks: &[TaskData],
    config: &FinetuneConfig,
) -> Result<Vec<TaskResult>> {
    for t in tasks {
        if t.n_classes < 2 {
            return Err(Error::invalid(format!(
                "task {:?} has {} classes; need at least 2",
                t.name, t.n_classes
            )));
        }
    }
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| finetune_task(backbone, task, config, derive_seed(config.seed, i as u64)))
        .collect()
}

pub(crate) fn finetune_task(
    backbone: &Backbone,
    task: &TaskData,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<TaskResult> {
    let train = config.train_config(derive_seed(seed, 1))?;
    let head_seed = derive_seed(seed, 2);
    if config.freeze_backbone {
        let tr = embed_dataset(backbone, &task.train)?;
        let ev = embed_dataset(backbone, &task.eval)?;
        let mut head = linear_head(backbone.embedding_dim(), task.n_classes, head_seed)?;
        let history = fit(&mut head, &tr, &train, &Sampler::Shuffle, None)?;
        return Ok(TaskResult {
            name: task.name.clone(),
            p_at_1: top1_accuracy(&head, &ev),
            head: head.layers()[0].clone(),
            history,
            backbone: None,
        });
    }
    match backbone {
        Backbone::Mlp(enc) => {
            let depth = enc.layers().len();
            let mut model = Mlp::stack(
                enc,
                &linear_head(enc.output_dim(), task.n_classes, head_seed)?,
            )?;
            let history = fit(&mut model, &task.train, &train, &Sampler::Shuffle, None)?;
            let p = top1_accuracy(&model, &task.eval);
            let (enc, head) = model.split_at(depth)?;
            Ok(TaskResult {
                name: task.name.clone(),
                p_at_1: p,
                head: head.layers()[0].clone(),
                history,
                backbone: Some(Backbone::Mlp(enc)),
            })
        }
        Backbone::Vit(v) => {
            let mut model = v.with_head(task.n_classes, head_seed);
            let history = fit(&mut model, &task.train, &train, &Sampler::Shuffle, None)?;
            let p = top1_accuracy(&model, &task.eval);
            Ok(TaskResult {
                name: task.name.clone(),
                p_at_1: p,
                head: model.head.clone().expect("head attached above"),
                history,
                backbone: Some(Backbone::Vit(model.without_head())),
            })
        }
    }
}

/// Embeddings keyed by record id, computed in one batch.
pub fn embed_records(
    backbone: &Backbone,
    corpus: &Corpus,
    ids: &[&str],
) -> Result<HashMap<String, Vec<f64>>> {
    let (inputs, _) = model_inputs(corpus, ids, backbone.kind())?;
    let emb = backbone.embed(&inputs, ids.len())?;
    let d = backbone.embedding_dim();
    Ok(ids
        .iter()
        .zip(emb.chunks_exact(d))
        .map(|(id, e)| (id.to_string(), e.to_vec()))
        .collect())
}
