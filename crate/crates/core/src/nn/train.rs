use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::mlp::{Mlp, MlpCache};
use super::optim::{OptimizerConfig, OptimizerState};
use super::Parameters;
use crate::rng::{self, derive_seed};
use crate::trainer::{lr_at_step, ScheduleConfig};
use crate::{Error, Result};

/// A model that maps row-major input batches to class logits.
pub trait Classifier: Parameters {
    type Cache;

    fn input_dim(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn forward_train(&self, x: &[f64], n: usize) -> (Vec<f64>, Self::Cache);
    /// Parameter gradients (aligned with [`Parameters::parameters`]) from logit gradients.
    fn backward(&self, cache: &Self::Cache, grad_logits: &[f64]) -> Vec<Vec<f64>>;

    fn predict(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.forward_train(x, n).0
    }
}

impl Classifier for Mlp {
    type Cache = MlpCache;

    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn n_classes(&self) -> usize {
        self.output_dim()
    }

    fn forward_train(&self, x: &[f64], n: usize) -> (Vec<f64>, MlpCache) {
        self.forward_cached(x, n)
    }

    fn backward(&self, cache: &MlpCache, grad_logits: &[f64]) -> Vec<Vec<f64>> {
        Mlp::backward(self, cache, grad_logits).0
    }

    fn predict(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.forward_rows(x, n)
    }
}

/// Input vectors with their positive label sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<Vec<u32>>) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::shape(format!(
                "{} inputs of width {dim} for {} label sets",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            dim,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<Vec<u32>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("ragged input rows"));
        }
        Self::new(rows.concat(), dim, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[Vec<u32>] {
        &self.labels
    }

    /// Rows and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<Vec<u32>>) {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.input(i));
            y.push(self.labels[i].clone());
        }
        (x, y)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (inputs, labels) = self.gather(indices);
        Dataset {
            inputs,
            dim: self.dim,
            labels,
        }
    }
}

/// How mini-batches are drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampler {
    /// Passes over seeded permutations, reshuffled each epoch.
    Shuffle,
    /// Independent draws with replacement, proportional to per-item weights.
    Weighted(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Record every `log_every`-th step (and always the last one).
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<StepRecord>,
}

impl History {
    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// `step,lr,loss` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
        }
        s
    }
}

/// Per-item input transform, called with a seed unique to (run seed, step, slot).
pub type Transform<'a> = &'a (dyn Fn(&mut [f64], u64) + Sync);

struct BatchSource<'a> {
    sampler: &'a Sampler,
    weighted: Option<WeightedIndex<f64>>,
    order: Vec<usize>,
    cursor: usize,
    rng: rng::Rng,
}

impl<'a> BatchSource<'a> {
    fn new(sampler: &'a Sampler, n: usize, seed: u64) -> Result<Self> {
        let weighted = match sampler {
            Sampler::Shuffle => None,
            Sampler::Weighted(w) => {
                if w.len() != n {
                    return Err(Error::shape(format!(
                        "{} sampling weights for {n} items",
                        w.len()
                    )));
                }
                Some(
                    WeightedIndex::new(w)
                        .map_err(|e| Error::invalid(format!("sampling weights: {e}")))?,
                )
            }
        };
        Ok(Self {
            sampler,
            weighted,
            order: (0..n).collect(),
            cursor: n,
            rng: rng::stream_rng(seed, 0xB47C),
        })
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        match self.sampler {
            Sampler::Weighted(_) => {
                let dist = self.weighted.as_ref().expect("weighted sampler");
                (0..batch).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Sampler::Shuffle => {
                let mut out = Vec::with_capacity(batch);
                while out.len() < batch {
                    if self.cursor == self.order.len() {
                        self.order.shuffle(&mut self.rng);
                        self.cursor = 0;
                    }
                    out.push(self.order[self.cursor]);
                    self.cursor += 1;
                }
                out
            }
        }
    }
}

/// Mini-batch training for `schedule.total_steps` steps.
///
/// Deterministic given `config.seed`: batches come from a seeded sampler and the
/// optimizer is the only writer of model state.
pub fn fit<M: Classifier>(
    model: &mut M,
    data: &Dataset,
    config: &TrainConfig,
    sampler: &Sampler,
    transform: Option<Transform<'_>>,
) -> Result<History> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training dataset".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "training inputs".into(),
            expected: model.input_dim(),
            found: data.dim(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let k = model.n_classes();
    if let Some(bad) = data.labels().iter().flatten().find(|&&l| l as usize >= k) {
        return Err(Error::invalid(format!(
            "label id {bad} out of range for {k} classes"
        )));
    }
    config.schedule.validate()?;

    let steps = config.schedule.total_steps;
    let mut history = History::default();
    let mut source = BatchSource::new(sampler, data.len(), config.seed)?;
    let mut opt = OptimizerState::new(config.optimizer);
    let log_every = config.log_every.max(1);
    for step in 0..steps {
        let idx = source.next(config.batch_size);
        let (mut x, y) = data.gather(&idx);
        if let Some(t) = transform {
            let step_seed = derive_seed(config.seed, step as u64);
            for (j, row) in x.chunks_exact_mut(data.dim()).enumerate() {
                t(row, derive_seed(step_seed, j as u64));
            }
        }
        let n = idx.len();
        let (logits, cache) = model.forward_train(&x, n);
        let (loss, grad) = config.loss.evaluate(&logits, k, &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at step {step} is {loss}"
            )));
        }
        let lr = lr_at_step(&config.schedule, step)?;
        let grads = model.backward(&cache, &grad);
        opt.step(model.parameters_mut(), &grads, lr)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
                other => other,
            })?;
        if step % log_every == 0 || step + 1 == steps {
            history.records.push(StepRecord { step, lr, loss });
        }
    }
    Ok(history)
}

/// Trains an MLP with shuffled mini-batches; returns the trained copy.
pub fn train_classifier(
    model: &Mlp,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(Mlp, History)> {
    let mut m = model.clone();
    let history = fit(&mut m, data, config, &Sampler::Shuffle, None)?;
    Ok((m, history))
}

/// Index of the largest logit in each row (lowest index on ties).
pub fn argmax_rows(logits: &[f64], k: usize) -> Vec<usize> {
    logits
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose top logit is one of the row's positives.
pub fn top1_accuracy<M: Classifier>(model: &M, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let pred = argmax_rows(&model.predict(data.inputs(), data.len()), model.n_classes());
    let hits = pred
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| l.contains(&(**p as u32)))
        .count();
    hits as f64 / data.len() as f64
}
