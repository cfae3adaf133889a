use std::collections::HashMap;
use std::path::Path;

use annoforge::clustering::ClusterLabelSpace;
use annoforge::corpus::{read_corpus, Corpus};
use annoforge::labelgen::{read_labels, LabeledExample};
use annoforge::nn::{Activation, Dataset, LossKind, Mlp, OptimizerConfig};
use annoforge::retrieval::{evaluate_retrieval, RetrievalEvalSet};
use annoforge::rng::{derive_seed, stream_rng};
use annoforge::trainer::{
    benchmark_throughput, embed_records, fewshot_csv, fewshot_sweep, model_inputs, scale_csv,
    AugmentConfig, Backbone, BackboneSpec, FinetuneConfig, ModelKind, RunLength, ScheduleKind,
    ShotCount, TaskData, TrainRunConfig,
};
use annoforge::vit::VitConfig;
use annoforge::Error;
use rand::seq::SliceRandom;
use serde::Serialize;

use super::{Context, Run};
use crate::args::{
    BenchArgs, EvalRetrievalArgs, FewshotArgs, FinetuneArgs, FinetuneOpts, PretrainArgs,
    PretrainOpts, ScaleSweepArgs,
};
use crate::{CliError, CliResult};

fn parse_loss(s: &str) -> CliResult<LossKind> {
    s.parse().map_err(|e: Error| CliError::usage(e.to_string()))
}

fn n_labels(run: &mut Run<'_>, opts: &PretrainOpts, labels: &[LabeledExample]) -> CliResult<usize> {
    match &opts.label_space {
        Some(p) => Ok(ClusterLabelSpace::load(&run.input(p)?)?.n_labels()),
        None => Ok(labels
            .iter()
            .flat_map(|e| e.labels.iter().copied())
            .max()
            .map_or(0, |m| m as usize + 1)),
    }
}

fn run_config(
    opts: &PretrainOpts,
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
) -> CliResult<TrainRunConfig> {
    let backbone = match opts.model.as_str() {
        "mlp" => BackboneSpec::Mlp {
            hidden: opts.hidden.clone(),
            embedding: opts.embedding,
        },
        _ => {
            let (h, w) = corpus.pixel_shape().ok_or_else(|| {
                Error::InvalidArgument("the vit model needs a corpus with pixels".into())
            })?;
            if h != w {
                return Err(Error::InvalidArgument(format!(
                    "vit needs square images, corpus has {h}x{w}"
                ))
                .into());
            }
            BackboneSpec::Vit {
                config: VitConfig {
                    image_size: h,
                    patch_size: opts.patch,
                    layers: opts.vit_layers,
                    heads: opts.vit_heads,
                    hidden_dim: opts.vit_dim,
                    mlp_dim: opts.vit_mlp,
                    n_classes: 0,
                    pooling: Default::default(),
                },
            }
        }
    };
    Ok(TrainRunConfig {
        backbone,
        loss: parse_loss(&opts.loss)?,
        optimizer: match opts.optimizer.as_str() {
            "sgd" => OptimizerConfig::sgd(opts.momentum, opts.weight_decay),
            _ => OptimizerConfig::adamw(opts.weight_decay),
        },
        schedule: match opts.schedule.as_str() {
            "linear" => ScheduleKind::LinearDecay,
            _ => ScheduleKind::Cosine,
        },
        base_lr: opts.lr,
        warmup_steps: opts.warmup,
        batch_size: opts.batch,
        length: opts
            .steps
            .map_or(RunLength::Epochs(opts.epochs), RunLength::Steps),
        augment: if opts.augment {
            AugmentConfig::standard()
        } else {
            AugmentConfig::none()
        },
        resample: opts.resample,
        fraction,
        seed,
        log_every: opts.log_every.max(1),
    })
}

fn head_checkpoint(head: &annoforge::nn::Linear) -> CliResult<Mlp> {
    Ok(Mlp::from_layers(
        vec![head.clone()],
        vec![Activation::Identity],
    )?)
}

#[derive(Serialize)]
struct PretrainSummary {
    model: ModelKind,
    params: usize,
    n_labels: usize,
    examples: usize,
    steps: usize,
    first_loss: Option<f64>,
    last_loss: Option<f64>,
}

pub fn pretrain(ctx: &Context, a: &PretrainArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "pretrain", a, &a.out)?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let labels = read_labels(&run.input(&a.opts.labels)?)?;
    let k = n_labels(&mut run, &a.opts, &labels)?;
    let config = run_config(&a.opts, &corpus, a.fraction, ctx.seed)?;
    let result = annoforge::trainer::pretrain(&corpus, &labels, k, &config)?;
    result.backbone.save(&run.output("model.bin"))?;
    head_checkpoint(&result.head)?.save(&run.output("head.bin"))?;
    run.write_text("history.csv", &result.history.to_csv())?;
    run.write_json(
        "pretrain.json",
        &PretrainSummary {
            model: result.backbone.kind(),
            params: result.backbone.param_count(),
            n_labels: k,
            examples: result.n_examples,
            steps: result.steps,
            first_loss: result.history.first_loss(),
            last_loss: result.history.last_loss(),
        },
    )?;
    run.finish()
}

/// Splits labeled items into train and eval by a seeded shuffle. Each item's class
/// is its smallest label.
fn task_from_labels(
    name: &str,
    corpus: &Corpus,
    labels: &[LabeledExample],
    kind: ModelKind,
    eval_fraction: f64,
    seed: u64,
) -> CliResult<TaskData> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(CliError::usage(format!(
            "--eval-fraction {eval_fraction} not in (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0x7A5C));
    let n_eval = (eval_fraction * labels.len() as f64).round() as usize;
    if n_eval == 0 || n_eval >= labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labeled items cannot be split with eval fraction {eval_fraction}",
            labels.len()
        ))
        .into());
    }
    let (eval_idx, train_idx) = order.split_at(n_eval);
    let classes: Vec<u32> = labels
        .iter()
        .map(|e| *e.labels.iter().next().expect("label sets are non-empty"))
        .collect();
    let n_classes = classes.iter().max().map_or(0, |&m| m as usize + 1);
    let build = |idx: &[usize]| -> CliResult<Dataset> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        let ids: Vec<&str> = idx.iter().map(|&i| labels[i].id.as_str()).collect();
        let (inputs, dim) = model_inputs(corpus, &ids, kind)?;
        Ok(Dataset::new(
            inputs,
            dim,
            idx.iter().map(|&i| vec![classes[i]]).collect(),
        )?)
    };
    Ok(TaskData {
        name: name.to_string(),
        n_classes,
        train: build(train_idx)?,
        eval: build(eval_idx)?,
    })
}

fn finetune_config(o: &FinetuneOpts, seed: u64) -> CliResult<FinetuneConfig> {
    Ok(FinetuneConfig {
        freeze_backbone: !o.unfreeze,
        loss: parse_loss(&o.loss)?,
        optimizer: OptimizerConfig::adamw(o.weight_decay),
        schedule: ScheduleKind::Cosine,
        base_lr: o.lr,
        warmup_steps: o.warmup,
        steps: o.steps,
        batch_size: o.batch,
        seed,
    })
}

#[derive(Serialize)]
struct FinetuneSummary<'a> {
    task: &'a str,
    n_classes: usize,
    n_train: usize,
    n_eval: usize,
    p_at_1: f64,
}

pub fn finetune(ctx: &Context, a: &FinetuneArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "finetune", a, &a.out)?;
    let backbone = Backbone::load(&run.input(&a.model)?)?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let labels = read_labels(&run.input(&a.opts.labels)?)?;
    let task = task_from_labels(
        "task",
        &corpus,
        &labels,
        backbone.kind(),
        a.opts.eval_fraction,
        ctx.seed,
    )?;
    let config = finetune_config(&a.opts, ctx.seed)?;
    let result = annoforge::trainer::finetune(&backbone, std::slice::from_ref(&task), &config)?
        .pop()
        .expect("one result per task");
    log::info!("eval P@1 {:.4}", result.p_at_1);
    head_checkpoint(&result.head)?.save(&run.output("head.bin"))?;
    if let Some(b) = &result.backbone {
        b.save(&run.output("model.bin"))?;
    }
    run.write_text("history.csv", &result.history.to_csv())?;
    run.write_json(
        "finetune.json",
        &FinetuneSummary {
            task: &task.name,
            n_classes: task.n_classes,
            n_train: task.train.len(),
            n_eval: task.eval.len(),
            p_at_1: result.p_at_1,
        },
    )?;
    run.finish()
}

fn embeddings_for(
    model: Option<&Backbone>,
    corpus: &Corpus,
    set: &RetrievalEvalSet,
) -> CliResult<HashMap<String, Vec<f64>>> {
    let mut ids: Vec<&str> = set.queries.iter().map(|q| q.id.as_str()).collect();
    ids.extend(
        set.products
            .iter()
            .chain(&set.distractors)
            .map(String::as_str),
    );
    if let Some(b) = model {
        return Ok(embed_records(b, corpus, &ids)?);
    }
    let index = corpus.index_by_id();
    ids.iter()
        .map(|id| {
            let i = index.get(id).ok_or_else(|| {
                Error::UnknownReference(format!("eval set id {id:?} is not in the corpus"))
            })?;
            Ok((id.to_string(), corpus.records()[*i].embedding_f64()))
        })
        .collect()
}

pub fn eval_retrieval(ctx: &Context, a: &EvalRetrievalArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "eval-retrieval", a, &a.out)?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let set = RetrievalEvalSet::load(&run.input(&a.evalset)?)?;
    let model = match &a.model {
        Some(p) => Some(Backbone::load(&run.input(p)?)?),
        None => None,
    };
    let emb = embeddings_for(model.as_ref(), &corpus, &set)?;
    let report = evaluate_retrieval(&set, &emb)?;
    log::info!(
        "P@1 {:.4}  avg P@20 {:.4}  R@P95 {:.4}",
        report.p_at_1,
        report.avg_p_at_20,
        report.r_at_p95
    );
    report.save(&run.output("metrics.json"))?;
    run.finish()
}

/// Architecture of an existing backbone, for a random-init twin.
fn spec_of(b: &Backbone) -> BackboneSpec {
    match b {
        Backbone::Mlp(m) => {
            let dims = m.dims();
            BackboneSpec::Mlp {
                hidden: dims[1..dims.len() - 1].to_vec(),
                embedding: dims[dims.len() - 1],
            }
        }
        Backbone::Vit(v) => BackboneSpec::Vit { config: v.config },
    }
}

pub fn fewshot(ctx: &Context, a: &FewshotArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "fewshot", a, &a.out)?;
    let mut backbones = Vec::new();
    for spec in &a.backbones {
        let (name, path) = spec.split_once('=').ok_or_else(|| {
            CliError::usage(format!("--backbone {spec:?} is not name=checkpoint"))
        })?;
        backbones.push((
            name.to_string(),
            Backbone::load(&run.input(Path::new(path))?)?,
        ));
    }
    let kind = backbones[0].1.kind();
    if backbones.iter().any(|(_, b)| b.kind() != kind) {
        return Err(CliError::usage(
            "all few-shot backbones must take the same inputs",
        ));
    }
    if a.random_baseline {
        let first = &backbones[0].1;
        let random = Backbone::init(
            &spec_of(first),
            first.input_dim(),
            derive_seed(ctx.seed, 0xBA5E),
        )?;
        backbones.push(("random".to_string(), random));
    }
    let counts = a
        .counts
        .iter()
        .map(|c| c.parse::<ShotCount>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let labels = read_labels(&run.input(&a.opts.labels)?)?;
    let task = task_from_labels(
        "task",
        &corpus,
        &labels,
        kind,
        a.opts.eval_fraction,
        ctx.seed,
    )?;
    let rows = fewshot_sweep(
        &backbones,
        &task,
        &counts,
        &finetune_config(&a.opts, ctx.seed)?,
    )?;
    run.write_text("fewshot.csv", &fewshot_csv(&rows))?;
    run.finish()
}

pub fn scale_sweep(ctx: &Context, a: &ScaleSweepArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "scale-sweep", a, &a.out)?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let labels = read_labels(&run.input(&a.opts.labels)?)?;
    let probe = read_corpus(&run.input(&a.probe_corpus)?)?;
    let set = RetrievalEvalSet::load(&run.input(&a.evalset)?)?;
    let k = n_labels(&mut run, &a.opts, &labels)?;
    let config = run_config(&a.opts, &corpus, 1.0, ctx.seed)?;
    let rows =
        annoforge::trainer::scale_sweep(&corpus, &labels, k, &a.fractions, &config, &probe, &set)?;
    run.write_text("scale.csv", &scale_csv(&rows))?;
    run.finish()
}

pub fn bench(ctx: &Context, a: &BenchArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "bench", a, &a.out)?;
    let (name, backbone) = match &a.model {
        Some(p) => {
            let path = run.input(p)?;
            let name = path
                .file_stem()
                .map_or("model".into(), |s| s.to_string_lossy().into_owned());
            (name, Backbone::load(&path)?)
        }
        None if a.arch == "vit" => {
            let config = VitConfig::desk(0);
            let b = Backbone::init(&BackboneSpec::Vit { config }, config.input_dim(), ctx.seed)?;
            ("vit-desk".to_string(), b)
        }
        None => (
            "mlp".to_string(),
            Backbone::init(&BackboneSpec::mlp_default(), a.input_dim, ctx.seed)?,
        ),
    };
    let reports = benchmark_throughput(
        &name,
        &backbone,
        &a.batch_sizes,
        a.trials,
        a.warmup,
        ctx.seed,
    )?;
    run.write_json("throughput.json", &reports)?;
    run.finish()
}
