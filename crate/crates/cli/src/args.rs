use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "annoforge",
    version,
    about = "Weak-label pipeline, pretraining and retrieval experiments"
)]
pub struct Cli {
    /// Master seed; every stage derives its own streams from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Flat `key=value` file; keys are long flag names, command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus, term dictionary, interest mappings and an optional retrieval probe.
    GenCorpus(GenCorpusArgs),
    /// Per-term visual concreteness scores.
    Concreteness(ConcretenessArgs),
    /// Visual dictionary and score histogram from concreteness scores.
    BuildDict(BuildDictArgs),
    /// Interest assignment and per-interest k-means label space.
    Cluster(ClusterArgs),
    /// Annotation → label pipeline (one ablation variant per run).
    Labelgen(LabelgenArgs),
    /// Inverse-square-root resampling plan and an optional sampled epoch.
    Resample(ResampleArgs),
    /// Near-duplicate detection on binary codes and a duplicate-aware split.
    DedupSplit(DedupSplitArgs),
    /// Pretrain a backbone on generated labels.
    Pretrain(PretrainArgs),
    /// Fine-tune a classification head on a labeled task.
    Finetune(FinetuneArgs),
    /// P@1, average P@20 and R@P95 of binary codes with distractors.
    EvalRetrieval(EvalRetrievalArgs),
    /// Head fine-tuning at increasing per-class sample counts.
    Fewshot(FewshotArgs),
    /// Pretraining on nested dataset fractions, scored by retrieval P@1.
    ScaleSweep(ScaleSweepArgs),
    /// Train/inference throughput and latency (machine-dependent).
    Bench(BenchArgs),
    /// CSV and SVG for one figure kind.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus(_) => "gen-corpus",
            Command::Concreteness(_) => "concreteness",
            Command::BuildDict(_) => "build-dict",
            Command::Cluster(_) => "cluster",
            Command::Labelgen(_) => "labelgen",
            Command::Resample(_) => "resample",
            Command::DedupSplit(_) => "dedup-split",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::EvalRetrieval(_) => "eval-retrieval",
            Command::Fewshot(_) => "fewshot",
            Command::ScaleSweep(_) => "scale-sweep",
            Command::Bench(_) => "bench",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub items: usize,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub zipf: f64,
    /// Embedding noise around the class centroid.
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub annotation_noise: f64,
    /// Side of square pixel grids; omit for embedding-only corpora.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub pixel_noise: f64,
    #[arg(long, default_value_t = 80)]
    pub noise_terms: usize,
    #[arg(long, default_value_t = 32)]
    pub text_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters_per_interest: usize,
    #[arg(long, default_value_t = 0.3)]
    pub polysemy: f64,
    #[arg(long, default_value_t = 0.1)]
    pub flagged: f64,
    /// Records per shard; 0 writes a single shard.
    #[arg(long, default_value_t = 0)]
    pub shard_size: usize,
    /// Fresh items per class in the retrieval probe; 0 skips the probe.
    #[arg(long, default_value_t = 0)]
    pub probe_per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub probe_queries: usize,
    #[arg(long, default_value_t = 2.75)]
    pub distractor_ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConcretenessArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub terms: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
    #[arg(long, default_value_t = 20)]
    pub min_positives: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Score only these term ids (default: the whole dictionary).
    #[arg(long, value_delimiter = ',')]
    pub term: Vec<u32>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildDictArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub boundary: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group = clap::ArgGroup::new("assignment").required(true).args(["assign_file", "prototypes"]))]
pub struct ClusterArgs {
    #[arg(long)]
    pub terms: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Explicit term → interests JSON map.
    #[arg(long)]
    pub assign_file: Option<PathBuf>,
    /// One prototype vector per interest (JSON array of arrays), for centroid assignment.
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub tau: f64,
    #[arg(long, default_value_t = 3)]
    pub top_m: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Size k per interest as ceil(terms / this) instead of a uniform k.
    #[arg(long)]
    pub terms_per_cluster: Option<usize>,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LabelgenArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub terms: PathBuf,
    #[arg(long)]
    pub label_space: PathBuf,
    #[arg(long)]
    pub visual_dict: Option<PathBuf>,
    #[arg(long)]
    pub no_visual_dict: bool,
    #[arg(long)]
    pub no_l1: bool,
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
    #[arg(long, default_value = "en")]
    pub language: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ResampleArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Weighted draws written to `epoch.txt`; 0 skips sampling.
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DedupSplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub bands: usize,
    #[arg(long, default_value_t = 7)]
    pub radius: u32,
    #[arg(long, default_value_t = 0.2)]
    pub eval_fraction: f64,
}

/// Backbone and optimization settings shared by `pretrain` and `scale-sweep`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainOpts {
    #[arg(long)]
    pub labels: PathBuf,
    /// Label space supplying the label count (default: largest label id + 1).
    #[arg(long)]
    pub label_space: Option<PathBuf>,
    #[arg(long, default_value = "mlp", value_parser = ["mlp", "vit"])]
    pub model: String,
    #[arg(long, value_delimiter = ',', default_value = "128")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub embedding: usize,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[arg(long, default_value_t = 2)]
    pub vit_layers: usize,
    #[arg(long, default_value_t = 4)]
    pub vit_heads: usize,
    #[arg(long, default_value_t = 64)]
    pub vit_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub vit_mlp: usize,
    #[arg(long, default_value = "softmax", value_parser = ["softmax", "bce"])]
    pub loss: String,
    #[arg(long, default_value = "adamw", value_parser = ["adamw", "sgd"])]
    pub optimizer: String,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value = "cosine", value_parser = ["cosine", "linear"])]
    pub schedule: String,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 2.0)]
    pub epochs: f64,
    /// Fixed step count; overrides `--epochs`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Mirror, crop and jitter (pixel models only).
    #[arg(long)]
    pub augment: bool,
    /// Draw batches by inverse-square-root label frequency.
    #[arg(long)]
    pub resample: bool,
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: PretrainOpts,
}

/// Downstream task and head-training settings shared by `finetune` and `fewshot`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneOpts {
    /// Task labels; an item's class is its smallest label id.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub eval_fraction: f64,
    /// Also update the backbone instead of training the head alone.
    #[arg(long)]
    pub unfreeze: bool,
    #[arg(long, default_value = "softmax", value_parser = ["softmax", "bce"])]
    pub loss: String,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: FinetuneOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub evalset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Backbone checkpoint; without one the records' base embeddings are binarized.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FewshotArgs {
    /// `name=checkpoint`; repeat the flag or separate with commas.
    #[arg(long = "backbone", required = true, value_delimiter = ',')]
    #[serde(rename = "backbone")]
    pub backbones: Vec<String>,
    /// Add a randomly initialized copy of the first backbone's architecture.
    #[arg(long)]
    pub random_baseline: bool,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,100,all")]
    pub counts: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: FinetuneOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScaleSweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub probe_corpus: PathBuf,
    #[arg(long)]
    pub evalset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1.0")]
    pub fractions: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: PretrainOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Checkpoint to time; without one a fresh backbone of `--arch` is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "mlp", value_parser = ["mlp", "vit"])]
    pub arch: String,
    /// Input width of a fresh MLP backbone.
    #[arg(long, default_value_t = 64)]
    pub input_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,8,32")]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long, value_parser = ["concreteness", "scale", "label-distribution", "fewshot"])]
    pub kind: String,
    /// `concreteness.jsonl` or a histogram CSV; `labels.jsonl`; `scale.csv`; `fewshot.csv`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram bins when the input is raw concreteness scores.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}
