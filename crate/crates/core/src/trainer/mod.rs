//! Learning-rate schedules, augmentation, pretraining and fine-tuning loops, and the
//! few-shot, dataset-scale and throughput harnesses.

mod augment;
mod backbone;
mod bench;
mod run;
mod schedule;
mod sweeps;

pub use augment::{augment, augment_slice, mirror_in_place, AugmentConfig};
pub use backbone::{Backbone, BackboneSpec, ModelKind};
pub use bench::{benchmark_throughput, HardwareStamp, ThroughputReport};
pub use run::{
    embed_records, finetune, model_inputs, pretrain, FinetuneConfig, Pretrained, RunLength,
    TaskData, TaskResult, TrainRunConfig,
};
pub use schedule::{lr_at_step, schedule_len_for_fraction, ScheduleConfig, ScheduleKind};
pub use sweeps::{
    fewshot_csv, fewshot_sweep, per_class_subset, scale_csv, scale_sweep, spearman, FewshotRow,
    ScaleRow, ShotCount,
};
