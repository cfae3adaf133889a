//! Desk-scale weakly-supervised dataset construction and pretraining.
//!
//! The crate turns a corpus of annotated items into a clustered, interest-scoped
//! label space and trains small backbones on it:
//!
//! - [`corpus`]: records, shard I/O, synthetic corpora with planted classes, and
//!   near-duplicate-aware splitting.
//! - [`concreteness`]: per-term visual concreteness scores and the visual dictionary.
//! - [`clustering`]: interest assignment and per-interest k-means over term embeddings.
//! - [`labelgen`]: the annotation → label pipeline, its ablation variants, and
//!   inverse-square-root resampling.
//! - [`nn`] and [`vit`]: a dense 64-bit neural core and a tiny Vision Transformer with
//!   hand-written backward passes.
//! - [`retrieval`]: binary codes, exact Hamming search, LSH near-duplicate detection and
//!   retrieval metrics.
//! - [`trainer`]: learning-rate schedules, augmentation, pretraining, fine-tuning and the
//!   few-shot, dataset-scale and throughput harnesses.
//! - [`report`]: CSV and SVG renderings of the analysis figures.
//!
//! Everything that draws random numbers takes an explicit seed, and every parallel
//! stage partitions work by a deterministic chunk index, so results do not depend
//! on the number of worker threads.

pub mod clustering;
pub mod concreteness;
pub mod corpus;
pub mod error;
pub mod labelgen;
pub mod nn;
pub mod report;
pub mod retrieval;
pub mod rng;
pub mod trainer;
pub mod vit;

pub use error::{Error, Result};
