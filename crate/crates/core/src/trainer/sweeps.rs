use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::run::{
    embed_records, finetune_task, pretrain, FinetuneConfig, RunLength, TaskData, TrainRunConfig,
};
use super::schedule::schedule_len_for_fraction;
use crate::corpus::Corpus;
use crate::labelgen::LabeledExample;
use crate::retrieval::{eval_precision_at_k, PrecisionMode, RetrievalEvalSet};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

/// Training examples per class in a few-shot point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShotCount {
    Count(usize),
    #[serde(with = "all_marker")]
    All,
}

mod all_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected \"all\", got {s:?}"
            )))
        }
    }
}

impl std::fmt::Display for ShotCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShotCount::Count(c) => write!(f, "{c}"),
            ShotCount::All => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for ShotCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(ShotCount::All);
        }
        s.parse().map(ShotCount::Count).map_err(|_| {
            Error::invalid(format!(
                "shot count {s:?} is neither an integer nor \"all\""
            ))
        })
    }
}

/// Indices of up to `count` examples per class (class = smallest label), ascending.
///
/// Each class is drawn as a prefix of its own seeded permutation, so a smaller
/// count is always a subset of a larger one.
pub fn per_class_subset(labels: &[Vec<u32>], count: ShotCount, seed: u64) -> Vec<usize> {
    let ShotCount::Count(c) = count else {
        return (0..labels.len()).collect();
    };
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(&first) = l.iter().min() {
            by_class.entry(first).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for (class, mut members) in by_class {
        if c > members.len() {
            log::warn!(
                "class {class} has {} examples; {c} requested",
                members.len()
            );
        }
        members.shuffle(&mut stream_rng(seed, class as u64));
        out.extend(members.into_iter().take(c));
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewshotRow {
    pub backbone: String,
    pub count: ShotCount,
    pub p_at_1: f64,
    pub seed: u64,
}

/// Head fine-tuning on per-class subsamples of the task's train split, for every
/// (backbone, count) pair. Points run in parallel; rows come back in input order.
///
/// The `All` point uses the same seeds as [`finetune`](super::finetune) on the
/// single task, so it reproduces that result exactly.
pub fn fewshot_sweep(
    backbones: &[(String, Backbone)],
    task: &TaskData,
    counts: &[ShotCount],
    config: &FinetuneConfig,
) -> Result<Vec<FewshotRow>> {
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("few-shot counts must be sorted ascending"));
    }
    if task.n_classes < 2 {
        return Err(Error::invalid(format!(
            "task {:?} has {} classes; need at least 2",
            task.name, task.n_classes
        )));
    }
    let points: Vec<(usize, ShotCount)> = (0..backbones.len())
        .flat_map(|b| counts.iter().map(move |&c| (b, c)))
        .collect();
    points
        .par_iter()
        .map(|&(b, count)| {
            let idx =
                per_class_subset(task.train.labels(), count, derive_seed(config.seed, 0x5407));
            let sub = TaskData {
                name: task.name.clone(),
                n_classes: task.n_classes,
                train: task.train.subset(&idx),
                eval: task.eval.clone(),
            };
            let r = finetune_task(&backbones[b].1, &sub, config, derive_seed(config.seed, 0))?;
            Ok(FewshotRow {
                backbone: backbones[b].0.clone(),
                count,
                p_at_1: r.p_at_1,
                seed: config.seed,
            })
        })
        .collect()
}

/// `backbone,count,p_at_1,seed`.
pub fn fewshot_csv(rows: &[FewshotRow]) -> String {
    let mut s = String::from("backbone,count,p_at_1,seed\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.backbone, r.count, r.p_at_1, r.seed);
    }
    s
}

/// Spearman rank correlation, with tied values sharing their mean rank.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(format!(
            "spearman needs two equal series of ≥2 points ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let rx = ranks(x)?;
    let ry = ranks(y)?;
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::invalid(
            "spearman is undefined for a constant series",
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = mean;
        }
        i = j + 1;
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub fraction: f64,
    pub epochs: usize,
    pub steps: usize,
    pub examples: usize,
    pub p_at_1: f64,
    pub seed: u64,
}

/// Pretrains on each nested fraction of `labels` for the interpolated number of
/// epochs, then scores retrieval P@1 of the backbone's embeddings on `probe`.
pub fn scale_sweep(
    corpus: &Corpus,
    labels: &[LabeledExample],
    n_labels: usize,
    fractions: &[f64],
    config: &TrainRunConfig,
    probe_corpus: &Corpus,
    probe: &RetrievalEvalSet,
) -> Result<Vec<ScaleRow>> {
    let epochs: Vec<usize> = fractions
        .iter()
        .map(|&p| schedule_len_for_fraction(p))
        .collect::<Result<_>>()?;
    let mut probe_ids: Vec<&str> = probe.queries.iter().map(|q| q.id.as_str()).collect();
    probe_ids.extend(
        probe
            .products
            .iter()
            .chain(&probe.distractors)
            .map(String::as_str),
    );
    fractions
        .par_iter()
        .zip(&epochs)
        .map(|(&p, &e)| {
            let cfg = TrainRunConfig {
                fraction: p,
                length: RunLength::Epochs(e as f64),
                ..config.clone()
            };
            let run = pretrain(corpus, labels, n_labels, &cfg)?;
            let emb = embed_records(&run.backbone, probe_corpus, &probe_ids)?;
            Ok(ScaleRow {
                fraction: p,
                epochs: e,
                steps: run.steps,
                examples: run.n_examples,
                p_at_1: eval_precision_at_k(probe, &emb, 1, PrecisionMode::AtOne)?,
                seed: config.seed,
            })
        })
        .collect()
}

/// `fraction,epochs,steps,examples,p_at_1,seed`.
pub fn scale_csv(rows: &[ScaleRow]) -> String {
    let mut s = String::from("fraction,epochs,steps,examples,p_at_1,seed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.fraction, r.epochs, r.steps, r.examples, r.p_at_1, r.seed
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_known_values() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // Ranks of y with a tie: [1, 2.5, 2.5]; correlation with [1, 2, 3] is √3/2.
        let r = spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.5]).unwrap();
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn subsets_nest_and_clamp() {
        let labels: Vec<Vec<u32>> = (0..30).map(|i| vec![(i % 3) as u32]).collect();
        let five = per_class_subset(&labels, ShotCount::Count(5), 1);
        let ten = per_class_subset(&labels, ShotCount::Count(10), 1);
        assert_eq!(five.len(), 15);
        assert!(five.iter().all(|i| ten.contains(i)));
        assert_eq!(per_class_subset(&labels, ShotCount::Count(50), 1).len(), 30);
        assert_eq!(
            per_class_subset(&labels, ShotCount::All, 1),
            (0..30).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shot_count_text() {
        assert_eq!("all".parse::<ShotCount>().unwrap(), ShotCount::All);
        assert_eq!("5".parse::<ShotCount>().unwrap(), ShotCount::Count(5));
        assert!(ShotCount::Count(500) < ShotCount::All);
        assert_eq!(serde_json::to_string(&ShotCount::All).unwrap(), "\"all\"");
    }
}
