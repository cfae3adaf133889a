//! Visual concreteness: how well a term can be predicted from item embeddings alone.
//!
//! Each term gets a small balanced binary classifier (items carrying the term vs an
//! equal number of items without it); its held-out top-1 accuracy is the term's
//! score. Terms scoring at or above a boundary form the visual dictionary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::IoContext;
use crate::nn::{
    top1_accuracy, train_classifier, Dataset, LossKind, Mlp, OptimizerConfig, TrainConfig,
};
use crate::trainer::ScheduleConfig;
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcretenessConfig {
    /// An item is a positive when it carries the term with confidence strictly above this.
    pub confidence_threshold: f64,
    pub min_positives: usize,
    pub train_fraction: f64,
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ConcretenessConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.9,
            min_positives: 20,
            train_fraction: 0.8,
            hidden: 32,
            steps: 300,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// Balanced positives/negatives for one term, split into train and eval.
///
/// Record ids are kept sorted before any sampling, so the split depends only on
/// the corpus contents and the seed, never on record order.
#[derive(Clone, Debug, PartialEq)]
pub struct TermDataset {
    pub term_id: u32,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub train: Dataset,
    pub eval: Dataset,
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
}

fn term_seed(seed: u64, term_id: u32) -> u64 {
    rng::derive_seed(seed, term_id as u64)
}

pub fn build_term_dataset(
    term_id: u32,
    corpus: &Corpus,
    config: &ConcretenessConfig,
) -> Result<TermDataset> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus".into()));
    }
    if !(0.0..1.0).contains(&config.train_fraction) || config.train_fraction == 0.0 {
        return Err(Error::invalid(format!(
            "train fraction {} not in (0, 1)",
            config.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| corpus.records()[a].id.cmp(&corpus.records()[b].id));
    let mut pos = Vec::new();
    let mut candidates = Vec::new();
    for &i in &order {
        match corpus.records()[i].confidence_of(term_id) {
            Some(c) if c > config.confidence_threshold => pos.push(i),
            Some(_) => {}
            None => candidates.push(i),
        }
    }
    let required = config.min_positives.max(1);
    if pos.len() < required {
        return Err(Error::Unscorable {
            term_id,
            positives: pos.len(),
            required,
        });
    }
    if candidates.len() < pos.len() {
        return Err(Error::invalid(format!(
            "term {term_id}: {} positives but only {} items without the term",
            pos.len(),
            candidates.len()
        )));
    }
    let seed = term_seed(config.seed, term_id);
    let mut r = rng::stream_rng(seed, 1);
    let mut picked: Vec<usize> = index::sample(&mut r, candidates.len(), pos.len()).into_vec();
    picked.sort_unstable();
    let neg: Vec<usize> = picked.into_iter().map(|j| candidates[j]).collect();

    // Stratified split: the same fraction of each class goes to train.
    let mut split = rng::stream_rng(seed, 2);
    let n_train =
        ((pos.len() as f64 * config.train_fraction).round() as usize).clamp(1, pos.len() - 1);
    let mut pos_s = pos.clone();
    let mut neg_s = neg.clone();
    pos_s.shuffle(&mut split);
    neg_s.shuffle(&mut split);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (items, label) in [(&pos_s, 1u32), (&neg_s, 0u32)] {
        train.extend(items[..n_train].iter().map(|&i| (i, label)));
        eval.extend(items[n_train..].iter().map(|&i| (i, label)));
    }
    let records = corpus.records();
    let to_dataset = |part: &[(usize, u32)]| -> Result<(Dataset, Vec<String>)> {
        let rows: Vec<Vec<f64>> = part
            .iter()
            .map(|&(i, _)| records[i].embedding_f64())
            .collect();
        let labels = part.iter().map(|&(_, l)| vec![l]).collect();
        let ids = part.iter().map(|&(i, _)| records[i].id.clone()).collect();
        Ok((Dataset::from_rows(&rows, labels)?, ids))
    };
    let (train_ds, train_ids) = to_dataset(&train)?;
    let (eval_ds, eval_ids) = to_dataset(&eval)?;
    Ok(TermDataset {
        term_id,
        positives: pos.iter().map(|&i| records[i].id.clone()).collect(),
        negatives: neg.iter().map(|&i| records[i].id.clone()).collect(),
        train: train_ds,
        eval: eval_ds,
        train_ids,
        eval_ids,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term_id: u32,
    /// Held-out accuracy; `None` when the term has too few positives.
    pub score: Option<f64>,
    pub n_positives: usize,
    pub n_eval: usize,
}

/// Trains the term's balanced classifier and returns its held-out accuracy.
pub fn score_term(term_id: u32, corpus: &Corpus, config: &ConcretenessConfig) -> Result<TermScore> {
    let data = build_term_dataset(term_id, corpus, config)?;
    let seed = term_seed(config.seed, term_id);
    let model = Mlp::new(
        &[data.train.dim(), config.hidden, 2],
        rng::derive_seed(seed, 3),
    )?;
    let train = TrainConfig {
        loss: LossKind::MultiLabelSoftmax,
        optimizer: OptimizerConfig::adamw(0.0),
        schedule: ScheduleConfig::cosine(config.learning_rate, 0, config.steps),
        batch_size: config.batch_size,
        seed: rng::derive_seed(seed, 4),
        log_every: config.steps.max(1),
    };
    let (model, _) = train_classifier(&model, &data.train, &train)?;
    Ok(TermScore {
        term_id,
        score: Some(top1_accuracy(&model, &data.eval)),
        n_positives: data.positives.len(),
        n_eval: data.eval.len(),
    })
}

/// Per-term scores keyed by term id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConcretenessReport {
    pub terms: BTreeMap<u32, TermScore>,
}

impl ConcretenessReport {
    /// Scores every listed term in parallel. Unscorable terms are kept with no score.
    pub fn score(corpus: &Corpus, term_ids: &[u32], config: &ConcretenessConfig) -> Result<Self> {
        let scored: Vec<Result<TermScore>> = term_ids
            .par_iter()
            .map(|&t| match score_term(t, corpus, config) {
                Err(Error::Unscorable { positives, .. }) => Ok(TermScore {
                    term_id: t,
                    score: None,
                    n_positives: positives,
                    n_eval: 0,
                }),
                other => other,
            })
            .collect();
        let mut terms = BTreeMap::new();
        for s in scored {
            let s = s?;
            terms.insert(s.term_id, s);
        }
        Ok(Self { terms })
    }

    pub fn retained_count(&self, boundary: f64) -> usize {
        self.terms
            .values()
            .filter(|t| t.score.is_some_and(|s| s >= boundary))
            .count()
    }

    /// `concreteness.jsonl`: one `{"tid","score","npos","neval"}` object per term.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in self.terms.values() {
            let line = serde_json::json!({
                "tid": t.term_id,
                "score": t.score,
                "npos": t.n_positives,
                "neval": t.n_eval,
            });
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            tid: u32,
            score: Option<f64>,
            npos: usize,
            #[serde(default)]
            neval: usize,
        }
        let mut terms = BTreeMap::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let l: Line = serde_json::from_str(line)
                .map_err(|e| Error::malformed(path, format!("line {}: {e}", n + 1)))?;
            if l.score.is_some_and(|s| !(0.0..=1.0).contains(&s)) {
                return Err(Error::malformed(
                    path,
                    format!("line {}: score outside [0, 1]", n + 1),
                ));
            }
            let entry = TermScore {
                term_id: l.tid,
                score: l.score,
                n_positives: l.npos,
                n_eval: l.neval,
            };
            if terms.insert(l.tid, entry).is_some() {
                return Err(Error::DuplicateId(format!("term {}", l.tid)));
            }
        }
        Ok(Self { terms })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_jsonl(&text, path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualDictionary {
    pub boundary: f64,
    pub terms: BTreeSet<u32>,
}

impl VisualDictionary {
    pub fn contains(&self, term_id: u32) -> bool {
        self.terms.contains(&term_id)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::malformed(path, format!("visual dictionary: {e}")))
    }
}

/// Terms with a score at or above `boundary`; unscorable terms never qualify.
pub fn build_visual_dictionary(report: &ConcretenessReport, boundary: f64) -> VisualDictionary {
    VisualDictionary {
        boundary,
        terms: report
            .terms
            .values()
            .filter(|t| t.score.is_some_and(|s| s >= boundary))
            .map(|t| t.term_id)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, 1]`; a score of exactly 1 falls in the last bin.
pub fn score_histogram(report: &ConcretenessReport, bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for s in report.terms.values().filter_map(|t| t.score) {
        counts[((s * bins as f64) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            low: i as f64 / bins as f64,
            high: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect()
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_low,bin_high,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.low, b.high, b.count);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Annotation, ContentRecord};

    fn report(scores: &[(u32, Option<f64>)]) -> ConcretenessReport {
        ConcretenessReport {
            terms: scores
                .iter()
                .map(|&(t, s)| {
                    (
                        t,
                        TermScore {
                            term_id: t,
                            score: s,
                            n_positives: 30,
                            n_eval: 12,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn boundary_is_inclusive() {
        let r = report(&[(1, Some(0.5)), (2, Some(0.7)), (3, None)]);
        assert_eq!(
            build_visual_dictionary(&r, 0.0).terms,
            BTreeSet::from([1, 2])
        );
        assert_eq!(build_visual_dictionary(&r, 0.7).terms, BTreeSet::from([2]));
        assert!(build_visual_dictionary(&r, 1.0 + 1e-9).is_empty());
        assert_eq!(r.retained_count(0.5), 2);
    }

    #[test]
    fn histogram_puts_one_in_last_bin() {
        let r = report(&[(1, Some(0.0)), (2, Some(1.0)), (3, Some(0.55))]);
        let h = score_histogram(&r, 10);
        assert_eq!(h[0].count, 1);
        assert_eq!(h[5].count, 1);
        assert_eq!(h[9].count, 1);
        assert!(histogram_csv(&h).starts_with("bin_low,bin_high,count\n0,0.1,1\n"));
    }

    #[test]
    fn absent_term_is_unscorable() {
        let c = Corpus::new(vec![ContentRecord::new("a", vec![0.0])]).unwrap();
        let e = build_term_dataset(5, &c, &ConcretenessConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Unscorable { positives: 0, .. }));
    }

    #[test]
    fn balanced_negatives_exclude_the_term() {
        let recs: Vec<_> = (0..300)
            .map(|i| {
                let r = ContentRecord::new(format!("r{i:03}"), vec![i as f32]);
                if i % 3 == 0 {
                    r.with_annotations(vec![Annotation::new(7, 0.95)])
                } else {
                    r
                }
            })
            .collect();
        let c = Corpus::new(recs).unwrap();
        let d = build_term_dataset(7, &c, &ConcretenessConfig::default()).unwrap();
        assert_eq!(d.positives.len(), 100);
        assert_eq!(d.negatives.len(), 100);
        assert_eq!(d.train.len() + d.eval.len(), 200);
        assert_eq!(d.eval.len(), 40);
        let pos: BTreeSet<_> = d.positives.iter().collect();
        assert!(d.negatives.iter().all(|n| !pos.contains(n)));
    }
}
