use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::labelgen::LabeledExample;

/// Dataset size and label statistics.
///
/// With labels, `items` counts labeled examples and frequencies are over label ids;
/// without, `items` counts records and each record's annotated term ids stand in
/// for its labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub items: usize,
    pub distinct_labels: usize,
    pub total_assignments: usize,
    pub mean_labels_per_item: f64,
    pub label_frequency: BTreeMap<u32, usize>,
}

pub fn corpus_stats(corpus: &Corpus, labels: Option<&[LabeledExample]>) -> CorpusStats {
    let mut freq: BTreeMap<u32, usize> = BTreeMap::new();
    let items = match labels {
        Some(labels) => {
            for ex in labels {
                for &l in &ex.labels {
                    *freq.entry(l).or_default() += 1;
                }
            }
            labels.len()
        }
        None => {
            for r in corpus {
                let mut terms: Vec<u32> = r.annotations.iter().map(|a| a.term_id).collect();
                terms.sort_unstable();
                terms.dedup();
                for t in terms {
                    *freq.entry(t).or_default() += 1;
                }
            }
            corpus.len()
        }
    };
    let total: usize = freq.values().sum();
    CorpusStats {
        items,
        distinct_labels: freq.len(),
        total_assignments: total,
        mean_labels_per_item: if items == 0 {
            0.0
        } else {
            total as f64 / items as f64
        },
        label_frequency: freq,
    }
}
