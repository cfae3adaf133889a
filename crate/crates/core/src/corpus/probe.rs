//! Retrieval probes for synthetic corpora: fresh same-class queries and products,
//! plus distractors drawn around an unrelated set of centroids.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::synth::{generate_synthetic_corpus, sample_class_items, SyntheticCorpus, SyntheticSpec};
use super::{ContentRecord, Corpus, InterestTaxonomy, TermDictionary};
use crate::retrieval::{RetrievalEvalSet, RetrievalQuery};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    /// Fresh items per class; the first `queries_per_class` are queries, the rest products.
    pub per_class: usize,
    pub queries_per_class: usize,
    /// Distractors per product.
    pub distractor_ratio: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            per_class: 60,
            queries_per_class: 10,
            distractor_ratio: 2.75,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RetrievalProbe {
    /// Probe items grouped by class, then distractors.
    pub corpus: Corpus,
    pub eval_set: RetrievalEvalSet,
}

/// A query's ground truth is every product of its class. Distractors come from a
/// second synthetic corpus with its own centroids, so they are relevant to nothing.
pub fn retrieval_probe(
    source: &SyntheticCorpus,
    spec: &SyntheticSpec,
    dictionary: &TermDictionary,
    taxonomy: &InterestTaxonomy,
    probe: &ProbeSpec,
) -> Result<RetrievalProbe> {
    if probe.queries_per_class == 0 || probe.queries_per_class >= probe.per_class {
        return Err(Error::invalid(format!(
            "need 0 < queries_per_class ({}) < per_class ({})",
            probe.queries_per_class, probe.per_class
        )));
    }
    if !(probe.distractor_ratio >= 0.0 && probe.distractor_ratio.is_finite()) {
        return Err(Error::invalid("distractor_ratio must be non-negative"));
    }
    let classes: Vec<usize> = (0..spec.n_classes).collect();
    let items = sample_class_items(
        &source.centroids,
        &classes,
        probe.per_class,
        spec.noise_scale,
        derive_seed(probe.seed, 1),
    )?;

    let mut records = Vec::new();
    let mut queries = Vec::new();
    let mut products = Vec::new();
    let mut by_class: Vec<BTreeSet<String>> = vec![BTreeSet::new(); spec.n_classes];
    for (i, (emb, class)) in items.into_iter().enumerate() {
        let j = i % probe.per_class;
        let id = format!("probe-{class:04}-{j:04}");
        if j < probe.queries_per_class {
            queries.push((id.clone(), class));
        } else {
            by_class[class].insert(id.clone());
            products.push(id.clone());
        }
        records.push(ContentRecord::new(id, emb));
    }

    let n_distractors = (products.len() as f64 * probe.distractor_ratio).round() as usize;
    let mut distractors = Vec::with_capacity(n_distractors);
    if n_distractors > 0 {
        let other = SyntheticSpec {
            n_items: n_distractors,
            seed: derive_seed(probe.seed, 2),
            image_size: None,
            ..spec.clone()
        };
        let d = generate_synthetic_corpus(&other, dictionary, taxonomy)?;
        for (i, r) in d.corpus.into_records().into_iter().enumerate() {
            let id = format!("distractor-{i:06}");
            records.push(ContentRecord::new(id.clone(), r.embedding));
            distractors.push(id);
        }
    }

    let queries = queries
        .into_iter()
        .map(|(id, class)| RetrievalQuery {
            id,
            ground_truth: by_class[class].clone(),
        })
        .collect();
    Ok(RetrievalProbe {
        corpus: Corpus::new(records)?,
        eval_set: RetrievalEvalSet::new(queries, products, distractors)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_dictionary, DictionarySpec};

    #[test]
    fn probe_shape() {
        let tax = InterestTaxonomy::default_24();
        let dict = TermDictionary::new(
            synthetic_dictionary(&DictionarySpec::default(), &tax)
                .unwrap()
                .terms,
        )
        .unwrap();
        let spec = SyntheticSpec {
            n_items: 300,
            n_classes: 4,
            ..SyntheticSpec::default()
        };
        let s = generate_synthetic_corpus(&spec, &dict, &tax).unwrap();
        let probe = ProbeSpec {
            per_class: 12,
            queries_per_class: 2,
            distractor_ratio: 2.75,
            seed: 3,
        };
        let p = retrieval_probe(&s, &spec, &dict, &tax, &probe).unwrap();
        assert_eq!(p.eval_set.queries.len(), 8);
        assert_eq!(p.eval_set.products.len(), 40);
        assert_eq!(p.eval_set.distractors.len(), 110);
        assert_eq!(p.corpus.len(), 8 + 40 + 110);
        assert!(p
            .eval_set
            .queries
            .iter()
            .all(|q| q.ground_truth.len() == 10));
    }
}
