use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{binarize, hamming, knn_search, BinaryIndex};
use crate::error::IoContext;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalRole {
    Product,
    Distractor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalQuery {
    pub id: String,
    pub ground_truth: BTreeSet<String>,
}

/// Queries with relevant products, the product corpus, and distractors.
///
/// The index searched during evaluation is products ∪ distractors; queries are
/// never indexed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalEvalSet {
    pub queries: Vec<RetrievalQuery>,
    pub products: Vec<String>,
    pub distractors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EvalLine {
    q: String,
    #[serde(default)]
    gt: Vec<String>,
    role: EvalRole,
}

impl RetrievalEvalSet {
    pub fn new(
        queries: Vec<RetrievalQuery>,
        products: Vec<String>,
        distractors: Vec<String>,
    ) -> Result<Self> {
        let set = Self {
            queries,
            products,
            distractors,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut indexed = HashSet::new();
        for p in &self.products {
            if !indexed.insert(p.as_str()) {
                return Err(Error::DuplicateId(p.clone()));
            }
        }
        for d in &self.distractors {
            if !indexed.insert(d.as_str()) {
                return Err(Error::invalid(format!(
                    "distractor {d:?} is also a product or listed twice"
                )));
            }
        }
        let products: HashSet<&str> = self.products.iter().map(String::as_str).collect();
        let mut queries = HashSet::new();
        for q in &self.queries {
            if !queries.insert(q.id.as_str()) {
                return Err(Error::DuplicateId(q.id.clone()));
            }
            if indexed.contains(q.id.as_str()) {
                return Err(Error::invalid(format!(
                    "query {:?} is also an indexed item",
                    q.id
                )));
            }
            if q.ground_truth.is_empty() {
                return Err(Error::invalid(format!(
                    "query {:?} has no ground truth",
                    q.id
                )));
            }
            if let Some(g) = q
                .ground_truth
                .iter()
                .find(|g| !products.contains(g.as_str()))
            {
                return Err(Error::UnknownReference(format!(
                    "query {:?} ground truth {g:?} is not a product",
                    q.id
                )));
            }
        }
        Ok(())
    }

    /// Products first, then distractors.
    pub fn indexed_ids(&self) -> Vec<String> {
        self.products
            .iter()
            .chain(&self.distractors)
            .cloned()
            .collect()
    }

    /// `evalset.jsonl`. A `product` line with ground truth is a query; a `product`
    /// line without ground truth is a product no query targets; a `distractor` line
    /// names one distractor. Products listed as ground truth need no line of their own.
    pub fn to_jsonl(&self) -> Result<String> {
        let targeted: HashSet<&String> =
            self.queries.iter().flat_map(|q| &q.ground_truth).collect();
        let mut lines = Vec::new();
        for q in &self.queries {
            lines.push(EvalLine {
                q: q.id.clone(),
                gt: q.ground_truth.iter().cloned().collect(),
                role: EvalRole::Product,
            });
        }
        for p in self.products.iter().filter(|p| !targeted.contains(p)) {
            lines.push(EvalLine {
                q: p.clone(),
                gt: Vec::new(),
                role: EvalRole::Product,
            });
        }
        for d in &self.distractors {
            lines.push(EvalLine {
                q: d.clone(),
                gt: Vec::new(),
                role: EvalRole::Distractor,
            });
        }
        let mut s = String::new();
        for l in lines {
            s.push_str(&serde_json::to_string(&l)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Products come back sorted by id.
    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut queries = Vec::new();
        let mut products = BTreeSet::new();
        let mut distractors = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let l: EvalLine = serde_json::from_str(line)
                .map_err(|e| Error::malformed(path, format!("line {}: {e}", n + 1)))?;
            match (l.role, l.gt.is_empty()) {
                (EvalRole::Product, false) => {
                    products.extend(l.gt.iter().cloned());
                    queries.push(RetrievalQuery {
                        id: l.q,
                        ground_truth: l.gt.into_iter().collect(),
                    });
                }
                (EvalRole::Product, true) => {
                    products.insert(l.q);
                }
                (EvalRole::Distractor, true) => distractors.push(l.q),
                (EvalRole::Distractor, false) => {
                    return Err(Error::malformed(
                        path,
                        format!("line {}: distractor with ground truth", n + 1),
                    ))
                }
            }
        }
        Self::new(queries, products.into_iter().collect(), distractors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_jsonl(&text, path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecisionMode {
    /// Fraction of queries whose first result is relevant.
    AtOne,
    /// Mean over queries of (relevant results in the top k) / k.
    Average,
}

fn lookup<'a>(embeddings: &'a HashMap<String, Vec<f64>>, id: &str) -> Result<&'a [f64]> {
    embeddings
        .get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::UnknownReference(format!("no embedding for {id:?}")))
}

fn build_index(
    set: &RetrievalEvalSet,
    embeddings: &HashMap<String, Vec<f64>>,
) -> Result<BinaryIndex> {
    let ids = set.indexed_ids();
    let embs = ids
        .iter()
        .map(|id| lookup(embeddings, id).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    BinaryIndex::from_embeddings(ids, &embs)
}

fn query_codes(
    set: &RetrievalEvalSet,
    embeddings: &HashMap<String, Vec<f64>>,
) -> Result<Vec<Vec<u64>>> {
    set.queries
        .par_iter()
        .map(|q| binarize(lookup(embeddings, &q.id)?))
        .collect()
}

/// Number of relevant items in each query's top `k`.
fn hits_per_query(
    set: &RetrievalEvalSet,
    index: &BinaryIndex,
    codes: &[Vec<u64>],
    k: usize,
) -> Result<Vec<usize>> {
    set.queries
        .par_iter()
        .zip(codes)
        .map(|(q, code)| {
            let top = knn_search(index, code, k)?;
            Ok(top
                .iter()
                .filter(|n| q.ground_truth.contains(&n.id))
                .count())
        })
        .collect()
}

pub fn eval_precision_at_k(
    set: &RetrievalEvalSet,
    embeddings: &HashMap<String, Vec<f64>>,
    k: usize,
    mode: PrecisionMode,
) -> Result<f64> {
    if set.queries.is_empty() {
        return Err(Error::EmptyInput("retrieval queries".into()));
    }
    let index = build_index(set, embeddings)?;
    let codes = query_codes(set, embeddings)?;
    let k = if mode == PrecisionMode::AtOne { 1 } else { k };
    let hits = hits_per_query(set, &index, &codes, k)?;
    let total: usize = hits.iter().sum();
    Ok(total as f64 / (k * set.queries.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub p_at_1: f64,
    pub avg_p_at_20: f64,
    /// Recall at 95% precision over all (query, indexed item) pairs scored by
    /// negated Hamming distance.
    pub r_at_p95: f64,
}

impl MetricReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).at(path)
    }
}

pub fn evaluate_retrieval(
    set: &RetrievalEvalSet,
    embeddings: &HashMap<String, Vec<f64>>,
) -> Result<MetricReport> {
    if set.queries.is_empty() {
        return Err(Error::EmptyInput("retrieval queries".into()));
    }
    let index = build_index(set, embeddings)?;
    let codes = query_codes(set, embeddings)?;
    let n = set.queries.len();
    let at1: usize = hits_per_query(set, &index, &codes, 1)?.iter().sum();
    let at20: usize = hits_per_query(set, &index, &codes, 20)?.iter().sum();
    let pairs: Vec<Vec<(f64, bool)>> = set
        .queries
        .par_iter()
        .zip(&codes)
        .map(|(q, code)| {
            (0..index.len())
                .map(|i| {
                    (
                        -(hamming(code, index.code(i)) as f64),
                        q.ground_truth.contains(&index.ids()[i]),
                    )
                })
                .collect()
        })
        .collect();
    let pairs: Vec<(f64, bool)> = pairs.into_iter().flatten().collect();
    Ok(MetricReport {
        queries: n,
        p_at_1: at1 as f64 / n as f64,
        avg_p_at_20: at20 as f64 / (20 * n) as f64,
        r_at_p95: recall_at_precision(&pairs, 0.95)?,
    })
}

/// Recall at the longest score-ordered prefix whose precision reaches `target`.
///
/// Scores are sorted descending with negatives ahead of positives on equal scores,
/// so ties never flatter the result. Returns 0 when no prefix qualifies.
pub fn recall_at_precision(scores: &[(f64, bool)], target: f64) -> Result<f64> {
    let positives = scores.iter().filter(|s| s.1).count();
    if positives == 0 {
        return Err(Error::invalid(
            "recall at precision needs at least one positive",
        ));
    }
    if let Some(s) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::NonFinite(format!("score {}", s.0)));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut tp = 0usize;
    let mut best = 0usize;
    for (i, &(_, pos)) in sorted.iter().enumerate() {
        if pos {
            tp += 1;
        }
        if tp as f64 >= target * (i + 1) as f64 {
            best = tp;
        }
    }
    Ok(best as f64 / positives as f64)
}
