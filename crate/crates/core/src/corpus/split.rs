use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{ContentRecord, Corpus};
use crate::{rng, Error, Result};

/// Union-find with path halving and union by size.
#[derive(Clone, Debug)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }

    /// Components as sorted member lists, ordered by their smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let root = self.find(i);
            by_root.entry(root).or_default().push(i);
        }
        let mut comps: Vec<Vec<usize>> = by_root.into_values().collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }
}

/// Splits into `(train, eval)` so that every connected component of the
/// duplicate graph lands entirely on one side.
///
/// Components are shuffled with `seed` and moved to eval until it reaches
/// `round(eval_fraction * n)` records, so the eval size overshoots the target by
/// less than one component. Records keep their input order within each side.
pub fn split_with_dedup(
    corpus: &Corpus,
    dup_pairs: &[(String, String)],
    eval_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "eval_fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    let index = corpus.index_by_id();
    let mut sets = DisjointSet::new(corpus.len());
    for (a, b) in dup_pairs {
        let ia = *index
            .get(a.as_str())
            .ok_or_else(|| Error::UnknownReference(format!("duplicate pair id {a:?}")))?;
        let ib = *index
            .get(b.as_str())
            .ok_or_else(|| Error::UnknownReference(format!("duplicate pair id {b:?}")))?;
        sets.union(ia, ib);
    }
    let mut comps = sets.components();
    comps.shuffle(&mut rng::stream_rng(seed, 0x5917));

    let target = (eval_fraction * corpus.len() as f64).round() as usize;
    let mut in_eval = vec![false; corpus.len()];
    let mut eval_size = 0;
    for comp in &comps {
        if eval_size >= target {
            break;
        }
        eval_size += comp.len();
        for &i in comp {
            in_eval[i] = true;
        }
    }

    let (mut train, mut eval): (Vec<ContentRecord>, Vec<ContentRecord>) = (Vec::new(), Vec::new());
    for (record, &e) in corpus.records().iter().zip(&in_eval) {
        if e {
            eval.push(record.clone());
        } else {
            train.push(record.clone());
        }
    }
    Ok((Corpus::new(train)?, Corpus::new(eval)?))
}
