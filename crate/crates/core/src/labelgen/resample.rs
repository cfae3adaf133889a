use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;

use super::{label_frequencies, LabeledExample};
use crate::error::IoContext;
use crate::{rng, Error, Result};

const PLAN_MAGIC: &[u8; 4] = b"ARSP";
const PLAN_VERSION: u32 = 1;

/// Inverse-square-root sampling weights.
///
/// An item's raw weight is the mean of `f^(-1/2)` over its labels, where `f` is
/// the number of items carrying the label; `weights` are the raw weights divided
/// by `normalizer` so they sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ResamplePlan {
    pub ids: Vec<String>,
    pub frequencies: BTreeMap<u32, usize>,
    pub weights: Vec<f64>,
    pub normalizer: f64,
}

pub fn compute_resample_plan(examples: &[LabeledExample]) -> Result<ResamplePlan> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("labeled set".into()));
    }
    let frequencies = label_frequencies(examples);
    let mut raw = Vec::with_capacity(examples.len());
    for e in examples {
        if e.labels.is_empty() {
            return Err(Error::invalid(format!("example {} has no labels", e.id)));
        }
        let s: f64 = e
            .labels
            .iter()
            .map(|l| (frequencies[l] as f64).powf(-0.5))
            .sum();
        raw.push(s / e.labels.len() as f64);
    }
    let normalizer: f64 = raw.iter().sum();
    Ok(ResamplePlan {
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        frequencies,
        weights: raw.iter().map(|w| w / normalizer).collect(),
        normalizer,
    })
}

impl ResamplePlan {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Checks that the plan was computed for exactly these examples, in order.
    pub fn matches(&self, examples: &[LabeledExample]) -> bool {
        self.ids.len() == examples.len() && self.ids.iter().zip(examples).all(|(a, e)| *a == e.id)
    }

    /// `ARSP` magic, version, count, normalizer, then per item a length-prefixed
    /// UTF-8 id and its weight. All integers and floats little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(PLAN_MAGIC);
        b.extend_from_slice(&PLAN_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        b.extend_from_slice(&self.normalizer.to_le_bytes());
        for (id, w) in self.ids.iter().zip(&self.weights) {
            b.extend_from_slice(&(id.len() as u32).to_le_bytes());
            b.extend_from_slice(id.as_bytes());
            b.extend_from_slice(&w.to_le_bytes());
        }
        b
    }

    /// Reads the weights back; `frequencies` is not stored and comes back empty.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::malformed(path, format!("resample plan: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != PLAN_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != PLAN_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let normalizer = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut weights = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(len)?).map_err(|_| bad("id is not UTF-8"))?;
            let w = f64::from_le_bytes(take(8)?.try_into().unwrap());
            if !(w.is_finite() && w > 0.0) {
                return Err(bad("weight must be finite and positive"));
            }
            ids.push(id.to_owned());
            weights.push(w);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            ids,
            frequencies: BTreeMap::new(),
            weights,
            normalizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }
}

/// `n` independent weighted draws with replacement, as indices into the plan.
pub fn sample_epoch_indices(plan: &ResamplePlan, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(&plan.weights)
        .map_err(|e| Error::invalid(format!("resample weights: {e}")))?;
    let mut r = rng::stream_rng(seed, 0x5A4D);
    Ok((0..n).map(|_| dist.sample(&mut r)).collect())
}

/// `n` weighted draws with replacement, as content ids.
pub fn sample_epoch(
    examples: &[LabeledExample],
    plan: &ResamplePlan,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if !plan.matches(examples) {
        return Err(Error::invalid(
            "resample plan does not match the labeled set",
        ));
    }
    Ok(sample_epoch_indices(plan, n, seed)?
        .into_iter()
        .map(|i| examples[i].id.clone())
        .collect())
}

/// Uniform sample of `round(p·n)` examples without replacement, in input order.
///
/// The sample is a prefix of one seeded permutation, so for a fixed seed a smaller
/// fraction is always a subset of a larger one.
pub fn subsample_fraction(
    examples: &[LabeledExample],
    p: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("fraction {p} not in (0, 1]")));
    }
    let n = examples.len();
    let keep = (p * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream_rng(seed, 0x5B5));
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| examples[i].clone()).collect())
}
