//! Binary codes, exact Hamming k-NN, LSH-band near-duplicate detection and
//! retrieval metrics.

mod eval;
mod index;

pub use eval::{
    eval_precision_at_k, evaluate_retrieval, recall_at_precision, EvalRole, MetricReport,
    PrecisionMode, RetrievalEvalSet, RetrievalQuery,
};
pub use index::{knn_search, near_dup_detect, near_dup_pairs, BinaryIndex, Neighbor};

use crate::{Error, Result};

/// Sign code of `values`: bit `j` is set iff `values[j] > 0`. Bit `j` lives in word
/// `j / 64` at position `j % 64`.
pub fn binarize(values: &[f64]) -> Result<Vec<u64>> {
    if values.is_empty() || values.len() % 64 != 0 {
        return Err(Error::invalid(format!(
            "code length {} is not a positive multiple of 64",
            values.len()
        )));
    }
    let mut words = vec![0u64; values.len() / 64];
    for (j, &v) in values.iter().enumerate() {
        if v > 0.0 {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    Ok(words)
}

pub fn binarize_f32(values: &[f32]) -> Result<Vec<u64>> {
    binarize(&values.iter().map(|&v| v as f64).collect::<Vec<_>>())
}

pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
