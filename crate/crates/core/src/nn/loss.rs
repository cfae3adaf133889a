use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Cross entropy against the uniform distribution over a row's positives.
    MultiLabelSoftmax,
    /// Independent per-class sigmoid with binary cross entropy.
    SigmoidBce,
}

impl LossKind {
    /// Loss and logit gradient for row-major `n × k` logits.
    pub fn evaluate(
        self,
        logits: &[f64],
        k: usize,
        positives: &[Vec<u32>],
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::MultiLabelSoftmax => softmax_rows(logits, k, positives),
            LossKind::SigmoidBce => bce_rows(logits, k, positives),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "multi-label-softmax" => Ok(LossKind::MultiLabelSoftmax),
            "bce" | "sigmoid-bce" => Ok(LossKind::SigmoidBce),
            _ => Err(Error::invalid(format!(
                "unknown loss {s:?} (softmax | bce)"
            ))),
        }
    }
}

fn check(logits: &[f64], k: usize, positives: &[Vec<u32>]) -> Result<usize> {
    if k == 0 || logits.len() % k != 0 {
        return Err(Error::shape(format!(
            "{} logits do not split into rows of {k}",
            logits.len()
        )));
    }
    let n = logits.len() / k;
    if positives.len() != n {
        return Err(Error::shape(format!(
            "{n} logit rows but {} label sets",
            positives.len()
        )));
    }
    for p in positives {
        if let Some(&bad) = p.iter().find(|&&l| l as usize >= k) {
            return Err(Error::invalid(format!(
                "label id {bad} out of range for {k} classes"
            )));
        }
    }
    Ok(n)
}

fn dedup(p: &[u32]) -> Vec<u32> {
    let mut p = p.to_vec();
    p.sort_unstable();
    p.dedup();
    p
}

fn softmax_rows(logits: &[f64], k: usize, positives: &[Vec<u32>]) -> Result<(f64, Vec<f64>)> {
    let n = check(logits, k, positives)?;
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, pos) in positives.iter().enumerate() {
        let pos = dedup(pos);
        if pos.is_empty() {
            return Err(Error::invalid(format!("row {i} has no positive labels")));
        }
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let w = 1.0 / pos.len() as f64;
        total -= pos
            .iter()
            .map(|&l| w * (row[l as usize] - lse))
            .sum::<f64>();
        let g = &mut grad[i * k..(i + 1) * k];
        for (gv, z) in g.iter_mut().zip(row) {
            *gv = (z - lse).exp();
        }
        for &l in &pos {
            g[l as usize] -= w;
        }
        g.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok((total / n as f64, grad))
}

fn bce_rows(logits: &[f64], k: usize, positives: &[Vec<u32>]) -> Result<(f64, Vec<f64>)> {
    let n = check(logits, k, positives)?;
    let scale = 1.0 / (n * k) as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, pos) in positives.iter().enumerate() {
        let mut target = vec![0.0; k];
        for &l in pos {
            target[l as usize] = 1.0;
        }
        for j in 0..k {
            let z = logits[i * k + j];
            let y = target[j];
            // softplus(z) - y·z, written to avoid overflow for large |z|
            total += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
            let sigma = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            grad[i * k + j] = (sigma - y) * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Mean multi-label softmax cross entropy over the rows of `logits` (`n × k`).
///
/// Each row's target is uniform over its positive labels; the gradient is
/// `(softmax − target) / n`.
pub fn multi_label_softmax_loss(logits: &Tensor, positives: &[Vec<u32>]) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2()?;
    let (loss, grad) = softmax_rows(logits.data(), k, positives)?;
    Ok((loss, Tensor::new(vec![n, k], grad)?))
}

/// Binary cross entropy averaged over rows and classes.
pub fn sigmoid_bce_loss(logits: &Tensor, positives: &[Vec<u32>]) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2()?;
    let (loss, grad) = bce_rows(logits.data(), k, positives)?;
    Ok((loss, Tensor::new(vec![n, k], grad)?))
}
