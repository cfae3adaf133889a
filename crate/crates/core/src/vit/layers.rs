use crate::nn::{column_sums, matmul, matmul_a_bt, matmul_at_b, Linear};
use crate::rng::Rng;

pub const LN_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Per-row layer normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, LnCache) {
        let d = self.gamma.len();
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xr[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = self.gamma[j] * h + self.beta[j];
            }
        }
        (y, LnCache { xhat, rstd })
    }

    /// Returns `(dgamma, dbeta, dx)`.
    pub fn backward(&self, cache: &LnCache, dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.gamma.len();
        let rows = cache.rstd.len();
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            for j in 0..d {
                dg[j] += dyr[j] * xh[j];
                db[j] += dyr[j];
                dxhat[j] = dyr[j] * self.gamma[j];
            }
            let m1 = dxhat.iter().sum::<f64>() / d as f64;
            let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for j in 0..d {
                dx[r * d + j] = cache.rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
            }
        }
        (dg, db, dx)
    }
}

/// Multi-head scaled dot-product self-attention with a fused QKV projection.
///
/// Keys carry no bias: a key bias shifts every score in a softmax row by the same
/// amount, so it never changes the output and its gradient is identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub heads: usize,
    /// `d × 3d`, output columns ordered `[q | k | v]`.
    pub qkv_weight: Vec<f64>,
    pub q_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
    pub proj: Linear,
}

#[derive(Clone, Debug)]
pub struct AttnCache {
    s: usize,
    x: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<Vec<f64>>,
    concat: Vec<f64>,
}

/// Gradients of one attention layer, in parameter order.
pub struct AttnGrads {
    pub qkv_w: Vec<f64>,
    pub q_b: Vec<f64>,
    pub v_b: Vec<f64>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
}

impl Attention {
    pub fn init(d: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            heads,
            qkv_weight: Linear::init(d, 3 * d, rng).weight,
            q_bias: vec![0.0; d],
            v_bias: vec![0.0; d],
            proj: Linear::init(d, d, rng),
        }
    }

    /// Rows of `[q | k | v]` for an `s × d` input.
    pub fn project_qkv(&self, x: &[f64], s: usize) -> Vec<f64> {
        let d = self.d();
        let mut qkv = matmul(x, &self.qkv_weight, s, d, 3 * d);
        for row in qkv.chunks_exact_mut(3 * d) {
            for (v, b) in row[..d].iter_mut().zip(&self.q_bias) {
                *v += b;
            }
            for (v, b) in row[2 * d..].iter_mut().zip(&self.v_bias) {
                *v += b;
            }
        }
        qkv
    }

    pub fn d(&self) -> usize {
        self.proj.d_out
    }

    fn head_dim(&self) -> usize {
        self.d() / self.heads
    }

    /// Attention output for an `s × d` token sequence.
    pub fn forward(&self, x: &[f64], s: usize) -> Vec<f64> {
        self.forward_cached(x, s).0
    }

    /// Row-stochastic `s × s` attention matrices, one per head.
    pub fn attention_weights(&self, x: &[f64], s: usize) -> Vec<Vec<f64>> {
        self.forward_cached(x, s).1.probs
    }

    pub fn forward_cached(&self, x: &[f64], s: usize) -> (Vec<f64>, AttnCache) {
        let d = self.d();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.project_qkv(x, s);
        let mut concat = vec![0.0; s * d];
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let mut a = vec![0.0; s * s];
            for i in 0..s {
                let q = &qkv[i * 3 * d + qo..i * 3 * d + qo + dh];
                let row = &mut a[i * s..(i + 1) * s];
                for (j, rv) in row.iter_mut().enumerate() {
                    let k = &qkv[j * 3 * d + ko..j * 3 * d + ko + dh];
                    *rv = scale * q.iter().zip(k).map(|(x, y)| x * y).sum::<f64>();
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for rv in row.iter_mut() {
                    *rv = (*rv - max).exp();
                    z += *rv;
                }
                row.iter_mut().for_each(|rv| *rv /= z);
                let out = &mut concat[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..s {
                    let w = row[j];
                    let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                    for (o, vv) in out.iter_mut().zip(v) {
                        *o += w * vv;
                    }
                }
            }
            probs.push(a);
        }
        let out = self.proj.forward(&concat, s);
        (
            out,
            AttnCache {
                s,
                x: x.to_vec(),
                qkv,
                probs,
                concat,
            },
        )
    }

    pub fn backward(&self, cache: &AttnCache, dout: &[f64]) -> (AttnGrads, Vec<f64>) {
        let s = cache.s;
        let d = self.d();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let (proj_w, proj_b, dconcat) = self.proj.backward(&cache.concat, dout, s);
        let qkv = &cache.qkv;
        let mut dqkv = vec![0.0; s * 3 * d];
        let mut da = vec![0.0; s * s];
        for h in 0..self.heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let a = &cache.probs[h];
            for i in 0..s {
                let dout_i = &dconcat[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..s {
                    let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                    da[i * s + j] = dout_i.iter().zip(v).map(|(x, y)| x * y).sum();
                    let w = a[i * s + j];
                    let dv = &mut dqkv[j * 3 * d + vo..j * 3 * d + vo + dh];
                    for (dvv, g) in dv.iter_mut().zip(dout_i) {
                        *dvv += w * g;
                    }
                }
                let dot: f64 = (0..s).map(|j| a[i * s + j] * da[i * s + j]).sum();
                for j in 0..s {
                    let ds = a[i * s + j] * (da[i * s + j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        let kj = qkv[j * 3 * d + ko + c];
                        let qi = qkv[i * 3 * d + qo + c];
                        dqkv[i * 3 * d + qo + c] += ds * kj;
                        dqkv[j * 3 * d + ko + c] += ds * qi;
                    }
                }
            }
        }
        let qkv_w = matmul_at_b(&cache.x, &dqkv, s, d, 3 * d);
        let sums = column_sums(&dqkv, s, 3 * d);
        let dx = matmul_a_bt(&dqkv, &self.qkv_weight, s, 3 * d, d);
        (
            AttnGrads {
                qkv_w,
                q_b: sums[..d].to_vec(),
                v_b: sums[2 * d..].to_vec(),
                proj_w,
                proj_b,
            },
            dx,
        )
    }
}
