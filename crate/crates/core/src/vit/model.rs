use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{gelu, gelu_grad, Attention, AttnCache, LayerNorm, LnCache};
use super::{patchify_slice, Pooling, VitConfig};
use crate::nn::{Checkpoint, CheckpointHeader, Classifier, Linear, Parameters, TensorSpec};
use crate::{rng, Error, Result};

/// Items per parallel work unit. Fixed so gradient sums do not depend on the
/// number of worker threads.
const ITEM_CHUNK: usize = 8;

/// Pre-norm encoder block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    h2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

impl Block {
    fn init(config: &VitConfig, r: &mut rng::Rng) -> Self {
        let d = config.hidden_dim;
        Self {
            ln1: LayerNorm::new(d),
            attn: Attention::init(d, config.heads, r),
            ln2: LayerNorm::new(d),
            fc1: Linear::init(d, config.mlp_dim, r),
            fc2: Linear::init(config.mlp_dim, d, r),
        }
    }

    pub fn forward_cached(&self, x: &[f64], s: usize) -> (Vec<f64>, BlockCache) {
        let (h, ln1) = self.ln1.forward(x, s);
        let (a, attn) = self.attn.forward_cached(&h, s);
        let x1: Vec<f64> = x.iter().zip(&a).map(|(p, q)| p + q).collect();
        let (h2, ln2) = self.ln2.forward(&x1, s);
        let u = self.fc1.forward(&h2, s);
        let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
        let f = self.fc2.forward(&g, s);
        let out = x1.iter().zip(&f).map(|(p, q)| p + q).collect();
        (
            out,
            BlockCache {
                ln1,
                attn,
                ln2,
                h2,
                u,
                g,
            },
        )
    }

    /// Pushes the 13 block gradients onto `grads` in parameter order and returns `dx`.
    fn backward(
        &self,
        cache: &BlockCache,
        dout: &[f64],
        s: usize,
        grads: &mut Vec<Vec<f64>>,
    ) -> Vec<f64> {
        let (dw2, db2, dg) = self.fc2.backward(&cache.g, dout, s);
        let du: Vec<f64> = dg
            .iter()
            .zip(&cache.u)
            .map(|(g, &u)| g * gelu_grad(u))
            .collect();
        let (dw1, db1, dh2) = self.fc1.backward(&cache.h2, &du, s);
        let (dln2_g, dln2_b, dx1_mlp) = self.ln2.backward(&cache.ln2, &dh2);
        let dx1: Vec<f64> = dout.iter().zip(&dx1_mlp).map(|(a, b)| a + b).collect();
        let (ag, dh) = self.attn.backward(&cache.attn, &dx1);
        let (dln1_g, dln1_b, dx_attn) = self.ln1.backward(&cache.ln1, &dh);
        grads.extend([
            dln1_g, dln1_b, ag.qkv_w, ag.q_b, ag.v_b, ag.proj_w, ag.proj_b, dln2_g, dln2_b, dw1,
            db1, dw2, db2,
        ]);
        dx1.iter().zip(&dx_attn).map(|(a, b)| a + b).collect()
    }

    fn params(&self) -> [&[f64]; 13] {
        [
            &self.ln1.gamma,
            &self.ln1.beta,
            &self.attn.qkv_weight,
            &self.attn.q_bias,
            &self.attn.v_bias,
            &self.attn.proj.weight,
            &self.attn.proj.bias,
            &self.ln2.gamma,
            &self.ln2.beta,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
        ]
    }

    fn params_mut(&mut self) -> [&mut [f64]; 13] {
        [
            &mut self.ln1.gamma,
            &mut self.ln1.beta,
            &mut self.attn.qkv_weight,
            &mut self.attn.q_bias,
            &mut self.attn.v_bias,
            &mut self.attn.proj.weight,
            &mut self.attn.proj.bias,
            &mut self.ln2.gamma,
            &mut self.ln2.beta,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VitModel {
    pub config: VitConfig,
    pub patch: Linear,
    pub cls: Vec<f64>,
    /// `seq_len × d`, class token first.
    pub pos: Vec<f64>,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub head: Option<Linear>,
}

/// Per-item forward state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ItemCache {
    patches: Vec<f64>,
    blocks: Vec<BlockCache>,
    norm: LnCache,
    embedding: Vec<f64>,
}

/// Forward caches of a batch, one per item.
#[derive(Clone, Debug)]
pub struct VitCache {
    items: Vec<ItemCache>,
}

impl VitModel {
    pub fn new(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut r = rng::stream_rng(seed, 0x0056_4954);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let patch = Linear::init(config.patch_dim(), d, &mut r);
        let cls = (0..d).map(|_| normal.sample(&mut r)).collect();
        let pos = (0..config.seq_len() * d)
            .map(|_| normal.sample(&mut r))
            .collect();
        let blocks = (0..config.layers)
            .map(|_| Block::init(&config, &mut r))
            .collect();
        let head = (config.n_classes > 0).then(|| Linear::init(d, config.n_classes, &mut r));
        Ok(Self {
            config,
            patch,
            cls,
            pos,
            blocks,
            norm: LayerNorm::new(d),
            head,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn check_input(&self, x: &[f64], n: usize) -> Result<()> {
        if x.len() != n * self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "vit pixel batch".into(),
                expected: n * self.config.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn forward_item(&self, pixels: &[f64]) -> (Vec<f64>, Vec<f64>, ItemCache) {
        let c = &self.config;
        let d = c.hidden_dim;
        let s = c.seq_len();
        let patches = patchify_slice(pixels, c.image_size, c.image_size, c.patch_size)
            .expect("input size checked by caller");
        let emb = self.patch.forward(&patches, c.n_patches());
        let mut x = Vec::with_capacity(s * d);
        x.extend_from_slice(&self.cls);
        x.extend_from_slice(&emb);
        for (v, p) in x.iter_mut().zip(&self.pos) {
            *v += p;
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, cache) = b.forward_cached(&x, s);
            caches.push(cache);
            x = y;
        }
        let (y, norm) = self.norm.forward(&x, s);
        let embedding = match c.pooling {
            Pooling::ClassToken => y[..d].to_vec(),
            Pooling::Mean => {
                let mut m = vec![0.0; d];
                for row in y[d..].chunks_exact(d) {
                    for (mv, v) in m.iter_mut().zip(row) {
                        *mv += v;
                    }
                }
                m.iter_mut().for_each(|v| *v /= c.n_patches() as f64);
                m
            }
        };
        let logits = self
            .head
            .as_ref()
            .map_or_else(Vec::new, |h| h.forward(&embedding, 1));
        (
            embedding.clone(),
            logits,
            ItemCache {
                patches,
                blocks: caches,
                norm,
                embedding,
            },
        )
    }

    fn backward_item(&self, cache: &ItemCache, dlogits: &[f64]) -> Vec<Vec<f64>> {
        let c = &self.config;
        let d = c.hidden_dim;
        let s = c.seq_len();
        let mut head_grads = Vec::new();
        let demb = match &self.head {
            Some(h) => {
                let (dw, db, dx) = h.backward(&cache.embedding, dlogits, 1);
                head_grads = vec![dw, db];
                dx
            }
            None => dlogits.to_vec(),
        };
        let mut dy = vec![0.0; s * d];
        match c.pooling {
            Pooling::ClassToken => dy[..d].copy_from_slice(&demb),
            Pooling::Mean => {
                let w = 1.0 / c.n_patches() as f64;
                for row in dy[d..].chunks_exact_mut(d) {
                    for (r, g) in row.iter_mut().zip(&demb) {
                        *r = g * w;
                    }
                }
            }
        }
        let (dn_g, dn_b, mut dx) = self.norm.backward(&cache.norm, &dy);
        let mut block_grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.blocks.len());
        for (b, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let mut g = Vec::with_capacity(13);
            dx = b.backward(bc, &dx, s, &mut g);
            block_grads.push(g);
        }
        block_grads.reverse();
        let dpos = dx.clone();
        let dcls = dx[..d].to_vec();
        let (dpw, dpb, _) = self.patch.backward(&cache.patches, &dx[d..], c.n_patches());
        let mut grads = vec![dpw, dpb, dcls, dpos];
        grads.extend(block_grads.into_iter().flatten());
        grads.push(dn_g);
        grads.push(dn_b);
        grads.extend(head_grads);
        grads
    }

    /// Embeddings (`n × d`) and, if the model has a head, logits (`n × K`).
    /// Items are evaluated in parallel and placed by index.
    pub fn forward(&self, x: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x, n)?;
        let dim = self.config.input_dim();
        let per: Vec<(Vec<f64>, Vec<f64>)> = x
            .par_chunks(dim)
            .map(|item| {
                let (e, l, _) = self.forward_item(item);
                (e, l)
            })
            .collect();
        Ok((
            per.iter().flat_map(|p| p.0.iter().copied()).collect(),
            per.iter().flat_map(|p| p.1.iter().copied()).collect(),
        ))
    }

    pub fn embed(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.forward(x, n)?.0)
    }

    /// Gradients of `Σ_i ⟨dembed_i, embed(x_i)⟩` for a headless pass; useful for
    /// checking the encoder in isolation.
    pub fn backward_embedding(&self, cache: &VitCache, dembed: &[f64]) -> Vec<Vec<f64>> {
        self.reduce_backward(cache, dembed, self.config.hidden_dim, true)
    }

    fn reduce_backward(
        &self,
        cache: &VitCache,
        upstream: &[f64],
        width: usize,
        skip_head: bool,
    ) -> Vec<Vec<f64>> {
        let headless;
        let model = if skip_head && self.head.is_some() {
            headless = VitModel {
                head: None,
                ..self.clone()
            };
            &headless
        } else {
            self
        };
        let partials: Vec<Vec<Vec<f64>>> = cache
            .items
            .par_chunks(ITEM_CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut acc: Option<Vec<Vec<f64>>> = None;
                for (j, item) in chunk.iter().enumerate() {
                    let i = ci * ITEM_CHUNK + j;
                    let g = model.backward_item(item, &upstream[i * width..(i + 1) * width]);
                    acc = Some(match acc {
                        None => g,
                        Some(mut a) => {
                            add_into(&mut a, &g);
                            a
                        }
                    });
                }
                acc.unwrap_or_default()
            })
            .collect();
        let mut total = partials.into_iter();
        let mut acc = total.next().unwrap_or_else(|| {
            model
                .parameters()
                .iter()
                .map(|p| vec![0.0; p.len()])
                .collect()
        });
        for g in total {
            add_into(&mut acc, &g);
        }
        if skip_head && self.head.is_some() {
            for h in self
                .head
                .iter()
                .flat_map(|h| [h.weight.len(), h.bias.len()])
            {
                acc.push(vec![0.0; h]);
            }
        }
        acc
    }

    /// Cached forward pass for training or embedding-level checks.
    pub fn forward_cached(&self, x: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>, VitCache)> {
        self.check_input(x, n)?;
        let dim = self.config.input_dim();
        let per: Vec<(Vec<f64>, Vec<f64>, ItemCache)> = x
            .par_chunks(dim)
            .map(|item| self.forward_item(item))
            .collect();
        let mut emb = Vec::with_capacity(n * self.config.hidden_dim);
        let mut logits = Vec::with_capacity(n * self.config.n_classes);
        let mut items = Vec::with_capacity(n);
        for (e, l, c) in per {
            emb.extend(e);
            logits.extend(l);
            items.push(c);
        }
        Ok((emb, logits, VitCache { items }))
    }

    /// The same encoder with a fresh linear head of `n_classes` outputs.
    pub fn with_head(&self, n_classes: usize, seed: u64) -> Self {
        let mut r = rng::stream_rng(seed, 0x4845_4144);
        let mut m = self.clone();
        m.config.n_classes = n_classes;
        m.head = (n_classes > 0).then(|| Linear::init(self.config.hidden_dim, n_classes, &mut r));
        m
    }

    pub fn without_head(&self) -> Self {
        let mut m = self.clone();
        m.config.n_classes = 0;
        m.head = None;
        m
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            header: CheckpointHeader {
                arch: "vit".into(),
                config: serde_json::to_value(self.config)?,
                tensors: self.parameter_shapes(),
            },
            values: self.parameter_values(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        ck.expect_arch("vit", path)?;
        let config: VitConfig = serde_json::from_value(ck.header.config.clone())
            .map_err(|e| Error::malformed(path, format!("vit config: {e}")))?;
        let mut m = VitModel::new(config, 0).map_err(|e| Error::malformed(path, e.to_string()))?;
        if m.parameter_shapes() != ck.header.tensors {
            return Err(Error::malformed(
                path,
                "tensor table does not match the vit config",
            ));
        }
        m.set_parameters(&ck.values)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

impl Parameters for VitModel {
    fn parameters(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = vec![&self.patch.weight, &self.patch.bias, &self.cls, &self.pos];
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.push(&self.norm.gamma);
        p.push(&self.norm.beta);
        if let Some(h) = &self.head {
            p.push(&h.weight);
            p.push(&h.bias);
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = vec![
            &mut self.patch.weight,
            &mut self.patch.bias,
            &mut self.cls,
            &mut self.pos,
        ];
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.push(&mut self.norm.gamma);
        p.push(&mut self.norm.beta);
        if let Some(h) = &mut self.head {
            p.push(&mut h.weight);
            p.push(&mut h.bias);
        }
        p
    }

    fn parameter_shapes(&self) -> Vec<TensorSpec> {
        let c = &self.config;
        let (d, m) = (c.hidden_dim, c.mlp_dim);
        let t = |name: String, shape: Vec<usize>| TensorSpec { name, shape };
        let mut s = vec![
            t("patch.weight".into(), vec![c.patch_dim(), d]),
            t("patch.bias".into(), vec![d]),
            t("cls".into(), vec![d]),
            t("pos".into(), vec![c.seq_len(), d]),
        ];
        for i in 0..self.blocks.len() {
            let b = |n: &str| format!("block{i}.{n}");
            s.extend([
                t(b("ln1.gamma"), vec![d]),
                t(b("ln1.beta"), vec![d]),
                t(b("attn.qkv.weight"), vec![d, 3 * d]),
                t(b("attn.q_bias"), vec![d]),
                t(b("attn.v_bias"), vec![d]),
                t(b("attn.proj.weight"), vec![d, d]),
                t(b("attn.proj.bias"), vec![d]),
                t(b("ln2.gamma"), vec![d]),
                t(b("ln2.beta"), vec![d]),
                t(b("mlp.fc1.weight"), vec![d, m]),
                t(b("mlp.fc1.bias"), vec![m]),
                t(b("mlp.fc2.weight"), vec![m, d]),
                t(b("mlp.fc2.bias"), vec![d]),
            ]);
        }
        s.push(t("norm.gamma".into(), vec![d]));
        s.push(t("norm.beta".into(), vec![d]));
        if self.head.is_some() {
            s.push(t("head.weight".into(), vec![d, c.n_classes]));
            s.push(t("head.bias".into(), vec![c.n_classes]));
        }
        s
    }
}

impl Classifier for VitModel {
    type Cache = VitCache;

    fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn forward_train(&self, x: &[f64], n: usize) -> (Vec<f64>, VitCache) {
        let (_, logits, cache) = self
            .forward_cached(x, n)
            .expect("batch width checked against input_dim by the training loop");
        (logits, cache)
    }

    fn backward(&self, cache: &VitCache, grad_logits: &[f64]) -> Vec<Vec<f64>> {
        self.reduce_backward(cache, grad_logits, self.config.n_classes, false)
    }

    fn predict(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.forward(x, n).map(|r| r.1).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::vit_param_count;

    #[test]
    fn desk_shapes_and_count() {
        let cfg = VitConfig::desk(5);
        let m = VitModel::new(cfg, 1).unwrap();
        assert_eq!(m.param_count(), vit_param_count(&cfg));
        let x = vec![0.5; 3 * cfg.input_dim()];
        let (e, l) = m.forward(&x, 3).unwrap();
        assert_eq!(e.len(), 3 * 64);
        assert_eq!(l.len(), 3 * 5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = VitModel::new(VitConfig::desk(3), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.amdl");
        m.save(&p).unwrap();
        assert_eq!(VitModel::load(&p).unwrap(), m);
    }
}
