use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointHeader, TensorSpec};
use super::tensor::{column_sums, matmul, matmul_a_bt, matmul_at_b, Tensor};
use super::Parameters;
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine map `y = x·W + b` with `W` stored `d_in × d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Uniform in `±sqrt(3 / fan_in)` (unit-variance outputs for unit-variance inputs),
    /// zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut rng::Rng) -> Self {
        let bound = (3.0 / d_in.max(1) as f64).sqrt();
        Self {
            d_in,
            d_out,
            weight: (0..d_in * d_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect(),
            bias: vec![0.0; d_out],
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            weight: vec![0.0; d_in * d_out],
            bias: vec![0.0; d_out],
        }
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut y = matmul(x, &self.weight, n, self.d_in, self.d_out);
        for row in y.chunks_exact_mut(self.d_out) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }

    /// Returns `(dW, db, dx)` given the layer input and output gradient.
    pub fn backward(&self, x: &[f64], g: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dw = matmul_at_b(x, g, n, self.d_in, self.d_out);
        let db = column_sums(g, n, self.d_out);
        let dx = matmul_a_bt(g, &self.weight, n, self.d_out, self.d_in);
        (dw, db, dx)
    }
}

/// Multi-layer perceptron; `activations[i]` follows layer `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activations: Vec<Activation>,
}

/// Intermediate values kept by [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    n: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// ReLU after every hidden layer, linear output.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let mut acts = vec![Activation::Relu; n];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Identity;
        }
        Self::with_activations(dims, &acts, seed)
    }

    pub fn with_activations(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        check_dims(dims, activations)?;
        let mut r = rng::stream_rng(seed, 0x4D4C50);
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], &mut r))
            .collect();
        Ok(Self {
            layers,
            activations: activations.to_vec(),
        })
    }

    pub fn from_layers(layers: Vec<Linear>, activations: Vec<Activation>) -> Result<Self> {
        if layers.len() != activations.len() || layers.is_empty() {
            return Err(Error::shape("one activation per layer, at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].d_out != w[1].d_in {
                return Err(Error::shape(format!(
                    "layer widths {} and {} do not chain",
                    w[0].d_out, w[1].d_in
                )));
            }
        }
        for l in &layers {
            if l.weight.len() != l.d_in * l.d_out || l.bias.len() != l.d_out {
                return Err(Error::shape("layer tensors do not match their dims"));
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    /// `(input, hidden.., output)` widths.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].d_in)
            .chain(self.layers.iter().map(|l| l.d_out))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if d != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input".into(),
                expected: self.input_dim(),
                found: d,
            });
        }
        Tensor::new(vec![n, self.output_dim()], self.forward_rows(x.data(), n))
    }

    /// Forward pass over `n` row-major input rows.
    pub fn forward_rows(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(&h, n);
            if *act == Activation::Relu {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &[f64], n: usize) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let z = layer.forward(&h, n);
            inputs.push(std::mem::replace(&mut h, z.clone()));
            if *act == Activation::Relu {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            pre.push(z);
        }
        (h, MlpCache { n, inputs, pre })
    }

    /// Gradients aligned with [`Parameters::parameters`], plus the input gradient.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        let mut g = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            if self.activations[l] == Activation::Relu {
                for (gv, z) in g.iter_mut().zip(&cache.pre[l]) {
                    if *z <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let (dw, db, dx) = self.layers[l].backward(&cache.inputs[l], &g, cache.n);
            grads[2 * l] = dw;
            grads[2 * l + 1] = db;
            g = dx;
        }
        (grads, g)
    }

    /// Splits into layers `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> Result<(Mlp, Mlp)> {
        if at == 0 || at >= self.layers.len() {
            return Err(Error::invalid(format!(
                "split point {at} outside 1..{}",
                self.layers.len()
            )));
        }
        Ok((
            Mlp {
                layers: self.layers[..at].to_vec(),
                activations: self.activations[..at].to_vec(),
            },
            Mlp {
                layers: self.layers[at..].to_vec(),
                activations: self.activations[at..].to_vec(),
            },
        ))
    }

    /// Composes `first` then `second`.
    pub fn stack(first: &Mlp, second: &Mlp) -> Result<Mlp> {
        Mlp::from_layers(
            first.layers.iter().chain(&second.layers).cloned().collect(),
            first
                .activations
                .iter()
                .chain(&second.activations)
                .copied()
                .collect(),
        )
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self.parameter_shapes();
        Checkpoint {
            header: CheckpointHeader {
                arch: "mlp".into(),
                config: serde_json::json!({
                    "dims": self.dims(),
                    "activations": self.activations,
                }),
                tensors,
            },
            values: self.parameters().into_iter().map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        ck.expect_arch("mlp", path)?;
        let dims: Vec<usize> = serde_json::from_value(ck.header.config["dims"].clone())
            .map_err(|e| Error::malformed(path, format!("dims: {e}")))?;
        let acts: Vec<Activation> = serde_json::from_value(ck.header.config["activations"].clone())
            .map_err(|e| Error::malformed(path, format!("activations: {e}")))?;
        check_dims(&dims, &acts).map_err(|e| Error::malformed(path, e.to_string()))?;
        let mut model = Mlp {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            activations: acts,
        };
        if model.parameter_shapes() != ck.header.tensors {
            return Err(Error::malformed(path, "tensor table does not match dims"));
        }
        model.set_parameters(&ck.values)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

fn check_dims(dims: &[usize], activations: &[Activation]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::shape(format!(
            "mlp dims {dims:?} need ≥2 positive entries"
        )));
    }
    if activations.len() != dims.len() - 1 {
        return Err(Error::shape(format!(
            "{} layers need {} activations, got {}",
            dims.len() - 1,
            dims.len() - 1,
            activations.len()
        )));
    }
    Ok(())
}

impl Parameters for Mlp {
    fn parameters(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn parameter_shapes(&self) -> Vec<TensorSpec> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    TensorSpec {
                        name: format!("layer{i}.weight"),
                        shape: vec![l.d_in, l.d_out],
                    },
                    TensorSpec {
                        name: format!("layer{i}.bias"),
                        shape: vec![l.d_out],
                    },
                ]
            })
            .collect()
    }
}
