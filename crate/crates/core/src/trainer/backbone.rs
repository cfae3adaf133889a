use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Checkpoint, Mlp, Parameters};
use crate::vit::{VitConfig, VitModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Vit,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "vit" => Ok(ModelKind::Vit),
            other => Err(Error::invalid(format!(
                "unknown model kind {other:?} (mlp | vit)"
            ))),
        }
    }
}

/// Architecture of a headless encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackboneSpec {
    /// Embedding-input MLP: ReLU hidden layers, linear output of width `embedding`.
    Mlp {
        hidden: Vec<usize>,
        embedding: usize,
    },
    /// Pixel-input ViT; `n_classes` is ignored.
    Vit { config: VitConfig },
}

impl BackboneSpec {
    pub fn mlp_default() -> Self {
        BackboneSpec::Mlp {
            hidden: vec![128],
            embedding: 64,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            BackboneSpec::Mlp { .. } => ModelKind::Mlp,
            BackboneSpec::Vit { .. } => ModelKind::Vit,
        }
    }
}

/// A headless encoder mapping inputs to embeddings.
// Few backbones exist at a time; boxing the ViT would only add indirection.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Mlp(Mlp),
    Vit(VitModel),
}

impl Backbone {
    /// Random initialization; `input_dim` is the embedding width for MLPs and is
    /// checked against the image size for ViTs.
    pub fn init(spec: &BackboneSpec, input_dim: usize, seed: u64) -> Result<Self> {
        match spec {
            BackboneSpec::Mlp { hidden, embedding } => {
                let mut dims = vec![input_dim];
                dims.extend(hidden);
                dims.push(*embedding);
                Ok(Backbone::Mlp(Mlp::new(&dims, seed)?))
            }
            BackboneSpec::Vit { config } => {
                let config = VitConfig {
                    n_classes: 0,
                    ..*config
                };
                if config.input_dim() != input_dim {
                    return Err(Error::DimensionMismatch {
                        context: "vit input pixels".into(),
                        expected: config.input_dim(),
                        found: input_dim,
                    });
                }
                Ok(Backbone::Vit(VitModel::new(config, seed)?))
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Backbone::Mlp(_) => ModelKind::Mlp,
            Backbone::Vit(_) => ModelKind::Vit,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Backbone::Mlp(m) => m.input_dim(),
            Backbone::Vit(v) => v.config.input_dim(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Backbone::Mlp(m) => m.output_dim(),
            Backbone::Vit(v) => v.embedding_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Backbone::Mlp(m) => m.param_count(),
            Backbone::Vit(v) => v.param_count(),
        }
    }

    /// Embeddings for `n` row-major inputs.
    pub fn embed(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        if x.len() != n * self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "backbone inputs".into(),
                expected: n * self.input_dim(),
                found: x.len(),
            });
        }
        match self {
            Backbone::Mlp(m) => Ok(m.forward_rows(x, n)),
            Backbone::Vit(v) => v.embed(x, n),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Backbone::Mlp(m) => Ok(m.to_checkpoint()),
            Backbone::Vit(v) => v.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        match ck.header.arch.as_str() {
            "mlp" => Ok(Backbone::Mlp(Mlp::from_checkpoint(ck, path)?)),
            "vit" => Ok(Backbone::Vit(
                VitModel::from_checkpoint(ck, path)?.without_head(),
            )),
            other => Err(Error::malformed(
                path,
                format!("unknown model arch {other:?}"),
            )),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}
