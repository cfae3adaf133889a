//! `AMDL` checkpoints: magic, u32 version, u32 header length, a JSON header
//! describing the architecture and tensor shapes, then every tensor as
//! little-endian `f64` values in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IoContext;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"AMDL";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n: usize = self.values.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(12 + header.len() + 8 * n);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (spec, v) in self.header.tensors.iter().zip(&self.values) {
            if spec.shape.iter().product::<usize>() != v.len() {
                return Err(Error::shape(format!(
                    "tensor {} does not match its shape",
                    spec.name
                )));
            }
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::malformed(path, reason);
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("missing AMDL magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        let mut at = 12 + hlen;
        let mut values = Vec::with_capacity(header.tensors.len());
        for spec in &header.tensors {
            let n: usize = spec.shape.iter().product();
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| bad(&format!("truncated tensor {}", spec.name)))?;
            values.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
            at += 8 * n;
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { header, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }

    /// Fails unless the checkpoint was written for `arch`.
    pub fn expect_arch(&self, arch: &str, path: &Path) -> Result<()> {
        if self.header.arch != arch {
            return Err(Error::malformed(
                path,
                format!("expected a {arch} checkpoint, found {}", self.header.arch),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let ck = Checkpoint {
            header: CheckpointHeader {
                arch: "toy".into(),
                config: serde_json::json!({"d": 2}),
                tensors: vec![TensorSpec {
                    name: "w".into(),
                    shape: vec![2],
                }],
            },
            values: vec![vec![1.5, -0.25]],
        };
        let bytes = ck.to_bytes().unwrap();
        let p = Path::new("mem");
        assert_eq!(Checkpoint::from_bytes(&bytes, p).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad, p),
            Err(Error::MalformedShard { .. })
        ));
    }
}
