//! Term → interest assignment and per-interest k-means over term text embeddings,
//! producing the clustered label space.

mod kmeans;

pub use kmeans::{kmeans, nearest, squared_distance, KMeansResult};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{InterestTaxonomy, TermDictionary};
use crate::error::IoContext;
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentSource {
    File,
    Centroid,
}

/// Term → interest sets (a term may belong to several interests).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestAssignment {
    pub source: AssignmentSource,
    pub terms: BTreeMap<u32, BTreeSet<u32>>,
}

impl InterestAssignment {
    pub fn interests_of(&self, term_id: u32) -> Option<&BTreeSet<u32>> {
        self.terms.get(&term_id)
    }
}

/// How interests are found for each term.
#[derive(Clone, Debug, PartialEq)]
pub enum AssignMode {
    /// An explicit mapping, validated against the dictionary and taxonomy.
    File(BTreeMap<u32, BTreeSet<u32>>),
    /// Cosine similarity to one prototype per interest: every interest with
    /// similarity `≥ tau`, best first, at most `top_m`, ties to the lower id.
    Centroid {
        prototypes: Vec<Vec<f64>>,
        tau: f64,
        top_m: usize,
    },
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn assign_interests(
    terms: &TermDictionary,
    taxonomy: &InterestTaxonomy,
    mode: &AssignMode,
) -> Result<InterestAssignment> {
    match mode {
        AssignMode::File(map) => {
            for (tid, ints) in map {
                if terms.get(*tid).is_none() {
                    return Err(Error::UnknownReference(format!(
                        "interest file names unknown term {tid}"
                    )));
                }
                if let Some(bad) = ints.iter().find(|&&i| !taxonomy.contains(i)) {
                    return Err(Error::UnknownReference(format!(
                        "interest file maps term {tid} to unknown interest {bad}"
                    )));
                }
            }
            Ok(InterestAssignment {
                source: AssignmentSource::File,
                terms: map.clone(),
            })
        }
        AssignMode::Centroid {
            prototypes,
            tau,
            top_m,
        } => {
            if prototypes.len() != taxonomy.len() {
                return Err(Error::DimensionMismatch {
                    context: "interest prototypes".into(),
                    expected: taxonomy.len(),
                    found: prototypes.len(),
                });
            }
            if let Some(p) = prototypes.iter().find(|p| p.len() != terms.text_dim()) {
                return Err(Error::DimensionMismatch {
                    context: "interest prototype width".into(),
                    expected: terms.text_dim(),
                    found: p.len(),
                });
            }
            let mut out = BTreeMap::new();
            for t in terms.terms() {
                let mut scored: Vec<(usize, f64)> = prototypes
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, cosine(&t.text_embedding, p)))
                    .filter(|&(_, c)| c >= *tau)
                    .collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let chosen: BTreeSet<u32> =
                    scored.iter().take(*top_m).map(|&(i, _)| i as u32).collect();
                if !chosen.is_empty() {
                    out.insert(t.term_id, chosen);
                }
            }
            Ok(InterestAssignment {
                source: AssignmentSource::Centroid,
                terms: out,
            })
        }
    }
}

/// Number of clusters per interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KSchedule {
    Uniform {
        k: usize,
    },
    PerInterest {
        k: BTreeMap<u32, usize>,
        default: usize,
    },
    /// `ceil(terms / terms_per_cluster)` for each interest.
    TermsPerCluster {
        terms_per_cluster: usize,
    },
}

impl KSchedule {
    pub fn k_for(&self, interest: u32, n_terms: usize) -> usize {
        match self {
            KSchedule::Uniform { k } => *k,
            KSchedule::PerInterest { k, default } => *k.get(&interest).unwrap_or(default),
            KSchedule::TermsPerCluster { terms_per_cluster } => {
                n_terms.div_ceil((*terms_per_cluster).max(1))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpaceConfig {
    pub k: KSchedule,
    /// Cluster unit-normalized embeddings instead of raw ones.
    pub normalize: bool,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LabelSpaceConfig {
    fn default() -> Self {
        Self {
            k: KSchedule::Uniform { k: 4 },
            normalize: false,
            max_iters: 100,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestClusters {
    pub interest: u32,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

/// Dense label table over `(interest, cluster)` pairs plus the term → label map.
///
/// Label ids are assigned in ascending interest order, then cluster order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterLabelSpace {
    interests: Vec<InterestClusters>,
    labels: Vec<(u32, u32)>,
    index: BTreeMap<(u32, u32), u32>,
    term_labels: BTreeMap<u32, BTreeSet<u32>>,
    normalize: bool,
}

impl ClusterLabelSpace {
    pub fn new(
        interests: Vec<InterestClusters>,
        term_labels: BTreeMap<u32, BTreeSet<u32>>,
        normalize: bool,
    ) -> Result<Self> {
        let mut interests = interests;
        interests.sort_by_key(|c| c.interest);
        let mut labels = Vec::new();
        let mut index = BTreeMap::new();
        for c in &interests {
            for j in 0..c.centroids.len() as u32 {
                index.insert((c.interest, j), labels.len() as u32);
                labels.push((c.interest, j));
            }
        }
        if index.len() != labels.len() {
            return Err(Error::DuplicateId(
                "interest listed twice in label space".into(),
            ));
        }
        if let Some((t, bad)) = term_labels.iter().find_map(|(t, ls)| {
            ls.iter()
                .find(|&&l| l as usize >= labels.len())
                .map(|l| (t, *l))
        }) {
            return Err(Error::UnknownReference(format!(
                "term {t} maps to missing label {bad}"
            )));
        }
        Ok(Self {
            interests,
            labels,
            index,
            term_labels,
            normalize,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn interests(&self) -> &[InterestClusters] {
        &self.interests
    }

    /// `(interest, cluster)` of a label id.
    pub fn label_info(&self, label: u32) -> Option<(u32, u32)> {
        self.labels.get(label as usize).copied()
    }

    pub fn label_id(&self, interest: u32, cluster: u32) -> Option<u32> {
        self.index.get(&(interest, cluster)).copied()
    }

    pub fn labels_of(&self, term_id: u32) -> Option<&BTreeSet<u32>> {
        self.term_labels.get(&term_id)
    }

    pub fn term_labels(&self) -> &BTreeMap<u32, BTreeSet<u32>> {
        &self.term_labels
    }

    pub fn normalized(&self) -> bool {
        self.normalize
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LabelSpaceFile {
            version: 1,
            normalize: self.normalize,
            interests: self
                .interests
                .iter()
                .map(|c| InterestEntry {
                    interest: c.interest,
                    k: c.centroids.len(),
                    dim: c.centroids.first().map_or(0, Vec::len),
                    inertia: c.inertia,
                    centroids: encode_f32(c.centroids.iter().flatten().copied()),
                })
                .collect(),
            labels: self.labels.clone(),
            terms: self
                .term_labels
                .iter()
                .map(|(&tid, ls)| TermEntry {
                    tid,
                    labels: ls.iter().copied().collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses `label_space.json`. Centroids come back at 32-bit precision.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: LabelSpaceFile = serde_json::from_str(text)
            .map_err(|e| Error::malformed(path, format!("label space: {e}")))?;
        if file.version != 1 {
            return Err(Error::malformed(
                path,
                format!("unsupported version {}", file.version),
            ));
        }
        let mut interests = Vec::with_capacity(file.interests.len());
        for e in file.interests {
            let flat = decode_f32(&e.centroids).map_err(|m| Error::malformed(path, m))?;
            if flat.len() != e.k * e.dim {
                return Err(Error::malformed(
                    path,
                    format!("interest {} centroid size", e.interest),
                ));
            }
            interests.push(InterestClusters {
                interest: e.interest,
                centroids: flat
                    .chunks(e.dim.max(1))
                    .take(e.k)
                    .map(<[f64]>::to_vec)
                    .collect(),
                inertia: e.inertia,
            });
        }
        let terms = file
            .terms
            .into_iter()
            .map(|t| (t.tid, t.labels.into_iter().collect()))
            .collect();
        let space = Self::new(interests, terms, file.normalize)?;
        if space.labels != file.labels {
            return Err(Error::malformed(
                path,
                "label table does not match interest clusters",
            ));
        }
        Ok(space)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_json(&text, path)
    }
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceFile {
    version: u32,
    normalize: bool,
    interests: Vec<InterestEntry>,
    labels: Vec<(u32, u32)>,
    terms: Vec<TermEntry>,
}

#[derive(Serialize, Deserialize)]
struct InterestEntry {
    interest: u32,
    k: usize,
    dim: usize,
    inertia: f64,
    /// Base64 of little-endian f32 values, row-major `k × dim`.
    centroids: String,
}

#[derive(Serialize, Deserialize)]
struct TermEntry {
    tid: u32,
    labels: Vec<u32>,
}

fn encode_f32(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f32(text: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = B64.decode(text).map_err(|e| format!("centroids: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err("centroid bytes not a multiple of 4".into());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// One interest's clusters plus its `(term, cluster)` memberships.
type ClusteredInterest = (InterestClusters, Vec<(u32, u32)>);

/// Clusters each interest's terms independently and labels every term with the
/// nearest cluster of each of its interests.
///
/// Interests without terms are skipped with a warning. A `k` larger than the
/// interest's term count is clamped to the term count, also with a warning.
pub fn build_label_space(
    terms: &TermDictionary,
    assignment: &InterestAssignment,
    config: &LabelSpaceConfig,
) -> Result<ClusterLabelSpace> {
    let mut by_interest: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&tid, ints) in &assignment.terms {
        if terms.get(tid).is_none() {
            return Err(Error::UnknownReference(format!(
                "assignment names unknown term {tid}"
            )));
        }
        for &i in ints {
            by_interest.entry(i).or_default().push(tid);
        }
    }
    let embed = |tid: u32| -> Vec<f64> {
        let e = &terms.get(tid).expect("checked above").text_embedding;
        if config.normalize {
            unit(e)
        } else {
            e.clone()
        }
    };
    let work: Vec<(u32, Vec<u32>)> = by_interest.into_iter().collect();
    let clustered: Vec<Result<ClusteredInterest>> = work
        .par_iter()
        .map(|(interest, tids)| {
            let points: Vec<Vec<f64>> = tids.iter().map(|&t| embed(t)).collect();
            let wanted = config.k.k_for(*interest, points.len());
            if wanted == 0 {
                return Err(Error::invalid(format!("k = 0 for interest {interest}")));
            }
            let k = wanted.min(points.len());
            if k < wanted {
                log::warn!(
                    "interest {interest}: k = {wanted} exceeds its {} terms; using {k}",
                    points.len()
                );
            }
            let r = kmeans(
                &points,
                k,
                rng::derive_seed(config.seed, *interest as u64),
                config.max_iters,
                config.restarts,
            )?;
            let members = tids
                .iter()
                .zip(&points)
                .map(|(&t, p)| (t, nearest(p, &r.centroids).0 as u32))
                .collect();
            Ok((
                InterestClusters {
                    interest: *interest,
                    centroids: r.centroids,
                    inertia: r.inertia,
                },
                members,
            ))
        })
        .collect();

    let mut interests = Vec::new();
    let mut memberships = Vec::new();
    for c in clustered {
        let (ic, members) = c?;
        memberships.push((ic.interest, members));
        interests.push(ic);
    }
    for i in 0..interests.iter().map(|c| c.interest + 1).max().unwrap_or(0) {
        if !interests.iter().any(|c| c.interest == i) {
            log::warn!("interest {i} has no terms; skipped");
        }
    }
    // Label ids follow (interest, cluster) order, which is the order of `interests`.
    let mut offsets = BTreeMap::new();
    let mut next = 0u32;
    for c in &interests {
        offsets.insert(c.interest, next);
        next += c.centroids.len() as u32;
    }
    let mut term_labels: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (interest, members) in memberships {
        for (tid, cluster) in members {
            term_labels
                .entry(tid)
                .or_default()
                .insert(offsets[&interest] + cluster);
        }
    }
    ClusterLabelSpace::new(interests, term_labels, config.normalize)
}
