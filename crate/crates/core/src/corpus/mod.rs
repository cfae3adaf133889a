//! Data model, shard I/O, synthetic corpora and near-duplicate-aware splitting.

mod io;
mod probe;
mod split;
mod stats;
mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    corpus_digest, read_corpus, read_shard, read_shard_set, read_terms, write_corpus, write_shard,
    write_shard_set, write_terms, ShardEntry, ShardManifest, EMB_MAGIC, PIX_MAGIC, SHARD_MANIFEST,
};
pub use probe::{retrieval_probe, ProbeSpec, RetrievalProbe};
pub use split::{split_with_dedup, DisjointSet};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{
    generate_synthetic_corpus, sample_class_items, synthetic_dictionary, DictionarySpec,
    SyntheticCorpus, SyntheticDictionary, SyntheticSpec,
};

/// Default base-embedding width at desk scale.
pub const DEFAULT_EMBEDDING_DIM: usize = 64;
/// Default term text-embedding width at desk scale.
pub const DEFAULT_TEXT_DIM: usize = 32;

/// One `(term, confidence)` output of the external keyword model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub term_id: u32,
    pub confidence: f64,
}

impl Annotation {
    pub fn new(term_id: u32, confidence: f64) -> Self {
        Self {
            term_id,
            confidence,
        }
    }
}

/// Row-major `H×W×3` image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "pixel grid {height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// One image-like item of the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentRecord {
    pub id: String,
    pub annotations: Vec<Annotation>,
    pub interests: BTreeSet<u32>,
    pub embedding: Vec<f32>,
    pub pixels: Option<PixelGrid>,
}

impl ContentRecord {
    pub fn new(id: impl Into<String>, embedding: Vec<f32>) -> Self {
        Self {
            id: id.into(),
            annotations: Vec::new(),
            interests: BTreeSet::new(),
            embedding,
            pixels: None,
        }
    }

    pub fn with_annotations(mut self, annotations: Vec<Annotation>) -> Self {
        self.annotations = annotations;
        self
    }

    pub fn with_interests(mut self, interests: impl IntoIterator<Item = u32>) -> Self {
        self.interests = interests.into_iter().collect();
        self
    }

    pub fn with_pixels(mut self, pixels: PixelGrid) -> Self {
        self.pixels = Some(pixels);
        self
    }

    /// Highest confidence this record gives `term_id`, if annotated at all.
    pub fn confidence_of(&self, term_id: u32) -> Option<f64> {
        self.annotations
            .iter()
            .filter(|a| a.term_id == term_id)
            .map(|a| a.confidence)
            .fold(None, |best, c| Some(best.map_or(c, |b: f64| b.max(c))))
    }

    pub fn embedding_f64(&self) -> Vec<f64> {
        self.embedding.iter().map(|&v| v as f64).collect()
    }
}

/// A validated collection of records sharing one embedding width.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    records: Vec<ContentRecord>,
    embedding_dim: usize,
}

impl Corpus {
    /// Validates record invariants: confidences in `[0, 1]`, unique ids, constant
    /// embedding width, and pixel grids either absent everywhere or of one size.
    pub fn new(records: Vec<ContentRecord>) -> Result<Self> {
        let embedding_dim = records.first().map_or(0, |r| r.embedding.len());
        let pixel_shape = records
            .first()
            .and_then(|r| r.pixels.as_ref().map(|p| (p.height, p.width)));
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            if !seen.insert(record.id.as_str()) {
                return Err(Error::DuplicateId(record.id.clone()));
            }
            if record.embedding.len() != embedding_dim {
                return Err(Error::DimensionMismatch {
                    context: format!("embedding of record {:?}", record.id),
                    expected: embedding_dim,
                    found: record.embedding.len(),
                });
            }
            if let Some(a) = record
                .annotations
                .iter()
                .find(|a| !(0.0..=1.0).contains(&a.confidence))
            {
                return Err(Error::invalid(format!(
                    "record {:?}: confidence {} of term {} outside [0, 1]",
                    record.id, a.confidence, a.term_id
                )));
            }
            let shape = record.pixels.as_ref().map(|p| (p.height, p.width));
            if shape != pixel_shape {
                return Err(Error::shape(format!(
                    "record {:?}: pixel grid {:?} differs from corpus {:?}",
                    record.id, shape, pixel_shape
                )));
            }
        }
        Ok(Self {
            records,
            embedding_dim,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[ContentRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ContentRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ContentRecord> {
        self.records.iter()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// `(height, width)` of the pixel grids, if the corpus carries pixels.
    pub fn pixel_shape(&self) -> Option<(usize, usize)> {
        self.records
            .first()
            .and_then(|r| r.pixels.as_ref().map(|p| (p.height, p.width)))
    }

    pub fn index_by_id(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    /// Checks every interest id against the taxonomy.
    pub fn validate_interests(&self, taxonomy: &InterestTaxonomy) -> Result<()> {
        for r in &self.records {
            if let Some(&bad) = r.interests.iter().find(|&&i| !taxonomy.contains(i)) {
                return Err(Error::UnknownReference(format!(
                    "record {:?} references interest {bad}; taxonomy has {}",
                    r.id,
                    taxonomy.len()
                )));
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a ContentRecord;
    type IntoIter = std::slice::Iter<'a, ContentRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// A dictionary term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    #[serde(rename = "tid")]
    pub term_id: u32,
    #[serde(rename = "s")]
    pub surface: String,
    #[serde(rename = "emb")]
    pub text_embedding: Vec<f64>,
    #[serde(rename = "canon")]
    pub canonical: bool,
    #[serde(rename = "sens")]
    pub sensitive: bool,
    #[serde(rename = "lang")]
    pub language: String,
}

/// Terms indexed by id, with a shared text-embedding width.
#[derive(Clone, Debug, Default)]
pub struct TermDictionary {
    terms: Vec<TermRecord>,
    by_id: HashMap<u32, usize>,
    text_dim: usize,
}

impl TermDictionary {
    pub fn new(mut terms: Vec<TermRecord>) -> Result<Self> {
        terms.sort_by_key(|t| t.term_id);
        let text_dim = terms.first().map_or(0, |t| t.text_embedding.len());
        let mut by_id = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if by_id.insert(t.term_id, i).is_some() {
                return Err(Error::DuplicateId(format!("term {}", t.term_id)));
            }
            if t.text_embedding.len() != text_dim {
                return Err(Error::DimensionMismatch {
                    context: format!("text embedding of term {}", t.term_id),
                    expected: text_dim,
                    found: t.text_embedding.len(),
                });
            }
        }
        Ok(Self {
            terms,
            by_id,
            text_dim,
        })
    }

    pub fn get(&self, term_id: u32) -> Option<&TermRecord> {
        self.by_id.get(&term_id).map(|&i| &self.terms[i])
    }

    /// Terms in ascending id order.
    pub fn terms(&self) -> &[TermRecord] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.terms.iter().map(|t| t.term_id)
    }
}

/// The fixed top-level interest taxonomy (contiguous ids `0..N`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestTaxonomy {
    entries: Vec<(u32, String)>,
}

const DEFAULT_INTERESTS: [&str; 24] = [
    "animals",
    "architecture",
    "art",
    "beauty",
    "cars and motorcycles",
    "design",
    "diy and crafts",
    "education",
    "entertainment",
    "event planning",
    "fashion",
    "finance",
    "food and drinks",
    "gardening",
    "health",
    "home decor",
    "parenting",
    "quotes",
    "science",
    "sports",
    "tattoos",
    "technology",
    "travel",
    "weddings",
];

impl InterestTaxonomy {
    pub fn new(entries: Vec<(u32, String)>) -> Result<Self> {
        let mut names = HashSet::new();
        for (expected, (id, name)) in entries.iter().enumerate() {
            if *id as usize != expected {
                return Err(Error::invalid(format!(
                    "interest ids must be contiguous from 0; position {expected} has id {id}"
                )));
            }
            if !names.insert(name.as_str()) {
                return Err(Error::DuplicateId(format!("interest name {name:?}")));
            }
        }
        Ok(Self { entries })
    }

    /// The 24 top-level interests.
    pub fn default_24() -> Self {
        Self {
            entries: DEFAULT_INTERESTS
                .iter()
                .enumerate()
                .map(|(i, n)| (i as u32, n.to_string()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        (id as usize) < self.entries.len()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|(_, n)| n.as_str())
    }

    pub fn entries(&self) -> &[(u32, String)] {
        &self.entries
    }
}

impl Default for InterestTaxonomy {
    fn default() -> Self {
        Self::default_24()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let a = ContentRecord::new("a", vec![0.0; 2]);
        let err = Corpus::new(vec![a.clone(), a]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
    }

    #[test]
    fn corpus_rejects_mixed_dims_and_bad_confidence() {
        let a = ContentRecord::new("a", vec![0.0; 2]);
        let b = ContentRecord::new("b", vec![0.0; 3]);
        assert!(matches!(
            Corpus::new(vec![a.clone(), b]).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
        let c =
            ContentRecord::new("c", vec![0.0; 2]).with_annotations(vec![Annotation::new(1, 1.5)]);
        assert!(Corpus::new(vec![a, c]).is_err());
    }

    #[test]
    fn taxonomy_defaults_and_validation() {
        let t = InterestTaxonomy::default_24();
        assert_eq!(t.len(), 24);
        assert_eq!(t.name(15), Some("home decor"));
        assert!(InterestTaxonomy::new(vec![(1, "x".into())]).is_err());
        assert!(InterestTaxonomy::new(vec![(0, "x".into()), (1, "x".into())]).is_err());
    }

    #[test]
    fn confidence_of_takes_max() {
        let r = ContentRecord::new("a", vec![])
            .with_annotations(vec![Annotation::new(3, 0.2), Annotation::new(3, 0.7)]);
        assert_eq!(r.confidence_of(3), Some(0.7));
        assert_eq!(r.confidence_of(4), None);
    }
}
