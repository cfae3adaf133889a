//! Synthetic corpora with planted class structure.
//!
//! Each item draws a latent class from a Zipf law over classes. The class fixes the
//! item's embedding centroid, its pixel template, its home interest
//! (`class % taxonomy.len()`) and one high-confidence "class term" annotation.
//! Unrelated noise terms are sprinkled on top; they carry no visual signal, which
//! is what the concreteness stage is supposed to discover.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    Annotation, ContentRecord, Corpus, InterestTaxonomy, PixelGrid, TermDictionary, TermRecord,
};
use crate::rng::{self, Rng};
use crate::{Error, Result};

const CHUNK: usize = 2048;
const NOISE_SLOTS: usize = 2;
const TEMPLATE_GRID: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub n_classes: usize,
    pub zipf_exponent: f64,
    /// Per-coordinate standard deviation added to the unit-norm class centroid.
    pub noise_scale: f64,
    pub embedding_dim: usize,
    /// Probability of each of the two noise-annotation slots being filled.
    pub annotation_noise_rate: f64,
    pub seed: u64,
    /// Side of the square pixel grid; `None` skips pixels.
    pub image_size: Option<usize>,
    pub pixel_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_items: 10_000,
            n_classes: 20,
            zipf_exponent: 1.0,
            noise_scale: 0.25,
            embedding_dim: super::DEFAULT_EMBEDDING_DIM,
            annotation_noise_rate: 0.5,
            seed: 0,
            image_size: None,
            pixel_noise: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if self.n_items == 0 || self.embedding_dim == 0 {
            return Err(Error::invalid("n_items and embedding_dim must be positive"));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::invalid("zipf_exponent must be positive"));
        }
        if !(self.noise_scale >= 0.0 && self.pixel_noise >= 0.0) {
            return Err(Error::invalid("noise scales must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.annotation_noise_rate) {
            return Err(Error::invalid("annotation_noise_rate must lie in [0, 1]"));
        }
        if self.image_size == Some(0) {
            return Err(Error::invalid("image_size must be positive"));
        }
        Ok(())
    }

    /// Class probabilities `p(c) ∝ (c + 1)^(-s)`.
    pub fn class_probabilities(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_classes)
            .map(|c| ((c + 1) as f64).powf(-self.zipf_exponent))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// A generated corpus plus its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Latent class of each record, aligned with `corpus.records()`.
    pub classes: Vec<usize>,
    pub centroids: Vec<Vec<f32>>,
    pub class_terms: Vec<u32>,
    pub templates: Option<Vec<PixelGrid>>,
}

fn unit_gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn template(rng: &mut Rng, size: usize) -> PixelGrid {
    let g = TEMPLATE_GRID;
    let coarse: Vec<f32> = (0..g * g * 3)
        .map(|_| rng.random_range(0.1f32..0.9))
        .collect();
    let mut px = PixelGrid::filled(size, size, 0.0);
    let scale = (g - 1) as f32 / (size.max(2) - 1) as f32;
    for y in 0..size {
        for x in 0..size {
            let fy = y as f32 * scale;
            let fx = x as f32 * scale;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(g - 1), (x0 + 1).min(g - 1));
            let (wy, wx) = (fy - y0 as f32, fx - x0 as f32);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| coarse[(yy * g + xx) * 3 + c];
                let v = (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x1))
                    + wy * ((1.0 - wx) * at(y1, x0) + wx * at(y1, x1));
                px.set(y, x, c, v);
            }
        }
    }
    px
}

fn noisy_pixels(template: &PixelGrid, noise: f64, rng: &mut Rng) -> PixelGrid {
    let mut px = template.clone();
    for v in px.as_mut_slice() {
        let n: f64 = StandardNormal.sample(rng);
        *v = (*v + (noise * n) as f32).clamp(0.0, 1.0);
    }
    px
}

/// Generates a corpus with planted classes. A pure function of its inputs: the
/// items are produced in fixed-size chunks, each with its own derived generator.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    dictionary: &TermDictionary,
    taxonomy: &InterestTaxonomy,
) -> Result<SyntheticCorpus> {
    spec.validate()?;
    if dictionary.len() < spec.n_classes {
        return Err(Error::invalid(format!(
            "{} classes need at least as many dictionary terms, dictionary has {}",
            spec.n_classes,
            dictionary.len()
        )));
    }
    if taxonomy.is_empty() {
        return Err(Error::invalid("taxonomy is empty"));
    }
    let ids: Vec<u32> = dictionary.ids().collect();
    let class_terms = ids[..spec.n_classes].to_vec();
    let noise_terms: Vec<u32> = if ids.len() > spec.n_classes {
        ids[spec.n_classes..].to_vec()
    } else {
        ids.clone()
    };

    let mut centroid_rng = rng::stream_rng(spec.seed, 1);
    let centroids: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| unit_gaussian(&mut centroid_rng, spec.embedding_dim))
        .collect();
    let templates = spec.image_size.map(|size| {
        let mut trng = rng::stream_rng(spec.seed, 2);
        (0..spec.n_classes)
            .map(|_| template(&mut trng, size))
            .collect::<Vec<_>>()
    });

    let mut cdf = spec.class_probabilities();
    for i in 1..cdf.len() {
        cdf[i] += cdf[i - 1];
    }
    let n_interests = taxonomy.len() as u32;

    let n_chunks = spec.n_items.div_ceil(CHUNK);
    let chunks: Vec<Vec<(ContentRecord, usize)>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng::stream_rng(spec.seed, 1_000 + chunk as u64);
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(spec.n_items);
            (start..end)
                .map(|i| {
                    let u: f64 = rng.random();
                    let class = cdf.partition_point(|&c| c <= u).min(spec.n_classes - 1);
                    let embedding: Vec<f32> = centroids[class]
                        .iter()
                        .map(|&c| {
                            let n: f64 = StandardNormal.sample(&mut rng);
                            (c + spec.noise_scale * n) as f32
                        })
                        .collect();
                    let mut annotations = vec![Annotation::new(
                        class_terms[class],
                        rng.random_range(0.92..1.0),
                    )];
                    for _ in 0..NOISE_SLOTS {
                        if rng.random::<f64>() < spec.annotation_noise_rate {
                            let t = noise_terms[rng.random_range(0..noise_terms.len())];
                            if annotations.iter().all(|a| a.term_id != t) {
                                annotations.push(Annotation::new(t, rng.random_range(0.5..1.0)));
                            }
                        }
                    }
                    let mut record = ContentRecord::new(format!("item-{i:07}"), embedding)
                        .with_annotations(annotations)
                        .with_interests([class as u32 % n_interests]);
                    if let Some(t) = &templates {
                        record.pixels = Some(noisy_pixels(&t[class], spec.pixel_noise, &mut rng));
                    }
                    (record, class)
                })
                .collect()
        })
        .collect();

    let (records, classes): (Vec<_>, Vec<_>) = chunks.into_iter().flatten().unzip();
    Ok(SyntheticCorpus {
        corpus: Corpus::new(records)?,
        classes,
        centroids: centroids
            .into_iter()
            .map(|c| c.into_iter().map(|v| v as f32).collect())
            .collect(),
        class_terms,
        templates,
    })
}

/// Draws `per_class` fresh embeddings around each listed class centroid.
/// Returns `(embedding, class)` pairs grouped by class in the order given.
pub fn sample_class_items(
    centroids: &[Vec<f32>],
    classes: &[usize],
    per_class: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<(Vec<f32>, usize)>> {
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &c in classes {
        let centroid = centroids
            .get(c)
            .ok_or_else(|| Error::invalid(format!("class {c} has no centroid")))?;
        let mut rng = rng::stream_rng(seed, c as u64);
        for _ in 0..per_class {
            let v = centroid
                .iter()
                .map(|&m| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    (m as f64 + noise_scale * n) as f32
                })
                .collect();
            out.push((v, c));
        }
    }
    Ok(out)
}

/// Shape of a synthetic term dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    /// Terms tied to latent classes; they come first in id order.
    pub n_class_terms: usize,
    pub n_noise_terms: usize,
    pub text_dim: usize,
    /// Probability that a class term also belongs to a second interest.
    pub polysemy_rate: f64,
    /// Planted text clusters per interest; class terms use the first half,
    /// noise terms the second.
    pub clusters_per_interest: usize,
    /// Fraction of noise terms flagged sensitive, non-canonical or non-English.
    pub flagged_rate: f64,
    pub seed: u64,
}

impl Default for DictionarySpec {
    fn default() -> Self {
        Self {
            n_class_terms: 20,
            n_noise_terms: 80,
            text_dim: super::DEFAULT_TEXT_DIM,
            polysemy_rate: 0.3,
            clusters_per_interest: 4,
            flagged_rate: 0.1,
            seed: 0,
        }
    }
}

/// First term id handed out by [`synthetic_dictionary`].
pub const FIRST_TERM_ID: u32 = 10_000;

#[derive(Clone, Debug)]
pub struct SyntheticDictionary {
    pub terms: Vec<TermRecord>,
    /// Planted term → interests mapping (usable as a file-mode assignment).
    pub term_interests: BTreeMap<u32, BTreeSet<u32>>,
    /// One unit prototype per taxonomy interest, in text-embedding space.
    pub prototypes: Vec<Vec<f64>>,
    /// Planted `(primary interest, sub-cluster)` of every term.
    pub planted_cluster: BTreeMap<u32, (u32, usize)>,
}

pub fn synthetic_dictionary(
    spec: &DictionarySpec,
    taxonomy: &InterestTaxonomy,
) -> Result<SyntheticDictionary> {
    if spec.text_dim == 0 || taxonomy.is_empty() {
        return Err(Error::invalid("text_dim and taxonomy must be non-empty"));
    }
    if !(0.0..=1.0).contains(&spec.polysemy_rate) || !(0.0..=1.0).contains(&spec.flagged_rate) {
        return Err(Error::invalid("rates must lie in [0, 1]"));
    }
    let n_interests = taxonomy.len();
    let clusters = spec.clusters_per_interest.max(1);
    let mut rng = rng::stream_rng(spec.seed, 7);
    let prototypes: Vec<Vec<f64>> = (0..n_interests)
        .map(|_| unit_gaussian(&mut rng, spec.text_dim))
        .collect();
    let offsets: Vec<Vec<Vec<f64>>> = (0..n_interests)
        .map(|_| {
            (0..clusters)
                .map(|_| unit_gaussian(&mut rng, spec.text_dim))
                .collect()
        })
        .collect();

    let class_half = clusters.div_ceil(2).max(1);
    let mut terms = Vec::with_capacity(spec.n_class_terms + spec.n_noise_terms);
    let mut term_interests = BTreeMap::new();
    let mut planted_cluster = BTreeMap::new();
    for i in 0..spec.n_class_terms + spec.n_noise_terms {
        let term_id = FIRST_TERM_ID + i as u32;
        let is_class = i < spec.n_class_terms;
        let primary = if is_class {
            i % n_interests
        } else {
            rng.random_range(0..n_interests)
        };
        let mut interests = BTreeSet::from([primary as u32]);
        if is_class && n_interests > 1 && rng.random::<f64>() < spec.polysemy_rate {
            let mut other = rng.random_range(0..n_interests - 1);
            if other >= primary {
                other += 1;
            }
            interests.insert(other as u32);
        }
        let cluster = if is_class {
            rng.random_range(0..class_half)
        } else if clusters > class_half {
            rng.random_range(class_half..clusters)
        } else {
            0
        };

        let k = interests.len() as f64;
        let mut emb = vec![0.0; spec.text_dim];
        for &it in &interests {
            for (e, p) in emb.iter_mut().zip(&prototypes[it as usize]) {
                *e += p / k;
            }
        }
        for (e, o) in emb.iter_mut().zip(&offsets[primary][cluster]) {
            let n: f64 = StandardNormal.sample(&mut rng);
            *e += 0.35 * o + 0.03 * n;
        }

        let (mut canonical, mut sensitive, mut language) = (true, false, "en".to_string());
        if !is_class && rng.random::<f64>() < spec.flagged_rate {
            match rng.random_range(0..3) {
                0 => sensitive = true,
                1 => canonical = false,
                _ => language = "de".to_string(),
            }
        }
        terms.push(TermRecord {
            term_id,
            surface: if is_class {
                format!("concept-{i}")
            } else {
                format!("abstract-{}", i - spec.n_class_terms)
            },
            text_embedding: emb,
            canonical,
            sensitive,
            language,
        });
        term_interests.insert(term_id, interests);
        planted_cluster.insert(term_id, (primary as u32, cluster));
    }
    Ok(SyntheticDictionary {
        terms,
        term_interests,
        prototypes,
        planted_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dictionary(n_class: usize) -> TermDictionary {
        let spec = DictionarySpec {
            n_class_terms: n_class,
            ..DictionarySpec::default()
        };
        TermDictionary::new(
            synthetic_dictionary(&spec, &InterestTaxonomy::default())
                .unwrap()
                .terms,
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_items_sit_on_centroids() {
        let spec = SyntheticSpec {
            n_items: 200,
            n_classes: 2,
            noise_scale: 0.0,
            annotation_noise_rate: 0.0,
            ..SyntheticSpec::default()
        };
        let s =
            generate_synthetic_corpus(&spec, &dictionary(2), &InterestTaxonomy::default()).unwrap();
        for (r, &c) in s.corpus.iter().zip(&s.classes) {
            assert_eq!(r.embedding, s.centroids[c]);
            assert_eq!(r.annotations.len(), 1);
            assert_eq!(r.annotations[0].term_id, s.class_terms[c]);
        }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let spec = SyntheticSpec {
            n_items: 5_000,
            image_size: Some(8),
            ..SyntheticSpec::default()
        };
        let dict = dictionary(20);
        let tax = InterestTaxonomy::default();
        let a = rng::with_workers(1, || generate_synthetic_corpus(&spec, &dict, &tax).unwrap());
        let b = rng::with_workers(4, || generate_synthetic_corpus(&spec, &dict, &tax).unwrap());
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.classes, b.classes);
    }

    #[test]
    fn too_many_classes_for_dictionary() {
        let spec = SyntheticSpec {
            n_classes: 500,
            ..SyntheticSpec::default()
        };
        assert!(
            generate_synthetic_corpus(&spec, &dictionary(20), &InterestTaxonomy::default())
                .is_err()
        );
    }

    #[test]
    fn dictionary_plants_interests() {
        let spec = DictionarySpec::default();
        let d = synthetic_dictionary(&spec, &InterestTaxonomy::default()).unwrap();
        assert_eq!(d.terms.len(), 100);
        for (i, t) in d.terms.iter().take(spec.n_class_terms).enumerate() {
            assert!(d.term_interests[&t.term_id].contains(&((i % 24) as u32)));
            assert!(t.canonical && !t.sensitive && t.language == "en");
        }
        assert!(d.term_interests.values().any(|s| s.len() == 2));
    }
}
