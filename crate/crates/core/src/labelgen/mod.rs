//! Annotation → label pipeline: select confident, usable annotations, keep only
//! visually concrete terms, map terms to their cluster labels, and keep labels
//! whose interest matches the item. Also dataset shaping for training.

mod resample;

pub use resample::{
    compute_resample_plan, sample_epoch, sample_epoch_indices, subsample_fraction, ResamplePlan,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterLabelSpace;
use crate::concreteness::VisualDictionary;
use crate::corpus::{Annotation, ContentRecord, Corpus, TermDictionary};
use crate::error::IoContext;
use crate::{Error, Result};

/// Records per parallel work unit when running the pipeline.
const CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub labels: BTreeSet<u32>,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, labels: impl IntoIterator<Item = u32>) -> Self {
        Self {
            id: id.into(),
            labels: labels.into_iter().collect(),
        }
    }
}

/// Which optional stages run. Clustering is always on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineVariant {
    pub use_visual_dictionary: bool,
    pub use_l1_restriction: bool,
    pub confidence_threshold: f64,
    #[serde(default = "default_language")]
    pub language: String,
}

fn default_language() -> String {
    "en".into()
}

impl PipelineVariant {
    pub fn new(
        use_visual_dictionary: bool,
        use_l1_restriction: bool,
        confidence_threshold: f64,
    ) -> Self {
        Self {
            use_visual_dictionary,
            use_l1_restriction,
            confidence_threshold,
            language: default_language(),
        }
    }

    /// The three ablation rows: clustering only, plus the visual dictionary, plus L1 restriction.
    pub fn ablation(confidence_threshold: f64) -> [Self; 3] {
        [
            Self::new(false, false, confidence_threshold),
            Self::new(true, false, confidence_threshold),
            Self::new(true, true, confidence_threshold),
        ]
    }

    pub fn name(&self) -> &'static str {
        match (self.use_visual_dictionary, self.use_l1_restriction) {
            (false, false) => "clustering",
            (true, false) => "clustering+dictionary",
            (false, true) => "clustering+l1",
            (true, true) => "clustering+dictionary+l1",
        }
    }
}

/// Keeps annotations above the threshold whose terms are canonical, non-sensitive
/// and in `language`. Unknown terms are dropped.
pub fn select_annotations(
    record: &ContentRecord,
    threshold: f64,
    terms: &TermDictionary,
    language: &str,
) -> Vec<Annotation> {
    record
        .annotations
        .iter()
        .filter(|a| a.confidence > threshold)
        .filter(|a| {
            terms
                .get(a.term_id)
                .is_some_and(|t| t.canonical && !t.sensitive && t.language == language)
        })
        .copied()
        .collect()
}

pub fn apply_visual_dictionary(
    annotations: &[Annotation],
    dictionary: &VisualDictionary,
) -> Vec<Annotation> {
    annotations
        .iter()
        .filter(|a| dictionary.contains(a.term_id))
        .copied()
        .collect()
}

/// Candidate `(interest, label)` pairs for the annotations' terms, plus the number
/// of annotations whose term has no labels.
pub fn map_to_clusters(
    annotations: &[Annotation],
    space: &ClusterLabelSpace,
) -> (BTreeSet<(u32, u32)>, usize) {
    let mut out = BTreeSet::new();
    let mut missing = 0;
    for a in annotations {
        match space.labels_of(a.term_id) {
            Some(labels) => {
                for &l in labels {
                    let (interest, _) = space
                        .label_info(l)
                        .expect("term labels index the label table");
                    out.insert((interest, l));
                }
            }
            None => missing += 1,
        }
    }
    (out, missing)
}

pub fn restrict_l1(
    candidates: &BTreeSet<(u32, u32)>,
    interests: &BTreeSet<u32>,
) -> BTreeSet<(u32, u32)> {
    candidates
        .iter()
        .filter(|(i, _)| interests.contains(i))
        .copied()
        .collect()
}

/// Inputs the pipeline reads. The visual dictionary is only needed when that stage is on.
#[derive(Clone, Copy, Debug)]
pub struct PipelineArtifacts<'a> {
    pub terms: &'a TermDictionary,
    pub label_space: &'a ClusterLabelSpace,
    pub visual_dictionary: Option<&'a VisualDictionary>,
}

/// Counters summed over records. Annotation counts are after each stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub records_in: usize,
    pub annotations_in: usize,
    pub annotations_selected: usize,
    pub annotations_in_dictionary: usize,
    pub unmapped_annotations: usize,
    pub candidate_labels: usize,
    pub labels_after_l1: usize,
    pub records_emitted: usize,
    pub records_dropped: usize,
}

impl StageCounts {
    fn add(&mut self, o: &StageCounts) {
        self.records_in += o.records_in;
        self.annotations_in += o.annotations_in;
        self.annotations_selected += o.annotations_selected;
        self.annotations_in_dictionary += o.annotations_in_dictionary;
        self.unmapped_annotations += o.unmapped_annotations;
        self.candidate_labels += o.candidate_labels;
        self.labels_after_l1 += o.labels_after_l1;
        self.records_emitted += o.records_emitted;
        self.records_dropped += o.records_dropped;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub variant: PipelineVariant,
    pub stages: StageCounts,
    pub distinct_labels: usize,
    pub mean_labels_per_item: f64,
}

impl PipelineStats {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).at(path)
    }
}

fn label_record(
    record: &ContentRecord,
    variant: &PipelineVariant,
    art: &PipelineArtifacts<'_>,
    dict: Option<&VisualDictionary>,
) -> (BTreeSet<u32>, StageCounts) {
    let mut c = StageCounts {
        records_in: 1,
        annotations_in: record.annotations.len(),
        ..StageCounts::default()
    };
    let mut anns = select_annotations(
        record,
        variant.confidence_threshold,
        art.terms,
        &variant.language,
    );
    c.annotations_selected = anns.len();
    if let Some(d) = dict {
        anns = apply_visual_dictionary(&anns, d);
    }
    c.annotations_in_dictionary = anns.len();
    let (mut cands, missing) = map_to_clusters(&anns, art.label_space);
    c.unmapped_annotations = missing;
    c.candidate_labels = cands.len();
    if variant.use_l1_restriction {
        cands = restrict_l1(&cands, &record.interests);
    }
    c.labels_after_l1 = cands.len();
    let labels: BTreeSet<u32> = cands.into_iter().map(|(_, l)| l).collect();
    if labels.is_empty() {
        c.records_dropped = 1;
    } else {
        c.records_emitted = 1;
    }
    (labels, c)
}

/// Runs every record through the enabled stages, dropping records left without labels.
/// Output keeps corpus order.
pub fn run_pipeline(
    corpus: &Corpus,
    variant: &PipelineVariant,
    artifacts: &PipelineArtifacts<'_>,
) -> Result<(Vec<LabeledExample>, PipelineStats)> {
    let dict = if variant.use_visual_dictionary {
        Some(
            artifacts
                .visual_dictionary
                .ok_or_else(|| Error::MissingArtifact("visual_dict.json".into()))?,
        )
    } else {
        None
    };
    let chunks: Vec<(Vec<LabeledExample>, StageCounts)> = corpus
        .records()
        .par_chunks(CHUNK)
        .map(|recs| {
            let mut out = Vec::new();
            let mut counts = StageCounts::default();
            for r in recs {
                let (labels, c) = label_record(r, variant, artifacts, dict);
                counts.add(&c);
                if !labels.is_empty() {
                    out.push(LabeledExample {
                        id: r.id.clone(),
                        labels,
                    });
                }
            }
            (out, counts)
        })
        .collect();
    let mut examples = Vec::new();
    let mut stages = StageCounts::default();
    for (ex, c) in chunks {
        examples.extend(ex);
        stages.add(&c);
    }
    let distinct: BTreeSet<u32> = examples
        .iter()
        .flat_map(|e| e.labels.iter().copied())
        .collect();
    let total: usize = examples.iter().map(|e| e.labels.len()).sum();
    let stats = PipelineStats {
        variant: variant.clone(),
        stages,
        distinct_labels: distinct.len(),
        mean_labels_per_item: if examples.is_empty() {
            0.0
        } else {
            total as f64 / examples.len() as f64
        },
    };
    Ok((examples, stats))
}

/// Label id → number of examples carrying it.
pub fn label_frequencies(examples: &[LabeledExample]) -> BTreeMap<u32, usize> {
    let mut f = BTreeMap::new();
    for e in examples {
        for &l in &e.labels {
            *f.entry(l).or_insert(0) += 1;
        }
    }
    f
}

/// `labels.jsonl`: one `{"id", "labels"}` object per example.
pub fn write_labels(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut s = String::new();
    for e in examples {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    std::fs::write(path, s).at(path)
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let e: LabeledExample = serde_json::from_str(line)
            .map_err(|err| Error::malformed(path, format!("line {}: {err}", n + 1)))?;
        if e.labels.is_empty() {
            return Err(Error::malformed(
                path,
                format!("line {}: empty label set", n + 1),
            ));
        }
        if !seen.insert(e.id.clone()) {
            return Err(Error::DuplicateId(e.id));
        }
        out.push(e);
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledExample>> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_labels(&text, path)
}
