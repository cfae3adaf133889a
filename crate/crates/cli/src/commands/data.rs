use std::collections::{BTreeMap, BTreeSet};

use annoforge::clustering::{
    assign_interests, build_label_space, AssignMode, ClusterLabelSpace, KSchedule, LabelSpaceConfig,
};
use annoforge::concreteness::{
    build_visual_dictionary, histogram_csv, score_histogram, ConcretenessConfig,
    ConcretenessReport, VisualDictionary,
};
use annoforge::corpus::{
    generate_synthetic_corpus, read_corpus, read_terms, retrieval_probe, split_with_dedup,
    synthetic_dictionary, write_corpus, write_shard_set, write_terms, DictionarySpec,
    InterestTaxonomy, ProbeSpec, SyntheticSpec, TermDictionary,
};
use annoforge::labelgen::{
    compute_resample_plan, read_labels, run_pipeline, sample_epoch, write_labels, LabeledExample,
    PipelineArtifacts, PipelineVariant,
};
use annoforge::retrieval::{near_dup_detect, BinaryIndex};
use annoforge::rng::derive_seed;
use annoforge::Error;

use super::{read_json, Context, Run};
use crate::args::{
    BuildDictArgs, ClusterArgs, ConcretenessArgs, DedupSplitArgs, GenCorpusArgs, LabelgenArgs,
    ResampleArgs,
};
use crate::{CliError, CliResult};

pub(crate) fn load_terms(path: &std::path::Path) -> CliResult<TermDictionary> {
    Ok(TermDictionary::new(read_terms(path)?)?)
}

pub fn gen_corpus(ctx: &Context, a: &GenCorpusArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "gen-corpus", a, &a.out)?;
    let taxonomy = InterestTaxonomy::default_24();
    let dspec = DictionarySpec {
        n_class_terms: a.classes,
        n_noise_terms: a.noise_terms,
        text_dim: a.text_dim,
        polysemy_rate: a.polysemy,
        clusters_per_interest: a.clusters_per_interest,
        flagged_rate: a.flagged,
        seed: derive_seed(ctx.seed, 1),
    };
    let dict = synthetic_dictionary(&dspec, &taxonomy)?;
    let terms = TermDictionary::new(dict.terms.clone())?;
    let spec = SyntheticSpec {
        n_items: a.items,
        n_classes: a.classes,
        zipf_exponent: a.zipf,
        noise_scale: a.noise,
        embedding_dim: a.dim,
        annotation_noise_rate: a.annotation_noise,
        seed: derive_seed(ctx.seed, 2),
        image_size: a.image_size,
        pixel_noise: a.pixel_noise,
    };
    let synth = generate_synthetic_corpus(&spec, &terms, &taxonomy)?;

    let corpus_dir = run.output("corpus");
    if a.shard_size > 0 {
        write_shard_set(&corpus_dir, &synth.corpus, a.shard_size)?;
    } else {
        write_corpus(&corpus_dir, &synth.corpus)?;
    }
    write_terms(&run.output("terms.jsonl"), &dict.terms)?;
    run.write_json("term_interests.json", &dict.term_interests)?;
    run.write_json("prototypes.json", &dict.prototypes)?;
    let class_labels: Vec<LabeledExample> = synth
        .corpus
        .iter()
        .zip(&synth.classes)
        .map(|(r, &c)| LabeledExample::new(r.id.clone(), [c as u32]))
        .collect();
    write_labels(&run.output("class_labels.jsonl"), &class_labels)?;

    if a.probe_per_class > 0 {
        let probe = retrieval_probe(
            &synth,
            &spec,
            &terms,
            &taxonomy,
            &ProbeSpec {
                per_class: a.probe_per_class,
                queries_per_class: a.probe_queries,
                distractor_ratio: a.distractor_ratio,
                seed: derive_seed(ctx.seed, 3),
            },
        )?;
        write_corpus(&run.output("probe"), &probe.corpus)?;
        probe.eval_set.save(&run.output("evalset.jsonl"))?;
    }
    run.finish()
}

pub fn concreteness(ctx: &Context, a: &ConcretenessArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "concreteness", a, &a.out)?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let terms = load_terms(&run.input(&a.terms)?)?;
    let ids: Vec<u32> = if a.term.is_empty() {
        terms.ids().collect()
    } else {
        for &t in &a.term {
            if terms.get(t).is_none() {
                return Err(Error::UnknownReference(format!(
                    "term {t} is not in {}",
                    a.terms.display()
                ))
                .into());
            }
        }
        a.term.clone()
    };
    let config = ConcretenessConfig {
        confidence_threshold: a.threshold,
        min_positives: a.min_positives,
        train_fraction: a.train_fraction,
        hidden: a.hidden,
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: ctx.seed,
    };
    let report = ConcretenessReport::score(&corpus, &ids, &config)?;
    report.save(&run.output("concreteness.jsonl"))?;
    run.finish()
}

pub fn build_dict(ctx: &Context, a: &BuildDictArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "build-dict", a, &a.out)?;
    let report = ConcretenessReport::load(&run.input(&a.scores)?)?;
    if a.bins == 0 {
        return Err(CliError::usage("--bins must be positive"));
    }
    let dict = build_visual_dictionary(&report, a.boundary);
    log::info!(
        "visual dictionary keeps {} of {} terms at boundary {}",
        dict.len(),
        report.terms.len(),
        a.boundary
    );
    dict.save(&run.output("visual_dict.json"))?;
    run.write_text(
        "concreteness_hist.csv",
        &histogram_csv(&score_histogram(&report, a.bins)),
    )?;
    run.finish()
}

pub fn cluster(ctx: &Context, a: &ClusterArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "cluster", a, &a.out)?;
    let terms = load_terms(&run.input(&a.terms)?)?;
    let mode = match (&a.assign_file, &a.prototypes) {
        (Some(f), None) => {
            let map: BTreeMap<u32, BTreeSet<u32>> = read_json(&run.input(f)?)?;
            AssignMode::File(map)
        }
        (None, Some(p)) => AssignMode::Centroid {
            prototypes: read_json(&run.input(p)?)?,
            tau: a.tau,
            top_m: a.top_m,
        },
        _ => {
            return Err(CliError::usage(
                "give exactly one of --assign-file and --prototypes",
            ))
        }
    };
    let assignment = assign_interests(&terms, &InterestTaxonomy::default_24(), &mode)?;
    let config = LabelSpaceConfig {
        k: match a.terms_per_cluster {
            Some(t) => KSchedule::TermsPerCluster {
                terms_per_cluster: t,
            },
            None => KSchedule::Uniform { k: a.k },
        },
        normalize: a.normalize,
        max_iters: a.max_iters,
        restarts: a.restarts,
        seed: ctx.seed,
    };
    let space = build_label_space(&terms, &assignment, &config)?;
    log::info!(
        "{} labels over {} interests",
        space.n_labels(),
        space.interests().len()
    );
    run.write_json("interest_assignment.json", &assignment)?;
    space.save(&run.output("label_space.json"))?;
    run.finish()
}

pub fn labelgen(ctx: &Context, a: &LabelgenArgs) -> CliResult<()> {
    let use_dict = !a.no_visual_dict;
    if use_dict && a.visual_dict.is_none() {
        return Err(CliError::usage(
            "--visual-dict is required unless --no-visual-dict is given",
        ));
    }
    let mut run = Run::new(ctx, "labelgen", a, &a.out)?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let terms = load_terms(&run.input(&a.terms)?)?;
    let space = ClusterLabelSpace::load(&run.input(&a.label_space)?)?;
    let dict = match (&a.visual_dict, use_dict) {
        (Some(p), true) => Some(VisualDictionary::load(&run.input(p)?)?),
        _ => None,
    };
    let variant = PipelineVariant {
        language: a.language.clone(),
        ..PipelineVariant::new(use_dict, !a.no_l1, a.threshold)
    };
    let artifacts = PipelineArtifacts {
        terms: &terms,
        label_space: &space,
        visual_dictionary: dict.as_ref(),
    };
    let (examples, stats) = run_pipeline(&corpus, &variant, &artifacts)?;
    log::info!(
        "{}: {} examples, {} distinct labels, {:.3} labels/item",
        variant.name(),
        examples.len(),
        stats.distinct_labels,
        stats.mean_labels_per_item
    );
    write_labels(&run.output("labels.jsonl"), &examples)?;
    stats.save(&run.output("pipeline_stats.json"))?;
    run.finish()
}

pub fn resample(ctx: &Context, a: &ResampleArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "resample", a, &a.out)?;
    let examples = read_labels(&run.input(&a.labels)?)?;
    let plan = compute_resample_plan(&examples)?;
    plan.save(&run.output("resample_plan.bin"))?;
    if a.draws > 0 {
        let ids = sample_epoch(&examples, &plan, a.draws, ctx.seed)?;
        let mut text = ids.join("\n");
        text.push('\n');
        run.write_text("epoch.txt", &text)?;
    }
    run.finish()
}

#[derive(serde::Serialize)]
struct DupPair<'a> {
    a: &'a str,
    b: &'a str,
}

pub fn dedup_split(ctx: &Context, a: &DedupSplitArgs) -> CliResult<()> {
    let mut run = Run::new(ctx, "dedup-split", a, &a.out)?;
    let corpus = read_corpus(&run.input(&a.corpus)?)?;
    let ids: Vec<String> = corpus.iter().map(|r| r.id.clone()).collect();
    let embeddings: Vec<Vec<f64>> = corpus.iter().map(|r| r.embedding_f64()).collect();
    let index = BinaryIndex::from_embeddings(ids, &embeddings)?.with_bands(a.bands)?;
    let pairs = near_dup_detect(&index, a.radius)?;
    log::info!(
        "{} near-duplicate pairs within radius {}",
        pairs.len(),
        a.radius
    );
    let (train, eval) = split_with_dedup(&corpus, &pairs, a.eval_fraction, ctx.seed)?;

    index.save(&run.output("index.bin"))?;
    let mut text = String::new();
    for (x, y) in &pairs {
        text.push_str(&serde_json::to_string(&DupPair { a: x, b: y }).map_err(Error::from)?);
        text.push('\n');
    }
    run.write_text("dup_pairs.jsonl", &text)?;
    write_corpus(&run.output("train"), &train)?;
    write_corpus(&run.output("eval"), &eval)?;
    run.finish()
}
