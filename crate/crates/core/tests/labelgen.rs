use std::collections::{BTreeMap, BTreeSet};

use annoforge::clustering::{
    assign_interests, build_label_space, AssignMode, ClusterLabelSpace, LabelSpaceConfig,
};
use annoforge::concreteness::VisualDictionary;
use annoforge::corpus::{
    generate_synthetic_corpus, synthetic_dictionary, Annotation, Corpus, DictionarySpec,
    InterestTaxonomy, SyntheticSpec, TermDictionary,
};
use annoforge::labelgen::{
    apply_visual_dictionary, compute_resample_plan, run_pipeline, sample_epoch,
    sample_epoch_indices, subsample_fraction, LabeledExample, PipelineArtifacts, PipelineVariant,
};
use annoforge::rng;
use proptest::prelude::*;
use rand::Rng;

const THRESHOLD: f64 = 0.9;

struct Fixture {
    corpus: Corpus,
    terms: TermDictionary,
    space: ClusterLabelSpace,
    dict: VisualDictionary,
}

/// 10k planted items, centroid-assigned interests and a dictionary holding every
/// third term.
fn fixture() -> Fixture {
    let taxonomy = InterestTaxonomy::default_24();
    let sd = synthetic_dictionary(&DictionarySpec::default(), &taxonomy).unwrap();
    let prototypes = sd.prototypes.clone();
    let terms = TermDictionary::new(sd.terms).unwrap();
    let s = generate_synthetic_corpus(&SyntheticSpec::default(), &terms, &taxonomy).unwrap();
    let mode = AssignMode::Centroid {
        prototypes,
        tau: 0.3,
        top_m: 3,
    };
    let assignment = assign_interests(&terms, &taxonomy, &mode).unwrap();
    let space = build_label_space(&terms, &assignment, &LabelSpaceConfig::default()).unwrap();
    let dict = VisualDictionary {
        boundary: 0.7,
        terms: terms.ids().filter(|t| t % 3 != 1).collect(),
    };
    Fixture {
        corpus: s.corpus,
        terms,
        space,
        dict,
    }
}

fn artifacts(f: &Fixture) -> PipelineArtifacts<'_> {
    PipelineArtifacts {
        terms: &f.terms,
        label_space: &f.space,
        visual_dictionary: Some(&f.dict),
    }
}

/// Straight-line version of the four filters, one record at a time.
fn oracle(f: &Fixture, dict_on: bool, l1_on: bool) -> Vec<LabeledExample> {
    // Label → interest from the cluster table layout: interests ascending, clusters inside.
    let mut label_interest = Vec::new();
    for ic in f.space.interests() {
        for _ in &ic.centroids {
            label_interest.push(ic.interest);
        }
    }
    let mut out = Vec::new();
    for r in f.corpus.records() {
        let mut labels = BTreeSet::new();
        for a in &r.annotations {
            if a.confidence <= THRESHOLD {
                continue;
            }
            let Some(t) = f.terms.terms().iter().find(|t| t.term_id == a.term_id) else {
                continue;
            };
            if !t.canonical || t.sensitive || t.language != "en" {
                continue;
            }
            if dict_on && !f.dict.terms.contains(&a.term_id) {
                continue;
            }
            let Some(ls) = f.space.term_labels().get(&a.term_id) else {
                continue;
            };
            for &l in ls {
                if !l1_on || r.interests.contains(&label_interest[l as usize]) {
                    labels.insert(l);
                }
            }
        }
        if !labels.is_empty() {
            out.push(LabeledExample {
                id: r.id.clone(),
                labels,
            });
        }
    }
    out
}

#[test]
fn pipeline_matches_per_record_oracle() {
    let f = fixture();
    for (dict_on, l1_on) in [(false, false), (true, false), (false, true), (true, true)] {
        let variant = PipelineVariant::new(dict_on, l1_on, THRESHOLD);
        let (got, stats) = run_pipeline(&f.corpus, &variant, &artifacts(&f)).unwrap();
        let want = oracle(&f, dict_on, l1_on);
        assert_eq!(got, want, "variant {}", variant.name());
        assert_eq!(stats.stages.records_emitted, want.len());
        assert_eq!(
            stats.stages.records_emitted + stats.stages.records_dropped,
            f.corpus.len()
        );
    }
}

#[test]
fn stages_only_remove_labels() {
    let f = fixture();
    let [a, b, c] = PipelineVariant::ablation(THRESHOLD);
    let run = |v: &PipelineVariant| run_pipeline(&f.corpus, v, &artifacts(&f)).unwrap();
    let (ea, sa) = run(&a);
    let (eb, sb) = run(&b);
    let (ec, sc) = run(&c);
    assert!(sa.distinct_labels >= sb.distinct_labels && sb.distinct_labels >= sc.distinct_labels);
    let by_id = |e: &[LabeledExample]| -> BTreeMap<String, BTreeSet<u32>> {
        e.iter().map(|x| (x.id.clone(), x.labels.clone())).collect()
    };
    let (ma, mb) = (by_id(&ea), by_id(&eb));
    for x in &eb {
        assert!(x.labels.is_subset(&ma[&x.id]));
    }
    let records = f.corpus.index_by_id();
    for x in &ec {
        assert!(x.labels.is_subset(&mb[&x.id]));
        let interests = &f.corpus.records()[records[x.id.as_str()]].interests;
        for &l in &x.labels {
            assert!(
                interests.contains(&f.space.label_info(l).unwrap().0),
                "{}: label {l}",
                x.id
            );
        }
    }
}

#[test]
fn full_interest_cover_makes_restriction_vacuous() {
    let mut f = fixture();
    let all: Vec<u32> = (0..24).collect();
    let records = f
        .corpus
        .records()
        .iter()
        .map(|r| r.clone().with_interests(all.clone()))
        .collect();
    f.corpus = Corpus::new(records).unwrap();
    let (on, _) = run_pipeline(
        &f.corpus,
        &PipelineVariant::new(true, true, THRESHOLD),
        &artifacts(&f),
    )
    .unwrap();
    let (off, _) = run_pipeline(
        &f.corpus,
        &PipelineVariant::new(true, false, THRESHOLD),
        &artifacts(&f),
    )
    .unwrap();
    assert_eq!(on, off);
}

#[test]
fn dictionary_filter_is_a_subset_by_scan() {
    let mut r = rng::rng(12);
    let dict = VisualDictionary {
        boundary: 0.5,
        terms: (0..40).filter(|_| r.random_bool(0.5)).collect(),
    };
    for _ in 0..500 {
        let anns: Vec<Annotation> = (0..r.random_range(0..8))
            .map(|_| Annotation::new(r.random_range(0..40), r.random_range(0.0..1.0)))
            .collect();
        let out = apply_visual_dictionary(&anns, &dict);
        let expected: Vec<Annotation> = anns
            .iter()
            .filter(|a| dict.terms.contains(&a.term_id))
            .copied()
            .collect();
        assert_eq!(out, expected);
        assert!(out.iter().all(|a| anns.contains(a)));

        let everything = VisualDictionary {
            boundary: 0.0,
            terms: (0..40).collect(),
        };
        assert_eq!(apply_visual_dictionary(&anns, &everything), anns);
        let nothing = VisualDictionary {
            boundary: 1.0,
            terms: BTreeSet::new(),
        };
        assert!(apply_visual_dictionary(&anns, &nothing).is_empty());
    }
}

#[test]
fn multi_label_weights_by_hand() {
    let ex = vec![
        LabeledExample::new("a", [0, 1]),
        LabeledExample::new("b", [1]),
        LabeledExample::new("c", [1, 2]),
        LabeledExample::new("d", [2]),
    ];
    let plan = compute_resample_plan(&ex).unwrap();
    // Frequencies {0: 1, 1: 3, 2: 2}; each weight is the mean of f^-1/2 over the item's labels.
    assert_eq!(plan.frequencies, BTreeMap::from([(0, 1), (1, 3), (2, 2)]));
    let want = [
        0.2904494904283307,
        0.21262378402602838,
        0.23651683652388975,
        0.26040988902175116,
    ];
    for (w, e) in plan.weights.iter().zip(want) {
        assert!((w - e).abs() < 1e-12, "{w} vs {e}");
    }
    assert!((plan.normalizer - 2.715360710159073).abs() < 1e-12);
}

fn single_label(counts: &[usize]) -> Vec<LabeledExample> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| {
            (0..n).map(move |j| LabeledExample::new(format!("c{c}-{j}"), [c as u32]))
        })
        .collect()
}

fn class_counts(ex: &[LabeledExample], draws: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &i in draws {
        counts[*ex[i].labels.first().unwrap() as usize] += 1;
    }
    counts
}

#[test]
fn equal_weights_sample_uniformly() {
    let ex = single_label(&[50; 10]);
    let plan = compute_resample_plan(&ex).unwrap();
    let n = 100_000;
    let counts = class_counts(&ex, &sample_epoch_indices(&plan, n, 3).unwrap(), 10);
    let sigma = (n as f64 * 0.1 * 0.9).sqrt();
    for c in counts {
        assert!((c as f64 - 10_000.0).abs() <= 3.0 * sigma, "count {c}");
    }
}

#[test]
fn zipf_classes_sample_by_square_root() {
    let freqs: Vec<usize> = (1..=20).map(|r| 2_000 / r).collect();
    let ex = single_label(&freqs);
    let plan = compute_resample_plan(&ex).unwrap();
    let n = 200_000;
    let counts = class_counts(&ex, &sample_epoch_indices(&plan, n, 8).unwrap(), 20);
    let root_sum: f64 = freqs.iter().map(|&f| (f as f64).sqrt()).sum();
    for c in 0..10 {
        let expected = n as f64 * (freqs[c] as f64).sqrt() / root_sum;
        let rel = (counts[c] as f64 - expected).abs() / expected;
        assert!(rel <= 0.05, "class {c}: {} vs {expected:.0}", counts[c]);
    }
}

#[test]
fn fractions_nest_and_round() {
    let ex = single_label(&[100_000]);
    let ids = |p: f64| -> BTreeSet<String> {
        subsample_fraction(&ex, p, 77)
            .unwrap()
            .into_iter()
            .map(|e| e.id)
            .collect()
    };
    let (small, mid, all) = (ids(0.01), ids(0.1), ids(1.0));
    assert_eq!(
        (small.len(), mid.len(), all.len()),
        (1_000, 10_000, 100_000)
    );
    assert!(small.is_subset(&mid) && mid.is_subset(&all));
    assert!(subsample_fraction(&ex, 0.0, 1).is_err());
    assert!(subsample_fraction(&ex, 1.5, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampling_is_a_pure_function(
        counts in proptest::collection::vec(1usize..30, 1..8),
        n in 0usize..300,
        p in 0.001f64..=1.0,
        seed in any::<u64>(),
    ) {
        let ex = single_label(&counts);
        let plan = compute_resample_plan(&ex).unwrap();
        let a = sample_epoch(&ex, &plan, n, seed).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(&a, &sample_epoch(&ex, &plan, n, seed).unwrap());
        let sub = subsample_fraction(&ex, p, seed).unwrap();
        prop_assert_eq!(sub.len(), (p * ex.len() as f64).round() as usize);
        prop_assert_eq!(sub, subsample_fraction(&ex, p, seed).unwrap());
        prop_assert!(plan.weights.iter().all(|w| *w > 0.0 && w.is_finite()));
    }
}
