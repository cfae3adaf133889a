#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use annoforge::concreteness::{
    build_term_dataset, build_visual_dictionary, score_term, ConcretenessConfig,
    ConcretenessReport, TermScore,
};
use annoforge::corpus::{
    generate_synthetic_corpus, synthetic_dictionary, Annotation, ContentRecord, Corpus,
    DictionarySpec, InterestTaxonomy, SyntheticSpec, TermDictionary,
};
use annoforge::rng;
use annoforge::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(dim: usize, r: &mut rng::Rng) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(r)).collect()
}

/// Items with up to four of ten terms each, at random confidences.
fn annotated_corpus(n: usize, seed: u64) -> Corpus {
    let mut r = rng::rng(seed);
    let records = (0..n)
        .map(|i| {
            let mut terms: Vec<u32> = (0..10).collect();
            terms.shuffle(&mut r);
            let k = r.random_range(0..5);
            let anns = terms[..k]
                .iter()
                .map(|&t| Annotation::new(t, r.random_range(0.0..1.0)))
                .collect();
            ContentRecord::new(format!("r{i:05}"), gaussian(4, &mut r)).with_annotations(anns)
        })
        .collect();
    Corpus::new(records).unwrap()
}

#[test]
fn dataset_agrees_with_a_linear_scan() {
    let corpus = annotated_corpus(2_000, 1);
    let config = ConcretenessConfig::default();
    for term in 0..10u32 {
        let ds = build_term_dataset(term, &corpus, &config).unwrap();
        let mut expected_pos = BTreeSet::new();
        let mut has_term = BTreeSet::new();
        for r in corpus.records() {
            for a in &r.annotations {
                if a.term_id == term {
                    has_term.insert(r.id.clone());
                    if a.confidence > config.confidence_threshold {
                        expected_pos.insert(r.id.clone());
                    }
                }
            }
        }
        let pos: BTreeSet<String> = ds.positives.iter().cloned().collect();
        let neg: BTreeSet<String> = ds.negatives.iter().cloned().collect();
        assert_eq!(pos, expected_pos, "term {term}");
        assert_eq!(neg.len(), pos.len());
        assert!(neg.iter().all(|id| !has_term.contains(id)));
        let split: BTreeSet<String> = ds.train_ids.iter().chain(&ds.eval_ids).cloned().collect();
        assert_eq!(split.len(), ds.train_ids.len() + ds.eval_ids.len());
        assert_eq!(split, pos.union(&neg).cloned().collect());
        assert_eq!(ds.train.len(), ds.train_ids.len());
        assert_eq!(ds.eval.len(), ds.eval_ids.len());
    }
}

#[test]
fn missing_term_is_unscorable() {
    let corpus = annotated_corpus(100, 2);
    let err = score_term(99, &corpus, &ConcretenessConfig::default()).unwrap_err();
    assert!(
        matches!(err, Error::Unscorable { positives: 0, .. }),
        "{err:?}"
    );
}

/// Term 0 marks items with a shifted first coordinate; everything else is background.
fn separable_corpus(n: usize, seed: u64) -> Corpus {
    let mut r = rng::rng(seed);
    let records = (0..n)
        .map(|i| {
            let mut e = gaussian(4, &mut r);
            let mut anns = Vec::new();
            if i % 3 == 0 {
                e[0] = 3.0 + e[0].abs();
                anns.push(Annotation::new(0, 0.95));
            } else {
                e[0] = -e[0].abs();
            }
            ContentRecord::new(format!("s{i:05}"), e).with_annotations(anns)
        })
        .collect();
    Corpus::new(records).unwrap()
}

/// Least squares on `[e, 1]` against ±1; returns training accuracy of its sign.
fn closed_form_probe_accuracy(rows: &[Vec<f64>], y: &[f64]) -> f64 {
    let d = rows[0].len() + 1;
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &t) in rows.iter().zip(y) {
        let f: Vec<f64> = row.iter().copied().chain([1.0]).collect();
        for i in 0..d {
            for j in 0..d {
                a[i][j] += f[i] * f[j];
            }
            a[i][d] += f[i] * t;
        }
    }
    for c in 0..d {
        let p = (c..d)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        for r in 0..d {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=d {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let w: Vec<f64> = (0..d).map(|i| a[i][d] / a[i][i]).collect();
    let hits = rows
        .iter()
        .zip(y)
        .filter(|(row, &t)| {
            let s: f64 = row.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + w[d - 1];
            (s > 0.0) == (t > 0.0)
        })
        .count();
    hits as f64 / rows.len() as f64
}

#[test]
fn separable_term_scores_high() {
    let corpus = separable_corpus(900, 3);
    let config = ConcretenessConfig::default();
    let ds = build_term_dataset(0, &corpus, &config).unwrap();
    let by_id = corpus.index_by_id();
    let pos: BTreeSet<&str> = ds.positives.iter().map(String::as_str).collect();
    let (rows, y): (Vec<Vec<f64>>, Vec<f64>) = ds
        .positives
        .iter()
        .chain(&ds.negatives)
        .map(|id| {
            let rec = &corpus.records()[by_id[id.as_str()]];
            (
                rec.embedding_f64(),
                if pos.contains(id.as_str()) { 1.0 } else { -1.0 },
            )
        })
        .unzip();
    assert!(closed_form_probe_accuracy(&rows, &y) >= 0.99);
    let score = score_term(0, &corpus, &config).unwrap().score.unwrap();
    assert!(score >= 0.95, "score {score}");
}

#[test]
fn randomly_assigned_term_scores_at_chance() {
    let mut r = rng::rng(4);
    let records = (0..5_000)
        .map(|i| {
            let anns = if r.random_bool(0.5) {
                vec![Annotation::new(0, 0.99)]
            } else {
                vec![]
            };
            ContentRecord::new(format!("u{i:05}"), gaussian(8, &mut r)).with_annotations(anns)
        })
        .collect();
    let corpus = Corpus::new(records).unwrap();
    let s = score_term(0, &corpus, &ConcretenessConfig::default()).unwrap();
    let score = s.score.unwrap();
    assert!(
        (0.45..=0.55).contains(&score),
        "score {score} over {} eval items",
        s.n_eval
    );
}

#[test]
fn scores_are_seeded_and_order_free() {
    let corpus = separable_corpus(300, 5);
    let config = ConcretenessConfig {
        seed: 11,
        ..Default::default()
    };
    let a = score_term(0, &corpus, &config).unwrap();
    assert_eq!(a, score_term(0, &corpus, &config).unwrap());

    let mut shuffled = corpus.records().to_vec();
    shuffled.shuffle(&mut rng::rng(6));
    let shuffled = Corpus::new(shuffled).unwrap();
    assert_eq!(a, score_term(0, &shuffled, &config).unwrap());
    let reversed = Corpus::new(corpus.records().iter().rev().cloned().collect()).unwrap();
    assert_eq!(a, score_term(0, &reversed, &config).unwrap());
}

#[test]
fn class_terms_beat_noise_terms() {
    let taxonomy = InterestTaxonomy::default_24();
    let dict = synthetic_dictionary(&DictionarySpec::default(), &taxonomy).unwrap();
    let terms = TermDictionary::new(dict.terms).unwrap();
    let s = generate_synthetic_corpus(&SyntheticSpec::default(), &terms, &taxonomy).unwrap();
    let ids: Vec<u32> = terms.ids().collect();
    let report =
        ConcretenessReport::score(&s.corpus, &ids, &ConcretenessConfig::default()).unwrap();
    let class: BTreeSet<u32> = s.class_terms.iter().copied().collect();
    let mean = |want_class: bool| {
        let v: Vec<f64> = report
            .terms
            .values()
            .filter(|t| class.contains(&t.term_id) == want_class)
            .filter_map(|t| t.score)
            .collect();
        assert!(!v.is_empty());
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (c, n) = (mean(true), mean(false));
    assert!(c - n >= 0.2, "class mean {c:.3}, noise mean {n:.3}");
}

fn report_from(scores: &[Option<f64>]) -> ConcretenessReport {
    let terms: BTreeMap<u32, TermScore> = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| {
            let t = TermScore {
                term_id: i as u32,
                score,
                n_positives: 30,
                n_eval: 12,
            };
            (i as u32, t)
        })
        .collect();
    ConcretenessReport { terms }
}

proptest! {
    #[test]
    fn retained_set_shrinks_as_the_boundary_rises(
        scores in proptest::collection::vec(proptest::option::weighted(0.9, 0.0f64..=1.0), 0..60),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let report = report_from(&scores);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let low = build_visual_dictionary(&report, lo);
        let high = build_visual_dictionary(&report, hi);
        prop_assert!(high.terms.is_subset(&low.terms));
        prop_assert_eq!(low.len(), report.retained_count(lo));

        let scored = scores.iter().filter(|s| s.is_some()).count();
        prop_assert_eq!(build_visual_dictionary(&report, 0.0).len(), scored);
        prop_assert!(build_visual_dictionary(&report, 1.0 + 1e-9).is_empty());
    }
}
