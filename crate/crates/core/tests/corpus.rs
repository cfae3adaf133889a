use std::collections::{BTreeSet, HashMap};

use annoforge::corpus::{
    corpus_digest, corpus_stats, generate_synthetic_corpus, read_corpus, split_with_dedup,
    synthetic_dictionary, write_corpus, write_shard_set, Annotation, ContentRecord, Corpus,
    DictionarySpec, InterestTaxonomy, SyntheticSpec, TermDictionary,
};
use annoforge::rng;
use proptest::prelude::*;
use rand::Rng;

fn random_record(i: usize, dim: usize, r: &mut rng::Rng) -> ContentRecord {
    let mut seen = BTreeSet::new();
    let annotations = (0..r.random_range(0..5))
        .filter_map(|_| {
            let t = r.random_range(0..50u32);
            seen.insert(t)
                .then(|| Annotation::new(t, r.random_range(0.0..=1.0)))
        })
        .collect();
    let interests: Vec<u32> = (0..r.random_range(0..4))
        .map(|_| r.random_range(0..24))
        .collect();
    ContentRecord::new(
        format!("rec-{i:06}"),
        (0..dim).map(|_| r.random_range(-3.0f32..3.0)).collect(),
    )
    .with_annotations(annotations)
    .with_interests(interests)
}

fn random_corpus(n: usize, dim: usize, seed: u64) -> Corpus {
    let mut r = rng::rng(seed);
    Corpus::new((0..n).map(|i| random_record(i, dim, &mut r)).collect()).unwrap()
}

#[test]
fn ten_thousand_records_round_trip_by_digest() {
    let corpus = random_corpus(10_000, 16, 1);
    let dir = tempfile::tempdir().unwrap();
    write_shard_set(dir.path(), &corpus, 1_000).unwrap();
    let back = read_corpus(dir.path()).unwrap();
    assert_eq!(
        corpus_digest(back.records()),
        corpus_digest(corpus.records())
    );
    assert_eq!(back.records(), corpus.records());
}

fn hundred_k() -> annoforge::corpus::SyntheticCorpus {
    let taxonomy = InterestTaxonomy::default_24();
    let dict = synthetic_dictionary(&DictionarySpec::default(), &taxonomy).unwrap();
    let terms = TermDictionary::new(dict.terms).unwrap();
    let spec = SyntheticSpec {
        n_items: 100_000,
        zipf_exponent: 1.0,
        embedding_dim: 8,
        seed: 3,
        ..Default::default()
    };
    generate_synthetic_corpus(&spec, &terms, &taxonomy).unwrap()
}

#[test]
fn zipf_rank_frequency_slope() {
    let s = hundred_k();
    let mut counts = vec![0usize; s.centroids.len()];
    for &c in &s.classes {
        counts[c] += 1;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let pts: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (((i + 1) as f64).ln(), (c as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((-1.1..=-0.9).contains(&slope), "slope {slope}");
}

#[test]
fn frequency_table_sums_to_assignments() {
    let s = hundred_k();
    let stats = corpus_stats(&s.corpus, None);
    // Second pass: count (record, term) pairs directly.
    let mut recount = 0;
    for r in s.corpus.iter() {
        let terms: BTreeSet<u32> = r.annotations.iter().map(|a| a.term_id).collect();
        recount += terms.len();
    }
    assert_eq!(stats.label_frequency.values().sum::<usize>(), recount);
    assert_eq!(stats.total_assignments, recount);
    assert_eq!(stats.items, 100_000);
}

/// Union-find written for the test, independent of the library's.
fn components(n: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for &(a, b) in pairs {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        parent[ra] = rb;
    }
    (0..n).map(|i| root(&mut parent, i)).collect()
}

fn crossing_closure_pairs(corpus: &Corpus, pairs: &[(usize, usize)], eval: &Corpus) -> usize {
    let comp = components(corpus.len(), pairs);
    let in_eval: BTreeSet<&str> = eval.iter().map(|r| r.id.as_str()).collect();
    let mut side: HashMap<usize, BTreeSet<bool>> = HashMap::new();
    for (i, r) in corpus.iter().enumerate() {
        side.entry(comp[i])
            .or_default()
            .insert(in_eval.contains(r.id.as_str()));
    }
    side.values().filter(|s| s.len() > 1).count()
}

fn id_pairs(corpus: &Corpus, pairs: &[(usize, usize)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|&(a, b)| {
            (
                corpus.records()[a].id.clone(),
                corpus.records()[b].id.clone(),
            )
        })
        .collect()
}

#[test]
fn random_duplicate_pairs_never_cross_the_split() {
    let corpus = random_corpus(1_000, 4, 5);
    let mut r = rng::rng(6);
    let pairs: Vec<(usize, usize)> = (0..100)
        .map(|_| (r.random_range(0..1000), r.random_range(0..1000)))
        .collect();
    let (train, eval) = split_with_dedup(&corpus, &id_pairs(&corpus, &pairs), 0.2, 9).unwrap();
    assert_eq!(train.len() + eval.len(), 1_000);
    assert_eq!(crossing_closure_pairs(&corpus, &pairs, &eval), 0);
}

#[test]
fn synthetic_generation_is_independent_of_worker_count() {
    let taxonomy = InterestTaxonomy::default_24();
    let dict = synthetic_dictionary(&DictionarySpec::default(), &taxonomy).unwrap();
    let terms = TermDictionary::new(dict.terms).unwrap();
    let spec = SyntheticSpec {
        n_items: 3_000,
        image_size: Some(8),
        seed: 4,
        ..Default::default()
    };
    let one = rng::with_workers(1, || {
        generate_synthetic_corpus(&spec, &terms, &taxonomy).unwrap()
    });
    let four = rng::with_workers(4, || {
        generate_synthetic_corpus(&spec, &terms, &taxonomy).unwrap()
    });
    assert_eq!(
        corpus_digest(one.corpus.records()),
        corpus_digest(four.corpus.records())
    );
    assert_eq!(one.classes, four.classes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shard_round_trip_is_identity(n in 0usize..40, dim in 1usize..6, seed in any::<u64>(), shard in 1usize..8) {
        let corpus = random_corpus(n, dim, seed);
        let dir = tempfile::tempdir().unwrap();
        write_shard_set(&dir.path().join("set"), &corpus, shard).unwrap();
        let back = read_corpus(&dir.path().join("set")).unwrap();
        prop_assert_eq!(back.records(), corpus.records());
        write_corpus(&dir.path().join("single"), &corpus).unwrap();
        let back = read_corpus(&dir.path().join("single")).unwrap();
        prop_assert_eq!(back.records(), corpus.records());
    }

    #[test]
    fn split_closure_is_disjoint(
        n in 2usize..60,
        raw in proptest::collection::vec((0usize..60, 0usize..60), 0..40),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let corpus = random_corpus(n, 2, seed);
        let pairs: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let (train, eval) = split_with_dedup(&corpus, &id_pairs(&corpus, &pairs), fraction, seed).unwrap();
        prop_assert_eq!(train.len() + eval.len(), n);
        prop_assert_eq!(crossing_closure_pairs(&corpus, &pairs, &eval), 0);
    }

    #[test]
    fn generation_is_a_pure_function(seed in any::<u64>(), n in 1usize..200, classes in 2usize..6) {
        let taxonomy = InterestTaxonomy::default_24();
        let dict = synthetic_dictionary(&DictionarySpec { n_class_terms: 6, ..Default::default() }, &taxonomy).unwrap();
        let terms = TermDictionary::new(dict.terms).unwrap();
        let spec = SyntheticSpec { n_items: n, n_classes: classes, embedding_dim: 8, seed, ..Default::default() };
        let a = generate_synthetic_corpus(&spec, &terms, &taxonomy).unwrap();
        let b = generate_synthetic_corpus(&spec, &terms, &taxonomy).unwrap();
        prop_assert_eq!(a.corpus.records(), b.corpus.records());
        prop_assert_eq!(a.classes, b.classes);
    }
}
