use std::collections::{BTreeMap, BTreeSet};

use annoforge::clustering::{
    assign_interests, build_label_space, kmeans, AssignMode, KSchedule, LabelSpaceConfig,
};
use annoforge::corpus::{
    synthetic_dictionary, DictionarySpec, InterestTaxonomy, TermDictionary, TermRecord,
};
use annoforge::rng;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn planted_clusters_are_recovered() {
    let taxonomy = InterestTaxonomy::default_24();
    let spec = DictionarySpec {
        n_class_terms: 96,
        n_noise_terms: 0,
        polysemy_rate: 0.0,
        clusters_per_interest: 6,
        seed: 2,
        ..Default::default()
    };
    let dict = synthetic_dictionary(&spec, &taxonomy).unwrap();
    let planted = dict.planted_cluster.clone();
    let terms = TermDictionary::new(dict.terms).unwrap();
    let assignment =
        assign_interests(&terms, &taxonomy, &AssignMode::File(dict.term_interests)).unwrap();
    // Class terms occupy the first half of each interest's planted clusters.
    let config = LabelSpaceConfig {
        k: KSchedule::Uniform { k: 3 },
        ..Default::default()
    };
    let space = build_label_space(&terms, &assignment, &config).unwrap();

    // Purity: for each found label, the share of its terms in its majority planted cluster.
    let mut members: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
    for (tid, labels) in space.term_labels() {
        assert_eq!(labels.len(), 1);
        members
            .entry(*labels.iter().next().unwrap())
            .or_default()
            .push(planted[tid]);
    }
    let total: usize = members.values().map(Vec::len).sum();
    let majority: usize = members
        .values()
        .map(|m| {
            let mut counts: BTreeMap<(u32, usize), usize> = BTreeMap::new();
            for p in m {
                *counts.entry(*p).or_default() += 1;
            }
            counts.into_values().max().unwrap()
        })
        .sum();
    let purity = majority as f64 / total as f64;
    assert_eq!(total, 96);
    assert!(purity >= 0.9, "purity {purity:.3}");
}

fn term(id: u32, emb: Vec<f64>) -> TermRecord {
    TermRecord {
        term_id: id,
        surface: format!("t{id}"),
        text_embedding: emb,
        canonical: true,
        sensitive: false,
        language: "en".into(),
    }
}

fn points_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4).prop_flat_map(|dim| {
        proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, dim), 1..40)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inertia_never_increases(points in points_strategy(), k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(points.len());
        let r = kmeans(&points, k, seed, 50, 3).unwrap();
        prop_assert_eq!(r.restart_traces.len(), 3);
        for trace in &r.restart_traces {
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", trace);
            }
        }
    }

    #[test]
    fn converged_points_sit_at_their_nearest_centroid(points in points_strategy(), k in 1usize..6, seed in any::<u64>()) {
        let k = k.min(points.len());
        let r = kmeans(&points, k, seed, 200, 2).unwrap();
        let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut inertia = 0.0;
        for (p, &a) in points.iter().zip(&r.assignments) {
            let own = d2(p, &r.centroids[a]);
            let best = r.centroids.iter().map(|c| d2(p, c)).fold(f64::INFINITY, f64::min);
            prop_assert!(own <= best);
            inertia += own;
        }
        prop_assert!((inertia - r.inertia).abs() <= 1e-9 * (1.0 + inertia));
    }

    #[test]
    fn scaling_points_scales_inertia(points in points_strategy(), k in 1usize..6, seed in any::<u64>(), c in 0.1f64..10.0) {
        let k = k.min(points.len());
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|v| v * c).collect()).collect();
        let a = kmeans(&points, k, seed, 100, 2).unwrap();
        let b = kmeans(&scaled, k, seed, 100, 2).unwrap();
        prop_assert_eq!(&a.assignments, &b.assignments);
        prop_assert!((b.inertia - c * c * a.inertia).abs() <= 1e-9 * (1.0 + b.inertia));
    }

    #[test]
    fn label_table_is_a_bijection(
        n_terms in 1usize..30,
        n_interests in 1u32..5,
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut r = rng::rng(seed);
        let terms = TermDictionary::new(
            (0..n_terms as u32).map(|i| term(i, (0..3).map(|_| r.random_range(-1.0..1.0)).collect())).collect(),
        ).unwrap();
        let mut map = BTreeMap::new();
        for t in 0..n_terms as u32 {
            let ints: BTreeSet<u32> = (0..r.random_range(1..=2)).map(|_| r.random_range(0..n_interests)).collect();
            map.insert(t, ints);
        }
        let taxonomy = InterestTaxonomy::new((0..n_interests).map(|i| (i, format!("i{i}"))).collect()).unwrap();
        let assignment = assign_interests(&terms, &taxonomy, &AssignMode::File(map.clone())).unwrap();
        let config = LabelSpaceConfig { k: KSchedule::Uniform { k }, seed, ..Default::default() };
        let space = build_label_space(&terms, &assignment, &config).unwrap();

        let mut per_interest: BTreeMap<u32, usize> = BTreeMap::new();
        for ints in map.values() {
            for &i in ints {
                *per_interest.entry(i).or_default() += 1;
            }
        }
        let expected: usize = per_interest.values().map(|&n| k.min(n)).sum();
        prop_assert_eq!(space.n_labels(), expected);

        let mut seen = BTreeSet::new();
        for l in 0..space.n_labels() as u32 {
            let (i, c) = space.label_info(l).unwrap();
            prop_assert!(seen.insert((i, c)));
            prop_assert_eq!(space.label_id(i, c), Some(l));
        }
        prop_assert!(space.label_info(space.n_labels() as u32).is_none());

        for (t, ints) in &map {
            let labels = space.labels_of(*t).unwrap();
            let label_interests: BTreeSet<u32> = labels.iter().map(|&l| space.label_info(l).unwrap().0).collect();
            prop_assert_eq!(labels.len(), ints.len());
            prop_assert_eq!(&label_interests, ints);
        }
    }
}
