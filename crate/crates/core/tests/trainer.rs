use annoforge::corpus::{
    generate_synthetic_corpus, synthetic_dictionary, DictionarySpec, InterestTaxonomy, PixelGrid,
    SyntheticCorpus, SyntheticSpec, TermDictionary,
};
use annoforge::labelgen::LabeledExample;
use annoforge::nn::{Dataset, LossKind};
use annoforge::rng::{self, derive_seed};
use annoforge::trainer::{
    augment, fewshot_sweep, finetune, lr_at_step, mirror_in_place, model_inputs, per_class_subset,
    pretrain, schedule_len_for_fraction, spearman, AugmentConfig, Backbone, BackboneSpec,
    FinetuneConfig, ModelKind, RunLength, ScheduleConfig, ShotCount, TaskData, TrainRunConfig,
};
use annoforge::vit::{Pooling, VitConfig};
use proptest::prelude::*;

fn planted(n_items: usize, image_size: Option<usize>, seed: u64) -> SyntheticCorpus {
    let taxonomy = InterestTaxonomy::default_24();
    let dict = synthetic_dictionary(&DictionarySpec::default(), &taxonomy).unwrap();
    let terms = TermDictionary::new(dict.terms).unwrap();
    let spec = SyntheticSpec {
        n_items,
        image_size,
        seed,
        ..Default::default()
    };
    generate_synthetic_corpus(&spec, &terms, &taxonomy).unwrap()
}

fn class_labels(s: &SyntheticCorpus, range: std::ops::Range<usize>) -> Vec<LabeledExample> {
    s.corpus.records()[range.clone()]
        .iter()
        .zip(&s.classes[range])
        .map(|(r, &c)| LabeledExample::new(r.id.clone(), [c as u32]))
        .collect()
}

fn task_split(
    s: &SyntheticCorpus,
    train: std::ops::Range<usize>,
    eval: std::ops::Range<usize>,
) -> TaskData {
    let data = |range: std::ops::Range<usize>| {
        let ids: Vec<&str> = s.corpus.records()[range.clone()]
            .iter()
            .map(|r| r.id.as_str())
            .collect();
        let (x, dim) = model_inputs(&s.corpus, &ids, ModelKind::Mlp).unwrap();
        let y = s.classes[range].iter().map(|&c| vec![c as u32]).collect();
        Dataset::new(x, dim, y).unwrap()
    };
    TaskData {
        name: "classes".into(),
        n_classes: 20,
        train: data(train),
        eval: data(eval),
    }
}

fn tiny_vit() -> VitConfig {
    VitConfig {
        image_size: 16,
        patch_size: 4,
        layers: 2,
        heads: 2,
        hidden_dim: 32,
        mlp_dim: 64,
        n_classes: 0,
        pooling: Pooling::ClassToken,
    }
}

#[test]
fn vit_pretraining_cuts_the_loss_to_a_quarter() {
    let s = planted(10_000, Some(16), 0);
    let labels = class_labels(&s, 0..10_000);
    let config = TrainRunConfig {
        backbone: BackboneSpec::Vit { config: tiny_vit() },
        length: RunLength::Epochs(3.0),
        warmup_steps: 20,
        seed: 1,
        ..Default::default()
    };
    let run = pretrain(&s.corpus, &labels, 20, &config).unwrap();
    let first = run.history.first_loss().unwrap();
    let last = run.history.last_loss().unwrap();
    assert!(last < 0.25 * first, "loss {first:.3} -> {last:.3}");
}

#[test]
fn zero_steps_return_the_initialization() {
    let s = planted(500, None, 2);
    let labels = class_labels(&s, 0..500);
    let config = TrainRunConfig {
        length: RunLength::Steps(0),
        seed: 9,
        ..Default::default()
    };
    let run = pretrain(&s.corpus, &labels, 20, &config).unwrap();
    assert!(run.history.records.is_empty());
    let init = Backbone::init(&config.backbone, 64, derive_seed(9, 1)).unwrap();
    assert_eq!(
        run.backbone.to_checkpoint().unwrap().to_bytes().unwrap(),
        init.to_checkpoint().unwrap().to_bytes().unwrap()
    );
}

#[test]
fn pretraining_is_bitwise_reproducible() {
    let s = planted(2_000, None, 3);
    let labels = class_labels(&s, 0..2_000);
    let config = TrainRunConfig {
        length: RunLength::Epochs(1.0),
        warmup_steps: 5,
        resample: true,
        seed: 4,
        ..Default::default()
    };
    let run = || rng::with_workers(1, || pretrain(&s.corpus, &labels, 20, &config).unwrap());
    let (a, b) = (run(), run());
    let bits = |p: &annoforge::trainer::Pretrained| -> Vec<u64> {
        p.history.records.iter().map(|r| r.loss.to_bits()).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(
        a.backbone.to_checkpoint().unwrap().to_bytes().unwrap(),
        b.backbone.to_checkpoint().unwrap().to_bytes().unwrap()
    );
    assert_eq!(a.head, b.head);
}

#[test]
fn pretrained_backbone_beats_random_init_under_a_frozen_head() {
    let s = planted(10_000, None, 5);
    let labels = class_labels(&s, 0..8_000);
    let config = TrainRunConfig {
        warmup_steps: 20,
        seed: 6,
        ..Default::default()
    };
    let pre = pretrain(&s.corpus, &labels, 20, &config).unwrap().backbone;
    let random = Backbone::init(&config.backbone, 64, 123).unwrap();
    let task = task_split(&s, 0..8_000, 8_000..10_000);
    let ft = FinetuneConfig::default();
    let p_pre = finetune(&pre, std::slice::from_ref(&task), &ft).unwrap()[0].p_at_1;
    let p_rand = finetune(&random, std::slice::from_ref(&task), &ft).unwrap()[0].p_at_1;
    assert!(p_pre >= 0.9, "pretrained P@1 {p_pre:.3}");
    assert!(p_pre > p_rand, "pretrained {p_pre:.3}, random {p_rand:.3}");
}

#[test]
fn head_only_training_leaves_backbone_bytes_alone() {
    let s = planted(1_000, None, 7);
    let backbone = Backbone::init(&BackboneSpec::mlp_default(), 64, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backbone.amdl");
    backbone.save(&path).unwrap();
    let before = std::fs::read(&path).unwrap();

    let loaded = Backbone::load(&path).unwrap();
    let task = task_split(&s, 0..800, 800..1_000);
    let frozen = finetune(
        &loaded,
        std::slice::from_ref(&task),
        &FinetuneConfig::default(),
    )
    .unwrap();
    assert!(frozen[0].backbone.is_none());
    loaded.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), before);

    let open = FinetuneConfig {
        freeze_backbone: false,
        steps: 20,
        ..Default::default()
    };
    let updated = finetune(&loaded, std::slice::from_ref(&task), &open).unwrap();
    let moved = updated[0].backbone.as_ref().unwrap();
    assert_ne!(moved.to_checkpoint().unwrap().to_bytes().unwrap(), before);
}

#[test]
fn single_class_task_is_rejected() {
    let s = planted(200, None, 10);
    let mut task = task_split(&s, 0..100, 100..200);
    task.n_classes = 1;
    let backbone = Backbone::init(&BackboneSpec::mlp_default(), 64, 0).unwrap();
    assert!(finetune(&backbone, &[task], &FinetuneConfig::default()).is_err());
}

#[test]
fn logged_rates_follow_the_schedule() {
    let s = planted(1_000, None, 11);
    let task = task_split(&s, 0..800, 800..1_000);
    let backbone = Backbone::init(&BackboneSpec::mlp_default(), 64, 0).unwrap();
    let ft = FinetuneConfig {
        warmup_steps: 10,
        steps: 101,
        ..Default::default()
    };
    let history = &finetune(&backbone, &[task], &ft).unwrap()[0].history;
    let schedule = ScheduleConfig::cosine(ft.base_lr, 10, 101);
    for r in &history.records {
        assert_eq!(r.lr, lr_at_step(&schedule, r.step).unwrap());
    }
    assert_eq!(history.records[0].lr, 0.0);
    assert!(history
        .records
        .iter()
        .any(|r| r.step == 10 && r.lr == ft.base_lr));
    assert_eq!(history.records.last().unwrap().step, 100);
}

#[test]
fn shot_count_all_equals_plain_finetune() {
    let s = planted(2_000, None, 12);
    let task = task_split(&s, 0..1_500, 1_500..2_000);
    let backbone = Backbone::init(&BackboneSpec::mlp_default(), 64, 13).unwrap();
    let ft = FinetuneConfig {
        seed: 14,
        ..Default::default()
    };
    let plain = finetune(&backbone, std::slice::from_ref(&task), &ft).unwrap()[0].p_at_1;
    let rows = fewshot_sweep(
        &[("random".into(), backbone.clone())],
        &task,
        &[ShotCount::Count(5), ShotCount::All],
        &ft,
    )
    .unwrap();
    assert_eq!(rows[1].count, ShotCount::All);
    assert_eq!(rows[1].p_at_1, plain);
    let again = fewshot_sweep(
        &[("random".into(), backbone)],
        &task,
        &[ShotCount::Count(5), ShotCount::All],
        &ft,
    )
    .unwrap();
    assert_eq!(rows, again);
}

/// Average ranks, then Pearson on the ranks.
fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn image_strategy() -> impl Strategy<Value = PixelGrid> {
    (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0.0f32..=1.0, h * w * 3)
            .prop_map(move |d| PixelGrid::new(h, w, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn warmup_joins_decay_continuously(
        w in 1usize..200,
        extra in 1usize..400,
        base in 1e-4f64..1.0,
        linear in any::<bool>(),
    ) {
        let t = w + extra;
        let s = if linear { ScheduleConfig::linear(base, w, t) } else { ScheduleConfig::cosine(base, w, t) };
        // Left limit of the warmup ramp and right value of the decay both equal base.
        prop_assert_eq!(lr_at_step(&s, w).unwrap(), base);
        let ramp = base * (w - 1) as f64 / w as f64;
        prop_assert!((lr_at_step(&s, w - 1).unwrap() - ramp).abs() <= 1e-15);
        let slope = base / w as f64 + std::f64::consts::PI * base / (2.0 * extra as f64);
        for step in w.saturating_sub(1)..(w + 2).min(t) {
            let jump = (lr_at_step(&s, step + 1).unwrap() - lr_at_step(&s, step).unwrap()).abs();
            prop_assert!(jump <= slope * (1.0 + 1e-12), "step {}: {} > {}", step, jump, slope);
        }
        prop_assert!(lr_at_step(&s, t + 1).is_err());
    }

    #[test]
    fn shorter_runs_for_larger_fractions(a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (e_lo, e_hi) = (schedule_len_for_fraction(lo).unwrap(), schedule_len_for_fraction(hi).unwrap());
        prop_assert!(e_hi <= e_lo);
        prop_assert!((2..=100).contains(&e_hi));
    }

    #[test]
    fn augmentation_is_seeded_and_bounded(img in image_strategy(), seed in any::<u64>(), j in 0.0f64..=1.0, lo in 0.3f64..=1.0) {
        let config = AugmentConfig { mirror: true, crop_scale: Some((lo, 1.0)), jitter: j };
        let a = augment(&img, &config, seed).unwrap();
        prop_assert_eq!(&a, &augment(&img, &config, seed).unwrap());
        prop_assert_eq!((a.height(), a.width()), (img.height(), img.width()));
        prop_assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(augment(&img, &AugmentConfig::none(), seed).unwrap(), img);
    }

    #[test]
    fn mirror_twice_is_identity(img in image_strategy()) {
        let mut d: Vec<f64> = img.as_slice().iter().map(|&v| v as f64).collect();
        let orig = d.clone();
        mirror_in_place(&mut d, img.height(), img.width());
        mirror_in_place(&mut d, img.height(), img.width());
        prop_assert_eq!(d, orig);
    }

    #[test]
    fn per_class_subsets_are_capped(
        labels in proptest::collection::vec(0u32..6, 1..120),
        count in 1usize..30,
        seed in any::<u64>(),
    ) {
        let labels: Vec<Vec<u32>> = labels.into_iter().map(|c| vec![c]).collect();
        let idx = per_class_subset(&labels, ShotCount::Count(count), seed);
        prop_assert_eq!(&idx, &per_class_subset(&labels, ShotCount::Count(count), seed));
        for c in 0..6u32 {
            let have = labels.iter().filter(|l| l[0] == c).count();
            let took = idx.iter().filter(|&&i| labels[i][0] == c).count();
            prop_assert_eq!(took, have.min(count));
        }
        let all = per_class_subset(&labels, ShotCount::All, seed);
        prop_assert_eq!(all.len(), labels.len());
    }

    #[test]
    fn spearman_agrees_with_average_ranks(
        pairs in proptest::collection::vec((0u8..8, 0u8..8), 3..40),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let constant = x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]);
        match spearman(&x, &y) {
            Ok(rho) => {
                prop_assert!(!constant);
                prop_assert!((rho - spearman_oracle(&x, &y)).abs() < 1e-12);
            }
            Err(_) => prop_assert!(constant),
        }
    }
}

#[test]
fn loss_kind_is_configurable() {
    let s = planted(600, None, 15);
    let labels = class_labels(&s, 0..600);
    let config = TrainRunConfig {
        loss: LossKind::SigmoidBce,
        length: RunLength::Steps(30),
        warmup_steps: 5,
        ..Default::default()
    };
    let run = pretrain(&s.corpus, &labels, 20, &config).unwrap();
    assert!(run.history.last_loss().unwrap() < run.history.first_loss().unwrap());
    let bad = TrainRunConfig {
        fraction: 0.0,
        ..config
    };
    assert!(pretrain(&s.corpus, &labels, 20, &bad).is_err());
    assert!(pretrain(&s.corpus, &labels, 3, &TrainRunConfig::default()).is_err());
}
