#![allow(clippy::needless_range_loop)]

use annoforge::nn::{
    grad_check, top1_accuracy, train_classifier, Activation, Dataset, Linear, LossKind, Mlp,
    OptimizerConfig, OptimizerState, Parameters, Tensor, TrainConfig,
};
use annoforge::rng;
use annoforge::trainer::ScheduleConfig;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Plain triple loop, row-major, `x·W + b` then the activation.
fn naive_layer(x: &[f64], n: usize, l: &Linear, act: Activation) -> Vec<f64> {
    let mut y = vec![0.0; n * l.d_out];
    for i in 0..n {
        for j in 0..l.d_out {
            let mut s = l.bias[j];
            for k in 0..l.d_in {
                s += x[i * l.d_in + k] * l.weight[k * l.d_out + j];
            }
            y[i * l.d_out + j] = match act {
                Activation::Relu => s.max(0.0),
                Activation::Identity => s,
            };
        }
    }
    y
}

#[test]
fn two_layer_forward_matches_naive_matmul() {
    let model = Mlp::new(&[7, 13, 5], 21).unwrap();
    let n = 9;
    let x = uniform(n * 7, 22);
    let got = model
        .forward(&Tensor::new(vec![n, 7], x.clone()).unwrap())
        .unwrap();
    assert_eq!(got.shape(), &[n, 5]);
    let mut h = x;
    for (l, &a) in model.layers().iter().zip(model.activations()) {
        h = naive_layer(&h, n, l, a);
    }
    for (a, b) in got.data().iter().zip(&h) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn zero_and_identity_models() {
    let zero = Mlp::from_layers(vec![Linear::zeros(3, 4)], vec![Activation::Identity]).unwrap();
    let x = Tensor::new(vec![2, 3], uniform(6, 1)).unwrap();
    assert!(zero.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));

    let mut eye = Linear::zeros(3, 3);
    for i in 0..3 {
        eye.weight[i * 3 + i] = 1.0;
    }
    let id = Mlp::from_layers(vec![eye], vec![Activation::Identity]).unwrap();
    assert_eq!(id.forward(&x).unwrap().data(), x.data());

    let wrong = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
    assert!(id.forward(&wrong).is_err());
}

#[test]
fn confident_correct_logit_loss() {
    let (loss, _) = LossKind::MultiLabelSoftmax
        .evaluate(&[10.0, 0.0, 0.0, 0.0], 4, &[vec![0]])
        .unwrap();
    // ln(1 + 3e^-10) by hand.
    let expected = (1.0 + 3.0 * (-10.0f64).exp()).ln();
    assert!((loss - expected).abs() < 1e-15);
    assert!((loss - 1.3619e-4).abs() < 1e-8);
}

#[test]
fn bce_matches_scalar_formula() {
    let (n, k) = (6, 5);
    let logits: Vec<f64> = uniform(n * k, 4).iter().map(|v| v * 6.0).collect();
    let positives: Vec<Vec<u32>> = (0..n)
        .map(|i| vec![(i % k) as u32, ((i * 3 + 1) % k) as u32])
        .collect();
    let (loss, _) = LossKind::SigmoidBce
        .evaluate(&logits, k, &positives)
        .unwrap();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..k {
            let z = logits[i * k + j];
            let p = 1.0 / (1.0 + (-z).exp());
            let y = if positives[i].contains(&(j as u32)) {
                1.0
            } else {
                0.0
            };
            total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
    }
    let expected = total / (n * k) as f64;
    assert!((loss - expected).abs() < 1e-8, "{loss} vs {expected}");
}

#[test]
fn adamw_descends_a_quadratic() {
    let mut opt = OptimizerState::new(OptimizerConfig::adamw(0.0));
    let mut p = [1.0];
    for _ in 0..100 {
        let g = vec![2.0 * p[0]];
        opt.step(vec![&mut p[..]], &[g], 0.05).unwrap();
    }
    assert!(p[0].abs() < 0.1, "p = {}", p[0]);
    assert_eq!(opt.steps_taken(), 100);
}

fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng::rng(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    (0..n)
        .map(|i| {
            let c = i % 2;
            let center = if c == 0 { -2.0 } else { 2.0 };
            (
                vec![center + noise.sample(&mut r), center + noise.sample(&mut r)],
                c,
            )
        })
        .unzip()
}

/// Least-squares fit of ±1 targets on `[x, y, 1]` via the 3×3 normal equations.
fn least_squares_probe(rows: &[Vec<f64>], classes: &[usize]) -> [f64; 3] {
    let mut a = [[0.0; 4]; 3];
    for (row, &c) in rows.iter().zip(classes) {
        let f = [row[0], row[1], 1.0];
        let t = if c == 1 { 1.0 } else { -1.0 };
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += f[i] * f[j];
            }
            a[i][3] += f[i] * t;
        }
    }
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

fn train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        loss: LossKind::MultiLabelSoftmax,
        optimizer: OptimizerConfig::adamw(0.0),
        schedule: ScheduleConfig::cosine(0.01, 10.min(steps), steps),
        batch_size: 32,
        seed,
        log_every: 1,
    }
}

#[test]
fn separable_blobs_are_learned() {
    let (rows, classes) = blobs(400, 8);
    let w = least_squares_probe(&rows, &classes);
    let separated = rows
        .iter()
        .zip(&classes)
        .all(|(r, &c)| (w[0] * r[0] + w[1] * r[1] + w[2] > 0.0) == (c == 1));
    assert!(
        separated,
        "blobs are not linearly separable; the accuracy bar would be meaningless"
    );

    let data =
        Dataset::from_rows(&rows, classes.iter().map(|&c| vec![c as u32]).collect()).unwrap();
    let model = Mlp::new(&[2, 16, 2], 9).unwrap();
    let (trained, history) = train_classifier(&model, &data, &train_config(200, 10)).unwrap();
    assert_eq!(history.records.len(), 200);
    assert!(top1_accuracy(&trained, &data) >= 0.99);
}

#[test]
fn zero_steps_and_repeat_runs() {
    let (rows, classes) = blobs(64, 2);
    let data =
        Dataset::from_rows(&rows, classes.iter().map(|&c| vec![c as u32]).collect()).unwrap();
    let model = Mlp::new(&[2, 8, 2], 3).unwrap();
    let (same, history) = train_classifier(&model, &data, &train_config(0, 1)).unwrap();
    assert_eq!(same, model);
    assert!(history.records.is_empty());

    let (a, ha) = train_classifier(&model, &data, &train_config(50, 4)).unwrap();
    let (b, hb) = train_classifier(&model, &data, &train_config(50, 4)).unwrap();
    assert_eq!(a.parameter_values(), b.parameter_values());
    assert_eq!(ha, hb);
    let (c, _) = train_classifier(&model, &data, &train_config(50, 5)).unwrap();
    assert_ne!(a.parameter_values(), c.parameter_values());
}

#[test]
fn single_class_dataset_trains() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
    let data = Dataset::from_rows(&rows, vec![vec![1]; 20]).unwrap();
    let model = Mlp::new(&[1, 4, 3], 0).unwrap();
    let (trained, _) = train_classifier(&model, &data, &train_config(30, 0)).unwrap();
    assert_eq!(top1_accuracy(&trained, &data), 1.0);
}

#[test]
fn mlp_gradient_under_bce_in_one_call() {
    let model = Mlp::new(&[4, 6, 3], 5).unwrap();
    let x = uniform(5 * 4, 6);
    let y = vec![vec![0], vec![1, 2], vec![2], vec![0, 1], vec![1]];
    let err = grad_check(
        |p| {
            let mut m = model.clone();
            m.set_parameters(p).unwrap();
            let (logits, cache) = annoforge::nn::Classifier::forward_train(&m, &x, 5);
            let (l, g) = LossKind::SigmoidBce.evaluate(&logits, 3, &y).unwrap();
            (l, annoforge::nn::Classifier::backward(&m, &cache, &g))
        },
        &model.parameter_values(),
        1e-5,
        1,
    );
    assert!(err < 1e-4, "{err}");
}

fn softmax_loss(logits: &[f64], k: usize, pos: &[Vec<u32>]) -> (f64, Vec<f64>) {
    LossKind::MultiLabelSoftmax
        .evaluate(logits, k, pos)
        .unwrap()
}

fn logits_and_positives() -> impl Strategy<Value = (usize, Vec<f64>, Vec<Vec<u32>>)> {
    (2usize..7, 1usize..5).prop_flat_map(|(k, n)| {
        (
            Just(k),
            proptest::collection::vec(-8.0f64..8.0, n * k),
            proptest::collection::vec(proptest::collection::btree_set(0..k as u32, 1..=k), n)
                .prop_map(|rows| rows.into_iter().map(|s| s.into_iter().collect()).collect()),
        )
    })
}

proptest! {
    #[test]
    fn softmax_gradient_rows_sum_to_zero((k, logits, pos) in logits_and_positives()) {
        let (_, grad) = softmax_loss(&logits, k, &pos);
        for row in grad.chunks_exact(k) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn loss_ignores_a_constant_shift((k, logits, pos) in logits_and_positives(), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
        let (a, _) = softmax_loss(&logits, k, &pos);
        let (b, _) = softmax_loss(&shifted, k, &pos);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn loss_is_permutation_equivariant((k, logits, pos) in logits_and_positives(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng::rng(seed));
        let mut permuted = vec![0.0; logits.len()];
        for (row_in, row_out) in logits.chunks_exact(k).zip(permuted.chunks_exact_mut(k)) {
            for j in 0..k {
                row_out[perm[j]] = row_in[j];
            }
        }
        let pos2: Vec<Vec<u32>> = pos.iter().map(|p| p.iter().map(|&l| perm[l as usize] as u32).collect()).collect();
        let (a, _) = softmax_loss(&logits, k, &pos);
        let (b, _) = softmax_loss(&permuted, k, &pos2);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_positive_is_cross_entropy((k, logits, pos) in logits_and_positives()) {
        let single: Vec<Vec<u32>> = pos.iter().map(|p| vec![p[0]]).collect();
        let (loss, _) = softmax_loss(&logits, k, &single);
        let mut ce = 0.0;
        for (row, p) in logits.chunks_exact(k).zip(&single) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            ce -= (row[p[0] as usize].exp() / z).ln();
        }
        ce /= single.len() as f64;
        prop_assert!((loss - ce).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_is_identity(
        p in proptest::collection::vec(-5.0f64..5.0, 1..20),
        seed in any::<u64>(),
        adam in any::<bool>(),
        wd in 0.0f64..0.1,
    ) {
        let config = if adam { OptimizerConfig::adamw(wd) } else { OptimizerConfig::sgd(0.9, wd) };
        let mut opt = OptimizerState::new(config);
        let g = uniform(p.len(), seed);
        let mut q = p.clone();
        for _ in 0..3 {
            opt.step(vec![&mut q[..]], std::slice::from_ref(&g), 0.0).unwrap();
        }
        prop_assert_eq!(q, p);
    }
}
