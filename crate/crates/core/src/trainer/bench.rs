use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use crate::nn::{Activation, Classifier, LossKind, Mlp, OptimizerConfig, OptimizerState};
use crate::{rng, Error, Result};

const BENCH_CLASSES: usize = 10;

/// Where the numbers were measured; throughput is machine-dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareStamp {
    pub arch: String,
    pub os: String,
    pub threads: usize,
}

impl HardwareStamp {
    pub fn current() -> Self {
        Self {
            arch: std::env::consts::ARCH.into(),
            os: std::env::consts::OS.into(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub model: String,
    pub batch_size: usize,
    /// Images (or embedding rows) per second through a full training step.
    pub train_throughput: f64,
    pub inference_throughput: f64,
    /// Single-item forward pass, milliseconds.
    pub latency_ms: f64,
    pub hardware: HardwareStamp,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median seconds over `trials` timed calls after `warmup` untimed ones.
fn time_median(warmup: usize, trials: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let times = (0..trials)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    median(times)
}

fn train_step<M: Classifier>(
    model: &mut M,
    opt: &mut OptimizerState,
    x: &[f64],
    n: usize,
    y: &[Vec<u32>],
) {
    let (logits, cache) = model.forward_train(x, n);
    let (_, grad) = LossKind::MultiLabelSoftmax
        .evaluate(&logits, model.n_classes(), y)
        .expect("benchmark labels are in range");
    let grads = model.backward(&cache, &grad);
    // A diverging benchmark step still measures the work done.
    let _ = opt.step(model.parameters_mut(), &grads, 1e-3);
}

/// Train, inference and single-item latency medians for each batch size.
pub fn benchmark_throughput(
    name: &str,
    backbone: &Backbone,
    batch_sizes: &[usize],
    trials: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<ThroughputReport>> {
    if trials == 0 {
        return Err(Error::invalid("at least one timed trial is required"));
    }
    let mut r = rng::stream_rng(seed, 0xBE7C);
    let dim = backbone.input_dim();
    let hardware = HardwareStamp::current();
    let one: Vec<f64> = (0..dim).map(|_| r.random::<f64>()).collect();
    let latency = time_median(warmup, trials, || {
        std::hint::black_box(
            backbone
                .embed(&one, 1)
                .expect("input sized to the backbone"),
        );
    });
    let mut out = Vec::new();
    for &b in batch_sizes {
        if b == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let x: Vec<f64> = (0..b * dim).map(|_| r.random::<f64>()).collect();
        let y: Vec<Vec<u32>> = (0..b)
            .map(|_| vec![r.random_range(0..BENCH_CLASSES as u32)])
            .collect();
        let infer = time_median(warmup, trials, || {
            std::hint::black_box(backbone.embed(&x, b).expect("input sized to the backbone"));
        });
        let mut opt = OptimizerState::new(OptimizerConfig::adamw(0.0));
        let train = match backbone {
            Backbone::Mlp(enc) => {
                let head = Mlp::with_activations(
                    &[enc.output_dim(), BENCH_CLASSES],
                    &[Activation::Identity],
                    seed,
                )?;
                let mut m = Mlp::stack(enc, &head)?;
                time_median(warmup, trials, || train_step(&mut m, &mut opt, &x, b, &y))
            }
            Backbone::Vit(v) => {
                let mut m = v.with_head(BENCH_CLASSES, seed);
                time_median(warmup, trials, || train_step(&mut m, &mut opt, &x, b, &y))
            }
        };
        out.push(ThroughputReport {
            model: name.to_string(),
            batch_size: b,
            train_throughput: b as f64 / train,
            inference_throughput: b as f64 / infer,
            latency_ms: latency * 1e3,
            hardware: hardware.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
