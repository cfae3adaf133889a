use rand::seq::index::sample;

use crate::rng;

/// Most coordinates checked per tensor.
pub const MAX_COORDS_PER_TENSOR: usize = 512;

/// Compares analytic gradients against central finite differences.
///
/// `f` evaluates the loss and its analytic gradient at the given parameters. Up to
/// [`MAX_COORDS_PER_TENSOR`] coordinates of each tensor are perturbed by `±epsilon`;
/// the result is the maximum of `|a − n| / max(1e-12, |a| + |n|)` over them.
pub fn grad_check<F>(mut f: F, params: &[Vec<f64>], epsilon: f64, seed: u64) -> f64
where
    F: FnMut(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = f(params);
    let mut work = params.to_vec();
    let mut rng = rng::stream_rng(seed, 0x6C4B);
    let mut worst: f64 = 0.0;
    for t in 0..params.len() {
        let len = params[t].len();
        let coords: Vec<usize> = if len <= MAX_COORDS_PER_TENSOR {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, MAX_COORDS_PER_TENSOR).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let orig = work[t][j];
            work[t][j] = orig + epsilon;
            let (up, _) = f(&work);
            work[t][j] = orig - epsilon;
            let (down, _) = f(&work);
            work[t][j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[t][j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let p = vec![vec![0.3, -1.2, 4.0], vec![2.0]];
        let err = grad_check(
            |q| {
                let s = q.iter().flatten().sum();
                (s, q.iter().map(|t| vec![1.0; t.len()]).collect())
            },
            &p,
            1e-5,
            0,
        );
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = vec![vec![1.0, 2.0]];
        let err = grad_check(
            |q| {
                let s: f64 = q[0].iter().map(|x| x * x).sum();
                (s, vec![q[0].clone()])
            },
            &p,
            1e-5,
            0,
        );
        assert!(err > 0.3);
    }
}
