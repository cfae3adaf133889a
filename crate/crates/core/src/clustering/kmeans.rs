use rand::Rng as _;
use rayon::prelude::*;

use crate::{rng, Error, Result};

/// Points per parallel work unit; partial sums are reduced in chunk order.
const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub trace: Vec<f64>,
    /// Traces of all restarts, in restart order.
    pub restart_traces: Vec<Vec<f64>>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lower index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.par_iter().map(|p| nearest(p, centroids)).unzip()
}

fn ordered_sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    partial.iter().sum()
}

fn plus_plus(points: &[Vec<f64>], k: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[r.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            r.random_range(0..n)
        };
        let c = points[pick].clone();
        for (dv, p) in d2.iter_mut().zip(points) {
            *dv = dv.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn update(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let dim = points[0].len();
    let partial: Vec<(Vec<f64>, Vec<usize>)> = points
        .par_chunks(CHUNK)
        .zip(assignments.par_chunks(CHUNK))
        .map(|(ps, asg)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (p, &a) in ps.iter().zip(asg) {
                counts[a] += 1;
                for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                    *s += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (s, c) in partial {
        for (a, b) in sums.iter_mut().zip(&s) {
            *a += b;
        }
        for (a, b) in counts.iter_mut().zip(&c) {
            *a += b;
        }
    }
    (0..k)
        .map(|j| {
            (counts[j] > 0).then(|| {
                sums[j * dim..(j + 1) * dim]
                    .iter()
                    .map(|s| s / counts[j] as f64)
                    .collect()
            })
        })
        .collect()
}

fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>, f64, Vec<f64>) {
    let mut r = rng::rng(seed);
    let mut centroids = plus_plus(points, k, &mut r);
    let mut trace: Vec<f64> = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let mut iter = 0;
    loop {
        let (assignments, dists) = assign(points, &centroids);
        let inertia = ordered_sum(&dists);
        if let Some(&last) = trace.last() {
            assert!(
                inertia <= last + 1e-9 * last.abs().max(1.0),
                "k-means inertia increased from {last} to {inertia}"
            );
        }
        trace.push(inertia);
        let converged = previous.as_ref() == Some(&assignments);
        if converged || iter == max_iters {
            return (centroids, assignments, inertia, trace);
        }
        iter += 1;
        let means = update(points, &assignments, k);
        // Empty clusters take the worst-fitted points, farthest first.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
        let mut donors = order.into_iter();
        for (j, m) in means.into_iter().enumerate() {
            centroids[j] = match m {
                Some(c) => c,
                None => points[donors.next().unwrap_or(0)].clone(),
            };
        }
        previous = Some(assignments);
    }
}

/// k-means with k-means++ seeding and Lloyd iterations, best of `restarts` runs.
///
/// Iterates until the assignment stops changing or `max_iters` updates have run,
/// and always finishes on an assignment step, so every point is assigned to its
/// nearest returned centroid. Deterministic given `seed`.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::EmptyInput("k-means points".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} for {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("k-means points differ in dimension"));
    }
    let runs: Vec<_> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| lloyd(points, k, max_iters, rng::derive_seed(seed, r)))
        .collect();
    let restart_traces = runs.iter().map(|r| r.3.clone()).collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.2 < a.2 { b } else { a })
        .expect("at least one restart");
    Ok(KMeansResult {
        centroids: best.0,
        assignments: best.1,
        inertia: best.2,
        trace: best.3,
        restart_traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pairs() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ];
        let r = kmeans(&pts, 2, 1, 50, 5).unwrap();
        let mut c = r.centroids.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert_eq!(r.inertia, 1.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0], vec![2.0], vec![6.0]];
        let r = kmeans(&pts, 1, 0, 10, 1).unwrap();
        assert_eq!(r.centroids, vec![vec![3.0]]);
        assert_eq!(r.inertia, 4.0 + 1.0 + 9.0);
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(kmeans(&[vec![0.0]], 2, 0, 10, 1).is_err());
    }
}
