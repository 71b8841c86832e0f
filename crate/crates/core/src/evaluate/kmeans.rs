use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::walker::walk_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            seed: 42,
            max_iters: 300,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (lowest index on ties); returns the
/// inertia and the per-point squared distances.
pub(crate) fn assign(
    data: &[f64],
    dim: usize,
    centroids: &[f64],
    labels: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let k = centroids.len() / dim;
    let mut inertia = 0.0;
    for (i, point) in data.chunks_exact(dim).enumerate() {
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(point, &centroids[c * dim..(c + 1) * dim]);
            if d < best.1 {
                best = (c, d);
            }
        }
        labels[i] = best.0;
        dists[i] = best.1;
        inertia += best.1;
    }
    inertia
}

fn plus_plus_init<R: Rng>(data: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.gen_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centroids[start..]));
        }
    }
    centroids
}

/// Moves every centroid to the mean of its points. An empty cluster takes
/// the point farthest from its current centroid.
fn update_centroids(data: &[f64], dim: usize, labels: &[usize], dists: &[f64], centroids: &mut [f64]) {
    let k = centroids.len() / dim;
    let mut counts = vec![0usize; k];
    centroids.fill(0.0);
    for (point, &l) in data.chunks_exact(dim).zip(labels) {
        counts[l] += 1;
        for (c, x) in centroids[l * dim..(l + 1) * dim].iter_mut().zip(point) {
            *c += x;
        }
    }
    let mut taken: Vec<usize> = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            let far = (0..dists.len())
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            taken.push(far);
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
        } else {
            let inv = 1.0 / counts[c] as f64;
            centroids[c * dim..(c + 1) * dim].iter_mut().for_each(|x| *x *= inv);
        }
    }
}

/// Lloyd iterations from `centroids` until the labels stop changing or
/// `max_iters` updates have run.
pub fn lloyd(data: &[f64], dim: usize, mut centroids: Vec<f64>, max_iters: usize) -> ClusterAssignment {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut inertia = assign(data, dim, &centroids, &mut labels, &mut dists);
    let mut trace = vec![inertia];
    let mut next = vec![0; n];
    for _ in 0..max_iters {
        update_centroids(data, dim, &labels, &dists, &mut centroids);
        inertia = assign(data, dim, &centroids, &mut next, &mut dists);
        trace.push(inertia);
        let stable = next == labels;
        std::mem::swap(&mut labels, &mut next);
        if stable {
            break;
        }
    }
    ClusterAssignment {
        k,
        labels,
        centroids,
        inertia,
        inertia_trace: trace,
    }
}

/// K-means with k-means++ seeding; keeps the restart with the lowest
/// inertia. `data` holds `n` points of `dim` coordinates, row-major.
pub fn kmeans(data: &[f64], dim: usize, k: usize, opts: &KMeansOptions) -> Result<ClusterAssignment> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::param("point data is not a whole number of rows"));
    }
    let n = data.len() / dim;
    if k == 0 || k > n {
        return Err(Error::param(format!("k = {k} must lie in [1, {n}]")));
    }
    let mut best: Option<ClusterAssignment> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(opts.seed, k, restart));
        let init = plus_plus_init(data, dim, k, &mut rng);
        let run = lloyd(data, dim, init, opts.max_iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_blobs() {
        let mut data = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..40 {
            let (cx, cy) = if i < 20 { (0.0, 0.0) } else { (100.0, 100.0) };
            data.push(cx + rng.gen_range(-1.0..1.0));
            data.push(cy + rng.gen_range(-1.0..1.0));
        }
        let a = kmeans(&data, 2, 2, &KMeansOptions::default()).unwrap();
        let first = a.labels[0];
        assert!(a.labels[..20].iter().all(|&l| l == first));
        assert!(a.labels[20..].iter().all(|&l| l != first));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = [1.0, 2.0, 3.0, 6.0, 5.0, 10.0];
        let a = kmeans(&data, 2, 1, &KMeansOptions::default()).unwrap();
        assert!((a.centroids[0] - 3.0).abs() < 1e-12 && (a.centroids[1] - 6.0).abs() < 1e-12);
        // total variance per coordinate times n: (8/3 + 32/3) * 3
        assert!((a.inertia - 40.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_k() {
        let data = [0.0, 1.0];
        assert!(kmeans(&data, 1, 3, &KMeansOptions::default()).is_err());
        assert!(kmeans(&data, 1, 0, &KMeansOptions::default()).is_err());
        assert!(kmeans(&data, 3, 1, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn duplicate_points() {
        let data = [1.0; 10];
        let a = kmeans(&data, 2, 3, &KMeansOptions::default()).unwrap();
        assert_eq!(a.inertia, 0.0);
        assert_eq!(a.labels.len(), 5);
    }

    #[test]
    fn trace_is_non_increasing_and_fixpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..300).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = kmeans(&data, 3, 6, &KMeansOptions::default()).unwrap();
        assert!(a.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let again = lloyd(&data, 3, a.centroids.clone(), 0);
        assert_eq!(again.labels, a.labels);
    }
}
