//! Lloyd's k-means over soft-label vectors.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Distribution;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignments: IndexMap<String, usize>,
    pub centroids: Vec<Distribution>,
    /// Inertia after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

pub fn inertia(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, c)| sq_dist(p, &centroids[*c]))
        .sum()
}

/// Cluster soft labels into `k` groups by Euclidean distance.
///
/// Seeding picks a seeded random first centroid, then repeatedly the point
/// farthest from all chosen centroids. Iterates until the assignment stops
/// changing or [`MAX_ITERATIONS`].
pub fn kmeans_soft_labels(
    targets: &IndexMap<String, Distribution>,
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if targets.len() < k {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} items",
            targets.len()
        )));
    }
    let points: Vec<&[f64]> = targets.values().map(Distribution::probs).collect();
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }
    let n = points.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].to_vec()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for i in 1..n {
            if min_d[i] > min_d[far] {
                far = i;
            }
        }
        centroids.push(points[far].to_vec());
        for (d, p) in min_d.iter_mut().zip(&points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        reseed_empty(&points, &mut next, &mut centroids);
        if next == labels {
            break;
        }
        labels = next;
        centroids = update_centroids(&points, &labels, k, dim);
        trace.push(inertia(&points, &labels, &centroids));
    }

    Ok(ClusterAssignment {
        assignments: targets.keys().cloned().zip(labels).collect(),
        centroids: centroids.into_iter().map(Distribution::from_simplex).collect(),
        inertia_trace: trace,
    })
}

/// Moves the point farthest from its centroid (within a cluster of size ≥ 2)
/// into each empty cluster.
fn reseed_empty(points: &[&[f64]], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for l in labels.iter() {
            sizes[*l] += 1;
        }
        let Some(empty) = sizes.iter().position(|s| *s == 0) else {
            return;
        };
        let mut donor: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        let (i, _) = donor.expect("n >= k guarantees a cluster with two members");
        labels[i] = empty;
        centroids[empty] = points[i].to_vec();
    }
}

fn update_centroids(points: &[&[f64]], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, l) in points.iter().zip(labels) {
        counts[*l] += 1;
        for (s, x) in sums[*l].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|x| x / c as f64).collect())
        .collect()
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Relabels clusters so ids increase with the centroid's expected class
    /// index; ties keep their original order.
    pub fn ordered_by_expectation(&self) -> ClusterAssignment {
        let expectation = |d: &Distribution| -> f64 {
            d.probs().iter().enumerate().map(|(i, p)| i as f64 * p).sum()
        };
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|a, b| {
            expectation(&self.centroids[*a]).total_cmp(&expectation(&self.centroids[*b]))
        });
        let mut new_id = vec![0; self.k()];
        for (new, old) in order.iter().enumerate() {
            new_id[*old] = new;
        }
        ClusterAssignment {
            assignments: self
                .assignments
                .iter()
                .map(|(id, c)| (id.clone(), new_id[*c]))
                .collect(),
            centroids: order.iter().map(|o| self.centroids[*o].clone()).collect(),
            inertia_trace: self.inertia_trace.clone(),
        }
    }
}
