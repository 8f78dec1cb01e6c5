//! Deterministic weighted k-means used for stream state tying and
//! transition-model tying.
//!
//! Initialization is farthest-point traversal over the distinct input
//! points, assignment ties break toward the lowest index, and centroid
//! updates are weight-averaged, so the result depends only on the input
//! order.

/// Clustering outcome; `k` is the effective cluster count after any
/// reduction.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    /// True when the requested k exceeded the number of distinct points.
    pub reduced: bool,
}

/// Squared Euclidean distance with per-dimension scale factors.
fn distance2(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..a.len() {
        let diff = a[d] - b[d];
        acc += scale[d] * diff * diff;
    }
    acc
}

/// Cluster `points` (with non-negative `weights`) into at most `k` groups.
pub fn cluster(points: &[Vec<f64>], weights: &[f64], scale: &[f64], k: usize, max_iterations: usize) -> Clustering {
    assert!(!points.is_empty(), "kmeans needs at least one point");
    assert_eq!(points.len(), weights.len());
    let dim = points[0].len();

    // Count distinct points to cap k; exact comparison is intended here,
    // duplicate densities must land in the same cluster.
    let mut distinct: Vec<&[f64]> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| q == &p.as_slice()) {
            distinct.push(p);
        }
    }
    let k_eff = k.max(1).min(distinct.len());
    let reduced = k_eff < k;

    // Farthest-point initialization over distinct points, seeded at the
    // point farthest from the weighted global mean.
    let total_w: f64 = weights.iter().sum();
    let mut mean = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        for d in 0..dim {
            mean[d] += w * p[d];
        }
    }
    if total_w > 0.0 {
        for d in 0..dim {
            mean[d] /= total_w;
        }
    }
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k_eff);
    let first = argmax_distance(&distinct, |p| distance2(p, &mean, scale));
    centroids.push(distinct[first].to_vec());
    while centroids.len() < k_eff {
        let next = argmax_distance(&distinct, |p| {
            centroids.iter().map(|c| distance2(p, c, scale)).fold(f64::INFINITY, f64::min)
        });
        centroids.push(distinct[next].to_vec());
    }

    let mut assignments = vec![0usize; points.len()];
    for _ in 0..max_iterations {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = distance2(p, centroid, scale);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0; dim]; k_eff];
        let mut mass = vec![0.0; k_eff];
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i];
            let w = weights[i].max(1e-12);
            mass[c] += w;
            for d in 0..dim {
                sums[c][d] += w * p[d];
            }
        }
        for c in 0..k_eff {
            if mass[c] > 0.0 {
                for d in 0..dim {
                    centroids[c][d] = sums[c][d] / mass[c];
                }
            } else {
                // Re-seed an empty cluster at the point farthest from its
                // current centroid assignment.
                let far = argmax_distance(&distinct, |p| {
                    centroids.iter().map(|cc| distance2(p, cc, scale)).fold(f64::INFINITY, f64::min)
                });
                centroids[c] = distinct[far].to_vec();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    Clustering { assignments, centroids, k: k_eff, reduced }
}

fn argmax_distance<F: Fn(&[f64]) -> f64>(candidates: &[&[f64]], score: F) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, p) in candidates.iter().enumerate() {
        let v = score(p);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_cluster_is_weighted_mean() {
        let points = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]];
        let weights = vec![1.0, 1.0, 2.0];
        let out = cluster(&points, &weights, &[1.0, 1.0], 1, 20);
        assert_eq!(out.k, 1);
        assert!((out.centroids[0][0] - 0.25).abs() < 1e-12);
        assert!((out.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_reduces_to_distinct_count() {
        let points = vec![vec![1.0], vec![1.0], vec![2.0]];
        let out = cluster(&points, &[1.0; 3], &[1.0], 5, 20);
        assert!(out.reduced);
        assert_eq!(out.k, 2);
        assert_eq!(out.assignments[0], out.assignments[1]);
        assert_ne!(out.assignments[0], out.assignments[2]);
    }

    #[test]
    fn planted_partition_recovered() {
        // Two groups of points separated by ten pooled standard deviations.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..20 {
            points.push(vec![rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1]);
            truth.push(0usize);
        }
        for _ in 0..20 {
            points.push(vec![1.0 + rng.random::<f64>() * 0.1, 1.0 + rng.random::<f64>() * 0.1]);
            truth.push(1usize);
        }
        let out = cluster(&points, &vec![1.0; 40], &[1.0, 1.0], 2, 50);
        let first = out.assignments[0];
        for (a, t) in out.assignments.iter().zip(&truth) {
            let expected = if *t == 0 { first } else { 1 - first };
            assert_eq!(*a, expected);
        }
    }

    #[test]
    fn deterministic_for_same_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let points: Vec<Vec<f64>> =
            (0..30).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let weights: Vec<f64> = (0..30).map(|_| 0.5 + rng.random::<f64>()).collect();
        let a = cluster(&points, &weights, &[1.0; 4], 5, 50);
        let b = cluster(&points, &weights, &[1.0; 4], 5, 50);
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }
}
