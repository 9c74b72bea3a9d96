//! Player-wise clustering of role means: seeded k-means++ with restarts and
//! silhouette-based choice of k.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = dist2(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd<P: AsRef<[f64]>>(points: &[P], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let dim = centroids[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p.as_ref(), &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.as_ref()) {
                *s += v;
            }
        }
        for (c, (s, n)) in sums.into_iter().zip(counts).enumerate() {
            // an emptied cluster keeps its previous centroid
            if n > 0 {
                centroids[c] = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| dist2(p.as_ref(), &centroids[l]))
        .sum();
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}

fn kmeans_pp_init<P: AsRef<[f64]>, R: Rng>(points: &[P], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Best of `restarts` seeded k-means++ / Lloyd runs by inertia.
pub fn kmeans<P: AsRef<[f64]>, R: Rng>(points: &[P], k: usize, restarts: usize, rng: &mut R) -> KMeansFit {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, kmeans_pp_init(points, k, rng), 300);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}

/// Mean silhouette coefficient with Euclidean distances. A point alone in
/// its cluster scores 0, as does a point with a = b = 0.
pub fn silhouette<P: AsRef<[f64]>>(points: &[P], labels: &[usize]) -> f64 {
    assert_eq!(points.len(), labels.len());
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist2(points[i].as_ref(), points[j].as_ref()).sqrt();
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub silhouette_threshold: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            silhouette_threshold: 0.6,
            k_min: 2,
            k_max: 4,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerClusters {
    pub k: usize,
    /// Cluster per input point, numbered by first appearance in sorted point order.
    pub labels: Vec<usize>,
    /// Silhouette per tried k.
    pub scores: Vec<(usize, f64)>,
}

/// Clusters one player's role means. Points are put in a canonical order
/// before clustering, so the partition does not depend on input order.
pub fn cluster_player(means: &[[f64; 2]], cfg: &ClusterConfig, seed: u64) -> PlayerClusters {
    let n = means.len();
    let single = |scores| PlayerClusters {
        k: 1,
        labels: vec![0; n],
        scores,
    };
    if n < 3 {
        return single(Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        means[a][0]
            .total_cmp(&means[b][0])
            .then(means[a][1].total_cmp(&means[b][1]))
    });
    let sorted: Vec<[f64; 2]> = order.iter().map(|&i| means[i]).collect();
    let mut scores = Vec::new();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for k in cfg.k_min..=cfg.k_max {
        if k >= n {
            break;
        }
        let mut rng = seed::substream(seed, &["kmeans", &k.to_string()]);
        let fit = kmeans(&sorted, k, cfg.restarts, &mut rng);
        let s = silhouette(&sorted, &fit.labels);
        scores.push((k, s));
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, k, fit.labels));
        }
    }
    match best {
        Some((s, k, labels)) if s >= cfg.silhouette_threshold => {
            let mut remap = vec![usize::MAX; k];
            let mut next = 0;
            let mut out = vec![0; n];
            for (pos, &l) in labels.iter().enumerate() {
                if remap[l] == usize::MAX {
                    remap[l] = next;
                    next += 1;
                }
                out[order[pos]] = remap[l];
            }
            PlayerClusters { k: next, labels: out, scores }
        }
        _ => single(scores),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn silhouette_of_two_tight_pairs() {
        // pairs 1 m apart, 100 m between them
        let pts = [[0.0, 0.0], [1.0, 0.0], [100.0, 0.0], [101.0, 0.0]];
        let labels = [0, 0, 1, 1];
        let s = silhouette(&pts, &labels);
        // point 0: a=1, b=(100+101)/2=100.5 → 0.99005; point 1: a=1, b=(99+100)/2=99.5 → 0.98995
        let expect = 2.0 * ((100.5 - 1.0) / 100.5 + (99.5 - 1.0) / 99.5) / 4.0;
        assert!((s - expect).abs() < 1e-12);
        assert!(s > 0.9);
    }

    #[test]
    fn silhouette_identical_points_is_zero() {
        let pts = [[3.0, 3.0]; 6];
        assert_eq!(silhouette(&pts, &[0, 0, 0, 1, 1, 1]), 0.0);
    }

    #[test]
    fn silhouette_singleton_contributes_zero() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [50.0, 0.0]];
        let s = silhouette(&pts, &[0, 0, 1]);
        // two points with a = 1, b ≈ 50 each, singleton 0
        let b0 = 50.0;
        let b1 = (50.0f64 * 50.0 + 1.0).sqrt();
        let expect = ((b0 - 1.0) / b0 + (b1 - 1.0) / b1) / 3.0;
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn planted_labels_beat_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let centers = [[10.0, 10.0], [40.0, 10.0], [25.0, 40.0]];
        let mut pts = Vec::new();
        let mut planted = Vec::new();
        for (c, m) in centers.iter().enumerate() {
            for _ in 0..10 {
                pts.push([m[0] + noise.sample(&mut rng), m[1] + noise.sample(&mut rng)]);
                planted.push(c);
            }
        }
        let good = silhouette(&pts, &planted);
        for _ in 0..50 {
            let mut random = planted.clone();
            random.shuffle(&mut rng);
            assert!(good > silhouette(&pts, &random));
        }
    }

    #[test]
    fn kmeans_separates_planted_blobs() {
        let pts: Vec<[f64; 2]> = (0..10)
            .map(|i| [i as f64 * 0.1, 0.0])
            .chain((0..10).map(|i| [50.0 + i as f64 * 0.1, 0.0]))
            .collect();
        let fit = kmeans(&pts, 2, 10, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(fit.labels[..10].iter().all(|&l| l == fit.labels[0]));
        assert!(fit.labels[10..].iter().all(|&l| l == fit.labels[10]));
        assert_ne!(fit.labels[0], fit.labels[10]);
    }

    fn jittered(center: [f64; 2], n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        let noise = Normal::new(0.0, std).unwrap();
        (0..n)
            .map(|_| [center[0] + noise.sample(rng), center[1] + noise.sample(rng)])
            .collect()
    }

    #[test]
    fn two_planted_role_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = jittered([20.0, 34.0], 8, 1.0, &mut rng);
        pts.extend(jittered([80.0, 34.0], 7, 1.0, &mut rng));
        let out = cluster_player(&pts, &ClusterConfig::default(), 5);
        assert_eq!(out.k, 2);
        assert!(out.labels[..8].iter().all(|&l| l == 0));
        assert!(out.labels[8..].iter().all(|&l| l == 1));
        let s2 = out.scores.iter().find(|s| s.0 == 2).unwrap().1;
        assert!(s2 > 0.6);
    }

    #[test]
    fn unimodal_means_form_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = jittered([50.0, 30.0], 15, 1.0, &mut rng);
        let out = cluster_player(&pts, &ClusterConfig::default(), 5);
        assert_eq!(out.k, 1);
        assert!(out.scores.iter().all(|s| s.1 < 0.6));
    }

    #[test]
    fn two_phases_form_one_cluster() {
        let out = cluster_player(&[[0.0, 0.0], [90.0, 60.0]], &ClusterConfig::default(), 1);
        assert_eq!(out.k, 1);
        assert_eq!(out.labels, vec![0, 0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]
            #[test]
            fn partition_is_order_invariant(
                pts in proptest::collection::vec((0.0f64..105.0, 0.0f64..68.0), 3..14),
                seed in 0u64..1000,
            ) {
                let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
                let mut perm: Vec<usize> = (0..pts.len()).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let shuffled: Vec<[f64; 2]> = perm.iter().map(|&i| pts[i]).collect();
                let a = cluster_player(&pts, &ClusterConfig::default(), 17);
                let b = cluster_player(&shuffled, &ClusterConfig::default(), 17);
                prop_assert_eq!(a.k, b.k);
                for (pos, &i) in perm.iter().enumerate() {
                    prop_assert_eq!(a.labels[i], b.labels[pos]);
                }
            }
        }
    }
}
