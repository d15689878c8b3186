//! Ward-linkage agglomerative clustering (nearest-neighbour chain) and
//! centroid-nearest representative selection.

use crate::error::{Error, Result};

/// One agglomeration step: clusters `a` and `b` (ids in `0..2M-1`, new
/// clusters numbered from `M` upward) merged at Ward cost `height`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ward dendrogram as `M - 1` merges in ascending height.
///
/// Heights are increases in within-cluster sum of squares,
/// `|A||B| / (|A| + |B|) · ‖c_A − c_B‖²`, maintained with the Lance–Williams
/// update. Merges of equal height keep discovery order.
pub fn ward_linkage(points: &[Vec<f64>]) -> Vec<Merge> {
    let m = points.len();
    if m < 2 {
        return Vec::new();
    }
    // Condensed upper-triangular storage would halve memory; M ≤ a few
    // thousand here so the square matrix is fine.
    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = 0.5 * sq_dist(&points[i], &points[j]);
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }
    let mut size = vec![1usize; m];
    let mut active = vec![true; m];
    // Slot i holds the cluster id currently stored at matrix row i.
    let mut label: Vec<usize> = (0..m).collect();
    let mut merges = Vec::with_capacity(m - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(m);
    let mut next_label = m;

    while merges.len() < m - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|a| *a).unwrap());
        }
        loop {
            let top = *chain.last().unwrap();
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            // Nearest active neighbour; prefer the chain predecessor on ties so
            // the chain terminates.
            let mut best = prev;
            let mut best_d = prev.map(|p| dist[top * m + p]).unwrap_or(f64::INFINITY);
            for j in 0..m {
                if j == top || !active[j] {
                    continue;
                }
                let d = dist[top * m + j];
                if d < best_d {
                    best_d = d;
                    best = Some(j);
                }
            }
            let nn = best.expect("at least two active clusters");
            if Some(nn) == prev {
                break;
            }
            chain.push(nn);
        }
        let b = chain.pop().unwrap();
        let a = chain.pop().unwrap();
        let (keep, gone) = if a < b { (a, b) } else { (b, a) };
        let d_ab = dist[a * m + b];
        merges.push(Merge {
            a: label[a].min(label[b]),
            b: label[a].max(label[b]),
            height: d_ab,
        });

        let (na, nb) = (size[keep] as f64, size[gone] as f64);
        for k in 0..m {
            if !active[k] || k == keep || k == gone {
                continue;
            }
            let nk = size[k] as f64;
            let d = ((na + nk) * dist[keep * m + k] + (nb + nk) * dist[gone * m + k] - nk * d_ab) / (na + nb + nk);
            dist[keep * m + k] = d;
            dist[k * m + keep] = d;
        }
        active[gone] = false;
        size[keep] += size[gone];
        label[keep] = next_label;
        next_label += 1;
    }

    // Ward is reducible, so sorting the chain's merges yields the same
    // hierarchy as greedy agglomeration. Relabel to keep ids consistent.
    let mut order: Vec<usize> = (0..merges.len()).collect();
    order.sort_by(|&i, &j| merges[i].height.total_cmp(&merges[j].height).then(i.cmp(&j)));
    relabel(m, &merges, &order)
}

/// Rewrites merges in `order`, renumbering internal clusters by position.
fn relabel(m: usize, merges: &[Merge], order: &[usize]) -> Vec<Merge> {
    // Map each original cluster label to the set of leaves it contains and
    // rebuild with union-find so labels follow the sorted order.
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    // Representative leaf of each original label.
    let mut leaf_of = vec![0usize; 2 * m];
    for (i, l) in leaf_of.iter_mut().enumerate().take(m) {
        *l = i;
    }
    for (k, mg) in merges.iter().enumerate() {
        leaf_of[m + k] = leaf_of[mg.a];
    }
    let mut root_label: Vec<usize> = (0..m).collect();
    let mut out = Vec::with_capacity(merges.len());
    for (pos, &k) in order.iter().enumerate() {
        let mg = merges[k];
        let ra = find(&mut parent, leaf_of[mg.a]);
        let rb = find(&mut parent, leaf_of[mg.b]);
        let (la, lb) = (root_label[ra], root_label[rb]);
        parent[rb] = ra;
        root_label[ra] = m + pos;
        out.push(Merge {
            a: la.min(lb),
            b: la.max(lb),
            height: mg.height,
        });
    }
    out
}

/// Leaf → cluster index (`0..k`, numbered by smallest member) after applying
/// the first `M - k` merges.
pub fn cut(m: usize, merges: &[Merge], k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..2 * m).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (pos, mg) in merges.iter().take(m - k).enumerate() {
        let node = m + pos;
        let ra = find(&mut parent, mg.a);
        let rb = find(&mut parent, mg.b);
        parent[ra] = node;
        parent[rb] = node;
    }
    let mut ids = vec![usize::MAX; 2 * m];
    let mut next = 0;
    (0..m)
        .map(|i| {
            let r = find(&mut parent, i);
            if ids[r] == usize::MAX {
                ids[r] = next;
                next += 1;
            }
            ids[r]
        })
        .collect()
}

/// Indices (ascending) of the member nearest each cluster centroid.
pub fn representatives(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let m = points.len();
    if k == 0 || k > m {
        return Err(Error::Input(format!("cluster count must be in 1..={m}, got {k}")));
    }
    if k == m {
        return Ok((0..m).collect());
    }
    let merges = ward_linkage(points);
    let assign = cut(m, &merges, k);
    Ok(nearest_to_centroids(points, &assign, k))
}

pub fn nearest_to_centroids(points: &[Vec<f64>], assign: &[usize], k: usize) -> Vec<usize> {
    let dim = points[0].len();
    let mut centroid = vec![vec![0.0; dim]; k];
    let mut count = vec![0usize; k];
    for (p, &c) in points.iter().zip(assign) {
        count[c] += 1;
        for (acc, v) in centroid[c].iter_mut().zip(p) {
            *acc += v;
        }
    }
    for (c, n) in centroid.iter_mut().zip(&count) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let mut best = vec![(f64::INFINITY, usize::MAX); k];
    for (i, (p, &c)) in points.iter().zip(assign).enumerate() {
        let d = sq_dist(p, &centroid[c]);
        // Strict comparison keeps the lowest index on ties.
        if d < best[c].0 {
            best[c] = (d, i);
        }
    }
    let mut idx: Vec<usize> = best.into_iter().map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Greedy O(M³) Ward agglomeration computing merge costs from centroids.
    fn brute_force_clusters(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        let centroid = |c: &[usize]| -> Vec<f64> {
            let dim = points[0].len();
            let mut out = vec![0.0; dim];
            for &i in c {
                for d in 0..dim {
                    out[d] += points[i][d];
                }
            }
            out.iter().map(|v| v / c.len() as f64).collect()
        };
        while clusters.len() > k {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let (ci, cj) = (centroid(&clusters[i]), centroid(&clusters[j]));
                    let (ni, nj) = (clusters[i].len() as f64, clusters[j].len() as f64);
                    let cost = ni * nj / (ni + nj) * sq_dist(&ci, &cj);
                    if cost < best.0 {
                        best = (cost, i, j);
                    }
                }
            }
            let moved = clusters.remove(best.2);
            clusters[best.1].extend(moved);
        }
        clusters
    }

    fn random_points(seed: u64, m: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn matches_brute_force_ward() {
        for seed in 0..5 {
            let pts = random_points(seed, 50, 3);
            let k = 5;
            let clusters = brute_force_clusters(&pts, k);
            let mut assign = vec![0; pts.len()];
            for (c, members) in clusters.iter().enumerate() {
                for &i in members {
                    assign[i] = c;
                }
            }
            let expected = nearest_to_centroids(&pts, &assign, k);
            assert_eq!(representatives(&pts, k).unwrap(), expected, "seed {seed}");
        }
    }

    #[test]
    fn merges_are_monotone() {
        let pts = random_points(9, 120, 4);
        let merges = ward_linkage(&pts);
        assert_eq!(merges.len(), 119);
        for w in merges.windows(2) {
            assert!(w[0].height <= w[1].height);
        }
    }

    #[test]
    fn separated_blobs_get_one_representative_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for center in [-100.0, 100.0] {
            for _ in 0..15 {
                pts.push(vec![center + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            }
        }
        let reps = representatives(&pts, 2).unwrap();
        assert_eq!(reps.len(), 2);
        assert!(reps[0] < 15 && reps[1] >= 15);
    }

    #[test]
    fn k_equals_m_is_identity() {
        let pts = random_points(2, 7, 2);
        assert_eq!(representatives(&pts, 7).unwrap(), (0..7).collect::<Vec<_>>());
        assert!(representatives(&pts, 8).is_err());
    }

    #[test]
    fn cut_single_cluster() {
        let pts = random_points(3, 10, 2);
        let merges = ward_linkage(&pts);
        assert!(cut(10, &merges, 1).iter().all(|&c| c == 0));
        let reps = representatives(&pts, 1).unwrap();
        assert_eq!(reps.len(), 1);
    }

    proptest! {
        #[test]
        fn representatives_distinct_and_sorted(seed in 0u64..1000, k in 1usize..20) {
            let pts = random_points(seed, 25, 3);
            let reps = representatives(&pts, k).unwrap();
            prop_assert_eq!(reps.len(), k);
            for w in reps.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }
    }
}
