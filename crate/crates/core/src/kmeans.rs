//! Lloyd's k-means with deterministic k-means++ seeding.
//!
//! Assignment ties break toward the lowest cluster id, empty clusters are
//! repaired by stealing the point farthest from its current centroid, and
//! every random choice comes from a tag-derived [`DetRng`](crate::rng::DetRng)
//! stream, so a fixed `(rows, k, seed)` always produces the same clustering.

use crate::rng::DetRng;

const KMEANS_TAG: u64 = 0x6b6d; // "km"

#[derive(Clone, Debug)]
pub struct KmeansRun {
    /// Row index -> cluster id in `0..k`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Total squared distance to assigned centroids after each pass.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = dist2(point, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the chosen set.
fn plus_plus_init(rows: &[Vec<f64>], k: usize, rng: &mut DetRng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.gen_range(n)].clone());
    let mut d2: Vec<f64> = rows.iter().map(|r| dist2(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with chosen centroids.
            rng.gen_range(n)
        };
        centroids.push(rows[next].clone());
        for (i, r) in rows.iter().enumerate() {
            let d = dist2(r, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Run Lloyd iterations until the assignment stops changing or `max_iter`
/// passes have executed. Caller guarantees `1 <= k <= rows.len()` and
/// finite, equal-length rows.
pub fn run(rows: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> KmeansRun {
    let n = rows.len();
    assert!(k >= 1 && k <= n, "k = {k} out of range for {n} rows");
    let mut rng = DetRng::derive(seed, &[KMEANS_TAG]);
    let mut centroids = plus_plus_init(rows, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // Assignment pass; ties keep the lowest cluster id.
        let mut next: Vec<usize> = rows.iter().map(|r| nearest(r, &centroids).0).collect();

        // Repair empty clusters by stealing the farthest point from a
        // cluster that can spare one; its coordinates become the centroid.
        let mut counts = vec![0usize; k];
        for &a in &next {
            counts[a] += 1;
        }
        for j in 0..k {
            while counts[j] == 0 {
                let mut far_idx = usize::MAX;
                let mut far_d = -1.0;
                for (i, &a) in next.iter().enumerate() {
                    if counts[a] >= 2 {
                        let d = dist2(&rows[i], &centroids[a]);
                        if d > far_d {
                            far_d = d;
                            far_idx = i;
                        }
                    }
                }
                debug_assert!(far_idx != usize::MAX, "no donor for empty cluster");
                counts[next[far_idx]] -= 1;
                next[far_idx] = j;
                counts[j] += 1;
                centroids[j] = rows[far_idx].clone();
            }
        }

        let inertia: f64 = rows
            .iter()
            .zip(&next)
            .map(|(r, &a)| dist2(r, &centroids[a]))
            .sum();
        inertia_trace.push(inertia);
        iterations += 1;

        let changed = next != assignment;
        assignment = next;
        if !changed {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }

        // Update pass: centroids become cluster means.
        let dim = rows[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (r, &a) in rows.iter().zip(&assignment) {
            sizes[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(r) {
                *s += v;
            }
        }
        for j in 0..k {
            if sizes[j] > 0 {
                for s in sums[j].iter_mut() {
                    *s /= sizes[j] as f64;
                }
                centroids[j] = std::mem::take(&mut sums[j]);
            }
        }
    }

    KmeansRun {
        assignment,
        centroids,
        inertia_trace,
        iterations,
        converged,
    }
}
