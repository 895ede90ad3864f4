//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independent seedings; the lowest final SSE wins.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            // one cluster per (cc, p, action) cell of the default 16x16 grid
            k: 1280,
            max_iter: 100,
            tol: 1e-6,
            n_init: 8,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config {
                key: "cluster.k".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.max_iter == 0 || self.n_init == 0 {
            return Err(Error::Config {
                key: "cluster.max_iter".into(),
                reason: "max_iter and n_init must be at least 1".into(),
            });
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config {
                key: "cluster.tol".into(),
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    /// SSE after each assignment step of the winning run, then the final SSE.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum of squared distances from each point to the mean of its cluster.
pub fn partition_sse(points: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let cents = means(points, assignments, k);
    points
        .iter()
        .zip(assignments)
        .map(|(x, &a)| sq_dist(x, &cents[a]))
        .sum()
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

fn plus_plus_seed(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding at the tail
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].clone();
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> KMeansFit {
    let k = centroids.len();
    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut counts = vec![0usize; k];
        for (i, x) in points.iter().enumerate() {
            let (j, d) = nearest(&centroids, x);
            assignments[i] = j;
            dists[i] = d;
            counts[j] += 1;
        }
        // Reseed each empty cluster at the point farthest from its centroid,
        // taken from a cluster that can spare it.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .expect("k <= number of points");
            counts[assignments[far]] -= 1;
            assignments[far] = j;
            counts[j] = 1;
            dists[far] = 0.0;
            centroids[j] = points[far].clone();
        }
        history.push(dists.iter().sum());
        let updated = means(points, &assignments, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < tol {
            break;
        }
    }
    let sse = points
        .iter()
        .zip(&assignments)
        .map(|(x, &a)| sq_dist(x, &centroids[a]))
        .sum();
    history.push(sse);
    KMeansFit {
        centroids,
        assignments,
        sse,
        sse_history: history,
        iterations,
    }
}

/// Cap on extra deterministic starts for small inputs.
const EXHAUSTIVE_STARTS: usize = 256;

/// All k-subsets of `points` as centroid lists, or none when there are more
/// than `cap` of them.
fn point_subsets(points: &[Vec<f64>], k: usize, cap: usize) -> Vec<Vec<Vec<f64>>> {
    let n = points.len();
    let mut count = 1usize;
    for i in 0..k {
        count = count.saturating_mul(n - i) / (i + 1);
        if count > cap {
            return Vec::new();
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| points[i].clone()).collect());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Moves single points between clusters while a move strictly lowers SSE,
/// accounting for the centroid shift the move causes. Lloyd fixed points
/// are often not stable under such moves; after a round of transfers
/// Lloyd runs again from the new means.
fn refine(points: &[Vec<f64>], mut fit: KMeansFit, cfg: &KMeansConfig) -> KMeansFit {
    let k = fit.centroids.len();
    for _ in 0..cfg.max_iter {
        let mut counts = vec![0usize; k];
        for &a in &fit.assignments {
            counts[a] += 1;
        }
        let mut centroids = fit.centroids.clone();
        let mut moved = false;
        for (i, x) in points.iter().enumerate() {
            let a = fit.assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(x, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for (b, c) in centroids.iter().enumerate() {
                if b == a {
                    continue;
                }
                let nb = counts[b] as f64;
                let add = nb / (nb + 1.0) * sq_dist(x, c);
                if add < removal * (1.0 - 1e-12) && best.is_none_or(|(_, v)| add < v) {
                    best = Some((b, add));
                }
            }
            let Some((b, _)) = best else { continue };
            let (na_new, nb_new) = (na - 1.0, counts[b] as f64 + 1.0);
            for d in 0..x.len() {
                centroids[a][d] += (centroids[a][d] - x[d]) / na_new;
                centroids[b][d] += (x[d] - centroids[b][d]) / nb_new;
            }
            counts[a] -= 1;
            counts[b] += 1;
            fit.assignments[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        let again = lloyd(points, means(points, &fit.assignments, k), cfg.max_iter, cfg.tol);
        let mut history = std::mem::take(&mut fit.sse_history);
        history.extend(again.sse_history.iter().copied());
        fit = KMeansFit {
            sse_history: history,
            iterations: fit.iterations + again.iterations,
            ..again
        };
    }
    fit
}

/// Fits `cfg.k` clusters. Centroids are the exact means of the returned
/// assignment and no cluster is empty.
pub fn kmeans_fit(points: &[Vec<f64>], cfg: &KMeansConfig, seed: u64) -> Result<KMeansFit> {
    cfg.validate()?;
    let Some(first) = points.first() else {
        return Err(Error::Empty("point set"));
    };
    if cfg.k > points.len() {
        return Err(Error::invalid(format!("k = {} exceeds {} points", cfg.k, points.len())));
    }
    let dim = first.len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..cfg.n_init {
        let init = plus_plus_seed(points, cfg.k, &mut rng);
        let fit = refine(points, lloyd(points, init, cfg.max_iter, cfg.tol), cfg);
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    // Small inputs: every k-subset of points also serves as a start.
    for init in point_subsets(points, cfg.k, EXHAUSTIVE_STARTS) {
        let fit = refine(points, lloyd(points, init, cfg.max_iter, cfg.tol), cfg);
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> KMeansConfig {
        KMeansConfig {
            k,
            ..KMeansConfig::default()
        }
    }

    #[test]
    fn two_groups_on_a_line() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
        let fit = kmeans_fit(&pts, &cfg(2), 7).unwrap();
        let mut c: Vec<f64> = fit.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert_eq!(fit.sse, 1.0);
    }

    #[test]
    fn k_equals_n_gives_zero_sse() {
        let pts = vec![vec![0.0, 1.0], vec![3.0, 2.0], vec![-1.0, 5.0]];
        let fit = kmeans_fit(&pts, &cfg(3), 1).unwrap();
        assert_eq!(fit.sse, 0.0);
    }

    #[test]
    fn identical_points() {
        let pts = vec![vec![2.5, -1.0]; 6];
        let fit = kmeans_fit(&pts, &cfg(1), 4).unwrap();
        assert_eq!(fit.centroids[0], vec![2.5, -1.0]);
        let fit = kmeans_fit(&pts, &cfg(3), 4).unwrap();
        let mut counts = [0; 3];
        fit.assignments.iter().for_each(|&a| counts[a] += 1);
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn rejects_bad_input() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans_fit(&pts, &cfg(3), 0).is_err());
        assert!(kmeans_fit(&[], &cfg(1), 0).is_err());
        assert!(kmeans_fit(&[vec![0.0], vec![1.0, 2.0]], &cfg(1), 0).is_err());
        assert!(kmeans_fit(&pts, &cfg(0), 0).is_err());
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let c = vec![vec![0.0], vec![2.0], vec![2.0]];
        assert_eq!(nearest(&c, &[1.0]).0, 0);
        assert_eq!(nearest(&c, &[2.0]).0, 1);
    }
}
