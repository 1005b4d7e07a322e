//! X-means clustering over trajectory embeddings.
//!
//! k-means uses k-means++ seeding and Lloyd iterations to an assignment
//! fixpoint; X-means grows the cluster count by BIC-scored 2-splits and
//! finishes with a global refinement pass. Distances are squared Euclidean
//! on the raw vectors.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_LLOYD_ITERS: usize = 200;
const VARIANCE_FLOOR: f64 = 1e-12;

/// Partition of point indices into dense, non-empty clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    /// `assignments[i]` is the cluster id of point `i`.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterSet {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Point indices assigned to `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_clusters()];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }

    /// Every point in exactly one cluster, every cluster non-empty,
    /// cluster ids dense.
    pub fn check_partition(&self) -> Result<()> {
        if self.centroids.is_empty() {
            return Err(Error::Contract("cluster set has no clusters".into()));
        }
        let k = self.n_clusters();
        let mut sizes = vec![0usize; k];
        for (i, &c) in self.assignments.iter().enumerate() {
            if c >= k {
                return Err(Error::Contract(format!("point {i} assigned to undefined cluster {c}")));
            }
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Contract(format!("cluster {empty} is empty")));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = match points.first() {
        Some(p) => p.len(),
        None => return Err(Error::Contract("no points to cluster".into())),
    };
    for p in points {
        if p.len() != dim {
            return Err(Error::Dimension { expected: dim, got: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("points must be finite".into()));
        }
    }
    Ok(dim)
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the chosen set.
fn kmeanspp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in min_d.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, centroids.last().unwrap());
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    centroids
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn inertia(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

/// Lloyd iterations from the given centroids until the assignment fixpoint
/// or [`MAX_LLOYD_ITERS`]. Empty clusters are repaired by reseeding them on
/// the point currently farthest from its own centroid. Returns the inertia
/// after each assignment step.
fn run_lloyd(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    dim: usize,
) -> (ClusterSet, Vec<f64>) {
    let k = centroids.len();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();

    for _ in 0..MAX_LLOYD_ITERS {
        let new_assignments: Vec<usize> =
            points.iter().map(|p| nearest_centroid(p, &centroids)).collect();

        let mut sizes = vec![0usize; k];
        for &c in &new_assignments {
            sizes[c] += 1;
        }
        let mut repaired = new_assignments;
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            // reseed on the point farthest from its own centroid, skipping
            // points that are the sole member of their cluster
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| sizes[repaired[*i]] > 1)
                .max_by(|(i, p), (j, q)| {
                    let di = sq_dist(p, &centroids[repaired[*i]]);
                    let dj = sq_dist(q, &centroids[repaired[*j]]);
                    di.partial_cmp(&dj).unwrap().then(j.cmp(i))
                })
                .map(|(i, _)| i);
            if let Some(i) = far {
                sizes[repaired[i]] -= 1;
                repaired[i] = empty;
                sizes[empty] = 1;
                centroids[empty] = points[i].clone();
            }
        }

        let converged = repaired == assignments;
        assignments = repaired;

        // means of assigned points
        let mut next = vec![vec![0.0; dim]; k];
        for (p, &c) in points.iter().zip(&assignments) {
            for (acc, x) in next[c].iter_mut().zip(p) {
                *acc += x;
            }
        }
        for (c, centroid) in next.iter_mut().enumerate() {
            if sizes[c] > 0 {
                for x in centroid.iter_mut() {
                    *x /= sizes[c] as f64;
                }
            } else {
                *centroid = centroids[c].clone();
            }
        }
        centroids = next;
        trace.push(inertia(points, &assignments, &centroids));
        if converged {
            break;
        }
    }
    (ClusterSet { assignments, centroids }, trace)
}

/// k-means++ seeded Lloyd clustering into exactly `k` non-empty clusters.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterSet> {
    Ok(kmeans_traced(points, k, seed)?.0)
}

/// As [`kmeans`], additionally returning the per-iteration inertia trace.
pub fn kmeans_traced(points: &[Vec<f64>], k: usize, seed: u64) -> Result<(ClusterSet, Vec<f64>)> {
    let dim = check_points(points)?;
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::Contract(format!(
            "k = {k} exceeds the number of points {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeanspp_init(points, k, &mut rng);
    let (cs, trace) = run_lloyd(points, init, dim);
    cs.check_partition()?;
    Ok((cs, trace))
}

/// Spherical-Gaussian shared-variance BIC, higher is better:
/// log-likelihood under the MLE variance minus `(p/2) ln n` with
/// `p = k (d+1) + 1` free parameters. Degenerate zero-variance data is
/// handled by a variance floor.
pub fn bic_score(points: &[Vec<f64>], cs: &ClusterSet) -> Result<f64> {
    let dim = check_points(points)?;
    if cs.assignments.len() != points.len() {
        return Err(Error::Dimension { expected: points.len(), got: cs.assignments.len() });
    }
    cs.check_partition()?;
    for c in &cs.centroids {
        if c.len() != dim {
            return Err(Error::Dimension { expected: dim, got: c.len() });
        }
    }

    let n = points.len() as f64;
    let d = dim as f64;
    let k = cs.n_clusters();
    let sse = inertia(points, &cs.assignments, &cs.centroids);
    let variance = (sse / (n * d)).max(VARIANCE_FLOOR);

    let sizes = cs.sizes();
    let mut log_lik = 0.0;
    for &size in &sizes {
        let r = size as f64;
        log_lik += r * (r / n).ln();
    }
    log_lik += -(n * d / 2.0) * (2.0 * std::f64::consts::PI * variance).ln();
    log_lik += -sse / (2.0 * variance);

    let p = (k * (dim + 1) + 1) as f64;
    Ok(log_lik - (p / 2.0) * n.ln())
}

fn derive_seed(seed: u64, round: u64, cluster: u64) -> u64 {
    // splitmix-style stream derivation
    let mut x = seed ^ round.wrapping_mul(0x9e3779b97f4a7c15) ^ cluster.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// X-means: start at `k_min`, repeatedly 2-split clusters whose local BIC
/// improves, stop at no improvement or `k_max`, then run one global
/// refinement pass from the surviving centroids.
pub fn xmeans(points: &[Vec<f64>], k_min: usize, k_max: usize, seed: u64) -> Result<ClusterSet> {
    let dim = check_points(points)?;
    if k_min == 0 || k_min > k_max {
        return Err(Error::Contract(format!("invalid cluster bounds [{k_min}, {k_max}]")));
    }
    if k_max > points.len() {
        return Err(Error::Contract(format!(
            "k_max = {k_max} exceeds the number of points {}",
            points.len()
        )));
    }

    let mut current = kmeans(points, k_min, seed)?;
    for round in 0.. {
        let k = current.n_clusters();
        if k >= k_max {
            break;
        }
        let mut next_centroids: Vec<Vec<f64>> = Vec::new();
        let mut improved = false;

        for cluster in 0..k {
            let member_idx = current.members(cluster);
            // accepting this split raises the projected cluster count by one
            let projected_if_split = next_centroids.len() + (k - cluster) + 1;
            if member_idx.len() < 2 || projected_if_split > k_max {
                next_centroids.push(current.centroids[cluster].clone());
                continue;
            }
            let members: Vec<Vec<f64>> = member_idx.iter().map(|&i| points[i].clone()).collect();
            let parent = ClusterSet {
                assignments: vec![0; members.len()],
                centroids: vec![current.centroids[cluster].clone()],
            };
            let parent_bic = bic_score(&members, &parent)?;
            let split = kmeans(&members, 2, derive_seed(seed, round, cluster as u64))?;
            let split_bic = bic_score(&members, &split)?;
            if split_bic > parent_bic {
                next_centroids.extend(split.centroids);
                improved = true;
            } else {
                next_centroids.push(current.centroids[cluster].clone());
            }
        }

        if !improved {
            break;
        }
        let (refined, _) = run_lloyd(points, next_centroids, dim);
        refined.check_partition()?;
        current = refined;
    }

    // global refinement from the final centroid set
    let (refined, _) = run_lloyd(points, current.centroids, dim);
    refined.check_partition()?;
    Ok(refined)
}
