//! DBSCAN over a precomputed distance function.
//!
//! Neighbourhoods are closed balls (`d <= eps`) that include the point
//! itself, so `min_samples = 1` makes every point a core point and the
//! clusters become the connected components of the eps-graph.

use std::collections::VecDeque;

/// Cluster assignment per point: `Some(cluster)` or `None` for noise.
pub type Labels = Vec<Option<usize>>;

/// `1 - cos(u, v)`. A zero vector is at distance 1 from everything except
/// another zero vector.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (*a as f64, *b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return if nu == nv { 0.0 } else { 1.0 };
    }
    let d = 1.0 - (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0);
    // parallel vectors can land a few ulps above zero
    if d < 1e-12 {
        0.0
    } else {
        d
    }
}

/// Classic DBSCAN. Points are visited in index order; clusters are numbered
/// in order of discovery. A border point reachable from several clusters
/// joins the first one that reaches it.
pub fn dbscan<F>(n: usize, eps: f64, min_samples: usize, dist: F) -> Labels
where
    F: Fn(usize, usize) -> f64,
{
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| i == j || dist(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels: Labels = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start].is_some() || !core[start] {
            continue;
        }
        let id = next;
        next += 1;
        labels[start] = Some(id);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbours[p] {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
    }
    labels
}

/// DBSCAN with cosine distance over the rows of `points`.
pub fn dbscan_cosine(points: &[Vec<f32>], eps: f64, min_samples: usize) -> Labels {
    dbscan(points.len(), eps, min_samples, |i, j| {
        cosine_distance(&points[i], &points[j])
    })
}
