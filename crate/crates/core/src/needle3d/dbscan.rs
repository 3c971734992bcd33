//! Density clustering over a uniform grid hash; keeps the largest cluster.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::Needle3dError;
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 2.0, min_pts: 3 }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> bool {
        self.eps > 0.0 && self.eps.is_finite() && self.min_pts >= 1
    }
}

/// Cluster label per point (`None` = noise). Clusters are numbered in order
/// of their lowest-index core point; a border point joins the first cluster
/// that reaches it.
pub fn dbscan_labels(cloud: &[Vec3], params: &DbscanParams) -> Vec<Option<usize>> {
    let eps = params.eps;
    let key = |p: &Vec3| {
        (
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let neighbours = |i: usize| {
        let (kx, ky, kz) = key(&cloud[i]);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                        out.extend(cell.iter().copied().filter(|&j| (cloud[j] - cloud[i]).norm() <= eps));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };
    let nbrs: Vec<Vec<usize>> = (0..cloud.len()).map(neighbours).collect();
    let core: Vec<bool> = nbrs.iter().map(|n| n.len() >= params.min_pts).collect();
    let mut labels = vec![None; cloud.len()];
    let mut next = 0;
    for start in 0..cloud.len() {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &nbrs[i] {
                if labels[j].is_none() {
                    labels[j] = Some(next);
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

/// Indices of the largest cluster (ties go to the lower label), input order.
pub fn dbscan_largest(cloud: &[Vec3], params: &DbscanParams) -> Result<Vec<usize>, Needle3dError> {
    let labels = dbscan_labels(cloud, params);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    if n_clusters == 0 {
        return Err(Needle3dError::EmptyResult);
    }
    let mut sizes = vec![0usize; n_clusters];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    let best = (0..n_clusters).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
    Ok((0..cloud.len()).filter(|&i| labels[i] == Some(best)).collect())
}

pub fn dbscan_filter(cloud: &[Vec3], params: &DbscanParams) -> Result<Vec<Vec3>, Needle3dError> {
    Ok(dbscan_largest(cloud, params)?.into_iter().map(|i| cloud[i]).collect())
}
