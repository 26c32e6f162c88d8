//! Grid-indexed DBSCAN over low-dimensional points.
//!
//! Neighborhoods are closed balls (`dist <= eps`) that include the query
//! point, so `min_pts` counts the point itself. Points are scanned in index
//! order; a border point reachable from several clusters belongs to the
//! cluster created first, i.e. the one whose lowest-index core point is
//! smallest. Cluster ids follow creation order.

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    /// `None` marks noise.
    pub labels: Vec<Option<u32>>,
    pub n_clusters: usize,
}

impl Clustering {
    /// Point indices per cluster, in cluster-id order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c as usize].push(i);
            }
        }
        out
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

type Cell<const D: usize> = [i64; D];

/// Uniform hash grid with cell edge `eps`.
struct GridIndex<'a, const D: usize> {
    points: &'a [[f64; D]],
    eps: f64,
    eps2: f64,
    cells: HashMap<Cell<D>, Vec<u32>>,
}

impl<'a, const D: usize> GridIndex<'a, D> {
    fn new(points: &'a [[f64; D]], eps: f64) -> Self {
        let mut cells: HashMap<Cell<D>, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, eps)).or_default().push(i as u32);
        }
        Self {
            points,
            eps,
            eps2: eps * eps,
            cells,
        }
    }

    fn region(&self, i: usize, out: &mut Vec<u32>) {
        out.clear();
        let p = &self.points[i];
        let base = cell_of(p, self.eps);
        let n_offsets = 3usize.pow(D as u32);
        for code in 0..n_offsets {
            let mut c = base;
            let mut rem = code;
            for axis in c.iter_mut() {
                *axis += (rem % 3) as i64 - 1;
                rem /= 3;
            }
            if let Some(members) = self.cells.get(&c) {
                for &j in members {
                    if dist2(p, &self.points[j as usize]) <= self.eps2 {
                        out.push(j);
                    }
                }
            }
        }
    }
}

#[inline]
fn cell_of<const D: usize>(p: &[f64; D], eps: f64) -> Cell<D> {
    let mut c = [0i64; D];
    for (ci, x) in c.iter_mut().zip(p) {
        *ci = (x / eps).floor() as i64;
    }
    c
}

#[inline]
fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const UNVISITED: i64 = -2;
const NOISE: i64 = -1;

pub fn dbscan<const D: usize>(points: &[[f64; D]], eps: f64, min_pts: usize) -> Clustering {
    assert!(eps > 0.0 && eps.is_finite(), "eps must be positive");
    let n = points.len();
    let index = GridIndex::new(points, eps);
    let mut labels = vec![UNVISITED; n];
    let mut n_clusters = 0i64;
    let mut region = Vec::new();
    let mut queue: Vec<u32> = Vec::new();

    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        index.region(i, &mut region);
        if region.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = n_clusters;
        n_clusters += 1;
        labels[i] = cluster;
        queue.clear();
        queue.extend_from_slice(&region);
        while let Some(j) = queue.pop() {
            let j = j as usize;
            match labels[j] {
                NOISE => labels[j] = cluster,
                UNVISITED => {
                    labels[j] = cluster;
                    index.region(j, &mut region);
                    if region.len() >= min_pts {
                        queue.extend(region.iter().filter(|&&k| {
                            let l = labels[k as usize];
                            l == UNVISITED || l == NOISE
                        }));
                    }
                }
                _ => {}
            }
        }
    }

    Clustering {
        labels: labels
            .into_iter()
            .map(|l| (l >= 0).then_some(l as u32))
            .collect(),
        n_clusters: n_clusters as usize,
    }
}
