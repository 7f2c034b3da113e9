use super::plane;
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryConfig {
    /// Edge threshold for the dbe metrics, in meters.
    pub dbe_threshold: f64,
    /// Distances beyond this are clamped, in pixels.
    pub dbe_cap: f64,
    pub f1_thresholds: [f64; 3],
    /// A predicted edge pixel matches if a GT edge lies within this distance.
    pub f1_tolerance: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            dbe_threshold: 0.5,
            dbe_cap: 10.0,
            f1_thresholds: [0.25, 0.5, 1.0],
            f1_tolerance: 1.0,
        }
    }
}

/// Binary edge map, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.edges.iter().any(|&e| e)
    }
}

/// A pixel is an edge when its largest absolute depth difference to a
/// 4-neighbor exceeds `threshold`.
pub fn extract_depth_edges(depth: &Tensor, threshold: f64) -> Result<EdgeMap> {
    let (h, w, d) = plane(depth)?;
    let mut edges = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = d[y * w + x];
            let mut m: f64 = 0.0;
            if x > 0 {
                m = m.max((v - d[y * w + x - 1]).abs());
            }
            if x + 1 < w {
                m = m.max((v - d[y * w + x + 1]).abs());
            }
            if y > 0 {
                m = m.max((v - d[(y - 1) * w + x]).abs());
            }
            if y + 1 < h {
                m = m.max((v - d[(y + 1) * w + x]).abs());
            }
            edges[y * w + x] = m > threshold;
        }
    }
    Ok(EdgeMap {
        height: h,
        width: w,
        edges,
    })
}

/// Exact squared Euclidean distance transform of a 1-D sampled function.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        if f[v[0]].is_infinite() {
            v[0] = q;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is −∞, so this never steps below the first parabola.
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if f[v[0]].is_infinite() {
        out.fill(f64::INFINITY);
        return;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest edge pixel; infinite
/// when the map has no edges.
pub fn distance_transform(edges: &EdgeMap) -> Vec<f64> {
    let (h, w) = (edges.height, edges.width);
    let n = h.max(w);
    let mut grid: Vec<f64> = edges.edges.iter().map(|&e| if e { 0.0 } else { f64::INFINITY }).collect();
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid.iter_mut().for_each(|d| *d = d.sqrt());
    grid
}

/// Sums for the boundary metrics; merge by addition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundaryStats {
    /// Predicted edge pixels at the dbe threshold, and their capped distances to GT edges.
    pub pred_edges: u64,
    pub sum_pred_dist: f64,
    pub gt_edges: u64,
    pub sum_gt_dist: f64,
    /// Per F1 threshold: predicted edges, matched predicted edges, GT edges, matched GT edges.
    pub f1_counts: [[u64; 4]; 3],
}

impl BoundaryStats {
    pub fn merge(&mut self, o: &BoundaryStats) {
        self.pred_edges += o.pred_edges;
        self.sum_pred_dist += o.sum_pred_dist;
        self.gt_edges += o.gt_edges;
        self.sum_gt_dist += o.sum_gt_dist;
        for (a, b) in self.f1_counts.iter_mut().zip(&o.f1_counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn directed(from: &EdgeMap, to: &EdgeMap) -> Vec<f64> {
    let dt = distance_transform(to);
    from.edges
        .iter()
        .zip(dt)
        .filter(|(&e, _)| e)
        .map(|(_, d)| d)
        .collect()
}

pub fn boundary_stats(pred: &Tensor, gt: &Tensor, cfg: &BoundaryConfig) -> Result<BoundaryStats> {
    let (ps, gs) = (pred.shape(), gt.shape());
    if ps != gs {
        return Err(dim_err!("prediction {:?} vs ground truth {:?}", ps, gs));
    }
    let mut s = BoundaryStats::default();
    let pe = extract_depth_edges(pred, cfg.dbe_threshold)?;
    let ge = extract_depth_edges(gt, cfg.dbe_threshold)?;
    let pd = directed(&pe, &ge);
    let gd = directed(&ge, &pe);
    s.pred_edges = pd.len() as u64;
    s.sum_pred_dist = pd.iter().map(|d| d.min(cfg.dbe_cap)).sum();
    s.gt_edges = gd.len() as u64;
    s.sum_gt_dist = gd.iter().map(|d| d.min(cfg.dbe_cap)).sum();
    for (counts, &t) in s.f1_counts.iter_mut().zip(&cfg.f1_thresholds) {
        let pe = extract_depth_edges(pred, t)?;
        let ge = extract_depth_edges(gt, t)?;
        let within = |d: &Vec<f64>| d.iter().filter(|&&d| d <= cfg.f1_tolerance).count() as u64;
        let pd = directed(&pe, &ge);
        let gd = directed(&ge, &pe);
        *counts = [pd.len() as u64, within(&pd), gd.len() as u64, within(&gd)];
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryMetrics {
    pub dbe_acc: f64,
    pub dbe_comp: f64,
    /// Fractions in [0,1], in threshold order.
    pub f1: [f64; 3],
}

/// Mean over an edge set; an empty set scores the cap unless both sets are empty.
fn mean_or_cap(sum: f64, n: u64, other: u64, cap: f64) -> f64 {
    match (n, other) {
        (0, 0) => 0.0,
        (0, _) => cap,
        _ => sum / n as f64,
    }
}

impl BoundaryStats {
    pub fn finish(&self, cfg: &BoundaryConfig) -> BoundaryMetrics {
        let f1 = self.f1_counts.map(|[np, mp, ng, mg]| match (np, ng) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => {
                let p = mp as f64 / np as f64;
                let r = mg as f64 / ng as f64;
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            }
        });
        BoundaryMetrics {
            dbe_acc: mean_or_cap(self.sum_pred_dist, self.pred_edges, self.gt_edges, cfg.dbe_cap),
            dbe_comp: mean_or_cap(self.sum_gt_dist, self.gt_edges, self.pred_edges, cfg.dbe_cap),
            f1,
        }
    }
}

pub fn boundary_metrics(pred: &Tensor, gt: &Tensor, cfg: &BoundaryConfig) -> Result<BoundaryMetrics> {
    Ok(boundary_stats(pred, gt, cfg)?.finish(cfg))
}
