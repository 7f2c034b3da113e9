use super::plane;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Ratio thresholds, ascending.
pub const DELTA_THRESHOLDS: [f64; 5] = [1.05, 1.1, 1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

pub const MIN_PRED: f64 = 1e-6;

/// Sums over masked pixels; merge by addition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthStats {
    pub count: u64,
    pub sum_sq: f64,
    pub sum_sq_log: f64,
    pub sum_abs_rel: f64,
    pub sum_sq_rel: f64,
    pub delta_hits: [u64; 5],
    /// Masked pixels whose prediction was clamped up to [`MIN_PRED`].
    pub clamped: u64,
}

impl DepthStats {
    pub fn merge(&mut self, o: &DepthStats) {
        self.count += o.count;
        self.sum_sq += o.sum_sq;
        self.sum_sq_log += o.sum_sq_log;
        self.sum_abs_rel += o.sum_abs_rel;
        self.sum_sq_rel += o.sum_sq_rel;
        for (a, b) in self.delta_hits.iter_mut().zip(o.delta_hits) {
            *a += b;
        }
        self.clamped += o.clamped;
    }
}

/// Accumulates pixels with `0 < gt <= max_depth`.
pub fn depth_stats(pred: &Tensor, gt: &Tensor, max_depth: f64) -> Result<DepthStats> {
    let (h, w, p) = plane(pred)?;
    let (gh, gw, g) = plane(gt)?;
    if (h, w) != (gh, gw) {
        return Err(dim_err!("prediction {h}x{w} vs ground truth {gh}x{gw}"));
    }
    let mut s = DepthStats::default();
    for (&pv, &gv) in p.iter().zip(g) {
        if !(gv > 0.0 && gv <= max_depth) {
            continue;
        }
        let pv = if pv > 0.0 {
            pv
        } else {
            s.clamped += 1;
            MIN_PRED
        };
        let d = pv - gv;
        s.count += 1;
        s.sum_sq += d * d;
        let dl = pv.ln() - gv.ln();
        s.sum_sq_log += dl * dl;
        s.sum_abs_rel += d.abs() / gv;
        s.sum_sq_rel += d * d / gv;
        let ratio = (pv / gv).max(gv / pv);
        for (hit, t) in s.delta_hits.iter_mut().zip(DELTA_THRESHOLDS) {
            *hit += u64::from(ratio < t);
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub rmsle: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    /// Percentages, in [`DELTA_THRESHOLDS`] order.
    pub delta: [f64; 5],
}

impl DepthStats {
    pub fn finish(&self) -> Result<DepthMetrics> {
        if self.count == 0 {
            return Err(Error::Evaluation("no pixels inside the depth evaluation mask".into()));
        }
        let n = self.count as f64;
        Ok(DepthMetrics {
            rmse: (self.sum_sq / n).sqrt(),
            rmsle: (self.sum_sq_log / n).sqrt(),
            abs_rel: self.sum_abs_rel / n,
            sq_rel: self.sum_sq_rel / n,
            delta: self.delta_hits.map(|c| 100.0 * c as f64 / n),
        })
    }
}

pub fn direct_depth_metrics(pred: &Tensor, gt: &Tensor, max_depth: f64) -> Result<DepthMetrics> {
    depth_stats(pred, gt, max_depth)?.finish()
}
