//! Depth, boundary and surface-smoothness metrics, the aggregate
//! indicators and the six-axis radar summary.
//!
//! Every metric is accumulated as sufficient statistics (counts and sums)
//! per sample and merged by addition, so a dataset score does not depend on
//! how samples were grouped, provided they are merged in a fixed order.

mod boundary;
mod depth;
mod normals;
pub mod radar;

pub use boundary::{
    boundary_metrics, boundary_stats, distance_transform, extract_depth_edges, BoundaryConfig, BoundaryMetrics,
    BoundaryStats, EdgeMap,
};
pub use depth::{depth_stats, direct_depth_metrics, DepthMetrics, DepthStats, DELTA_THRESHOLDS, MIN_PRED};
pub use normals::{
    angular_error_deg, normals_from_depth, smoothness_metrics, smoothness_stats, Intrinsics, SmoothnessMetrics,
    SmoothnessStats, ANGLE_THRESHOLDS,
};
pub use radar::{radar, radar_csv, RadarEntry};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// A single-channel map as `(height, width, data)`; accepts `[1,H,W]` or `[H,W]`.
pub(crate) fn plane(t: &Tensor) -> Result<(usize, usize, &[f64])> {
    match t.shape() {
        &[1, h, w] | &[h, w] => Ok((h, w, t.data())),
        other => Err(dim_err!("expected a single-channel map, got shape {:?}", other)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub max_depth: f64,
    pub boundary: BoundaryConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_depth: 10.0,
            boundary: BoundaryConfig::default(),
        }
    }
}

/// Everything needed to score one or more samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleStats {
    pub samples: u64,
    pub depth: DepthStats,
    pub boundary: BoundaryStats,
    pub smoothness: SmoothnessStats,
}

impl SampleStats {
    pub fn merge(&mut self, o: &SampleStats) {
        self.samples += o.samples;
        self.depth.merge(&o.depth);
        self.boundary.merge(&o.boundary);
        self.smoothness.merge(&o.smoothness);
    }

    pub fn finish(&self, cfg: &EvalConfig) -> Result<MetricsReport> {
        let d = self.depth.finish()?;
        let b = self.boundary.finish(&cfg.boundary);
        let s = self.smoothness.finish()?;
        Ok(MetricsReport {
            rmse: d.rmse,
            rmsle: d.rmsle,
            abs_rel: d.abs_rel,
            sq_rel: d.sq_rel,
            delta: d.delta,
            dbe_acc: b.dbe_acc,
            dbe_comp: b.dbe_comp,
            f1: b.f1,
            alpha: s.alpha,
            rmse_deg: s.rmse_deg,
        })
    }
}

/// Scores one predicted depth map. Normals on both sides come from the
/// depth maps through [`normals_from_depth`]; smoothness covers pixels valid
/// on both sides and inside the depth mask.
pub fn sample_stats(pred: &Tensor, gt: &Tensor, intrinsics: &Intrinsics, cfg: &EvalConfig) -> Result<SampleStats> {
    let depth = depth_stats(pred, gt, cfg.max_depth)?;
    let boundary = boundary_stats(pred, gt, &cfg.boundary)?;
    let (pn, pv) = normals_from_depth(pred, intrinsics)?;
    let (gn, gv) = normals_from_depth(gt, intrinsics)?;
    let (_, _, g) = plane(gt)?;
    let valid: Vec<bool> = pv
        .iter()
        .zip(&gv)
        .zip(g)
        .map(|((&a, &b), &z)| a && b && z > 0.0 && z <= cfg.max_depth)
        .collect();
    let smoothness = smoothness_stats(&pn, &gn, &valid)?;
    Ok(SampleStats {
        samples: 1,
        depth,
        boundary,
        smoothness,
    })
}

/// Dataset-level scores. Percentages for δ and α, fractions for F1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub rmsle: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    /// At thresholds 1.05, 1.1, 1.25, 1.25², 1.25³.
    pub delta: [f64; 5],
    pub dbe_acc: f64,
    pub dbe_comp: f64,
    /// At edge thresholds 0.25, 0.5, 1.0 m.
    pub f1: [f64; 3],
    /// At 11.25°, 22.5°, 30°.
    pub alpha: [f64; 3],
    pub rmse_deg: f64,
}

/// Aggregate indicators; `f64::INFINITY` marks a perfect score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Indicators {
    pub i_d: f64,
    pub i_b: f64,
    pub i_s: f64,
}

impl Indicators {
    /// Names of the indicators that hit the infinite sentinel.
    pub fn flagged(&self) -> Vec<&'static str> {
        [("i_d", self.i_d), ("i_b", self.i_b), ("i_s", self.i_s)]
            .into_iter()
            .filter(|(_, v)| v.is_infinite())
            .map(|(n, _)| n)
            .collect()
    }
}

fn reciprocal(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        1.0 / x
    }
}

pub const REPORT_KEYS: [&str; 18] = [
    "rmse",
    "rmsle",
    "absrel",
    "sqrel",
    "delta_1.05",
    "delta_1.1",
    "delta_1.25",
    "delta_1.25^2",
    "delta_1.25^3",
    "dbe_acc",
    "dbe_comp",
    "f1_0.25",
    "f1_0.5",
    "f1_1",
    "alpha_11.25",
    "alpha_22.5",
    "alpha_30",
    "rmse_deg",
];

impl MetricsReport {
    pub fn indicators(&self) -> Indicators {
        let f1 = self.f1.iter().sum::<f64>() / 3.0;
        let alpha = self.alpha.iter().sum::<f64>() / 300.0;
        Indicators {
            i_d: reciprocal((1.0 - self.delta[2] / 100.0) * self.rmse),
            i_b: reciprocal((1.0 - f1) * self.dbe_acc),
            i_s: reciprocal((1.0 - alpha) * self.rmse_deg),
        }
    }

    /// Values in [`REPORT_KEYS`] order.
    pub fn values(&self) -> [f64; 18] {
        let d = self.delta;
        [
            self.rmse,
            self.rmsle,
            self.abs_rel,
            self.sq_rel,
            d[0],
            d[1],
            d[2],
            d[3],
            d[4],
            self.dbe_acc,
            self.dbe_comp,
            self.f1[0],
            self.f1[1],
            self.f1[2],
            self.alpha[0],
            self.alpha[1],
            self.alpha[2],
            self.rmse_deg,
        ]
    }

    pub fn from_values(v: [f64; 18]) -> Self {
        Self {
            rmse: v[0],
            rmsle: v[1],
            abs_rel: v[2],
            sq_rel: v[3],
            delta: [v[4], v[5], v[6], v[7], v[8]],
            dbe_acc: v[9],
            dbe_comp: v[10],
            f1: [v[11], v[12], v[13]],
            alpha: [v[14], v[15], v[16]],
            rmse_deg: v[17],
        }
    }

    /// Flat `key=value` lines, followed by the indicators.
    pub fn to_key_values(&self) -> String {
        let ind = self.indicators();
        let mut s: String = REPORT_KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        for (k, v) in [("i_d", ind.i_d), ("i_b", ind.i_b), ("i_s", ind.i_s)] {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Parses `key=value` lines; indicator and unknown keys are ignored.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut v = [f64::NAN; 18];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("malformed report line `{line}`")))?;
            if let Some(i) = REPORT_KEYS.iter().position(|&r| r == k.trim()) {
                v[i] = val
                    .trim()
                    .parse()
                    .map_err(|_| Error::Configuration(format!("bad value for {k}: `{val}`")))?;
            }
        }
        if let Some(i) = v.iter().position(|x| x.is_nan()) {
            return Err(Error::Configuration(format!("report is missing `{}`", REPORT_KEYS[i])));
        }
        Ok(Self::from_values(v))
    }

    pub fn csv_header() -> String {
        format!("model,{},i_d,i_b,i_s", REPORT_KEYS.join(","))
    }

    pub fn csv_row(&self, model: &str) -> String {
        let ind = self.indicators();
        let vals: Vec<String> = self
            .values()
            .iter()
            .chain(&[ind.i_d, ind.i_b, ind.i_s])
            .map(|v| v.to_string())
            .collect();
        format!("{model},{}", vals.join(","))
    }

    /// Reads rows written by [`MetricsReport::csv_header`] / [`MetricsReport::csv_row`]
    /// (or any CSV whose header names at least the report keys).
    pub fn from_csv(text: &str) -> Result<Vec<(String, Self)>> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Configuration("empty CSV".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let col = |k: &str| {
            header
                .iter()
                .position(|h| *h == k)
                .ok_or_else(|| Error::Configuration(format!("CSV lacks column `{k}`")))
        };
        let model_col = col("model")?;
        let cols: Vec<usize> = REPORT_KEYS.iter().map(|k| col(k)).collect::<Result<_>>()?;
        let mut out = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != header.len() {
                return Err(Error::Configuration(format!("CSV row has {} fields, header {}", f.len(), header.len())));
            }
            let mut v = [0.0; 18];
            for (slot, &c) in v.iter_mut().zip(&cols) {
                *slot = f[c]
                    .parse()
                    .map_err(|_| Error::Configuration(format!("bad number `{}` in CSV", f[c])))?;
            }
            out.push((f[model_col].to_owned(), Self::from_values(v)));
        }
        Ok(out)
    }

    /// Checks the documented value ranges and the δ ordering.
    pub fn check_invariants(&self) -> Result<()> {
        let pct = self.delta.iter().chain(&self.alpha).all(|v| (0.0..=100.0).contains(v));
        let frac = self.f1.iter().all(|v| (0.0..=1.0).contains(v));
        let errs = [self.rmse, self.rmsle, self.abs_rel, self.sq_rel, self.dbe_acc, self.dbe_comp, self.rmse_deg]
            .iter()
            .all(|&v| v >= 0.0);
        let mono = self.delta.windows(2).all(|w| w[0] <= w[1]);
        if pct && frac && errs && mono {
            Ok(())
        } else {
            Err(Error::Evaluation(format!("report violates metric invariants: {self:?}")))
        }
    }
}
