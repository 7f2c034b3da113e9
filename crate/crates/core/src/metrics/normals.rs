use super::plane;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Pinhole intrinsics in pixels. Pixel `(x, y)` looks along
/// `((x + 0.5 − cx) / fx, (y + 0.5 − cy) / fy, 1)`, with y pointing down
/// and the camera looking along +z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Centered principal point and the given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        }
    }

    /// Ray direction through the center of pixel `(x, y)` with unit z.
    pub fn ray(&self, x: usize, y: usize) -> [f64; 3] {
        [
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        ]
    }

    /// Camera-frame point at z-depth `z` through pixel `(x, y)`.
    pub fn unproject(&self, x: usize, y: usize, z: f64) -> [f64; 3] {
        let r = self.ray(x, y);
        [r[0] * z, r[1] * z, z]
    }
}

/// Unit normals `[3, H, W]` and a validity mask. Border pixels, pixels with
/// non-positive depth in their neighborhood and degenerate cross products are
/// invalid (normal stored as zero). Normals face the camera.
pub fn normals_from_depth(depth: &Tensor, k: &Intrinsics) -> Result<(Tensor, Vec<bool>)> {
    let (h, w, d) = plane(depth)?;
    let mut n = Tensor::zeros([3, h, w]);
    let mut valid = vec![false; h * w];
    let plane_len = h * w;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let z = |xx: usize, yy: usize| d[yy * w + xx];
            if [z(x - 1, y), z(x + 1, y), z(x, y - 1), z(x, y + 1)].iter().any(|&v| !(v > 0.0)) {
                continue;
            }
            let l = k.unproject(x - 1, y, z(x - 1, y));
            let r = k.unproject(x + 1, y, z(x + 1, y));
            let u = k.unproject(x, y - 1, z(x, y - 1));
            let b = k.unproject(x, y + 1, z(x, y + 1));
            let dx = [r[0] - l[0], r[1] - l[1], r[2] - l[2]];
            let dy = [b[0] - u[0], b[1] - u[1], b[2] - u[2]];
            let mut c = [
                dx[1] * dy[2] - dx[2] * dy[1],
                dx[2] * dy[0] - dx[0] * dy[2],
                dx[0] * dy[1] - dx[1] * dy[0],
            ];
            let len = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            if !(len > 1e-300) || !len.is_finite() {
                continue;
            }
            let p = k.unproject(x, y, d[y * w + x]);
            let sign = if c[0] * p[0] + c[1] * p[1] + c[2] * p[2] > 0.0 { -1.0 } else { 1.0 };
            c.iter_mut().for_each(|v| *v *= sign / len);
            let i = y * w + x;
            for (ch, v) in c.iter().enumerate() {
                n.data_mut()[ch * plane_len + i] = *v;
            }
            valid[i] = true;
        }
    }
    Ok((n, valid))
}

/// Sums over valid pixels; merge by addition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SmoothnessStats {
    pub count: u64,
    pub hits: [u64; 3],
    pub sum_sq_deg: f64,
}

pub const ANGLE_THRESHOLDS: [f64; 3] = [11.25, 22.5, 30.0];

impl SmoothnessStats {
    pub fn merge(&mut self, o: &SmoothnessStats) {
        self.count += o.count;
        for (a, b) in self.hits.iter_mut().zip(o.hits) {
            *a += b;
        }
        self.sum_sq_deg += o.sum_sq_deg;
    }
}

/// Angle in degrees between unit vectors, as `atan2(|a×b|, a·b)`.
pub fn angular_error_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let c = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cross = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    cross.atan2(dot).to_degrees()
}

pub fn smoothness_stats(pred: &Tensor, gt: &Tensor, valid: &[bool]) -> Result<SmoothnessStats> {
    let (c, h, w) = pred.dims3()?;
    if c != 3 || pred.shape() != gt.shape() || valid.len() != h * w {
        return Err(dim_err!(
            "normal maps {:?} / {:?} with mask of {} pixels",
            pred.shape(),
            gt.shape(),
            valid.len()
        ));
    }
    let p = h * w;
    let at = |t: &Tensor, i: usize| [t.data()[i], t.data()[p + i], t.data()[2 * p + i]];
    let mut s = SmoothnessStats::default();
    for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        let theta = angular_error_deg(at(pred, i), at(gt, i));
        s.count += 1;
        for (hit, t) in s.hits.iter_mut().zip(ANGLE_THRESHOLDS) {
            *hit += u64::from(theta < t);
        }
        s.sum_sq_deg += theta * theta;
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessMetrics {
    /// Percentages, in [`ANGLE_THRESHOLDS`] order.
    pub alpha: [f64; 3],
    pub rmse_deg: f64,
}

impl SmoothnessStats {
    pub fn finish(&self) -> Result<SmoothnessMetrics> {
        if self.count == 0 {
            return Err(Error::Evaluation("no valid normal pixels".into()));
        }
        let n = self.count as f64;
        Ok(SmoothnessMetrics {
            alpha: self.hits.map(|c| 100.0 * c as f64 / n),
            rmse_deg: (self.sum_sq_deg / n).sqrt(),
        })
    }
}

pub fn smoothness_metrics(pred: &Tensor, gt: &Tensor, valid: &[bool]) -> Result<SmoothnessMetrics> {
    smoothness_stats(pred, gt, valid)?.finish()
}
