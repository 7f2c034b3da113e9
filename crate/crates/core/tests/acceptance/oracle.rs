//! Straight-line reference implementations of every reported metric, kept
//! apart from the library code. Everything is pooled over all pixels of all
//! pairs, then reduced once.

pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

pub struct Map {
    pub w: usize,
    pub h: usize,
    pub z: Vec<f64>,
}

impl Map {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.z[y * self.w + x]
    }
}

const MAX_DEPTH: f64 = 10.0;
const DBE_THRESHOLD: f64 = 0.5;
const CAP: f64 = 10.0;
const F1_THRESHOLDS: [f64; 3] = [0.25, 0.5, 1.0];
const RATIOS: [f64; 5] = [1.05, 1.1, 1.25, 1.5625, 1.953125];
const ANGLES: [f64; 3] = [11.25, 22.5, 30.0];

fn edges(m: &Map, t: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..m.h {
        for x in 0..m.w {
            let v = m.at(x, y);
            let mut hit = false;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= m.w as i64 || ny >= m.h as i64 {
                    continue;
                }
                if (v - m.at(nx as usize, ny as usize)).abs() > t {
                    hit = true;
                }
            }
            if hit {
                out.push((x, y));
            }
        }
    }
    out
}

fn nearest(p: (usize, usize), set: &[(usize, usize)]) -> f64 {
    let mut best = f64::INFINITY;
    for q in set {
        let dx = p.0 as f64 - q.0 as f64;
        let dy = p.1 as f64 - q.1 as f64;
        best = best.min((dx * dx + dy * dy).sqrt());
    }
    best
}

fn point(cam: &Camera, m: &Map, x: usize, y: usize) -> [f64; 3] {
    let z = m.at(x, y);
    [z * (x as f64 + 0.5 - cam.cx) / cam.fx, z * (y as f64 + 0.5 - cam.cy) / cam.fy, z]
}

fn normal(cam: &Camera, m: &Map, x: usize, y: usize) -> Option<[f64; 3]> {
    if x == 0 || y == 0 || x + 1 >= m.w || y + 1 >= m.h {
        return None;
    }
    if m.at(x - 1, y) <= 0.0 || m.at(x + 1, y) <= 0.0 || m.at(x, y - 1) <= 0.0 || m.at(x, y + 1) <= 0.0 {
        return None;
    }
    let (l, r) = (point(cam, m, x - 1, y), point(cam, m, x + 1, y));
    let (u, b) = (point(cam, m, x, y - 1), point(cam, m, x, y + 1));
    let a = [r[0] - l[0], r[1] - l[1], r[2] - l[2]];
    let c = [b[0] - u[0], b[1] - u[1], b[2] - u[2]];
    let mut n = [a[1] * c[2] - a[2] * c[1], a[2] * c[0] - a[0] * c[2], a[0] * c[1] - a[1] * c[0]];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len == 0.0 {
        return None;
    }
    let p = point(cam, m, x, y);
    let s = if n[0] * p[0] + n[1] * p[1] + n[2] * p[2] > 0.0 { -1.0 } else { 1.0 };
    for v in &mut n {
        *v *= s / len;
    }
    Some(n)
}

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cx = a[1] * b[2] - a[2] * b[1];
    let cy = a[2] * b[0] - a[0] * b[2];
    let cz = a[0] * b[1] - a[1] * b[0];
    (cx * cx + cy * cy + cz * cz).sqrt().atan2(dot) * 180.0 / std::f64::consts::PI
}

fn mean_dist(n: usize, sum: f64, other: usize) -> f64 {
    if n == 0 {
        return if other == 0 { 0.0 } else { CAP };
    }
    sum / n as f64
}

/// All 18 values in report-key order for the pooled pairs `(pred, gt)`.
pub fn metrics(pairs: &[(Map, Map)], cam: &Camera) -> [f64; 18] {
    let mut n = 0usize;
    let (mut se, mut sl, mut sa, mut sr) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 5];
    let (mut np_dbe, mut sp_dbe, mut ng_dbe, mut sg_dbe) = (0usize, 0.0, 0usize, 0.0);
    let mut f1c = [[0usize; 4]; 3];
    let mut nn = 0usize;
    let mut ahits = [0usize; 3];
    let mut sq_deg = 0.0;

    for (pred, gt) in pairs {
        for i in 0..gt.z.len() {
            let g = gt.z[i];
            if !(g > 0.0 && g <= MAX_DEPTH) {
                continue;
            }
            let p = if pred.z[i] <= 0.0 { 1e-6 } else { pred.z[i] };
            n += 1;
            se += (p - g) * (p - g);
            sl += (p.ln() - g.ln()) * (p.ln() - g.ln());
            sa += (p - g).abs() / g;
            sr += (p - g) * (p - g) / g;
            let ratio = if p > g { p / g } else { g / p };
            for k in 0..5 {
                if ratio < RATIOS[k] {
                    hits[k] += 1;
                }
            }
        }

        let pe = edges(pred, DBE_THRESHOLD);
        let ge = edges(gt, DBE_THRESHOLD);
        np_dbe += pe.len();
        ng_dbe += ge.len();
        for &e in &pe {
            sp_dbe += nearest(e, &ge).min(CAP);
        }
        for &e in &ge {
            sg_dbe += nearest(e, &pe).min(CAP);
        }

        for (k, &t) in F1_THRESHOLDS.iter().enumerate() {
            let pe = edges(pred, t);
            let ge = edges(gt, t);
            f1c[k][0] += pe.len();
            f1c[k][1] += pe.iter().filter(|&&e| nearest(e, &ge) <= 1.0).count();
            f1c[k][2] += ge.len();
            f1c[k][3] += ge.iter().filter(|&&e| nearest(e, &pe) <= 1.0).count();
        }

        for y in 0..gt.h {
            for x in 0..gt.w {
                let g = gt.at(x, y);
                if !(g > 0.0 && g <= MAX_DEPTH) {
                    continue;
                }
                if let (Some(a), Some(b)) = (normal(cam, pred, x, y), normal(cam, gt, x, y)) {
                    let t = angle_deg(a, b);
                    nn += 1;
                    sq_deg += t * t;
                    for k in 0..3 {
                        if t < ANGLES[k] {
                            ahits[k] += 1;
                        }
                    }
                }
            }
        }
    }

    let nf = n as f64;
    let mut out = [0.0; 18];
    out[0] = (se / nf).sqrt();
    out[1] = (sl / nf).sqrt();
    out[2] = sa / nf;
    out[3] = sr / nf;
    for k in 0..5 {
        out[4 + k] = 100.0 * hits[k] as f64 / nf;
    }
    out[9] = mean_dist(np_dbe, sp_dbe, ng_dbe);
    out[10] = mean_dist(ng_dbe, sg_dbe, np_dbe);
    for k in 0..3 {
        let [np, mp, ng, mg] = f1c[k];
        out[11 + k] = if np == 0 && ng == 0 {
            1.0
        } else if np == 0 || ng == 0 {
            0.0
        } else {
            let p = mp as f64 / np as f64;
            let r = mg as f64 / ng as f64;
            if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            }
        };
    }
    for k in 0..3 {
        out[14 + k] = 100.0 * ahits[k] as f64 / nn as f64;
    }
    out[17] = (sq_deg / nn as f64).sqrt();
    out
}
