use super::MetricsReport;
use crate::error::{Error, Result};

pub const AXES: [&str; 6] = ["d_a", "d_e", "b_a", "b_e", "s_a", "s_e"];

/// Whether a larger raw value is the better end of each axis. The accuracy
/// axes are reciprocals of accuracies, so for them the smaller value wins.
pub const HIGHER_IS_BETTER: [bool; 6] = [false, true, false, true, false, true];

pub const FLOOR: f64 = 0.05;

/// Raw axes in [`AXES`] order, with percentages read as fractions.
pub fn raw_axes(r: &MetricsReport) -> [f64; 6] {
    let mean_delta = r.delta.iter().sum::<f64>() / 500.0;
    let mean_f1 = r.f1.iter().sum::<f64>() / 3.0;
    let mean_alpha = r.alpha.iter().sum::<f64>() / 300.0;
    [
        1.0 / mean_delta,
        1.0 / (r.rmse * r.rmsle),
        1.0 / mean_f1,
        1.0 / (r.dbe_acc * r.dbe_comp),
        1.0 / mean_alpha,
        1.0 / r.rmse_deg,
    ]
}

/// Area of the hexagon with the given radii at 60° spacing.
pub fn polygon_area(radii: &[f64; 6]) -> f64 {
    let s = (60f64).to_radians().sin();
    (0..6).map(|i| 0.5 * s * radii[i] * radii[(i + 1) % 6]).sum()
}

/// [`polygon_area`] relative to the unit regular hexagon.
pub fn relative_area(radii: &[f64; 6]) -> f64 {
    polygon_area(radii) / polygon_area(&[1.0; 6])
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadarEntry {
    pub name: String,
    pub raw: [f64; 6],
    pub normalized: [f64; 6],
    pub area: f64,
}

/// Min–max normalizes every axis over the set to `[FLOOR, 1]`, best end at 1.
/// An axis on which all models agree is set to 1.
pub fn radar(reports: &[(String, MetricsReport)]) -> Result<Vec<RadarEntry>> {
    if reports.len() < 2 {
        return Err(Error::Comparison("radar normalization needs at least two models".into()));
    }
    let raw: Vec<[f64; 6]> = reports.iter().map(|(_, r)| raw_axes(r)).collect();
    if let Some(((name, _), _)) = reports.iter().zip(&raw).find(|(_, a)| a.iter().any(|v| !v.is_finite())) {
        return Err(Error::Comparison(format!("model {name} has a non-finite radar axis")));
    }
    let mut normalized = vec![[0.0; 6]; raw.len()];
    for a in 0..6 {
        let lo = raw.iter().map(|r| r[a]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[a]).fold(f64::NEG_INFINITY, f64::max);
        for (n, r) in normalized.iter_mut().zip(&raw) {
            n[a] = if hi == lo {
                1.0
            } else {
                let t = if HIGHER_IS_BETTER[a] {
                    (r[a] - lo) / (hi - lo)
                } else {
                    (hi - r[a]) / (hi - lo)
                };
                FLOOR + (1.0 - FLOOR) * t
            };
        }
    }
    Ok(reports
        .iter()
        .zip(raw)
        .zip(normalized)
        .map(|(((name, _), raw), normalized)| RadarEntry {
            name: name.clone(),
            raw,
            area: relative_area(&normalized),
            normalized,
        })
        .collect())
}

pub fn radar_csv(entries: &[RadarEntry]) -> String {
    let mut s = format!("model,{},area\n", AXES.join(","));
    for e in entries {
        let vals: Vec<String> = e.normalized.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("{},{},{}\n", e.name, vals.join(","), e.area));
    }
    s
}
