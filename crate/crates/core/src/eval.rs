//! Dataset evaluation, cross-model comparison and blending-factor reports.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Example, Split};
use crate::error::{Error, Result};
use crate::metrics::radar::{radar, AXES};
use crate::metrics::{sample_stats, EvalConfig, MetricsReport, SampleStats};
use crate::tensor::Tensor;
use crate::train::check_compatible;
use crate::unet::ModelGraph;

/// Scores `predict` on every example. Samples run in parallel; statistics
/// are merged in split order.
pub fn evaluate_with<F>(split: &Split, cfg: &EvalConfig, predict: F) -> Result<MetricsReport>
where
    F: Fn(&Example) -> Result<Tensor> + Sync,
{
    if split.is_empty() {
        return Err(Error::Evaluation(format!("split {} is empty", split.dir.display())));
    }
    let stats: Vec<SampleStats> = split
        .examples
        .par_iter()
        .map(|ex| sample_stats(&predict(ex)?, &ex.depth, &ex.intrinsics, cfg))
        .collect::<Result<_>>()?;
    let mut total = SampleStats::default();
    for s in &stats {
        total.merge(s);
    }
    total.finish(cfg)
}

pub fn evaluate(model: &ModelGraph, split: &Split, cfg: &EvalConfig) -> Result<MetricsReport> {
    check_compatible(model.config(), split)?;
    evaluate_with(split, cfg, |ex| model.predict(&ex.color))
}

/// A report tied to the split it was computed on.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Digest of the split manifest.
    pub split: String,
    pub report: MetricsReport,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!("split={}\n{}", self.split, self.report.to_key_values())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let split = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("split="))
            .ok_or_else(|| Error::Configuration("report has no `split=` line".into()))?
            .trim()
            .to_owned();
        let rest: String = text
            .lines()
            .filter(|l| !l.trim().starts_with("split="))
            .map(|l| format!("{l}\n"))
            .collect();
        Ok(Self {
            split,
            report: MetricsReport::from_key_values(&rest)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
    }
}

/// Header of [`compare_csv`]: report columns, indicators, radar axes and area.
pub fn compare_header() -> String {
    let axes: Vec<String> = AXES.iter().map(|a| format!("radar_{a}")).collect();
    format!("{},{},area", MetricsReport::csv_header(), axes.join(","))
}

/// One row per model with its metrics, indicators, normalized radar axes
/// and relative radar area.
pub fn compare_csv(reports: &[(String, MetricsReport)]) -> Result<String> {
    let entries = radar(reports)?;
    let mut s = compare_header();
    s.push('\n');
    for ((name, r), e) in reports.iter().zip(&entries) {
        let axes: Vec<String> = e.normalized.iter().map(f64::to_string).collect();
        writeln!(s, "{},{},{}", r.csv_row(name), axes.join(","), e.area).expect("string write");
    }
    Ok(s)
}

/// Like [`compare_csv`], after checking every run used the same split.
pub fn compare(runs: &[(String, EvalReport)]) -> Result<String> {
    if let Some((base, other)) = runs.first().and_then(|b| runs.iter().find(|r| r.1.split != b.1.split).map(|o| (b, o))) {
        return Err(Error::Comparison(format!(
            "{} and {} were evaluated on different splits ({} vs {})",
            base.0, other.0, base.1.split, other.1.split
        )));
    }
    let reports: Vec<(String, MetricsReport)> = runs.iter().map(|(n, r)| (n.clone(), r.report)).collect();
    compare_csv(&reports)
}

fn summary(v: &[f64]) -> (f64, f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, std, min, max)
}

/// Per-level σ(ε̂) / σ(δ̂) statistics from the bottleneck side outwards, as
/// TSV, followed by a comment line on which side dominates at each end.
pub fn blending_report(model: &ModelGraph) -> Result<String> {
    let mut levels = model.blending_factors()?;
    levels.reverse();
    let mut s = String::from(
        "level\tchannels\teps_mean\teps_std\teps_min\teps_max\tdelta_mean\tdelta_std\tdelta_min\tdelta_max\tfavors\n",
    );
    let mut favors = Vec::new();
    for l in &levels {
        let e = summary(&l.eps);
        let d = summary(&l.delta);
        let side = if e.0 >= d.0 { "encoder" } else { "decoder" };
        favors.push(side);
        writeln!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{side}",
            l.level, l.channels, e.0, e.1, e.2, e.3, d.0, d.1, d.2, d.3
        )
        .expect("string write");
    }
    let (deep, shallow) = (favors[0], favors[favors.len() - 1]);
    let switch = deep == "encoder" && shallow == "decoder";
    writeln!(
        s,
        "# deepest skip favors {deep}, outermost favors {shallow}; encoder-to-decoder switch {}",
        if switch { "present" } else { "absent" }
    )
    .expect("string write");
    Ok(s)
}
