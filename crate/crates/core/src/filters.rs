//! Fixed low-pass / high-pass kernels and hybrid-image composition.
//!
//! The low-pass filter is a normalized isotropic Gaussian. The high-pass
//! filter is, by default, a Laplacian-of-Gaussian forced to zero DC gain and
//! scaled so its center tap has magnitude one. Both share the width rule
//! `sigma(K) = 0.3·((K−1)/2 − 1) + 0.8`.
//!
//! Filtering is a same-size depthwise correlation with edge-replicated
//! borders, so constant images stay exactly constant (low-pass) or go to
//! zero (high-pass) right up to the border. All kernels are symmetric, so
//! correlation and convolution coincide.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    GaussianLow,
    LaplacianHigh,
    /// `x − gaussian(x)`, expressed as the kernel `identity − gaussian`.
    ResidualHigh,
}

/// Which high-pass filter the hybrid skip uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HighPass {
    #[default]
    Log,
    Residual,
}

impl FromStr for HighPass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(HighPass::Log),
            "residual" => Ok(HighPass::Residual),
            other => Err(Error::Configuration(format!("unknown high-pass filter `{other}` (log|residual)"))),
        }
    }
}

impl fmt::Display for HighPass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HighPass::Log => "log",
            HighPass::Residual => "residual",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterKernel {
    size: usize,
    kind: FilterKind,
    coefficients: Arc<Tensor>,
}

impl FilterKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    /// `[K, K]` coefficients, row-major.
    pub fn coefficients(&self) -> &Tensor {
        &self.coefficients
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.coefficients.data()[y * self.size + x]
    }
}

fn check_size(k: usize) -> Result<()> {
    if k < 3 || k % 2 == 0 {
        return Err(Error::Parameter(format!("filter size must be odd and >= 3, got {k}")));
    }
    Ok(())
}

pub fn sigma_for_size(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

fn grid(k: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut v = Vec::with_capacity(k * k);
    for y in -r..=r {
        for x in -r..=r {
            v.push(f((x * x + y * y) as f64));
        }
    }
    v
}

pub fn gaussian_kernel(k: usize) -> Result<FilterKernel> {
    check_size(k)?;
    let s2 = sigma_for_size(k).powi(2);
    let mut c = grid(k, |r2| (-r2 / (2.0 * s2)).exp());
    let total: f64 = c.iter().sum();
    c.iter_mut().for_each(|v| *v /= total);
    Ok(FilterKernel {
        size: k,
        kind: FilterKind::GaussianLow,
        coefficients: Arc::new(Tensor::new([k, k], c)?),
    })
}

pub fn laplacian_kernel(k: usize) -> Result<FilterKernel> {
    check_size(k)?;
    let s2 = sigma_for_size(k).powi(2);
    let mut c = grid(k, |r2| (r2 - 2.0 * s2) / (s2 * s2) * (-r2 / (2.0 * s2)).exp());
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    c.iter_mut().for_each(|v| *v -= mean);
    let center = c[c.len() / 2].abs();
    c.iter_mut().for_each(|v| *v /= center);
    Ok(FilterKernel {
        size: k,
        kind: FilterKind::LaplacianHigh,
        coefficients: Arc::new(Tensor::new([k, k], c)?),
    })
}

pub fn residual_highpass_kernel(k: usize) -> Result<FilterKernel> {
    let g = gaussian_kernel(k)?;
    let mut c: Vec<f64> = g.coefficients.data().iter().map(|v| -v).collect();
    let mid = c.len() / 2;
    c[mid] += 1.0;
    Ok(FilterKernel {
        size: k,
        kind: FilterKind::ResidualHigh,
        coefficients: Arc::new(Tensor::new([k, k], c)?),
    })
}

pub fn highpass_kernel(k: usize, mode: HighPass) -> Result<FilterKernel> {
    match mode {
        HighPass::Log => laplacian_kernel(k),
        HighPass::Residual => residual_highpass_kernel(k),
    }
}

/// Filters each channel of `features` with `kernel` on the tape.
/// The kernel itself is a constant and never receives gradient.
pub fn depthwise_filter(tape: &mut Tape, features: Var, kernel: &FilterKernel) -> Result<Var> {
    tape.depthwise_fixed(features, Arc::clone(&kernel.coefficients))
}

/// Off-tape convenience wrapper around [`depthwise_filter`].
pub fn apply_filter(features: &Tensor, kernel: &FilterKernel) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let y = depthwise_filter(&mut tape, x, kernel)?;
    Ok(tape.value(y).clone())
}

/// `alpha·low(a) + (1 − alpha)·high(b)` for explicit filters.
pub fn blend_filtered(a: &Tensor, b: &Tensor, low: &FilterKernel, high: &FilterKernel, alpha: f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "hybrid image inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0,1], got {alpha}")));
    }
    let la = apply_filter(a, low)?;
    let hb = apply_filter(b, high)?;
    let data = la
        .data()
        .iter()
        .zip(hb.data())
        .map(|(l, h)| alpha * l + (1.0 - alpha) * h)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Hybrid image of `a` (low frequencies) and `b` (high frequencies) with
/// Gaussian / Laplacian kernels of size `k`. `alpha = 0.5` is the classic
/// equal-weight hybrid.
pub fn make_hybrid_image(a: &Tensor, b: &Tensor, k: usize, alpha: f64) -> Result<Tensor> {
    blend_filtered(a, b, &gaussian_kernel(k)?, &laplacian_kernel(k)?, alpha)
}

pub fn hybrid_sweep(a: &Tensor, b: &Tensor, k: usize, alphas: &[f64]) -> Result<Vec<Tensor>> {
    if alphas.is_empty() {
        return Err(Error::Parameter("hybrid sweep needs at least one alpha".into()));
    }
    let (low, high) = (gaussian_kernel(k)?, laplacian_kernel(k)?);
    alphas.iter().map(|&al| blend_filtered(a, b, &low, &high, al)).collect()
}

/// `n` evenly spaced values from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
