//! Finite-difference checks of every differentiable operation, the fixed
//! filters, each skip fusion and the assembled network.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::{depthwise_filter, gaussian_kernel, highpass_kernel, HighPass};
use crate::skips::SkipKind;
use crate::tensor::{gradcheck, gradcheck_sampled, Tape, Tensor, Var};
use crate::train::{loss, LossKind};
use crate::unet::{build_unet, ModelGraph, UNetConfig};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    /// Tensor primitives and the training losses.
    Ops,
    Filters,
    Skips,
    Unet,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "ops" => Ok(Suite::Ops),
            "filters" => Ok(Suite::Filters),
            "skips" => Ok(Suite::Skips),
            "unet" => Ok(Suite::Unet),
            other => Err(Error::Usage(format!(
                "unknown gradcheck module `{other}` (expected all, ops, filters, skips or unet)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: String,
    /// Largest relative error over the probed coordinates.
    pub error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error < TOLERANCE
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "ok" } else { "FAIL" };
        write!(f, "{:<8} {:<32} {:.3e} {status}", self.module, self.name, self.error)
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

type Op = fn(&mut Tape, &[Var]) -> Result<Var>;

/// Each op's output is weighted by random weights and summed, so every
/// output coordinate contributes a distinct gradient.
fn ops() -> Result<Vec<CheckResult>> {
    let x = random(&[2, 6, 6], 1);
    let y = random(&[2, 6, 6], 2);
    let mut out = Vec::new();
    let pointwise: [(&str, Op); 13] = [
        ("sigmoid", |t, v| Ok(t.sigmoid(v[0]))),
        ("elu", |t, v| Ok(t.elu(v[0]))),
        ("relu", |t, v| Ok(t.relu(v[0]))),
        ("softplus", |t, v| Ok(t.softplus(v[0]))),
        ("abs", |t, v| Ok(t.abs(v[0]))),
        ("affine", |t, v| Ok(t.affine(v[0], -1.5, 0.3))),
        ("one_minus", |t, v| Ok(t.one_minus(v[0]))),
        ("add", |t, v| t.add(v[0], v[1])),
        ("sub", |t, v| t.sub(v[0], v[1])),
        ("mul", |t, v| t.mul(v[0], v[1])),
        ("mul_channel", |t, v| t.mul(v[0], v[2])),
        ("add_channel", |t, v| t.add(v[0], v[2])),
        ("mul_spatial", |t, v| t.mul(v[0], v[3])),
    ];
    let inputs = [x.clone(), y.clone(), random(&[2], 3), random(&[1, 6, 6], 4), random(&[2, 6, 6], 5)];
    for (name, op) in pointwise {
        let error = gradcheck(
            |t, v| {
                let r = op(t, v)?;
                let r = t.mul(r, v[4])?;
                Ok(t.sum(r))
            },
            &inputs,
            EPS,
        )?;
        out.push(CheckResult {
            module: "ops",
            name: name.into(),
            error,
        });
    }

    let structural: [(&str, Op); 10] = [
        ("conv2d", |t, v| t.conv2d(v[0], v[2], v[3], 1, 1)),
        ("conv2d_stride2", |t, v| {
            let c = t.conv2d(v[0], v[2], v[3], 2, 1)?;
            t.upsample_bilinear(c, 2)
        }),
        ("max_pool2", |t, v| {
            let p = t.max_pool2(v[0])?;
            t.upsample_bilinear(p, 2)
        }),
        ("avg_pool2", |t, v| {
            let p = t.avg_pool2(v[0])?;
            t.upsample_bilinear(p, 2)
        }),
        ("global_avg_pool", |t, v| {
            let g = t.global_avg_pool(v[0])?;
            t.mul(v[0], g)
        }),
        ("concat_channels", |t, v| t.concat_channels(v[0], v[1])),
        ("diff_x", |t, v| {
            let d = t.diff_x(v[0])?;
            let d = t.mul(d, d)?;
            let g = t.global_avg_pool(d)?;
            t.mul(v[0], g)
        }),
        ("diff_y", |t, v| {
            let d = t.diff_y(v[0])?;
            let d = t.mul(d, d)?;
            let g = t.global_avg_pool(d)?;
            t.mul(v[0], g)
        }),
        ("depthwise_fixed", |t, v| {
            let k = Arc::new(Tensor::from_fn([3, 3], |i| (i as f64 - 4.0) * 0.1));
            t.depthwise_fixed(v[0], k)
        }),
        ("mean", |t, v| {
            let s = t.sigmoid(v[0]);
            Ok(t.mean(s))
        }),
    ];
    let inputs = [x.clone(), random(&[2, 6, 6], 6), random(&[2, 2, 3, 3], 7), random(&[2], 8)];
    for (name, op) in structural {
        let error = gradcheck(
            |t, v| {
                let r = op(t, v)?;
                let w = t.constant(random(t.shape(r), 11));
                let r = t.mul(r, w)?;
                Ok(t.sum(r))
            },
            &inputs,
            EPS,
        )?;
        out.push(CheckResult {
            module: "ops",
            name: name.into(),
            error,
        });
    }

    let target = random(&[1, 5, 6], 9);
    for kind in [LossKind::L1, LossKind::L1Grad] {
        let error = gradcheck(
            |t, v| {
                let g = t.constant(target.clone());
                loss(t, v[0], g, kind)
            },
            &[random(&[1, 5, 6], 10)],
            EPS,
        )?;
        out.push(CheckResult {
            module: "ops",
            name: format!("loss_{kind}"),
            error,
        });
    }
    Ok(out)
}

fn filters() -> Result<Vec<CheckResult>> {
    let x = random(&[2, 10, 10], 20);
    let w = random(&[2, 10, 10], 21);
    let mut out = Vec::new();
    for k in [3, 5, 7, 9] {
        let kernels = [
            ("gaussian", gaussian_kernel(k)?),
            ("log", highpass_kernel(k, HighPass::Log)?),
            ("residual_highpass", highpass_kernel(k, HighPass::Residual)?),
        ];
        for (name, ker) in &kernels {
            let error = gradcheck(
                |t, v| {
                    let y = depthwise_filter(t, v[0], ker)?;
                    let y = t.mul(y, v[1])?;
                    Ok(t.sum(y))
                },
                &[x.clone(), w.clone()],
                EPS,
            )?;
            out.push(CheckResult {
                module: "filters",
                name: format!("{name}_k{k}"),
                error,
            });
        }
    }
    Ok(out)
}

/// Skip kinds exercised by the suite, on a small channel plan.
fn configs() -> Result<Vec<(String, UNetConfig)>> {
    let mut out = Vec::new();
    for tag in SkipKind::TAGS {
        let mut entries = vec![("model.skip", tag), ("model.channel_plan", "2,4,6,8,10"), ("model.kernel_size", "3")];
        if tag == "sqex" {
            entries.push(("model.sqex_ratio", "2"));
        }
        if tag == "residual" {
            entries.push(("model.skip_units", "2"));
        }
        out.push((tag.to_owned(), UNetConfig::from_entries(entries)?));
    }
    let variants: [(&str, &[(&str, &str)]); 3] = [
        ("hybrid_k9", &[("model.kernel_size", "9")]),
        ("hybrid_fixed", &[("model.blend_mode", "fixed:0.3,0.6")]),
        ("hybrid_residual_highpass", &[("model.highpass", "residual")]),
    ];
    for (name, extra) in variants {
        let mut entries = vec![("model.skip", "hybrid"), ("model.channel_plan", "2,4,6,8,10"), ("model.kernel_size", "3")];
        for &(k, v) in extra {
            entries.retain(|e| e.0 != k);
            entries.push((k, v));
        }
        out.push((name.to_owned(), UNetConfig::from_entries(entries)?));
    }
    Ok(out)
}

/// Gradient of a squared-error loss through the whole network with respect
/// to the parameters selected by `select` (and the input image if
/// `with_image`), probing at most `max_coords` coordinates per tensor.
fn network_check(model: &ModelGraph, select: impl Fn(&str) -> bool, with_image: bool, max_coords: usize, seed: u64) -> Result<f64> {
    let image = random(&[3, 32, 32], seed);
    let target = random(&[1, 32, 32], seed + 1);
    let chosen: Vec<usize> = model
        .parameters()
        .keys()
        .enumerate()
        .filter(|(_, n)| select(n))
        .map(|(i, _)| i)
        .collect();
    let mut inputs = vec![image.clone()];
    inputs.extend(chosen.iter().map(|&i| (*model.parameters()[i]).clone()));
    let mut slot = vec![None; model.parameters().len()];
    for (k, &i) in chosen.iter().enumerate() {
        slot[i] = Some(1 + k);
    }
    gradcheck_sampled(
        |tape, v| {
            let params: Vec<Var> = model
                .parameters()
                .values()
                .zip(&slot)
                .map(|(t, s)| match s {
                    Some(j) => v[*j],
                    None => tape.leaf_shared(Arc::clone(t), false),
                })
                .collect();
            let x = if with_image { v[0] } else { tape.constant(image.clone()) };
            let y = model.forward(tape, &params, x)?;
            let g = tape.constant(target.clone());
            let r = tape.sub(y, g)?;
            let sq = tape.mul(r, r)?;
            Ok(tape.mean(sq))
        },
        &inputs,
        EPS,
        max_coords,
        seed + 2,
    )
}

fn skips() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, (name, cfg)) in configs()?.into_iter().enumerate() {
        let model = build_unet(&cfg, 40 + i as u64)?;
        let error = network_check(&model, |n| n.starts_with("skip"), false, 24, 100 + 10 * i as u64)?;
        out.push(CheckResult {
            module: "skips",
            name,
            error,
        });
    }
    Ok(out)
}

fn unet() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, (name, cfg)) in configs()?.into_iter().enumerate() {
        let model = build_unet(&cfg, 60 + i as u64)?;
        let error = network_check(&model, |_| true, true, 4, 300 + 10 * i as u64)?;
        out.push(CheckResult {
            module: "unet",
            name,
            error,
        });
    }
    Ok(out)
}

pub fn run(suite: Suite) -> Result<Vec<CheckResult>> {
    Ok(match suite {
        Suite::Ops => ops()?,
        Suite::Filters => filters()?,
        Suite::Skips => skips()?,
        Suite::Unet => unet()?,
        Suite::All => {
            let mut all = ops()?;
            all.extend(filters()?);
            all.extend(skips()?);
            all.extend(unet()?);
            all
        }
    })
}
