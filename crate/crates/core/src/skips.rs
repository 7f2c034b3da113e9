//! Long-range skip-connection fusion functions.
//!
//! Every function takes encoder features `E` and decoder features `D` of
//! identical shape `[F, H, W]` (the decoder side is already upsampled and
//! projected) and returns fused features of shape `[F, H, W]`.
//!
//! Concatenating kinds first build a pair `(left, right)` and then apply the
//! learnable fusion `act(conv3x3([left; right]))`:
//!
//! | kind      | left                         | right                        |
//! |-----------|------------------------------|------------------------------|
//! | vanilla   | `E`                          | `D`                          |
//! | hybrid    | `ε⊙E + (1−ε)⊙f_h(D)`         | `δ⊙D + (1−δ)⊙f_l(E)`         |
//! | blend     | `ε⊙E + (1−ε)⊙D`              | `δ⊙D + (1−δ)⊙E`              |
//! | low       | `f_l(E)`                     | `D`                          |
//! | high      | `E`                          | `f_h(D)`                     |
//! | conv      | `k × (conv3x3, act)` on `E`  | `D`                          |
//! | residual  | `k_i` residual units on `E`  | `D`                          |
//! | attention | `a⊙E` (spatial gate)         | `D`                          |
//! | sqex      | `s⊙E` (channel gate)         | `D`                          |
//!
//! ExFuse is additive: `conv9x9(conv3x3(E) + D) + D`, with no concatenation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filters::{depthwise_filter, FilterKernel};
use crate::tensor::{Tape, Var};

pub const LEVELS: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Configuration(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

/// How the blending vectors ε, δ are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum BlendMode {
    /// `ε = σ(ε̂)`, `δ = σ(δ̂)` with learnable `ε̂, δ̂ ∈ R^F`.
    #[default]
    Learnable,
    /// Constant `ε·1` and `δ·1`.
    Fixed { eps: f64, delta: f64 },
}

impl FromStr for BlendMode {
    type Err = Error;

    /// `learnable`, `fixed:<v>` (ε = δ = v) or `fixed:<eps>,<delta>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "learnable" {
            return Ok(BlendMode::Learnable);
        }
        let bad = || Error::Configuration(format!("bad blend mode `{s}` (learnable | fixed:<eps>[,<delta>])"));
        let rest = s.strip_prefix("fixed:").ok_or_else(bad)?;
        let vals: Vec<f64> = rest
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (eps, delta) = match vals.as_slice() {
            [v] => (*v, *v),
            [e, d] => (*e, *d),
            _ => return Err(bad()),
        };
        if !(0.0..=1.0).contains(&eps) || !(0.0..=1.0).contains(&delta) {
            return Err(Error::Configuration(format!("fixed blending factors must lie in [0,1]: {s}")));
        }
        Ok(BlendMode::Fixed { eps, delta })
    }
}

impl fmt::Display for BlendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlendMode::Learnable => f.write_str("learnable"),
            BlendMode::Fixed { eps, delta } => write!(f, "fixed:{eps},{delta}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SkipKind {
    Vanilla,
    Conv { depth: usize },
    /// Residual units per level, outermost level first.
    Residual { units: [usize; LEVELS] },
    Attention,
    SqEx { ratio: usize },
    ExFuse,
    Hybrid { kernel: usize, blend: BlendMode },
    Blend { blend: BlendMode },
    Low { kernel: usize },
    High { kernel: usize },
}

pub const DEFAULT_CONV_DEPTH: usize = 2;
pub const DEFAULT_RESIDUAL_UNITS: [usize; LEVELS] = [5, 4, 3, 2, 1];
pub const DEFAULT_SQEX_RATIO: usize = 16;
pub const DEFAULT_KERNEL: usize = 9;

impl SkipKind {
    pub const TAGS: [&'static str; 10] = [
        "vanilla", "conv", "residual", "attention", "sqex", "exfuse", "hybrid", "blend", "low", "high",
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            SkipKind::Vanilla => "vanilla",
            SkipKind::Conv { .. } => "conv",
            SkipKind::Residual { .. } => "residual",
            SkipKind::Attention => "attention",
            SkipKind::SqEx { .. } => "sqex",
            SkipKind::ExFuse => "exfuse",
            SkipKind::Hybrid { .. } => "hybrid",
            SkipKind::Blend { .. } => "blend",
            SkipKind::Low { .. } => "low",
            SkipKind::High { .. } => "high",
        }
    }

    /// The kind for `tag` with every option at its default.
    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "vanilla" => SkipKind::Vanilla,
            "conv" => SkipKind::Conv {
                depth: DEFAULT_CONV_DEPTH,
            },
            "residual" => SkipKind::Residual {
                units: DEFAULT_RESIDUAL_UNITS,
            },
            "attention" => SkipKind::Attention,
            "sqex" => SkipKind::SqEx {
                ratio: DEFAULT_SQEX_RATIO,
            },
            "exfuse" => SkipKind::ExFuse,
            "hybrid" => SkipKind::Hybrid {
                kernel: DEFAULT_KERNEL,
                blend: BlendMode::Learnable,
            },
            "blend" => SkipKind::Blend {
                blend: BlendMode::Learnable,
            },
            "low" => SkipKind::Low { kernel: DEFAULT_KERNEL },
            "high" => SkipKind::High { kernel: DEFAULT_KERNEL },
            other => {
                return Err(Error::Configuration(format!(
                    "unknown skip kind `{other}` (expected one of {})",
                    Self::TAGS.join("|")
                )))
            }
        })
    }

    /// Whether the kind carries learnable ε̂, δ̂ vectors.
    pub fn has_blending_params(&self) -> bool {
        matches!(
            self,
            SkipKind::Hybrid {
                blend: BlendMode::Learnable,
                ..
            } | SkipKind::Blend {
                blend: BlendMode::Learnable
            }
        )
    }

    pub fn kernel_size(&self) -> Option<usize> {
        match self {
            SkipKind::Hybrid { kernel, .. } | SkipKind::Low { kernel } | SkipKind::High { kernel } => Some(*kernel),
            _ => None,
        }
    }

    /// Whether the fused pair goes through the `conv3x3(2F → F)` fusion layer.
    pub fn uses_fusion_conv(&self) -> bool {
        !matches!(self, SkipKind::ExFuse)
    }

    pub fn validate(&self, plan: &[usize]) -> Result<()> {
        if let Some(k) = self.kernel_size() {
            if k < 3 || k % 2 == 0 {
                return Err(Error::Configuration(format!("{} needs an odd kernel size >= 3, got {k}", self.tag())));
            }
        }
        match self {
            SkipKind::Conv { depth } if *depth == 0 => {
                return Err(Error::Configuration("conv skip needs depth >= 1".into()));
            }
            SkipKind::SqEx { ratio } => {
                if *ratio == 0 {
                    return Err(Error::Configuration("sqex ratio must be >= 1".into()));
                }
                if let Some(f) = plan.iter().find(|&&f| f % ratio != 0) {
                    return Err(Error::Configuration(format!("sqex ratio {ratio} does not divide {f} channels")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for SkipKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipKind::Conv { depth } => write!(f, "conv(k={depth})"),
            SkipKind::Residual { units } => write!(f, "residual(units={units:?})"),
            SkipKind::SqEx { ratio } => write!(f, "sqex(r={ratio})"),
            SkipKind::Hybrid { kernel, blend } => write!(f, "hybrid(K={kernel},{blend})"),
            SkipKind::Blend { blend } => write!(f, "blend({blend})"),
            SkipKind::Low { kernel } => write!(f, "low(K={kernel})"),
            SkipKind::High { kernel } => write!(f, "high(K={kernel})"),
            other => f.write_str(other.tag()),
        }
    }
}

/// Weight and bias of one convolution, bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

impl ConvVars {
    /// Stride-1 "same" convolution.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let k = tape.shape(self.weight)[2];
        tape.conv2d(x, self.weight, self.bias, 1, k / 2)
    }
}

/// Source of one blending vector.
#[derive(Clone, Copy, Debug)]
pub enum BlendFactor {
    /// Pre-sigmoid parameter `[F]`.
    Learned(Var),
    Fixed(f64),
}

impl BlendFactor {
    fn resolve(self, tape: &mut Tape, channels: usize) -> Var {
        match self {
            BlendFactor::Learned(hat) => tape.sigmoid(hat),
            BlendFactor::Fixed(v) => tape.constant(crate::tensor::Tensor::full([channels], v)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Blending {
    pub eps: BlendFactor,
    pub delta: BlendFactor,
}

/// `w⊙x + (1−w)⊙y` with `w` broadcast per channel.
fn lerp_channels(tape: &mut Tape, w: Var, x: Var, y: Var) -> Result<Var> {
    let wx = tape.mul(x, w)?;
    let one_minus = tape.one_minus(w);
    let wy = tape.mul(y, one_minus)?;
    tape.add(wx, wy)
}

fn check_pair(tape: &Tape, e: Var, d: Var) -> Result<usize> {
    let (se, sd) = (tape.shape(e), tape.shape(d));
    if se != sd || se.len() != 3 {
        return Err(Error::Dimension(format!(
            "skip fusion needs equal [F,H,W] inputs, got {:?} and {:?}",
            se, sd
        )));
    }
    Ok(se[0])
}

/// `act(conv3x3([left; right]))`.
pub fn fusion_conv(tape: &mut Tape, left: Var, right: Var, fuse: &ConvVars, act: Activation) -> Result<Var> {
    let cat = tape.concat_channels(left, right)?;
    let y = fuse.apply(tape, cat)?;
    Ok(act.apply(tape, y))
}

pub fn fuse_vanilla(tape: &mut Tape, e: Var, d: Var, fuse: &ConvVars, act: Activation) -> Result<Var> {
    check_pair(tape, e, d)?;
    fusion_conv(tape, e, d, fuse, act)
}

/// The hybrid feature pair `(H^e, H^d)`:
/// `H^e = ε⊙E + (1−ε)⊙f_h(D)`, `H^d = δ⊙D + (1−δ)⊙f_l(E)`.
pub fn hybrid_features(
    tape: &mut Tape,
    e: Var,
    d: Var,
    blending: Blending,
    low: &FilterKernel,
    high: &FilterKernel,
) -> Result<(Var, Var)> {
    let f = check_pair(tape, e, d)?;
    let eps = blending.eps.resolve(tape, f);
    let delta = blending.delta.resolve(tape, f);
    let high_d = depthwise_filter(tape, d, high)?;
    let low_e = depthwise_filter(tape, e, low)?;
    let he = lerp_channels(tape, eps, e, high_d)?;
    let hd = lerp_channels(tape, delta, d, low_e)?;
    Ok((he, hd))
}

#[allow(clippy::too_many_arguments)]
pub fn fuse_hybrid(
    tape: &mut Tape,
    e: Var,
    d: Var,
    blending: Blending,
    low: &FilterKernel,
    high: &FilterKernel,
    fuse: &ConvVars,
    act: Activation,
) -> Result<Var> {
    let (he, hd) = hybrid_features(tape, e, d, blending, low, high)?;
    fusion_conv(tape, he, hd, fuse, act)
}

/// Single-component variants of the hybrid skip.
#[derive(Clone, Copy, Debug)]
pub enum Ablation<'a> {
    /// Learnable blending only, no filters.
    Blend(Blending),
    /// Low-pass on the encoder side only.
    Low(&'a FilterKernel),
    /// High-pass on the decoder side only.
    High(&'a FilterKernel),
}

pub fn ablation_features(tape: &mut Tape, kind: Ablation<'_>, e: Var, d: Var) -> Result<(Var, Var)> {
    let f = check_pair(tape, e, d)?;
    match kind {
        Ablation::Blend(b) => {
            let eps = b.eps.resolve(tape, f);
            let delta = b.delta.resolve(tape, f);
            let left = lerp_channels(tape, eps, e, d)?;
            let right = lerp_channels(tape, delta, d, e)?;
            Ok((left, right))
        }
        Ablation::Low(k) => Ok((depthwise_filter(tape, e, k)?, d)),
        Ablation::High(k) => Ok((e, depthwise_filter(tape, d, k)?)),
    }
}

pub fn fuse_ablation(
    tape: &mut Tape,
    kind: Ablation<'_>,
    e: Var,
    d: Var,
    fuse: &ConvVars,
    act: Activation,
) -> Result<Var> {
    let (l, r) = ablation_features(tape, kind, e, d)?;
    fusion_conv(tape, l, r, fuse, act)
}

/// Learnable parts of the baseline skips, bound on a tape.
#[derive(Clone, Debug)]
pub enum Baseline {
    Conv {
        layers: Vec<ConvVars>,
    },
    /// Each unit is `(first conv, second conv)`.
    Residual {
        units: Vec<(ConvVars, ConvVars)>,
    },
    Attention {
        w_e: ConvVars,
        w_g: ConvVars,
        psi: ConvVars,
    },
    SqEx {
        reduce: ConvVars,
        expand: ConvVars,
    },
    ExFuse {
        embed: ConvVars,
        global: ConvVars,
    },
}

/// Encoder-side transform of the concatenating baselines: returns `E'`.
pub fn baseline_encoder(tape: &mut Tape, b: &Baseline, e: Var, gate: Option<Var>, act: Activation) -> Result<Var> {
    match b {
        Baseline::Conv { layers } => {
            let mut x = e;
            for l in layers {
                let y = l.apply(tape, x)?;
                x = act.apply(tape, y);
            }
            Ok(x)
        }
        Baseline::Residual { units } => {
            let mut x = e;
            for (c1, c2) in units {
                let y = c1.apply(tape, x)?;
                let y = act.apply(tape, y);
                let y = c2.apply(tape, y)?;
                let y = tape.add(y, x)?;
                x = act.apply(tape, y);
            }
            Ok(x)
        }
        Baseline::Attention { w_e, w_g, psi } => {
            let gate = gate.ok_or_else(|| Error::Configuration("attention skip needs a gating signal".into()))?;
            let eh = tape.shape(e)[1];
            let gh = tape.shape(gate)[1];
            if gh == 0 || eh % gh != 0 {
                return Err(Error::Dimension(format!("gate height {gh} does not divide encoder height {eh}")));
            }
            let theta = w_e.apply(tape, e)?;
            let phi = w_g.apply(tape, gate)?;
            let phi = tape.upsample_bilinear(phi, eh / gh)?;
            let s = tape.add(theta, phi)?;
            let s = act.apply(tape, s);
            let logits = psi.apply(tape, s)?;
            let a = tape.sigmoid(logits);
            tape.mul(e, a)
        }
        Baseline::SqEx { reduce, expand } => {
            let pooled = tape.global_avg_pool(e)?;
            let z = reduce.apply(tape, pooled)?;
            let z = act.apply(tape, z);
            let z = expand.apply(tape, z)?;
            let s = tape.sigmoid(z);
            tape.mul(e, s)
        }
        Baseline::ExFuse { .. } => Err(Error::Configuration(
            "exfuse is additive and has no encoder-only transform".into(),
        )),
    }
}

/// Baseline fusion. `fuse` is required by every kind except ExFuse.
pub fn fuse_baseline(
    tape: &mut Tape,
    b: &Baseline,
    e: Var,
    d: Var,
    gate: Option<Var>,
    fuse: Option<&ConvVars>,
    act: Activation,
) -> Result<Var> {
    check_pair(tape, e, d)?;
    if let Baseline::ExFuse { embed, global } = b {
        let x = embed.apply(tape, e)?;
        let x = tape.add(x, d)?;
        let x = global.apply(tape, x)?;
        return tape.add(x, d);
    }
    let fuse = fuse.ok_or_else(|| Error::Configuration("concatenating skip needs a fusion conv".into()))?;
    let e2 = baseline_encoder(tape, b, e, gate, act)?;
    fusion_conv(tape, e2, d, fuse, act)
}

/// Shape and role of a parameter owned by a skip connection at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    He { fan_in: usize },
    /// `N(0, 1 / fan_in)`, for convolutions with no activation after them.
    Linear { fan_in: usize },
    Zeros,
    StdNormal,
}

fn conv_specs(out: &mut Vec<ParamSpec>, name: &str, cout: usize, cin: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k],
        init: Init::He { fan_in: cin * k * k },
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        init: Init::Zeros,
    });
}

pub fn attention_inner(f: usize) -> usize {
    (f / 2).max(1)
}

/// Parameters a skip connection owns at one level, excluding the shared
/// `conv3x3(2F → F)` fusion layer. `level` is 1-based from the outermost
/// stage; `gate_channels` is the channel count of the next-coarser decoder
/// stage.
pub fn skip_param_specs(kind: &SkipKind, level: usize, f: usize, gate_channels: usize) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    match kind {
        SkipKind::Vanilla | SkipKind::Low { .. } | SkipKind::High { .. } => {}
        SkipKind::Hybrid { .. } | SkipKind::Blend { .. } => {
            if kind.has_blending_params() {
                for n in ["eps_hat", "delta_hat"] {
                    v.push(ParamSpec {
                        name: n.into(),
                        shape: vec![f],
                        init: Init::StdNormal,
                    });
                }
            }
        }
        SkipKind::Conv { depth } => {
            for i in 0..*depth {
                conv_specs(&mut v, &format!("conv{i}"), f, f, 3);
            }
        }
        SkipKind::Residual { units } => {
            for i in 0..units[level - 1] {
                conv_specs(&mut v, &format!("unit{i}.conv_a"), f, f, 3);
                conv_specs(&mut v, &format!("unit{i}.conv_b"), f, f, 3);
            }
        }
        SkipKind::Attention => {
            let inner = attention_inner(f);
            conv_specs(&mut v, "w_e", inner, f, 1);
            conv_specs(&mut v, "w_g", inner, gate_channels, 1);
            conv_specs(&mut v, "psi", 1, inner, 1);
        }
        SkipKind::SqEx { ratio } => {
            conv_specs(&mut v, "reduce", f / ratio, f, 1);
            conv_specs(&mut v, "expand", f, f / ratio, 1);
        }
        SkipKind::ExFuse => {
            conv_specs(&mut v, "embed", f, f, 3);
            conv_specs(&mut v, "global", f, f, 9);
            // The global conv starts at zero, so the fusion begins as D.
            v[0].init = Init::Linear { fan_in: f * 9 };
            v[2].init = Init::Zeros;
        }
    }
    v
}

fn fusion_conv_params(f: usize) -> usize {
    2 * f * f * 9 + f
}

/// Parameters added relative to a vanilla UNet with the same channel plan.
///
/// Level `i` is gated by the next-coarser decoder stage, whose width is
/// `plan[i+1]`, or `plan[4]` for the innermost level (the bottleneck keeps
/// the innermost width).
pub fn skip_extra_parameters(kind: &SkipKind, plan: &[usize]) -> i64 {
    let mut total: i64 = 0;
    for (i, &f) in plan.iter().enumerate() {
        let gate = plan.get(i + 1).copied().unwrap_or(f);
        let own: usize = skip_param_specs(kind, i + 1, f, gate)
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        total += own as i64;
        if !kind.uses_fusion_conv() {
            total -= fusion_conv_params(f) as i64;
        }
    }
    total
}
