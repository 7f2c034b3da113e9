//! Five-level encoder–decoder with one pluggable skip connection per level.
//!
//! Parameter naming:
//!
//! * `enc{i}.conv_a`, `enc{i}.conv_b`: encoder stage `i` (1 = full resolution)
//! * `bottleneck.conv_a`, `bottleneck.conv_b`
//! * `dec{i}.proj` (1×1), `dec{i}.conv` (3×3): decoder stage `i`
//! * `skip{i}.*`: everything owned by the skip connection at level `i`,
//!   including the `skip{i}.fuse` 3×3 fusion conv when the kind has one
//! * `head`: 1×1 conv to one output channel
//!
//! Each name is followed by `.weight` / `.bias`, except the blending
//! vectors `skip{i}.eps_hat` and `skip{i}.delta_hat`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::error::{dim_err, Error, Result};
use crate::filters::{gaussian_kernel, highpass_kernel, FilterKernel, HighPass};
use crate::skips::{
    self, Ablation, Activation, Baseline, BlendFactor, BlendMode, Blending, ConvVars, Init, ParamSpec, SkipKind,
    LEVELS,
};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_PLAN: [usize; LEVELS] = [32, 64, 128, 256, 512];

/// Spatial dimensions must be multiples of this.
pub const STRIDE: usize = 1 << LEVELS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputTransform {
    #[default]
    Softplus,
    Identity,
}

impl FromStr for OutputTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(OutputTransform::Softplus),
            "identity" => Ok(OutputTransform::Identity),
            other => Err(Error::Configuration(format!("unknown output transform `{other}`"))),
        }
    }
}

impl fmt::Display for OutputTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputTransform::Softplus => "softplus",
            OutputTransform::Identity => "identity",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    pub channel_plan: [usize; LEVELS],
    pub input_channels: usize,
    pub skip: SkipKind,
    pub activation: Activation,
    pub output_transform: OutputTransform,
    pub highpass: HighPass,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channel_plan: DEFAULT_PLAN,
            input_channels: 3,
            skip: SkipKind::Vanilla,
            activation: Activation::Elu,
            output_transform: OutputTransform::Softplus,
            highpass: HighPass::Log,
        }
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Configuration(format!("invalid value `{value}` for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<[usize; LEVELS]> {
    let items: Vec<usize> = value
        .split(',')
        .map(|v| parse(key, v))
        .collect::<Result<_>>()?;
    match items.as_slice() {
        [v] => Ok([*v; LEVELS]),
        _ => items
            .try_into()
            .map_err(|_| Error::Configuration(format!("{key} needs 1 or {LEVELS} comma-separated values"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl UNetConfig {
    /// Keys accepted by [`UNetConfig::from_entries`], without the `model.` prefix.
    pub const KEYS: [&'static str; 11] = [
        "skip",
        "skip_k",
        "skip_units",
        "sqex_ratio",
        "kernel_size",
        "blend_mode",
        "channel_plan",
        "input_channels",
        "activation",
        "output_transform",
        "highpass",
    ];

    /// Builds a config from `model.*` entries; absent keys keep defaults.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = UNetConfig::default();
        let mut tag = "vanilla".to_owned();
        let mut depth = skips::DEFAULT_CONV_DEPTH;
        let mut units = skips::DEFAULT_RESIDUAL_UNITS;
        let mut ratio = skips::DEFAULT_SQEX_RATIO;
        let mut kernel = skips::DEFAULT_KERNEL;
        let mut blend = BlendMode::Learnable;
        for (key, value) in entries {
            let short = key
                .strip_prefix("model.")
                .ok_or_else(|| Error::Configuration(format!("`{key}` is not a model key")))?;
            match short {
                "skip" => tag = value.trim().to_owned(),
                "skip_k" => depth = parse(key, value)?,
                "skip_units" => units = parse_list(key, value)?,
                "sqex_ratio" => ratio = parse(key, value)?,
                "kernel_size" => kernel = parse(key, value)?,
                "blend_mode" => blend = value.trim().parse()?,
                "channel_plan" => {
                    let plan: Vec<usize> = value.split(',').map(|v| parse(key, v)).collect::<Result<_>>()?;
                    cfg.channel_plan = plan.try_into().map_err(|_| {
                        Error::Configuration(format!("model.channel_plan needs exactly {LEVELS} values"))
                    })?;
                }
                "input_channels" => cfg.input_channels = parse(key, value)?,
                "activation" => cfg.activation = value.trim().parse()?,
                "output_transform" => cfg.output_transform = value.trim().parse()?,
                "highpass" => cfg.highpass = value.trim().parse()?,
                _ => return Err(Error::Configuration(format!("unknown key `{key}`"))),
            }
        }
        cfg.skip = match SkipKind::from_tag(&tag)? {
            SkipKind::Conv { .. } => SkipKind::Conv { depth },
            SkipKind::Residual { .. } => SkipKind::Residual { units },
            SkipKind::SqEx { .. } => SkipKind::SqEx { ratio },
            SkipKind::Hybrid { .. } => SkipKind::Hybrid { kernel, blend },
            SkipKind::Blend { .. } => SkipKind::Blend { blend },
            SkipKind::Low { .. } => SkipKind::Low { kernel },
            SkipKind::High { .. } => SkipKind::High { kernel },
            other => other,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The `model.*` entries that reproduce this config.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let mut v = vec![("skip".to_owned(), self.skip.tag().to_owned())];
        match &self.skip {
            SkipKind::Conv { depth } => v.push(("skip_k".into(), depth.to_string())),
            SkipKind::Residual { units } => v.push(("skip_units".into(), join(units))),
            SkipKind::SqEx { ratio } => v.push(("sqex_ratio".into(), ratio.to_string())),
            SkipKind::Hybrid { kernel, blend } => {
                v.push(("kernel_size".into(), kernel.to_string()));
                v.push(("blend_mode".into(), blend.to_string()));
            }
            SkipKind::Blend { blend } => v.push(("blend_mode".into(), blend.to_string())),
            SkipKind::Low { kernel } | SkipKind::High { kernel } => {
                v.push(("kernel_size".into(), kernel.to_string()))
            }
            _ => {}
        }
        v.push(("channel_plan".into(), join(&self.channel_plan)));
        v.push(("input_channels".into(), self.input_channels.to_string()));
        v.push(("activation".into(), self.activation.to_string()));
        v.push(("output_transform".into(), self.output_transform.to_string()));
        v.push(("highpass".into(), self.highpass.to_string()));
        v.into_iter().map(|(k, val)| (format!("model.{k}"), val)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("malformed config line `{line}`")))?;
            pairs.push((k.trim(), v.trim()));
        }
        Self::from_entries(pairs)
    }

    pub fn validate(&self) -> Result<()> {
        let plan = &self.channel_plan;
        if plan[0] == 0 || plan.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Configuration(format!("channel plan {plan:?} must be positive and strictly increasing")));
        }
        if self.input_channels == 0 {
            return Err(Error::Configuration("input_channels must be >= 1".into()));
        }
        self.skip.validate(plan)
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
enum SkipIdx {
    None,
    Blend { eps: usize, delta: usize },
    Convs(Vec<ConvIdx>),
}

#[derive(Clone, Debug)]
struct DecoderIdx {
    proj: ConvIdx,
    skip: SkipIdx,
    fuse: Option<ConvIdx>,
    conv: ConvIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<(ConvIdx, ConvIdx)>,
    bottleneck: (ConvIdx, ConvIdx),
    /// Outermost level first.
    decoder: Vec<DecoderIdx>,
    head: ConvIdx,
}

/// Per-level blending factors after the sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelBlending {
    pub level: usize,
    pub channels: usize,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
}

impl LevelBlending {
    pub fn eps_mean(&self) -> f64 {
        self.eps.iter().sum::<f64>() / self.eps.len() as f64
    }

    pub fn delta_mean(&self) -> f64 {
        self.delta.iter().sum::<f64>() / self.delta.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct ModelGraph {
    config: UNetConfig,
    params: IndexMap<String, Arc<Tensor>>,
    layout: Layout,
    filters: Option<(FilterKernel, FilterKernel)>,
}

/// Independent stream per parameter so that shared parameters get the same
/// values whatever skip kind sits between them.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    ChaCha8Rng::from_seed(digest.into())
}

fn init_tensor(spec: &ParamSpec, seed: u64) -> Tensor {
    let mut rng = param_rng(seed, &spec.name);
    match spec.init {
        Init::Zeros => Tensor::zeros(spec.shape.clone()),
        Init::StdNormal => {
            let n = Normal::new(0.0, 1.0).unwrap();
            Tensor::from_fn(spec.shape.clone(), |_| n.sample(&mut rng))
        }
        Init::He { fan_in } | Init::Linear { fan_in } => {
            let gain = if matches!(spec.init, Init::He { .. }) { 2.0 } else { 1.0 };
            let n = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
            Tensor::from_fn(spec.shape.clone(), |_| n.sample(&mut rng))
        }
    }
}

struct Builder {
    seed: u64,
    params: IndexMap<String, Arc<Tensor>>,
}

impl Builder {
    fn add(&mut self, spec: ParamSpec) -> usize {
        let t = init_tensor(&spec, self.seed);
        let (idx, old) = self.params.insert_full(spec.name, Arc::new(t));
        debug_assert!(old.is_none(), "duplicate parameter name");
        idx
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> ConvIdx {
        let w = self.add(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            init: Init::He { fan_in: cin * k * k },
        });
        let b = self.add(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            init: Init::Zeros,
        });
        ConvIdx { w, b }
    }
}

pub fn build_unet(cfg: &UNetConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let plan = cfg.channel_plan;
    let mut b = Builder {
        seed,
        params: IndexMap::new(),
    };
    let mut encoder = Vec::with_capacity(LEVELS);
    let mut cin = cfg.input_channels;
    for (i, &f) in plan.iter().enumerate() {
        let a = b.conv(&format!("enc{}.conv_a", i + 1), f, cin, 3);
        let c = b.conv(&format!("enc{}.conv_b", i + 1), f, f, 3);
        encoder.push((a, c));
        cin = f;
    }
    let top = plan[LEVELS - 1];
    let bottleneck = (
        b.conv("bottleneck.conv_a", top, top, 3),
        b.conv("bottleneck.conv_b", top, top, 3),
    );

    let mut decoder = Vec::with_capacity(LEVELS);
    for level in (1..=LEVELS).rev() {
        let f = plan[level - 1];
        let below = plan.get(level).copied().unwrap_or(top);
        let proj = b.conv(&format!("dec{level}.proj"), f, below, 1);
        let specs = skips::skip_param_specs(&cfg.skip, level, f, below);
        let skip = if cfg.skip.has_blending_params() {
            let mut it = specs.into_iter().map(|mut s| {
                s.name = format!("skip{level}.{}", s.name);
                b.add(s)
            });
            let eps = it.next().expect("eps_hat spec");
            let delta = it.next().expect("delta_hat spec");
            SkipIdx::Blend { eps, delta }
        } else if specs.is_empty() {
            SkipIdx::None
        } else {
            let idx: Vec<usize> = specs
                .into_iter()
                .map(|mut s| {
                    s.name = format!("skip{level}.{}", s.name);
                    b.add(s)
                })
                .collect();
            SkipIdx::Convs(idx.chunks(2).map(|p| ConvIdx { w: p[0], b: p[1] }).collect())
        };
        let fuse = cfg
            .skip
            .uses_fusion_conv()
            .then(|| b.conv(&format!("skip{level}.fuse"), f, 2 * f, 3));
        let conv = b.conv(&format!("dec{level}.conv"), f, f, 3);
        decoder.push(DecoderIdx { proj, skip, fuse, conv });
    }
    decoder.reverse();
    let head = b.conv("head", 1, plan[0], 1);

    let filters = match cfg.skip.kernel_size() {
        Some(k) => Some((gaussian_kernel(k)?, highpass_kernel(k, cfg.highpass)?)),
        None => None,
    };
    Ok(ModelGraph {
        config: cfg.clone(),
        params: b.params,
        layout: Layout {
            encoder,
            bottleneck,
            decoder,
            head,
        },
        filters,
    })
}

impl ModelGraph {
    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn parameters(&self) -> &IndexMap<String, Arc<Tensor>> {
        &self.params
    }

    /// Mutable access for optimizers. Shapes must be preserved.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = (&String, &mut Arc<Tensor>)> {
        self.params.iter_mut()
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|t| t.as_ref())
    }

    pub fn set_parameter(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Parameter(format!("no parameter named `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(dim_err!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            ));
        }
        *slot = Arc::new(value);
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// Puts every parameter on `tape` as a leaf, in declaration order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .values()
            .map(|t| tape.leaf_shared(Arc::clone(t), requires_grad))
            .collect()
    }

    fn conv_vars(p: &[Var], c: ConvIdx) -> ConvVars {
        ConvVars {
            weight: p[c.w],
            bias: p[c.b],
        }
    }

    fn conv_act(&self, tape: &mut Tape, p: &[Var], c: ConvIdx, x: Var) -> Result<Var> {
        let y = Self::conv_vars(p, c).apply(tape, x)?;
        Ok(self.config.activation.apply(tape, y))
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match shape {
            &[c, h, w] if c == self.config.input_channels && h > 0 && w > 0 && h % STRIDE == 0 && w % STRIDE == 0 => {
                Ok(())
            }
            &[c, h, w] if c == self.config.input_channels => Err(dim_err!(
                "input spatial size {h}x{w} must be a positive multiple of {STRIDE}"
            )),
            other => Err(dim_err!(
                "expected a [{}, H, W] input, got {:?}",
                self.config.input_channels,
                other
            )),
        }
    }

    fn fuse(&self, tape: &mut Tape, p: &[Var], dec: &DecoderIdx, e: Var, d: Var, gate: Var) -> Result<Var> {
        let act = self.config.activation;
        let fuse = dec.fuse.map(|c| Self::conv_vars(p, c));
        let blending = |mode: &BlendMode| match (mode, &dec.skip) {
            (BlendMode::Learnable, SkipIdx::Blend { eps, delta }) => Ok(Blending {
                eps: BlendFactor::Learned(p[*eps]),
                delta: BlendFactor::Learned(p[*delta]),
            }),
            (BlendMode::Fixed { eps, delta }, _) => Ok(Blending {
                eps: BlendFactor::Fixed(*eps),
                delta: BlendFactor::Fixed(*delta),
            }),
            _ => Err(Error::Configuration("learnable blending without ε̂/δ̂ parameters".into())),
        };
        let convs = || match &dec.skip {
            SkipIdx::Convs(c) => c.iter().map(|&c| Self::conv_vars(p, c)).collect::<Vec<_>>(),
            _ => Vec::new(),
        };
        let need_fuse = || fuse.ok_or_else(|| Error::Configuration("missing fusion conv".into()));
        match &self.config.skip {
            SkipKind::Vanilla => skips::fuse_vanilla(tape, e, d, &need_fuse()?, act),
            SkipKind::Hybrid { blend, .. } => {
                let (low, high) = self.filters.as_ref().expect("hybrid filters");
                skips::fuse_hybrid(tape, e, d, blending(blend)?, low, high, &need_fuse()?, act)
            }
            SkipKind::Blend { blend } => {
                skips::fuse_ablation(tape, Ablation::Blend(blending(blend)?), e, d, &need_fuse()?, act)
            }
            SkipKind::Low { .. } => {
                let (low, _) = self.filters.as_ref().expect("low filter");
                skips::fuse_ablation(tape, Ablation::Low(low), e, d, &need_fuse()?, act)
            }
            SkipKind::High { .. } => {
                let (_, high) = self.filters.as_ref().expect("high filter");
                skips::fuse_ablation(tape, Ablation::High(high), e, d, &need_fuse()?, act)
            }
            SkipKind::Conv { .. } => {
                let b = Baseline::Conv { layers: convs() };
                skips::fuse_baseline(tape, &b, e, d, None, fuse.as_ref(), act)
            }
            SkipKind::Residual { .. } => {
                let units = convs().chunks(2).map(|u| (u[0], u[1])).collect();
                skips::fuse_baseline(tape, &Baseline::Residual { units }, e, d, None, fuse.as_ref(), act)
            }
            SkipKind::Attention => {
                let c = convs();
                let b = Baseline::Attention {
                    w_e: c[0],
                    w_g: c[1],
                    psi: c[2],
                };
                skips::fuse_baseline(tape, &b, e, d, Some(gate), fuse.as_ref(), act)
            }
            SkipKind::SqEx { .. } => {
                let c = convs();
                let b = Baseline::SqEx {
                    reduce: c[0],
                    expand: c[1],
                };
                skips::fuse_baseline(tape, &b, e, d, None, fuse.as_ref(), act)
            }
            SkipKind::ExFuse => {
                let c = convs();
                let b = Baseline::ExFuse {
                    embed: c[0],
                    global: c[1],
                };
                skips::fuse_baseline(tape, &b, e, d, None, None, act)
            }
        }
    }

    /// Full differentiable pass. `params` comes from [`ModelGraph::bind`] on
    /// the same tape; returns the `[1, H, W]` prediction.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], image: Var) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.check_input(tape.shape(image))?;
        let l = &self.layout;
        let mut skips_in = Vec::with_capacity(LEVELS);
        let mut x = image;
        for (i, &(a, b)) in l.encoder.iter().enumerate() {
            if i > 0 {
                x = tape.max_pool2(x)?;
            }
            x = self.conv_act(tape, params, a, x)?;
            x = self.conv_act(tape, params, b, x)?;
            skips_in.push(x);
        }
        x = tape.max_pool2(x)?;
        x = self.conv_act(tape, params, l.bottleneck.0, x)?;
        x = self.conv_act(tape, params, l.bottleneck.1, x)?;

        for level in (1..=LEVELS).rev() {
            let dec = &l.decoder[level - 1];
            let gate = x;
            let up = tape.upsample_bilinear(x, 2)?;
            let d = Self::conv_vars(params, dec.proj).apply(tape, up)?;
            let fused = self.fuse(tape, params, dec, skips_in[level - 1], d, gate)?;
            x = self.conv_act(tape, params, dec.conv, fused)?;
        }
        let y = Self::conv_vars(params, l.head).apply(tape, x)?;
        Ok(match self.config.output_transform {
            OutputTransform::Softplus => tape.softplus(y),
            OutputTransform::Identity => y,
        })
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }

    /// σ(ε̂), σ(δ̂) per level, outermost level first.
    pub fn blending_factors(&self) -> Result<Vec<LevelBlending>> {
        if !self.config.skip.has_blending_params() {
            return Err(Error::Usage(format!(
                "skip kind {} has no learnable blending factors",
                self.config.skip
            )));
        }
        let sig = |t: &Tensor| t.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect::<Vec<_>>();
        let mut out = Vec::with_capacity(LEVELS);
        for level in 1..=LEVELS {
            let eps = self.parameter(&format!("skip{level}.eps_hat")).expect("eps_hat");
            let delta = self.parameter(&format!("skip{level}.delta_hat")).expect("delta_hat");
            out.push(LevelBlending {
                level,
                channels: eps.numel(),
                eps: sig(eps),
                delta: sig(delta),
            });
        }
        Ok(out)
    }

    /// Names that do not start with `skip`, i.e. the shared backbone.
    pub fn backbone_parameters(&self) -> impl Iterator<Item = (&String, &Arc<Tensor>)> {
        self.params.iter().filter(|(n, _)| !n.starts_with("skip"))
    }

    /// Parameter tensors plus the serialized config under `meta.config`.
    pub fn to_named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("meta.config".to_owned(), text_tensor(&self.config.to_text()))];
        out.extend(self.params.iter().map(|(n, t)| (n.clone(), (**t).clone())));
        out
    }

    /// Rebuilds a model from [`ModelGraph::to_named_tensors`] output; tensors
    /// under other prefixes (such as `opt.`) are returned untouched.
    pub fn from_named_tensors(tensors: Vec<(String, Tensor)>) -> Result<(Self, Vec<(String, Tensor)>)> {
        let mut rest = Vec::new();
        let mut config = None;
        let mut found = IndexMap::new();
        for (name, t) in tensors {
            if name == "meta.config" {
                config = Some(UNetConfig::from_text(&tensor_text(&t)?)?);
            } else if name.starts_with("opt.") || name.starts_with("meta.") {
                rest.push((name, t));
            } else {
                found.insert(name, t);
            }
        }
        let config = config.ok_or_else(|| Error::Configuration("checkpoint has no meta.config entry".into()))?;
        let mut model = build_unet(&config, 0)?;
        for name in model.params.keys().cloned().collect::<Vec<_>>() {
            let t = found
                .shift_remove(&name)
                .ok_or_else(|| Error::Configuration(format!("checkpoint is missing parameter {name}")))?;
            model.set_parameter(&name, t)?;
        }
        if let Some(extra) = found.keys().next() {
            return Err(Error::Configuration(format!("checkpoint has unexpected tensor {extra}")));
        }
        Ok((model, rest))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_named_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_named_tensors(checkpoint::load(path)?)?.0)
    }
}

/// UTF-8 text stored one byte per element.
pub fn text_tensor(text: &str) -> Tensor {
    let bytes: Vec<f64> = text.bytes().map(f64::from).collect();
    Tensor::new([bytes.len()], bytes).expect("rank-1 shape")
}

pub fn tensor_text(t: &Tensor) -> Result<String> {
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| {
            (v.fract() == 0.0 && (0.0..=255.0).contains(&v))
                .then_some(v as u8)
                .ok_or_else(|| Error::Configuration("text tensor holds a non-byte value".into()))
        })
        .collect::<Result<_>>()?;
    String::from_utf8(bytes).map_err(|_| Error::Configuration("text tensor is not UTF-8".into()))
}

#[cfg(test)]
mod tests;
