//! Deterministic Adam training of a [`ModelGraph`] on a generated split.
//!
//! Batches come from a per-epoch shuffle derived from the run seed. Each
//! sample gets its own tape; per-sample gradients are summed in batch order,
//! so results do not depend on the thread count.

mod adam;
mod config;
mod loss;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{adam_update, Adam, AdamConfig};
pub use config::{apply_overrides, parse_entries, LossKind, RunConfig, TrainConfig};
pub use loss::loss;

use crate::checkpoint;
use crate::data::{Example, Split};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::unet::{build_unet, tensor_text, text_tensor, ModelGraph, UNetConfig, STRIDE};

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    /// `(step, mean batch loss)`, steps counted from 1 over the whole run.
    pub steps: Vec<(u64, f64)>,
    /// Sample-weighted mean loss of each epoch run in this session.
    pub epoch_means: Vec<f64>,
    pub wall_time: Duration,
}

impl TrainLog {
    pub const TSV_HEADER: &'static str = "step\tloss";

    /// Step rows without the header, for appending to an existing log.
    pub fn tsv_rows(&self) -> String {
        self.steps.iter().map(|(s, l)| format!("{s}\t{l}\n")).collect()
    }

    pub fn to_tsv(&self) -> String {
        format!("{}\n{}", Self::TSV_HEADER, self.tsv_rows())
    }

    pub fn parse_tsv(text: &str) -> Result<Vec<(u64, f64)>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::TSV_HEADER) {
            return Err(Error::Configuration("training log must start with `step\\tloss`".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let bad = || Error::Configuration(format!("malformed training log row `{l}`"));
                let (s, v) = l.split_once('\t').ok_or_else(bad)?;
                Ok((s.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?))
            })
            .collect()
    }
}

/// Sample order for `epoch`: one ChaCha stream per epoch under the run seed.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Errors unless every sample in `split` fits a model built from `cfg`.
pub fn check_compatible(cfg: &UNetConfig, split: &Split) -> Result<()> {
    if split.is_empty() {
        return Err(Error::Configuration(format!("split {} is empty", split.dir.display())));
    }
    for ex in &split.examples {
        let (c, h, w) = ex.color.dims3()?;
        if c != cfg.input_channels || h % STRIDE != 0 || w % STRIDE != 0 {
            return Err(Error::Configuration(format!(
                "split {} has {c}-channel {w}x{h} images; the model needs {} channels and sides divisible by {STRIDE}",
                split.dir.display(),
                cfg.input_channels
            )));
        }
    }
    Ok(())
}

/// Loss of one sample without gradients.
pub fn sample_loss(model: &ModelGraph, ex: &Example, kind: LossKind) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let x = tape.constant(ex.color.clone());
    let y = model.forward(&mut tape, &p, x)?;
    let g = tape.constant(ex.depth.clone());
    let l = loss(&mut tape, y, g, kind)?;
    Ok(tape.value(l).data()[0])
}

fn sample_gradients(model: &ModelGraph, ex: &Example, kind: LossKind) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, true);
    let x = tape.constant(ex.color.clone());
    let y = model.forward(&mut tape, &p, x)?;
    let g = tape.constant(ex.depth.clone());
    let l = loss(&mut tape, y, g, kind)?;
    tape.backward(l)?;
    let grads = p
        .iter()
        .map(|&v| match tape.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).numel()],
        })
        .collect();
    Ok((tape.value(l).data()[0], grads))
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradients(model: &ModelGraph, batch: &[&Example], kind: LossKind) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let per: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|ex| sample_gradients(model, ex, kind))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut iter = per.into_iter();
    let (mut total, mut acc) = iter.next().expect("non-empty");
    for (l, g) in iter {
        total += l;
        for (a, b) in acc.iter_mut().zip(&g) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
    acc.iter_mut().flatten().for_each(|x| *x /= n);
    Ok((total / n, acc))
}

/// Model, optimizer state and progress of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ModelGraph,
    pub adam: Adam,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    /// Fresh model initialized from the run seed.
    pub fn new(model_cfg: &UNetConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = build_unet(model_cfg, config.seed)?;
        let adam = Adam::new(config.adam, &model);
        Ok(Self {
            model,
            adam,
            config,
            epoch: 0,
        })
    }

    /// Runs epochs until `config.epochs` are complete, calling `on_epoch`
    /// after each one.
    pub fn run(
        &mut self,
        split: &Split,
        mut on_epoch: impl FnMut(&Trainer, &TrainLog) -> Result<()>,
    ) -> Result<TrainLog> {
        check_compatible(self.model.config(), split)?;
        let start = Instant::now();
        let mut log = TrainLog::default();
        while self.epoch < self.config.epochs {
            let order = epoch_order(self.config.seed, self.epoch, split.len());
            let mut sum = 0.0;
            for idx in order.chunks(self.config.batch_size) {
                let batch: Vec<&Example> = idx.iter().map(|&i| &split.examples[i]).collect();
                let (l, grads) = batch_gradients(&self.model, &batch, self.config.loss)?;
                self.adam.step(&mut self.model, &grads)?;
                log.steps.push((self.adam.step_count(), l));
                sum += l * batch.len() as f64;
            }
            self.epoch += 1;
            log.epoch_means.push(sum / split.len() as f64);
            log.wall_time = start.elapsed();
            on_epoch(self, &log)?;
        }
        log.wall_time = start.elapsed();
        Ok(log)
    }

    /// Model tensors plus `opt.*` state and the training config under `meta.train`.
    pub fn to_named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.model.to_named_tensors();
        out.push(("meta.train".to_owned(), text_tensor(&self.config.to_text())));
        out.push(("opt.epoch".to_owned(), Tensor::full([1], self.epoch as f64)));
        out.extend(self.adam.to_named_tensors(&self.model));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_named_tensors())
    }

    /// Continues a run saved by [`Trainer::save`]. `config` may raise the
    /// epoch count but must otherwise match the saved run.
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (model, rest) = ModelGraph::from_named_tensors(checkpoint::load(path)?)?;
        let get = |key: &str| {
            rest.iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Configuration(format!("{} has no {key}; not a training checkpoint", path.display())))
        };
        let saved = TrainConfig::from_text(&tensor_text(get("meta.train")?)?)?;
        if !saved.same_trajectory(&config) {
            return Err(Error::Configuration(format!(
                "{} was trained with different settings:\n{}",
                path.display(),
                saved.to_text()
            )));
        }
        let epoch = get("opt.epoch")?.data().first().copied().unwrap_or(-1.0);
        if !(epoch >= 0.0 && epoch.fract() == 0.0) {
            return Err(Error::Configuration(format!("invalid opt.epoch {epoch}")));
        }
        let adam = Adam::from_named_tensors(config.adam, &model, &rest)?;
        Ok(Self {
            model,
            adam,
            config,
            epoch: epoch as usize,
        })
    }
}
