//! Token-budget batching, the AdamW training loop and model persistence.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ModelConfig, TrainSchedule};
use super::loss::{loss_total, predict, sample_loss, LossBreakdown, LossKind, Prediction};
use super::model::{GroundingModel, ModelArch, PreparedSample};
use super::vocab::{vocab_path, Vocab};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numcore::{
    load_checkpoint, optimizer_step, write_checkpoint, AdamWState, Grads, Graph, Objective, ParamStore,
};

/// Splits `order` into consecutive batches. A batch takes samples while the
/// summed sequence length stays within `budget`; a sample longer than the
/// budget forms a batch of its own.
pub fn make_batches(lengths: &[usize], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &i in order {
        let len = lengths[i];
        if !current.is_empty() && used + len > budget {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch));
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps: usize,
    pub epochs: usize,
    /// Mean batch loss at every step, before the update.
    pub losses: Vec<LossBreakdown>,
    pub batch_sizes: Vec<usize>,
}

/// Prepares every sample in parallel, keeping input order.
pub fn prepare_all(model: &GroundingModel, samples: &[Sample]) -> Result<Vec<PreparedSample>> {
    samples.par_iter().map(|s| model.prepare(s)).collect()
}

/// Trains `model` in place. `on_step` sees every step's mean batch loss.
pub fn train(
    model: &mut GroundingModel,
    samples: &[Sample],
    schedule: &TrainSchedule,
    on_step: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<TrainReport> {
    schedule.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let prepared = prepare_all(model, samples)?;
    let lengths: Vec<usize> = prepared.iter().map(PreparedSample::sequence_len).collect();
    let mut state = AdamWState::new(&model.params);
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    let mut report = TrainReport {
        steps: 0,
        epochs: 0,
        losses: Vec::with_capacity(schedule.steps),
        batch_sizes: Vec::with_capacity(schedule.steps),
    };
    for step in 0..schedule.steps {
        if queue.is_empty() {
            let order = epoch_order(prepared.len(), schedule.seed, report.epochs as u64);
            queue.extend(make_batches(&lengths, &order, schedule.token_budget));
            report.epochs += 1;
        }
        let batch = queue.pop_front().expect("refilled above");
        let at_step = |e: Error| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
            other => other,
        };
        let cfg = &model.config;
        let arch = &model.arch;
        let params = &model.params;
        let results: Vec<(LossBreakdown, Grads)> = batch
            .par_iter()
            .map(|&i| loss_total(cfg, arch, params, &prepared[i]))
            .collect::<Result<_>>()
            .map_err(at_step)?;

        let scale = 1.0 / batch.len() as f64;
        let mut mean = LossBreakdown::default();
        let mut grads: Option<Grads> = None;
        for (l, g) in &results {
            mean.cls += l.cls * scale;
            mean.con += l.con * scale;
            mean.total += l.total * scale;
            match &mut grads {
                None => grads = Some(g.clone()),
                Some(acc) => acc.add_assign(g),
            }
        }
        if !mean.total.is_finite() {
            return Err(Error::NonFinite(format!("step {step}: loss {}", mean.total)));
        }
        let mut grads = grads.expect("non-empty batch");
        grads.scale(scale);
        if schedule.grad_clip > 0.0 {
            let norm = grads.global_norm();
            if norm > schedule.grad_clip {
                grads.scale(schedule.grad_clip / norm);
            }
        }
        let mut opt = schedule.optimizer;
        opt.lr = schedule.lr_at(step);
        optimizer_step(&mut model.params, &grads, &mut state, &opt).map_err(at_step)?;
        on_step(step, &mean);
        report.losses.push(mean);
        report.batch_sizes.push(batch.len());
        report.steps += 1;
    }
    Ok(report)
}

/// Predictions for every sample, in input order.
pub fn predict_samples(model: &GroundingModel, samples: &[Sample]) -> Result<Vec<Prediction>> {
    samples
        .par_iter()
        .map(|s| predict(&model.arch, &model.params, &model.prepare(s)?))
        .collect()
}

/// Writes the checkpoint and its vocabulary sidecar.
pub fn save_model(model: &GroundingModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_checkpoint(&model.params, path)?;
    model.vocab.write(vocab_path(path))
}

pub fn load_model(config: ModelConfig, path: impl AsRef<Path>) -> Result<GroundingModel> {
    let path = path.as_ref();
    let vocab = Vocab::read(vocab_path(path))?;
    let mut model = GroundingModel::new(config, vocab)?;
    load_checkpoint(&mut model.params, path)?;
    Ok(model)
}

/// Mean loss of a fixed sample set, for gradient checking.
pub struct LossObjective<'a> {
    pub config: &'a ModelConfig,
    pub arch: &'a ModelArch,
    pub samples: &'a [PreparedSample],
    pub kind: LossKind,
}

impl LossObjective<'_> {
    fn run(&self, params: &ParamStore, with_grads: bool) -> Result<(f64, Option<Grads>)> {
        let scale = 1.0 / self.samples.len() as f64;
        let mut loss = 0.0;
        let mut grads: Option<Grads> = None;
        for s in self.samples {
            let mut g = Graph::new(params);
            let (node, _) = sample_loss(&mut g, self.config, self.arch, s, self.kind)?;
            loss += g.value(node).item() * scale;
            if with_grads {
                let mut sg = g.backward(node)?;
                sg.scale(scale);
                match &mut grads {
                    None => grads = Some(sg),
                    Some(acc) => acc.add_assign(&sg),
                }
            }
        }
        Ok((loss, grads))
    }
}

impl Objective for LossObjective<'_> {
    fn loss(&self, params: &ParamStore) -> Result<f64> {
        Ok(self.run(params, false)?.0)
    }

    fn loss_and_grads(&self, params: &ParamStore) -> Result<(f64, Grads)> {
        let (l, g) = self.run(params, true)?;
        Ok((l, g.unwrap_or_else(|| params.zero_grads())))
    }
}
