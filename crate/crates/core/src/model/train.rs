use super::checkpoint::{Checkpoint, RngState};
use super::net::{Bound, Seq2SeqNet, State};
use super::sample::SequenceBatch;
use crate::error::{CoreError, Result};
use dvfcast_autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of each epoch, measured before that batch's update.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

fn normalised(t: &Tensor, scale: f64) -> Tensor {
    if scale == 1.0 {
        return t.clone();
    }
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v / scale).collect()).expect("shape preserved")
}

fn denormalised(t: &Tensor, scale: f64) -> Tensor {
    if scale == 1.0 {
        return t.clone();
    }
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * scale).collect()).expect("shape preserved")
}

/// Teacher-forced Log-Cosh loss averaged over every transition of `batch`.
pub fn sequence_loss(net: &Seq2SeqNet, g: &mut Graph, bound: &Bound, batch: &SequenceBatch) -> Result<Var> {
    let t = batch.timepoints();
    if t < 2 {
        return Err(CoreError::Config(format!("training needs at least 2 timepoints, got {t}")));
    }
    if batch.mode != net.arch().mode {
        return Err(CoreError::Config(format!(
            "batch mode {} does not match network mode {}",
            batch.mode,
            net.arch().mode
        )));
    }
    let s = batch.frames[0].shape();
    let mut state = net.zero_state(g, s[0], s[2], s[3])?;
    let mut total: Option<Var> = None;
    let mut input = g.constant(normalised(&batch.frames[0], net.scale()));
    for k in 1..t {
        let (pred, next) = net.forward_step(g, bound, input, &state)?;
        state = next;
        let target = g.constant(normalised(&batch.frames[k], net.scale()));
        let l = g.logcosh_loss(pred, target)?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
        input = target;
    }
    Ok(g.scale(total.expect("t >= 2"), 1.0 / (t - 1) as f64))
}

/// Trains `net` with Adam, one update per batch, batches visited in a
/// seeded random order each epoch.
pub fn train(mut net: Seq2SeqNet, batches: &[SequenceBatch], cfg: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    cfg.adam.validate()?;
    if batches.is_empty() {
        return Err(CoreError::Config("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &b in &order {
            let mut g = Graph::new();
            let bound = net.bind(&mut g, true);
            let loss = sequence_loss(&net, &mut g, &bound, &batches[b])?;
            let value = g.value(loss).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(CoreError::Diverged {
                    step: adam.step,
                    loss: value,
                });
            }
            g.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .vars
                .iter()
                .zip(net.params())
                .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            adam_step(net.params_mut(), &grads, &mut adam, &cfg.adam)?;
            if net.params().iter().any(|p| !p.all_finite()) {
                return Err(CoreError::Diverged {
                    step: adam.step,
                    loss: value,
                });
            }
            sum += value;
        }
        let mean = sum / batches.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6e}");
        epoch_losses.push(mean);
    }
    let report = TrainReport {
        epoch_losses,
        steps: adam.step,
    };
    let checkpoint = Checkpoint {
        net,
        step: adam.step,
        rng: RngState::capture(&rng),
    };
    Ok((checkpoint, report))
}

/// Warms the recurrent state on `prefix` (frames `X_1..X_K`, each
/// `[batch, channels, H, W]` in data units) and rolls forward to
/// timepoint `horizon`, returning `X̂_{K+1}..X̂_T`.
pub fn predict(net: &Seq2SeqNet, prefix: &[Tensor], horizon: usize) -> Result<Vec<Tensor>> {
    let k = prefix.len();
    if k == 0 || k >= horizon {
        return Err(CoreError::Config(format!(
            "prefix length {k} must satisfy 1 <= K < T = {horizon}"
        )));
    }
    let shape = prefix[0].shape().to_vec();
    if shape.len() != 4 || prefix.iter().any(|p| p.shape() != shape.as_slice()) {
        return Err(CoreError::Config(format!("prefix frames must share one [B, C, H, W] shape, got {shape:?}")));
    }
    let scale = net.scale();
    let mut carried: Option<([Tensor; 6], [Tensor; 6])> = None;
    let mut input = normalised(&prefix[0], scale);
    let mut out = Vec::with_capacity(horizon - k);
    for t in 1..horizon {
        let mut g = Graph::inference();
        let bound = net.bind(&mut g, false);
        let state = match carried.take() {
            None => net.zero_state(&mut g, shape[0], shape[2], shape[3])?,
            Some((h, c)) => State {
                h: h.map(|t| g.constant(t)),
                c: c.map(|t| g.constant(t)),
            },
        };
        let x = g.constant(input);
        let (y, next) = net.forward_step(&mut g, &bound, x, &state)?;
        let pred = g.take_value(y);
        if !pred.all_finite() {
            return Err(CoreError::NonFinite("prediction"));
        }
        carried = Some((next.h.map(|v| g.take_value(v)), next.c.map(|v| g.take_value(v))));
        input = if t < k { normalised(&prefix[t], scale) } else { pred.clone() };
        if t >= k {
            out.push(denormalised(&pred, scale));
        }
    }
    Ok(out)
}
