//! Two-phase training: a burn-in with the auto-encoder disabled (alpha = 0,
//! only primary parameters stepped), then joint training of everything.

use log::debug;
use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::coop::{CompositeNetwork, Target};
use crate::data::{Dataset, Targets};
use crate::diffcore::{Graph, ParamId, Tensor};
use crate::error::{config_err, contract_err, Result};
use crate::metrics;
use crate::nn::{ForwardCtx, ParamGroup};
use crate::rng;

/// How alpha is chosen for the joint phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaMode {
    /// Use `TrainSchedule::alpha` as given.
    Fixed,
    /// Once burn-in ends, set alpha so that `alpha * L_C` matches the size of
    /// `L_P` (scaled by `TrainSchedule::alpha`).
    AutoBalance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub total_epochs: usize,
    /// Share of epochs spent in burn-in, in [0, 1).
    pub burn_in_fraction: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_epochs: 30,
            burn_in_fraction: 0.05,
            batch_size: 32,
            alpha: 1.0,
            alpha_mode: AlphaMode::Fixed,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(config_err!("burn-in fraction {} outside [0, 1)", self.burn_in_fraction));
        }
        if !(self.alpha >= 0.0) {
            return Err(config_err!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.total_epochs == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs and batch size must be positive"));
        }
        self.adam.validate()
    }

    /// `ceil(burn_in_fraction * total_epochs)`.
    pub fn burn_in_epochs(&self) -> usize {
        let raw = self.burn_in_fraction * self.total_epochs as f64;
        // Guard against 0.05 * 20 = 1.0000000000000002 style round-up.
        (raw - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    BurnIn,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::BurnIn => "burn-in",
            Phase::Joint => "joint",
        }
    }
}

/// Epoch-averaged training losses and the optional validation metric.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub primary_loss: f64,
    /// Unweighted relative reconstruction loss (Coop variants only).
    pub coop_loss: Option<f64>,
    pub total_loss: f64,
    /// Alpha in effect (0 during burn-in).
    pub alpha: f64,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

/// Task metric and auto-encoder quality on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Accuracy for classification, mean squared landmark error for regression.
    pub metric: f64,
    pub primary_loss: f64,
    /// Mean relative reconstruction loss (Coop variants only).
    pub coop_loss: Option<f64>,
}

fn batch_target<'a>(targets: &'a Targets, labels: &'a mut Vec<usize>, values: &'a mut Option<Tensor>, idx: &[usize]) -> Result<Target<'a>> {
    Ok(match targets {
        Targets::Classes(c) => {
            labels.clear();
            labels.extend(idx.iter().map(|&i| c[i]));
            Target::Classes(labels)
        }
        Targets::Values(t) => {
            *values = Some(t.select_rows(idx)?);
            Target::Values(values.as_ref().expect("just set"))
        }
    })
}

/// Batches of a permutation; a trailing batch of one sample is dropped
/// because batch statistics need two.
fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size).filter(|b| b.len() >= 2)
}

/// Trains `net` in place and returns the per-epoch history.
pub fn train(net: &mut CompositeNetwork, train_data: &Dataset, val_data: Option<&Dataset>, schedule: &TrainSchedule) -> Result<TrainHistory> {
    train_observed(net, train_data, val_data, schedule, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_observed<F>(
    net: &mut CompositeNetwork,
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    schedule: &TrainSchedule,
    mut observer: F,
) -> Result<TrainHistory>
where
    F: FnMut(&EpochRecord, &CompositeNetwork),
{
    schedule.validate()?;
    if train_data.len() < 2 {
        return Err(config_err!("training set needs at least two samples, got {}", train_data.len()));
    }
    if schedule.batch_size > train_data.len() {
        return Err(config_err!("batch size {} exceeds the {} training samples", schedule.batch_size, train_data.len()));
    }
    if train_data.sample_shape() != net.input_shape.as_slice() {
        return Err(config_err!("training inputs {:?} do not match network input {:?}", train_data.sample_shape(), net.input_shape));
    }
    let burn_in = schedule.burn_in_epochs();
    let primary_ids = net.store.ids_in(ParamGroup::Primary);
    let all_ids: Vec<ParamId> = net.store.iter().map(|(id, _)| id).collect();
    let mut adam = AdamState::new();
    let mut alpha = schedule.alpha;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut labels = Vec::new();
    let mut values = None;

    for epoch in 0..schedule.total_epochs {
        let phase = if epoch < burn_in { Phase::BurnIn } else { Phase::Joint };
        if phase == Phase::Joint && epoch == burn_in && schedule.alpha_mode == AlphaMode::AutoBalance && net.variant.is_coop() {
            alpha = schedule.alpha * balance_ratio(net, train_data, &history, schedule)?;
            debug!("auto-balanced alpha = {alpha}");
        }
        let step_alpha = if phase == Phase::BurnIn { 0.0 } else { alpha };
        let step_ids = if phase == Phase::BurnIn { &primary_ids } else { &all_ids };

        order.sort_unstable();
        order.shuffle(&mut rng::stream(schedule.seed, "shuffle", epoch as u64));
        let mut dropout_rng = rng::stream(schedule.seed, "dropout", epoch as u64);
        let (mut sum_p, mut sum_c, mut sum_t, mut count) = (0.0, 0.0, 0.0, 0usize);
        for idx in batches(&order, schedule.batch_size) {
            let mut g = Graph::new();
            let x = g.input(train_data.inputs.select_rows(idx)?);
            let target = batch_target(&train_data.targets, &mut labels, &mut values, idx)?;
            let mut ctx = ForwardCtx::train(rand::SeedableRng::from_rng(&mut dropout_rng).expect("chacha seeding is infallible"));
            let result = net.forward(&mut g, x, &mut ctx)?;
            let loss = net.composite_loss(&mut g, &result, target, step_alpha)?;
            if !loss.total.is_finite() {
                return Err(contract_err!("non-finite loss {} at epoch {epoch}", loss.total));
            }
            let grads = g.backward(loss.node)?;
            adam_step(&mut net.store, &grads, &mut adam, &schedule.adam, step_ids)?;
            let n = idx.len();
            sum_p += loss.primary * n as f64;
            sum_c += loss.coop.unwrap_or(0.0) * n as f64;
            sum_t += loss.total * n as f64;
            count += n;
        }
        let val_metric = match val_data {
            Some(v) if !v.is_empty() => Some(evaluate(net, v)?.metric),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            phase,
            primary_loss: sum_p / count as f64,
            coop_loss: net.variant.is_coop().then(|| sum_c / count as f64),
            total_loss: sum_t / count as f64,
            alpha: step_alpha,
            val_metric,
        };
        debug!(
            "epoch {epoch} [{}] primary {:.5} coop {:?} total {:.5} val {:?}",
            phase.as_str(),
            record.primary_loss,
            record.coop_loss,
            record.total_loss,
            record.val_metric
        );
        observer(&record, net);
        history.records.push(record);
    }
    Ok(history)
}

/// `L_P / L_C` from the last burn-in epoch, or from one training-mode pass
/// over the first batch of a scratch copy when there was no burn-in.
fn balance_ratio(net: &CompositeNetwork, data: &Dataset, history: &TrainHistory, schedule: &TrainSchedule) -> Result<f64> {
    let (p, c) = match history.records.last() {
        Some(r) => (r.primary_loss, r.coop_loss.unwrap_or(0.0)),
        None => {
            let mut scratch = net.clone();
            let n = schedule.batch_size.min(data.len());
            let idx: Vec<usize> = (0..n).collect();
            let mut g = Graph::new();
            let x = g.input(data.inputs.select_rows(&idx)?);
            let (mut labels, mut values) = (Vec::new(), None);
            let target = batch_target(&data.targets, &mut labels, &mut values, &idx)?;
            let mut ctx = ForwardCtx::train(rng::stream(schedule.seed, "balance", 0));
            let r = scratch.forward(&mut g, x, &mut ctx)?;
            let loss = scratch.composite_loss(&mut g, &r, target, 1.0)?;
            (loss.primary, loss.coop.unwrap_or(0.0))
        }
    };
    if !(c > 0.0) {
        return Ok(1.0);
    }
    Ok(p / c)
}

const EVAL_BATCH: usize = 200;

/// Eval-mode network outputs for every sample, `[N, O]`.
pub fn predict(net: &mut CompositeNetwork, inputs: &Tensor) -> Result<Tensor> {
    let n = inputs.rows();
    let mut out = Vec::new();
    let mut width = 0;
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        let mut g = Graph::inference();
        let x = g.input(inputs.select_rows(&idx)?);
        let r = net.forward(&mut g, x, &mut ForwardCtx::eval())?;
        let y = g.value(r.primary_output);
        width = y.row_len();
        out.extend_from_slice(y.data());
    }
    Tensor::new(&[n, width], out)
}

/// Eval-mode task metric plus mean primary and reconstruction losses.
pub fn evaluate(net: &mut CompositeNetwork, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(contract_err!("cannot evaluate on an empty dataset"));
    }
    let n = data.len();
    let (mut sum_p, mut sum_c) = (0.0, 0.0);
    let mut predicted = Vec::with_capacity(n);
    let mut sq_err = 0.0;
    let (mut labels, mut values) = (Vec::new(), None);
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        let mut g = Graph::inference();
        let x = g.input(data.inputs.select_rows(&idx)?);
        let r = net.forward(&mut g, x, &mut ForwardCtx::eval())?;
        let target = batch_target(&data.targets, &mut labels, &mut values, &idx)?;
        let loss = net.composite_loss(&mut g, &r, target, 0.0)?;
        sum_p += loss.primary * idx.len() as f64;
        sum_c += loss.coop.unwrap_or(0.0) * idx.len() as f64;
        let out = g.value(r.primary_output);
        match &data.targets {
            Targets::Classes(_) => predicted.extend((0..out.rows()).map(|i| argmax(out.row(i)))),
            Targets::Values(_) => {
                let t = values.as_ref().expect("regression batch target");
                sq_err += metrics::landmark_error(out, t)? * idx.len() as f64;
            }
        }
    }
    let metric = match &data.targets {
        Targets::Classes(truth) => metrics::accuracy(&predicted, truth)?,
        Targets::Values(_) => sq_err / n as f64,
    };
    Ok(Evaluation {
        metric,
        primary_loss: sum_p / n as f64,
        coop_loss: net.variant.is_coop().then(|| sum_c / n as f64),
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burn_in_epochs_round_up() {
        let mut s = TrainSchedule::default();
        s.total_epochs = 30;
        assert_eq!(s.burn_in_epochs(), 2);
        s.total_epochs = 20;
        assert_eq!(s.burn_in_epochs(), 1);
        s.burn_in_fraction = 0.0;
        assert_eq!(s.burn_in_epochs(), 0);
        s.burn_in_fraction = 0.5;
        s.total_epochs = 10;
        assert_eq!(s.burn_in_epochs(), 5);
    }

    #[test]
    fn schedule_invariants() {
        let mut s = TrainSchedule::default();
        s.burn_in_fraction = 1.0;
        assert!(s.validate().is_err());
        s.burn_in_fraction = 0.1;
        s.alpha = -1.0;
        assert!(s.validate().is_err());
        s.alpha = 1.0;
        s.adam.beta1 = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn trailing_singleton_batch_dropped() {
        let order: Vec<usize> = (0..9).collect();
        let sizes: Vec<usize> = batches(&order, 4).map(<[usize]>::len).collect();
        assert_eq!(sizes, vec![4, 4]);
        let sizes: Vec<usize> = batches(&order, 3).map(<[usize]>::len).collect();
        assert_eq!(sizes, vec![3, 3, 3]);
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, -1.0]), 1);
    }
}
