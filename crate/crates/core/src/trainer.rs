//! The training loop and the likelihood-based rebalancing loop (drop the
//! least-likely samples of over-represented classes, warm-start retrain,
//! keep the snapshot with the best validation macro F1).

use crate::dataio::MaterializedDataset;
use crate::ensemble::{predict_row, ProbabilityTable};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{Network, NetworkGrads, SgdState, CLASS_COUNT, SCORE_OFFSET};
use crate::nn::{softmax_cross_entropy_batch, Mode};
use crate::rng::{derive_seed_indexed, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use std::collections::HashSet;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    /// At least 2: train-mode batchnorm needs more than one sample. A
    /// trailing batch of one is folded into the batch before it.
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Keep a snapshot after every k-th epoch when set.
    pub snapshot_every: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 30,
            batch_size: 8,
            shuffle_seed: 0,
            learning_rate: 0.01,
            momentum: 0.9,
            snapshot_every: None,
        }
    }
}

/// What a finished training run reports.
#[derive(Debug, Clone)]
pub struct TrainRun<T> {
    pub settings: TrainSettings,
    /// Mean cross-entropy per epoch, one entry per epoch run.
    pub loss_trace: Vec<f64>,
    /// (epoch, network) pairs when snapshots were requested.
    pub snapshots: Vec<(usize, Network<T>)>,
}

fn check_compatible<T: Scalar>(net: &Network<T>, data: &MaterializedDataset<T>) -> Result<()> {
    let shape = net.shape();
    if shape.class_count != CLASS_COUNT {
        return Err(Error::Shape(format!(
            "score training expects {CLASS_COUNT} classes, network has {}",
            shape.class_count
        )));
    }
    if shape.input_channels != 3 || shape.input_resolution != data.resolution {
        return Err(Error::Shape(format!(
            "network expects (3, {res}, {res}) input, dataset provides (3, {dr}, {dr})",
            res = shape.input_resolution,
            dr = data.resolution
        )));
    }
    for (i, &s) in data.scores.iter().enumerate() {
        if !(2..=9).contains(&s) {
            return Err(Error::Data(format!("sample {i} has score {s} outside 2..=9")));
        }
    }
    Ok(())
}

fn resolve_active(data_len: usize, active: Option<&[usize]>) -> Result<Vec<usize>> {
    let active: Vec<usize> = match active {
        Some(idxs) => idxs.to_vec(),
        None => (0..data_len).collect(),
    };
    if active.is_empty() {
        return Err(Error::Data("no active samples".into()));
    }
    if let Some(&bad) = active.iter().find(|&&i| i >= data_len) {
        return Err(Error::Data(format!("active index {bad} out of range for {data_len} samples")));
    }
    Ok(active)
}

fn gather_batch<T: Scalar>(data: &MaterializedDataset<T>, idxs: &[usize]) -> Tensor<T> {
    let r = data.resolution;
    let mut batch = Tensor::zeros([idxs.len(), 3, r, r]);
    for (bi, &i) in idxs.iter().enumerate() {
        batch.sample_mut(bi).copy_from_slice(data.images.sample(i));
    }
    batch
}

/// Splits `n` items into batch ranges. A trailing remainder of one sample is
/// folded into the previous batch so batchnorm never sees a lone sample.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + batch_size).min(n);
        if n - end == 1 {
            end = n;
        }
        out.push((start, end));
        start = end;
    }
    out
}

/// Minibatch SGD over the active samples. The network is updated in place;
/// running batchnorm statistics follow every training batch. Deterministic
/// for fixed settings: epoch e shuffles with its own stream derived from
/// `shuffle_seed`.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &MaterializedDataset<T>,
    active: Option<&[usize]>,
    settings: &TrainSettings,
) -> Result<TrainRun<T>> {
    check_compatible(net, data)?;
    let active = resolve_active(data.len(), active)?;
    if settings.batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size {} too small: train-mode batchnorm needs at least 2 samples",
            settings.batch_size
        )));
    }
    if active.len() < 2 {
        return Err(Error::Data("training needs at least 2 samples".into()));
    }
    if settings.snapshot_every == Some(0) {
        return Err(Error::Config("snapshot interval must be positive".into()));
    }
    if !(settings.learning_rate.is_finite() && settings.learning_rate > 0.0) {
        return Err(Error::Config(format!("learning rate {} must be positive", settings.learning_rate)));
    }
    if !(0.0..1.0).contains(&settings.momentum) {
        return Err(Error::Config(format!("momentum {} outside [0, 1)", settings.momentum)));
    }

    let mut run = TrainRun { settings: settings.clone(), loss_trace: Vec::with_capacity(settings.epochs), snapshots: Vec::new() };
    if settings.epochs == 0 {
        return Ok(run);
    }
    net.meta.learning_rate = settings.learning_rate;
    net.meta.momentum = settings.momentum;
    net.meta.seed = settings.shuffle_seed;
    let mut state = SgdState::new(net);

    let mut order = active;
    for epoch in 1..=settings.epochs {
        let mut rng = rng_from_seed(derive_seed_indexed(settings.shuffle_seed, "epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (start, end) in batch_ranges(order.len(), settings.batch_size) {
            let idxs = &order[start..end];
            let batch = gather_batch(data, idxs);
            let labels: Vec<usize> = idxs.iter().map(|&i| data.class_index(i)).collect();
            let trace = net.forward_trace(&batch, Mode::Train)?;
            net.commit_running_stats(&trace);
            let loss = softmax_cross_entropy_batch(&trace.logits, &labels)?;
            let (grads, _): (NetworkGrads<T>, _) = net.backward(&batch, &trace, &loss.logit_grad, false)?;
            net.sgd_step(&grads, &mut state)?;
            epoch_loss += loss.mean_loss * idxs.len() as f64;
        }
        run.loss_trace.push(epoch_loss / order.len() as f64);
        net.meta.epochs_trained += 1;
        if settings.snapshot_every.is_some_and(|k| epoch % k == 0) {
            run.snapshots.push((epoch, net.clone()));
        }
    }
    Ok(run)
}

/// Softmax rows (widened to f64) for the active samples, in active order.
pub fn class_probabilities<T: Scalar>(
    net: &Network<T>,
    data: &MaterializedDataset<T>,
    active: Option<&[usize]>,
    batch_size: usize,
) -> Result<Vec<[f64; CLASS_COUNT]>> {
    check_compatible(net, data)?;
    let active = resolve_active(data.len(), active)?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rows = Vec::with_capacity(active.len());
    for chunk in active.chunks(batch_size) {
        let batch = gather_batch(data, chunk);
        let artifacts = net.forward(&batch, Mode::Infer)?;
        for bi in 0..chunk.len() {
            let row_t = &artifacts.probs.values()[bi * CLASS_COUNT..(bi + 1) * CLASS_COUNT];
            let mut row = [0.0f64; CLASS_COUNT];
            for (dst, v) in row.iter_mut().zip(row_t) {
                *dst = v.widen();
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Predicted scores for the active samples (argmax, ties toward the lower
/// score), in active order.
pub fn predict_dataset<T: Scalar>(
    net: &Network<T>,
    data: &MaterializedDataset<T>,
    active: Option<&[usize]>,
    batch_size: usize,
) -> Result<Vec<u8>> {
    Ok(class_probabilities(net, data, active, batch_size)?
        .iter()
        .map(predict_row)
        .collect())
}

/// Full prediction table for export, keyed by sample id.
pub fn probability_table<T: Scalar>(
    net: &Network<T>,
    data: &MaterializedDataset<T>,
    batch_size: usize,
    model_name: &str,
) -> Result<ProbabilityTable> {
    let rows = class_probabilities(net, data, None, batch_size)?;
    ProbabilityTable::from_rows(
        model_name,
        data.ids.iter().cloned().zip(rows).collect(),
    )
}

/// Plain accuracy of the network on the active samples.
pub fn accuracy<T: Scalar>(
    net: &Network<T>,
    data: &MaterializedDataset<T>,
    active: Option<&[usize]>,
    batch_size: usize,
) -> Result<f64> {
    let active_vec = resolve_active(data.len(), active)?;
    let preds = predict_dataset(net, data, Some(&active_vec), batch_size)?;
    let hits = preds
        .iter()
        .zip(&active_vec)
        .filter(|(p, &i)| **p == data.scores[i])
        .count();
    Ok(hits as f64 / active_vec.len() as f64)
}

/// Macro F1 of the network's predictions over a dataset.
pub fn macro_f1<T: Scalar>(net: &Network<T>, data: &MaterializedDataset<T>, batch_size: usize) -> Result<f64> {
    let preds = predict_dataset(net, data, None, batch_size)?;
    let classes: Vec<u8> = (0..CLASS_COUNT as u8).map(|i| i + SCORE_OFFSET).collect();
    Ok(metrics::evaluate(&data.scores, &preds, &classes)?.macro_f1)
}

/// Rebalancing plan: how many drop/retrain rounds, how aggressively to
/// drop, and how each retraining round runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrlPlan {
    pub iterations: usize,
    /// Fraction of each over-represented class dropped per round, in (0, 1).
    pub drop_fraction: f64,
    pub train: TrainSettings,
}

impl Default for RsrlPlan {
    fn default() -> Self {
        RsrlPlan { iterations: 5, drop_fraction: 0.1, train: TrainSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedSample {
    pub id: String,
    pub score: u8,
    /// The model's softmax probability of the sample's true class at the
    /// moment it was dropped.
    pub likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsrlIteration {
    /// 1-based round index; doubles as the snapshot id.
    pub index: usize,
    pub dropped: Vec<DroppedSample>,
    /// Training samples remaining after this round's drop.
    pub surviving: usize,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RsrlTrace {
    pub iterations: Vec<RsrlIteration>,
    /// Index of the selected snapshot; `None` when no rounds ran.
    pub best_iteration: Option<usize>,
}

/// One rebalancing round's drop decision, separated out so it can be tested
/// against a sort oracle directly. Returns dropped samples grouped by class
/// ascending, likelihood ascending within a class (ties by id).
pub fn drop_set<T: Scalar>(
    net: &Network<T>,
    data: &MaterializedDataset<T>,
    active: &[usize],
    drop_fraction: f64,
    batch_size: usize,
) -> Result<Vec<DroppedSample>> {
    let mut counts = [0usize; CLASS_COUNT];
    for &i in active {
        counts[data.class_index(i)] += 1;
    }
    // Mean over all eight declared classes, empty ones included.
    let mean = active.len() as f64 / CLASS_COUNT as f64;
    let probs = class_probabilities(net, data, Some(active), batch_size)?;
    let mut dropped = Vec::new();
    for class in 0..CLASS_COUNT {
        if (counts[class] as f64) <= mean {
            continue;
        }
        let mut members: Vec<(f64, &str)> = active
            .iter()
            .zip(&probs)
            .filter(|(&i, _)| data.class_index(i) == class)
            .map(|(&i, row)| (row[class], data.ids[i].as_str()))
            .collect();
        members.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(b.1)));
        let k = (drop_fraction * counts[class] as f64).floor() as usize;
        for (likelihood, id) in members.into_iter().take(k) {
            dropped.push(DroppedSample {
                id: id.to_string(),
                score: class as u8 + SCORE_OFFSET,
                likelihood,
            });
        }
    }
    Ok(dropped)
}

/// The full rebalancing loop. Per round: find classes whose sample count
/// strictly exceeds the mean per-class count, drop their floor(fraction *
/// count) lowest-likelihood samples (scored by the current model), retrain
/// from the current weights with fresh optimizer velocity, and snapshot.
/// Returns the snapshot with the best validation macro F1, earliest on ties;
/// zero rounds return the initial network untouched.
pub fn rsrl<T: Scalar>(
    initial: &Network<T>,
    train_data: &MaterializedDataset<T>,
    val_data: &MaterializedDataset<T>,
    plan: &RsrlPlan,
) -> Result<(Network<T>, RsrlTrace)> {
    check_compatible(initial, train_data)?;
    check_compatible(initial, val_data)?;
    if !(plan.drop_fraction > 0.0 && plan.drop_fraction < 1.0) {
        return Err(Error::Config(format!("drop fraction {} outside (0, 1)", plan.drop_fraction)));
    }
    if val_data.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let train_ids: HashSet<&str> = train_data.ids.iter().map(String::as_str).collect();
    if let Some(shared) = val_data.ids.iter().find(|id| train_ids.contains(id.as_str())) {
        return Err(Error::Data(format!("id {shared} appears in both training and validation splits")));
    }

    let mut trace = RsrlTrace::default();
    if plan.iterations == 0 {
        return Ok((initial.clone(), trace));
    }

    let mut net = initial.clone();
    let mut active: Vec<usize> = (0..train_data.len()).collect();
    let mut best: Option<(f64, usize, Network<T>)> = None;
    for round in 1..=plan.iterations {
        let dropped = drop_set(&net, train_data, &active, plan.drop_fraction, plan.train.batch_size)?;
        let drop_ids: HashSet<&str> = dropped.iter().map(|d| d.id.as_str()).collect();
        active.retain(|&i| !drop_ids.contains(train_data.ids[i].as_str()));

        let mut settings = plan.train.clone();
        settings.shuffle_seed = derive_seed_indexed(plan.train.shuffle_seed, "rebalance-round", round as u64);
        net.meta.rsrl_iteration = round as u32;
        train(&mut net, train_data, Some(&active), &settings)?;

        let val_macro_f1 = macro_f1(&net, val_data, plan.train.batch_size)?;
        if best.as_ref().is_none_or(|(f, _, _)| val_macro_f1 > *f) {
            best = Some((val_macro_f1, round, net.clone()));
        }
        trace.iterations.push(RsrlIteration { index: round, dropped, surviving: active.len(), val_macro_f1 });
    }
    let (_, best_round, best_net) = best.expect("at least one round ran");
    trace.best_iteration = Some(best_round);
    Ok((best_net, trace))
}

/// Line-oriented trace log: one record per round, then a final `best=` line.
/// Dropped samples render as `id:score:likelihood` with exact decimal
/// likelihoods, so parsing a serialized trace reproduces it bit for bit.
pub fn serialize_trace(trace: &RsrlTrace) -> String {
    let mut out = String::new();
    for it in &trace.iterations {
        let _ = write!(out, "iteration={} surviving={} snapshot={} val_macro_f1={} dropped=", it.index, it.surviving, it.index, it.val_macro_f1);
        for (i, d) in it.dropped.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}:{}:{}", d.id, d.score, d.likelihood);
        }
        out.push('\n');
    }
    match trace.best_iteration {
        Some(b) => out.push_str(&format!("best={b}\n")),
        None => out.push_str("best=none\n"),
    }
    out
}

pub fn parse_trace(text: &str) -> Result<RsrlTrace> {
    let mut trace = RsrlTrace::default();
    let mut saw_best = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Format(format!("trace line {}: {msg}", lineno + 1));
        if let Some(best) = line.strip_prefix("best=") {
            if saw_best {
                return Err(at("duplicate best line".into()));
            }
            saw_best = true;
            trace.best_iteration = match best {
                "none" => None,
                n => Some(n.parse().map_err(|_| at(format!("bad best index {n:?}")))?),
            };
            continue;
        }
        let mut fields = line.split(' ');
        let mut take = |key: &str| -> Result<String> {
            let field = fields.next().ok_or_else(|| at(format!("missing field {key}")))?;
            field
                .strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| at(format!("expected {key}=..., found {field:?}")))
        };
        let index: usize = take("iteration")?.parse().map_err(|e| at(format!("bad iteration: {e}")))?;
        let surviving: usize = take("surviving")?.parse().map_err(|e| at(format!("bad surviving: {e}")))?;
        let snapshot: usize = take("snapshot")?.parse().map_err(|e| at(format!("bad snapshot: {e}")))?;
        if snapshot != index {
            return Err(at(format!("snapshot {snapshot} does not match iteration {index}")));
        }
        let val_macro_f1: f64 = take("val_macro_f1")?.parse().map_err(|e| at(format!("bad val_macro_f1: {e}")))?;
        let dropped_text = take("dropped")?;
        let mut dropped = Vec::new();
        if !dropped_text.is_empty() {
            for item in dropped_text.split(',') {
                let mut parts = item.split(':');
                let (id, score, likelihood) = (parts.next(), parts.next(), parts.next());
                let (Some(id), Some(score), Some(likelihood), None) = (id, score, likelihood, parts.next()) else {
                    return Err(at(format!("bad dropped entry {item:?}")));
                };
                dropped.push(DroppedSample {
                    id: id.to_string(),
                    score: score.parse().map_err(|e| at(format!("bad dropped score: {e}")))?,
                    likelihood: likelihood.parse().map_err(|e| at(format!("bad likelihood: {e}")))?,
                });
            }
        }
        trace.iterations.push(RsrlIteration { index, dropped, surviving, val_macro_f1 });
    }
    if !saw_best {
        return Err(Error::Format("trace log has no best= line".into()));
    }
    Ok(trace)
}
