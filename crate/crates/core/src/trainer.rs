//! Seeded training and evaluation loops and the multi-seed comparison harness.

use std::fmt::Write as _;
use std::ops::Range;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{analytic_cost, compare_reports};
use crate::data::{make_windows, zscore, NormStats, SeriesDataset, Split, SplitRatios, Splits};
use crate::error::{Error, Result};
use crate::metrics::{horizon_slices, improvement_pct, per_step, HorizonSlices, Metrics};
use crate::model::{AmtsfmModel, Batch, ModelConfig, Task};
use crate::params::ParamStore;
use crate::tensor::{Mode, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Self::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Adam { lr, .. } | Self::Sgd { lr, .. } => lr,
        }
    }

    pub fn with_lr(&self, lr: f64) -> Self {
        let mut o = *self;
        match &mut o {
            Self::Adam { lr: l, .. } | Self::Sgd { lr: l, .. } => *l = lr,
        }
        o
    }
}

/// Multiplies the learning rate by `gamma` once each milestone epoch has passed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl StepDecay {
    pub fn factor(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch > m).count();
        self.gamma.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    MaskedMae,
    Mse,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Stf => Self::MaskedMae,
            Task::Ltsf => Self::Mse,
        }
    }
}

/// Scale on which reported metrics are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricScale {
    /// Original scale for STF, normalised for LTSF.
    #[default]
    Auto,
    Original,
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Defaults to masked MAE for STF and MSE for LTSF.
    #[serde(default)]
    pub loss: Option<LossKind>,
    pub seeds: Vec<u64>,
    pub split: SplitRatios,
    /// Use every `train_stride`-th training window.
    #[serde(default = "one")]
    pub train_stride: usize,
    /// Use every `eval_stride`-th validation/test window.
    #[serde(default = "one")]
    pub eval_stride: usize,
    /// Optional cap on optimiser steps per epoch.
    #[serde(default)]
    pub max_batches_per_epoch: Option<usize>,
    #[serde(default)]
    pub metric_scale: MetricScale,
    #[serde(default)]
    pub lr_decay: Option<StepDecay>,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::adam(1e-3),
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            clip_norm: Some(5.0),
            loss: None,
            seeds: vec![0, 1, 2, 3, 4],
            split: SplitRatios::STANDARD,
            train_stride: 1,
            eval_stride: 1,
            max_batches_per_epoch: None,
            metric_scale: MetricScale::Auto,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be finite and non-negative")));
        }
        if self.patience == 0 || self.batch_size == 0 || self.train_stride == 0 || self.eval_stride == 0 {
            return Err(Error::Config("patience, batch size and strides must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if self.lr_decay.as_ref().is_some_and(|d| !(d.gamma > 0.0 && d.gamma <= 1.0)) {
            return Err(Error::Config("lr decay gamma must be in (0, 1]".into()));
        }
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps, .. } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::Config("Adam needs betas in [0,1) and eps > 0".into()));
                }
            }
            Optimizer::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Config("momentum must be in [0,1)".into()));
                }
            }
        }
        Ok(())
    }
}

/// A dataset normalised on its training segment, plus the raw copy for reporting.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw: SeriesDataset,
    pub norm: SeriesDataset,
    pub stats: NormStats,
    pub splits: Splits,
}

impl Prepared {
    pub fn new(raw: SeriesDataset, ratios: SplitRatios) -> Result<Self> {
        let splits = ratios.split(raw.steps())?;
        let (norm, stats) = zscore(&raw, splits.train.clone())?;
        Ok(Self { raw, norm, stats, splits })
    }

    /// Window starts of `split`, thinned by `stride`.
    pub fn windows(&self, split: Split, cfg: &ModelConfig, stride: usize) -> Result<Vec<usize>> {
        let set = make_windows(self.splits.get(split), cfg.lookback, cfg.horizon);
        if let Some(w) = &set.warning {
            log::warn!("{w}");
        }
        Ok(set.starts.into_iter().step_by(stride.max(1)).collect())
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.raw.nodes() != cfg.nodes || self.raw.features() != cfg.in_features || cfg.out_features > cfg.in_features {
            return Err(Error::Config(format!(
                "dataset is {} nodes × {} features; model expects {} × {} → {}",
                self.raw.nodes(),
                self.raw.features(),
                cfg.nodes,
                cfg.in_features,
                cfg.out_features
            )));
        }
        Ok(())
    }
}

/// Stacks windows of `ds` into a model batch and the flattened target mask.
pub fn collate(ds: &SeriesDataset, starts: &[usize], cfg: &ModelConfig) -> Result<(Batch, Vec<bool>)> {
    let (t, h) = (cfg.lookback, cfg.horizon);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut tod = Vec::new();
    let mut dow = Vec::new();
    let mut mask = Vec::new();
    for &s in starts {
        let w = ds.window(s, t, h, cfg.out_features)?;
        x.extend(w.x.into_data());
        y.extend(w.y.into_data());
        tod.extend(w.tod);
        dow.extend(w.dow);
        mask.extend(w.y_mask);
    }
    let b = starts.len();
    let batch = Batch {
        x: Tensor::new(&[b, t, cfg.nodes, cfg.in_features], x)?,
        tod: Some(tod),
        dow: Some(dow),
        targets: Some(Tensor::new(&[b, h, cfg.nodes, cfg.out_features], y)?),
    };
    Ok((batch, mask))
}

/// Masked loss on the tape, averaged over observed entries.
pub fn loss_on_tape(tape: &mut Tape, kind: LossKind, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
    let observed = mask.iter().filter(|&&m| m).count();
    if observed == 0 {
        return Err(Error::UndefinedMetric("loss over a fully masked batch".into()));
    }
    let y = tape.constant(target.clone());
    let m = tape.constant(Tensor::new(target.shape(), mask.iter().map(|&v| f64::from(u8::from(v))).collect())?);
    let diff = tape.sub(pred, y)?;
    let err = match kind {
        LossKind::MaskedMae => tape.abs(diff)?,
        LossKind::Mse => tape.square(diff)?,
    };
    let masked = tape.mul(err, m)?;
    let total = tape.sum(masked)?;
    tape.scale(total, 1.0 / observed as f64)
}

fn loss_value(kind: LossKind, pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    match kind {
        LossKind::MaskedMae => crate::metrics::mae(pred, target, Some(mask)),
        LossKind::Mse => crate::metrics::mse(pred, target, Some(mask)),
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut IndexMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// First and second moments (Adam) or velocity (SGD) per parameter.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    step: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn apply(&mut self, opt: &Optimizer, params: &mut ParamStore, grads: &IndexMap<String, Tensor>) {
        self.step += 1;
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let g = g.data();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            match *opt {
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
                Optimizer::Sgd { lr, momentum } => {
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        m[i] = momentum * m[i] + g[i];
                        *w -= lr * m[i];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: AmtsfmModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch - 1].val_loss
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        s
    }
}

/// Normalised-scale loss of `model` over the windows of `split`.
pub fn validation_loss(model: &AmtsfmModel, data: &Prepared, split: Split, tc: &TrainConfig) -> Result<f64> {
    let cfg = model.config();
    let kind = tc.loss.unwrap_or(LossKind::for_task(cfg.task));
    let p = predict_windows(model, &data.norm, &data.windows(split, cfg, tc.eval_stride)?, tc.batch_size)?;
    loss_value(kind, p.pred.data(), p.target.data(), &p.mask)
}

/// Trains `model` with `seed` controlling data order and dropout, then
/// restores the parameters of the epoch with the lowest validation loss.
pub fn train(model: AmtsfmModel, data: &Prepared, tc: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    tc.validate()?;
    data.check(model.config())?;
    let cfg = model.config().clone();
    let kind = tc.loss.unwrap_or(LossKind::for_task(cfg.task));
    let starts = data.windows(Split::Train, &cfg, tc.train_stride)?;
    if starts.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);
    let mut model = model;
    let mut state = OptimizerState::default();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=tc.max_epochs {
        let factor = tc.lr_decay.as_ref().map_or(1.0, |d| d.factor(epoch));
        let optimizer = tc.optimizer.with_lr(tc.optimizer.lr() * factor);
        let mut order = starts.clone();
        order.shuffle(&mut order_rng);
        let mut batches: Vec<&[usize]> = order.chunks(tc.batch_size).collect();
        if let Some(cap) = tc.max_batches_per_epoch {
            batches.truncate(cap);
        }
        let mut total = 0.0;
        for (bi, chunk) in batches.iter().enumerate() {
            let diverged = || Error::Diverged { epoch, batch: bi + 1 };
            let (batch, mask) = collate(&data.norm, chunk, &cfg)?;
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let step = (|| -> Result<(f64, IndexMap<String, Tensor>)> {
                let pred = model.forward(&mut tape, &bound, &batch, Mode::Train, &mut dropout_rng)?;
                let target = batch.targets.as_ref().expect("collate sets targets");
                let loss = loss_on_tape(&mut tape, kind, pred, target, &mask)?;
                tape.backward(loss)?;
                Ok((tape.value(loss).item(), bound.grads(&tape)))
            })();
            let (loss, mut grads) = match step {
                Ok(v) => v,
                Err(e) if matches!(e.root(), Error::NonFinite(_)) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged());
            }
            if let Some(c) = tc.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            state.apply(&optimizer, model.params_mut(), &grads);
            total += loss;
        }
        let train_loss = total / batches.len() as f64;
        let val_loss = validation_loss(&model, data, Split::Val, tc)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        log::info!("seed {seed} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.push(EpochRecord { epoch, train_loss, val_loss });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => return Err(Error::Config("max_epochs is zero".into())),
    };
    Ok(TrainOutcome { model, history, best_epoch })
}

/// Stacked forecasts `[S, H, N, C_out]` with their targets and observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub pred: Tensor,
    pub target: Tensor,
    pub mask: Vec<bool>,
}

fn predict_windows(model: &AmtsfmModel, ds: &SeriesDataset, starts: &[usize], batch_size: usize) -> Result<Predictions> {
    let cfg = model.config();
    if starts.is_empty() {
        return Err(Error::Data("no windows in the requested split".into()));
    }
    let (mut pred, mut target, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for chunk in starts.chunks(batch_size.max(1)) {
        let (batch, m) = collate(ds, chunk, cfg)?;
        pred.extend(model.predict(&batch)?.into_data());
        target.extend(batch.targets.expect("collate sets targets").into_data());
        mask.extend(m);
    }
    let shape = [starts.len(), cfg.horizon, cfg.nodes, cfg.out_features];
    Ok(Predictions {
        pred: Tensor::new(&shape, pred)?,
        target: Tensor::new(&shape, target)?,
        mask,
    })
}

/// Forecasts for `split` on the reporting scale: predictions are mapped back
/// through the normalisation and compared with raw targets when the scale is original.
pub fn predict_split(model: &AmtsfmModel, data: &Prepared, split: Split, tc: &TrainConfig) -> Result<Predictions> {
    let cfg = model.config();
    data.check(cfg)?;
    let starts = data.windows(split, cfg, tc.eval_stride)?;
    let p = predict_windows(model, &data.norm, &starts, tc.batch_size)?;
    let original = match tc.metric_scale {
        MetricScale::Original => true,
        MetricScale::Normalized => false,
        MetricScale::Auto => cfg.task == Task::Stf,
    };
    if !original {
        return Ok(p);
    }
    let raw = predict_targets(&data.raw, &starts, cfg)?;
    Ok(Predictions {
        pred: data.stats.inverse(&p.pred)?,
        target: raw,
        mask: p.mask,
    })
}

fn predict_targets(ds: &SeriesDataset, starts: &[usize], cfg: &ModelConfig) -> Result<Tensor> {
    let (batch, _) = collate(ds, starts, cfg)?;
    Ok(batch.targets.expect("collate sets targets"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub overall: Metrics,
    pub per_step: Vec<Metrics>,
    /// Steps 3/6/12 and their average; present when the horizon reaches 12.
    pub slices: Option<HorizonSlices>,
}

pub fn metrics_of(p: &Predictions, split: Split) -> Result<EvalReport> {
    let overall = Metrics::compute(p.pred.data(), p.target.data(), Some(&p.mask))?;
    let steps = per_step(p.pred.data(), p.target.data(), Some(&p.mask), p.pred.shape())?;
    let slices = horizon_slices(&steps).ok();
    Ok(EvalReport { split, overall, per_step: steps, slices })
}

pub fn evaluate(model: &AmtsfmModel, data: &Prepared, split: Split, tc: &TrainConfig) -> Result<EvalReport> {
    metrics_of(&predict_split(model, data, split, tc)?, split)
}

/// The headline number of a run: the 12-step average when available, else the overall metrics.
pub fn headline(report: &EvalReport) -> Metrics {
    report.slices.map_or(report.overall, |s| s.avg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub epochs: usize,
    pub first_val_loss: f64,
    pub best_val_loss: f64,
}

impl SeedRun {
    /// Best validation loss at most half of the first epoch's.
    pub fn converged(&self) -> bool {
        self.best_val_loss <= 0.5 * self.first_val_loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub config_hash: String,
    pub runs: Vec<SeedRun>,
    pub mean: Metrics,
    pub std: Metrics,
    pub params: u64,
    pub flops: u64,
}

fn mean_std(items: &[Metrics]) -> (Metrics, Metrics) {
    let n = items.len() as f64;
    let stat = |f: fn(&Metrics) -> f64| {
        let m = items.iter().map(f).sum::<f64>() / n;
        let var = items.iter().map(|x| (f(x) - m).powi(2)).sum::<f64>() / n;
        (m, var.sqrt())
    };
    let (mae, rmse, mape, mse) = (stat(|m| m.mae), stat(|m| m.rmse), stat(|m| m.mape), stat(|m| m.mse));
    (
        Metrics { mae: mae.0, rmse: rmse.0, mape: mape.0, mse: mse.0 },
        Metrics { mae: mae.1, rmse: rmse.1, mape: mape.1, mse: mse.1 },
    )
}

/// Trains `cfg` from scratch once per seed and scores the test split.
pub fn run_variant(name: &str, cfg: &ModelConfig, data: &Prepared, tc: &TrainConfig) -> Result<VariantResult> {
    let mut runs = Vec::new();
    for &seed in &tc.seeds {
        let model = AmtsfmModel::new(cfg.clone(), seed)?;
        let out = train(model, data, tc, seed)?;
        let report = evaluate(&out.model, data, Split::Test, tc)?;
        runs.push(SeedRun {
            seed,
            metrics: headline(&report),
            best_epoch: out.best_epoch,
            epochs: out.history.len(),
            first_val_loss: out.history[0].val_loss,
            best_val_loss: out.best_val_loss(),
        });
    }
    let (mean, std) = mean_std(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>());
    let cost = analytic_cost(cfg, 1);
    Ok(VariantResult {
        name: name.to_string(),
        config_hash: cfg.hash(),
        runs,
        mean,
        std,
        params: cost.total_params,
        flops: cost.total_flops,
    })
}

/// Percent change of every metric from `base` to `other`; positive is worse.
pub fn improvement(base: &Metrics, other: &Metrics) -> Metrics {
    Metrics {
        mae: improvement_pct(base.mae, other.mae),
        rmse: improvement_pct(base.rmse, other.rmse),
        mape: improvement_pct(base.mape, other.mape),
        mse: improvement_pct(base.mse, other.mse),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset: String,
    pub original: VariantResult,
    pub pruned: VariantResult,
    pub improvement: Metrics,
    pub flops_drop_pct: f64,
    pub params_drop_pct: f64,
}

pub fn compare_variants(dataset: &str, original: VariantResult, pruned: VariantResult, cfgs: (&ModelConfig, &ModelConfig)) -> ComparisonReport {
    let cost = compare_reports(analytic_cost(cfgs.0, 1), analytic_cost(cfgs.1, 1));
    ComparisonReport {
        dataset: dataset.to_string(),
        improvement: improvement(&original.mean, &pruned.mean),
        flops_drop_pct: cost.flops_drop_pct,
        params_drop_pct: cost.params_drop_pct,
        original,
        pruned,
    }
}

/// Trains the original and its pruned-from-scratch counterpart on identical seeds.
pub fn run_comparison(cfg: &ModelConfig, pruned: &ModelConfig, data: &Prepared, tc: &TrainConfig) -> Result<ComparisonReport> {
    let a = run_variant("Origin", cfg, data, tc)?;
    let b = run_variant("RAM", pruned, data, tc)?;
    Ok(compare_variants(&data.raw.name, a, b, (cfg, pruned)))
}

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.3}±{std:.3}")
}

impl ComparisonReport {
    /// Original / replaced / improvement columns with FLOPS↓ and Params↓.
    pub fn to_table(&self) -> String {
        let (o, p) = (&self.original, &self.pruned);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} | {:>13} {:>13} {:>13} | {:>13} {:>13} {:>13} | {:>8} {:>8} {:>8} | {:>9} {:>9}",
            "dataset", "MAE", "RMSE", "MAPE(%)", "MAE", "RMSE", "MAPE(%)", "MAE↑", "RMSE↑", "MAPE↑", "FLOPS↓", "Params↓"
        );
        let _ = writeln!(
            s,
            "{:<10} | {:^41} | {:^41} | {:^26} |",
            "", "Original Model", "MLP-replace-attention", "Improvement"
        );
        let _ = writeln!(
            s,
            "{:<10} | {:>13} {:>13} {:>13} | {:>13} {:>13} {:>13} | {:>7.3}% {:>7.3}% {:>7.3}% | {:>8.3}% {:>8.3}%",
            self.dataset,
            pm(o.mean.mae, o.std.mae),
            pm(o.mean.rmse, o.std.rmse),
            pm(o.mean.mape, o.std.mape),
            pm(p.mean.mae, p.std.mae),
            pm(p.mean.rmse, p.std.rmse),
            pm(p.mean.mape, p.std.mape),
            self.improvement.mae,
            self.improvement.rmse,
            self.improvement.mape,
            self.flops_drop_pct,
            self.params_drop_pct
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Named variants measured against the first entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub variants: Vec<VariantResult>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn to_table(&self) -> String {
        let Some(base) = self.variants.first() else {
            return String::new();
        };
        let w = self.variants.iter().map(|v| v.name.len()).max().unwrap_or(0).max(7);
        let mut s = format!(
            "{:<w$} | {:>13} {:>13} {:>13} | {:>8} {:>8} {:>8} | {:>9} {:>9}\n",
            "variant", "MAE", "RMSE", "MAPE(%)", "MAE↑", "RMSE↑", "MAPE↑", "FLOPS↓", "Params↓"
        );
        for v in &self.variants {
            let imp = improvement(&base.mean, &v.mean);
            let _ = writeln!(
                s,
                "{:<w$} | {:>13} {:>13} {:>13} | {:>7.3}% {:>7.3}% {:>7.3}% | {:>8.3}% {:>8.3}%",
                v.name,
                pm(v.mean.mae, v.std.mae),
                pm(v.mean.rmse, v.std.rmse),
                pm(v.mean.mape, v.std.mape),
                imp.mae,
                imp.rmse,
                imp.mape,
                crate::cost::reduction_pct(base.flops, v.flops),
                crate::cost::reduction_pct(base.params, v.params)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

pub fn run_ablation(variants: &[(String, ModelConfig)], data: &Prepared, tc: &TrainConfig) -> Result<AblationReport> {
    let variants = variants
        .iter()
        .map(|(name, cfg)| run_variant(name, cfg, data, tc))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { dataset: data.raw.name.clone(), variants })
}

/// Window starts of `range` thinned by `stride`; exposed for reporting tools.
pub fn strided(range: Range<usize>, stride: usize) -> Vec<usize> {
    range.step_by(stride.max(1)).collect()
}
