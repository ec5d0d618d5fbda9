//! Semi-supervised training loop, evaluation and trial tallies.
//!
//! One step draws a strongly augmented labeled batch and an unlabeled batch,
//! runs three training-mode forward passes (labeled, unlabeled raw,
//! unlabeled augmented), sums the supervised and consistency losses, takes
//! an Adam step and folds the live weights into the EMA shadow. With
//! [`EmaMode::TrainOnEma`] the shadow is copied back into the live weights at
//! the end of every epoch.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{composite_augment, AugmentConfig};
use crate::dataio::{LabeledSample, SignalDataset};
use crate::error::{Error, Result};
use crate::iq::IqVector;
use crate::losses::{consistency_objective, supervised_objective, ConsistencyForm, ConsistencyParams, OneHotLabel};
use crate::netcore::{
    adam_step, apply_bn_updates, batch_tensor, build_model, ema_update, prob_rows, AdamConfig, AdamState, ArchConfig,
    Gradients, Mode, Network, NodeId, ParamSet, Params, Tape, Tensor, WeightSelect,
};
use crate::rng::{rng_from, Rng};

const STREAM_INIT: u64 = 0;
const STREAM_LABELED: u64 = 1;
const STREAM_UNLABELED: u64 = 2;
const STREAM_AUG_LABELED: u64 = 3;
const STREAM_AUG_UNLABELED: u64 = 4;

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    /// No shadow weights; evaluation uses the live weights.
    Off,
    /// Shadow tracks the live weights and is used for evaluation only.
    ShadowOnly,
    /// Shadow is also copied into the live weights after every epoch.
    TrainOnEma,
}

fn d_form() -> ConsistencyForm {
    ConsistencyForm::Swapped
}
fn d_gamma() -> f64 {
    0.9
}
fn d_tau() -> f64 {
    0.95
}
fn d_one() -> f64 {
    1.0
}
fn d_bs() -> usize {
    32
}
fn d_bu() -> usize {
    128
}
fn d_epochs() -> usize {
    60
}
fn d_lr() -> f64 {
    1e-3
}
fn d_ema() -> EmaMode {
    EmaMode::TrainOnEma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_form")]
    pub form: ConsistencyForm,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_one")]
    pub lambda: f64,
    /// Overrides the per-form stop-gradient default on the consistency target.
    #[serde(default)]
    pub stop_grad_target: Option<bool>,
    #[serde(default = "d_bs")]
    pub batch_labeled: usize,
    #[serde(default = "d_bu")]
    pub batch_unlabeled: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_ema")]
    pub ema_mode: EmaMode,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            form: d_form(),
            alpha: 0.0,
            gamma: d_gamma(),
            tau: d_tau(),
            lambda: 1.0,
            stop_grad_target: None,
            batch_labeled: d_bs(),
            batch_unlabeled: d_bu(),
            epochs: d_epochs(),
            lr: d_lr(),
            seed: 0,
            ema_mode: d_ema(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sample_len: usize) -> Result<()> {
        if self.batch_labeled < 1 || self.batch_unlabeled < 1 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} must lie in [0, 1]", self.gamma)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha {} must be a finite value >= 0",
                self.alpha
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if !self.tau.is_finite() || !self.lambda.is_finite() {
            return Err(Error::config("tau and lambda must be finite"));
        }
        self.augment.validate(sample_len)
    }

    pub fn consistency_params(&self) -> ConsistencyParams {
        ConsistencyParams {
            alpha: self.alpha,
            tau: self.tau,
            lambda: self.lambda,
            stop_grad_target: self.stop_grad_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over the epoch's steps.
    pub loss_supervised: f64,
    pub loss_unsupervised: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub supervised: f64,
    pub unsupervised: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub form: Option<ConsistencyForm>,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub step_losses: Vec<StepLoss>,
    /// Epoch (1-based) whose weights were kept.
    pub selected_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    /// Fraction of unlabeled samples that passed the pseudo-label threshold.
    pub retention_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_secs: Option<f64>,
    pub optimizer_steps: u64,
    pub ema_updates: u64,
    pub ema_swaps: u64,
    /// Test accuracy no better than chance plus five points.
    pub chance_level: bool,
}

impl RunReport {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.step_losses.iter().map(|s| s.total).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn is_chance_level(accuracy: f64, num_classes: usize) -> bool {
    accuracy <= 1.0 / num_classes as f64 + 0.05
}

/// Parameters selected by validation accuracy, quantized to checkpoint
/// precision, with the optimizer state at that point.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub network: Network,
    pub params: ParamSet,
    pub adam: AdamState,
    pub report: RunReport,
}

/// Evaluation-mode accuracy and confusion matrix of the selected weights.
pub fn evaluate(net: &Network, params: &ParamSet, split: &[LabeledSample]) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::degenerate("cannot evaluate on an empty split"));
    }
    let classes = net.arch().num_classes;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for chunk in split.chunks(EVAL_BATCH) {
        if let Some(bad) = chunk.iter().find(|s| s.label >= classes) {
            return Err(Error::shape(format!("label {} outside {classes} classes", bad.label)));
        }
        let probs = net.predict(params.selected(), batch_tensor(chunk.iter().map(|s| &s.iq))?)?;
        for (sample, p) in chunk.iter().zip(prob_rows(&probs)) {
            let guess = p.argmax();
            confusion[sample.label][guess] += 1;
            correct += usize::from(guess == sample.label);
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / split.len() as f64,
        confusion,
    })
}

/// Endless stream of labeled indices, reshuffled at every pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cycler {
    fn new(len: usize, rng: Rng) -> Self {
        let mut c = Cycler {
            order: (0..len).collect(),
            pos: len,
            rng,
        };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.reshuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn augment_batch<'a>(
    samples: impl Iterator<Item = &'a IqVector>,
    config: &AugmentConfig,
    seed: u64,
    stream: u64,
    step: u64,
) -> Result<Vec<IqVector>> {
    samples
        .enumerate()
        .map(|(i, s)| composite_augment(s, config, &mut rng_from(seed, &[stream, step, i as u64])))
        .collect()
}

fn backprop_rows(
    net: &Network,
    params: &Params,
    tape: &Tape,
    out: NodeId,
    rows: &[Vec<f64>],
    grads: &mut Gradients,
) -> Result<()> {
    if rows.iter().all(|r| r.iter().all(|&g| g == 0.0)) {
        return Ok(());
    }
    let classes = net.arch().num_classes;
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let d = Tensor::new(vec![rows.len(), classes], data)?;
    tape.backward(params, out, &d, grads);
    Ok(())
}

fn labeled_pass(
    net: &Network,
    params: &Params,
    samples: &[IqVector],
    labels: &[usize],
    grads: &mut Gradients,
) -> Result<(f64, Tape)> {
    let classes = net.arch().num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::shape(format!("label {bad} outside {classes} classes")));
    }
    let (tape, out) = net.forward_tape(params, batch_tensor(samples)?, Mode::Train)?;
    let labels: Vec<OneHotLabel> = labels.iter().map(|&l| OneHotLabel::new(l, classes)).collect();
    let loss = supervised_objective(&prob_rows(tape.value(out)), &labels)?;
    backprop_rows(net, params, &tape, out, &loss.grad, grads)?;
    Ok((loss.value, tape))
}

/// Network inputs of one semi-supervised step, augmentation already applied.
#[derive(Debug, Clone, Copy)]
pub struct StepBatch<'a> {
    pub labeled: &'a [IqVector],
    pub labels: &'a [usize],
    pub unlabeled: &'a [IqVector],
    pub unlabeled_aug: &'a [IqVector],
}

/// Loss terms of one step and the gradient of their sum.
pub struct StepObjective {
    pub supervised: f64,
    pub unsupervised: f64,
    pub retained: usize,
    pub grads: Gradients,
    /// Training-mode tapes, carrying the batch-norm statistics updates.
    pub tapes: Vec<Tape>,
}

/// `L_s + L_u` on one batch with training-mode batch norm, differentiated
/// with respect to every trainable parameter. An empty unlabeled batch gives
/// the supervised term alone.
pub fn step_objective(
    net: &Network,
    params: &Params,
    batch: StepBatch<'_>,
    form: ConsistencyForm,
    cparams: &ConsistencyParams,
) -> Result<StepObjective> {
    if batch.unlabeled.len() != batch.unlabeled_aug.len() {
        return Err(Error::shape(format!(
            "{} unlabeled samples with {} augmented views",
            batch.unlabeled.len(),
            batch.unlabeled_aug.len()
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let (supervised, tape_s) = labeled_pass(net, params, batch.labeled, batch.labels, &mut grads)?;
    let mut tapes = vec![tape_s];
    let (mut unsupervised, mut retained) = (0.0, 0);
    if !batch.unlabeled.is_empty() {
        let (tape_o, out_o) = net.forward_tape(params, batch_tensor(batch.unlabeled)?, Mode::Train)?;
        let (tape_a, out_a) = net.forward_tape(params, batch_tensor(batch.unlabeled_aug)?, Mode::Train)?;
        let c = consistency_objective(
            &prob_rows(tape_o.value(out_o)),
            &prob_rows(tape_a.value(out_a)),
            form,
            cparams,
        )?;
        backprop_rows(net, params, &tape_o, out_o, &c.grad_orig, &mut grads)?;
        backprop_rows(net, params, &tape_a, out_a, &c.grad_aug, &mut grads)?;
        unsupervised = c.value;
        retained = c.retained;
        tapes.push(tape_o);
        tapes.push(tape_a);
    }
    Ok(StepObjective {
        supervised,
        unsupervised,
        retained,
        grads,
        tapes,
    })
}

fn check_inputs(dataset: &SignalDataset, arch: &ArchConfig, config: &TrainConfig) -> Result<()> {
    if dataset.labeled.is_empty() {
        return Err(Error::config("training needs a non-empty labeled set"));
    }
    dataset.validate()?;
    dataset.require_labels_per_class()?;
    arch.validate()?;
    if arch.num_classes != dataset.num_classes {
        return Err(Error::config(format!(
            "architecture has {} classes, dataset has {}",
            arch.num_classes, dataset.num_classes
        )));
    }
    if arch.input_len != dataset.sample_len {
        return Err(Error::config(format!(
            "architecture expects length {}, dataset samples have length {}",
            arch.input_len, dataset.sample_len
        )));
    }
    if dataset.test.is_empty() {
        return Err(Error::config("training needs a non-empty test split"));
    }
    config.validate(dataset.sample_len)
}

/// Running state shared by both training loops.
struct Run<'a> {
    net: Network,
    params: ParamSet,
    adam: AdamState,
    adam_cfg: AdamConfig,
    config: &'a TrainConfig,
    dataset: &'a SignalDataset,
    labeled: Cycler,
    step: u64,
    report: RunReport,
    best: Option<(f64, ParamSet, AdamState)>,
    started: Instant,
}

impl<'a> Run<'a> {
    fn new(
        dataset: &'a SignalDataset,
        arch: &ArchConfig,
        config: &'a TrainConfig,
        form: Option<ConsistencyForm>,
    ) -> Result<Self> {
        check_inputs(dataset, arch, config)?;
        let (net, mut params) = build_model(arch, &mut rng_from(config.seed, &[STREAM_INIT]))?;
        params.select = match config.ema_mode {
            EmaMode::Off => WeightSelect::Live,
            EmaMode::ShadowOnly | EmaMode::TrainOnEma => WeightSelect::Shadow,
        };
        let adam = AdamState::new(&params.live);
        Ok(Run {
            net,
            adam,
            params,
            adam_cfg: AdamConfig::default(),
            config,
            dataset,
            labeled: Cycler::new(dataset.labeled.len(), rng_from(config.seed, &[STREAM_LABELED])),
            step: 0,
            report: RunReport {
                form,
                seed: config.seed,
                epochs: Vec::new(),
                step_losses: Vec::new(),
                selected_epoch: 0,
                best_val_accuracy: None,
                test_accuracy: 0.0,
                confusion: Vec::new(),
                retention_rate: None,
                wall_time_secs: None,
                optimizer_steps: 0,
                ema_updates: 0,
                ema_swaps: 0,
                chance_level: false,
            },
            best: None,
            started: Instant::now(),
        })
    }

    /// Applies the gradients and the batch-norm statistics of `tapes`, then
    /// the EMA update; records the step loss.
    fn finish_step(&mut self, grads: &Gradients, tapes: &[Tape], ls: f64, lu: f64) -> Result<StepLoss> {
        let total = ls + lu;
        if !total.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss at step {} (supervised {ls}, unsupervised {lu})",
                self.step + 1
            )));
        }
        adam_step(
            &mut self.params.live,
            grads,
            &mut self.adam,
            self.config.lr,
            &self.adam_cfg,
        )?;
        for tape in tapes {
            apply_bn_updates(&mut self.params.live, tape);
        }
        if self.config.ema_mode != EmaMode::Off {
            ema_update(&mut self.params.ema, &self.params.live, self.config.gamma)?;
            self.report.ema_updates += 1;
        }
        self.step += 1;
        self.report.optimizer_steps += 1;
        let loss = StepLoss {
            supervised: ls,
            unsupervised: lu,
            total,
        };
        self.report.step_losses.push(loss);
        Ok(loss)
    }

    fn labeled_batch(&mut self) -> Result<(Vec<IqVector>, Vec<usize>)> {
        let idx = self.labeled.take(self.config.batch_labeled);
        let samples = augment_batch(
            idx.iter().map(|&i| &self.dataset.labeled[i].iq),
            &self.config.augment,
            self.config.seed,
            STREAM_AUG_LABELED,
            self.step,
        )?;
        Ok((samples, idx.iter().map(|&i| self.dataset.labeled[i].label).collect()))
    }

    fn supervised_step(&mut self) -> Result<StepLoss> {
        let (samples, labels) = self.labeled_batch()?;
        let mut grads = Gradients::zeros_like(&self.params.live);
        let (ls, tape) = labeled_pass(&self.net, &self.params.live, &samples, &labels, &mut grads)?;
        self.finish_step(&grads, &[tape], ls, 0.0)
    }

    fn end_epoch(&mut self, epoch: usize, ls: f64, lu: f64, observer: &mut dyn FnMut(&EpochStats)) -> Result<()> {
        if self.config.ema_mode == EmaMode::TrainOnEma {
            self.params.live.copy_from(&self.params.ema);
            self.report.ema_swaps += 1;
        }
        let val = if self.dataset.val.is_empty() {
            None
        } else {
            Some(evaluate(&self.net, &self.params, &self.dataset.val)?.accuracy)
        };
        let improved = match (&self.best, val) {
            (None, _) => true,
            (Some((best, ..)), Some(v)) => v > *best,
            (Some(_), None) => true,
        };
        if improved {
            self.best = Some((val.unwrap_or(f64::NEG_INFINITY), self.params.clone(), self.adam.clone()));
            self.report.selected_epoch = epoch;
            self.report.best_val_accuracy = val;
        }
        let stats = EpochStats {
            epoch,
            loss_supervised: ls,
            loss_unsupervised: lu,
            val_accuracy: val,
        };
        observer(&stats);
        self.report.epochs.push(stats);
        Ok(())
    }

    fn finish(mut self) -> Result<TrainOutput> {
        let (_, mut params, adam) = self.best.take().expect("at least one epoch ran");
        params.live.quantize_f32();
        params.ema.quantize_f32();
        let eval = evaluate(&self.net, &params, &self.dataset.test)?;
        self.report.test_accuracy = eval.accuracy;
        self.report.chance_level = is_chance_level(eval.accuracy, self.dataset.num_classes);
        self.report.confusion = eval.confusion;
        self.report.wall_time_secs = Some(self.started.elapsed().as_secs_f64());
        Ok(TrainOutput {
            network: self.net,
            params,
            adam,
            report: self.report,
        })
    }
}

/// Semi-supervised training. An epoch traverses the unlabeled set once in
/// batches of `batch_unlabeled`, drawing a labeled batch per step; with no
/// unlabeled data an epoch is one pass over the labeled set.
pub fn train(dataset: &SignalDataset, arch: &ArchConfig, config: &TrainConfig) -> Result<TrainOutput> {
    train_observed(dataset, arch, config, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    dataset: &SignalDataset,
    arch: &ArchConfig,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutput> {
    let mut run = Run::new(dataset, arch, config, Some(config.form))?;
    let cparams = config.consistency_params();
    let (mut seen, mut retained) = (0usize, 0usize);
    for epoch in 1..=config.epochs {
        let (mut sum_s, mut sum_u, mut steps) = (0.0, 0.0, 0usize);
        if dataset.unlabeled.is_empty() {
            for _ in 0..dataset.labeled.len().div_ceil(config.batch_labeled) {
                let l = run.supervised_step()?;
                sum_s += l.supervised;
                steps += 1;
            }
        } else {
            let mut order: Vec<usize> = (0..dataset.unlabeled.len()).collect();
            order.shuffle(&mut rng_from(config.seed, &[STREAM_UNLABELED, epoch as u64]));
            for chunk in order.chunks(config.batch_unlabeled) {
                let (samples, labels) = run.labeled_batch()?;
                let raw: Vec<IqVector> = chunk.iter().map(|&j| dataset.unlabeled[j].clone()).collect();
                let aug = augment_batch(raw.iter(), &config.augment, config.seed, STREAM_AUG_UNLABELED, run.step)?;
                let batch = StepBatch {
                    labeled: &samples,
                    labels: &labels,
                    unlabeled: &raw,
                    unlabeled_aug: &aug,
                };
                let obj = step_objective(&run.net, &run.params.live, batch, config.form, &cparams)?;
                seen += chunk.len();
                retained += obj.retained;

                let l = run.finish_step(&obj.grads, &obj.tapes, obj.supervised, obj.unsupervised)?;
                sum_s += l.supervised;
                sum_u += l.unsupervised;
                steps += 1;
            }
        }
        run.end_epoch(epoch, sum_s / steps as f64, sum_u / steps as f64, observer)?;
    }
    if config.form == ConsistencyForm::CePseudo && seen > 0 {
        run.report.retention_rate = Some(retained as f64 / seen as f64);
    }
    run.finish()
}

/// Supervised baseline: labeled data only, same augmentation, optimizer,
/// EMA handling and model selection as [`train`].
pub fn train_supervised(dataset: &SignalDataset, arch: &ArchConfig, config: &TrainConfig) -> Result<TrainOutput> {
    train_supervised_observed(dataset, arch, config, &mut |_| {})
}

pub fn train_supervised_observed(
    dataset: &SignalDataset,
    arch: &ArchConfig,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutput> {
    let mut run = Run::new(dataset, arch, config, None)?;
    for epoch in 1..=config.epochs {
        let steps = dataset.labeled.len().div_ceil(config.batch_labeled);
        let mut sum_s = 0.0;
        for _ in 0..steps {
            sum_s += run.supervised_step()?.supervised;
        }
        run.end_epoch(epoch, sum_s / steps as f64, 0.0, observer)?;
    }
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTally {
    /// Runs with test accuracy at or above the threshold.
    pub m: usize,
    /// Runs stuck at chance level.
    pub n: usize,
    pub trials: usize,
    /// Test accuracy of the run with the highest validation accuracy.
    pub best_accuracy: f64,
    pub test_accuracies: Vec<f64>,
}

/// Tallies `trials` runs produced by `runner`, which receives seeds
/// `base_seed + i`.
pub fn tally_trials(
    trials: usize,
    good_threshold: f64,
    num_classes: usize,
    base_seed: u64,
    mut runner: impl FnMut(u64) -> Result<RunReport>,
) -> Result<StabilityTally> {
    if trials < 1 {
        return Err(Error::config("trials must be at least 1"));
    }
    let mut tally = StabilityTally {
        m: 0,
        n: 0,
        trials,
        best_accuracy: 0.0,
        test_accuracies: Vec::with_capacity(trials),
    };
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..trials {
        let report = runner(base_seed.wrapping_add(i as u64))?;
        let acc = report.test_accuracy;
        if is_chance_level(acc, num_classes) {
            tally.n += 1;
        } else if acc >= good_threshold {
            tally.m += 1;
        }
        let val = report.best_val_accuracy.unwrap_or(acc);
        if val > best_val {
            best_val = val;
            tally.best_accuracy = acc;
        }
        tally.test_accuracies.push(acc);
    }
    Ok(tally)
}

/// Runs [`train`] with seeds `config.seed + i` for `i < trials`.
pub fn stability_trials(
    dataset: &SignalDataset,
    arch: &ArchConfig,
    config: &TrainConfig,
    trials: usize,
    good_threshold: f64,
) -> Result<StabilityTally> {
    tally_trials(trials, good_threshold, dataset.num_classes, config.seed, |seed| {
        let cfg = TrainConfig { seed, ..config.clone() };
        Ok(train(dataset, arch, &cfg)?.report)
    })
}
