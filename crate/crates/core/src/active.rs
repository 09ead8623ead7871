//! Pool-based active learning with discrepancy-driven acquisition and a
//! moving-average teacher for semisupervised training.
//!
//! One cycle trains a model on the labeled pool, scores every unlabeled
//! sample, and moves the `b` highest scorers into the labeled pool. The COD
//! sampler scores a sample by how much the model's output on it changed
//! since the previous cycle; for the first cycle the previous model is the
//! random initialisation.
//!
//! With `semi_enabled`, each optimizer step minimises
//! `CE(labeled batch) + lambda * mean ||f(x; w) - f(x; w_teacher)||^2` over an
//! unlabeled batch, and the teacher follows `w_teacher <- alpha w_teacher +
//! (1 - alpha) w` after every step.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimation::{self, output_vjp, outputs, OutputSpace, Snapshot};
use crate::model::{
    self, backprop, forward, forward_tape, loss_ce, sgd_step, softmax, LossGrad, LossKind, MlpSpec,
    OptimState, ParamVector, Sample, TrainConfig, TrainHooks,
};
use crate::rng;
use crate::uncertainty::Uncertainty;

/// `floor(n * frac)`, tolerant of representation error in `frac`.
pub fn count_for(n: usize, frac: f64) -> usize {
    (n as f64 * frac + 1e-9).floor() as usize
}

/// Labeled / unlabeled partition of the training positions `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolState {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    cycle: usize,
}

impl PoolState {
    pub fn from_labeled(n: usize, labeled: &[usize]) -> Result<Self> {
        let mut mask = vec![false; n];
        for &i in labeled {
            if i >= n || mask[i] {
                return Err(Error::invalid(format!("bad labeled index {i}")));
            }
            mask[i] = true;
        }
        Ok(Self {
            labeled: (0..n).filter(|&i| mask[i]).collect(),
            unlabeled: (0..n).filter(|&i| !mask[i]).collect(),
            cycle: 0,
        })
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Move `chosen` (all currently unlabeled) into the labeled pool.
    pub fn annotate(&mut self, chosen: &[usize]) -> Result<()> {
        let mut take = vec![false; self.len()];
        for &i in chosen {
            if i >= take.len() || take[i] || self.unlabeled.binary_search(&i).is_err() {
                return Err(Error::invalid(format!("index {i} is not an unlabeled sample")));
            }
            take[i] = true;
        }
        self.labeled.extend_from_slice(chosen);
        self.labeled.sort_unstable();
        self.unlabeled.retain(|&i| !take[i]);
        self.cycle += 1;
        Ok(())
    }
}

/// Uniformly random initial labeled pool of `floor(n * start_frac)` samples.
pub fn init_pool(n_train: usize, start_frac: f64, seed: u64) -> Result<PoolState> {
    let k = count_for(n_train, start_frac);
    if k == 0 || k > n_train {
        return Err(Error::invalid(format!(
            "start fraction {start_frac} of {n_train} samples gives an empty or overfull pool"
        )));
    }
    let mut rng = rng::rng_for(seed, &[rng::TAG_POOL]);
    let chosen = rand::seq::index::sample(&mut rng, n_train, k).into_vec();
    PoolState::from_labeled(n_train, &chosen)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Cod,
    Emaod,
    Random,
    Entropy,
    LeastConf,
    MarginConf,
    RatioConf,
}

impl Sampler {
    pub const ALL: [Sampler; 7] = [
        Sampler::Cod,
        Sampler::Emaod,
        Sampler::Random,
        Sampler::Entropy,
        Sampler::LeastConf,
        Sampler::MarginConf,
        Sampler::RatioConf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Sampler::Cod => "cod",
            Sampler::Emaod => "emaod",
            Sampler::Random => "random",
            Sampler::Entropy => "entropy",
            Sampler::LeastConf => "least_conf",
            Sampler::MarginConf => "margin_conf",
            Sampler::RatioConf => "ratio_conf",
        }
    }

    fn uncertainty(self) -> Option<Uncertainty> {
        match self {
            Sampler::Entropy => Some(Uncertainty::Entropy),
            Sampler::LeastConf => Some(Uncertainty::LeastConf),
            Sampler::MarginConf => Some(Uncertainty::MarginConf),
            Sampler::RatioConf => Some(Uncertainty::RatioConf),
            _ => None,
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sampler::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Sampler::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown sampler `{s}`; valid samplers: {}", valid.join(", ")))
            })
    }
}

/// How the task model is initialised at the start of each cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Retrain from the run's initial weights every cycle.
    SameInit,
    /// Retrain from a new random initialisation every cycle.
    #[default]
    FreshInit,
    /// Continue from the previous cycle's weights.
    WarmStart,
}

fn d_start() -> f64 {
    0.1
}
fn d_budget() -> f64 {
    0.05
}
fn d_cycles() -> usize {
    7
}
fn d_sampler() -> Sampler {
    Sampler::Cod
}
fn d_true() -> bool {
    true
}
fn d_lambda() -> f64 {
    0.05
}
fn d_alpha() -> f64 {
    0.999
}

/// Active-learning schedule and semisupervised settings. Defaults: start at
/// 10% labeled, add 5% per cycle for 7 cycles, lambda 0.05, alpha 0.999.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ALConfig {
    #[serde(default = "d_start")]
    pub start_frac: f64,
    #[serde(default = "d_budget")]
    pub budget_frac: f64,
    #[serde(default = "d_cycles")]
    pub cycles: usize,
    #[serde(default = "d_sampler")]
    pub sampler: Sampler,
    #[serde(default = "d_true")]
    pub semi_enabled: bool,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Defaults to the labeled batch size.
    #[serde(default)]
    pub unlabeled_batch_size: Option<usize>,
    #[serde(default)]
    pub output_space: OutputSpace,
    /// Std of Gaussian jitter added to the student's unlabeled inputs in the
    /// consistency term; the teacher sees clean inputs.
    #[serde(default)]
    pub consistency_noise: f64,
    #[serde(default)]
    pub init_mode: InitMode,
    /// Record wall-clock seconds in cycle records (makes outputs
    /// non-reproducible byte for byte).
    #[serde(default)]
    pub record_timing: bool,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            start_frac: d_start(),
            budget_frac: d_budget(),
            cycles: d_cycles(),
            sampler: d_sampler(),
            semi_enabled: true,
            lambda: d_lambda(),
            alpha: d_alpha(),
            unlabeled_batch_size: None,
            output_space: OutputSpace::Probs,
            consistency_noise: 0.0,
            init_mode: InitMode::FreshInit,
            record_timing: false,
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("active.{field}"), msg));
        if !(self.start_frac > 0.0 && self.start_frac < 1.0) {
            return bad("start_frac", "must lie in (0, 1)");
        }
        if !(self.budget_frac > 0.0 && self.budget_frac < 1.0) {
            return bad("budget_frac", "must lie in (0, 1)");
        }
        if self.cycles == 0 {
            return bad("cycles", "must be positive");
        }
        if self.start_frac + self.cycles as f64 * self.budget_frac > 1.0 + 1e-9 {
            return bad("cycles", "start_frac + cycles * budget_frac exceeds 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", "must lie in [0, 1)");
        }
        if !(self.consistency_noise >= 0.0 && self.consistency_noise.is_finite()) {
            return bad("consistency_noise", "must be nonnegative");
        }
        if self.unlabeled_batch_size == Some(0) {
            return bad("unlabeled_batch_size", "must be positive");
        }
        Ok(())
    }

    fn tracks_teacher(&self) -> bool {
        self.semi_enabled || self.sampler == Sampler::Emaod
    }
}

// ---------------------------------------------------------------------------
// Teacher and consistency loss

/// `alpha * teacher + (1 - alpha) * w`
pub fn ema_update(teacher: &ParamVector, w: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if teacher.len() != w.len() {
        return Err(Error::invalid("teacher and student shapes differ"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid("EMA decay must lie in [0, 1)"));
    }
    Ok(ParamVector::raw(
        teacher
            .as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(t, v)| alpha * t + (1.0 - alpha) * v)
            .collect(),
    ))
}

/// `mean_x ||f(x; w) - f(x; teacher)||^2` and its gradient w.r.t. `w`; the
/// teacher is a constant.
pub fn unsup_loss_and_grad(
    spec: &MlpSpec,
    w: &ParamVector,
    teacher: &ParamVector,
    batch: &[&[f64]],
    space: OutputSpace,
) -> Result<LossGrad> {
    consistency_loss_and_grad(spec, w, teacher, batch, batch, space)
}

/// Like [`unsup_loss_and_grad`] but the student sees `student_inputs[i]`
/// where the teacher sees `teacher_inputs[i]`.
pub fn consistency_loss_and_grad<S: AsRef<[f64]>>(
    spec: &MlpSpec,
    w: &ParamVector,
    teacher: &ParamVector,
    student_inputs: &[S],
    teacher_inputs: &[&[f64]],
    space: OutputSpace,
) -> Result<LossGrad> {
    if student_inputs.is_empty() {
        return Err(Error::invalid("empty unlabeled batch"));
    }
    if student_inputs.len() != teacher_inputs.len() {
        return Err(Error::invalid("student and teacher batches differ in length"));
    }
    if w.len() != spec.n_params() || teacher.len() != spec.n_params() {
        return Err(Error::invalid("parameter vector does not match spec"));
    }
    let scale = 1.0 / student_inputs.len() as f64;
    let mut grad = vec![0.0; spec.n_params()];
    let mut total = 0.0;
    for (xs, xt) in student_inputs.iter().zip(teacher_inputs) {
        let target = outputs(spec, teacher, xt, space)?;
        let x = xs.as_ref();
        if x.len() != spec.input_dim() {
            return Err(Error::invalid("input dimension mismatch"));
        }
        let tape = forward_tape(spec, w, x);
        let out = match space {
            OutputSpace::Logits => tape.output().to_vec(),
            OutputSpace::Probs => softmax(tape.output()),
        };
        let diff: Vec<f64> = out.iter().zip(&target).map(|(a, b)| a - b).collect();
        total += diff.iter().map(|d| d * d).sum::<f64>();
        let d_out: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
        let d_logits = output_vjp(space, &out, &d_out);
        backprop(spec, w, &tape, &d_logits, scale, &mut grad);
    }
    Ok(LossGrad {
        loss: total * scale,
        grad: ParamVector::raw(grad),
    })
}

/// Settings of one semisupervised optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct SemiStep<'a> {
    pub lambda: f64,
    pub alpha: f64,
    pub space: OutputSpace,
    pub config: &'a TrainConfig,
    pub epoch: usize,
}

/// One SGD step on `CE(labeled) + lambda * consistency(unlabeled)`, then one
/// teacher update. Returns the combined loss before the step.
pub fn combined_step(
    spec: &MlpSpec,
    state: &mut OptimState,
    labeled: &[Sample<'_>],
    unlabeled: &[&[f64]],
    teacher: &mut ParamVector,
    step: SemiStep<'_>,
) -> Result<f64> {
    if unlabeled.is_empty() {
        return Err(Error::invalid("empty unlabeled batch"));
    }
    let lg = model::grad_combined(spec, &state.params, labeled, LossKind::CrossEntropy, step.lambda, |w| {
        unsup_loss_and_grad(spec, w, teacher, unlabeled, step.space)
    })?;
    sgd_step(state, &lg.grad, step.config, step.epoch)?;
    *teacher = ema_update(teacher, &state.params, step.alpha)?;
    Ok(lg.loss)
}

/// Training hooks for one cycle: optional consistency term and teacher upkeep.
struct CycleHooks<'a> {
    spec: &'a MlpSpec,
    unlabeled: Vec<&'a [f64]>,
    teacher: Option<ParamVector>,
    lambda: f64,
    alpha: f64,
    semi: bool,
    batch_size: usize,
    space: OutputSpace,
    noise: f64,
    rng: rng::Rng,
    scratch: Vec<&'a [f64]>,
}

impl TrainHooks for CycleHooks<'_> {
    fn augment(&mut self, params: &ParamVector, lg: &mut LossGrad) -> Result<()> {
        if !self.semi || self.lambda == 0.0 || self.unlabeled.is_empty() {
            return Ok(());
        }
        let teacher = self.teacher.as_ref().expect("teacher tracked when semi is on");
        self.scratch.clear();
        for _ in 0..self.batch_size {
            let i = self.rng.random_range(0..self.unlabeled.len());
            self.scratch.push(self.unlabeled[i]);
        }
        let extra = if self.noise > 0.0 {
            let jitter = Normal::new(0.0, self.noise).map_err(|e| Error::invalid(e.to_string()))?;
            let noisy: Vec<Vec<f64>> = self
                .scratch
                .iter()
                .map(|x| x.iter().map(|v| v + jitter.sample(&mut self.rng)).collect())
                .collect();
            consistency_loss_and_grad(self.spec, params, teacher, &noisy, &self.scratch, self.space)?
        } else {
            unsup_loss_and_grad(self.spec, params, teacher, &self.scratch, self.space)?
        };
        lg.loss += self.lambda * extra.loss;
        lg.grad.axpy(self.lambda, &extra.grad);
        Ok(())
    }

    fn after_step(&mut self, state: &OptimState, _epoch: usize) -> Result<()> {
        if let Some(t) = self.teacher.as_mut() {
            *t = ema_update(t, &state.params, self.alpha)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Acquisition

/// Models available to an acquisition function.
#[derive(Clone, Copy, Debug)]
pub struct ScoreContext<'a> {
    pub current: &'a Snapshot,
    /// End-of-cycle model of the previous cycle (random init for cycle 1).
    pub previous: Option<&'a Snapshot>,
    pub teacher: Option<&'a ParamVector>,
    pub space: OutputSpace,
    /// Seed for the random sampler.
    pub seed: u64,
}

/// Per-sample informativeness; higher means acquire first.
pub fn acquisition_scores(
    sampler: Sampler,
    spec: &MlpSpec,
    ctx: &ScoreContext<'_>,
    xs: &[&[f64]],
) -> Result<Vec<f64>> {
    match sampler {
        Sampler::Cod => {
            let prev = ctx
                .previous
                .ok_or_else(|| Error::invalid("cod needs the previous cycle's snapshot"))?;
            estimation::cod_scores(spec, ctx.current, prev, xs, ctx.space)
        }
        Sampler::Emaod => {
            let teacher = ctx
                .teacher
                .ok_or_else(|| Error::invalid("emaod needs a teacher model"))?;
            estimation::emaod_scores(spec, &ctx.current.params, teacher, xs, ctx.space)
        }
        Sampler::Random => {
            let mut rng = rng::rng_for(ctx.seed, &[rng::TAG_ACQUIRE, ctx.current.cycle as u64]);
            Ok(xs.iter().map(|_| rng.random::<f64>()).collect())
        }
        other => {
            let kind = other.uncertainty().unwrap();
            xs.iter()
                .map(|x| Ok(kind.score(&softmax(&forward(spec, &ctx.current.params, x)?))))
                .collect()
        }
    }
}

/// The `b` candidates with the largest scores (ties: smaller index first),
/// returned in ascending index order. `scores[i]` belongs to `candidates[i]`.
pub fn select_top_b(scores: &[f64], candidates: &[usize], b: usize) -> Result<Vec<usize>> {
    if scores.len() != candidates.len() {
        return Err(Error::invalid("one score per candidate required"));
    }
    if b > candidates.len() {
        return Err(Error::invalid(format!(
            "budget {b} exceeds the {} unlabeled samples",
            candidates.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN acquisition score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &c| {
        scores[c]
            .total_cmp(&scores[a])
            .then(candidates[a].cmp(&candidates[c]))
    });
    let mut chosen: Vec<usize> = order[..b].iter().map(|&i| candidates[i]).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Replace each label, with probability `p`, by a uniform draw from the other
/// classes.
pub fn inject_label_noise(labels: &[usize], p: f64, n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("noise probability must lie in [0, 1]"));
    }
    if p == 0.0 {
        return Ok(labels.to_vec());
    }
    if n_classes < 2 {
        return Err(Error::invalid("label noise needs at least two classes"));
    }
    let mut rng = rng::rng_for(seed, &[rng::TAG_NOISE]);
    labels
        .iter()
        .map(|&y| {
            if y >= n_classes {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            if rng.random::<f64>() < p {
                let r = rng.random_range(0..n_classes - 1);
                Ok(if r >= y { r + 1 } else { r })
            } else {
                Ok(y)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// The loop

/// Metrics of one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// 1-based.
    pub cycle: usize,
    /// Labeled samples the cycle's model was trained on.
    pub labeled: usize,
    pub labeled_frac: f64,
    pub test_acc: f64,
    /// NaN for classes absent from the test split.
    pub per_class_acc: Vec<f64>,
    /// Mean supervised loss of the last training epoch.
    pub mean_train_loss: f64,
    /// Mean COD over the unlabeled pool at the end of the cycle.
    pub mean_cod: f64,
    /// Mean cross-entropy over the unlabeled pool, computed with labels the
    /// learner never saw.
    pub mean_true_loss: f64,
    /// Wall-clock seconds of the cycle (0 unless timing is recorded).
    pub seconds: f64,
    /// Wall-clock seconds spent computing acquisition scores.
    pub acquisition_seconds: f64,
}

/// Per-sample scores of one cycle's unlabeled pool, kept for analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleScores {
    pub cycle: usize,
    /// Dataset indices of the unlabeled samples.
    pub samples: Vec<usize>,
    pub cod: Vec<f64>,
    pub true_loss: Vec<f64>,
    pub acquisition: Vec<f64>,
    pub selected: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct ActiveRun {
    pub records: Vec<CycleRecord>,
    pub scores: Vec<CycleScores>,
    /// End-of-cycle parameters, one per cycle.
    pub cycle_params: Vec<ParamVector>,
    pub pool: PoolState,
}

impl ActiveRun {
    pub fn final_params(&self) -> &ParamVector {
        self.cycle_params.last().expect("at least one cycle")
    }
}

/// Accuracy and per-class accuracy of `params` on `indices`.
pub fn evaluate(
    spec: &MlpSpec,
    params: &ParamVector,
    ds: &Dataset,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let mut correct = vec![0usize; ds.n_classes];
    let mut total = vec![0usize; ds.n_classes];
    for &i in indices {
        let pred = model::argmax(&forward(spec, params, ds.x(i))?);
        total[ds.labels[i]] += 1;
        if pred == ds.labels[i] {
            correct[ds.labels[i]] += 1;
        }
    }
    let all: usize = correct.iter().sum();
    let acc = if indices.is_empty() { f64::NAN } else { all as f64 / indices.len() as f64 };
    let per_class = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { f64::NAN } else { c as f64 / t as f64 })
        .collect();
    Ok((acc, per_class))
}

/// Run the full active-learning schedule on `ds`'s train split; the test
/// split is only used for evaluation.
pub fn run_active_learning(
    ds: &Dataset,
    spec: &MlpSpec,
    al: &ALConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<ActiveRun> {
    al.validate()?;
    train_cfg.validate()?;
    if spec.input_dim() != ds.dim() || spec.output_dim() != ds.n_classes {
        return Err(Error::invalid(format!(
            "model {:?} does not fit data with {} features and {} classes",
            spec.layer_sizes(),
            ds.dim(),
            ds.n_classes
        )));
    }
    let train_idx = ds.train_indices();
    let test_idx = ds.test_indices();
    let n_train = train_idx.len();
    let b = count_for(n_train, al.budget_frac).max(1);
    let mut pool = init_pool(n_train, al.start_frac, seed)?;
    if pool.labeled().len() + al.cycles * b > n_train {
        return Err(Error::invalid("acquisition schedule exceeds the training pool"));
    }

    let base_init = spec.init_params(seed);
    let mut previous = Snapshot::new(base_init.clone(), 0, 0, 0);
    let mut records = Vec::with_capacity(al.cycles);
    let mut scores = Vec::with_capacity(al.cycles);
    let mut cycle_params = Vec::with_capacity(al.cycles);
    let ub = al.unlabeled_batch_size.unwrap_or(train_cfg.batch_size);

    for cycle in 1..=al.cycles {
        let started = Instant::now();
        let init = match al.init_mode {
            InitMode::SameInit => base_init.clone(),
            InitMode::FreshInit if cycle == 1 => base_init.clone(),
            InitMode::FreshInit => spec.init_params(rng::derive_seed(seed, &[rng::TAG_INIT, cycle as u64])),
            InitMode::WarmStart => previous.params.clone(),
        };
        let labeled_ds: Vec<usize> = pool.labeled().iter().map(|&p| train_idx[p]).collect();
        let unlabeled_ds: Vec<usize> = pool.unlabeled().iter().map(|&p| train_idx[p]).collect();
        let samples = ds.samples(&labeled_ds);
        let mut hooks = CycleHooks {
            spec,
            unlabeled: ds.inputs(&unlabeled_ds),
            teacher: al.tracks_teacher().then(|| init.clone()),
            lambda: al.lambda,
            alpha: al.alpha,
            semi: al.semi_enabled,
            batch_size: ub,
            space: al.output_space,
            noise: al.consistency_noise,
            rng: rng::rng_for(seed, &[rng::TAG_UNLABELED, cycle as u64]),
            scratch: Vec::with_capacity(ub),
        };
        let (state, report) = model::train(
            spec,
            OptimState::new(init),
            &samples,
            LossKind::CrossEntropy,
            train_cfg,
            rng::derive_seed(seed, &[cycle as u64]),
            &mut hooks,
        )?;
        let current = Snapshot::new(state.params, cycle, train_cfg.epochs, state.step_count);

        let (test_acc, per_class_acc) = evaluate(spec, &current.params, ds, &test_idx)?;
        let xs = ds.inputs(&unlabeled_ds);
        let cod = estimation::cod_scores(spec, &current, &previous, &xs, al.output_space)?;
        let true_loss = unlabeled_ds
            .iter()
            .map(|&i| loss_ce(&forward(spec, &current.params, ds.x(i))?, ds.labels[i]))
            .collect::<Result<Vec<_>>>()?;

        let acq_started = Instant::now();
        let ctx = ScoreContext {
            current: &current,
            previous: Some(&previous),
            teacher: hooks.teacher.as_ref(),
            space: al.output_space,
            seed,
        };
        let acq = if al.sampler == Sampler::Cod {
            cod.clone()
        } else {
            acquisition_scores(al.sampler, spec, &ctx, &xs)?
        };
        let chosen = select_top_b(&acq, pool.unlabeled(), b)?;
        let acquisition_seconds = acq_started.elapsed().as_secs_f64();

        let mut selected = vec![false; unlabeled_ds.len()];
        for (k, p) in pool.unlabeled().iter().enumerate() {
            selected[k] = chosen.binary_search(p).is_ok();
        }
        let timing = |s: f64| if al.record_timing { s } else { 0.0 };
        records.push(CycleRecord {
            cycle,
            labeled: labeled_ds.len(),
            labeled_frac: labeled_ds.len() as f64 / n_train as f64,
            test_acc,
            per_class_acc,
            mean_train_loss: *report.epoch_losses.last().unwrap(),
            mean_cod: crate::stats::mean(&cod),
            mean_true_loss: crate::stats::mean(&true_loss),
            seconds: timing(started.elapsed().as_secs_f64()),
            acquisition_seconds: timing(acquisition_seconds),
        });
        scores.push(CycleScores {
            cycle,
            samples: unlabeled_ds,
            cod,
            true_loss,
            acquisition: acq,
            selected,
        });
        pool.annotate(&chosen)?;
        cycle_params.push(current.params.clone());
        previous = current;
    }
    Ok(ActiveRun {
        records,
        scores,
        cycle_params,
        pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobsParams};

    #[test]
    fn init_pool_sizes_and_determinism() {
        let p = init_pool(10, 0.5, 3).unwrap();
        assert_eq!((p.labeled().len(), p.unlabeled().len()), (5, 5));
        assert!(p.labeled().iter().all(|i| !p.unlabeled().contains(i)));
        assert_eq!(p, init_pool(10, 0.5, 3).unwrap());
        assert!(init_pool(10, 0.05, 3).is_err());
    }

    #[test]
    fn annotate_moves_samples() {
        let mut p = PoolState::from_labeled(6, &[0, 3]).unwrap();
        p.annotate(&[1, 5]).unwrap();
        assert_eq!(p.labeled(), &[0, 1, 3, 5]);
        assert_eq!(p.unlabeled(), &[2, 4]);
        assert_eq!(p.cycle(), 1);
        assert!(p.annotate(&[0]).is_err());
    }

    #[test]
    fn ema_cases() {
        let s = MlpSpec::new(vec![1, 1]).unwrap();
        let t = ParamVector::from_vec(&s, vec![0.0, 0.0]).unwrap();
        let w = ParamVector::from_vec(&s, vec![2.0, 2.0]).unwrap();
        assert_eq!(ema_update(&t, &w, 0.5).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(ema_update(&t, &w, 0.0).unwrap(), w);
        assert!(ema_update(&t, &w, 1.0).is_err());
    }

    #[test]
    fn ema_geometric_convergence() {
        let s = MlpSpec::new(vec![1, 1]).unwrap();
        let mut t = s.zeros();
        let w = ParamVector::from_vec(&s, vec![1.0, 1.0]).unwrap();
        for _ in 0..1000 {
            t = ema_update(&t, &w, 0.999).unwrap();
        }
        let expected = 1.0 - 0.999f64.powi(1000);
        assert!((t.as_slice()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.632).abs() < 1e-3);
    }

    #[test]
    fn unsup_loss_identity_and_scalar_case() {
        let s = MlpSpec::new(vec![2, 1]).unwrap();
        let w = ParamVector::from_vec(&s, vec![1.0, -1.0, 0.5]).unwrap();
        let x = [2.0, 1.0];
        let lg = unsup_loss_and_grad(&s, &w, &w, &[&x], OutputSpace::Logits).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.as_slice().iter().all(|&g| g == 0.0));

        let t = ParamVector::from_vec(&s, vec![0.0, 0.0, 0.0]).unwrap();
        // f_w = 2 - 1 + 0.5 = 1.5, f_t = 0
        let lg = unsup_loss_and_grad(&s, &w, &t, &[&x], OutputSpace::Logits).unwrap();
        assert_eq!(lg.loss, 2.25);
        assert_eq!(lg.grad.as_slice(), &[2.0 * 1.5 * 2.0, 2.0 * 1.5, 2.0 * 1.5]);
        assert!(unsup_loss_and_grad(&s, &w, &t, &[], OutputSpace::Logits).is_err());
    }

    #[test]
    fn combined_step_with_zero_weight_is_supervised_step() {
        let s = MlpSpec::new(vec![2, 6, 3]).unwrap();
        let p = s.init_params(2);
        let xs = [[0.1, 0.4], [-0.7, 0.2], [1.1, -0.3]];
        let labeled: Vec<Sample> = xs.iter().enumerate().map(|(i, x)| Sample::class(x, i)).collect();
        let unl: Vec<&[f64]> = vec![&[0.5, 0.5], &[-1.0, 2.0]];
        let cfg = TrainConfig { batch_size: 3, ..TrainConfig::default() };
        let mut st = OptimState::new(p.clone());
        let mut teacher = p.clone();
        let step = SemiStep { lambda: 0.0, alpha: 0.999, space: OutputSpace::Probs, config: &cfg, epoch: 0 };
        combined_step(&s, &mut st, &labeled, &unl, &mut teacher, step).unwrap();

        let mut plain = OptimState::new(p.clone());
        let g = model::grad_loss(&s, &p, &labeled, LossKind::CrossEntropy).unwrap();
        sgd_step(&mut plain, &g.grad, &cfg, 0).unwrap();
        assert_eq!(st, plain);

        // teacher moved 0.1% of the way
        let disp = p.distance(&st.params);
        assert!(teacher.distance(&p) <= 0.001 * disp * (1.0 + 1e-9));
    }

    #[test]
    fn acquisition_scores_contracts() {
        let s = MlpSpec::new(vec![2, 4, 3]).unwrap();
        let snap = Snapshot::new(s.init_params(1), 1, 0, 0);
        let xs: Vec<&[f64]> = vec![&[0.0, 1.0], &[1.0, 0.0]];
        let ctx = ScoreContext { current: &snap, previous: None, teacher: None, space: OutputSpace::Probs, seed: 0 };
        assert!(acquisition_scores(Sampler::Cod, &s, &ctx, &xs).is_err());
        assert!(acquisition_scores(Sampler::Emaod, &s, &ctx, &xs).is_err());
        let prev = Snapshot::new(snap.params.clone(), 0, 0, 0);
        let ctx = ScoreContext { previous: Some(&prev), teacher: Some(&snap.params), ..ctx };
        assert_eq!(acquisition_scores(Sampler::Cod, &s, &ctx, &xs).unwrap(), vec![0.0, 0.0]);
        assert_eq!(acquisition_scores(Sampler::Emaod, &s, &ctx, &xs).unwrap(), vec![0.0, 0.0]);
        let r1 = acquisition_scores(Sampler::Random, &s, &ctx, &xs).unwrap();
        assert_eq!(r1, acquisition_scores(Sampler::Random, &s, &ctx, &xs).unwrap());
        // zero network: uniform posterior
        let zero = Snapshot::new(s.zeros(), 1, 0, 0);
        let ctx = ScoreContext { current: &zero, ..ctx };
        let e = acquisition_scores(Sampler::Entropy, &s, &ctx, &xs).unwrap();
        assert!((e[0] - 3f64.ln()).abs() < 1e-15);
        assert_eq!(acquisition_scores(Sampler::MarginConf, &s, &ctx, &xs).unwrap()[0], 0.0);
    }

    #[test]
    fn top_b_selection() {
        assert_eq!(select_top_b(&[0.1, 0.9, 0.5], &[10, 11, 12], 2).unwrap(), vec![11, 12]);
        assert_eq!(select_top_b(&[1.0; 5], &[4, 2, 9, 7, 1], 3).unwrap(), vec![1, 2, 4]);
        assert!(select_top_b(&[1.0; 2], &[0, 1], 3).is_err());
        assert!(select_top_b(&[f64::NAN], &[0], 1).is_err());
    }

    #[test]
    fn label_noise_cases() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        assert_eq!(inject_label_noise(&labels, 0.0, 2, 1).unwrap(), labels);
        let flipped = inject_label_noise(&labels, 1.0, 2, 1).unwrap();
        assert!(flipped.iter().zip(&labels).all(|(a, b)| a != b));
        assert!(inject_label_noise(&[0, 0], 0.5, 1, 1).is_err());
        let three: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let noisy = inject_label_noise(&three, 1.0, 3, 4).unwrap();
        assert!(noisy.iter().zip(&three).all(|(a, b)| a != b && *a < 3));
    }

    #[test]
    fn config_validation() {
        assert!(ALConfig::default().validate().is_ok());
        let bad = ALConfig { cycles: 19, ..ALConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let bad = ALConfig { alpha: 1.0, ..ALConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn tiny_blobs() -> Dataset {
        gen_blobs(&BlobsParams { n: 200, classes: 3, dim: 2, centers_scale: 4.0, sigma: 1.0, test_frac: 0.25, seed: 5 }).unwrap()
    }

    #[test]
    fn run_follows_schedule_and_conserves_pool() {
        let ds = tiny_blobs();
        let spec = MlpSpec::new(vec![2, 8, 3]).unwrap();
        let al = ALConfig { cycles: 3, ..ALConfig::default() };
        let tc = TrainConfig { epochs: 3, batch_size: 16, ..TrainConfig::default() };
        let run = run_active_learning(&ds, &spec, &al, &tc, 1).unwrap();
        let n_train = ds.train_indices().len();
        let b = count_for(n_train, 0.05);
        let start = count_for(n_train, 0.1);
        for (k, r) in run.records.iter().enumerate() {
            assert_eq!(r.labeled, start + k * b);
            assert!((0.0..=1.0).contains(&r.test_acc));
            assert_eq!(r.seconds, 0.0);
        }
        assert_eq!(run.pool.labeled().len(), start + 3 * b);
        assert_eq!(run.pool.len(), n_train);
        for s in &run.scores {
            assert_eq!(s.selected.iter().filter(|&&x| x).count(), b);
        }
    }

    #[test]
    fn zero_lambda_semi_matches_supervised() {
        let ds = tiny_blobs();
        let spec = MlpSpec::new(vec![2, 8, 3]).unwrap();
        let tc = TrainConfig { epochs: 3, batch_size: 16, ..TrainConfig::default() };
        let semi = ALConfig { cycles: 2, lambda: 0.0, semi_enabled: true, ..ALConfig::default() };
        let sup = ALConfig { semi_enabled: false, ..semi.clone() };
        let a = run_active_learning(&ds, &spec, &semi, &tc, 3).unwrap();
        let b = run_active_learning(&ds, &spec, &sup, &tc, 3).unwrap();
        assert_eq!(a.cycle_params, b.cycle_params);
        assert_eq!(a.records, b.records);
    }
}
