//! A minimal fully-connected ReLU network with exact reverse-mode gradients
//! and SGD training.
//!
//! Parameters live in one flat [`ParamVector`]. Layers are stored in order;
//! each layer contributes its weight matrix (row-major, `out x in`) followed
//! by its bias vector. Hidden layers apply ReLU, the output layer is raw.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Network architecture: layer widths from input to output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

/// Placement of one layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerSlot {
    pub n_in: usize,
    pub n_out: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output size"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(Self {
            layer_sizes,
            activation: Activation::Relu,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub(crate) fn slots(&self) -> Vec<LayerSlot> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    n_in: w[0],
                    n_out: w[1],
                    w_off: off,
                    b_off: off + w[0] * w[1],
                };
                off += w[0] * w[1] + w[1];
                slot
            })
            .collect()
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector(vec![0.0; self.n_params()])
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng::rng_for(seed, &[rng::TAG_INIT]);
        let mut values = vec![0.0; self.n_params()];
        for slot in self.slots() {
            let limit = (6.0 / (slot.n_in + slot.n_out) as f64).sqrt();
            for v in &mut values[slot.w_off..slot.b_off] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        ParamVector(values)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, spec {:?} needs {}",
                params.len(),
                self.layer_sizes,
                self.n_params()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has dimension {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Flat network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_params() {
            return Err(Error::invalid(format!(
                "got {} parameters, spec needs {}",
                values.len(),
                spec.n_params()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self(values))
    }

    pub(crate) fn raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Tape {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

pub(crate) fn forward_tape(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Tape {
    let w = params.as_slice();
    let slots = spec.slots();
    let last = slots.len() - 1;
    let mut acts = Vec::with_capacity(slots.len() + 1);
    let mut pre = Vec::with_capacity(slots.len());
    acts.push(x.to_vec());
    for (l, s) in slots.iter().enumerate() {
        let input = &acts[l];
        let mut z = w[s.b_off..s.b_off + s.n_out].to_vec();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &w[s.w_off + o * s.n_in..s.w_off + (o + 1) * s.n_in];
            *zo += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
        }
        let a = if l == last {
            z.clone()
        } else {
            z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
        };
        pre.push(z);
        acts.push(a);
    }
    Tape { acts, pre }
}

/// Accumulate `scale * d(d_out . f)/dw` into `grad`.
pub(crate) fn backprop(
    spec: &MlpSpec,
    params: &ParamVector,
    tape: &Tape,
    d_out: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    let w = params.as_slice();
    let slots = spec.slots();
    let mut delta: Vec<f64> = d_out.to_vec();
    for l in (0..slots.len()).rev() {
        let s = slots[l];
        let input = &tape.acts[l];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let g = scale * d;
            let row = &mut grad[s.w_off + o * s.n_in..s.w_off + (o + 1) * s.n_in];
            for (gi, &ai) in row.iter_mut().zip(input) {
                *gi += g * ai;
            }
            grad[s.b_off + o] += g;
        }
        if l == 0 {
            break;
        }
        let prev_pre = &tape.pre[l - 1];
        let mut next = vec![0.0; s.n_in];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &w[s.w_off + o * s.n_in..s.w_off + (o + 1) * s.n_in];
            for (n, &wi) in next.iter_mut().zip(row) {
                *n += wi * d;
            }
        }
        // ReLU subgradient: 0 at the kink.
        for (n, &z) in next.iter_mut().zip(prev_pre) {
            if z <= 0.0 {
                *n = 0.0;
            }
        }
        delta = next;
    }
}

/// Raw network output (logits).
pub fn forward(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    Ok(forward_tape(spec, params, x).acts.pop().unwrap())
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// `0.5 * (y - f)^2`
pub fn loss_euclidean(output: f64, target: f64) -> f64 {
    0.5 * (target - output) * (target - output)
}

/// Cross-entropy of `logits` against a class index, evaluated in log space.
pub fn loss_ce(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} outputs",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Index of the largest logit (first one on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Losses and gradients

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Real(f64),
    Class(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub target: Target,
}

impl<'a> Sample<'a> {
    pub fn class(x: &'a [f64], label: usize) -> Self {
        Self {
            x,
            target: Target::Class(label),
        }
    }

    pub fn real(x: &'a [f64], y: f64) -> Self {
        Self {
            x,
            target: Target::Real(y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `0.5 (y - f)^2` on a scalar-output network.
    Euclidean,
    /// Softmax cross-entropy against a class label.
    CrossEntropy,
}

/// Mean loss over a batch together with its gradient.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ParamVector,
}

/// Loss of one sample and the derivative of that loss w.r.t. the raw outputs.
fn loss_and_output_grad(out: &[f64], target: Target, kind: LossKind) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::Euclidean, Target::Real(y)) => {
            if out.len() != 1 {
                return Err(Error::invalid("euclidean loss needs a scalar-output network"));
            }
            Ok((loss_euclidean(out[0], y), vec![out[0] - y]))
        }
        (LossKind::CrossEntropy, Target::Class(label)) => {
            let loss = loss_ce(out, label)?;
            let mut d = softmax(out);
            d[label] -= 1.0;
            Ok((loss, d))
        }
        (kind, target) => Err(Error::invalid(format!(
            "target {target:?} does not fit loss {kind:?}"
        ))),
    }
}

/// Exact mean loss and gradient over `batch`.
pub fn grad_loss(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &[Sample<'_>],
    kind: LossKind,
) -> Result<LossGrad> {
    spec.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; spec.n_params()];
    let mut total = 0.0;
    for s in batch {
        spec.check_input(s.x)?;
        let tape = forward_tape(spec, params, s.x);
        let (loss, d_out) = loss_and_output_grad(tape.output(), s.target, kind)?;
        total += loss;
        backprop(spec, params, &tape, &d_out, scale, &mut grad);
    }
    Ok(LossGrad {
        loss: total * scale,
        grad: ParamVector(grad),
    })
}

/// Gradient of `L(batch) + weight * aux(params)` where `aux` supplies its own
/// loss and gradient (used for the unsupervised consistency term).
pub fn grad_combined<F>(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &[Sample<'_>],
    kind: LossKind,
    weight: f64,
    aux: F,
) -> Result<LossGrad>
where
    F: FnOnce(&ParamVector) -> Result<LossGrad>,
{
    let mut lg = grad_loss(spec, params, batch, kind)?;
    if weight != 0.0 {
        let extra = aux(params)?;
        lg.loss += weight * extra.loss;
        lg.grad.axpy(weight, &extra.grad);
    }
    Ok(lg)
}

/// Gradient of the raw output `output_index` w.r.t. all parameters.
pub fn grad_output(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    output_index: usize,
) -> Result<ParamVector> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    if output_index >= spec.output_dim() {
        return Err(Error::invalid(format!(
            "output index {output_index} out of range for {} outputs",
            spec.output_dim()
        )));
    }
    let tape = forward_tape(spec, params, x);
    let mut d_out = vec![0.0; spec.output_dim()];
    d_out[output_index] = 1.0;
    let mut grad = vec![0.0; spec.n_params()];
    backprop(spec, params, &tape, &d_out, 1.0, &mut grad);
    Ok(ParamVector(grad))
}

// ---------------------------------------------------------------------------
// Optimisation

fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_batch_size() -> usize {
    128
}
fn default_epochs() -> usize {
    200
}
fn default_drop_factor() -> f64 {
    0.1
}
fn default_drop_at() -> f64 {
    0.8
}

/// SGD hyperparameters. Defaults: lr 0.1, momentum 0.9, weight decay 5e-4,
/// batch 128, 200 epochs, learning rate x0.1 after 80% of the epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_drop_factor")]
    pub lr_drop_factor: f64,
    #[serde(default = "default_drop_at")]
    pub lr_drop_at_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            lr_drop_factor: default_drop_factor(),
            lr_drop_at_frac: default_drop_at(),
        }
    }
}

impl TrainConfig {
    /// Plain gradient descent: no momentum, no decay, no schedule.
    pub fn plain(lr: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size,
            epochs,
            lr_drop_factor: 1.0,
            lr_drop_at_frac: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("train.{field}"), msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return bad("lr_drop_factor", "must lie in (0, 1]");
        }
        if !(self.lr_drop_at_frac > 0.0 && self.lr_drop_at_frac <= 1.0) {
            return bad("lr_drop_at_frac", "must lie in (0, 1]");
        }
        Ok(())
    }

    /// First epoch (0-based) that runs at the dropped learning rate.
    pub fn drop_epoch(&self) -> usize {
        (self.lr_drop_at_frac * self.epochs as f64).round() as usize
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_drop_at_frac < 1.0 && epoch >= self.drop_epoch() {
            self.lr * self.lr_drop_factor
        } else {
            self.lr
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Parameters plus momentum buffer; owned by a single training run.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub params: ParamVector,
    pub momentum_buffer: Vec<f64>,
    pub step_count: u64,
}

impl OptimState {
    pub fn new(params: ParamVector) -> Self {
        let n = params.len();
        Self {
            params,
            momentum_buffer: vec![0.0; n],
            step_count: 0,
        }
    }
}

/// One SGD step with coupled weight decay and heavy-ball momentum:
/// `v <- m v + (g + wd w)`, `w <- w - lr(epoch) v`.
pub fn sgd_step(
    state: &mut OptimState,
    grad: &ParamVector,
    config: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    if grad.len() != state.params.len() || state.momentum_buffer.len() != state.params.len() {
        return Err(Error::invalid("gradient and state shapes differ"));
    }
    let lr = config.lr_at(epoch);
    let w = state.params.as_mut_slice();
    for ((wi, vi), &gi) in w.iter_mut().zip(&mut state.momentum_buffer).zip(grad.as_slice()) {
        *vi = config.momentum * *vi + (gi + config.weight_decay * *wi);
        *wi -= lr * *vi;
    }
    state.step_count += 1;
    Ok(())
}

/// `w - eta * grad 0.5 (y - f(x; w))^2` for a single sample.
pub fn plain_gd_step(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    y: f64,
    eta: f64,
) -> Result<ParamVector> {
    if spec.output_dim() != 1 {
        return Err(Error::invalid("plain GD step is defined for scalar-output networks"));
    }
    let lg = grad_loss(spec, params, &[Sample::real(x, y)], LossKind::Euclidean)?;
    let mut out = params.clone();
    for (w, g) in out.0.iter_mut().zip(lg.grad.as_slice()) {
        *w -= eta * g;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training loop

/// Callbacks invoked by [`train`].
pub trait TrainHooks {
    /// Adjust the minibatch loss/gradient before the optimizer step.
    fn augment(&mut self, _params: &ParamVector, _lg: &mut LossGrad) -> Result<()> {
        Ok(())
    }

    /// Called after every optimizer step.
    fn after_step(&mut self, _state: &OptimState, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean supervised loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Minibatch SGD over `samples`. The shuffle of epoch `e` depends only on
/// `(seed, e)`.
pub fn train(
    spec: &MlpSpec,
    mut state: OptimState,
    samples: &[Sample<'_>],
    kind: LossKind,
    config: &TrainConfig,
    seed: u64,
    hooks: &mut dyn TrainHooks,
) -> Result<(OptimState, TrainReport)> {
    config.validate()?;
    spec.check_params(&state.params)?;
    if samples.is_empty() {
        return Err(Error::invalid("cannot train on an empty labeled set"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::rng_for(seed, &[rng::TAG_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let mut lg = grad_loss(spec, &state.params, &batch, kind)?;
            epoch_loss += lg.loss * chunk.len() as f64;
            hooks.augment(&state.params, &mut lg)?;
            sgd_step(&mut state, &lg.grad, config, epoch)?;
            report.steps += 1;
            if !state.params.is_finite() {
                return Err(Error::Runtime(format!(
                    "parameters diverged at epoch {epoch}, step {}",
                    state.step_count
                )));
            }
            hooks.after_step(&state, epoch)?;
        }
        report.epoch_losses.push(epoch_loss / samples.len() as f64);
    }
    Ok((state, report))
}
