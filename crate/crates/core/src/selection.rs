//! Ranking trained models on an unlabeled test set.
//!
//! Each candidate carries its final weights and a baseline checkpoint taken a
//! fixed training interval earlier. The TOD criterion of a candidate is the
//! mean squared output discrepancy between the two over the test inputs;
//! smaller means a smaller expected test loss. Labels and true accuracies live
//! in [`GroundTruth`], which the selectors never see.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::evaluate;
use crate::data::{load_checkpoint, save_checkpoint, write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::estimation::{outputs, OutputSpace};
use crate::model::{self, forward, loss_ce, softmax, LossKind, MlpSpec, OptimState, ParamVector, TrainConfig, TrainHooks};
use crate::rng;
use crate::uncertainty::Uncertainty;

/// A trained model as seen by the selectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub params: ParamVector,
    pub baseline: ParamVector,
    pub final_train_loss: f64,
}

/// Held-out evaluation of a candidate; only the evaluation harness reads it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: usize,
    pub test_acc: f64,
    pub test_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Tod,
    TrainLoss,
    Entropy,
    LeastConf,
    MarginConf,
    RatioConf,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 6] = [
        SelectionMethod::Tod,
        SelectionMethod::TrainLoss,
        SelectionMethod::Entropy,
        SelectionMethod::LeastConf,
        SelectionMethod::MarginConf,
        SelectionMethod::RatioConf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Tod => "tod",
            SelectionMethod::TrainLoss => "train_loss",
            SelectionMethod::Entropy => "entropy",
            SelectionMethod::LeastConf => "least_conf",
            SelectionMethod::MarginConf => "margin_conf",
            SelectionMethod::RatioConf => "ratio_conf",
        }
    }

    fn uncertainty(self) -> Option<Uncertainty> {
        match self {
            SelectionMethod::Entropy => Some(Uncertainty::Entropy),
            SelectionMethod::LeastConf => Some(Uncertainty::LeastConf),
            SelectionMethod::MarginConf => Some(Uncertainty::MarginConf),
            SelectionMethod::RatioConf => Some(Uncertainty::RatioConf),
            _ => None,
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectionMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = SelectionMethod::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub method: String,
    /// Candidate ids, predicted best first.
    pub order: Vec<usize>,
    /// `(id, criterion)` in candidate order; lower is predicted better.
    pub criteria: Vec<(usize, f64)>,
}

/// Mean squared output discrepancy between a candidate and its baseline.
pub fn avg_tod(spec: &MlpSpec, candidate: &Candidate, xs: &[&[f64]], space: OutputSpace) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut total = 0.0;
    for x in xs {
        total += sample_tod_sq(spec, candidate, x, space)?;
    }
    Ok(total / xs.len() as f64)
}

fn sample_tod_sq(spec: &MlpSpec, c: &Candidate, x: &[f64], space: OutputSpace) -> Result<f64> {
    let a = outputs(spec, &c.params, x, space)?;
    let b = outputs(spec, &c.baseline, x, space)?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum())
}

fn sample_criterion(
    method: SelectionMethod,
    spec: &MlpSpec,
    c: &Candidate,
    x: &[f64],
    space: OutputSpace,
) -> Result<f64> {
    match method {
        SelectionMethod::Tod => sample_tod_sq(spec, c, x, space),
        SelectionMethod::TrainLoss => Ok(c.final_train_loss),
        other => {
            let p = softmax(&forward(spec, &c.params, x)?);
            Ok(other.uncertainty().unwrap().score(&p))
        }
    }
}

fn model_criterion(
    method: SelectionMethod,
    spec: &MlpSpec,
    c: &Candidate,
    xs: &[&[f64]],
    space: OutputSpace,
) -> Result<f64> {
    match method {
        SelectionMethod::Tod => avg_tod(spec, c, xs, space),
        SelectionMethod::TrainLoss => Ok(c.final_train_loss),
        _ => {
            if xs.is_empty() {
                return Err(Error::invalid("empty test set"));
            }
            let mut total = 0.0;
            for x in xs {
                total += sample_criterion(method, spec, c, x, space)?;
            }
            Ok(total / xs.len() as f64)
        }
    }
}

fn order_by_criterion(criteria: &[(usize, f64)]) -> Vec<usize> {
    let mut sorted = criteria.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    sorted.into_iter().map(|(id, _)| id).collect()
}

/// Rank candidates ascending by criterion; ties by id.
pub fn rank_models(
    method: SelectionMethod,
    spec: &MlpSpec,
    candidates: &[Candidate],
    xs: &[&[f64]],
    space: OutputSpace,
) -> Result<RankingResult> {
    if candidates.len() < 2 {
        return Err(Error::invalid("ranking needs at least two candidates"));
    }
    let criteria = candidates
        .iter()
        .map(|c| Ok((c.id, model_criterion(method, spec, c, xs, space)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingResult {
        method: method.name().to_string(),
        order: order_by_criterion(&criteria),
        criteria,
    })
}

/// Uniformly random ranking, the control selector.
pub fn random_ranking(candidates: &[Candidate], seed: u64) -> Result<RankingResult> {
    if candidates.len() < 2 {
        return Err(Error::invalid("ranking needs at least two candidates"));
    }
    let mut order: Vec<usize> = candidates.iter().map(|c| c.id).collect();
    order.shuffle(&mut rng::rng_for(seed, &[rng::TAG_CANDIDATE, u64::MAX]));
    Ok(RankingResult {
        method: "random".into(),
        criteria: order.iter().enumerate().map(|(rank, &id)| (id, rank as f64)).collect(),
        order,
    })
}

/// Whether `true_best_id` is among the first `k` ranked ids.
pub fn topk_hit(ranking: &RankingResult, true_best_id: usize, k: usize) -> Result<bool> {
    if k == 0 || k > ranking.order.len() {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={}",
            ranking.order.len()
        )));
    }
    if !ranking.order.contains(&true_best_id) {
        return Err(Error::invalid(format!("unknown candidate id {true_best_id}")));
    }
    Ok(ranking.order[..k].contains(&true_best_id))
}

/// The candidate with the lowest per-sample criterion on `x`; ties by id.
pub fn sample_level_select(
    method: SelectionMethod,
    spec: &MlpSpec,
    candidates: &[Candidate],
    x: &[f64],
    space: OutputSpace,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates"));
    }
    let mut best: Option<(f64, usize)> = None;
    for c in candidates {
        let v = sample_criterion(method, spec, c, x, space)?;
        let better = match best {
            None => true,
            Some((bv, bid)) => v < bv || (v == bv && c.id < bid),
        };
        if better {
            best = Some((v, c.id));
        }
    }
    Ok(best.unwrap().1)
}

/// Accuracy of per-sample model choice on the labeled test split.
pub fn sample_level_accuracy(
    method: SelectionMethod,
    spec: &MlpSpec,
    candidates: &[Candidate],
    ds: &Dataset,
    test: &[usize],
    space: OutputSpace,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut correct = 0usize;
    for &i in test {
        let id = sample_level_select(method, spec, candidates, ds.x(i), space)?;
        let c = candidates.iter().find(|c| c.id == id).unwrap();
        if model::argmax(&forward(spec, &c.params, ds.x(i))?) == ds.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Distance between the baseline checkpoint and the final weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineGap {
    Epochs(usize),
    Steps(usize),
}

impl Default for BaselineGap {
    fn default() -> Self {
        BaselineGap::Epochs(1)
    }
}

/// Trained candidates plus their held-out evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    pub spec: MlpSpec,
    pub candidates: Vec<Candidate>,
    pub truth: Vec<GroundTruth>,
    pub seeds: Vec<u64>,
    pub epochs: Vec<usize>,
    pub gap: BaselineGap,
}

impl CandidatePool {
    /// Id of the most accurate candidate; ties go to the lower test loss,
    /// then to the lower id.
    pub fn true_best(&self) -> usize {
        let mut t = self.truth.clone();
        t.sort_by(|a, b| {
            b.test_acc
                .total_cmp(&a.test_acc)
                .then(a.test_loss.total_cmp(&b.test_loss))
                .then(a.id.cmp(&b.id))
        });
        t[0].id
    }

    pub fn accuracy_summary(&self) -> (f64, f64, f64) {
        let accs: Vec<f64> = self.truth.iter().map(|t| t.test_acc).collect();
        (
            accs.iter().copied().fold(f64::INFINITY, f64::min),
            crate::stats::mean(&accs),
            accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

struct Checkpointer {
    at_step: u64,
    saved: Option<ParamVector>,
}

impl TrainHooks for Checkpointer {
    fn after_step(&mut self, state: &OptimState, _epoch: usize) -> Result<()> {
        if state.step_count == self.at_step {
            self.saved = Some(state.params.clone());
        }
        Ok(())
    }
}

/// Options for [`build_candidate_pool`].
#[derive(Clone, Debug, PartialEq)]
pub struct PoolOptions {
    pub n_models: usize,
    pub gap: BaselineGap,
    /// Per-candidate epoch budgets; `None` trains every candidate for
    /// `train.epochs`.
    pub epoch_budgets: Option<Vec<usize>>,
    pub seed: u64,
}

/// Evenly spread epoch budgets between `lo` and `hi`.
pub fn spread_epochs(n: usize, lo: usize, hi: usize) -> Vec<usize> {
    if n == 1 {
        return vec![hi];
    }
    (0..n)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

/// Train `n_models` candidates independently on the train split, keeping the
/// checkpoint `gap` before the end of training as each one's baseline.
pub fn build_candidate_pool(
    ds: &Dataset,
    spec: &MlpSpec,
    train_cfg: &TrainConfig,
    opts: &PoolOptions,
) -> Result<CandidatePool> {
    if opts.n_models < 2 {
        return Err(Error::invalid("a candidate pool needs at least two models"));
    }
    train_cfg.validate()?;
    let budgets = match &opts.epoch_budgets {
        Some(b) if b.len() != opts.n_models => {
            return Err(Error::invalid("one epoch budget per candidate required"))
        }
        Some(b) => b.clone(),
        None => vec![train_cfg.epochs; opts.n_models],
    };
    let train_idx = ds.train_indices();
    let test_idx = ds.test_indices();
    let samples = ds.samples(&train_idx);
    let steps_per_epoch = train_cfg.steps_per_epoch(samples.len()) as u64;
    let gap_steps = match opts.gap {
        BaselineGap::Epochs(e) => e as u64 * steps_per_epoch,
        BaselineGap::Steps(s) => s as u64,
    };
    for &e in &budgets {
        if e == 0 {
            return Err(Error::invalid("epoch budgets must be positive"));
        }
        if gap_steps > e as u64 * steps_per_epoch {
            return Err(Error::invalid(format!(
                "baseline gap of {gap_steps} steps exceeds a {e}-epoch training run"
            )));
        }
    }
    if gap_steps == 0 {
        log::warn!("baseline gap is zero: baselines equal final weights and TOD criteria vanish");
    }
    let seeds: Vec<u64> = (0..opts.n_models)
        .map(|i| rng::derive_seed(opts.seed, &[rng::TAG_CANDIDATE, i as u64]))
        .collect();

    let trained = (0..opts.n_models)
        .into_par_iter()
        .map(|i| -> Result<(Candidate, GroundTruth)> {
            let cfg = TrainConfig {
                epochs: budgets[i],
                ..train_cfg.clone()
            };
            let total = budgets[i] as u64 * steps_per_epoch;
            let mut hook = Checkpointer {
                at_step: total - gap_steps,
                saved: None,
            };
            let init = spec.init_params(seeds[i]);
            if gap_steps == total {
                hook.saved = Some(init.clone());
            }
            let (state, report) = model::train(
                spec,
                OptimState::new(init),
                &samples,
                LossKind::CrossEntropy,
                &cfg,
                seeds[i],
                &mut hook,
            )?;
            let (test_acc, _) = evaluate(spec, &state.params, ds, &test_idx)?;
            let mut test_loss = 0.0;
            for &j in &test_idx {
                test_loss += loss_ce(&forward(spec, &state.params, ds.x(j))?, ds.labels[j])?;
            }
            test_loss /= test_idx.len().max(1) as f64;
            let baseline = if gap_steps == 0 {
                state.params.clone()
            } else {
                hook.saved.expect("checkpoint step reached")
            };
            Ok((
                Candidate {
                    id: i,
                    params: state.params,
                    baseline,
                    final_train_loss: *report.epoch_losses.last().unwrap(),
                },
                GroundTruth {
                    id: i,
                    test_acc,
                    test_loss,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (candidates, truth) = trained.into_iter().unzip();
    Ok(CandidatePool {
        spec: spec.clone(),
        candidates,
        truth,
        seeds,
        epochs: budgets,
        gap: opts.gap,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: usize,
    train_loss: f64,
    seed: u64,
    epochs: usize,
    gap: BaselineGap,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    test_acc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    layer_sizes: Vec<usize>,
    candidates: Vec<ManifestEntry>,
}

/// Store a pool as `<id>.final.ckpt` / `<id>.base.ckpt` plus `manifest.json`.
pub fn save_pool(dir: &Path, pool: &CandidatePool) -> Result<()> {
    let mut entries = Vec::with_capacity(pool.candidates.len());
    for (k, c) in pool.candidates.iter().enumerate() {
        save_checkpoint(&dir.join(format!("{}.final.ckpt", c.id)), &pool.spec, &c.params)?;
        save_checkpoint(&dir.join(format!("{}.base.ckpt", c.id)), &pool.spec, &c.baseline)?;
        entries.push(ManifestEntry {
            id: c.id,
            train_loss: c.final_train_loss,
            seed: pool.seeds[k],
            epochs: pool.epochs[k],
            gap: pool.gap,
            test_acc: pool.truth.get(k).map(|t| t.test_acc),
        });
    }
    let manifest = Manifest {
        layer_sizes: pool.spec.layer_sizes().to_vec(),
        candidates: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), format!("{text}\n").as_bytes())
}

/// Load candidates saved by [`save_pool`]. Ground truth is not restored.
pub fn load_pool(dir: &Path) -> Result<(MlpSpec, Vec<Candidate>)> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let spec = MlpSpec::new(manifest.layer_sizes)?;
    let mut out = Vec::with_capacity(manifest.candidates.len());
    for e in manifest.candidates {
        let (s1, params) = load_checkpoint(&dir.join(format!("{}.final.ckpt", e.id)))?;
        let (s2, baseline) = load_checkpoint(&dir.join(format!("{}.base.ckpt", e.id)))?;
        if s1 != spec || s2 != spec {
            return Err(Error::Format(format!("checkpoint of candidate {} has a different spec", e.id)));
        }
        out.push(Candidate {
            id: e.id,
            params,
            baseline,
            final_train_loss: e.train_loss,
        });
    }
    Ok((spec, out))
}
