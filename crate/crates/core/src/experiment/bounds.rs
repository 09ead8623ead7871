//! `verify bounds`: randomized batches of the discrepancy-bound checks.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::ensure_dir;
use super::table::{fmt_f64, Table};
use crate::data::{write_atomic, Matrix};
use crate::error::{Error, Result};
use crate::estimation::{
    lipschitz_check, verify_corollary_accumulated, verify_corollary_t, verify_theorem1, BoundReport, Trajectory,
};
use crate::model::{MlpSpec, ParamVector};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsOptions {
    pub trials: usize,
    pub etas: Vec<f64>,
    pub ts: Vec<usize>,
    pub slack: f64,
    pub seed: u64,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            etas: vec![1e-2, 1e-3, 1e-4],
            ts: vec![1, 10, 50],
            slack: 0.05,
            seed: 0,
        }
    }
}

impl BoundsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("--trials", "must be positive"));
        }
        if self.etas.is_empty() || self.etas.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::config("--eta", "need one or more positive step sizes"));
        }
        if self.ts.is_empty() || self.ts.contains(&0) {
            return Err(Error::config("--T", "need one or more positive step counts"));
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            return Err(Error::config("--slack", "must be nonnegative"));
        }
        Ok(())
    }
}

/// One line of `bounds.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRecord {
    pub check: String,
    pub trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

impl BoundRecord {
    fn from_report(check: &str, trial: usize, r: &BoundReport) -> Self {
        Self {
            check: check.into(),
            trial,
            eta: Some(r.eta),
            t: Some(r.steps),
            lhs: r.lhs,
            rhs: r.rhs,
            ratio: r.ratio,
            satisfied: r.satisfied,
        }
    }
}

/// Worst case of one `(check, eta, T)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundSummary {
    pub check: String,
    pub eta: Option<f64>,
    pub t: Option<usize>,
    pub trials: usize,
    pub max_ratio: f64,
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct BoundsOutput {
    pub records: Vec<BoundRecord>,
    pub summary: Vec<BoundSummary>,
    pub slack: f64,
}

impl BoundsOutput {
    /// Lipschitz failures at any size, or a bound ratio above `1 + slack` at a
    /// step size of at most 1e-3.
    pub fn threshold_failures(&self) -> Vec<&BoundRecord> {
        self.records
            .iter()
            .filter(|r| {
                if r.check == "lipschitz" {
                    !r.satisfied
                } else {
                    r.eta.is_some_and(|e| e <= 1e-3 + 1e-15) && r.ratio > 1.0 + self.slack
                }
            })
            .collect()
    }

    pub fn max_ratio(&self, check: &str, eta: Option<f64>, t: Option<usize>) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.check == check && s.eta == eta && s.t == t)
            .map(|s| s.max_ratio)
    }
}

/// A random scalar-output ReLU network with one or two hidden layers.
pub fn random_scalar_net(rng: &mut rng::Rng) -> (MlpSpec, ParamVector) {
    let d = rng.random_range(1..=4);
    let mut sizes = vec![d];
    for _ in 0..rng.random_range(1..=2) {
        sizes.push(rng.random_range(2..=8));
    }
    sizes.push(1);
    let spec = MlpSpec::new(sizes).expect("valid sizes");
    let params = spec.init_params(rng.random());
    // nonzero biases so that units sit at varied distances from their kinks
    let mut v = params.into_vec();
    for s in spec.slots() {
        for b in &mut v[s.b_off..s.b_off + s.n_out] {
            *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let params = ParamVector::from_vec(&spec, v).expect("finite");
    (spec, params)
}

fn normal_vec(rng: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// One random perturbation-bound draw. With a single input the bound holds
/// with equality whenever every unit stays active, and the comparison is then
/// decided by rounding, so draws use at least two inputs.
pub fn random_lipschitz_case(rng: &mut rng::Rng) -> (Matrix, Vec<f64>, Matrix, Vec<f64>) {
    let d_in = rng.random_range(2..=6);
    let d_out = rng.random_range(1..=6);
    let scale = 10f64.powf(rng.random_range(-3.0..0.0));
    let w = Matrix::new(d_in, d_out, normal_vec(rng, d_in * d_out)).unwrap();
    let b = normal_vec(rng, d_out);
    let r = Matrix::new(d_in, d_out, normal_vec(rng, d_in * d_out).into_iter().map(|v| v * scale).collect()).unwrap();
    let x = normal_vec(rng, d_in);
    (w, b, r, x)
}

/// Run all four checks `trials` times and summarise.
pub fn run_bounds(opts: &BoundsOptions) -> Result<BoundsOutput> {
    opts.validate()?;
    let max_t = *opts.ts.iter().max().unwrap();
    let mut records = Vec::new();
    for trial in 0..opts.trials {
        let mut r = rng::rng_for(opts.seed, &[rng::TAG_TRIAL, trial as u64]);
        let (spec, params) = random_scalar_net(&mut r);
        let x = normal_vec(&mut r, spec.input_dim());
        let y: f64 = r.sample(StandardNormal);
        for &eta in &opts.etas {
            let t1 = verify_theorem1(&spec, &params, &x, y, eta, opts.slack)?;
            records.push(BoundRecord::from_report("theorem1", trial, &t1));
            let traj = Trajectory::record(&spec, params.clone(), &x, y, eta, max_t)?;
            for &t in &opts.ts {
                let ct = verify_corollary_t(&traj, 0, t, opts.slack)?;
                records.push(BoundRecord::from_report("corollary_t", trial, &ct));
                let c = traj.max_grad_sq(0, t);
                if c > 0.0 {
                    let ca = verify_corollary_accumulated(&traj, 0, t, c, opts.slack)?;
                    records.push(BoundRecord::from_report("corollary_accumulated", trial, &ca));
                }
            }
        }
        let (w, b, rr, xx) = random_lipschitz_case(&mut r);
        let l = lipschitz_check(&w, &b, &rr, &xx)?;
        records.push(BoundRecord {
            check: "lipschitz".into(),
            trial,
            eta: None,
            t: None,
            lhs: l.lhs,
            rhs: l.rhs,
            ratio: if l.rhs > 0.0 { l.lhs / l.rhs } else if l.lhs == 0.0 { 0.0 } else { f64::INFINITY },
            satisfied: l.satisfied,
        });
    }
    Ok(BoundsOutput {
        summary: summarize(&records),
        records,
        slack: opts.slack,
    })
}

/// Groups in order of first appearance.
fn summarize(records: &[BoundRecord]) -> Vec<BoundSummary> {
    let mut out: Vec<BoundSummary> = Vec::new();
    for r in records {
        let pos = out.iter().position(|s| s.check == r.check && s.eta == r.eta && s.t == r.t);
        let s = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push(BoundSummary {
                    check: r.check.clone(),
                    eta: r.eta,
                    t: r.t,
                    trials: 0,
                    max_ratio: 0.0,
                    failures: 0,
                });
                out.last_mut().unwrap()
            }
        };
        s.trials += 1;
        s.max_ratio = s.max_ratio.max(r.ratio);
        if !r.satisfied {
            s.failures += 1;
        }
    }
    out
}

/// Write `bounds.jsonl` and `bounds_summary.csv`.
pub fn write_bounds(out: &Path, res: &BoundsOutput) -> Result<()> {
    ensure_dir(out)?;
    let mut jsonl = String::new();
    for r in &res.records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    write_atomic(&out.join("bounds.jsonl"), jsonl.as_bytes())?;
    summary_table(res).write(&out.join("bounds_summary.csv"))
}

pub fn summary_table(res: &BoundsOutput) -> Table {
    let mut t = Table::new(["check", "eta", "T", "trials", "max_ratio", "failures"]);
    for s in &res.summary {
        t.push(vec![
            s.check.clone(),
            s.eta.map(fmt_f64).unwrap_or_default(),
            s.t.map(|t| t.to_string()).unwrap_or_default(),
            s.trials.to_string(),
            fmt_f64(s.max_ratio),
            s.failures.to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_batch_runs_and_groups() {
        let opts = BoundsOptions {
            trials: 3,
            etas: vec![1e-3],
            ts: vec![1, 5],
            ..BoundsOptions::default()
        };
        let res = run_bounds(&opts).unwrap();
        let lips = res.records.iter().filter(|r| r.check == "lipschitz").count();
        assert_eq!(lips, 3);
        assert!(res.summary.iter().any(|s| s.check == "corollary_t" && s.t == Some(5)));
        assert_eq!(res.summary.iter().filter(|s| s.check == "theorem1").count(), 1);
        assert!(run_bounds(&BoundsOptions { trials: 0, ..opts.clone() }).is_err());
        assert!(run_bounds(&BoundsOptions { etas: vec![], ..opts }).is_err());
    }
}
