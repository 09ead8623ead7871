//! Numerical checks of the discrepancy bounds under plain single-sample
//! gradient descent on the euclidean loss `L = 0.5 (y - f)^2`:
//!
//! * one step:   `|f(w') - f(w)| <= eta sqrt(2 L) ||grad_w f||^2`
//! * T steps:    `D <= sqrt(2) eta sum_tau sqrt(L_tau) ||grad_w f_tau||^2`
//! * with `||grad_w f||^2 <= C`: `D <= sqrt(2T) eta C sqrt(sum_tau L_tau)`
//!
//! The bounds come from a first-order expansion, so they hold up to
//! `O(eta^2)` terms; reports carry a multiplicative slack.

use serde::{Deserialize, Serialize};

use super::output_jacobian_sq_norm;
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::model::{forward, grad_output, loss_euclidean, plain_gd_step, MlpSpec, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Theorem1,
    CorollaryT,
    CorollaryAccumulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub lhs: f64,
    pub rhs: f64,
    /// One-step bound with the gradient norm unsquared, reported alongside
    /// the squared form for comparison. Only set for the one-step check.
    pub rhs_unsquared: Option<f64>,
    /// `lhs / rhs`; 0 when both sides vanish, infinite when only `rhs` does.
    pub ratio: f64,
    pub eta: f64,
    /// Start step of the checked window.
    pub t: usize,
    /// Window length.
    pub steps: usize,
    pub slack: f64,
    pub satisfied: bool,
}

impl BoundReport {
    fn new(kind: BoundKind, lhs: f64, rhs: f64, eta: f64, t: usize, steps: usize, slack: f64) -> Self {
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            kind,
            lhs,
            rhs,
            rhs_unsquared: None,
            ratio,
            eta,
            t,
            steps,
            slack,
            satisfied: lhs <= rhs * (1.0 + slack),
        }
    }
}

fn scalar_output(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<f64> {
    if spec.output_dim() != 1 {
        return Err(Error::invalid("bound checks need a scalar-output network"));
    }
    Ok(forward(spec, params, x)?[0])
}

/// One plain-GD step on `(x, y)` against the one-step bound.
pub fn verify_theorem1(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    y: f64,
    eta: f64,
    slack: f64,
) -> Result<BoundReport> {
    let f0 = scalar_output(spec, params, x)?;
    let next = plain_gd_step(spec, params, x, y, eta)?;
    let f1 = scalar_output(spec, &next, x)?;
    let loss = loss_euclidean(f0, y);
    let grad_sq = grad_output(spec, params, x, 0)?.norm_sq();
    let lhs = (f1 - f0).abs();
    let base = eta * (2.0 * loss).sqrt();
    let mut report = BoundReport::new(BoundKind::Theorem1, lhs, base * grad_sq, eta, 0, 1, slack);
    report.rhs_unsquared = Some(base * grad_sq.sqrt());
    Ok(report)
}

/// A plain-GD run on one probe sample with per-step bookkeeping.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub spec: MlpSpec,
    pub x: Vec<f64>,
    pub y: f64,
    pub eta: f64,
    /// `params[tau]` is the state after `tau` steps.
    pub params: Vec<ParamVector>,
    /// `L_tau(x)` per state.
    pub losses: Vec<f64>,
    /// `||grad_w f(x; w_tau)||^2` per state.
    pub grad_sq: Vec<f64>,
}

impl Trajectory {
    /// Run `steps` plain-GD steps from `start`.
    pub fn record(
        spec: &MlpSpec,
        start: ParamVector,
        x: &[f64],
        y: f64,
        eta: f64,
        steps: usize,
    ) -> Result<Self> {
        let mut params = Vec::with_capacity(steps + 1);
        let mut losses = Vec::with_capacity(steps + 1);
        let mut grad_sq = Vec::with_capacity(steps + 1);
        let mut w = start;
        for tau in 0..=steps {
            losses.push(loss_euclidean(scalar_output(spec, &w, x)?, y));
            grad_sq.push(grad_output(spec, &w, x, 0)?.norm_sq());
            let next = if tau < steps {
                Some(plain_gd_step(spec, &w, x, y, eta)?)
            } else {
                None
            };
            params.push(w);
            match next {
                Some(n) => w = n,
                None => break,
            }
        }
        Ok(Self {
            spec: spec.clone(),
            x: x.to_vec(),
            y,
            eta,
            params,
            losses,
            grad_sq,
        })
    }

    /// Number of recorded steps.
    pub fn len(&self) -> usize {
        self.params.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_window(&self, t: usize, steps: usize) -> Result<()> {
        if steps == 0 {
            return Err(Error::invalid("window length must be at least one step"));
        }
        if t + steps > self.len() {
            return Err(Error::invalid(format!(
                "trajectory covers {} steps, window [{t}, {}] is missing steps",
                self.len(),
                t + steps
            )));
        }
        Ok(())
    }

    fn window_discrepancy(&self, t: usize, steps: usize) -> Result<f64> {
        let a = scalar_output(&self.spec, &self.params[t], &self.x)?;
        let b = scalar_output(&self.spec, &self.params[t + steps], &self.x)?;
        Ok((b - a).abs())
    }

    /// Largest `||grad_w f||^2` over the window's first `steps` states.
    pub fn max_grad_sq(&self, t: usize, steps: usize) -> f64 {
        self.grad_sq[t..t + steps].iter().copied().fold(0.0, f64::max)
    }
}

/// Sum-of-steps bound over the window `[t, t + steps]`.
pub fn verify_corollary_t(traj: &Trajectory, t: usize, steps: usize, slack: f64) -> Result<BoundReport> {
    traj.check_window(t, steps)?;
    let lhs = traj.window_discrepancy(t, steps)?;
    let sum: f64 = (t..t + steps)
        .map(|tau| traj.losses[tau].sqrt() * traj.grad_sq[tau])
        .sum();
    let rhs = std::f64::consts::SQRT_2 * traj.eta * sum;
    Ok(BoundReport::new(BoundKind::CorollaryT, lhs, rhs, traj.eta, t, steps, slack))
}

/// Accumulated-loss bound with gradient constant `c`.
pub fn verify_corollary_accumulated(
    traj: &Trajectory,
    t: usize,
    steps: usize,
    c: f64,
    slack: f64,
) -> Result<BoundReport> {
    traj.check_window(t, steps)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("C must be positive"));
    }
    let observed = traj.max_grad_sq(t, steps);
    if c < observed {
        return Err(Error::invalid(format!(
            "C = {c} is below the observed max squared gradient norm {observed}"
        )));
    }
    let lhs = traj.window_discrepancy(t, steps)?;
    let acc: f64 = traj.losses[t..t + steps].iter().sum();
    let rhs = (2.0 * steps as f64).sqrt() * traj.eta * c * acc.sqrt();
    Ok(BoundReport::new(BoundKind::CorollaryAccumulated, lhs, rhs, traj.eta, t, steps, slack))
}

/// Spread of `||J_w f(x)||_F^2` across snapshots and samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub count: usize,
}

pub fn estimate_c(spec: &MlpSpec, snapshots: &[ParamVector], xs: &[&[f64]]) -> Result<GradStats> {
    if snapshots.is_empty() || xs.is_empty() {
        return Err(Error::invalid("need at least one snapshot and one sample"));
    }
    let mut values = Vec::with_capacity(snapshots.len() * xs.len());
    for p in snapshots {
        for x in xs {
            values.push(output_jacobian_sq_norm(spec, p, x)?);
        }
    }
    Ok(GradStats {
        mean: crate::stats::mean(&values),
        std: crate::stats::population_std(&values),
        max: values.iter().copied().fold(0.0, f64::max),
        count: values.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Largest singular value by power iteration on `m^T m`.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let (rows, cols) = (m.rows(), m.cols());
    if rows == 0 || cols == 0 || m.as_slice().iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    if rows == 1 || cols == 1 {
        // rank one: the spectral norm is the Euclidean norm
        return m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    };
    let apply_t = |u: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; cols];
        for (i, &ui) in u.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(m.row(i)) {
                *o += a * ui;
            }
        }
        out
    };
    let normalize = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        n
    };
    // Start from m^T 1 plus a deterministic ramp so the start is not
    // orthogonal to the leading singular vector in practice.
    let mut v = apply_t(&vec![1.0; rows]);
    for (j, x) in v.iter_mut().enumerate() {
        *x += 1e-3 * (1.0 + j as f64).sqrt();
    }
    normalize(&mut v);
    let mut sigma = 0.0;
    for _ in 0..100_000 {
        let u = apply(&v);
        let next_sigma = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut w = apply_t(&u);
        if normalize(&mut w) == 0.0 {
            break;
        }
        v = w;
        let converged = (next_sigma - sigma).abs() <= 1e-12 * next_sigma;
        sigma = next_sigma;
        if converged {
            break;
        }
    }
    apply(&v).iter().map(|x| x * x).sum::<f64>().sqrt().max(sigma)
}

/// Perturbation bound of a ReLU layer `x -> max(0, W^T x + b)`:
/// `||phi(x; W + r) - phi(x; W)|| <= ||x|| ||r||_2`. Exact, no slack.
///
/// `w` and `r` are `d_in x d_out`, `b` has `d_out` entries, `x` has `d_in`.
pub fn lipschitz_check(w: &Matrix, b: &[f64], r: &Matrix, x: &[f64]) -> Result<LipschitzReport> {
    if w.rows() != r.rows() || w.cols() != r.cols() || b.len() != w.cols() || x.len() != w.rows() {
        return Err(Error::invalid("shape mismatch in lipschitz check"));
    }
    let layer = |perturbed: bool| -> Vec<f64> {
        (0..w.cols())
            .map(|j| {
                let z: f64 = (0..w.rows())
                    .map(|i| {
                        let wij = if perturbed { w.get(i, j) + r.get(i, j) } else { w.get(i, j) };
                        wij * x[i]
                    })
                    .sum::<f64>()
                    + b[j];
                z.max(0.0)
            })
            .collect()
    };
    let a = layer(true);
    let c = layer(false);
    let lhs = a.iter().zip(&c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rhs = x_norm * spectral_norm(r);
    Ok(LipschitzReport {
        lhs,
        rhs,
        satisfied: lhs <= rhs,
    })
}
