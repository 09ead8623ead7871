//! Temporal output discrepancy and its relatives.
//!
//! The discrepancy of a sample `x` between two parameter states `a` and `b`
//! is `||f(x; a) - f(x; b)||`. Between two points on one optimisation
//! trajectory it lower-bounds the square root of the loss accumulated along
//! that stretch, which makes it a label-free loss estimate:
//!
//! * [`tod`] compares two arbitrary parameter states,
//! * [`cod_scores`] compares the end-of-cycle models of two consecutive
//!   active-learning cycles,
//! * [`emaod_scores`] compares a model with its moving-average teacher.
//!
//! [`bounds`] checks the inequalities behind the estimate numerically and
//! [`quality`] measures how well a score ranks true losses.

pub mod bounds;
pub mod quality;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, forward, softmax, MlpSpec, ParamVector};

pub use bounds::{
    estimate_c, lipschitz_check, spectral_norm, verify_corollary_accumulated, verify_corollary_t,
    verify_theorem1, BoundKind, BoundReport, GradStats, LipschitzReport, Trajectory,
};
pub use quality::{loss_estimation_quality, QualityReport, RECALL_PERCENTS};

/// Which network output the discrepancy is measured on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSpace {
    /// Raw network outputs.
    Logits,
    /// Post-softmax class probabilities.
    #[default]
    Probs,
}

impl std::str::FromStr for OutputSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(OutputSpace::Logits),
            "probs" => Ok(OutputSpace::Probs),
            other => Err(Error::invalid(format!(
                "unknown output space `{other}` (expected logits or probs)"
            ))),
        }
    }
}

pub fn outputs(spec: &MlpSpec, params: &ParamVector, x: &[f64], space: OutputSpace) -> Result<Vec<f64>> {
    let logits = forward(spec, params, x)?;
    Ok(match space {
        OutputSpace::Logits => logits,
        OutputSpace::Probs => softmax(&logits),
    })
}

/// Pull a gradient w.r.t. the chosen outputs back to the logits.
pub(crate) fn output_vjp(space: OutputSpace, outputs: &[f64], d_outputs: &[f64]) -> Vec<f64> {
    match space {
        OutputSpace::Logits => d_outputs.to_vec(),
        OutputSpace::Probs => {
            // d p_i / d z_j = p_i (delta_ij - p_j)
            let dot: f64 = outputs.iter().zip(d_outputs).map(|(p, g)| p * g).sum();
            outputs
                .iter()
                .zip(d_outputs)
                .map(|(p, g)| p * (g - dot))
                .collect()
        }
    }
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `||f(x; a) - f(x; b)||_2` in the requested output space.
pub fn tod(
    spec: &MlpSpec,
    w_a: &ParamVector,
    w_b: &ParamVector,
    x: &[f64],
    space: OutputSpace,
) -> Result<f64> {
    let a = outputs(spec, w_a, x, space)?;
    let b = outputs(spec, w_b, x, space)?;
    Ok(l2_diff(&a, &b))
}

/// Parameters at a known point of an optimisation history.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub params: ParamVector,
    pub cycle: usize,
    pub epoch: usize,
    /// Global optimizer-step index.
    pub step: u64,
}

impl Snapshot {
    pub fn new(params: ParamVector, cycle: usize, epoch: usize, step: u64) -> Self {
        Self {
            params,
            cycle,
            epoch,
            step,
        }
    }
}

fn discrepancies(
    spec: &MlpSpec,
    a: &ParamVector,
    b: &ParamVector,
    xs: &[&[f64]],
    space: OutputSpace,
) -> Result<Vec<f64>> {
    xs.iter().map(|x| tod(spec, a, b, x, space)).collect()
}

/// Cyclic output discrepancy of each sample between the models that ended two
/// consecutive cycles. Cycle 0 denotes the random initialisation.
pub fn cod_scores(
    spec: &MlpSpec,
    current: &Snapshot,
    previous: &Snapshot,
    xs: &[&[f64]],
    space: OutputSpace,
) -> Result<Vec<f64>> {
    if current.cycle != previous.cycle + 1 {
        return Err(Error::invalid(format!(
            "COD needs consecutive cycles, got {} and {}",
            previous.cycle, current.cycle
        )));
    }
    discrepancies(spec, &current.params, &previous.params, xs, space)
}

/// Discrepancy against a moving-average teacher.
pub fn emaod_scores(
    spec: &MlpSpec,
    params: &ParamVector,
    teacher: &ParamVector,
    xs: &[&[f64]],
    space: OutputSpace,
) -> Result<Vec<f64>> {
    discrepancies(spec, params, teacher, xs, space)
}

/// Squared Frobenius norm of the output Jacobian w.r.t. the parameters.
pub fn output_jacobian_sq_norm(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<f64> {
    (0..spec.output_dim())
        .map(|k| model::grad_output(spec, params, x, k).map(|g| g.norm_sq()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tod_identity_and_hand_value() {
        let spec = MlpSpec::new(vec![2, 8, 2]).unwrap();
        let p = spec.init_params(1);
        assert_eq!(tod(&spec, &p, &p, &[0.3, 0.1], OutputSpace::Probs).unwrap(), 0.0);

        let lin = MlpSpec::new(vec![1, 1]).unwrap();
        let a = ParamVector::from_vec(&lin, vec![1.0, 0.0]).unwrap();
        let b = ParamVector::from_vec(&lin, vec![2.0, 0.0]).unwrap();
        assert_eq!(tod(&lin, &a, &b, &[3.0], OutputSpace::Logits).unwrap(), 3.0);
    }

    #[test]
    fn tod_matches_direct_norm() {
        let spec = MlpSpec::new(vec![2, 8, 2]).unwrap();
        let (a, b) = (spec.init_params(3), spec.init_params(4));
        let x = [0.7, -0.2];
        let oa = forward(&spec, &a, &x).unwrap();
        let ob = forward(&spec, &b, &x).unwrap();
        let direct = ((oa[0] - ob[0]).powi(2) + (oa[1] - ob[1]).powi(2)).sqrt();
        assert!((tod(&spec, &a, &b, &x, OutputSpace::Logits).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn cod_requires_consecutive_cycles() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let p = spec.init_params(0);
        let s0 = Snapshot::new(p.clone(), 0, 0, 0);
        let s2 = Snapshot::new(p.clone(), 2, 0, 0);
        let xs: Vec<&[f64]> = vec![&[0.0, 1.0]];
        assert!(cod_scores(&spec, &s2, &s0, &xs, OutputSpace::Probs).is_err());
        let s1 = Snapshot::new(p, 1, 0, 0);
        assert_eq!(cod_scores(&spec, &s1, &s0, &xs, OutputSpace::Probs).unwrap(), vec![0.0]);
        assert!(cod_scores(&spec, &s1, &s0, &[], OutputSpace::Probs).unwrap().is_empty());
    }

    #[test]
    fn cod_singleton_equals_tod() {
        let spec = MlpSpec::new(vec![2, 5, 3]).unwrap();
        let s0 = Snapshot::new(spec.init_params(0), 0, 0, 0);
        let s1 = Snapshot::new(spec.init_params(1), 1, 3, 30);
        let x = [0.4, 0.9];
        let cod = cod_scores(&spec, &s1, &s0, &[&x], OutputSpace::Probs).unwrap();
        assert_eq!(cod[0], tod(&spec, &s1.params, &s0.params, &x, OutputSpace::Probs).unwrap());
    }

    #[test]
    fn probs_vjp_matches_finite_difference() {
        let z = [0.3, -1.1, 0.8];
        let g = [0.5, -0.25, 2.0];
        let p = softmax(&z);
        let analytic = output_vjp(OutputSpace::Probs, &p, &g);
        for j in 0..3 {
            let h = 1e-6;
            let mut zp = z;
            zp[j] += h;
            let mut zm = z;
            zm[j] -= h;
            let f = |z: &[f64]| softmax(z).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((fd - analytic[j]).abs() < 1e-9);
        }
    }
}
