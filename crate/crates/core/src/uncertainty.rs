//! Posterior-based uncertainty scores. Every score follows one convention:
//! higher means more uncertain.

use serde::{Deserialize, Serialize};

/// Floor for the runner-up probability in the ratio score.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    Entropy,
    LeastConf,
    MarginConf,
    RatioConf,
}

fn top_two(probs: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = 0.0;
    for &p in probs {
        if p > first {
            second = if first.is_finite() { first } else { 0.0 };
            first = p;
        } else if p > second {
            second = p;
        }
    }
    (first, second)
}

impl Uncertainty {
    pub fn score(self, probs: &[f64]) -> f64 {
        match self {
            Uncertainty::Entropy => -probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>(),
            Uncertainty::LeastConf => 1.0 - top_two(probs).0,
            Uncertainty::MarginConf => {
                let (a, b) = top_two(probs);
                -(a - b)
            }
            Uncertainty::RatioConf => {
                let (a, b) = top_two(probs);
                -(a / b.max(RATIO_FLOOR))
            }
        }
    }
}
