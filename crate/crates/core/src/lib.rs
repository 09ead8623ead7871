//! Temporal output discrepancy (TOD) for deep active learning and
//! unsupervised model selection.
//!
//! The crate contains a small multilayer perceptron with hand-written
//! backpropagation and momentum SGD, the TOD family of loss estimators
//! (cyclic and EMA variants) with numeric checks of their bounds, a pool-based
//! active-learning loop with an optional consistency-regularized
//! semi-supervised objective, TOD-based model ranking, dataset utilities and
//! the experiment runners behind the `todlab` binary.
//!
//! ```
//! use todlab::model::MlpSpec;
//! use todlab::estimation::{tod, OutputSpace};
//!
//! let spec = MlpSpec::new(vec![2, 8, 3]).unwrap();
//! let a = spec.init_params(1);
//! let b = spec.init_params(2);
//! let d = tod(&spec, &a, &b, &[0.5, -0.5], OutputSpace::Probs).unwrap();
//! assert!(d >= 0.0);
//! ```

pub mod active;
pub mod data;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod uncertainty;

pub use error::{Error, Result};
