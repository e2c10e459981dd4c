//! Random ReLU networks and the machinery to study their adversarial
//! behaviour empirically.
//!
//! - [`linalg`]: dense matrices, counter-based random streams, power
//!   iteration and the two-sample Kolmogorov–Smirnov statistic.
//! - [`network`]: sampling, evaluation, exact gradients, the layerwise
//!   decomposition of gradient differences and bottleneck analysis.
//! - [`adversarial`]: sign-flip search along the gradient direction and the
//!   dimension sweep of the perturbation-to-input ratio.
//! - [`probes`]: Monte Carlo checks of the concentration bounds that make
//!   shallow random networks locally linear.
//! - [`collapse`]: arc-cosine kernel dynamics and the deep regime in which
//!   outputs become nearly constant.
//! - [`harness`]: experiment configuration, deterministic trial fan-out and
//!   CSV / JSON output used by the `randrelu` binary.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod collapse;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod probes;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{Matrix, RngStream};

pub use network::{Architecture, ForwardTrace, InitMode, Network, TiePolicy};
