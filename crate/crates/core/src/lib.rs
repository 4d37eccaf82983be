//! Binary-action games on directed friendship networks where the strength of
//! peer pressure depends on a friend's Katz–Bonacich centrality relative to
//! one's own.
//!
//! * [`network`]: edge lists, centrality, relative centrality, summaries.
//! * [`game`]: regressors, best response, equilibrium solver, contraction check.
//! * [`estimation`]: nested pseudo-likelihood estimation, CPE and reduced-form
//!   baselines, sandwich covariance, Wald and one-sided tests.
//! * [`montecarlo`]: the simulation design and replication harness.
//! * [`io`]: file formats and text tables.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod game;
pub mod io;
pub mod logit;
pub mod montecarlo;
pub mod network;

pub use error::{Error, Result};
pub use estimation::{
    cpe_fit, multi_start_nple, nple, reduced_logit_fit, run_tests, FitResult, ModelTag, NpleOptions,
};
pub use game::{BeliefProfile, Covariates, GameInstance, Outcomes, Theta};
pub use montecarlo::{generate_instance, run_experiment, DgpConfig, McReport};
pub use network::{katz_bonacich, DirectedNetwork};
