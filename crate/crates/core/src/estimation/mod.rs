//! Nested pseudo-likelihood estimation (NPLE) and its baselines.
//!
//! Starting from a belief profile `Σ⁰`, NPLE alternates
//!
//! 1. `θʲ = argmax_θ L̂_n(θ, Σʲ⁻¹)`: an ordinary logit on `Z(Σʲ⁻¹)`,
//! 2. `Σʲ = Γ(Σʲ⁻¹, θʲ)`: one application of the best-response map,
//!
//! until `|θʲ − θʲ⁻¹|_inf` falls below the tolerance. The constant peer effects
//! model (CPE) runs the same iteration with `φ1 = ψ1 = 0`; the reduced-form
//! logit skips the belief iteration entirely.

mod covariance;
mod identification;
mod inference;

pub use covariance::{asymptotic_covariance, CovarianceKind};
pub use identification::identification_oracle;
pub use inference::{run_tests, significance_stars, OneSidedTest, TestReport, WaldTest, SUM_NAME};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    BeliefProfile, GameInstance, Outcomes, Theta, DEFAULT_FP_MAX_ITER, DEFAULT_FP_TOL,
};
use crate::logit::{self, LogitOptions};

pub const DEFAULT_NPLE_TOL: f64 = 1e-6;
pub const DEFAULT_BELIEF_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_OUTER: usize = 500;

/// Name of the extra reduced-form regressor `(1/Q_i) Σ_{j∈F_i} S̄_ji`.
pub const FRIEND_CENTRALITY_NAME: &str = "ave_friends_rel_centrality";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Full,
    Cpe,
    ReducedLogit,
}

impl ModelTag {
    pub fn label(self) -> &'static str {
        match self {
            ModelTag::Full => "Our model",
            ModelTag::Cpe => "CPE model",
            ModelTag::ReducedLogit => "Logit model",
        }
    }
}

/// How Step 2 updates beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BeliefUpdate {
    /// `Σʲ = Γ(Σʲ⁻¹, θʲ)`.
    #[default]
    SingleStep,
    /// `Σʲ = Σ(θʲ)`, the full equilibrium, warm-started at `Σʲ⁻¹`.
    FullSolve,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartValue {
    Zeros,
    /// Fitted probabilities of a logit of `y` on `X` alone.
    IndependentLogit,
    /// Independent uniform draws on `[0, 1]`.
    Uniform(u64),
    Given(BeliefProfile),
}

#[derive(Debug, Clone)]
pub struct NpleOptions {
    pub tol: f64,
    pub belief_tol: f64,
    pub max_outer: usize,
    pub update: BeliefUpdate,
    pub start: StartValue,
    pub inner: LogitOptions,
    pub covariance: CovarianceKind,
    /// Tolerance and cap for equilibrium solves (full-solve updates and the
    /// belief polish before the covariance).
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Project peer parameters onto `[0, ∞)` after each Step 1.
    pub sign_restricted: bool,
}

impl Default for NpleOptions {
    fn default() -> Self {
        NpleOptions {
            tol: DEFAULT_NPLE_TOL,
            belief_tol: DEFAULT_BELIEF_TOL,
            max_outer: DEFAULT_MAX_OUTER,
            update: BeliefUpdate::SingleStep,
            start: StartValue::Zeros,
            inner: LogitOptions::default(),
            covariance: CovarianceKind::Paper,
            fp_tol: DEFAULT_FP_TOL,
            fp_max_iter: DEFAULT_FP_MAX_ITER,
            sign_restricted: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub model: ModelTag,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// False for parameters fixed by the model or not identified in the data.
    pub estimated: Vec<bool>,
    /// Names of parameters dropped because their regressor was identically zero.
    pub not_identified: Vec<String>,
    #[serde(serialize_with = "serialize_matrix")]
    pub covariance: DMatrix<f64>,
    /// `NaN` for parameters that were not estimated.
    pub std_errors: Vec<f64>,
    pub outer_iterations: usize,
    pub outer_residuals: Vec<f64>,
    #[serde(skip)]
    pub final_beliefs: BeliefProfile,
    pub converged: bool,
    /// Maximized pseudo log-likelihood (per observation) at the last Step 1.
    pub log_likelihood: f64,
    pub n: usize,
}

fn serialize_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.row_iter() {
        seq.serialize_element(&row.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

impl FitResult {
    /// Structural parameter, for the full and CPE models.
    pub fn theta_hat(&self) -> Option<Theta> {
        match self.model {
            ModelTag::Full | ModelTag::Cpe => Theta::from_slice(&self.estimates).ok(),
            ModelTag::ReducedLogit => None,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|k| self.estimates[k])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|k| self.std_errors[k])
    }
}

fn resolve_start(
    g: &GameInstance,
    y: &Outcomes,
    start: &StartValue,
    inner: &LogitOptions,
) -> Result<BeliefProfile> {
    let n = g.n();
    match start {
        StartValue::Zeros => Ok(BeliefProfile::zeros(n)),
        StartValue::IndependentLogit => {
            let fit = logit::fit(
                &g.cov.x,
                y.as_slice(),
                &DVector::zeros(g.d()),
                &g.cov.names,
                inner,
            )?;
            let p = (&g.cov.x * &fit.coef).map(logit::logistic);
            BeliefProfile::new(p.iter().copied().collect())
        }
        StartValue::Uniform(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            BeliefProfile::new((0..n).map(|_| rng.random::<f64>()).collect())
        }
        StartValue::Given(sigma) => {
            if sigma.len() != n {
                return Err(Error::Dimension(
                    "start profile length differs from n".into(),
                ));
            }
            Ok(sigma.clone())
        }
    }
}

/// Step 1 alone: maximizes `L̂_n(θ, Σ)` over `θ` with `Σ` fixed.
///
/// Fails with [`Error::RankDeficient`] if `Z(Σ)` does not have full column
/// rank and with [`Error::NonConvergence`] under perfect separation.
pub fn inner_logit(
    g: &GameInstance,
    y: &Outcomes,
    sigma: &BeliefProfile,
    start: &Theta,
    opts: &LogitOptions,
) -> Result<Theta> {
    g.check_outcomes(y)?;
    let z = g.build_regressors(sigma)?;
    let fit = logit::fit(
        &z,
        y.as_slice(),
        &start.to_vector(),
        &g.regressor_names(),
        opts,
    )?;
    Theta::from_slice(fit.coef.as_slice())
}

fn select_columns(z: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), cols.len(), |i, k| z[(i, cols[k])])
}

/// The NPLE loop over a subset of the `d + 3` structural columns; peer
/// parameters outside `active` stay at zero.
fn structural_fit(
    g: &GameInstance,
    y: &Outcomes,
    opts: &NpleOptions,
    active: &[usize],
    model: ModelTag,
) -> Result<FitResult> {
    g.check_outcomes(y)?;
    let (n, d) = (g.n(), g.d());
    let p = d + 3;
    if n < p {
        return Err(Error::Domain(format!(
            "{n} observations cannot identify {p} parameters"
        )));
    }
    let names = g.regressor_names();
    let ys = y.as_slice();
    let mut sigma = resolve_start(g, y, &opts.start, &opts.inner)?;
    let mut theta = DVector::<f64>::zeros(p);
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut log_likelihood = f64::NAN;
    let mut held: Vec<usize> = Vec::new();
    let mut iterations = 0;

    for j in 1..=opts.max_outer {
        iterations = j;
        let z = g.build_regressors(&sigma)?;
        // identically-zero columns (peer columns at Σ = 0, or without any
        // friendships) cannot move; hold their coefficient
        let (fit_cols, zero_cols): (Vec<usize>, Vec<usize>) = active
            .iter()
            .partition(|&&k| z.column(k).iter().any(|&v| v != 0.0));
        held = zero_cols;
        let zs = select_columns(&z, &fit_cols);
        let col_names: Vec<String> = fit_cols.iter().map(|&k| names[k].clone()).collect();
        let start = DVector::from_iterator(fit_cols.len(), fit_cols.iter().map(|&k| theta[k]));
        let fit = logit::fit(&zs, ys, &start, &col_names, &opts.inner)?;
        let mut next = theta.clone();
        for (slot, &k) in fit_cols.iter().enumerate() {
            next[k] = fit.coef[slot];
        }
        if opts.sign_restricted {
            for k in d..p {
                next[k] = next[k].max(0.0);
            }
        }
        log_likelihood = if opts.sign_restricted {
            logit::log_likelihood(&z, ys, &next)
        } else {
            fit.log_likelihood
        };
        let residual = (&next - &theta).amax();
        residuals.push(residual);
        theta = next;
        let current = Theta::from_slice(theta.as_slice())?;
        let updated = match opts.update {
            BeliefUpdate::SingleStep => g.best_response(&sigma, &current)?,
            BeliefUpdate::FullSolve => {
                g.solve_equilibrium(&current, opts.fp_tol, opts.fp_max_iter, &sigma)?
                    .sigma
            }
        };
        let belief_move = updated.distance(&sigma);
        sigma = updated;
        if !residual.is_finite() {
            break;
        }
        if j >= 2 && residual < opts.tol && belief_move < opts.belief_tol {
            converged = true;
            break;
        }
    }

    let estimated_cols: Vec<usize> = active
        .iter()
        .copied()
        .filter(|k| !held.contains(k))
        .collect();
    let theta_hat = Theta::from_slice(theta.as_slice())?;
    // covariance formulas need beliefs at the equilibrium of θ̂
    let sigma_hat = g
        .solve_equilibrium(&theta_hat, opts.fp_tol, opts.fp_max_iter, &sigma)
        .map(|eq| eq.sigma)
        .unwrap_or_else(|_| sigma.clone());
    let covariance = covariance::structural_covariance(
        g,
        y,
        &sigma_hat,
        &theta_hat,
        &estimated_cols,
        opts.covariance,
    )?;

    let mut estimated = vec![false; p];
    for &k in &estimated_cols {
        estimated[k] = true;
    }
    let std_errors = (0..p)
        .map(|k| {
            if estimated[k] {
                covariance[(k, k)].max(0.0).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    let not_identified = held.iter().map(|&k| names[k].clone()).collect();
    let converged = converged && residuals.iter().all(|r| r.is_finite());
    Ok(FitResult {
        model,
        names: Theta::names(d),
        estimates: theta.iter().copied().collect(),
        estimated,
        not_identified,
        covariance,
        std_errors,
        outer_iterations: iterations,
        outer_residuals: residuals,
        final_beliefs: sigma,
        converged,
        log_likelihood,
        n,
    })
}

/// Full model: all of `β, φ1, ψ0, ψ1` estimated.
pub fn nple(g: &GameInstance, y: &Outcomes, opts: &NpleOptions) -> Result<FitResult> {
    let active: Vec<usize> = (0..g.d() + 3).collect();
    structural_fit(g, y, opts, &active, ModelTag::Full)
}

/// Constant peer effects: `φ1 = ψ1 = 0`, regressors `X` and mean friend belief.
pub fn cpe_fit(g: &GameInstance, y: &Outcomes, opts: &NpleOptions) -> Result<FitResult> {
    let d = g.d();
    let active: Vec<usize> = (0..d).chain([d + 1]).collect();
    structural_fit(g, y, opts, &active, ModelTag::Cpe)
}

/// `(1/Q_i) Σ_{j∈F_i} S̄_ji`, 0 for players without friends.
pub fn average_friend_relative_centrality(g: &GameInstance) -> Vec<f64> {
    (0..g.n())
        .map(|i| {
            let r = g.net.edge_range(i);
            if r.is_empty() {
                0.0
            } else {
                let q = r.len() as f64;
                g.rel.values[r].iter().sum::<f64>() / q
            }
        })
        .collect()
}

/// Ordinary logit of `y` on `X` (and optionally the average relative
/// centrality of friends). No belief iteration; sandwich covariance.
pub fn reduced_logit_fit(
    g: &GameInstance,
    y: &Outcomes,
    include_friend_centrality: bool,
    inner: &LogitOptions,
) -> Result<FitResult> {
    g.check_outcomes(y)?;
    let (n, d) = (g.n(), g.d());
    let mut names = g.cov.names.clone();
    let extra = average_friend_relative_centrality(g);
    // without friendship pairs the extra regressor is identically zero
    let extra_identified = extra.iter().any(|&v| v != 0.0);
    let with_extra = include_friend_centrality && extra_identified;
    let z = if with_extra {
        names.push(FRIEND_CENTRALITY_NAME.to_string());
        DMatrix::from_fn(
            n,
            d + 1,
            |i, k| if k < d { g.cov.x[(i, k)] } else { extra[i] },
        )
    } else {
        g.cov.x.clone()
    };
    let p = z.ncols();
    let fit = logit::fit(&z, y.as_slice(), &DVector::zeros(p), &names, inner)?;
    let probs = (&z * &fit.coef).map(logit::logistic);
    let covariance = covariance::logit_sandwich(&z, y.as_slice(), probs.as_slice())?;
    let std_errors = (0..p).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();
    let mut out_names: Vec<String> = (0..d).map(|k| format!("beta{k}")).collect();
    let mut not_identified = Vec::new();
    if with_extra {
        out_names.push(FRIEND_CENTRALITY_NAME.to_string());
    } else if include_friend_centrality {
        not_identified.push(FRIEND_CENTRALITY_NAME.to_string());
    }
    Ok(FitResult {
        model: ModelTag::ReducedLogit,
        names: out_names,
        estimates: fit.coef.iter().copied().collect(),
        estimated: vec![true; p],
        not_identified,
        covariance,
        std_errors,
        outer_iterations: 1,
        outer_residuals: Vec::new(),
        final_beliefs: BeliefProfile::new(probs.iter().copied().collect())?,
        converged: true,
        log_likelihood: fit.log_likelihood,
        n,
    })
}

#[derive(Debug)]
pub struct MultiStartResult {
    pub starts: Vec<StartValue>,
    pub fits: Vec<Result<FitResult>>,
    /// Index of the converged fit with the largest pseudo-likelihood.
    pub selected: Option<usize>,
    /// Largest sup-norm distance between converged estimates.
    pub max_disagreement: f64,
}

impl MultiStartResult {
    pub fn best(&self) -> Option<&FitResult> {
        self.selected.and_then(|k| self.fits[k].as_ref().ok())
    }
}

/// The default list of `count` starting profiles: zeros, independent-logit
/// probabilities, then uniform draws.
pub fn default_starts(count: usize, seed: u64) -> Vec<StartValue> {
    (0..count)
        .map(|k| match k {
            0 => StartValue::Zeros,
            1 => StartValue::IndependentLogit,
            _ => StartValue::Uniform(seed.wrapping_add(k as u64)),
        })
        .collect()
}

/// Runs the full-model NPLE from several starts (in parallel) and keeps the
/// fixed point with the highest pseudo-likelihood.
pub fn multi_start_nple(
    g: &GameInstance,
    y: &Outcomes,
    opts: &NpleOptions,
    starts: Vec<StartValue>,
) -> MultiStartResult {
    let fits: Vec<Result<FitResult>> = starts
        .par_iter()
        .map(|s| {
            let o = NpleOptions {
                start: s.clone(),
                ..opts.clone()
            };
            nple(g, y, &o)
        })
        .collect();
    let converged: Vec<(usize, &FitResult)> = fits
        .iter()
        .enumerate()
        .filter_map(|(k, f)| f.as_ref().ok().filter(|f| f.converged).map(|f| (k, f)))
        .collect();
    let selected = converged
        .iter()
        .max_by(|a, b| a.1.log_likelihood.total_cmp(&b.1.log_likelihood))
        .map(|(k, _)| *k);
    let mut max_disagreement: f64 = 0.0;
    for (a, fa) in &converged {
        for (b, fb) in &converged {
            if a < b {
                let dist = fa
                    .estimates
                    .iter()
                    .zip(&fb.estimates)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                max_disagreement = max_disagreement.max(dist);
            }
        }
    }
    MultiStartResult {
        starts,
        fits,
        selected,
        max_disagreement,
    }
}
