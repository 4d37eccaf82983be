//! The structural binary-action game.
//!
//! Player `i` chooses 1 with probability
//!
//! ```text
//! Γ_i(Σ, θ) = logistic(Z_i(Σ)'θ)
//! Z_i(Σ) = ( X_i',
//!            (1/Q_i) Σ_{j∈F_i} S̄_ji (σ_j − 1),
//!            (1/Q_i) Σ_{j∈F_i} σ_j,
//!            (1/Q_i) Σ_{j∈F_i} S̄_ji σ_j )
//! ```
//!
//! with `S̄_ji = S_j − S_i` and `θ = (β, φ1, ψ0, ψ1)`. Peer pressure for
//! matching a friend's 0 is `α0(s) = φ1 s`, for matching a friend's 1 it is
//! `α1(s) = ψ0 + ψ1 s` (the action-0 payoff coefficients and the constant of
//! `α0` are normalized to zero). Players with no friends have zero peer columns.
//!
//! The Bayesian Nash equilibrium is the fixed point `Σ = Γ(Σ, θ)`, found by
//! successive substitution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logit;
use crate::network::{relative_centrality, CentralityVector, DirectedNetwork, RelativeCentrality};

pub const PEER_NAMES: [&str; 3] = ["phi1", "psi0", "psi1"];

pub const DEFAULT_FP_TOL: f64 = 1e-10;
pub const DEFAULT_FP_MAX_ITER: usize = 10_000;

/// Structural parameter. `beta` multiplies `X_i` (first entry the constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub phi1: f64,
    pub psi0: f64,
    pub psi1: f64,
}

impl Theta {
    pub fn new(beta: Vec<f64>, phi1: f64, psi0: f64, psi1: f64) -> Self {
        Theta {
            beta,
            phi1,
            psi0,
            psi1,
        }
    }

    pub fn d(&self) -> usize {
        self.beta.len()
    }

    /// Length of the stacked parameter, `d + 3`.
    pub fn dim(&self) -> usize {
        self.beta.len() + 3
    }

    /// Stacked as `(β, φ1, ψ0, ψ1)`, matching the column order of `Z_i`.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.beta
                .iter()
                .copied()
                .chain([self.phi1, self.psi0, self.psi1]),
        )
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() < 4 {
            return Err(Error::Dimension(format!(
                "parameter vector of length {} is too short",
                values.len()
            )));
        }
        let d = values.len() - 3;
        Ok(Theta {
            beta: values[..d].to_vec(),
            phi1: values[d],
            psi0: values[d + 1],
            psi1: values[d + 2],
        })
    }

    /// Total conformity effect `α0(s) + α1(s) = ψ0 + (φ1 + ψ1) s`.
    pub fn total_peer_effect(&self, s: f64) -> f64 {
        self.psi0 + (self.phi1 + self.psi1) * s
    }

    /// Whether `φ1, ψ0, ψ1 >= 0` (conformity sign restriction).
    pub fn satisfies_sign_restriction(&self) -> bool {
        self.phi1 >= 0.0 && self.psi0 >= 0.0 && self.psi1 >= 0.0
    }

    /// Parameter names in stacked order: `beta0..beta{d-1}, phi1, psi0, psi1`.
    pub fn names(d: usize) -> Vec<String> {
        (0..d)
            .map(|k| format!("beta{k}"))
            .chain(PEER_NAMES.iter().map(|s| s.to_string()))
            .collect()
    }
}

/// Payoff covariates `X`, one row per player, first column the constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Covariates {
    pub fn new(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Dimension(
                "covariates need at least the constant".into(),
            ));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Domain(
                "first covariate column must be all ones".into(),
            ));
        }
        if let Some(((i, k), _)) = x
            .iter()
            .enumerate()
            .map(|(flat, v)| ((flat % x.nrows(), flat / x.nrows()), v))
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::Domain(format!(
                "non-finite covariate at row {i}, column {k}"
            )));
        }
        Ok(Covariates { x, names })
    }

    /// Prepends the constant column.
    pub fn with_constant(raw: DMatrix<f64>, raw_names: Vec<String>) -> Result<Self> {
        let n = raw.nrows();
        let x = DMatrix::from_fn(n, raw.ncols() + 1, |i, k| {
            if k == 0 {
                1.0
            } else {
                raw[(i, k - 1)]
            }
        });
        let names = std::iter::once("const".to_string())
            .chain(raw_names)
            .collect();
        Self::new(x, names)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Choice-probability profile `Σ ∈ [0, 1]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefProfile(Vec<f64>);

impl BeliefProfile {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = sigma
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!(
                "belief {v} for player {i} outside [0, 1]"
            )));
        }
        Ok(BeliefProfile(sigma))
    }

    pub fn zeros(n: usize) -> Self {
        BeliefProfile(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Sup-norm distance.
    pub fn distance(&self, other: &BeliefProfile) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Binary outcomes `y ∈ {0, 1}^n`, stored as floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes(Vec<f64>);

impl Outcomes {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(Error::Domain(format!(
                "outcome {v} for player {i} is not binary"
            )));
        }
        Ok(Outcomes(values))
    }

    pub fn from_bools(values: &[bool]) -> Self {
        Outcomes(values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// Public information of the game: network, centrality and covariates.
#[derive(Debug, Clone)]
pub struct GameInstance {
    pub net: DirectedNetwork,
    pub cent: CentralityVector,
    pub cov: Covariates,
    pub rel: RelativeCentrality,
}

impl GameInstance {
    pub fn new(net: DirectedNetwork, cent: CentralityVector, cov: Covariates) -> Result<Self> {
        if cov.n() != net.n() || cent.len() != net.n() {
            return Err(Error::Dimension(format!(
                "network has {} players, centrality {}, covariates {} rows",
                net.n(),
                cent.len(),
                cov.n()
            )));
        }
        let rel = relative_centrality(&net, &cent)?;
        Ok(GameInstance {
            net,
            cent,
            cov,
            rel,
        })
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    pub fn d(&self) -> usize {
        self.cov.d()
    }

    /// Names of the `d + 3` regressor columns.
    pub fn regressor_names(&self) -> Vec<String> {
        self.cov
            .names
            .iter()
            .cloned()
            .chain(PEER_NAMES.iter().map(|s| s.to_string()))
            .collect()
    }

    fn check_sigma(&self, sigma: &BeliefProfile) -> Result<()> {
        if sigma.len() != self.n() {
            return Err(Error::Dimension(format!(
                "belief profile has {} entries for {} players",
                sigma.len(),
                self.n()
            )));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.d() != self.d() {
            return Err(Error::Dimension(format!(
                "theta has {} covariate coefficients, data has {} covariates",
                theta.d(),
                self.d()
            )));
        }
        Ok(())
    }

    /// The three peer regressors of player `i`.
    pub fn peer_terms(&self, i: usize, sigma: &[f64]) -> [f64; 3] {
        let range = self.net.edge_range(i);
        if range.is_empty() {
            return [0.0; 3];
        }
        let q = range.len() as f64;
        let mut out = [0.0; 3];
        for (e, &j) in range.clone().zip(self.net.friends(i)) {
            let sb = self.rel.values[e];
            let sj = sigma[j];
            out[0] += sb * (sj - 1.0);
            out[1] += sj;
            out[2] += sb * sj;
        }
        out.map(|v| v / q)
    }

    /// Row `i` of the result is `Z_i(Σ)'`, an `n × (d+3)` matrix.
    pub fn build_regressors(&self, sigma: &BeliefProfile) -> Result<DMatrix<f64>> {
        self.check_sigma(sigma)?;
        let (n, d) = (self.n(), self.d());
        let mut z = DMatrix::zeros(n, d + 3);
        z.view_mut((0, 0), (n, d)).copy_from(&self.cov.x);
        for i in 0..n {
            let peer = self.peer_terms(i, sigma.as_slice());
            for (k, v) in peer.into_iter().enumerate() {
                z[(i, d + k)] = v;
            }
        }
        Ok(z)
    }

    /// Linear index `Z_i(Σ)'θ` for every player, without materializing `Z`.
    pub fn linear_index(&self, sigma: &BeliefProfile, theta: &Theta) -> Result<Vec<f64>> {
        self.check_sigma(sigma)?;
        self.check_theta(theta)?;
        let xb = &self.cov.x * DVector::from_column_slice(&theta.beta);
        Ok((0..self.n())
            .map(|i| {
                let [a, b, c] = self.peer_terms(i, sigma.as_slice());
                xb[i] + theta.phi1 * a + theta.psi0 * b + theta.psi1 * c
            })
            .collect())
    }

    /// `Γ(Σ, θ)`: one application of the logit best-response map.
    pub fn best_response(&self, sigma: &BeliefProfile, theta: &Theta) -> Result<BeliefProfile> {
        let eta = self.linear_index(sigma, theta)?;
        Ok(BeliefProfile(
            eta.into_iter().map(logit::logistic).collect(),
        ))
    }

    /// Successive substitution `Σ <- Γ(Σ, θ)` from `start` until the sup-norm
    /// change drops below `tol`.
    pub fn solve_equilibrium(
        &self,
        theta: &Theta,
        tol: f64,
        max_iter: usize,
        start: &BeliefProfile,
    ) -> Result<Equilibrium> {
        if !(tol > 0.0) {
            return Err(Error::Domain(
                "fixed-point tolerance must be positive".into(),
            ));
        }
        self.check_sigma(start)?;
        self.check_theta(theta)?;
        let mut sigma = start.clone();
        let mut trace = Vec::new();
        for iterations in 0..=max_iter {
            let next = self.best_response(&sigma, theta)?;
            let residual = next.distance(&sigma);
            trace.push(residual);
            if residual < tol {
                return Ok(Equilibrium {
                    sigma,
                    iterations,
                    residual,
                    trace,
                });
            }
            sigma = next;
        }
        Err(Error::NonConvergence {
            what: "equilibrium fixed-point iteration",
            iterations: max_iter,
            residual: *trace.last().unwrap_or(&f64::NAN),
        })
    }

    /// `4 − sup_s |ψ0 + (φ1 + ψ1) s|` over the observed relative-centrality
    /// support. The sup of an affine map over an interval sits at an
    /// endpoint. Positive margin means the uniqueness bound holds.
    pub fn contraction_margin(&self, theta: &Theta) -> ContractionMargin {
        let (support, flagged) = match self.rel.support {
            Some(s) => (s, false),
            None => ((0.0, 0.0), true),
        };
        let sup = theta
            .total_peer_effect(support.0)
            .abs()
            .max(theta.total_peer_effect(support.1).abs());
        ContractionMargin {
            margin: 4.0 - sup,
            support,
            no_friendship_pairs: flagged,
        }
    }

    /// Pseudo log-likelihood `L̂_n(θ, Σ)`.
    pub fn log_likelihood(
        &self,
        y: &Outcomes,
        sigma: &BeliefProfile,
        theta: &Theta,
    ) -> Result<f64> {
        self.check_outcomes(y)?;
        let eta = self.linear_index(sigma, theta)?;
        let n = self.n() as f64;
        Ok(eta
            .iter()
            .zip(y.as_slice())
            .map(|(&e, &yi)| logit::log_density(yi, e))
            .sum::<f64>()
            / n)
    }

    /// Likelihood, score `(1/n) Σ Z_i (y_i − Γ_i)` and Hessian
    /// `−(1/n) Σ Z_i Z_i' Γ_i (1 − Γ_i)` at `(θ, Σ)`.
    pub fn likelihood_derivatives(
        &self,
        y: &Outcomes,
        sigma: &BeliefProfile,
        theta: &Theta,
    ) -> Result<logit::Evaluation> {
        self.check_outcomes(y)?;
        self.check_theta(theta)?;
        let z = self.build_regressors(sigma)?;
        Ok(logit::evaluate(&z, y.as_slice(), &theta.to_vector()))
    }

    pub(crate) fn check_outcomes(&self, y: &Outcomes) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} outcomes for {} players",
                y.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub sigma: BeliefProfile,
    /// Number of best-response updates applied to `start`.
    pub iterations: usize,
    /// `|Σ − Γ(Σ, θ)|_inf` of the returned profile.
    pub residual: f64,
    /// Residual after each update, for convergence diagnostics.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionMargin {
    pub margin: f64,
    /// Interval of relative centrality used for the sup.
    pub support: (f64, f64),
    /// No friendship pairs exist; the margin is evaluated at `s = 0` only.
    pub no_friendship_pairs: bool,
}

impl ContractionMargin {
    pub fn holds(&self) -> bool {
        self.margin > 0.0
    }
}
