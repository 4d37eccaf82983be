//! Simulation design and replication harness.
//!
//! Each instance draws `Q_i` uniformly on `{0, …, max_friends}`, nominates a
//! uniform random subset of `Q_i` other players, computes Katz–Bonacich
//! centrality, and sets `X_i = (1, W_i1, W_i2, W_i3, S_i)` with
//! `W_i1 ~ U[−√3, √3]`, `W_i2 ~ N(0, 1)` and `W_i3 = ±1` with equal
//! probability (each has mean 0 and variance 1). Outcomes are drawn from the
//! equilibrium choice probabilities at the true parameter.
//!
//! # Random streams
//!
//! Instance `seed` uses `ChaCha8Rng::seed_from_u64(seed)` with stream
//! `2a` for the network and `2a + 1` for covariates and outcomes, where `a` is
//! the regeneration attempt. Replicate `r` (1-based) of an experiment uses
//! `seed = base_seed + r`, so results do not depend on execution order.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{nple, run_tests, NpleOptions};
use crate::game::{BeliefProfile, ContractionMargin, Covariates, GameInstance, Outcomes, Theta};
use crate::network::{
    katz_bonacich, DirectedNetwork, DEFAULT_CENTRALITY_DEPTH, DEFAULT_CENTRALITY_TOL,
};

/// Number of covariates in the simulation design (constant, three `W`, `S`).
pub const DESIGN_D: usize = 5;

/// Cap on redraws when an instance's equilibrium solve fails.
pub const MAX_SOLVE_REDRAWS: usize = 100;

const DGP_FP_TOL: f64 = 1e-13;
const DGP_FP_MAX_ITER: usize = 100_000;

/// What to do when a drawn instance violates the contraction bound
/// `sup |α0 + α1| < 4` on its observed relative-centrality support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum MarginPolicy {
    /// Count the violation and keep the draw (the equilibrium solve must
    /// still converge).
    #[default]
    Report,
    /// Redraw with the next sub-seed, failing after `max_attempts` draws.
    Regenerate { max_attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeDraw {
    /// `Y_i ~ Bernoulli(σ*_i)`.
    #[default]
    Bernoulli,
    /// `Y_i = 1{ε1 − ε0 ≤ Z_i'θ}` with independent standard Gumbel shocks.
    GumbelPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub theta_true: Theta,
    pub lambda: f64,
    pub max_friends: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub margin_policy: MarginPolicy,
    /// Draw the network once from `base_seed` and reuse it in every replicate.
    pub fixed_network: bool,
    pub outcome_draw: OutcomeDraw,
}

impl DgpConfig {
    /// The simulation design with `β = (−1, 1, −1, 1, −1)` and the given peer
    /// parameters.
    pub fn paper_design(n: usize, phi1: f64, psi0: f64, psi1: f64) -> Self {
        DgpConfig {
            n,
            theta_true: Theta::new(vec![-1.0, 1.0, -1.0, 1.0, -1.0], phi1, psi0, psi1),
            lambda: 0.1,
            max_friends: 10,
            replications: 200,
            base_seed: 20_240_601,
            margin_policy: MarginPolicy::Report,
            fixed_network: false,
            outcome_draw: OutcomeDraw::Bernoulli,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_true.d() != DESIGN_D {
            return Err(Error::Config(format!(
                "the simulation design has {DESIGN_D} covariates, theta_true has {}",
                self.theta_true.d()
            )));
        }
        if self.n <= self.theta_true.dim() {
            return Err(Error::Config(format!(
                "n = {} must exceed the parameter count {}",
                self.n,
                self.theta_true.dim()
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda = {} outside (0, 1)",
                self.lambda
            )));
        }
        if let MarginPolicy::Regenerate { max_attempts: 0 } = self.margin_policy {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

fn instance_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform-nomination network: `Q_i ~ U{0..max_friends}` (capped at `n − 1`),
/// friends drawn without replacement from the other players.
pub fn draw_network<R: Rng>(n: usize, max_friends: usize, rng: &mut R) -> DirectedNetwork {
    let lists = (0..n)
        .map(|i| {
            let q = rng.random_range(0..=max_friends).min(n - 1);
            sample(rng, n - 1, q)
                .into_iter()
                .map(|k| if k >= i { k + 1 } else { k })
                .collect()
        })
        .collect();
    DirectedNetwork::from_friend_lists(lists)
}

/// Columns `W_1, W_2, W_3` for `n` players.
pub fn draw_shifters<R: Rng>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let root3 = 3f64.sqrt();
    let unif = Uniform::new_inclusive(-root3, root3).expect("valid bounds");
    (0..n)
        .map(|_| {
            let w1 = unif.sample(rng);
            let w2: f64 = StandardNormal.sample(rng);
            let w3 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            [w1, w2, w3]
        })
        .collect()
}

/// Outcomes given equilibrium beliefs (and, for the Gumbel path, the
/// equilibrium linear index `Z_i(Σ*)'θ`).
pub fn draw_outcomes<R: Rng>(
    sigma: &BeliefProfile,
    index: &[f64],
    how: OutcomeDraw,
    rng: &mut R,
) -> Outcomes {
    let y: Vec<bool> = match how {
        OutcomeDraw::Bernoulli => sigma
            .as_slice()
            .iter()
            .map(|&s| rng.random::<f64>() < s)
            .collect(),
        OutcomeDraw::GumbelPair => index
            .iter()
            .map(|&eta| {
                let mut gumbel = || {
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    -(-u.ln()).ln()
                };
                let (e0, e1) = (gumbel(), gumbel());
                e1 - e0 <= eta
            })
            .collect(),
    };
    Outcomes::from_bools(&y)
}

#[derive(Debug, Clone)]
pub struct SimulatedInstance {
    pub game: GameInstance,
    pub sigma_star: BeliefProfile,
    pub y: Outcomes,
    pub margin: ContractionMargin,
    /// Draws discarded before this one.
    pub regenerations: usize,
    /// Draws (including this one) whose contraction margin was not positive.
    pub margin_violations: usize,
    pub equilibrium_iterations: usize,
    pub seed: u64,
}

fn build_game(
    net: DirectedNetwork,
    lambda: f64,
    data_rng: &mut ChaCha8Rng,
) -> Result<GameInstance> {
    let cent = katz_bonacich(
        &net,
        lambda,
        DEFAULT_CENTRALITY_TOL,
        DEFAULT_CENTRALITY_DEPTH,
    )?;
    let n = net.n();
    let w = draw_shifters(n, data_rng);
    let x = nalgebra::DMatrix::from_fn(n, DESIGN_D, |i, k| match k {
        0 => 1.0,
        1..=3 => w[i][k - 1],
        _ => cent.scores[i],
    });
    let names = ["const", "w1", "w2", "w3", "s"].map(String::from).to_vec();
    GameInstance::new(net, cent, Covariates::new(x, names)?)
}

fn generate_with(
    cfg: &DgpConfig,
    seed: u64,
    fixed: Option<&DirectedNetwork>,
) -> Result<SimulatedInstance> {
    cfg.validate()?;
    let theta = &cfg.theta_true;
    let mut regenerations = 0;
    let mut margin_violations = 0;
    let attempt_cap = match cfg.margin_policy {
        MarginPolicy::Report => MAX_SOLVE_REDRAWS,
        MarginPolicy::Regenerate { max_attempts } => max_attempts,
    };
    let mut last_problem = String::new();
    for attempt in 0..attempt_cap as u64 {
        let net = match fixed {
            Some(net) => net.clone(),
            None => draw_network(cfg.n, cfg.max_friends, &mut instance_rng(seed, 2 * attempt)),
        };
        let mut data_rng = instance_rng(seed, 2 * attempt + 1);
        let game = build_game(net, cfg.lambda, &mut data_rng)?;
        let margin = game.contraction_margin(theta);
        if !margin.holds() {
            margin_violations += 1;
            if let MarginPolicy::Regenerate { .. } = cfg.margin_policy {
                regenerations += 1;
                last_problem = format!("contraction margin {:.4}", margin.margin);
                continue;
            }
        }
        let eq = match game.solve_equilibrium(
            theta,
            DGP_FP_TOL,
            DGP_FP_MAX_ITER,
            &BeliefProfile::zeros(cfg.n),
        ) {
            Ok(eq) => eq,
            Err(e) => {
                regenerations += 1;
                last_problem = e.to_string();
                continue;
            }
        };
        let index = game.linear_index(&eq.sigma, theta)?;
        let y = draw_outcomes(&eq.sigma, &index, cfg.outcome_draw, &mut data_rng);
        return Ok(SimulatedInstance {
            game,
            sigma_star: eq.sigma,
            y,
            margin,
            regenerations,
            margin_violations,
            equilibrium_iterations: eq.iterations,
            seed,
        });
    }
    Err(Error::Config(format!(
        "no admissible instance after {regenerations} regenerations (seed {seed}; last: {last_problem})"
    )))
}

/// Draws one instance with its true equilibrium and outcomes.
pub fn generate_instance(cfg: &DgpConfig, seed: u64) -> Result<SimulatedInstance> {
    generate_with(cfg, seed, None)
}

/// Draws an instance on a given network (covariates and outcomes redrawn).
pub fn generate_on_network(
    cfg: &DgpConfig,
    net: &DirectedNetwork,
    seed: u64,
) -> Result<SimulatedInstance> {
    if net.n() != cfg.n {
        return Err(Error::Dimension("network size differs from cfg.n".into()));
    }
    generate_with(cfg, seed, Some(net))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub wald_p_value: Option<f64>,
    pub error: Option<String>,
    pub margin: f64,
    pub regenerations: usize,
    pub margin_violations: usize,
}

impl ReplicateRecord {
    pub fn usable(&self) -> bool {
        self.converged && self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub true_value: f64,
    pub bias: f64,
    /// Sample SD across replicates (`R − 1` denominator, 0 when `R = 1`).
    pub sd: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub schema_version: u32,
    pub config: DgpConfig,
    pub names: Vec<String>,
    pub per_parameter: Vec<ParamStats>,
    pub used: usize,
    /// Replicates whose NPLE did not converge (excluded from the aggregates).
    pub nonconverged: usize,
    /// Replicates that failed outright (generation or estimation error).
    pub failed: usize,
    pub regenerations: usize,
    pub margin_violations: usize,
    pub records: Vec<ReplicateRecord>,
}

pub const MC_SCHEMA_VERSION: u32 = 1;

fn run_replicate(
    cfg: &DgpConfig,
    est: &NpleOptions,
    fixed: Option<&DirectedNetwork>,
    r: usize,
) -> ReplicateRecord {
    let seed = cfg.base_seed.wrapping_add(r as u64);
    let p = cfg.theta_true.dim();
    let mut rec = ReplicateRecord {
        replicate: r,
        seed,
        estimates: vec![f64::NAN; p],
        std_errors: vec![f64::NAN; p],
        converged: false,
        outer_iterations: 0,
        wald_p_value: None,
        error: None,
        margin: f64::NAN,
        regenerations: 0,
        margin_violations: 0,
    };
    let inst = match generate_with(cfg, seed, fixed) {
        Ok(inst) => inst,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.margin = inst.margin.margin;
    rec.regenerations = inst.regenerations;
    rec.margin_violations = inst.margin_violations;
    match nple(&inst.game, &inst.y, est) {
        Ok(fit) => {
            rec.converged = fit.converged;
            rec.outer_iterations = fit.outer_iterations;
            rec.wald_p_value = run_tests(&fit).ok().and_then(|t| t.wald).map(|w| w.p_value);
            rec.estimates = fit.estimates;
            rec.std_errors = fit.std_errors;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Aggregates bias, SD and MSE over usable records, in replicate order.
pub fn aggregate(theta_true: &Theta, records: &[ReplicateRecord]) -> Vec<ParamStats> {
    let truth = theta_true.to_vector();
    let used: Vec<&ReplicateRecord> = records.iter().filter(|r| r.usable()).collect();
    let r = used.len() as f64;
    (0..truth.len())
        .map(|k| {
            if used.is_empty() {
                return ParamStats {
                    true_value: truth[k],
                    bias: f64::NAN,
                    sd: f64::NAN,
                    mse: f64::NAN,
                };
            }
            let errs: Vec<f64> = used.iter().map(|rec| rec.estimates[k] - truth[k]).collect();
            let bias = errs.iter().sum::<f64>() / r;
            let mse = errs.iter().map(|e| e * e).sum::<f64>() / r;
            let sd = if used.len() > 1 {
                (errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                0.0
            };
            ParamStats {
                true_value: truth[k],
                bias,
                sd,
                mse,
            }
        })
        .collect()
}

/// Runs `cfg.replications` independent replicates (in parallel on the current
/// rayon pool) and aggregates the estimation errors.
pub fn run_experiment(cfg: &DgpConfig, est: &NpleOptions) -> Result<McReport> {
    cfg.validate()?;
    let fixed = if cfg.fixed_network {
        Some(draw_network(
            cfg.n,
            cfg.max_friends,
            &mut instance_rng(cfg.base_seed, 0),
        ))
    } else {
        None
    };
    let records: Vec<ReplicateRecord> = (1..=cfg.replications)
        .into_par_iter()
        .map(|r| run_replicate(cfg, est, fixed.as_ref(), r))
        .collect();
    let per_parameter = aggregate(&cfg.theta_true, &records);
    Ok(McReport {
        schema_version: MC_SCHEMA_VERSION,
        config: cfg.clone(),
        names: Theta::names(cfg.theta_true.d()),
        per_parameter,
        used: records.iter().filter(|r| r.usable()).count(),
        nonconverged: records
            .iter()
            .filter(|r| r.error.is_none() && !r.converged)
            .count(),
        failed: records.iter().filter(|r| r.error.is_some()).count(),
        regenerations: records.iter().map(|r| r.regenerations).sum(),
        margin_violations: records.iter().map(|r| r.margin_violations).sum(),
        records,
    })
}

impl McReport {
    pub fn stats(&self, name: &str) -> Option<&ParamStats> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| &self.per_parameter[k])
    }

    pub fn excluded(&self) -> usize {
        self.nonconverged + self.failed
    }
}

fn design_label(t: &Theta) -> String {
    format!("({},{},{})", fmt_g(t.phi1), fmt_g(t.psi0), fmt_g(t.psi1))
}

fn fmt_g(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

fn header(names: &[String]) -> String {
    let mut out = format!("{:<16}{:>6} |", "(phi1,psi0,psi1)", "n");
    for name in names {
        out.push_str(&format!("{name:>11}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    out
}

/// Average bias with the SD in parentheses underneath, one block per report.
pub fn bias_sd_table(reports: &[McReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = String::from("Simulation results: average bias and standard deviation\n");
    out.push_str(&header(&first.names));
    let mut last_design = String::new();
    for rep in reports {
        let design = design_label(&rep.config.theta_true);
        let label = if design == last_design {
            String::new()
        } else {
            design.clone()
        };
        last_design = design;
        out.push_str(&format!("{:<16}{:>6} |", label, rep.config.n));
        for s in &rep.per_parameter {
            out.push_str(&format!("{:>11.6}", s.bias));
        }
        out.push('\n');
        out.push_str(&format!("{:<16}{:>6} |", "", ""));
        for s in &rep.per_parameter {
            out.push_str(&format!("{:>11}", format!("({:.6})", s.sd)));
        }
        out.push('\n');
    }
    out.push_str(&diagnostics_footer(reports));
    out
}

pub fn mse_table(reports: &[McReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = String::from("Simulation results: mean square error\n");
    out.push_str(&header(&first.names));
    let mut last_design = String::new();
    for rep in reports {
        let design = design_label(&rep.config.theta_true);
        let label = if design == last_design {
            String::new()
        } else {
            design.clone()
        };
        last_design = design;
        out.push_str(&format!("{:<16}{:>6} |", label, rep.config.n));
        for s in &rep.per_parameter {
            out.push_str(&format!("{:>11.6}", s.mse));
        }
        out.push('\n');
    }
    out.push_str(&diagnostics_footer(reports));
    out
}

fn diagnostics_footer(reports: &[McReport]) -> String {
    reports
        .iter()
        .map(|r| {
            format!(
                "n={}: {} of {} replications used, {} excluded ({} non-converged, {} failed), {} regenerations, {} contraction-margin violations\n",
                r.config.n,
                r.used,
                r.config.replications,
                r.excluded(),
                r.nonconverged,
                r.failed,
                r.regenerations,
                r.margin_violations
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_draw_respects_cap_and_no_self_loops() {
        let mut rng = instance_rng(7, 0);
        let net = draw_network(50, 10, &mut rng);
        assert!(net.check_friend_cap(10).is_ok());
        for (i, j) in net.edges() {
            assert_ne!(i, j);
        }
        // tiny network caps Q_i at n - 1
        let net = draw_network(3, 10, &mut rng);
        assert!(net.check_friend_cap(2).is_ok());
    }

    #[test]
    fn single_replicate_mse_equals_squared_bias() {
        let mut cfg = DgpConfig::paper_design(60, 0.5, 0.5, 0.0);
        cfg.replications = 1;
        let rep = run_experiment(&cfg, &NpleOptions::default()).unwrap();
        assert_eq!(rep.used, 1);
        for s in &rep.per_parameter {
            assert_eq!(s.sd, 0.0);
            assert!((s.mse - s.bias * s.bias).abs() <= 1e-12 * s.mse.max(1.0));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = DgpConfig::paper_design(8, 1.0, 1.0, 1.0);
        assert!(cfg.validate().is_err());
        cfg.n = 100;
        cfg.lambda = 1.0;
        assert!(cfg.validate().is_err());
        cfg.lambda = 0.1;
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        cfg.replications = 1;
        cfg.theta_true.beta.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tables_have_one_column_per_parameter() {
        let mut cfg = DgpConfig::paper_design(80, 1.0, 1.0, 0.0);
        cfg.replications = 2;
        let rep = run_experiment(&cfg, &NpleOptions::default()).unwrap();
        let t = bias_sd_table(std::slice::from_ref(&rep));
        assert!(t.contains("beta4") && t.contains("psi1") && t.contains("(1,1,0)"));
        assert!(mse_table(&[rep]).contains("mean square error"));
    }
}
