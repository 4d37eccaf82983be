//! `peergame`: centrality, simulation, estimation and Monte Carlo runs from
//! the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 non-convergence, 4 identification
//! or rank failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use peergame::estimation::{
    cpe_fit, default_starts, multi_start_nple, nple, reduced_logit_fit, run_tests, BeliefUpdate,
    CovarianceKind, FitResult, NpleOptions, TestReport,
};
use peergame::game::{GameInstance, Outcomes};
use peergame::io::{self, ExperimentFile, SCHEMA_VERSION};
use peergame::montecarlo::{self, DgpConfig, MarginPolicy};
use peergame::network::{self, degree_summary, katz_bonacich, DEFAULT_CENTRALITY_DEPTH};
use peergame::Error;

#[derive(Parser)]
#[command(
    name = "peergame",
    version,
    about = "Binary-action network games with centrality-dependent peer effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Katz-Bonacich centrality and a degree summary for an edge list.
    Centrality(CentralityArgs),
    /// Draw one synthetic instance and write everything needed to estimate it.
    Simulate(SimulateArgs),
    /// Estimate the full, CPE and/or reduced-form logit models.
    Estimate(EstimateArgs),
    /// Monte Carlo bias, SD and MSE of the estimator.
    Montecarlo(MontecarloArgs),
}

#[derive(Args)]
struct CentralityArgs {
    /// Edge list, one "src dst" pair per line, 0-indexed.
    #[arg(long)]
    edges: PathBuf,
    /// Number of players (default: largest index in the edge list + 1).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = network::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = network::DEFAULT_CENTRALITY_TOL)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter override, e.g. --theta psi0=2 (repeatable).
    #[arg(long = "theta", value_name = "KEY=V")]
    theta: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Largest number of friends a player may nominate.
    #[arg(long)]
    max_friends: Option<usize>,
    /// Redraw instances that violate the contraction bound, at most K times.
    #[arg(long, value_name = "K")]
    strict_margin: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Full,
    Cpe,
    Logit,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Covariance {
    Paper,
    EquilibriumJacobian,
}

#[derive(Args)]
struct EstimationArgs {
    /// Tolerance of equilibrium solves.
    #[arg(long, default_value_t = peergame::game::DEFAULT_FP_TOL)]
    tol_fp: f64,
    /// Parameter tolerance of the outer NPLE iteration.
    #[arg(long, default_value_t = peergame::estimation::DEFAULT_NPLE_TOL)]
    tol_nple: f64,
    /// Score tolerance of the inner logit.
    #[arg(long, default_value_t = 1e-10)]
    tol_logit: f64,
    #[arg(long, default_value_t = peergame::estimation::DEFAULT_MAX_OUTER)]
    max_outer: usize,
    #[arg(long, value_enum, default_value_t = Covariance::Paper)]
    covariance: Covariance,
    /// Replace the one-step belief update by a full equilibrium solve.
    #[arg(long)]
    full_solve: bool,
}

impl EstimationArgs {
    fn options(&self) -> NpleOptions {
        let mut o = NpleOptions {
            tol: self.tol_nple,
            max_outer: self.max_outer,
            fp_tol: self.tol_fp,
            covariance: match self.covariance {
                Covariance::Paper => CovarianceKind::Paper,
                Covariance::EquilibriumJacobian => CovarianceKind::EquilibriumJacobian,
            },
            update: if self.full_solve {
                BeliefUpdate::FullSolve
            } else {
                BeliefUpdate::SingleStep
            },
            ..NpleOptions::default()
        };
        o.inner.score_tol = self.tol_logit;
        o
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    edges: PathBuf,
    /// Covariate CSV with a header row.
    #[arg(long)]
    covariates: PathBuf,
    /// Outcome file, or the name of a column in the covariate CSV.
    #[arg(long)]
    outcomes: String,
    #[arg(long, value_enum, default_value_t = Model::All)]
    model: Model,
    #[arg(long, default_value_t = network::DEFAULT_LAMBDA)]
    lambda: f64,
    #[command(flatten)]
    est: EstimationArgs,
    /// Run the full model from K starting profiles and keep the best fixed point.
    #[arg(long, value_name = "K")]
    multi_start: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct MontecarloArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Sample size (repeatable).
    #[arg(long)]
    n: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Keep one network for all replicates.
    #[arg(long)]
    fixed_network: bool,
    #[command(flatten)]
    est: EstimationArgs,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    /// A fit finished without converging; the report has been written.
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => e.exit_code() as u8,
            Failure::NotConverged(_) => 3,
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Centrality(a) => centrality(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Montecarlo(a) => run_montecarlo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::NotConverged(msg) => eprintln!("error: {msg}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn require_file(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

fn prepare_out(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Error> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

/// Largest node index mentioned on a well-formed line, plus one.
fn inferred_player_count(text: &str) -> usize {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace().filter_map(|t| t.parse::<usize>().ok()))
        .max()
        .map_or(1, |m| m + 1)
}

fn centrality(a: CentralityArgs) -> CliResult {
    require_file(&a.edges)?;
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
    }
    let text = io::read_to_string(&a.edges)?;
    let n = a.n.unwrap_or_else(|| inferred_player_count(&text));
    let net = network::parse_edge_list(&text, n)?;
    let cent = katz_bonacich(&net, a.lambda, a.tol, DEFAULT_CENTRALITY_DEPTH)?;
    let summary = degree_summary(&net, &cent)?;
    let table = io::centrality_table(&cent);
    print!("{table}\n{}", summary.to_table());
    if !cent.converged {
        eprintln!(
            "warning: centrality series stopped at depth {} before reaching tolerance",
            cent.depth
        );
    }
    if let Some(dir) = &a.out {
        io::write_string(&dir.join("centrality.txt"), &table)?;
        io::write_string(&dir.join("summary.txt"), &summary.to_table())?;
        io::write_json(
            &dir.join("centrality.json"),
            &io::CentralityDocument {
                schema_version: SCHEMA_VERSION,
                lambda: cent.lambda,
                converged: cent.converged,
                depth: cent.depth,
                scores: &cent.scores,
                summary: &summary,
            },
        )?;
    }
    Ok(())
}

/// Design from the config file (if any) and command-line overrides.
fn design(d: &DesignArgs, n: usize) -> Result<DgpConfig, Error> {
    let file = match &d.config {
        Some(p) => {
            require_file(p)?;
            ExperimentFile::parse(&io::read_to_string(p)?)?
        }
        None => ExperimentFile::default(),
    };
    let mut cfg = file.dgp(n)?;
    for t in &d.theta {
        io::apply_theta_override(&mut cfg.theta_true, t)?;
    }
    if let Some(s) = d.seed {
        cfg.base_seed = s;
    }
    if let Some(l) = d.lambda {
        cfg.lambda = l;
    }
    if let Some(m) = d.max_friends {
        cfg.max_friends = m;
    }
    if let Some(k) = d.strict_margin {
        cfg.margin_policy = MarginPolicy::Regenerate { max_attempts: k };
    }
    Ok(cfg)
}

fn config_sizes(d: &DesignArgs) -> Result<Vec<usize>, Error> {
    match &d.config {
        Some(p) => {
            require_file(p)?;
            Ok(ExperimentFile::parse(&io::read_to_string(p)?)?
                .n
                .map(|s| s.to_vec())
                .unwrap_or_default())
        }
        None => Ok(Vec::new()),
    }
}

fn simulate(a: SimulateArgs) -> CliResult {
    let n = match a.n {
        Some(n) => n,
        None => config_sizes(&a.design)?.first().copied().unwrap_or(400),
    };
    let cfg = design(&a.design, n)?;
    cfg.validate()?;
    prepare_out(&a.out)?;
    let inst = montecarlo::generate_instance(&cfg, cfg.base_seed)?;
    let dir = &a.out;
    io::write_string(&dir.join("edges.txt"), &io::edge_list_text(&inst.game.net))?;
    io::write_string(
        &dir.join("covariates.csv"),
        &io::covariates_to_csv(&inst.game.cov),
    )?;
    io::write_string(&dir.join("outcomes.csv"), &io::outcomes_to_text(&inst.y))?;
    io::write_string(&dir.join("theta.toml"), &io::theta_to_toml(&cfg.theta_true))?;
    io::write_string(
        &dir.join("beliefs.csv"),
        &io::beliefs_to_text(&inst.sigma_star),
    )?;
    io::write_json(
        &dir.join("instance.json"),
        &io::InstanceDocument {
            schema_version: SCHEMA_VERSION,
            config: &cfg,
            seed: inst.seed,
            n,
            edges: inst.game.net.edge_count(),
            contraction_margin: inst.margin.margin,
            regenerations: inst.regenerations,
            margin_violations: inst.margin_violations,
            equilibrium_iterations: inst.equilibrium_iterations,
            outcome_mean: inst.y.mean(),
        },
    )?;
    println!(
        "simulated n = {n}, {} edges, mean outcome {:.6}, contraction margin {:.6}",
        inst.game.net.edge_count(),
        inst.y.mean(),
        inst.margin.margin
    );
    println!(
        "regenerations: {}, contraction-margin violations: {}",
        inst.regenerations, inst.margin_violations
    );
    if !inst.margin.holds() {
        eprintln!("warning: the contraction bound fails on this draw; uniqueness of the equilibrium is not guaranteed");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_game(a: &EstimateArgs) -> Result<(GameInstance, Outcomes), Error> {
    require_file(&a.edges)?;
    require_file(&a.covariates)?;
    let table = io::load_numeric_csv(&a.covariates)?;
    let (y, drop) = io::resolve_outcomes(&a.outcomes, &table)?;
    let cov = io::covariates_from_table(&table, drop.as_deref())?;
    let n = cov.n();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{} outcomes for {n} covariate rows",
            y.len()
        )));
    }
    let net = network::load_edge_list(&a.edges, n)?;
    let cent = katz_bonacich(
        &net,
        a.lambda,
        network::DEFAULT_CENTRALITY_TOL,
        DEFAULT_CENTRALITY_DEPTH,
    )?;
    Ok((GameInstance::new(net, cent, cov)?, y))
}

fn write_trace(dir: &Path, lines: &str) -> Result<PathBuf, Error> {
    prepare_out(dir)?;
    let path = dir.join("residual_trace.txt");
    io::write_string(&path, lines)?;
    Ok(path)
}

fn trace_text(fit: &FitResult) -> String {
    let mut out = format!(
        "# {} outer iteration, sup-norm parameter change\n",
        fit.model.label()
    );
    for (j, r) in fit.outer_residuals.iter().enumerate() {
        out.push_str(&format!("{} {r:e}\n", j + 1));
    }
    out
}

fn estimate(a: EstimateArgs) -> CliResult {
    set_jobs(a.jobs)?;
    let out_dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
    }
    let (g, y) = load_game(&a)?;
    let opts = a.est.options();

    let run_structural = |full: bool| -> Result<FitResult, Error> {
        let fitted = if full {
            nple(&g, &y, &opts)
        } else {
            cpe_fit(&g, &y, &opts)
        };
        fitted.inspect_err(|e| {
            if e.exit_code() == 3 {
                if let Ok(p) = write_trace(&out_dir, &format!("# {e}\n")) {
                    eprintln!("residual trace written to {}", p.display());
                }
            }
        })
    };

    let mut fits: Vec<FitResult> = Vec::new();
    let mut multi = None;
    if matches!(a.model, Model::Full | Model::All) {
        match a.multi_start {
            Some(k) if k > 1 => {
                let ms = multi_start_nple(&g, &y, &opts, default_starts(k, a.seed));
                let summary = io::MultiStartSummary {
                    starts: ms.fits.len(),
                    converged: ms
                        .fits
                        .iter()
                        .filter(|f| f.as_ref().is_ok_and(|f| f.converged))
                        .count(),
                    selected: ms.selected,
                    max_disagreement: ms.max_disagreement,
                    log_likelihoods: ms
                        .fits
                        .iter()
                        .map(|f| {
                            f.as_ref()
                                .ok()
                                .filter(|f| f.converged)
                                .map(|f| f.log_likelihood)
                        })
                        .collect(),
                };
                eprintln!(
                    "multi-start: {} of {} starts converged, max disagreement {:.6e}",
                    summary.converged, summary.starts, summary.max_disagreement
                );
                match ms.best() {
                    Some(best) => fits.push(best.clone()),
                    None => {
                        let first = ms.fits.into_iter().next().expect("at least one start");
                        fits.push(first?);
                    }
                }
                multi = Some(summary);
            }
            _ => fits.push(run_structural(true)?),
        }
    }
    if matches!(a.model, Model::Cpe | Model::All) {
        fits.push(run_structural(false)?);
    }
    if matches!(a.model, Model::Logit | Model::All) {
        fits.push(reduced_logit_fit(&g, &y, true, &opts.inner)?);
    }

    let tests: Vec<Option<TestReport>> = fits
        .iter()
        .map(|f| if f.converged { run_tests(f).ok() } else { None })
        .collect();
    let pairs: Vec<(&FitResult, Option<&TestReport>)> =
        fits.iter().zip(tests.iter().map(Option::as_ref)).collect();
    let table = io::estimation_table(&pairs, &g.cov.names);
    print!("{table}");

    let doc = io::EstimationDocument {
        schema_version: SCHEMA_VERSION,
        n: g.n(),
        edges: g.net.edge_count(),
        covariate_names: &g.cov.names,
        fits: pairs
            .iter()
            .map(|(f, t)| io::FitEntry { fit: f, tests: *t })
            .collect(),
        multi_start: multi,
    };
    if let Some(dir) = &a.out {
        io::write_string(&dir.join("table.txt"), &table)?;
        io::write_json(&dir.join("fit.json"), &doc)?;
    }

    let stalled: Vec<&FitResult> = fits.iter().filter(|f| !f.converged).collect();
    if !stalled.is_empty() {
        let text: String = stalled.iter().map(|f| trace_text(f)).collect();
        let path = write_trace(&out_dir, &text)?;
        let names: Vec<&str> = stalled.iter().map(|f| f.model.label()).collect();
        return Err(Failure::NotConverged(format!(
            "{} did not converge; residual trace written to {}",
            names.join(", "),
            path.display()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct MontecarloDocument<'a> {
    schema_version: u32,
    experiments: &'a [montecarlo::McReport],
}

fn run_montecarlo(a: MontecarloArgs) -> CliResult {
    set_jobs(a.jobs)?;
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
    }
    let mut sizes = a.n.clone();
    if sizes.is_empty() {
        sizes = config_sizes(&a.design)?;
    }
    if sizes.is_empty() {
        sizes = vec![400, 800, 1600];
    }
    let opts = a.est.options();
    let mut reports = Vec::new();
    for &n in &sizes {
        let mut cfg = design(&a.design, n)?;
        if let Some(r) = a.reps {
            cfg.replications = r;
        }
        if a.fixed_network {
            cfg.fixed_network = true;
        }
        reports.push(montecarlo::run_experiment(&cfg, &opts)?);
    }
    let bias = montecarlo::bias_sd_table(&reports);
    let mse = montecarlo::mse_table(&reports);
    print!("{bias}\n{mse}");
    for r in &reports {
        if r.excluded() > 0 {
            eprintln!(
                "warning: n = {}: {} of {} replicates excluded ({} non-converged, {} failed)",
                r.config.n,
                r.excluded(),
                r.config.replications,
                r.nonconverged,
                r.failed
            );
        }
        if r.used == 0 {
            eprintln!("warning: n = {}: no usable replicates", r.config.n);
        }
    }
    if let Some(dir) = &a.out {
        io::write_string(&dir.join("bias_sd.txt"), &bias)?;
        io::write_string(&dir.join("mse.txt"), &mse)?;
        io::write_json(
            &dir.join("montecarlo.json"),
            &MontecarloDocument {
                schema_version: SCHEMA_VERSION,
                experiments: &reports,
            },
        )?;
    }
    Ok(())
}
