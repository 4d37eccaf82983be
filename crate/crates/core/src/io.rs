//! File formats and human-readable tables.
//!
//! * Covariates: CSV with a header row. A constant column is prepended unless
//!   the first column is already all ones.
//! * Outcomes: one 0/1 value per line (optional header, `#` comments), or a
//!   named column of the covariate CSV.
//! * Parameters: flat TOML, `beta0 = …`, …, `phi1`, `psi0`, `psi1`.
//! * Reports: JSON with a `schema_version` field. Machine-readable files carry
//!   full precision; text tables use 6 decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{
    significance_stars, CovarianceKind, FitResult, ModelTag, TestReport, FRIEND_CENTRALITY_NAME,
    SUM_NAME,
};
use crate::game::{BeliefProfile, Covariates, Outcomes, Theta, PEER_NAMES};
use crate::montecarlo::{DgpConfig, MarginPolicy, OutcomeDraw};
use crate::network::{CentralityVector, DirectedNetwork};

pub const SCHEMA_VERSION: u32 = 1;

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_string(path, &text)
}

/// A numeric CSV table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }
}

pub fn parse_numeric_csv(text: &str) -> Result<NumericTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(String::from)
        .collect();
    if headers.is_empty() || headers.iter().any(|h| h.is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "header row must name every column".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec
            .iter()
            .zip(&headers)
            .map(|(field, name)| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("column {name}: {field:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(NumericTable { headers, rows })
}

pub fn load_numeric_csv(path: &Path) -> Result<NumericTable> {
    parse_numeric_csv(&read_to_string(path)?)
}

/// Builds covariates from a table, leaving out the column `exclude` (the
/// outcome column, if it lives in the same file).
pub fn covariates_from_table(table: &NumericTable, exclude: Option<&str>) -> Result<Covariates> {
    let keep: Vec<usize> = (0..table.headers.len())
        .filter(|&k| Some(table.headers[k].as_str()) != exclude)
        .collect();
    let n = table.rows.len();
    let x = DMatrix::from_fn(n, keep.len(), |i, k| table.rows[i][keep[k]]);
    let names: Vec<String> = keep.iter().map(|&k| table.headers[k].clone()).collect();
    if n > 0 && !keep.is_empty() && x.column(0).iter().all(|&v| v == 1.0) {
        Covariates::new(x, names)
    } else {
        Covariates::with_constant(x, names)
    }
}

pub fn parse_outcomes(text: &str) -> Result<Outcomes> {
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => values.push(v),
            Ok(v) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("outcome {v} is not 0 or 1"),
                })
            }
            // a header line before any data
            Err(_) if values.is_empty() && idx == first_data_line(text) => {}
            Err(_) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("{line:?} is not an outcome"),
                })
            }
        }
    }
    Outcomes::new(values)
}

fn first_data_line(text: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .unwrap_or(0)
}

/// Resolves `--outcomes`: an existing file, else a column of the covariate
/// table. Returns the outcomes and the column name to drop from the
/// covariates, if any.
pub fn resolve_outcomes(spec: &str, table: &NumericTable) -> Result<(Outcomes, Option<String>)> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok((parse_outcomes(&read_to_string(path)?)?, None));
    }
    match table.column_index(spec) {
        Some(k) => Ok((Outcomes::new(table.column(k))?, Some(spec.to_string()))),
        None => Err(Error::Config(format!(
            "--outcomes {spec:?} is neither a file nor a covariate column"
        ))),
    }
}

/// Covariates as CSV at full precision (the constant column included).
pub fn covariates_to_csv(cov: &Covariates) -> String {
    let mut out = cov.names.join(",");
    out.push('\n');
    for row in cov.x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn outcomes_to_text(y: &Outcomes) -> String {
    let mut out = String::from("y\n");
    for &v in y.as_slice() {
        out.push_str(if v == 1.0 { "1\n" } else { "0\n" });
    }
    out
}

pub fn beliefs_to_text(sigma: &BeliefProfile) -> String {
    let mut out = String::from("sigma_star\n");
    for v in sigma.as_slice() {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

pub fn parse_beliefs(text: &str) -> Result<BeliefProfile> {
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (idx == 0 && line.parse::<f64>().is_err()) {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("{line:?} is not a probability"),
        })?);
    }
    BeliefProfile::new(values)
}

/// Flat TOML: `beta0 = …` in order, then `phi1`, `psi0`, `psi1`.
pub fn theta_to_toml(theta: &Theta) -> String {
    let mut out = String::new();
    for (name, v) in Theta::names(theta.d()).iter().zip(theta.to_vector().iter()) {
        let _ = writeln!(out, "{name} = {v:?}");
    }
    out
}

fn theta_from_map(map: &BTreeMap<String, f64>) -> Result<Theta> {
    let mut beta = Vec::new();
    while let Some(&v) = map.get(&format!("beta{}", beta.len())) {
        beta.push(v);
    }
    let known = beta.len() + PEER_NAMES.len();
    if beta.is_empty() {
        return Err(Error::Config("parameter needs at least beta0".into()));
    }
    let peer = |name: &str| {
        map.get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name} missing")))
    };
    let theta = Theta::new(beta, peer("phi1")?, peer("psi0")?, peer("psi1")?);
    if map.len() != known {
        let names = Theta::names(theta.d());
        let extra: Vec<&String> = map.keys().filter(|k| !names.contains(k)).collect();
        return Err(Error::Config(format!("unknown parameter keys {extra:?}")));
    }
    Ok(theta)
}

fn table_to_map(table: &toml::Table) -> Result<BTreeMap<String, f64>> {
    table
        .iter()
        .map(|(k, v)| {
            let x = match v {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                other => return Err(Error::Config(format!("{k} = {other} is not a number"))),
            };
            Ok((k.clone(), x))
        })
        .collect()
}

pub fn parse_theta_toml(text: &str) -> Result<Theta> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    theta_from_map(&table_to_map(&table)?)
}

/// Applies `KEY=VALUE` to a parameter, where `KEY` is one of its names.
pub fn apply_theta_override(theta: &mut Theta, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--theta expects KEY=VALUE, got {assignment:?}")))?;
    let key = key.trim();
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("--theta {key}: {value:?} is not a number")))?;
    match key {
        "phi1" => theta.phi1 = value,
        "psi0" => theta.psi0 = value,
        "psi1" => theta.psi1 = value,
        _ => {
            let slot = key
                .strip_prefix("beta")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k < theta.d())
                .ok_or_else(|| Error::Config(format!("unknown parameter {key:?}")))?;
            theta.beta[slot] = value;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SampleSizes {
    One(usize),
    Many(Vec<usize>),
}

impl SampleSizes {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            SampleSizes::One(n) => vec![*n],
            SampleSizes::Many(v) => v.clone(),
        }
    }
}

/// Experiment configuration file. Every key is optional; missing keys take
/// the defaults of the simulation design.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub n: Option<SampleSizes>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub max_friends: Option<usize>,
    pub fixed_network: Option<bool>,
    /// Redraw instances violating the contraction bound, at most this many times.
    pub strict_margin: Option<usize>,
    pub outcome_draw: Option<OutcomeDraw>,
    pub theta: Option<toml::Table>,
    pub tol_nple: Option<f64>,
    pub tol_fp: Option<f64>,
    pub covariance: Option<CovarianceKind>,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Design for one sample size, starting from the (1, 1, 1) defaults.
    pub fn dgp(&self, n: usize) -> Result<DgpConfig> {
        let mut cfg = DgpConfig::paper_design(n, 1.0, 1.0, 1.0);
        if let Some(t) = &self.theta {
            let mut map: BTreeMap<String, f64> = Theta::names(cfg.theta_true.d())
                .into_iter()
                .zip(cfg.theta_true.to_vector().iter().copied())
                .collect();
            map.extend(table_to_map(t)?);
            cfg.theta_true = theta_from_map(&map)?;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(m) = self.max_friends {
            cfg.max_friends = m;
        }
        if let Some(f) = self.fixed_network {
            cfg.fixed_network = f;
        }
        if let Some(a) = self.strict_margin {
            cfg.margin_policy = MarginPolicy::Regenerate { max_attempts: a };
        }
        if let Some(o) = self.outcome_draw {
            cfg.outcome_draw = o;
        }
        Ok(cfg)
    }
}

/// Per-node centrality as an aligned table with 6 decimals.
pub fn centrality_table(cent: &CentralityVector) -> String {
    let mut out = format!("{:>8} {:>14}\n", "node", "centrality");
    for (i, s) in cent.scores.iter().enumerate() {
        let _ = writeln!(out, "{i:>8} {s:>14.6}");
    }
    out
}

#[derive(Debug, Serialize)]
pub struct CentralityDocument<'a> {
    pub schema_version: u32,
    pub lambda: f64,
    pub converged: bool,
    pub depth: usize,
    pub scores: &'a [f64],
    pub summary: &'a crate::network::DegreeSummary,
}

#[derive(Debug, Serialize)]
pub struct InstanceDocument<'a> {
    pub schema_version: u32,
    pub config: &'a DgpConfig,
    pub seed: u64,
    pub n: usize,
    pub edges: usize,
    pub contraction_margin: f64,
    pub regenerations: usize,
    pub margin_violations: usize,
    pub equilibrium_iterations: usize,
    pub outcome_mean: f64,
}

#[derive(Debug, Serialize)]
pub struct FitEntry<'a> {
    #[serde(flatten)]
    pub fit: &'a FitResult,
    pub tests: Option<&'a TestReport>,
}

#[derive(Debug, Serialize)]
pub struct MultiStartSummary {
    pub starts: usize,
    pub converged: usize,
    pub selected: Option<usize>,
    pub max_disagreement: f64,
    pub log_likelihoods: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
pub struct EstimationDocument<'a> {
    pub schema_version: u32,
    pub n: usize,
    pub edges: usize,
    pub covariate_names: &'a [String],
    pub fits: Vec<FitEntry<'a>>,
    pub multi_start: Option<MultiStartSummary>,
}

pub fn edge_list_text(net: &DirectedNetwork) -> String {
    format!(
        "# {} players, {} edges\n{}",
        net.n(),
        net.edge_count(),
        net.to_edge_list_string()
    )
}

const COL: usize = 16;
const LABEL: usize = 30;

fn two_sided_p(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    2.0 * (1.0 - normal.cdf(z.abs()))
}

fn cell(est: Option<(f64, f64, f64)>) -> (String, String) {
    match est {
        Some((e, se, p)) if e.is_finite() => (
            format!("{e:.6}{}", significance_stars(p)),
            if se.is_finite() {
                format!("({se:.6})")
            } else {
                String::new()
            },
        ),
        _ => (String::new(), String::new()),
    }
}

fn push_row(out: &mut String, label: &str, cells: &[(String, String)]) {
    let _ = write!(out, "{label:<LABEL$}");
    for (e, _) in cells {
        let _ = write!(out, "{e:>COL$}");
    }
    out.push('\n');
    if cells.iter().any(|(_, s)| !s.is_empty()) {
        let _ = write!(out, "{:<LABEL$}", "");
        for (_, s) in cells {
            let _ = write!(out, "{s:>COL$}");
        }
        out.push('\n');
    }
}

fn two_sided_cell(fit: &FitResult, name: &str) -> Option<(f64, f64, f64)> {
    let k = fit.index_of(name)?;
    if !fit.estimated[k] {
        return None;
    }
    let (e, se) = (fit.estimates[k], fit.std_errors[k]);
    Some((e, se, two_sided_p(e / se)))
}

fn one_sided_cell(tests: Option<&TestReport>, name: &str) -> Option<(f64, f64, f64)> {
    tests
        .and_then(|t| t.one_sided(name))
        .map(|t| (t.estimate, t.std_error, t.p_value))
}

/// Side-by-side comparison: covariate rows (two-sided stars), the peer
/// parameter block (one-sided stars), observations and pseudo-likelihood.
/// `covariate_names` label `beta0, beta1, …`.
pub fn estimation_table(
    fits: &[(&FitResult, Option<&TestReport>)],
    covariate_names: &[String],
) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<LABEL$}", "");
    for (fit, _) in fits {
        let _ = write!(out, "{:>COL$}", fit.model.label());
    }
    out.push('\n');
    let width = LABEL + COL * fits.len();
    out.push_str(&"-".repeat(width));
    out.push('\n');
    for (k, label) in covariate_names.iter().enumerate() {
        let name = format!("beta{k}");
        let cells: Vec<_> = fits
            .iter()
            .map(|(f, _)| cell(two_sided_cell(f, &name)))
            .collect();
        push_row(&mut out, label, &cells);
    }
    out.push_str("Peer effects\n");
    let peer_rows = [
        ("phi1", "  phi1 (alpha0 slope)"),
        ("psi0", "  psi0 (alpha1 level)"),
        ("psi1", "  psi1 (alpha1 slope)"),
        (SUM_NAME, "  phi1+psi1"),
    ];
    for (name, label) in peer_rows {
        let cells: Vec<_> = fits
            .iter()
            .map(|(f, t)| match f.model {
                ModelTag::ReducedLogit => cell(None),
                _ => cell(one_sided_cell(*t, name)),
            })
            .collect();
        push_row(&mut out, label, &cells);
    }
    if fits
        .iter()
        .any(|(f, _)| f.index_of(FRIEND_CENTRALITY_NAME).is_some())
    {
        let cells: Vec<_> = fits
            .iter()
            .map(|(f, _)| cell(two_sided_cell(f, FRIEND_CENTRALITY_NAME)))
            .collect();
        push_row(&mut out, "  Ave. friends' rel. centrality", &cells);
    }
    out.push_str(&"-".repeat(width));
    out.push('\n');
    let _ = write!(out, "{:<LABEL$}", "Observations");
    for (f, _) in fits {
        let _ = write!(out, "{:>COL$}", f.n);
    }
    out.push('\n');
    let _ = write!(out, "{:<LABEL$}", "Log pseudo-likelihood");
    for (f, _) in fits {
        let _ = write!(out, "{:>COL$.6}", f.log_likelihood * f.n as f64);
    }
    out.push('\n');
    for (f, t) in fits {
        if let Some(w) = t.and_then(|t| t.wald.as_ref()) {
            let _ = writeln!(
                out,
                "{}: Wald test phi1 = psi1 = 0, chi2({}) = {:.6}, p = {:.6}",
                f.model.label(),
                w.df,
                w.statistic,
                w.p_value
            );
        }
        if !f.not_identified.is_empty() {
            let _ = writeln!(
                out,
                "{}: not identified: {}",
                f.model.label(),
                f.not_identified.join(", ")
            );
        }
    }
    out.push_str(
        "Standard errors in parentheses. ** significant at 5%, * at 10%.\n\
         Peer-effect rows use one-sided tests against the positive alternative; other rows are two-sided.\n",
    );
    out
}
