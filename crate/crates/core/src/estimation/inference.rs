//! Wald test of `φ1 = ψ1 = 0` and one-sided z tests of the peer parameters.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{FitResult, ModelTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OneSidedTest {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    /// `P(N(0,1) > z)`, the p-value against the positive alternative.
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub wald: Option<WaldTest>,
    /// Why the Wald test could not be computed, if it was not.
    pub wald_unavailable: Option<String>,
    pub one_sided: Vec<OneSidedTest>,
}

impl TestReport {
    pub fn one_sided(&self, name: &str) -> Option<&OneSidedTest> {
        self.one_sided.iter().find(|t| t.name == name)
    }
}

pub const SUM_NAME: &str = "phi1+psi1";

/// `"**"` below 5%, `"*"` below 10%.
pub fn significance_stars(p_value: f64) -> &'static str {
    if p_value < 0.05 {
        "**"
    } else if p_value < 0.10 {
        "*"
    } else {
        ""
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

fn one_sided(name: &str, estimate: f64, variance: f64) -> OneSidedTest {
    let std_error = variance.max(0.0).sqrt();
    let z = estimate / std_error;
    let p_value = if z.is_nan() {
        f64::NAN
    } else {
        (1.0 - standard_normal().cdf(z)).clamp(0.0, 1.0)
    };
    OneSidedTest {
        name: name.to_string(),
        estimate,
        std_error,
        z,
        p_value,
    }
}

/// Wald statistic `r' V_r⁻¹ r` for `r = (φ̂1, ψ̂1)` against χ²(2), and
/// one-sided z statistics for `φ1`, `ψ0`, `ψ1` and `φ1 + ψ1` (delta-method
/// variance `var φ̂1 + var ψ̂1 + 2 cov`). Parameters the model does not
/// estimate are skipped.
pub fn run_tests(fit: &FitResult) -> Result<TestReport> {
    if fit.model == ModelTag::ReducedLogit {
        return Err(Error::Domain(
            "peer-parameter tests need a structural fit".into(),
        ));
    }
    if !fit.converged {
        return Err(Error::NonConvergence {
            what: "NPLE (tests need a converged fit)",
            iterations: fit.outer_iterations,
            residual: fit.outer_residuals.last().copied().unwrap_or(f64::NAN),
        });
    }
    let idx = |name: &str| fit.index_of(name).filter(|&k| fit.estimated[k]);
    let v = &fit.covariance;
    let mut tests = Vec::new();
    for name in ["phi1", "psi0", "psi1"] {
        if let Some(k) = idx(name) {
            tests.push(one_sided(name, fit.estimates[k], v[(k, k)]));
        }
    }
    let (mut wald, mut wald_unavailable) = (None, None);
    match (idx("phi1"), idx("psi1")) {
        (Some(a), Some(b)) => {
            let (ra, rb) = (fit.estimates[a], fit.estimates[b]);
            tests.push(one_sided(
                SUM_NAME,
                ra + rb,
                v[(a, a)] + v[(b, b)] + 2.0 * v[(a, b)],
            ));
            let det = v[(a, a)] * v[(b, b)] - v[(a, b)] * v[(b, a)];
            let scale = v[(a, a)] * v[(b, b)];
            if !(det > 1e-14 * scale) || !det.is_finite() {
                wald_unavailable = Some("covariance block of (phi1, psi1) is singular".into());
            } else {
                // r' V⁻¹ r with the explicit 2x2 inverse
                let statistic = (v[(b, b)] * ra * ra - (v[(a, b)] + v[(b, a)]) * ra * rb
                    + v[(a, a)] * rb * rb)
                    / det;
                let chi2 = ChiSquared::new(2.0).expect("valid chi-square");
                let p_value = (1.0 - chi2.cdf(statistic.max(0.0))).clamp(0.0, 1.0);
                wald = Some(WaldTest {
                    statistic,
                    df: 2,
                    p_value,
                });
            }
        }
        _ => wald_unavailable = Some("model does not estimate phi1 and psi1".into()),
    }
    Ok(TestReport {
        wald,
        wald_unavailable,
        one_sided: tests,
    })
}
