//! Plug-in sandwich covariance `Â⁻¹ B̂ Â⁻ᵀ / n` of the NPLE estimator.
//!
//! `B̂ = (1/n) Σ_i Z_i Z_i' (y_i − σ̂_i)²` always. For `Â` two forms exist:
//!
//! * [`CovarianceKind::Paper`]:
//!   `(1/n) Σ_i [ Z_i Z_i' w_i + (1/Q_i) Σ_{j∈F_i} Z_i Z_j' w_j c_ji ]` with
//!   `w = σ̂(1 − σ̂)` and `c_ji = ψ̂0 + (φ̂1 + ψ̂1) S̄_ji`, a first-order
//!   expansion of the belief feedback.
//! * [`CovarianceKind::EquilibriumJacobian`]: `(1/n) Z' (I − W C)⁻¹ W Z` with
//!   `C_ij = c_ji / Q_i`, the exact derivative of the equilibrium-constrained
//!   score.
//!
//! Both collapse to the logit information `(1/n) Σ Z_i Z_i' w_i` when there is
//! no peer feedback.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{BeliefProfile, GameInstance, Outcomes, Theta};
use crate::logit::symmetrize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    #[default]
    Paper,
    EquilibriumJacobian,
}

/// Reciprocal condition threshold for `Â`.
const RCOND_TOL: f64 = 1e-13;

const FEEDBACK_TOL: f64 = 1e-13;
const FEEDBACK_MAX_ITER: usize = 100_000;

fn select_columns(z: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), cols.len(), |i, k| z[(i, cols[k])])
}

fn row_scaled(z: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut out = z.clone();
    for (i, &wi) in w.iter().enumerate() {
        out.row_mut(i).scale_mut(wi);
    }
    out
}

/// `(C M)_i = (1/Q_i) Σ_{j∈F_i} c_ji M_j`.
fn feedback(g: &GameInstance, theta: &Theta, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..g.n() {
        let range = g.net.edge_range(i);
        if range.is_empty() {
            continue;
        }
        let q = range.len() as f64;
        for (e, &j) in range.clone().zip(g.net.friends(i)) {
            let c = theta.total_peer_effect(g.rel.values[e]) / q;
            for k in 0..m.ncols() {
                out[(i, k)] += c * m[(j, k)];
            }
        }
    }
    out
}

/// `(I − W C)⁻¹ W Z` by the Neumann iteration `U ← W Z + W C U`.
fn equilibrium_response(
    g: &GameInstance,
    theta: &Theta,
    w: &[f64],
    wz: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut u = wz.clone();
    for _ in 0..FEEDBACK_MAX_ITER {
        let next = wz + row_scaled(&feedback(g, theta, &u), w);
        let change = (&next - &u).amax();
        u = next;
        if !change.is_finite() {
            break;
        }
        if change <= FEEDBACK_TOL * u.amax().max(1.0) {
            return Ok(u);
        }
    }
    Err(Error::Singular(
        "belief feedback I - WC is not invertible by Neumann iteration (unstable equilibrium)"
            .into(),
    ))
}

fn invert(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > RCOND_TOL * smax) {
        return Err(Error::Singular(format!(
            "{what} is numerically singular (smallest/largest singular value {:.3e}); the sandwich requires a non-singular limit",
            smin / smax
        )));
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// `A⁻¹ B A⁻ᵀ / n`, symmetrized.
fn sandwich(a: &DMatrix<f64>, b: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let a_inv = invert(a, "matrix A")?;
    let mut v = &a_inv * b * a_inv.transpose() / n as f64;
    symmetrize(&mut v);
    Ok(v)
}

fn outer_residual_matrix(z: &DMatrix<f64>, y: &[f64], sigma: &[f64]) -> DMatrix<f64> {
    let n = z.nrows();
    let r2: Vec<f64> = y
        .iter()
        .zip(sigma)
        .map(|(yi, si)| (yi - si).powi(2))
        .collect();
    z.tr_mul(&row_scaled(z, &r2)) / n as f64
}

/// Heteroskedasticity-robust logit sandwich for a plain design.
pub(crate) fn logit_sandwich(z: &DMatrix<f64>, y: &[f64], probs: &[f64]) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    let w: Vec<f64> = probs.iter().map(|p| p * (1.0 - p)).collect();
    let a = z.tr_mul(&row_scaled(z, &w)) / n as f64;
    let b = outer_residual_matrix(z, y, probs);
    sandwich(&a, &b, n)
}

/// Covariance of the estimated columns `cols` of `θ̂`, embedded in a
/// `(d+3) × (d+3)` matrix with zeros elsewhere.
pub(crate) fn structural_covariance(
    g: &GameInstance,
    y: &Outcomes,
    sigma_hat: &BeliefProfile,
    theta_hat: &Theta,
    cols: &[usize],
    kind: CovarianceKind,
) -> Result<DMatrix<f64>> {
    let p = g.d() + 3;
    let n = g.n();
    let z = select_columns(&g.build_regressors(sigma_hat)?, cols);
    let s = sigma_hat.as_slice();
    let w: Vec<f64> = s.iter().map(|p| p * (1.0 - p)).collect();
    let wz = row_scaled(&z, &w);
    let response = match kind {
        CovarianceKind::Paper => &wz + feedback(g, theta_hat, &wz),
        CovarianceKind::EquilibriumJacobian => equilibrium_response(g, theta_hat, &w, &wz)?,
    };
    let a = z.tr_mul(&response) / n as f64;
    let b = outer_residual_matrix(&z, y.as_slice(), s);
    let v = sandwich(&a, &b, n)?;
    let mut full = DMatrix::zeros(p, p);
    for (a_idx, &ka) in cols.iter().enumerate() {
        for (b_idx, &kb) in cols.iter().enumerate() {
            full[(ka, kb)] = v[(a_idx, b_idx)];
        }
    }
    Ok(full)
}

/// Sandwich covariance of all `d + 3` parameters at `(θ̂, σ̂)`, where `σ̂`
/// should be the equilibrium at `θ̂`.
pub fn asymptotic_covariance(
    g: &GameInstance,
    y: &Outcomes,
    sigma_hat: &BeliefProfile,
    theta_hat: &Theta,
    kind: CovarianceKind,
) -> Result<DMatrix<f64>> {
    g.check_outcomes(y)?;
    let cols: Vec<usize> = (0..g.d() + 3).collect();
    structural_covariance(g, y, sigma_hat, theta_hat, &cols, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Covariates;
    use crate::montecarlo::{generate_instance, DgpConfig};
    use crate::network::{katz_bonacich, DirectedNetwork};

    fn rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax() / b.amax()
    }

    #[test]
    fn no_coupling_gives_the_logit_sandwich() {
        let inst = generate_instance(&DgpConfig::paper_design(300, 1.0, 1.0, 1.0), 3).unwrap();
        let theta = Theta::new(vec![-1.0, 1.0, -1.0, 1.0, -1.0], 0.0, 0.0, 0.0);
        let z = inst.game.build_regressors(&inst.sigma_star).unwrap();
        let expected = logit_sandwich(&z, inst.y.as_slice(), inst.sigma_star.as_slice()).unwrap();
        for kind in [CovarianceKind::Paper, CovarianceKind::EquilibriumJacobian] {
            let v =
                asymptotic_covariance(&inst.game, &inst.y, &inst.sigma_star, &theta, kind).unwrap();
            assert!(rel_gap(&v, &expected) < 1e-10);
        }
    }

    /// `A` from the per-player sums and from a dense `(I − WC)⁻¹`.
    #[test]
    fn both_forms_match_dense_oracles() {
        let mut cfg = DgpConfig::paper_design(40, 0.3, 0.8, 0.2);
        cfg.max_friends = 4;
        let inst = generate_instance(&cfg, 9).unwrap();
        let (g, theta) = (&inst.game, &cfg.theta_true);
        let n = g.n();
        let s = inst.sigma_star.as_slice();
        let z = g.build_regressors(&inst.sigma_star).unwrap();
        let w: Vec<f64> = s.iter().map(|p| p * (1.0 - p)).collect();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            let q = g.net.friend_count(i) as f64;
            for (e, &j) in g.net.edge_range(i).zip(g.net.friends(i)) {
                c[(i, j)] = theta.total_peer_effect(g.rel.values[e]) / q;
            }
        }
        let wmat = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.clone()));
        let p = z.ncols();
        let mut a_paper = DMatrix::zeros(p, p);
        for i in 0..n {
            let zi = z.row(i).transpose();
            a_paper += &zi * zi.transpose() * w[i];
            for k in 0..n {
                if c[(i, k)] != 0.0 {
                    a_paper += &zi * z.row(k) * (w[k] * c[(i, k)]);
                }
            }
        }
        a_paper /= n as f64;
        let resp = (DMatrix::identity(n, n) - &wmat * &c)
            .try_inverse()
            .unwrap()
            * &wmat
            * &z;
        let a_exact = z.tr_mul(&resp) / n as f64;
        let b = outer_residual_matrix(&z, inst.y.as_slice(), s);
        for (kind, a) in [
            (CovarianceKind::Paper, a_paper),
            (CovarianceKind::EquilibriumJacobian, a_exact),
        ] {
            let expected = sandwich(&a, &b, n).unwrap();
            let v = asymptotic_covariance(g, &inst.y, &inst.sigma_star, theta, kind).unwrap();
            assert!(rel_gap(&v, &expected) < 1e-9, "{kind:?}");
        }
    }

    #[test]
    fn collinear_design_is_singular() {
        let net = DirectedNetwork::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let cent = katz_bonacich(&net, 0.1, 1e-12, 500).unwrap();
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.5, 0.5, 1.0, -1.0, -1.0, 1.0, 2.0, 2.0, 1.0, 0.0, 0.0],
        );
        let g = GameInstance::new(
            net,
            cent,
            Covariates::new(x, vec!["c".into(), "a".into(), "b".into()]).unwrap(),
        )
        .unwrap();
        let y = Outcomes::new(vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let sigma = BeliefProfile::constant(4, 0.5).unwrap();
        let theta = Theta::new(vec![0.0; 3], 0.0, 0.0, 0.0);
        let err = asymptotic_covariance(&g, &y, &sigma, &theta, CovarianceKind::Paper).unwrap_err();
        assert!(matches!(err, Error::Singular(_)), "{err}");
    }
}
