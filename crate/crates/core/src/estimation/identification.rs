use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game::{BeliefProfile, GameInstance, Theta};
use crate::logit::check_full_rank;

/// Closed-form recovery of `θ` from known equilibrium beliefs.
///
/// With `T_i = ln σ*_i − ln(1 − σ*_i)` the equilibrium condition reads
/// `T_i = Z_i(Σ*)'θ`, so `θ = [(1/n) Σ Z_i Z_i']⁻¹ (1/n) Σ Z_i T_i`. When
/// `sigma_star` is an exact equilibrium the identity holds observation by
/// observation and the solve returns `θ` to linear-algebra precision.
pub fn identification_oracle(g: &GameInstance, sigma_star: &BeliefProfile) -> Result<Theta> {
    if let Some((i, s)) = sigma_star
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, &s)| !(s > 0.0 && s < 1.0))
    {
        return Err(Error::Domain(format!(
            "belief {s} of player {i} must lie strictly inside (0, 1)"
        )));
    }
    let z = g.build_regressors(sigma_star)?;
    check_full_rank(&z, &g.regressor_names())?;
    let n = g.n() as f64;
    let t = DVector::from_iterator(
        g.n(),
        sigma_star.as_slice().iter().map(|&s| s.ln() - (-s).ln_1p()),
    );
    let zz = z.tr_mul(&z) / n;
    let zt = z.tr_mul(&t) / n;
    let solved = zz
        .clone()
        .cholesky()
        .map(|c| c.solve(&zt))
        .or_else(|| zz.lu().solve(&zt))
        .ok_or_else(|| Error::Singular("second-moment matrix of Z is singular".into()))?;
    Theta::from_slice(solved.as_slice())
}
