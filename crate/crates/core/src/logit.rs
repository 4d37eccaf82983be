//! Binary logit on a fixed design matrix: stable logistic evaluation,
//! log-likelihood with analytic score and Hessian, a Newton maximizer and the
//! rank diagnostics used to report non-identified regressor combinations.
//!
//! All likelihood quantities are averaged over observations (`1/n` scaling).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Linear predictors are clipped to `[-PREDICTOR_CLIP, PREDICTOR_CLIP]`.
pub const PREDICTOR_CLIP: f64 = 500.0;

/// Largest double below one; keeps `Γ` strictly inside `(0, 1)`.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Fitted linear predictors beyond this magnitude mean probabilities that are
/// numerically 0 or 1, the signature of (quasi-)complete separation.
pub const SEPARATION_ETA: f64 = 30.0;

/// Relative eigenvalue threshold below which the scaled Gram matrix is
/// treated as singular.
pub const RANK_TOL: f64 = 1e-10;

#[inline]
fn clip(eta: f64) -> f64 {
    eta.clamp(-PREDICTOR_CLIP, PREDICTOR_CLIP)
}

/// Logistic map, strictly inside `(0, 1)` for every finite input.
#[inline]
pub fn logistic(eta: f64) -> f64 {
    let eta = clip(eta);
    let p = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    p.min(ONE_BELOW)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `y ln Γ + (1 - y) ln(1 - Γ)` evaluated from the linear predictor.
#[inline]
pub fn log_density(y: f64, eta: f64) -> f64 {
    let eta = clip(eta);
    -(y * softplus(-eta) + (1.0 - y) * softplus(eta))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_likelihood: f64,
    pub score: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub probabilities: DVector<f64>,
}

pub fn log_likelihood(z: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> f64 {
    let eta = z * coef;
    let n = y.len() as f64;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| log_density(yi, e))
        .sum::<f64>()
        / n
}

/// Log-likelihood, score `(1/n) Σ Z_i (y_i - Γ_i)` and Hessian
/// `-(1/n) Σ Z_i Z_i' Γ_i (1 - Γ_i)`.
pub fn evaluate(z: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> Evaluation {
    let n = y.len() as f64;
    let eta = z * coef;
    let probabilities = eta.map(logistic);
    let log_likelihood = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| log_density(yi, e))
        .sum::<f64>()
        / n;
    let resid = DVector::from_iterator(
        y.len(),
        y.iter().zip(probabilities.iter()).map(|(&yi, &p)| yi - p),
    );
    let score = z.tr_mul(&resid) / n;
    let mut weighted = z.clone();
    for (i, &p) in probabilities.iter().enumerate() {
        let w = p * (1.0 - p);
        weighted.row_mut(i).scale_mut(w);
    }
    let mut hessian = -(z.tr_mul(&weighted) / n);
    symmetrize(&mut hessian);
    Evaluation {
        log_likelihood,
        score,
        hessian,
        probabilities,
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for a in 0..p {
        for b in (a + 1)..p {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Errors with [`Error::RankDeficient`] when the columns of `z` are
/// (numerically) linearly dependent, naming the columns involved.
pub fn check_full_rank(z: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let p = z.ncols();
    debug_assert_eq!(names.len(), p);
    let gram = z.tr_mul(z) / z.nrows().max(1) as f64;
    let zero: Vec<String> = (0..p)
        .filter(|&k| gram[(k, k)] == 0.0)
        .map(|k| names[k].clone())
        .collect();
    if !zero.is_empty() {
        return Err(Error::RankDeficient {
            columns: zero,
            detail: "regressor identically zero".into(),
        });
    }
    let scale: Vec<f64> = (0..p).map(|k| gram[(k, k)].sqrt().recip()).collect();
    let scaled = DMatrix::from_fn(p, p, |a, b| gram[(a, b)] * scale[a] * scale[b]);
    let eig = scaled.symmetric_eigen();
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one column");
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if lmin > RANK_TOL * lmax {
        return Ok(());
    }
    let v = eig.eigenvectors.column(imin);
    let vmax = v.amax();
    let mut involved = Vec::new();
    let mut terms = Vec::new();
    for k in 0..p {
        if v[k].abs() > 0.05 * vmax {
            involved.push(names[k].clone());
            terms.push(format!("{:+.3}*{}", v[k] / vmax, names[k]));
        }
    }
    Err(Error::RankDeficient {
        columns: involved,
        detail: format!("near-collinear combination {} ≈ 0", terms.join(" ")),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LogitOptions {
    pub max_steps: usize,
    /// Stop when the sup-norm of the score falls below this.
    pub score_tol: f64,
    /// Stop when the sup-norm of the Newton step falls below this.
    pub step_tol: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions {
            max_steps: 100,
            score_tol: 1e-10,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogitFit {
    pub coef: DVector<f64>,
    pub log_likelihood: f64,
    pub steps: usize,
}

/// Newton–Raphson maximization of the logit log-likelihood with step
/// halving. The rank of `z` is checked up front.
pub fn fit(
    z: &DMatrix<f64>,
    y: &[f64],
    start: &DVector<f64>,
    names: &[String],
    opts: &LogitOptions,
) -> Result<LogitFit> {
    if z.nrows() != y.len() || z.ncols() != start.len() {
        return Err(Error::Dimension(format!(
            "design {}x{}, outcomes {}, start {}",
            z.nrows(),
            z.ncols(),
            y.len(),
            start.len()
        )));
    }
    check_full_rank(z, names)?;
    let mut coef = start.clone();
    let mut eval = evaluate(z, y, &coef);
    let mut last_step = f64::INFINITY;
    let finish = |coef: DVector<f64>, eval: &Evaluation, steps: usize| -> Result<LogitFit> {
        let eta_max = (z * &coef).amax();
        if eta_max > SEPARATION_ETA {
            return Err(Error::NonConvergence {
                what: "logit Newton iteration (fitted probabilities numerically 0 or 1, perfect separation)",
                iterations: steps,
                residual: eval.score.amax(),
            });
        }
        Ok(LogitFit {
            coef,
            log_likelihood: eval.log_likelihood,
            steps,
        })
    };
    for steps in 0..opts.max_steps {
        if eval.score.amax() < opts.score_tol || last_step < opts.step_tol {
            return finish(coef, &eval, steps);
        }
        let info = -&eval.hessian;
        let direction = match info.clone().cholesky() {
            Some(ch) => ch.solve(&eval.score),
            None => {
                check_full_rank(z, names)?;
                return Err(Error::Singular(
                    "logit information matrix is not positive definite".into(),
                ));
            }
        };
        let mut t = 1.0;
        let mut trial = &coef + &direction;
        let mut trial_eval = evaluate(z, y, &trial);
        let mut halvings = 0;
        while !(trial_eval.log_likelihood
            >= eval.log_likelihood - 1e-14 * eval.log_likelihood.abs())
            && halvings < 40
        {
            t *= 0.5;
            halvings += 1;
            trial = &coef + &direction * t;
            trial_eval = evaluate(z, y, &trial);
        }
        if !trial.iter().all(|c| c.is_finite()) {
            break;
        }
        last_step = (&trial - &coef).amax();
        coef = trial;
        eval = trial_eval;
    }
    if eval.score.amax() < opts.score_tol || last_step < opts.step_tol {
        return finish(coef, &eval, opts.max_steps);
    }
    Err(Error::NonConvergence {
        what: "logit Newton iteration (possible perfect separation)",
        iterations: opts.max_steps,
        residual: eval.score.amax(),
    })
}
