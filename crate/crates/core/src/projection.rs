//! Estimating equations for the strength parameters, their derivative
//! matrices, and the damped Newton solver for the pointwise and marginal
//! projections onto the sigmoid pairwise-comparison model.
//!
//! All functions take the sampling weights as a per-pair slice in canonical
//! order so callers can pass either the scheme weights (estimand definition)
//! or per-record propensities (pointwise projection of an initial fit onto
//! the conditional model). Pairs with zero weight are skipped entirely and
//! may carry NaN win probabilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{num_pairs, StrengthVector, WinProbVector};

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Options for the Newton solve of the estimating equations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Convergence tolerance on the sup norm of the estimating equations.
    pub tol: f64,
    pub max_iter: usize,
    /// Step-halving until the residual norm decreases.
    pub damping: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 100, damping: true }
    }
}

fn check_rho(players: usize, rho: &[f64]) -> Result<()> {
    if rho.len() != num_pairs(players) {
        return Err(Error::Dimension(format!(
            "expected {} pair weights, got {}",
            num_pairs(players),
            rho.len()
        )));
    }
    Ok(())
}

/// Weight of the unordered pair {k, l} in a canonical per-pair slice.
fn rho_between(players: usize, rho: &[f64], k: usize, l: usize) -> f64 {
    let (a, b) = if k < l { (k, l) } else { (l, k) };
    rho[crate::types::pair_index(players, a, b).expect("valid pair")]
}

/// The estimating equations: component k-1 (for k = 2..=K) is
/// `sum_{l != k} rho_kl { sigma(theta_k - theta_l) - m_kl }`.
pub fn estimating_eq(
    theta: &StrengthVector,
    m: &WinProbVector,
    rho: &[f64],
) -> Result<DVector<f64>> {
    let players = theta.players();
    if m.players() != players {
        return Err(Error::Dimension(
            "strength and win-probability vectors disagree on player count".into(),
        ));
    }
    check_rho(players, rho)?;
    let mut u = DVector::zeros(players - 1);
    for k in 2..=players {
        let mut s = 0.0;
        for l in 1..=players {
            if l == k {
                continue;
            }
            let w = rho_between(players, rho, k, l);
            if w > 0.0 {
                s += w * (sigmoid(theta.strength(k) - theta.strength(l)) - m.get(k, l));
            }
        }
        u[k - 2] = s;
    }
    Ok(u)
}

/// Derivative of the estimating equations in the strengths. Symmetric, and
/// positive definite exactly when the positive-weight pairs connect all
/// players (it is the reduced Laplacian of that weighted graph).
pub fn jac_theta(theta: &StrengthVector, rho: &[f64]) -> Result<DMatrix<f64>> {
    let players = theta.players();
    check_rho(players, rho)?;
    let mut j = DMatrix::zeros(players - 1, players - 1);
    for k in 2..=players {
        for l in 1..=players {
            if l == k {
                continue;
            }
            let w = rho_between(players, rho, k, l);
            if w > 0.0 {
                let s = sigmoid(theta.strength(k) - theta.strength(l));
                let d = w * s * (1.0 - s);
                j[(k - 2, k - 2)] += d;
                if l >= 2 {
                    j[(k - 2, l - 2)] -= d;
                }
            }
        }
    }
    Ok(j)
}

/// Derivative of the estimating equations in the win-probability layout:
/// block diagonal with block k-1 equal to the negated weights
/// `(-rho_k1, ..., -rho_k(k-1), -rho_k(k+1), ..., -rho_kK)`.
/// Independent of the strengths and the win probabilities.
pub fn jac_winprob(players: usize, rho: &[f64]) -> Result<DMatrix<f64>> {
    check_rho(players, rho)?;
    let dim = (players - 1) * (players - 1);
    let mut j = DMatrix::zeros(players - 1, dim);
    for k in 2..=players {
        let block = k - 2;
        let mut pos = 0;
        for l in 1..=players {
            if l == k {
                continue;
            }
            j[(block, block * (players - 1) + pos)] = -rho_between(players, rho, k, l);
            pos += 1;
        }
    }
    Ok(j)
}

/// The sensitivity matrix `(dU/dtheta)^{-1} (dU/dm)`, computed by linear
/// solve rather than explicit inversion. The negative of this matrix maps
/// perturbations of the win probabilities to perturbations of the solved
/// strengths.
pub fn lambda_matrix(theta: &StrengthVector, rho: &[f64]) -> Result<DMatrix<f64>> {
    let players = theta.players();
    let jt = jac_theta(theta, rho)?;
    let jm = jac_winprob(players, rho)?;
    solve_spd_matrix(&jt, &jm)
}

/// Solve `A X = B` for SPD `A` via Cholesky, erroring when the factorization
/// fails (disconnected weight graph).
fn solve_spd_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => Err(Error::Disconnected(
            "estimating-equation Jacobian is singular; positive-weight pairs must connect all players"
                .into(),
        )),
    }
}

fn solve_spd_vector(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => Err(Error::Disconnected(
            "estimating-equation Jacobian is singular; positive-weight pairs must connect all players"
                .into(),
        )),
    }
}

/// Solve the projection equations for the strengths at fixed win
/// probabilities and weights: damped Newton from the zero vector.
///
/// Returns the solution together with the number of Newton iterations spent.
pub fn solve_projection(
    m: &WinProbVector,
    rho: &[f64],
    opts: &SolverOptions,
) -> Result<(StrengthVector, usize)> {
    solve_projection_from(StrengthVector::zeros(m.players()), m, rho, opts)
}

/// Same as [`solve_projection`] but from a caller-chosen starting point.
pub fn solve_projection_from(
    init: StrengthVector,
    m: &WinProbVector,
    rho: &[f64],
    opts: &SolverOptions,
) -> Result<(StrengthVector, usize)> {
    let mut theta = init;
    let mut u = estimating_eq(&theta, m, rho)?;
    let mut res = u.amax();
    for iter in 0..opts.max_iter {
        if res <= opts.tol {
            polish(&mut theta, &mut u, &mut res, m, rho)?;
            return Ok((theta, iter));
        }
        let jt = jac_theta(&theta, rho)?;
        let step = solve_spd_vector(&jt, &u)?;
        let mut alpha = 1.0;
        loop {
            let cand: Vec<f64> = theta
                .as_slice()
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t - alpha * s)
                .collect();
            let cand = StrengthVector::new(cand)?;
            let cand_u = estimating_eq(&cand, m, rho)?;
            let cand_res = cand_u.amax();
            if !opts.damping || cand_res < res || alpha < 1e-8 {
                theta = cand;
                u = cand_u;
                res = cand_res;
                break;
            }
            alpha *= 0.5;
        }
    }
    if res <= opts.tol {
        polish(&mut theta, &mut u, &mut res, m, rho)?;
        return Ok((theta, opts.max_iter));
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: res })
}

/// One extra full Newton step after convergence, kept only when it improves
/// the residual; quadratic convergence drives the solution to the
/// floating-point floor so downstream identities hold to near machine
/// precision.
fn polish(
    theta: &mut StrengthVector,
    u: &mut DVector<f64>,
    res: &mut f64,
    m: &WinProbVector,
    rho: &[f64],
) -> Result<()> {
    if *res == 0.0 {
        return Ok(());
    }
    let jt = jac_theta(theta, rho)?;
    let Ok(step) = solve_spd_vector(&jt, u) else {
        return Ok(());
    };
    let cand: Vec<f64> = theta
        .as_slice()
        .iter()
        .zip(step.iter())
        .map(|(t, s)| t - s)
        .collect();
    if cand.iter().all(|v| v.is_finite()) {
        let cand = StrengthVector::new(cand)?;
        let cand_u = estimating_eq(&cand, m, rho)?;
        if cand_u.amax() <= *res {
            *res = cand_u.amax();
            *u = cand_u;
            *theta = cand;
        }
    }
    Ok(())
}
