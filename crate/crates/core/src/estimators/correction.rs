//! Per-record correction vectors: the inverse-propensity residual vector in
//! the win-probability layout, its variance-standardized form for a fixed
//! comparison matrix, the single-entry residual vector for the
//! Laplacian-based correction, and the derivative of the win probabilities
//! in the strengths.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::projection::sigmoid;
use crate::types::{num_pairs, pair_index, StrengthVector, WinProbVector};

/// The inverse-propensity residual vector in the `(K-1)^2` win-probability
/// layout: only the two slots matching the observed pair are non-zero, with
/// opposite signs (positive in the smaller-first orientation slot).
pub fn tau_vector(
    players: usize,
    observed_pair: (usize, usize),
    y: f64,
    m: &WinProbVector,
    pi_observed: f64,
) -> Result<Vec<f64>> {
    let (k0, l0) = observed_pair;
    if pi_observed <= 0.0 {
        return Err(Error::Positivity(format!(
            "observed pair ({k0}, {l0}) has zero estimated propensity"
        )));
    }
    let base = (y - m.get(k0, l0)) / pi_observed;
    let mut out = vec![0.0; (players - 1) * (players - 1)];
    // slot (k0, l0) exists when k0 >= 2 and carries +base; slot (l0, k0)
    // always exists and carries -base
    if k0 >= 2 {
        out[m.slot(k0, l0)] = base;
    }
    out[m.slot(l0, k0)] = -base;
    Ok(out)
}

/// Variance-standardized residuals along the rows of a comparison matrix:
/// entry j is the inverse-propensity residual of row j's pair divided by
/// `m (1 - m)`, and zero when the record's pair is not row j.
pub fn tau_tilde(
    gamma_pairs: &[(usize, usize)],
    observed_pair: (usize, usize),
    y: f64,
    m_gamma: &[f64],
    pi_observed: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; gamma_pairs.len()];
    for (j, &(k, l)) in gamma_pairs.iter().enumerate() {
        if (k, l) == observed_pair {
            if pi_observed <= 0.0 {
                return Err(Error::Positivity(format!(
                    "observed pair ({k}, {l}) has zero estimated propensity"
                )));
            }
            let mkl = m_gamma[j];
            out[j] = (y - mkl) / pi_observed / (mkl * (1.0 - mkl));
        }
    }
    Ok(out)
}

/// The single-entry residual vector over the full pair set: entry j is
/// `y - m_j(x)` when the record's pair is pair j and its propensity is
/// positive, zero otherwise.
pub fn residual_vector(
    players: usize,
    observed_pair: (usize, usize),
    y: f64,
    m: &WinProbVector,
    pi: &[f64],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; num_pairs(players)];
    let j = pair_index(players, observed_pair.0, observed_pair.1)?;
    if pi[j] > 0.0 {
        out[j] = y - m.get(observed_pair.0, observed_pair.1);
    }
    Ok(out)
}

/// Derivative of the win-probability layout in the strengths: a
/// `(K-1)^2 x (K-1)` matrix whose row for slot `(k, l)` has
/// `sigma'(theta_k - theta_l)` in the column of player k and its negative in
/// the column of player l (when l is not the reference).
pub fn dm_dtheta(theta: &StrengthVector) -> DMatrix<f64> {
    let players = theta.players();
    let dim = (players - 1) * (players - 1);
    let mut out = DMatrix::zeros(dim, players - 1);
    for k in 2..=players {
        for l in 1..=players {
            if l == k {
                continue;
            }
            let s = sigmoid(theta.strength(k) - theta.strength(l));
            let d = s * (1.0 - s);
            let row = (k - 2) * (players - 1) + if l < k { l - 1 } else { l - 2 };
            out[(row, k - 2)] = d;
            if l >= 2 {
                out[(row, l - 2)] = -d;
            }
        }
    }
    out
}
