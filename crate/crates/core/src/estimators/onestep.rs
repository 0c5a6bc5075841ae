//! One-step estimators for the unrestricted regimes: labeled-only, data
//! fusion with an estimated density ratio, and weighting by a density ratio
//! known up to scale. All of them need every pair observed.

use super::correction::tau_vector;
use super::{
    assemble, marginal_winprobs, matvec, require_fusion, winprobs_at, Estimate,
};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceBundle;
use crate::projection::{lambda_matrix, solve_projection, SolverOptions};
use crate::types::{
    pair_index, ComparisonDataset, Diagnostics, EstimandKind, PairwiseScheme, Regime,
};

fn base_diagnostics(dataset: &ComparisonDataset, bundle: &NuisanceBundle) -> Diagnostics {
    Diagnostics {
        solver_iterations: 0,
        clipped_outcome: bundle.outcome.clipped,
        clipped_propensity: bundle.propensity.clipped,
        clipped_ratio: bundle.clipped_ratio,
        fold_seed: bundle.folds.seed,
        folds: bundle.folds.v,
        plugin: Vec::new(),
        n_labeled: dataset.n_labeled(),
        n_unlabeled: dataset.n_unlabeled(),
    }
}

/// Pointwise solved strengths and the sensitivity-weighted residual
/// correction for one labeled record.
struct PointwisePieces {
    theta: Vec<f64>,
    /// `Lambda(theta(x), rho) tau(x, a, y)`.
    lambda_tau: Vec<f64>,
    iterations: usize,
}

fn pointwise_pieces(
    scheme: &PairwiseScheme,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    opts: &SolverOptions,
    i: usize,
) -> Result<PointwisePieces> {
    let players = scheme.players();
    let m = winprobs_at(players, bundle, i)?;
    let (theta, iterations) = solve_projection(&m, scheme.rho(), opts)?;
    let lambda = lambda_matrix(&theta, scheme.rho())?;
    let rec = &dataset.labeled()[i];
    let pi = bundle.propensity.per_record[i]
        [pair_index(players, rec.pair.0, rec.pair.1)?];
    let tau = tau_vector(players, rec.pair, rec.y, &m, pi)?;
    Ok(PointwisePieces {
        theta: theta.into_vec(),
        lambda_tau: matvec(&lambda, &tau),
        iterations,
    })
}

/// Solved strengths at an arbitrary record (labeled or unlabeled).
fn theta_at(
    scheme: &PairwiseScheme,
    bundle: &NuisanceBundle,
    opts: &SolverOptions,
    i: usize,
) -> Result<(Vec<f64>, usize)> {
    let m = winprobs_at(scheme.players(), bundle, i)?;
    let (theta, iters) = solve_projection(&m, scheme.rho(), opts)?;
    Ok((theta.into_vec(), iters))
}

/// One-step estimator of the covariate-averaged projected strengths from
/// labeled data alone: the mean of the pointwise solved strengths plus the
/// mean inverse-propensity correction.
pub fn one_step_phi(
    scheme: &PairwiseScheme,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    opts: &SolverOptions,
    ci_level: f64,
) -> Result<Estimate> {
    let n = dataset.n_labeled();
    let dim = scheme.players() - 1;
    let mut diagnostics = base_diagnostics(dataset, bundle);
    let mut thetas = Vec::with_capacity(n);
    let mut corrections = Vec::with_capacity(n);
    for i in 0..n {
        let p = pointwise_pieces(scheme, dataset, bundle, opts, i)?;
        diagnostics.solver_iterations += p.iterations as u64;
        corrections.push(p.lambda_tau.iter().map(|v| -v).collect::<Vec<f64>>());
        thetas.push(p.theta);
    }
    let plugin = super::mean_rows(&thetas);
    // point = plugin + mean(correction); influence values recentre theta
    // around the one-step point estimate
    let correction_mean = super::mean_rows(&corrections);
    let point: Vec<f64> = plugin.iter().zip(&correction_mean).map(|(p, c)| p + c).collect();
    let eif: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dim)
                .map(|j| corrections[i][j] + thetas[i][j] - point[j])
                .collect()
        })
        .collect();
    assemble(
        EstimandKind::Phi,
        Regime::NoShift,
        plugin,
        &corrections,
        eif,
        ci_level,
        diagnostics,
    )
}

/// One-step estimator of the marginal-projection strengths from labeled data
/// alone: solve at the averaged win probabilities, then correct by the mean
/// of the sensitivity-weighted residual-plus-centering term.
pub fn one_step_psi(
    scheme: &PairwiseScheme,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    opts: &SolverOptions,
    ci_level: f64,
) -> Result<Estimate> {
    let players = scheme.players();
    let n = dataset.n_labeled();
    let mut diagnostics = base_diagnostics(dataset, bundle);
    let m_marg = marginal_winprobs(players, bundle, 0..n)?;
    let (psi_tilde, iters) = solve_projection(&m_marg, scheme.rho(), opts)?;
    diagnostics.solver_iterations += iters as u64;
    let lambda = lambda_matrix(&psi_tilde, scheme.rho())?;
    let marg_slice = m_marg.as_slice().to_vec();

    let mut corrections = Vec::with_capacity(n);
    for i in 0..n {
        let m_i = winprobs_at(players, bundle, i)?;
        let rec = &dataset.labeled()[i];
        let pi = bundle.propensity.per_record[i]
            [pair_index(players, rec.pair.0, rec.pair.1)?];
        let tau = tau_vector(players, rec.pair, rec.y, &m_i, pi)?;
        let inner: Vec<f64> = tau
            .iter()
            .zip(m_i.as_slice())
            .zip(&marg_slice)
            .map(|((t, mi), mm)| t + mi - mm)
            .collect();
        corrections.push(matvec(&lambda, &inner).iter().map(|v| -v).collect::<Vec<f64>>());
    }
    let eif = corrections.clone();
    assemble(
        EstimandKind::Psi,
        Regime::NoShift,
        psi_tilde.into_vec(),
        &corrections,
        eif,
        ci_level,
        diagnostics,
    )
}

/// Data-fusion one-step estimator of the covariate-averaged projected
/// strengths: unlabeled records supply the plug-in average of solved
/// strengths over the target population, labeled records supply the
/// ratio-weighted correction.
pub fn one_step_phi_fusion(
    scheme: &PairwiseScheme,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    opts: &SolverOptions,
    ci_level: f64,
) -> Result<Estimate> {
    require_fusion(dataset)?;
    let ratio = bundle
        .ratio
        .as_ref()
        .ok_or_else(|| Error::Config("fusion estimator needs density-ratio predictions".into()))?;
    let n = dataset.n_labeled();
    let total = dataset.n_total();
    let m_count = dataset.n_unlabeled();
    let s_bar = n as f64 / total as f64;
    let dim = scheme.players() - 1;
    let mut diagnostics = base_diagnostics(dataset, bundle);

    // corrections over all N records: ratio-weighted on the labeled block,
    // zero on the unlabeled block
    let mut corrections = vec![vec![0.0; dim]; total];
    for (i, correction) in corrections.iter_mut().enumerate().take(n) {
        let p = pointwise_pieces(scheme, dataset, bundle, opts, i)?;
        diagnostics.solver_iterations += p.iterations as u64;
        let w = ratio[i];
        *correction = p.lambda_tau.iter().map(|v| -w / s_bar * v).collect();
    }
    let mut theta_unlab = Vec::with_capacity(m_count);
    for i in n..total {
        let (theta, iters) = theta_at(scheme, bundle, opts, i)?;
        diagnostics.solver_iterations += iters as u64;
        theta_unlab.push(theta);
    }
    let plugin = super::mean_rows(&theta_unlab);
    let correction_mean = super::mean_rows(&corrections);
    let point: Vec<f64> = plugin.iter().zip(&correction_mean).map(|(p, c)| p + c).collect();

    let mut eif = Vec::with_capacity(total);
    for (i, correction) in corrections.iter().enumerate() {
        if i < n {
            eif.push(correction.clone());
        } else {
            let theta = &theta_unlab[i - n];
            eif.push(
                (0..dim)
                    .map(|j| (theta[j] - point[j]) / (1.0 - s_bar))
                    .collect(),
            );
        }
    }
    assemble(
        EstimandKind::Phi,
        Regime::Fusion,
        plugin,
        &corrections,
        eif,
        ci_level,
        diagnostics,
    )
}

/// Data-fusion one-step estimator of the marginal-projection strengths; the
/// marginal win probabilities are averaged over the unlabeled target block.
pub fn one_step_psi_fusion(
    scheme: &PairwiseScheme,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    opts: &SolverOptions,
    ci_level: f64,
) -> Result<Estimate> {
    require_fusion(dataset)?;
    let ratio = bundle
        .ratio
        .as_ref()
        .ok_or_else(|| Error::Config("fusion estimator needs density-ratio predictions".into()))?;
    let players = scheme.players();
    let n = dataset.n_labeled();
    let total = dataset.n_total();
    let s_bar = n as f64 / total as f64;
    let mut diagnostics = base_diagnostics(dataset, bundle);

    let m_marg = marginal_winprobs(players, bundle, n..total)?;
    let (psi_tilde, iters) = solve_projection(&m_marg, scheme.rho(), opts)?;
    diagnostics.solver_iterations += iters as u64;
    let lambda = lambda_matrix(&psi_tilde, scheme.rho())?;
    let marg_slice = m_marg.as_slice().to_vec();

    let mut corrections = Vec::with_capacity(total);
    for i in 0..total {
        let inner: Vec<f64> = if i < n {
            let m_i = winprobs_at(players, bundle, i)?;
            let rec = &dataset.labeled()[i];
            let pi = bundle.propensity.per_record[i]
                [pair_index(players, rec.pair.0, rec.pair.1)?];
            let tau = tau_vector(players, rec.pair, rec.y, &m_i, pi)?;
            tau.iter().map(|t| ratio[i] / s_bar * t).collect()
        } else {
            let m_i = winprobs_at(players, bundle, i)?;
            m_i.as_slice()
                .iter()
                .zip(&marg_slice)
                .map(|(mi, mm)| (mi - mm) / (1.0 - s_bar))
                .collect()
        };
        corrections.push(matvec(&lambda, &inner).iter().map(|v| -v).collect::<Vec<f64>>());
    }
    let eif = corrections.clone();
    assemble(
        EstimandKind::Psi,
        Regime::Fusion,
        psi_tilde.into_vec(),
        &corrections,
        eif,
        ci_level,
        diagnostics,
    )
}

/// One-step estimator of the covariate-averaged projected strengths under a
/// density ratio supplied by the caller up to a scale factor; the weighting
/// is self-normalized, so rescaling the ratio leaves the estimate unchanged.
pub fn known_ratio_phi(
    scheme: &PairwiseScheme,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    w_known: &[f64],
    opts: &SolverOptions,
    ci_level: f64,
) -> Result<Estimate> {
    let n = dataset.n_labeled();
    if w_known.len() != n {
        return Err(Error::Dimension(format!(
            "expected {n} ratio values, got {}",
            w_known.len()
        )));
    }
    // zeros are legitimate (regions outside the target support); negatives
    // and an all-zero vector are not
    if w_known.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Data("known ratio values must be non-negative".into()));
    }
    if w_known.iter().all(|w| *w == 0.0) {
        return Err(Error::Data("known ratio values are all zero".into()));
    }
    let dim = scheme.players() - 1;
    let mut diagnostics = base_diagnostics(dataset, bundle);
    let w_sum: f64 = w_known.iter().sum();
    let w_bar = w_sum / n as f64;

    let mut thetas = Vec::with_capacity(n);
    let mut lam_taus = Vec::with_capacity(n);
    for i in 0..n {
        let p = pointwise_pieces(scheme, dataset, bundle, opts, i)?;
        diagnostics.solver_iterations += p.iterations as u64;
        thetas.push(p.theta);
        lam_taus.push(p.lambda_tau);
    }
    // self-normalized plug-in; correction rows are scaled so their plain
    // mean equals the self-normalized mean of the weighted corrections
    let mut plugin = vec![0.0; dim];
    for i in 0..n {
        let scale = w_known[i] / w_sum;
        for j in 0..dim {
            plugin[j] += scale * thetas[i][j];
        }
    }
    let correction_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let scale = n as f64 * w_known[i] / w_sum;
            (0..dim).map(|j| -scale * lam_taus[i][j]).collect()
        })
        .collect();
    let point: Vec<f64> = {
        let cm = super::mean_rows(&correction_rows);
        plugin.iter().zip(&cm).map(|(p, c)| p + c).collect()
    };
    let eif: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dim)
                .map(|j| w_known[i] / w_bar * (-lam_taus[i][j] + thetas[i][j] - point[j]))
                .collect()
        })
        .collect();
    assemble(
        EstimandKind::Phi,
        Regime::KnownRatio,
        plugin,
        &correction_rows,
        eif,
        ci_level,
        diagnostics,
    )
}
