//! Estimators that take the conditional sigmoid model as correctly
//! specified: strengths become linear in the logit win probabilities of a
//! connected pair subset, so neither every pair nor its propensity is
//! needed. The plain route corrects through a fixed comparison matrix; the
//! efficient route corrects through the weighted-Laplacian solve over all
//! observed pairs.

use nalgebra::DVector;

use super::correction::{dm_dtheta, residual_vector, tau_tilde};
use super::{assemble, matvec, require_fusion, Estimate};
use crate::error::{Error, Result};
use crate::graph::{ComparisonMatrix, WeightedLaplacian};
use crate::nuisance::NuisanceBundle;
use crate::projection::{lambda_matrix, logit, sigmoid, solve_projection, SolverOptions};
use crate::types::{
    num_pairs, pair_at, pair_index, ComparisonDataset, Diagnostics, EstimandKind,
    PairwiseScheme, Regime, StrengthVector, WinProbVector,
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

/// Predicted win probabilities for the rows of a comparison matrix at record
/// `i`. Every row pair must have been observed in the labeled data.
fn m_gamma_at(gamma: &ComparisonMatrix, bundle: &NuisanceBundle, i: usize) -> Result<Vec<f64>> {
    let players = gamma.players();
    gamma
        .pairs()
        .iter()
        .map(|&(k, l)| {
            bundle.outcome.per_record[i][pair_index(players, k, l)?].ok_or_else(|| {
                Error::Identification(format!(
                    "pair ({k}, {l}) is in the comparison matrix but was never observed"
                ))
            })
        })
        .collect()
}

/// Strengths through the fixed comparison matrix: pseudoinverse applied to
/// the element-wise logits.
fn theta_via_gamma(
    gamma: &ComparisonMatrix,
    bundle: &NuisanceBundle,
    i: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m_gamma = m_gamma_at(gamma, bundle, i)?;
    let logits: Vec<f64> = m_gamma.iter().map(|&m| logit(m)).collect();
    let theta = gamma.pseudoinverse_apply(&logits)?;
    Ok((theta.iter().copied().collect(), m_gamma))
}

/// Strengths through the pointwise projection of the initial fit onto the
/// conditional model, weighting pairs by their estimated propensities at the
/// record.
fn theta_via_projection(
    players: usize,
    bundle: &NuisanceBundle,
    opts: &SolverOptions,
    i: usize,
) -> Result<(Vec<f64>, usize)> {
    let m_init = WinProbVector::from_partial(players, &bundle.outcome.per_record[i])?;
    let pi = &bundle.propensity.per_record[i];
    let (theta, iters) = solve_projection(&m_init, pi, opts)
        .map_err(|e| Error::Identification(format!("pointwise projection failed at record {i}: {e}")))?;
    Ok((theta.into_vec(), iters))
}

/// Model-consistent win probabilities over every pair from solved strengths.
fn bt_winprobs(players: usize, theta: &[f64]) -> Result<WinProbVector> {
    let sv = StrengthVector::new(theta.to_vec())?;
    let free: Vec<f64> = (0..num_pairs(players))
        .map(|j| {
            let (k, l) = pair_at(players, j).expect("in range");
            sigmoid(sv.strength(k) - sv.strength(l))
        })
        .collect();
    WinProbVector::from_free(players, &free)
}

/// The efficient per-record correction: solve the weighted Laplacian against
/// the incidence-transposed residual vector.
fn laplacian_correction(
    players: usize,
    bundle: &NuisanceBundle,
    m_bt: &WinProbVector,
    i: usize,
    pair: (usize, usize),
    y: f64,
) -> Result<Vec<f64>> {
    let pi = &bundle.propensity.per_record[i];
    let v = residual_vector(players, pair, y, m_bt, pi)?;
    let lap = WeightedLaplacian::new(m_bt, pi)?;
    // incidence-transposed residual: +v at the winner-slot column, -v at the
    // other; only one pair is non-zero
    let mut b = DVector::zeros(players - 1);
    let j = pair_index(players, pair.0, pair.1)?;
    if v[j] != 0.0 {
        if pair.0 >= 2 {
            b[pair.0 - 2] += v[j];
        }
        b[pair.1 - 2] -= v[j];
    }
    let sol = lap
        .solve(&b)
        .map_err(|e| Error::Disconnected(format!("record {i}: {e}")))?;
    Ok(sol.iter().copied().collect())
}

/// Correction route for the conditional-model estimators of the
/// marginal-projection estimand.
#[derive(Debug, Clone)]
pub enum CondPsiRoute {
    /// Correct through a fixed comparison matrix.
    Fixed(ComparisonMatrix),
    /// Correct through the weighted-Laplacian solve over observed pairs.
    Efficient,
}

/// Conditional-model estimator of the covariate-averaged strengths with a
/// fixed comparison matrix. Records whose pair is outside the matrix
/// contribute zero correction.
pub fn cond_bt_if_phi(
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    gamma: &ComparisonMatrix,
    fusion: bool,
    ci_level: f64,
) -> Result<Estimate> {
    if !gamma.is_identifiable() {
        return Err(Error::RankDeficient(
            "the comparison matrix does not connect all players; strengths are unidentified"
                .into(),
        ));
    }
    let players = gamma.players();
    let diagnostics = base_diagnostics(dataset, bundle);

    let raw_correction = |i: usize| -> Result<Vec<f64>> {
        let rec = &dataset.labeled()[i];
        let m_gamma = m_gamma_at(gamma, bundle, i)?;
        let pi = bundle.propensity.per_record[i]
            [pair_index(players, rec.pair.0, rec.pair.1)?];
        let tt = tau_tilde(gamma.pairs(), rec.pair, rec.y, &m_gamma, pi)?;
        Ok(gamma.pseudoinverse_apply(&tt)?.iter().copied().collect())
    };
    let theta_of = |i: usize| -> Result<Vec<f64>> { Ok(theta_via_gamma(gamma, bundle, i)?.0) };

    if fusion {
        fusion_phi_assembly(
            dataset,
            bundle,
            Regime::CondBtIf,
            raw_correction,
            theta_of,
            ci_level,
            diagnostics,
        )
    } else {
        labeled_phi_assembly(
            dataset,
            Regime::CondBtIf,
            raw_correction,
            theta_of,
            ci_level,
            diagnostics,
            players,
        )
    }
}

/// Efficient conditional-model estimator of the covariate-averaged
/// strengths: strengths from the pointwise projection, model-consistent win
/// probabilities, and the weighted-Laplacian correction over all observed
/// pairs.
pub fn cond_bt_eif_phi(
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    players: usize,
    opts: &SolverOptions,
    fusion: bool,
    ci_level: f64,
) -> Result<Estimate> {
    let observed: Vec<(usize, usize)> = (0..num_pairs(players))
        .filter(|&j| bundle.outcome.observed[j])
        .map(|j| pair_at(players, j).expect("in range"))
        .collect();
    let obs_graph = ComparisonMatrix::new(players, observed)?;
    if !obs_graph.is_identifiable() {
        return Err(Error::Disconnected(
            "observed pairs do not connect all players; strengths are unidentified".into(),
        ));
    }
    let mut diagnostics = base_diagnostics(dataset, bundle);

    // strengths and model-consistent win probabilities per record
    let total = dataset.n_total();
    let mut thetas: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut m_bts: Vec<WinProbVector> = Vec::with_capacity(total);
    for i in 0..total {
        let (theta, iters) = theta_via_projection(players, bundle, opts, i)?;
        diagnostics.solver_iterations += iters as u64;
        m_bts.push(bt_winprobs(players, &theta)?);
        thetas.push(theta);
    }

    let raw_correction = |i: usize| -> Result<Vec<f64>> {
        let rec = &dataset.labeled()[i];
        laplacian_correction(players, bundle, &m_bts[i], i, rec.pair, rec.y)
    };
    let theta_of = |i: usize| -> Result<Vec<f64>> { Ok(thetas[i].clone()) };

    if fusion {
        fusion_phi_assembly(
            dataset,
            bundle,
            Regime::CondBtEif,
            raw_correction,
            theta_of,
            ci_level,
            diagnostics,
        )
    } else {
        labeled_phi_assembly(
            dataset,
            Regime::CondBtEif,
            raw_correction,
            theta_of,
            ci_level,
            diagnostics,
            players,
        )
    }
}

/// Shared assembly for the labeled-only conditional estimators of the
/// covariate-averaged strengths.
fn labeled_phi_assembly(
    dataset: &ComparisonDataset,
    regime: Regime,
    raw_correction: impl Fn(usize) -> Result<Vec<f64>>,
    theta_of: impl Fn(usize) -> Result<Vec<f64>>,
    ci_level: f64,
    diagnostics: Diagnostics,
    players: usize,
) -> Result<Estimate> {
    let n = dataset.n_labeled();
    let dim = players - 1;
    let mut thetas = Vec::with_capacity(n);
    let mut corrections = Vec::with_capacity(n);
    for i in 0..n {
        corrections.push(raw_correction(i)?);
        thetas.push(theta_of(i)?);
    }
    let plugin = super::mean_rows(&thetas);
    let correction_mean = super::mean_rows(&corrections);
    let point: Vec<f64> = plugin.iter().zip(&correction_mean).map(|(p, c)| p + c).collect();
    let eif: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dim)
                .map(|j| corrections[i][j] + thetas[i][j] - point[j])
                .collect()
        })
        .collect();
    assemble(EstimandKind::Phi, regime, plugin, &corrections, eif, ci_level, diagnostics)
}

/// Shared assembly for the fusion conditional estimators of the
/// covariate-averaged strengths.
fn fusion_phi_assembly(
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    regime: Regime,
    raw_correction: impl Fn(usize) -> Result<Vec<f64>>,
    theta_of: impl Fn(usize) -> Result<Vec<f64>>,
    ci_level: f64,
    diagnostics: Diagnostics,
) -> Result<Estimate> {
    require_fusion(dataset)?;
    let ratio = bundle
        .ratio
        .as_ref()
        .ok_or_else(|| Error::Config("fusion estimator needs density-ratio predictions".into()))?;
    let n = dataset.n_labeled();
    let total = dataset.n_total();
    let s_bar = n as f64 / total as f64;

    let mut corrections = Vec::with_capacity(total);
    for i in 0..n {
        let raw = raw_correction(i)?;
        corrections.push(
            raw.iter()
                .map(|v| ratio[i] / s_bar * v)
                .collect::<Vec<f64>>(),
        );
    }
    let mut theta_unlab = Vec::with_capacity(dataset.n_unlabeled());
    for i in n..total {
        theta_unlab.push(theta_of(i)?);
    }
    let dim = theta_unlab[0].len();
    corrections.extend(std::iter::repeat_n(vec![0.0; dim], total - n));
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
    assemble(EstimandKind::Phi, regime, plugin, &corrections, eif, ci_level, diagnostics)
}

/// Conditional-model estimator of the marginal-projection strengths, with
/// either correction route, with or without data fusion. Strengths per
/// record come from the route's identification (fixed matrix, or pointwise
/// projection for the efficient route); win probabilities are always the
/// model-consistent rebuild from those strengths.
pub fn cond_bt_psi(
    scheme: &PairwiseScheme,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    route: &CondPsiRoute,
    opts: &SolverOptions,
    fusion: bool,
    ci_level: f64,
) -> Result<Estimate> {
    let players = scheme.players();
    let n = dataset.n_labeled();
    let total = if fusion { dataset.n_total() } else { n };
    let mut diagnostics = base_diagnostics(dataset, bundle);

    if let CondPsiRoute::Fixed(gamma) = route {
        if !gamma.is_identifiable() {
            return Err(Error::RankDeficient(
                "the comparison matrix does not connect all players; strengths are unidentified"
                    .into(),
            ));
        }
    }
    if fusion {
        require_fusion(dataset)?;
    }

    // per-record strengths and model-consistent win probabilities
    let mut thetas: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut m_bts: Vec<WinProbVector> = Vec::with_capacity(total);
    for i in 0..total {
        let theta = match route {
            CondPsiRoute::Fixed(gamma) => theta_via_gamma(gamma, bundle, i)?.0,
            CondPsiRoute::Efficient => {
                let (theta, iters) = theta_via_projection(players, bundle, opts, i)?;
                diagnostics.solver_iterations += iters as u64;
                theta
            }
        };
        m_bts.push(bt_winprobs(players, &theta)?);
        thetas.push(theta);
    }

    // marginal win probabilities over the target block
    let marg_records: Vec<usize> = if fusion { (n..total).collect() } else { (0..n).collect() };
    let mut marg_free = vec![0.0; num_pairs(players)];
    for &i in &marg_records {
        for (s, v) in marg_free.iter_mut().zip(m_bts[i].free_values()) {
            *s += v;
        }
    }
    for s in marg_free.iter_mut() {
        *s /= marg_records.len() as f64;
    }
    let m_marg = WinProbVector::from_free(players, &marg_free)?;
    let (psi_tilde, iters) = solve_projection(&m_marg, scheme.rho(), opts)?;
    diagnostics.solver_iterations += iters as u64;
    let lambda = lambda_matrix(&psi_tilde, scheme.rho())?;
    let marg_slice = m_marg.as_slice().to_vec();

    // inner correction per labeled record
    let inner_of = |i: usize| -> Result<Vec<f64>> {
        let rec = &dataset.labeled()[i];
        match route {
            CondPsiRoute::Fixed(gamma) => {
                let m_gamma = m_gamma_at(gamma, bundle, i)?;
                let pi = bundle.propensity.per_record[i]
                    [pair_index(players, rec.pair.0, rec.pair.1)?];
                let tt = tau_tilde(gamma.pairs(), rec.pair, rec.y, &m_gamma, pi)?;
                Ok(gamma.pseudoinverse_apply(&tt)?.iter().copied().collect())
            }
            CondPsiRoute::Efficient => {
                laplacian_correction(players, bundle, &m_bts[i], i, rec.pair, rec.y)
            }
        }
    };

    let s_bar = n as f64 / dataset.n_total() as f64;
    let mut corrections = Vec::with_capacity(total);
    for i in 0..total {
        let sv = StrengthVector::new(thetas[i].clone())?;
        let term: Vec<f64> = if i < n {
            let inner = inner_of(i)?;
            let dm = dm_dtheta(&sv);
            let pushed = dm * DVector::from_column_slice(&inner);
            if fusion {
                let ratio = bundle.ratio.as_ref().expect("checked in fusion mode");
                pushed.iter().map(|v| ratio[i] / s_bar * v).collect()
            } else {
                pushed
                    .iter()
                    .zip(m_bts[i].as_slice())
                    .zip(&marg_slice)
                    .map(|((p, mi), mm)| p + mi - mm)
                    .collect()
            }
        } else {
            m_bts[i]
                .as_slice()
                .iter()
                .zip(&marg_slice)
                .map(|(mi, mm)| (mi - mm) / (1.0 - s_bar))
                .collect()
        };
        corrections.push(matvec(&lambda, &term).iter().map(|v| -v).collect::<Vec<f64>>());
    }
    let regime = match route {
        CondPsiRoute::Fixed(_) => Regime::CondBtIf,
        CondPsiRoute::Efficient => Regime::CondBtEif,
    };
    let eif = corrections.clone();
    assemble(
        EstimandKind::Psi,
        regime,
        psi_tilde.into_vec(),
        &corrections,
        eif,
        ci_level,
        diagnostics,
    )
}
