//! Influence-function machinery and one-step estimators for both estimands
//! across all regimes: labeled-only, data fusion, the reduced-pair
//! conditional-model corrections (plain and efficient), and the known
//! density-ratio weighting. Every estimator reports the plug-in value, the
//! one-step point estimate, the per-record influence values, and Wald
//! intervals from the influence-sample covariance.

mod condbt;
mod correction;
mod onestep;

pub use condbt::{cond_bt_eif_phi, cond_bt_if_phi, cond_bt_psi, CondPsiRoute};
pub use correction::{dm_dtheta, tau_vector};
pub use onestep::{
    known_ratio_phi, one_step_phi, one_step_phi_fusion, one_step_psi, one_step_psi_fusion,
};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numeric::normal_quantile;
use crate::nuisance::NuisanceBundle;
use crate::types::{
    ComparisonDataset, Diagnostics, EstimandKind, EstimateReport, Regime, StrengthVector,
    WinProbVector,
};

/// Per-record evaluated influence values for one regime; rows are records in
/// the regime's ordering (labeled only, or labeled followed by unlabeled in
/// fusion regimes), columns are the components for players 2..=K.
#[derive(Debug, Clone)]
pub struct EifSample {
    pub regime: Regime,
    pub values: Vec<Vec<f64>>,
}

/// Full estimator output: the serializable report plus the influence sample
/// and the exact plug-in/correction decomposition of the point estimate.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub report: EstimateReport,
    pub eif: EifSample,
    /// Plug-in part of the point estimate.
    pub plugin: Vec<f64>,
    /// Sample mean of the per-record correction; the point estimate is
    /// exactly `plugin + correction_mean`, component by component.
    pub correction_mean: Vec<f64>,
}

/// Wald intervals: point plus/minus the normal quantile times the standard
/// error per component.
pub fn wald_ci(point: &[f64], covariance: &[Vec<f64>], level: f64) -> Vec<(f64, f64)> {
    let z = normal_quantile(0.5 + level / 2.0);
    point
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let se = covariance[j][j].max(0.0).sqrt();
            (p - z * se, p + z * se)
        })
        .collect()
}

/// Sample covariance of the influence values divided by the sample size, so
/// the result estimates the covariance of the point estimate itself.
pub(crate) fn eif_covariance(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = values.len();
    let dim = values.first().map_or(0, |v| v.len());
    let mut cov = vec![vec![0.0; dim]; dim];
    if n < 2 {
        return cov;
    }
    let mut mean = vec![0.0; dim];
    for row in values {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for row in values {
        for a in 0..dim {
            let da = row[a] - mean[a];
            for b in a..dim {
                cov[a][b] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1) as f64 * n as f64;
    for a in 0..dim {
        for b in a..dim {
            cov[a][b] /= denom;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

/// Mean of per-record vectors in deterministic (record) order.
pub(crate) fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; dim];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in out.iter_mut() {
        *o /= rows.len() as f64;
    }
    out
}

/// Assemble the report from the shared pieces.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    estimand: EstimandKind,
    regime: Regime,
    plugin: Vec<f64>,
    corrections: &[Vec<f64>],
    eif_values: Vec<Vec<f64>>,
    ci_level: f64,
    mut diagnostics: Diagnostics,
) -> Result<Estimate> {
    let correction_mean = mean_rows(corrections);
    let point: Vec<f64> = plugin
        .iter()
        .zip(&correction_mean)
        .map(|(p, c)| p + c)
        .collect();
    let covariance = eif_covariance(&eif_values);
    let wald = wald_ci(&point, &covariance, ci_level);
    diagnostics.plugin = plugin.clone();
    let report = EstimateReport {
        estimand,
        regime,
        point: StrengthVector::new(point)?,
        covariance,
        wald,
        ci_level,
        diagnostics,
    };
    Ok(Estimate {
        report,
        eif: EifSample { regime, values: eif_values },
        plugin,
        correction_mean,
    })
}

/// Win probabilities predicted for record `i`, over all pairs. Errors when a
/// pair was never observed, which makes the unrestricted estimands
/// unidentified.
pub(crate) fn winprobs_at(
    players: usize,
    bundle: &NuisanceBundle,
    i: usize,
) -> Result<WinProbVector> {
    let row = &bundle.outcome.per_record[i];
    if let Some(j) = row.iter().position(|v| v.is_none()) {
        let (k, l) = crate::types::pair_at(players, j)?;
        return Err(Error::Identification(format!(
            "pair ({k}, {l}) was never compared in the labeled data; the unrestricted estimands \
             need every pair, consider the conditional-model regimes"
        )));
    }
    let free: Vec<f64> = row.iter().map(|v| v.unwrap()).collect();
    WinProbVector::from_free(players, &free)
}

/// Marginal win probabilities: per-pair averages of the predictions over the
/// given record indices.
pub(crate) fn marginal_winprobs(
    players: usize,
    bundle: &NuisanceBundle,
    records: impl Iterator<Item = usize>,
) -> Result<WinProbVector> {
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for i in records {
        let row = &bundle.outcome.per_record[i];
        if sums.is_empty() {
            sums = vec![0.0; row.len()];
        }
        for (s, v) in sums.iter_mut().zip(row) {
            match v {
                Some(v) => *s += v,
                None => {
                    return Err(Error::Identification(
                        "marginal win probabilities need every pair to be observed".into(),
                    ))
                }
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data("no records to average over".into()));
    }
    let free: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    WinProbVector::from_free(players, &free)
}

/// Apply a (K-1) x (K-1)^2 matrix to a flat correction vector.
pub(crate) fn matvec(matrix: &nalgebra::DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let out = matrix * DVector::from_column_slice(v);
    out.iter().copied().collect()
}

pub(crate) fn require_fusion(dataset: &ComparisonDataset) -> Result<()> {
    if !dataset.is_fusion() {
        return Err(Error::Data(
            "this regime needs unlabeled target covariates (data-fusion mode)".into(),
        ));
    }
    Ok(())
}
