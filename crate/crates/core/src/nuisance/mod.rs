//! Cross-fitted estimation of the three nuisance functions: per-pair outcome
//! means, pair propensities, and the covariate density ratio between the
//! target and the labeled population.
//!
//! Every prediction on a record comes from models trained without that
//! record's fold. Fitted predictions are materialized per record so that the
//! estimators consume plain tables; the same tables can be filled from
//! closed-form truths when oracle nuisances are wanted.

mod learners;

pub use learners::{FittedRegressor, LearnerSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{num_pairs, pair_at, pair_index, ComparisonDataset};

/// Fold assignment over the combined record ordering (labeled first, then
/// unlabeled), so that ratio estimation is honestly cross-fit too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// Fold id of every record, length N.
    pub fold_of: Vec<usize>,
    pub v: usize,
    pub seed: u64,
}

/// Seeded near-equal partition of all records into `v` folds; the remainder
/// goes to the lowest-numbered folds (largest first).
pub fn assign_folds(dataset: &ComparisonDataset, v: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.n_total();
    if v < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {v}")));
    }
    if v > n {
        return Err(Error::Config(format!(
            "cannot split {n} records into {v} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / v;
    let rem = n % v;
    let mut fold_of = vec![0usize; n];
    let mut pos = 0;
    for fold in 0..v {
        let size = base + usize::from(fold < rem);
        for &rec in &order[pos..pos + size] {
            fold_of[rec] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { fold_of, v, seed })
}

/// Cross-fitted per-pair outcome means. `per_record[i][j]` is the clipped
/// prediction for pair j (canonical order) at record i's covariates, `None`
/// for pairs never observed in the labeled data.
#[derive(Debug, Clone)]
pub struct OutcomePredictions {
    pub per_record: Vec<Vec<Option<f64>>>,
    pub observed: Vec<bool>,
    pub clipped: u64,
    /// Fitted per-fold, per-pair models (fold-major).
    pub models: Vec<Vec<Option<FittedRegressor>>>,
}

/// Cross-fitted pair propensities. `per_record[i][j]` is the probability of
/// comparing pair j at record i; zero for unobserved pairs, and the observed
/// entries are clipped and renormalized to sum to one.
#[derive(Debug, Clone)]
pub struct PropensityPredictions {
    pub per_record: Vec<Vec<f64>>,
    pub observed: Vec<bool>,
    pub clipped: u64,
}

/// Everything the estimators need about the nuisances, evaluated at the
/// dataset's own records.
#[derive(Debug, Clone)]
pub struct NuisanceBundle {
    pub folds: FoldAssignment,
    pub outcome: OutcomePredictions,
    pub propensity: PropensityPredictions,
    /// Cross-fitted density-ratio predictions, present in fusion mode.
    pub ratio: Option<Vec<f64>>,
    pub clip_eps: f64,
    pub clipped_ratio: u64,
}

/// Configuration for a full nuisance fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpec {
    pub outcome: LearnerSpec,
    pub propensity: LearnerSpec,
    #[serde(default)]
    pub ratio: Option<LearnerSpec>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_clip_eps")]
    pub clip_eps: f64,
    /// Cap for the density ratio; predictions are clipped to
    /// `[1/ratio_cap, ratio_cap]`.
    #[serde(default = "default_ratio_cap")]
    pub ratio_cap: f64,
}

fn default_folds() -> usize {
    5
}

fn default_clip_eps() -> f64 {
    0.01
}

fn default_ratio_cap() -> f64 {
    20.0
}

impl NuisanceSpec {
    /// The default flexible configuration: a cubic basis stacked with a
    /// nearest-neighbour learner for the outcome and the density ratio (the
    /// local learner picks up structure the global basis misses, such as
    /// support boundaries), and a plain basis for the propensities.
    pub fn flexible() -> Self {
        let stacked = LearnerSpec::Stack {
            components: vec![
                LearnerSpec::LogisticBasis { degree: 3, interactions: true },
                LearnerSpec::Knn { k: 100 },
            ],
        };
        NuisanceSpec {
            outcome: stacked.clone(),
            propensity: LearnerSpec::LogisticBasis { degree: 1, interactions: false },
            ratio: Some(stacked),
            folds: default_folds(),
            clip_eps: default_clip_eps(),
            ratio_cap: default_ratio_cap(),
        }
    }
}

/// Fit all nuisances with a shared fold assignment.
pub fn fit_nuisances(
    players: usize,
    dataset: &ComparisonDataset,
    spec: &NuisanceSpec,
    seed: u64,
) -> Result<NuisanceBundle> {
    let folds = assign_folds(dataset, spec.folds, seed)?;
    let outcome = fit_outcome(players, dataset, &spec.outcome, &folds, spec.clip_eps)?;
    let propensity = fit_propensity(players, dataset, &spec.propensity, &folds, spec.clip_eps)?;
    let (ratio, clipped_ratio) = if dataset.is_fusion() {
        let ratio_spec = spec.ratio.as_ref().ok_or_else(|| {
            Error::Config("fusion dataset needs a density-ratio learner".into())
        })?;
        let (w, clipped) = fit_density_ratio(dataset, ratio_spec, &folds, spec.ratio_cap)?;
        (Some(w), clipped)
    } else {
        (None, 0)
    };
    Ok(NuisanceBundle {
        folds,
        outcome,
        propensity,
        ratio,
        clip_eps: spec.clip_eps,
        clipped_ratio,
    })
}

/// Per observed pair and fold, a regression of the outcome on the covariates
/// over the labeled records of that pair outside the fold; predictions for
/// every record are clipped to the probability floor.
pub fn fit_outcome(
    players: usize,
    dataset: &ComparisonDataset,
    spec: &LearnerSpec,
    folds: &FoldAssignment,
    clip_eps: f64,
) -> Result<OutcomePredictions> {
    let pairs = num_pairs(players);
    let mut observed = vec![false; pairs];
    for r in dataset.labeled() {
        observed[pair_index(players, r.pair.0, r.pair.1)?] = true;
    }
    let mut models: Vec<Vec<Option<FittedRegressor>>> = Vec::with_capacity(folds.v);
    for fold in 0..folds.v {
        let mut per_pair: Vec<Option<FittedRegressor>> = vec![None; pairs];
        for j in 0..pairs {
            if !observed[j] {
                continue;
            }
            let (k, l) = pair_at(players, j)?;
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (i, r) in dataset.labeled().iter().enumerate() {
                if folds.fold_of[i] != fold && r.pair == (k, l) {
                    x.push(r.x.clone());
                    y.push(r.y);
                }
            }
            if x.is_empty() {
                return Err(Error::Data(format!(
                    "no training records for pair ({k}, {l}) outside fold {fold}"
                )));
            }
            per_pair[j] = Some(spec.fit(&x, &y)?);
        }
        models.push(per_pair);
    }

    let mut clipped = 0u64;
    let n_total = dataset.n_total();
    let mut per_record = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let fold = folds.fold_of[i];
        let x = dataset.x_at(i);
        let row: Vec<Option<f64>> = (0..pairs)
            .map(|j| {
                models[fold][j].as_ref().map(|m| {
                    let raw = m.predict(x);
                    let c = raw.clamp(clip_eps, 1.0 - clip_eps);
                    if c != raw {
                        clipped += 1;
                    }
                    c
                })
            })
            .collect();
        per_record.push(row);
    }
    Ok(OutcomePredictions { per_record, observed, clipped, models })
}

/// Cross-fitted pair propensities: one-vs-rest fits of the chosen learner
/// per observed pair, renormalized to a probability vector over the observed
/// pairs. A single observed pair is only meaningful for two players, where
/// the propensity is identically one.
pub fn fit_propensity(
    players: usize,
    dataset: &ComparisonDataset,
    spec: &LearnerSpec,
    folds: &FoldAssignment,
    clip_eps: f64,
) -> Result<PropensityPredictions> {
    let pairs = num_pairs(players);
    let mut observed = vec![false; pairs];
    for r in dataset.labeled() {
        observed[pair_index(players, r.pair.0, r.pair.1)?] = true;
    }
    let n_observed = observed.iter().filter(|o| **o).count();
    if n_observed < 2 {
        if players != 2 {
            return Err(Error::Identification(
                "only one pair observed; propensities are degenerate unless there are exactly two players"
                    .into(),
            ));
        }
        let per_record = vec![vec![1.0]; dataset.n_total()];
        return Ok(PropensityPredictions { per_record, observed, clipped: 0 });
    }

    // one-vs-rest scores per fold and observed pair
    let mut models: Vec<Vec<Option<FittedRegressor>>> = Vec::with_capacity(folds.v);
    for fold in 0..folds.v {
        let mut x = Vec::new();
        let mut rows = Vec::new();
        for (i, r) in dataset.labeled().iter().enumerate() {
            if folds.fold_of[i] != fold {
                x.push(r.x.clone());
                rows.push(pair_index(players, r.pair.0, r.pair.1)?);
            }
        }
        if x.is_empty() {
            return Err(Error::Data(format!(
                "no labeled training records outside fold {fold}"
            )));
        }
        let mut per_pair: Vec<Option<FittedRegressor>> = vec![None; pairs];
        for j in 0..pairs {
            if !observed[j] {
                continue;
            }
            let y: Vec<f64> = rows.iter().map(|&rj| f64::from(rj == j)).collect();
            per_pair[j] = Some(spec.fit(&x, &y)?);
        }
        models.push(per_pair);
    }

    let mut clipped = 0u64;
    let mut per_record = Vec::with_capacity(dataset.n_total());
    for i in 0..dataset.n_total() {
        let fold = folds.fold_of[i];
        let x = dataset.x_at(i);
        let mut probs: Vec<f64> = (0..pairs)
            .map(|j| models[fold][j].as_ref().map_or(0.0, |m| m.predict(x).max(0.0)))
            .collect();
        let total: f64 = probs.iter().sum();
        if total > 0.0 {
            for p in probs.iter_mut() {
                *p /= total;
            }
        } else {
            for (j, p) in probs.iter_mut().enumerate() {
                if observed[j] {
                    *p = 1.0 / n_observed as f64;
                }
            }
        }
        clipped += clip_and_renormalize(&mut probs, &observed, clip_eps);
        per_record.push(probs);
    }
    Ok(PropensityPredictions { per_record, observed, clipped })
}

/// Clip the observed entries into `[clip_eps, 1 - clip_eps]` and renormalize
/// until both constraints hold; returns how many entries were clipped on the
/// first pass.
fn clip_and_renormalize(probs: &mut [f64], observed: &[bool], clip_eps: f64) -> u64 {
    let mut clipped = 0u64;
    for pass in 0..32 {
        let mut any = false;
        for (j, p) in probs.iter_mut().enumerate() {
            if observed[j] {
                let c = p.clamp(clip_eps, 1.0 - clip_eps);
                if c != *p {
                    any = true;
                    if pass == 0 {
                        clipped += 1;
                    }
                }
                *p = c;
            }
        }
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        if !any && (total - 1.0).abs() < 1e-14 {
            break;
        }
    }
    clipped
}

/// Cross-fitted density ratio of the target covariate law to the labeled
/// one, evaluated at every record.
///
/// With the `Empirical` learner the ratio is the per-category frequency
/// ratio (unlabeled over labeled), and the final predictions are
/// renormalized so their labeled-sample mean is exactly one. Any other
/// learner runs the classification route: fit the probability that a record
/// is labeled, then convert through the odds times `n/m`.
pub fn fit_density_ratio(
    dataset: &ComparisonDataset,
    spec: &LearnerSpec,
    folds: &FoldAssignment,
    ratio_cap: f64,
) -> Result<(Vec<f64>, u64)> {
    if !dataset.is_fusion() {
        return Err(Error::Config(
            "density-ratio estimation needs an unlabeled target block".into(),
        ));
    }
    let n = dataset.n_labeled();
    let m = dataset.n_unlabeled();
    let total = dataset.n_total();
    let mut w = vec![0.0; total];
    let mut clipped = 0u64;

    match spec {
        LearnerSpec::Empirical => {
            for fold in 0..folds.v {
                let mut lab: std::collections::HashMap<Vec<u64>, f64> = Default::default();
                let mut unlab: std::collections::HashMap<Vec<u64>, f64> = Default::default();
                let mut n_lab = 0.0;
                let mut n_unlab = 0.0;
                for i in 0..total {
                    if folds.fold_of[i] == fold {
                        continue;
                    }
                    let key = learners::group_key(dataset.x_at(i));
                    if i < n {
                        *lab.entry(key).or_insert(0.0) += 1.0;
                        n_lab += 1.0;
                    } else {
                        *unlab.entry(key).or_insert(0.0) += 1.0;
                        n_unlab += 1.0;
                    }
                }
                if n_lab == 0.0 || n_unlab == 0.0 {
                    return Err(Error::Data(format!(
                        "fold {fold} leaves no labeled or no unlabeled training records"
                    )));
                }
                for i in 0..total {
                    if folds.fold_of[i] != fold {
                        continue;
                    }
                    let key = learners::group_key(dataset.x_at(i));
                    let freq_unlab = unlab.get(&key).copied().unwrap_or(0.0) / n_unlab;
                    let freq_lab = lab.get(&key).copied().unwrap_or(0.0) / n_lab;
                    if freq_lab == 0.0 {
                        if freq_unlab > 0.0 || i >= n {
                            return Err(Error::Data(
                                "covariate category appears in the target data but never in the labeled data; \
                                 the target distribution must be absolutely continuous with respect to the labeled one"
                                    .into(),
                            ));
                        }
                        w[i] = 0.0;
                    } else {
                        w[i] = freq_unlab / freq_lab;
                    }
                }
            }
            for wi in w.iter_mut() {
                let c = wi.clamp(1.0 / ratio_cap, ratio_cap);
                if c != *wi {
                    clipped += 1;
                }
                *wi = c;
            }
            // exact self-normalization over the labeled sample
            let lab_mean: f64 = w[..n].iter().sum::<f64>() / n as f64;
            for wi in w.iter_mut() {
                *wi /= lab_mean;
            }
        }
        _ => {
            // classification route: fit Pr(labeled | x) cross-fitted
            for fold in 0..folds.v {
                let mut x = Vec::new();
                let mut s = Vec::new();
                for i in 0..total {
                    if folds.fold_of[i] != fold {
                        x.push(dataset.x_at(i).to_vec());
                        s.push(f64::from(i < n));
                    }
                }
                let fit = spec.fit(&x, &s)?;
                for i in 0..total {
                    if folds.fold_of[i] == fold {
                        let p = fit.predict(dataset.x_at(i)).clamp(1e-6, 1.0 - 1e-6);
                        w[i] = (1.0 - p) / p * (n as f64 / m as f64);
                    }
                }
            }
            for wi in w.iter_mut() {
                let c = wi.clamp(1.0 / ratio_cap, ratio_cap);
                if c != *wi {
                    clipped += 1;
                }
                *wi = c;
            }
        }
    }
    Ok((w, clipped))
}

impl NuisanceBundle {
    /// Build a bundle from closed-form nuisance functions, bypassing any
    /// fitting; used for oracle runs and synthetic checks. The outcome and
    /// ratio functions are evaluated at every record, the propensity at the
    /// labeled ones.
    pub fn from_functions(
        players: usize,
        dataset: &ComparisonDataset,
        outcome_fn: impl Fn(&[f64], usize, usize) -> Option<f64>,
        propensity_fn: impl Fn(&[f64], usize, usize) -> f64,
        ratio_fn: Option<&dyn Fn(&[f64]) -> f64>,
        clip_eps: f64,
    ) -> Result<Self> {
        let pairs = num_pairs(players);
        let total = dataset.n_total();
        let mut observed = vec![false; pairs];
        for r in dataset.labeled() {
            observed[pair_index(players, r.pair.0, r.pair.1)?] = true;
        }
        let mut per_record = Vec::with_capacity(total);
        let mut pi_rows = Vec::with_capacity(total);
        for i in 0..total {
            let x = dataset.x_at(i);
            let mut row = Vec::with_capacity(pairs);
            let mut pi_row = Vec::with_capacity(pairs);
            for j in 0..pairs {
                let (k, l) = pair_at(players, j)?;
                row.push(outcome_fn(x, k, l).map(|v| v.clamp(clip_eps, 1.0 - clip_eps)));
                pi_row.push(propensity_fn(x, k, l));
            }
            per_record.push(row);
            pi_rows.push(pi_row);
        }
        let ratio = ratio_fn.map(|f| (0..total).map(|i| f(dataset.x_at(i))).collect());
        let folds = FoldAssignment { fold_of: vec![0; total], v: 1, seed: 0 };
        Ok(NuisanceBundle {
            folds,
            outcome: OutcomePredictions {
                per_record,
                observed: observed.clone(),
                clipped: 0,
                models: Vec::new(),
            },
            propensity: PropensityPredictions { per_record: pi_rows, observed, clipped: 0 },
            ratio,
            clip_eps,
            clipped_ratio: 0,
        })
    }
}
