//! The built-in learner set used for every nuisance fit: polynomial-basis
//! logistic regression (quasi-likelihood, so fractional outcomes are fine),
//! k-nearest-neighbour averaging, the constant mean, the exact per-category
//! empirical mean, and a non-negative-least-squares stacker over the others.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::sigmoid;

/// Declarative learner choice, configurable from run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    /// Logistic regression on all monomials of the covariates up to `degree`;
    /// with `interactions` the basis holds every monomial of total degree at
    /// most `degree`, otherwise only single-coordinate powers.
    LogisticBasis { degree: u32, interactions: bool },
    /// Logistic regression on an explicit monomial list; every inner list is
    /// a product of `(coordinate, power)` factors. The intercept is implicit.
    LogisticMonomials { monomials: Vec<Vec<(usize, u32)>> },
    /// Mean outcome of the k nearest neighbours in standardized coordinates.
    Knn { k: usize },
    /// The training mean, ignoring covariates.
    ConstantMean,
    /// Exact per-covariate-vector empirical mean; suited to categorical
    /// covariates where every distinct vector is a category.
    Empirical,
    /// Non-negative-least-squares stack of the component learners, weighted
    /// by their out-of-fold performance on the training data.
    Stack { components: Vec<LearnerSpec> },
}

impl LearnerSpec {
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<FittedRegressor> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Data(format!(
                "learner needs matching non-empty inputs, got {} x {} y",
                x.len(),
                y.len()
            )));
        }
        match self {
            LearnerSpec::LogisticBasis { degree, interactions } => {
                let dim = x[0].len();
                let monomials = basis_monomials(dim, *degree, *interactions);
                fit_logistic(x, y, monomials)
            }
            LearnerSpec::LogisticMonomials { monomials } => {
                fit_logistic(x, y, monomials.clone())
            }
            LearnerSpec::Knn { k } => {
                if *k == 0 {
                    return Err(Error::Config("knn needs k >= 1".into()));
                }
                let standardize = standardization(x);
                let rows = x.iter().map(|r| apply_standardize(&standardize, r)).collect();
                Ok(FittedRegressor::Knn {
                    k: *k,
                    standardize,
                    rows,
                    targets: y.to_vec(),
                })
            }
            LearnerSpec::ConstantMean => {
                Ok(FittedRegressor::Constant(y.iter().sum::<f64>() / y.len() as f64))
            }
            LearnerSpec::Empirical => {
                let mut groups: std::collections::HashMap<Vec<u64>, (f64, f64)> =
                    std::collections::HashMap::new();
                for (row, &yi) in x.iter().zip(y) {
                    let e = groups.entry(group_key(row)).or_insert((0.0, 0.0));
                    e.0 += yi;
                    e.1 += 1.0;
                }
                let overall = y.iter().sum::<f64>() / y.len() as f64;
                let table = groups
                    .into_iter()
                    .map(|(k, (s, c))| (k, s / c))
                    .collect();
                Ok(FittedRegressor::Empirical { table, fallback: overall })
            }
            LearnerSpec::Stack { components } => fit_stack(components, x, y),
        }
    }
}

/// Bit-exact grouping key for a covariate vector.
pub(crate) fn group_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// A fitted regressor mapping a covariate vector to a conditional mean.
#[derive(Debug, Clone)]
pub enum FittedRegressor {
    Logistic {
        monomials: Vec<Vec<(usize, u32)>>,
        standardize: Vec<(f64, f64)>,
        /// Intercept first, then one coefficient per monomial.
        beta: Vec<f64>,
    },
    Knn {
        k: usize,
        standardize: Vec<(f64, f64)>,
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
    },
    Constant(f64),
    Empirical {
        table: std::collections::HashMap<Vec<u64>, f64>,
        fallback: f64,
    },
    Stacked {
        components: Vec<FittedRegressor>,
        weights: Vec<f64>,
    },
}

impl FittedRegressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedRegressor::Logistic { monomials, standardize, beta } => {
                let z = apply_standardize(standardize, x);
                let mut eta = beta[0];
                for (j, mono) in monomials.iter().enumerate() {
                    eta += beta[j + 1] * eval_monomial(mono, &z);
                }
                sigmoid(eta.clamp(-30.0, 30.0))
            }
            FittedRegressor::Knn { k, standardize, rows, targets } => {
                let z = apply_standardize(standardize, x);
                let mut dists: Vec<(f64, usize)> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let d: f64 = r.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                        (d, i)
                    })
                    .collect();
                let take = (*k).min(dists.len());
                if take < dists.len() {
                    dists.select_nth_unstable_by(take - 1, |a, b| a.partial_cmp(b).unwrap());
                }
                // average in index order so the result does not depend on the
                // partition's internal arrangement
                let mut picked: Vec<usize> = dists[..take].iter().map(|&(_, i)| i).collect();
                picked.sort_unstable();
                picked.iter().map(|&i| targets[i]).sum::<f64>() / take as f64
            }
            FittedRegressor::Constant(c) => *c,
            FittedRegressor::Empirical { table, fallback } => {
                *table.get(&group_key(x)).unwrap_or(fallback)
            }
            FittedRegressor::Stacked { components, weights } => components
                .iter()
                .zip(weights)
                .map(|(c, w)| w * c.predict(x))
                .sum(),
        }
    }
}

/// All monomials over `dim` coordinates with total degree in `1..=degree`;
/// without interactions only single-coordinate powers are kept.
pub(crate) fn basis_monomials(dim: usize, degree: u32, interactions: bool) -> Vec<Vec<(usize, u32)>> {
    let mut out = Vec::new();
    if interactions {
        let mut current: Vec<usize> = Vec::new();
        gen_products(dim, degree as usize, 0, &mut current, &mut out);
    } else {
        for j in 0..dim {
            for p in 1..=degree {
                out.push(vec![(j, p)]);
            }
        }
    }
    out
}

fn gen_products(
    dim: usize,
    max_deg: usize,
    start: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<(usize, u32)>>,
) {
    if !current.is_empty() {
        let mut mono: Vec<(usize, u32)> = Vec::new();
        for &v in current.iter() {
            match mono.last_mut() {
                Some((idx, p)) if *idx == v => *p += 1,
                _ => mono.push((v, 1)),
            }
        }
        out.push(mono);
    }
    if current.len() == max_deg {
        return;
    }
    for j in start..dim {
        current.push(j);
        gen_products(dim, max_deg, j, current, out);
        current.pop();
    }
}

fn standardization(x: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let dim = x[0].len();
    let n = x.len() as f64;
    (0..dim)
        .map(|j| {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        })
        .collect()
}

fn apply_standardize(s: &[(f64, f64)], x: &[f64]) -> Vec<f64> {
    x.iter().zip(s).map(|(v, (m, sd))| (v - m) / sd).collect()
}

fn eval_monomial(mono: &[(usize, u32)], z: &[f64]) -> f64 {
    mono.iter().map(|&(j, p)| z[j].powi(p as i32)).product()
}

/// Iteratively reweighted least squares for the Bernoulli quasi-likelihood;
/// a small ridge keeps exactly collinear bases (one-hot powers) solvable.
fn fit_logistic(
    x: &[Vec<f64>],
    y: &[f64],
    monomials: Vec<Vec<(usize, u32)>>,
) -> Result<FittedRegressor> {
    let standardize = standardization(x);
    let n = x.len();
    let p = monomials.len() + 1;
    let mut design = DMatrix::zeros(n, p);
    for (i, row) in x.iter().enumerate() {
        let z = apply_standardize(&standardize, row);
        design[(i, 0)] = 1.0;
        for (j, mono) in monomials.iter().enumerate() {
            design[(i, j + 1)] = eval_monomial(mono, &z);
        }
    }
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    let ridge = 1e-8;
    for _ in 0..60 {
        let eta = (&design * &beta).map(|e: f64| e.clamp(-30.0, 30.0));
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-10));
        // working response z = eta + (y - mu) / w
        let z = &eta + (&yv - &mu).component_div(&w);
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            let wi = w[i];
            for a in 0..p {
                let da = design[(i, a)];
                xtwz[a] += wi * da * z[i];
                for b in a..p {
                    xtwx[(a, b)] += wi * da * design[(i, b)];
                }
            }
        }
        for a in 0..p {
            xtwx[(a, a)] += ridge;
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let next = match xtwx.cholesky() {
            Some(ch) => ch.solve(&xtwz),
            None => {
                return Err(Error::Data(
                    "logistic fit failed: weighted design matrix is singular".into(),
                ))
            }
        };
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < 1e-10 {
            break;
        }
    }
    Ok(FittedRegressor::Logistic {
        monomials,
        standardize,
        beta: beta.iter().copied().collect(),
    })
}

/// Stack fit: inner 5-fold out-of-fold predictions per component, NNLS
/// weights over those predictions, components refit on the full data.
fn fit_stack(components: &[LearnerSpec], x: &[Vec<f64>], y: &[f64]) -> Result<FittedRegressor> {
    if components.is_empty() {
        return Err(Error::Config("stack needs at least one component".into()));
    }
    let n = x.len();
    let inner_folds = 5.min(n);
    // deterministic round-robin inner split; the outer fold assignment has
    // already randomized record order effects
    let fold_of: Vec<usize> = (0..n).map(|i| i % inner_folds).collect();
    let mut oof = vec![vec![0.0; n]; components.len()];
    for v in 0..inner_folds {
        let train_idx: Vec<usize> = (0..n).filter(|i| fold_of[*i] != v).collect();
        if train_idx.is_empty() {
            continue;
        }
        let tx: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
        for (c, spec) in components.iter().enumerate() {
            let fit = spec.fit(&tx, &ty)?;
            for i in 0..n {
                if fold_of[i] == v {
                    oof[c][i] = fit.predict(&x[i]);
                }
            }
        }
    }
    let weights = nnls_simplex(&oof, y);
    let fitted: Result<Vec<FittedRegressor>> =
        components.iter().map(|s| s.fit(x, y)).collect();
    Ok(FittedRegressor::Stacked { components: fitted?, weights })
}

/// Coordinate-descent non-negative least squares over component predictions,
/// normalized to sum to one; falls back to the best single component when
/// everything collapses to zero.
fn nnls_simplex(preds: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let c = preds.len();
    let n = y.len();
    let mut beta = vec![1.0 / c as f64; c];
    for _ in 0..500 {
        for a in 0..c {
            // minimize over beta[a] with others fixed
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let others: f64 = (0..c)
                    .filter(|&b| b != a)
                    .map(|b| beta[b] * preds[b][i])
                    .sum();
                num += preds[a][i] * (y[i] - others);
                den += preds[a][i] * preds[a][i];
            }
            beta[a] = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        }
    }
    let total: f64 = beta.iter().sum();
    if total > 0.0 {
        beta.iter().map(|b| b / total).collect()
    } else {
        let mut best = (f64::INFINITY, 0usize);
        for a in 0..c {
            let sse: f64 = (0..n).map(|i| (y[i] - preds[a][i]).powi(2)).sum();
            if sse < best.0 {
                best = (sse, a);
            }
        }
        (0..c).map(|a| if a == best.1 { 1.0 } else { 0.0 }).collect()
    }
}
