//! Shared test-only oracle code: scalar-loop transliterations of the
//! one-step estimator formulas, built on an independent Gaussian-elimination
//! solver and an independent Newton iteration. Nothing here calls into the
//! library's linear algebra or solver paths; the oracles consume the same
//! nuisance prediction tables the estimators see and recompute everything
//! else from scratch.

use btshift::nuisance::NuisanceBundle;
use btshift::types::ComparisonDataset;

/// Flat prediction tables shared between an estimator run and its oracle.
pub struct Tables {
    pub players: usize,
    pub n: usize,
    pub total: usize,
    /// Per record, canonical pair order; `None` for unobserved pairs.
    pub m_hat: Vec<Vec<Option<f64>>>,
    /// Per record, canonical pair order; zero for unobserved pairs.
    pub pi_hat: Vec<Vec<f64>>,
    /// Per record density ratio (1.0 when absent).
    pub w_hat: Vec<f64>,
    /// Labeled record pairs and outcomes.
    pub pairs: Vec<(usize, usize)>,
    pub ys: Vec<f64>,
    /// Estimand-defining weights in canonical pair order.
    pub rho: Vec<f64>,
}

pub fn tables_from(
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    rho: &[f64],
) -> Tables {
    let players = rho_players(rho.len());
    Tables {
        players,
        n: dataset.n_labeled(),
        total: dataset.n_total(),
        m_hat: bundle.outcome.per_record.clone(),
        pi_hat: bundle.propensity.per_record.clone(),
        w_hat: bundle
            .ratio
            .clone()
            .unwrap_or_else(|| vec![1.0; dataset.n_total()]),
        pairs: dataset.labeled().iter().map(|r| r.pair).collect(),
        ys: dataset.labeled().iter().map(|r| r.y).collect(),
        rho: rho.to_vec(),
    }
}

/// Player count from the number of pairs.
fn rho_players(num_pairs: usize) -> usize {
    let mut k = 2;
    while k * (k - 1) / 2 < num_pairs {
        k += 1;
    }
    assert_eq!(k * (k - 1) / 2, num_pairs);
    k
}

pub fn sigmoid_o(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn logit_o(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Canonical pair index of (k, l), k < l, 1-based players.
pub fn pair_idx(players: usize, k: usize, l: usize) -> usize {
    let before = (k - 1) * players - k * (k - 1) / 2;
    before + (l - k) - 1
}

/// All pairs in canonical order.
#[allow(dead_code)]
pub fn all_pairs(players: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 1..=players {
        for l in (k + 1)..=players {
            out.push((k, l));
        }
    }
    out
}

/// Flat slot of m_{kl} in the win-probability layout (k >= 2, l != k).
pub fn slot(players: usize, k: usize, l: usize) -> usize {
    (k - 2) * (players - 1) + if l < k { l - 1 } else { l - 2 }
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        assert!(a[c][c].abs() > 1e-14, "singular system in oracle");
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for cc in c..n {
                    a[r][cc] -= f * a[c][cc];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// m_{kl} for any orientation from a per-pair table.
pub fn m_of(players: usize, row: &[Option<f64>], k: usize, l: usize) -> f64 {
    if k < l {
        row[pair_idx(players, k, l)].expect("pair observed")
    } else {
        1.0 - row[pair_idx(players, l, k)].expect("pair observed")
    }
}

pub fn rho_of(players: usize, rho: &[f64], k: usize, l: usize) -> f64 {
    let (a, b) = if k < l { (k, l) } else { (l, k) };
    rho[pair_idx(players, a, b)]
}

/// Scalar Newton for the estimating equations at fixed win probabilities,
/// weights picked from `weight(k, l)` and means from `m(k, l)`. Zero-weight
/// pairs are skipped.
pub fn newton_theta(
    players: usize,
    m: &dyn Fn(usize, usize) -> f64,
    weight: &dyn Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let dim = players - 1;
    let mut theta = vec![0.0; dim];
    let th = |t: &[f64], p: usize| if p == 1 { 0.0 } else { t[p - 2] };
    let eqs = |t: &[f64]| -> Vec<f64> {
        (2..=players)
            .map(|k| {
                let mut s = 0.0;
                for l in 1..=players {
                    if l != k {
                        let w = weight(k, l);
                        if w > 0.0 {
                            s += w * (sigmoid_o(th(t, k) - th(t, l)) - m(k, l));
                        }
                    }
                }
                s
            })
            .collect()
    };
    let jac_at = |t: &[f64]| -> Vec<Vec<f64>> {
        let mut jac = vec![vec![0.0; dim]; dim];
        for k in 2..=players {
            for l in 1..=players {
                if l != k {
                    let w = weight(k, l);
                    if w > 0.0 {
                        let s = sigmoid_o(th(t, k) - th(t, l));
                        let d = w * s * (1.0 - s);
                        jac[k - 2][k - 2] += d;
                        if l >= 2 {
                            jac[k - 2][l - 2] -= d;
                        }
                    }
                }
            }
        }
        jac
    };
    for _ in 0..200 {
        let u = eqs(&theta);
        let res = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if res < 1e-13 {
            break;
        }
        let step = gauss_solve(jac_at(&theta), u.clone());
        // halve until the residual shrinks
        let mut alpha = 1.0;
        loop {
            let cand: Vec<f64> =
                theta.iter().zip(&step).map(|(t, s)| t - alpha * s).collect();
            let cres = eqs(&cand).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if cres < res || alpha < 1e-8 {
                theta = cand;
                break;
            }
            alpha *= 0.5;
        }
    }
    // polish: one full step from the converged point
    let u = eqs(&theta);
    let res = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if res > 0.0 {
        let step = gauss_solve(jac_at(&theta), u);
        let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - s).collect();
        let cres = eqs(&cand).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if cres <= res {
            theta = cand;
        }
    }
    theta
}

/// The sensitivity matrix applied to a flat layout vector, via the explicit
/// entrywise derivative formulas and Gaussian elimination:
/// `(dU/dtheta)^{-1} (dU/dm) v`.
pub fn lambda_apply(players: usize, theta: &[f64], rho: &[f64], v: &[f64]) -> Vec<f64> {
    let dim = players - 1;
    let th = |p: usize| if p == 1 { 0.0 } else { theta[p - 2] };
    let mut jt = vec![vec![0.0; dim]; dim];
    for k in 2..=players {
        for l in 1..=players {
            if l != k {
                let w = rho_of(players, rho, k, l);
                let s = sigmoid_o(th(k) - th(l));
                let d = w * s * (1.0 - s);
                jt[k - 2][k - 2] += d;
                if l >= 2 {
                    jt[k - 2][l - 2] -= d;
                }
            }
        }
    }
    // (dU/dm) v: block row k sums -rho_kl * v_slot(k, l)
    let mut jm_v = vec![0.0; dim];
    for k in 2..=players {
        for l in 1..=players {
            if l != k {
                jm_v[k - 2] -= rho_of(players, rho, k, l) * v[slot(players, k, l)];
            }
        }
    }
    gauss_solve(jt, jm_v)
}

/// The inverse-propensity residual vector in the flat layout.
pub fn tau_o(t: &Tables, i: usize) -> Vec<f64> {
    let players = t.players;
    let (k0, l0) = t.pairs[i];
    let mrow = &t.m_hat[i];
    let pi = t.pi_hat[i][pair_idx(players, k0, l0)];
    let mut out = vec![0.0; (players - 1) * (players - 1)];
    for k in 2..=players {
        for l in 1..=players {
            if l == k {
                continue;
            }
            let (lo, hi) = if k < l { (k, l) } else { (l, k) };
            if (lo, hi) == (k0, l0) {
                let sign = if k < l { 1.0 } else { -1.0 };
                out[slot(players, k, l)] =
                    sign * (t.ys[i] - m_of(players, mrow, lo, hi)) / pi;
            }
        }
    }
    out
}

/// Pointwise solved strengths at record `i` under the estimand weights.
pub fn theta_hat_o(t: &Tables, i: usize) -> Vec<f64> {
    let players = t.players;
    let mrow = &t.m_hat[i];
    newton_theta(
        players,
        &|k, l| m_of(players, mrow, k, l),
        &|k, l| rho_of(players, &t.rho, k, l),
    )
}

/// Transliterated labeled-only one-step estimator of the covariate-averaged
/// strengths.
pub fn oracle_phi_no_shift(t: &Tables) -> Vec<f64> {
    let dim = t.players - 1;
    let mut acc = vec![0.0; dim];
    for i in 0..t.n {
        let theta = theta_hat_o(t, i);
        let lam_tau = lambda_apply(t.players, &theta, &t.rho, &tau_o(t, i));
        for j in 0..dim {
            acc[j] += theta[j] - lam_tau[j];
        }
    }
    acc.iter().map(|v| v / t.n as f64).collect()
}

/// Transliterated labeled-only one-step estimator of the marginal-projection
/// strengths.
pub fn oracle_psi_no_shift(t: &Tables) -> Vec<f64> {
    let players = t.players;
    let dim = players - 1;
    // marginal means over the labeled sample, per free pair
    let mut marg = vec![0.0; t.rho.len()];
    for i in 0..t.n {
        for (j, v) in t.m_hat[i].iter().enumerate() {
            marg[j] += v.expect("pair observed");
        }
    }
    for v in marg.iter_mut() {
        *v /= t.n as f64;
    }
    let m_marg = |k: usize, l: usize| -> f64 {
        if k < l {
            marg[pair_idx(players, k, l)]
        } else {
            1.0 - marg[pair_idx(players, l, k)]
        }
    };
    let psi_tilde = newton_theta(players, &m_marg, &|k, l| rho_of(players, &t.rho, k, l));
    // flat layout of the marginal vector
    let mut marg_flat = vec![0.0; dim * dim];
    for k in 2..=players {
        for l in 1..=players {
            if l != k {
                marg_flat[slot(players, k, l)] = m_marg(k, l);
            }
        }
    }
    let mut acc = vec![0.0; dim];
    for i in 0..t.n {
        let tau = tau_o(t, i);
        let mut inner = vec![0.0; dim * dim];
        for k in 2..=players {
            for l in 1..=players {
                if l != k {
                    let s = slot(players, k, l);
                    inner[s] = tau[s] + m_of(players, &t.m_hat[i], k, l) - marg_flat[s];
                }
            }
        }
        let corr = lambda_apply(players, &psi_tilde, &t.rho, &inner);
        for j in 0..dim {
            acc[j] -= corr[j];
        }
    }
    (0..dim).map(|j| psi_tilde[j] + acc[j] / t.n as f64).collect()
}

/// Transliterated data-fusion one-step estimator of the covariate-averaged
/// strengths.
pub fn oracle_phi_fusion(t: &Tables) -> Vec<f64> {
    let dim = t.players - 1;
    let s_bar = t.n as f64 / t.total as f64;
    let mut acc = vec![0.0; dim];
    for i in 0..t.n {
        let theta = theta_hat_o(t, i);
        let lam_tau = lambda_apply(t.players, &theta, &t.rho, &tau_o(t, i));
        for j in 0..dim {
            acc[j] += -t.w_hat[i] / s_bar * lam_tau[j];
        }
    }
    for i in t.n..t.total {
        let theta = theta_hat_o(t, i);
        for j in 0..dim {
            acc[j] += theta[j] / (1.0 - s_bar);
        }
    }
    acc.iter().map(|v| v / t.total as f64).collect()
}

/// Transliterated data-fusion one-step estimator of the marginal-projection
/// strengths; the marginal averages over the unlabeled block.
pub fn oracle_psi_fusion(t: &Tables) -> Vec<f64> {
    let players = t.players;
    let dim = players - 1;
    let m_count = t.total - t.n;
    let mut marg = vec![0.0; t.rho.len()];
    for i in t.n..t.total {
        for (j, v) in t.m_hat[i].iter().enumerate() {
            marg[j] += v.expect("pair observed");
        }
    }
    for v in marg.iter_mut() {
        *v /= m_count as f64;
    }
    let m_marg = |k: usize, l: usize| -> f64 {
        if k < l {
            marg[pair_idx(players, k, l)]
        } else {
            1.0 - marg[pair_idx(players, l, k)]
        }
    };
    let psi_tilde = newton_theta(players, &m_marg, &|k, l| rho_of(players, &t.rho, k, l));
    let s_bar = t.n as f64 / t.total as f64;
    let mut acc = vec![0.0; dim];
    for i in 0..t.total {
        let mut inner = vec![0.0; dim * dim];
        if i < t.n {
            let tau = tau_o(t, i);
            for (s, v) in inner.iter_mut().enumerate() {
                *v = t.w_hat[i] / s_bar * tau[s];
            }
        } else {
            for k in 2..=players {
                for l in 1..=players {
                    if l != k {
                        let s = slot(players, k, l);
                        inner[s] = (m_of(players, &t.m_hat[i], k, l) - m_marg(k, l))
                            / (1.0 - s_bar);
                    }
                }
            }
        }
        let corr = lambda_apply(players, &psi_tilde, &t.rho, &inner);
        for j in 0..dim {
            acc[j] -= corr[j];
        }
    }
    (0..dim).map(|j| psi_tilde[j] + acc[j] / t.total as f64).collect()
}

/// Transliterated self-normalized known-ratio one-step estimator.
pub fn oracle_known_ratio_phi(t: &Tables, w: &[f64]) -> Vec<f64> {
    let dim = t.players - 1;
    let w_sum: f64 = w.iter().sum();
    let mut acc = vec![0.0; dim];
    for i in 0..t.n {
        let theta = theta_hat_o(t, i);
        let lam_tau = lambda_apply(t.players, &theta, &t.rho, &tau_o(t, i));
        for j in 0..dim {
            acc[j] += w[i] * (theta[j] - lam_tau[j]);
        }
    }
    acc.iter().map(|v| v / w_sum).collect()
}

/// Standardized residual over the rows of a fixed comparison matrix, then
/// pushed through its pseudoinverse (normal equations by elimination).
pub fn gamma_pinv_tau_tilde(
    t: &Tables,
    gamma_pairs: &[(usize, usize)],
    i: usize,
) -> Vec<f64> {
    let players = t.players;
    let mut tt = vec![0.0; gamma_pairs.len()];
    for (j, &(k, l)) in gamma_pairs.iter().enumerate() {
        if (k, l) == t.pairs[i] {
            let mkl = m_of(players, &t.m_hat[i], k, l);
            let pi = t.pi_hat[i][pair_idx(players, k, l)];
            tt[j] = (t.ys[i] - mkl) / pi / (mkl * (1.0 - mkl));
        }
    }
    gamma_pinv_apply(players, gamma_pairs, &tt)
}

/// `(G^T G)^{-1} G^T b` with the incidence entries written out by hand.
pub fn gamma_pinv_apply(
    players: usize,
    gamma_pairs: &[(usize, usize)],
    b: &[f64],
) -> Vec<f64> {
    let dim = players - 1;
    let entry = |j: usize, p: usize| -> f64 {
        let (k, l) = gamma_pairs[j];
        if p == k {
            1.0
        } else if p == l {
            -1.0
        } else {
            0.0
        }
    };
    let mut gtg = vec![vec![0.0; dim]; dim];
    let mut gtb = vec![0.0; dim];
    for a in 0..dim {
        for j in 0..gamma_pairs.len() {
            gtb[a] += entry(j, a + 2) * b[j];
            for c in 0..dim {
                gtg[a][c] += entry(j, a + 2) * entry(j, c + 2);
            }
        }
    }
    gauss_solve(gtg, gtb)
}

/// Strengths through a fixed comparison matrix at record `i`.
pub fn theta_gamma_o(t: &Tables, gamma_pairs: &[(usize, usize)], i: usize) -> Vec<f64> {
    let players = t.players;
    let logits: Vec<f64> = gamma_pairs
        .iter()
        .map(|&(k, l)| logit_o(m_of(players, &t.m_hat[i], k, l)))
        .collect();
    gamma_pinv_apply(players, gamma_pairs, &logits)
}

/// Strengths through the pointwise projection with propensity weights.
pub fn theta_proj_o(t: &Tables, i: usize) -> Vec<f64> {
    let players = t.players;
    let mrow = &t.m_hat[i];
    let pi_row = &t.pi_hat[i];
    newton_theta(
        players,
        &|k, l| m_of(players, mrow, k, l),
        &|k, l| {
            let (a, b) = if k < l { (k, l) } else { (l, k) };
            pi_row[pair_idx(players, a, b)]
        },
    )
}

/// The efficient correction at record `i` built the long way round: solve
/// for the coefficient functions against each basis vector of the reduced
/// weighted Laplacian, then combine them with the residual indicator.
pub fn laplace_correction_o(t: &Tables, theta: &[f64], i: usize) -> Vec<f64> {
    let players = t.players;
    let dim = players - 1;
    let th = |p: usize| if p == 1 { 0.0 } else { theta[p - 2] };
    let m_bt = |k: usize, l: usize| sigmoid_o(th(k) - th(l));
    let pi_row = &t.pi_hat[i];
    let g = |k: usize, l: usize| -> f64 {
        let (a, b) = if k < l { (k, l) } else { (l, k) };
        let p = pi_row[pair_idx(players, a, b)];
        m_bt(a, b) * (1.0 - m_bt(a, b)) * p
    };
    // reduced Laplacian with entries written from the per-player sums
    let mut lap = vec![vec![0.0; dim]; dim];
    for k in 2..=players {
        for l in 1..=players {
            if l != k {
                lap[k - 2][k - 2] += g(k, l);
                if l >= 2 {
                    lap[k - 2][l - 2] -= g(k, l);
                }
            }
        }
    }
    let (k0, l0) = t.pairs[i];
    let pi0 = pi_row[pair_idx(players, k0, l0)];
    let mut out = vec![0.0; dim];
    if pi0 > 0.0 {
        let resid = t.ys[i] - m_bt(k0, l0);
        for comp in 0..dim {
            let mut e = vec![0.0; dim];
            e[comp] = 1.0;
            let h = gauss_solve(lap.clone(), e);
            let h_of = |p: usize| if p == 1 { 0.0 } else { h[p - 2] };
            out[comp] = resid * (h_of(k0) - h_of(l0));
        }
    }
    out
}

/// Transliterated fixed-matrix conditional estimator of the
/// covariate-averaged strengths.
pub fn oracle_cond_if_phi(
    t: &Tables,
    gamma_pairs: &[(usize, usize)],
    fusion: bool,
) -> Vec<f64> {
    let dim = t.players - 1;
    let mut acc = vec![0.0; dim];
    if fusion {
        let s_bar = t.n as f64 / t.total as f64;
        for i in 0..t.n {
            let corr = gamma_pinv_tau_tilde(t, gamma_pairs, i);
            for j in 0..dim {
                acc[j] += t.w_hat[i] / s_bar * corr[j];
            }
        }
        for i in t.n..t.total {
            let theta = theta_gamma_o(t, gamma_pairs, i);
            for j in 0..dim {
                acc[j] += theta[j] / (1.0 - s_bar);
            }
        }
        acc.iter().map(|v| v / t.total as f64).collect()
    } else {
        for i in 0..t.n {
            let corr = gamma_pinv_tau_tilde(t, gamma_pairs, i);
            let theta = theta_gamma_o(t, gamma_pairs, i);
            for j in 0..dim {
                acc[j] += theta[j] + corr[j];
            }
        }
        acc.iter().map(|v| v / t.n as f64).collect()
    }
}

/// Transliterated efficient conditional estimator of the covariate-averaged
/// strengths.
pub fn oracle_cond_eif_phi(t: &Tables, fusion: bool) -> Vec<f64> {
    let dim = t.players - 1;
    let mut acc = vec![0.0; dim];
    if fusion {
        let s_bar = t.n as f64 / t.total as f64;
        for i in 0..t.n {
            let theta = theta_proj_o(t, i);
            let corr = laplace_correction_o(t, &theta, i);
            for j in 0..dim {
                acc[j] += t.w_hat[i] / s_bar * corr[j];
            }
        }
        for i in t.n..t.total {
            let theta = theta_proj_o(t, i);
            for j in 0..dim {
                acc[j] += theta[j] / (1.0 - s_bar);
            }
        }
        acc.iter().map(|v| v / t.total as f64).collect()
    } else {
        for i in 0..t.n {
            let theta = theta_proj_o(t, i);
            let corr = laplace_correction_o(t, &theta, i);
            for j in 0..dim {
                acc[j] += theta[j] + corr[j];
            }
        }
        acc.iter().map(|v| v / t.n as f64).collect()
    }
}

/// Transliterated conditional-model estimator of the marginal-projection
/// strengths (fixed-matrix or efficient route, with or without fusion).
#[allow(dead_code)]
pub fn oracle_cond_psi(
    t: &Tables,
    gamma_pairs: Option<&[(usize, usize)]>,
    fusion: bool,
) -> Vec<f64> {
    let players = t.players;
    let dim = players - 1;
    let theta_of = |i: usize| -> Vec<f64> {
        match gamma_pairs {
            Some(g) => theta_gamma_o(t, g, i),
            None => theta_proj_o(t, i),
        }
    };
    // model-consistent win probabilities per record, flat layout
    let m_bt_flat = |theta: &[f64]| -> Vec<f64> {
        let th = |p: usize| if p == 1 { 0.0 } else { theta[p - 2] };
        let mut out = vec![0.0; dim * dim];
        for k in 2..=players {
            for l in 1..=players {
                if l != k {
                    out[slot(players, k, l)] = sigmoid_o(th(k) - th(l));
                }
            }
        }
        out
    };
    let marg_records: Vec<usize> =
        if fusion { (t.n..t.total).collect() } else { (0..t.n).collect() };
    let mut marg = vec![0.0; dim * dim];
    let mut thetas = Vec::with_capacity(t.total);
    for i in 0..t.total {
        thetas.push(theta_of(i));
    }
    for &i in &marg_records {
        for (s, v) in m_bt_flat(&thetas[i]).iter().enumerate() {
            marg[s] += v;
        }
    }
    for v in marg.iter_mut() {
        *v /= marg_records.len() as f64;
    }
    let m_marg = |k: usize, l: usize| marg[slot(players, k, l)];
    // marginal solve needs both orientations; slots cover k >= 2, use the
    // complement for k = 1
    let m_marg_full = |k: usize, l: usize| -> f64 {
        if k >= 2 {
            m_marg(k, l)
        } else {
            1.0 - m_marg(l, k)
        }
    };
    let psi_tilde = newton_theta(players, &m_marg_full, &|k, l| rho_of(players, &t.rho, k, l));

    let s_bar = t.n as f64 / t.total as f64;
    let upto = if fusion { t.total } else { t.n };
    let mut acc = vec![0.0; dim];
    for i in 0..upto {
        let theta = &thetas[i];
        let flat = m_bt_flat(theta);
        let mut term = vec![0.0; dim * dim];
        if i < t.n {
            let inner = match gamma_pairs {
                Some(g) => gamma_pinv_tau_tilde(t, g, i),
                None => laplace_correction_o(t, theta, i),
            };
            // push through the derivative of the win probabilities in the
            // strengths, entry by entry
            let th = |p: usize| if p == 1 { 0.0 } else { theta[p - 2] };
            for k in 2..=players {
                for l in 1..=players {
                    if l != k {
                        let s = sigmoid_o(th(k) - th(l));
                        let d = s * (1.0 - s);
                        let mut v = d * inner[k - 2];
                        if l >= 2 {
                            v -= d * inner[l - 2];
                        }
                        term[slot(players, k, l)] = v;
                    }
                }
            }
            if fusion {
                for v in term.iter_mut() {
                    *v *= t.w_hat[i] / s_bar;
                }
            } else {
                for (s, v) in term.iter_mut().enumerate() {
                    *v += flat[s] - marg[s];
                }
            }
        } else {
            for (s, v) in term.iter_mut().enumerate() {
                *v = (flat[s] - marg[s]) / (1.0 - s_bar);
            }
        }
        let corr = lambda_apply(players, &psi_tilde, &t.rho, &term);
        for j in 0..dim {
            acc[j] -= corr[j];
        }
    }
    (0..dim)
        .map(|j| psi_tilde[j] + acc[j] / upto as f64)
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}
