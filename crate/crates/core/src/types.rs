//! Domain types shared by every other module: the player set with its pair
//! ordering and target sampling weights, comparison records and datasets,
//! strength vectors and win-probability vectors.
//!
//! Conventions used throughout the crate:
//! - Players are indexed `1..=K`; player 1 is the reference whose strength is
//!   identically zero and never stored.
//! - Unordered pairs `(k, l)` with `k < l` are ordered lexicographically; the
//!   resulting 0-based position is the pair's row index everywhere (sampling
//!   weights, comparison matrices, propensity vectors).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of unordered pairs among `players` players.
pub fn num_pairs(players: usize) -> usize {
    players * (players - 1) / 2
}

/// Row index of pair `(k, l)`, `1 <= k < l <= players`, in lexicographic
/// order. Inverse of [`pair_at`].
pub fn pair_index(players: usize, k: usize, l: usize) -> Result<usize> {
    if k == 0 || l == 0 || k >= l || l > players {
        return Err(Error::InvalidPair { k, l, players });
    }
    // pairs (1,2)..(1,K) come first, then (2,3)..(2,K), ...
    let before_k = (k - 1) * players - k * (k - 1) / 2;
    Ok(before_k + (l - k) - 1)
}

/// Pair `(k, l)` at row `index` in lexicographic order. Inverse of
/// [`pair_index`].
pub fn pair_at(players: usize, index: usize) -> Result<(usize, usize)> {
    if index >= num_pairs(players) {
        return Err(Error::InvalidPair { k: 0, l: 0, players });
    }
    let mut j = index;
    for k in 1..players {
        let row = players - k; // pairs starting at k
        if j < row {
            return Ok((k, k + 1 + j));
        }
        j -= row;
    }
    unreachable!("index checked against num_pairs");
}

/// The player set, the canonical pair ordering and the target sampling
/// weights used to define the estimands.
///
/// The weights play the role of the pair-sampling distribution under the
/// target: they need not sum to one (only ratios matter), must be
/// non-negative, and the graph over players induced by strictly positive
/// weights must be connected so that the projected strengths are determined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseScheme {
    players: usize,
    /// One weight per pair in canonical order.
    rho: Vec<f64>,
}

impl PairwiseScheme {
    /// Equal weight on every pair.
    pub fn uniform(players: usize) -> Result<Self> {
        if players < 2 {
            return Err(Error::Config(format!(
                "need at least 2 players, got {players}"
            )));
        }
        let p = num_pairs(players);
        Self::new(players, vec![1.0 / p as f64; p])
    }

    /// Scheme with explicit per-pair weights in canonical order.
    pub fn new(players: usize, rho: Vec<f64>) -> Result<Self> {
        if players < 2 {
            return Err(Error::Config(format!(
                "need at least 2 players, got {players}"
            )));
        }
        if rho.len() != num_pairs(players) {
            return Err(Error::Dimension(format!(
                "expected {} pair weights, got {}",
                num_pairs(players),
                rho.len()
            )));
        }
        if rho.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "pair weights must be finite and non-negative".into(),
            ));
        }
        let scheme = PairwiseScheme { players, rho };
        // Every player must be comparable and the positive-weight graph
        // connected; otherwise the strengths are not determined.
        for k in 1..=players {
            let total: f64 = (1..=players)
                .filter(|&l| l != k)
                .map(|l| scheme.rho_between(k, l))
                .sum();
            if total <= 0.0 {
                return Err(Error::Disconnected(format!(
                    "player {k} has zero total weight under the scheme"
                )));
            }
        }
        if !connected(players, |k, l| scheme.rho_between(k, l) > 0.0) {
            return Err(Error::Disconnected(
                "positive-weight pairs do not connect all players".into(),
            ));
        }
        Ok(scheme)
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn num_pairs(&self) -> usize {
        self.rho.len()
    }

    /// Weight of the unordered pair containing `k` and `l` (symmetric).
    pub fn rho_between(&self, k: usize, l: usize) -> f64 {
        let (a, b) = if k < l { (k, l) } else { (l, k) };
        self.rho[pair_index(self.players, a, b).expect("valid pair")]
    }

    /// Weights in canonical pair order.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

/// Connectivity of the graph on `1..=players` with an edge wherever
/// `edge(k, l)` holds; breadth-first search from player 1.
fn connected(players: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; players + 1];
    let mut stack = vec![1usize];
    seen[1] = true;
    while let Some(k) = stack.pop() {
        for l in 1..=players {
            if l != k && !seen[l] && edge(k, l) {
                seen[l] = true;
                stack.push(l);
            }
        }
    }
    seen[1..=players].iter().all(|&s| s)
}

/// One labeled comparison: covariates, the pair that was compared (canonical
/// orientation, smaller index first) and the outcome.
///
/// `y = 1` means the smaller-index player won, `y = 0` the larger-index
/// player; fractional outcomes in `[0, 1]` are allowed so ties can enter as a
/// half win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub x: Vec<f64>,
    pub pair: (usize, usize),
    pub y: f64,
}

impl ComparisonRecord {
    pub fn new(x: Vec<f64>, pair: (usize, usize), y: f64) -> Self {
        ComparisonRecord { x, pair, y }
    }
}

/// Labeled comparisons plus, in data-fusion mode, unlabeled covariate draws
/// from the target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDataset {
    labeled: Vec<ComparisonRecord>,
    unlabeled: Vec<Vec<f64>>,
    dim: usize,
}

impl ComparisonDataset {
    pub fn new(players: usize, labeled: Vec<ComparisonRecord>) -> Result<Self> {
        Self::with_unlabeled(players, labeled, Vec::new())
    }

    pub fn with_unlabeled(
        players: usize,
        labeled: Vec<ComparisonRecord>,
        unlabeled: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Data("dataset has no labeled records".into()));
        }
        let dim = labeled[0].x.len();
        for (i, r) in labeled.iter().enumerate() {
            let (k, l) = r.pair;
            if k == 0 || l == 0 || k >= l || l > players {
                return Err(Error::InvalidPair { k, l, players });
            }
            if r.x.len() != dim {
                return Err(Error::Dimension(format!(
                    "labeled record {i} has {} covariates, expected {dim}",
                    r.x.len()
                )));
            }
            if !r.y.is_finite() || !(0.0..=1.0).contains(&r.y) {
                return Err(Error::Data(format!(
                    "labeled record {i} has outcome {} outside [0, 1]",
                    r.y
                )));
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("covariate vector"));
            }
        }
        for (i, x) in unlabeled.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::Dimension(format!(
                    "unlabeled record {i} has {} covariates, expected {dim}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("covariate vector"));
            }
        }
        Ok(ComparisonDataset { labeled, unlabeled, dim })
    }

    pub fn labeled(&self) -> &[ComparisonRecord] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[Vec<f64>] {
        &self.unlabeled
    }

    /// True when an unlabeled target block is present.
    pub fn is_fusion(&self) -> bool {
        !self.unlabeled.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Labeled sample size n.
    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    /// Unlabeled sample size m.
    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    /// N = n + m.
    pub fn n_total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Covariates of record `i` in the combined ordering: labeled records
    /// first, then unlabeled.
    pub fn x_at(&self, i: usize) -> &[f64] {
        if i < self.labeled.len() {
            &self.labeled[i].x
        } else {
            &self.unlabeled[i - self.labeled.len()]
        }
    }

    /// Distinct pairs appearing in the labeled data, in canonical order.
    pub fn observed_pairs(&self, players: usize) -> Vec<(usize, usize)> {
        let mut seen = vec![false; num_pairs(players)];
        for r in &self.labeled {
            seen[pair_index(players, r.pair.0, r.pair.1).expect("validated")] = true;
        }
        (0..seen.len())
            .filter(|&j| seen[j])
            .map(|j| pair_at(players, j).expect("in range"))
            .collect()
    }
}

/// Strengths of players `2..=K` relative to the reference player 1, whose
/// strength is identically zero and is not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthVector {
    theta: Vec<f64>,
}

impl StrengthVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("strength vector"));
        }
        Ok(StrengthVector { theta })
    }

    pub fn zeros(players: usize) -> Self {
        StrengthVector { theta: vec![0.0; players - 1] }
    }

    pub fn players(&self) -> usize {
        self.theta.len() + 1
    }

    /// Strength of `player`; zero for the reference player 1.
    pub fn strength(&self, player: usize) -> f64 {
        if player == 1 {
            0.0
        } else {
            self.theta[player - 2]
        }
    }

    /// The stored entries for players `2..=K`.
    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }
}

/// All pairwise win probabilities at a point, stored as the concatenation of
/// per-player blocks: block k (for k = 2..=K) holds `m_{kl}` for every
/// `l != k` in increasing order of l. Entries satisfy `m_{kl} + m_{lk} = 1`
/// exactly because both slots are filled from the same free value.
///
/// Entries for pairs that were never observed may be NaN when built through
/// [`WinProbVector::from_partial`]; consumers must skip such pairs (they
/// always carry zero weight).
#[derive(Debug, Clone, PartialEq)]
pub struct WinProbVector {
    players: usize,
    vals: Vec<f64>,
}

impl WinProbVector {
    /// Build from the K(K-1)/2 free values `m_{kl}`, `k < l`, in canonical
    /// pair order. The complementary slots are filled as `1 - m_{kl}`.
    pub fn from_free(players: usize, free: &[f64]) -> Result<Self> {
        if free.len() != num_pairs(players) {
            return Err(Error::Dimension(format!(
                "expected {} free win probabilities, got {}",
                num_pairs(players),
                free.len()
            )));
        }
        if free.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("win probabilities"));
        }
        if free.iter().any(|v| *v <= 0.0 || *v >= 1.0) {
            return Err(Error::Data(
                "win probabilities must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(Self::fill(players, free))
    }

    /// Build from per-pair values where unobserved pairs are absent. Absent
    /// slots hold NaN and must only be touched under zero weight.
    pub fn from_partial(players: usize, free: &[Option<f64>]) -> Result<Self> {
        if free.len() != num_pairs(players) {
            return Err(Error::Dimension(format!(
                "expected {} per-pair values, got {}",
                num_pairs(players),
                free.len()
            )));
        }
        let vals: Vec<f64> = free.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        for v in &vals {
            if !v.is_nan() && !(v.is_finite() && *v > 0.0 && *v < 1.0) {
                return Err(Error::Data(
                    "present win probabilities must lie strictly inside (0, 1)".into(),
                ));
            }
        }
        Ok(Self::fill(players, &vals))
    }

    /// Raw layout constructor that does not enforce anti-symmetry; used by
    /// tests that need to perturb a single slot.
    #[cfg(test)]
    pub(crate) fn from_raw_slots(players: usize, vals: Vec<f64>) -> Self {
        assert_eq!(vals.len(), (players - 1) * (players - 1));
        WinProbVector { players, vals }
    }

    fn fill(players: usize, free: &[f64]) -> Self {
        let dim = (players - 1) * (players - 1);
        let mut vals = vec![f64::NAN; dim];
        let mut out = WinProbVector { players, vals: vec![0.0; dim] };
        for (j, &v) in free.iter().enumerate() {
            let (k, l) = pair_at(players, j).expect("in range");
            // slot (l, k) always exists since l >= 2; slot (k, l) only for k >= 2
            vals[out.slot(l, k)] = 1.0 - v;
            if k >= 2 {
                vals[out.slot(k, l)] = v;
            }
        }
        out.vals = vals;
        out
    }

    pub fn players(&self) -> usize {
        self.players
    }

    /// Flat position of `m_{kl}` within the stored layout (`k >= 2`,
    /// `l != k`).
    pub fn slot(&self, k: usize, l: usize) -> usize {
        debug_assert!(k >= 2 && k <= self.players && l >= 1 && l <= self.players && l != k);
        let block = k - 2;
        let pos = if l < k { l - 1 } else { l - 2 };
        block * (self.players - 1) + pos
    }

    /// `m_{kl}` for any `k != l` (either orientation). NaN for absent pairs.
    pub fn get(&self, k: usize, l: usize) -> f64 {
        if k >= 2 {
            self.vals[self.slot(k, l)]
        } else {
            1.0 - self.vals[self.slot(l, k)]
        }
    }

    /// The stored `(K-1)^2` layout.
    pub fn as_slice(&self) -> &[f64] {
        &self.vals
    }

    /// Free values `m_{kl}`, `k < l`, in canonical pair order.
    pub fn free_values(&self) -> Vec<f64> {
        (0..num_pairs(self.players))
            .map(|j| {
                let (k, l) = pair_at(self.players, j).expect("in range");
                self.get(k, l)
            })
            .collect()
    }
}

/// Which functional of the comparison distribution is being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    /// Average of the pointwise projected strengths over the target
    /// covariate distribution.
    Phi,
    /// Strengths solving the marginal estimating equations at the averaged
    /// win probabilities.
    Psi,
}

impl std::fmt::Display for EstimandKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimandKind::Phi => write!(f, "phi"),
            EstimandKind::Psi => write!(f, "psi"),
        }
    }
}

/// Estimation regime: which influence function drives the one-step
/// correction and which data layout it expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Labeled data only; all pairs observed.
    NoShift,
    /// Labeled plus unlabeled target covariates.
    Fusion,
    /// Correctly specified conditional model, correction through a fixed
    /// comparison matrix.
    CondBtIf,
    /// Correctly specified conditional model, efficient correction through
    /// the weighted-Laplacian solve over all observed pairs.
    CondBtEif,
    /// Density ratio supplied by the caller up to scale.
    KnownRatio,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::NoShift => "no_shift",
            Regime::Fusion => "fusion",
            Regime::CondBtIf => "cond_bt_if",
            Regime::CondBtEif => "cond_bt_eif",
            Regime::KnownRatio => "known_ratio",
        };
        write!(f, "{s}")
    }
}

/// Solver and bookkeeping details carried alongside every estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Total Newton iterations spent in pointwise and marginal solves.
    pub solver_iterations: u64,
    /// Predictions clipped to the probability floor, per nuisance.
    pub clipped_outcome: u64,
    pub clipped_propensity: u64,
    pub clipped_ratio: u64,
    /// Seed used for fold assignment.
    pub fold_seed: u64,
    pub folds: usize,
    /// Plug-in estimate before the one-step correction (players 2..=K).
    pub plugin: Vec<f64>,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
}

/// Point estimates with their EIF-based covariance and Wald intervals.
///
/// `covariance` is the estimated asymptotic covariance already divided by
/// the relevant sample size, so `covariance[j][j].sqrt()` is the standard
/// error of `point[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: EstimandKind,
    pub regime: Regime,
    /// Estimates for players 2..=K (player 1 is the zero reference).
    pub point: StrengthVector,
    /// Row-major (K-1) x (K-1).
    pub covariance: Vec<Vec<f64>>,
    /// Per-component (lower, upper) Wald interval at `ci_level`.
    pub wald: Vec<(f64, f64)>,
    pub ci_level: f64,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    /// Standard error of component `j` (player `j + 2`).
    pub fn std_err(&self, j: usize) -> f64 {
        self.covariance[j][j].max(0.0).sqrt()
    }
}
