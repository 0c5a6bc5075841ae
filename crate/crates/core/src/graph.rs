//! Comparison-matrix algebra: signed incidence encodings of compared pairs,
//! the connectivity test that decides identifiability, and the weighted
//! Laplacian solve behind the efficient conditional-model correction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{num_pairs, pair_at, WinProbVector};

/// Signed incidence encoding of a set of compared pairs over `K` players.
///
/// Row j for pair `(k_j, l_j)` with `k_j < l_j` has +1 in the column of
/// player `k_j` and -1 in the column of player `l_j`, where the column of
/// player 1 is omitted; rows comparing player 1 therefore carry a single -1.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    players: usize,
    rows: Vec<(usize, usize)>,
}

impl ComparisonMatrix {
    /// Encode the given pairs. Pairs must be distinct and valid for the
    /// player count.
    pub fn new(players: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if players < 2 {
            return Err(Error::Config(format!(
                "need at least 2 players, got {players}"
            )));
        }
        if pairs.is_empty() {
            return Err(Error::Data("comparison matrix needs at least one pair".into()));
        }
        let mut seen = vec![false; num_pairs(players)];
        for &(k, l) in &pairs {
            if k == 0 || l == 0 || k >= l || l > players {
                return Err(Error::InvalidPair { k, l, players });
            }
            let j = crate::types::pair_index(players, k, l)?;
            if seen[j] {
                return Err(Error::Data(format!("duplicate pair ({k}, {l})")));
            }
            seen[j] = true;
        }
        Ok(ComparisonMatrix { players, rows: pairs })
    }

    /// All `K(K-1)/2` pairs in canonical order.
    pub fn full(players: usize) -> Self {
        let pairs = (0..num_pairs(players))
            .map(|j| pair_at(players, j).expect("in range"))
            .collect();
        ComparisonMatrix { players, rows: pairs }
    }

    pub fn players(&self) -> usize {
        self.players
    }

    /// Number of encoded pairs J.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.rows
    }

    /// Dense J x (K-1) matrix view.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.rows.len(), self.players - 1);
        for (j, &(k, l)) in self.rows.iter().enumerate() {
            if k >= 2 {
                g[(j, k - 2)] = 1.0;
            }
            g[(j, l - 2)] = -1.0;
        }
        g
    }

    /// Identifiability of the strengths from these pairs: true exactly when
    /// the matrix has full column rank, tested as connectivity of the
    /// comparison graph via union-find.
    pub fn is_identifiable(&self) -> bool {
        let mut uf = UnionFind::new(self.players + 1);
        for &(k, l) in &self.rows {
            uf.union(k, l);
        }
        let root = uf.find(1);
        (2..=self.players).all(|k| uf.find(k) == root)
    }

    /// Apply the Moore-Penrose pseudoinverse to a length-J vector through the
    /// normal equations: `(G^T G)^{-1} G^T b`. When J = K-1 and the matrix is
    /// invertible this is the exact inverse applied to `b`.
    pub fn pseudoinverse_apply(&self, b: &[f64]) -> Result<DVector<f64>> {
        if b.len() != self.rows.len() {
            return Err(Error::Dimension(format!(
                "expected {} entries, got {}",
                self.rows.len(),
                b.len()
            )));
        }
        let g = self.to_matrix();
        let gtg = g.transpose() * &g;
        let gtb = g.transpose() * DVector::from_column_slice(b);
        match gtg.cholesky() {
            Some(ch) => Ok(ch.solve(&gtb)),
            None => Err(Error::RankDeficient(
                "the compared pairs do not connect all players".into(),
            )),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// The reduced weighted Laplacian `G^T W G` over the full pair set, with the
/// per-pair weight `m (1 - m) pi`. Zero-weight rows contribute nothing, so
/// unobserved pairs drop out automatically.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLaplacian {
    players: usize,
    /// Per-pair weights in canonical order.
    weights: Vec<f64>,
    matrix: DMatrix<f64>,
}

impl WeightedLaplacian {
    /// Assemble from win probabilities and per-pair propensities at a point.
    /// `pi` is indexed in canonical pair order; entries may be zero.
    pub fn new(m: &WinProbVector, pi: &[f64]) -> Result<Self> {
        let players = m.players();
        if pi.len() != num_pairs(players) {
            return Err(Error::Dimension(format!(
                "expected {} propensities, got {}",
                num_pairs(players),
                pi.len()
            )));
        }
        if pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data("propensities must be finite and non-negative".into()));
        }
        let mut weights = vec![0.0; pi.len()];
        let mut lap = DMatrix::zeros(players - 1, players - 1);
        for (j, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (k, l) = pair_at(players, j).expect("in range");
            let mkl = m.get(k, l);
            let w = mkl * (1.0 - mkl) * p;
            weights[j] = w;
            // rank-one update G_j^T w G_j for the incidence row of (k, l)
            if k >= 2 {
                lap[(k - 2, k - 2)] += w;
                lap[(k - 2, l - 2)] -= w;
                lap[(l - 2, k - 2)] -= w;
            }
            lap[(l - 2, l - 2)] += w;
        }
        Ok(WeightedLaplacian { players, weights, matrix: lap })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    /// The per-pair diagonal weights of `W`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The assembled (K-1) x (K-1) matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Solve `L x = b` through a symmetric positive definite factorization.
    /// Fails when the positive-weight pairs do not connect all players; the
    /// connectivity check is exact (weight > 0) rather than relying on the
    /// factorization pivots, which can round a singular system to a tiny
    /// positive one.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.players - 1 {
            return Err(Error::Dimension(format!(
                "expected length {}, got {}",
                self.players - 1,
                b.len()
            )));
        }
        let mut uf = UnionFind::new(self.players + 1);
        for (j, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                let (k, l) = pair_at(self.players, j).expect("in range");
                uf.union(k, l);
            }
        }
        let root = uf.find(1);
        if !(2..=self.players).all(|k| uf.find(k) == root) {
            return Err(Error::Disconnected(
                "weighted comparison graph is disconnected at this point".into(),
            ));
        }
        match self.matrix.clone().cholesky() {
            Some(ch) => Ok(ch.solve(b)),
            None => Err(Error::Disconnected(
                "weighted comparison graph is disconnected at this point".into(),
            )),
        }
    }
}
