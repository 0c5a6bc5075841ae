//! Synthetic data generators, quadrature-based true values, and the
//! replication harness computing scaled bias, coverage, and interval width.
//!
//! Two fixed designs are provided. Setting I has three players whose win
//! probabilities do not follow any sigmoid-difference model, a
//! two-dimensional covariate, and a covariate shift between the labeled and
//! target populations. Setting II has five players whose outcomes do follow
//! the conditional model, with only five of the ten pairs ever compared.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    cond_bt_eif_phi, cond_bt_if_phi, cond_bt_psi, known_ratio_phi, one_step_phi,
    one_step_phi_fusion, one_step_psi, one_step_psi_fusion, CondPsiRoute, Estimate,
};
use crate::graph::ComparisonMatrix;
use crate::numeric::{normal_expectation, uniform_expectation};
use crate::nuisance::{fit_nuisances, LearnerSpec, NuisanceBundle, NuisanceSpec};
use crate::projection::{sigmoid, solve_projection, SolverOptions};
use crate::types::{
    num_pairs, pair_at, ComparisonDataset, ComparisonRecord, PairwiseScheme, WinProbVector,
};

/// Which synthetic design to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingId {
    I,
    II,
}

impl SettingId {
    pub fn players(self) -> usize {
        match self {
            SettingId::I => 3,
            SettingId::II => 5,
        }
    }
}

impl std::fmt::Display for SettingId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SettingId::I => write!(f, "I"),
            SettingId::II => write!(f, "II"),
        }
    }
}

/// Pairs ever compared in Setting II, each drawn with probability 0.2.
pub const SETTING2_PAIRS: [(usize, usize); 5] = [(1, 2), (2, 3), (2, 4), (2, 5), (3, 5)];

/// Comparison matrix used by the fixed-matrix estimators in Setting II: all
/// observed pairs except (3, 5).
pub fn setting2_gamma() -> ComparisonMatrix {
    ComparisonMatrix::new(5, vec![(1, 2), (2, 3), (2, 4), (2, 5)]).expect("valid pairs")
}

/// True win probability of the smaller-index player in Setting I.
pub fn setting1_winprob(x: &[f64], k: usize, l: usize) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    match (k, l) {
        (1, 2) => 0.5 + 0.2 * (1.5 * (x1 + x2)).sin(),
        (1, 3) => sigmoid(0.3 * x1 * (x2 - 1.0)),
        (2, 3) => sigmoid(0.2 * x1 * x1 - 0.5),
        _ => panic!("invalid pair ({k}, {l}) for 3 players"),
    }
}

/// Player strengths in Setting II (player 1 is the zero reference).
pub fn setting2_theta(x: &[f64]) -> [f64; 5] {
    let (x1, x2) = (x[0], x[1]);
    [
        0.0,
        x1 * x2,
        x1 * x1 + x2,
        0.5 * x1 + x2,
        (1.5 * (x1 + 0.5 * x2)).sin(),
    ]
}

/// True win probability of the smaller-index player in Setting II.
pub fn setting2_winprob(x: &[f64], k: usize, l: usize) -> f64 {
    let th = setting2_theta(x);
    sigmoid(th[k - 1] - th[l - 1])
}

/// True win probability for either setting.
pub fn true_winprob(setting: SettingId, x: &[f64], k: usize, l: usize) -> f64 {
    match setting {
        SettingId::I => setting1_winprob(x, k, l),
        SettingId::II => setting2_winprob(x, k, l),
    }
}

/// True pair propensity in the labeled data.
pub fn true_propensity(setting: SettingId, _x: &[f64], k: usize, l: usize) -> f64 {
    match setting {
        SettingId::I => 1.0 / 3.0,
        SettingId::II => {
            if SETTING2_PAIRS.contains(&(k, l)) {
                0.2
            } else {
                0.0
            }
        }
    }
}

/// True density ratio of the target covariate law to the labeled one; both
/// settings share the covariate design. Zero outside the target support.
pub fn true_density_ratio(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let unif = if (0.0..=0.5).contains(&x1) { 2.0 } else { 0.0 };
    let sd = 0.5;
    let normal =
        (-x1 * x1 / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let bern = if x2 == 1.0 { 0.4 / 0.5 } else { 0.6 / 0.5 };
    unif / normal * bern
}

/// The estimand-defining sampling scheme: uniform over all pairs.
pub fn estimand_scheme(setting: SettingId) -> PairwiseScheme {
    PairwiseScheme::uniform(setting.players()).expect("valid")
}

fn draw_labeled_covariates(rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> Vec<f64> {
    let x1 = normal.sample(rng);
    let x2 = f64::from(rng.random::<f64>() < 0.5);
    vec![x1, x2]
}

fn draw_target_covariates(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let x1 = 0.5 * rng.random::<f64>();
    let x2 = f64::from(rng.random::<f64>() < 0.4);
    vec![x1, x2]
}

/// Draw a labeled sample of size `n` and an unlabeled target sample of size
/// `m` from the chosen setting.
pub fn generate(setting: SettingId, n: usize, m: usize, seed: u64) -> ComparisonDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).expect("valid parameters");
    let players = setting.players();
    let pairs: Vec<(usize, usize)> = match setting {
        SettingId::I => (0..num_pairs(3)).map(|j| pair_at(3, j).unwrap()).collect(),
        SettingId::II => SETTING2_PAIRS.to_vec(),
    };
    let mut labeled = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw_labeled_covariates(&mut rng, &normal);
        let pair = pairs[rng.random_range(0..pairs.len())];
        let p = true_winprob(setting, &x, pair.0, pair.1);
        let y = f64::from(rng.random::<f64>() < p);
        labeled.push(ComparisonRecord::new(x, pair, y));
    }
    let unlabeled: Vec<Vec<f64>> = (0..m).map(|_| draw_target_covariates(&mut rng)).collect();
    ComparisonDataset::with_unlabeled(players, labeled, unlabeled)
        .expect("generated data is valid")
}

/// Which covariate law to integrate over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateLaw {
    /// The labeled-data law.
    Labeled,
    /// The unlabeled target law.
    Target,
}

/// Quadrature nodes and weights over the two-dimensional covariate law.
fn covariate_quadrature(law: CovariateLaw, nodes: usize) -> Vec<(Vec<f64>, f64)> {
    let (x1_nodes, x1_weights, p2) = match law {
        CovariateLaw::Labeled => {
            let (n, w) = normal_expectation(nodes, 0.0, 0.5);
            (n, w, 0.5)
        }
        CovariateLaw::Target => {
            let (n, w) = uniform_expectation(nodes, 0.0, 0.5);
            (n, w, 0.4)
        }
    };
    let mut out = Vec::with_capacity(2 * x1_nodes.len());
    for (x2, w2) in [(0.0, 1.0 - p2), (1.0, p2)] {
        for (x1, w1) in x1_nodes.iter().zip(&x1_weights) {
            out.push((vec![*x1, x2], w1 * w2));
        }
    }
    out
}

/// True values of both estimands by numerical integration over the chosen
/// covariate law, returned with the reference player's zero first (length
/// K). The target law is what the published values refer to.
pub fn true_values_under(
    setting: SettingId,
    law: CovariateLaw,
    nodes: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let players = setting.players();
    let scheme = estimand_scheme(setting);
    let opts = SolverOptions { tol: 1e-12, max_iter: 200, damping: true };
    let quad = covariate_quadrature(law, nodes);

    let mut phi = vec![0.0; players - 1];
    let mut q_marg = vec![0.0; num_pairs(players)];
    for (x, w) in &quad {
        let free: Vec<f64> = (0..num_pairs(players))
            .map(|j| {
                let (k, l) = pair_at(players, j).unwrap();
                true_winprob(setting, x, k, l)
            })
            .collect();
        let m = WinProbVector::from_free(players, &free)?;
        let (theta, _) = solve_projection(&m, scheme.rho(), &opts)?;
        for (p, t) in phi.iter_mut().zip(theta.as_slice()) {
            *p += w * t;
        }
        for (qm, f) in q_marg.iter_mut().zip(&free) {
            *qm += w * f;
        }
    }
    let m_marg = WinProbVector::from_free(players, &q_marg)?;
    let (psi, _) = solve_projection(&m_marg, scheme.rho(), &opts)?;

    let mut phi_full = vec![0.0];
    phi_full.extend(phi);
    let mut psi_full = vec![0.0];
    psi_full.extend(psi.as_slice());
    Ok((phi_full, psi_full))
}

/// True values under the target covariate law with the default quadrature
/// order.
pub fn true_values(setting: SettingId) -> Result<(Vec<f64>, Vec<f64>)> {
    true_values_under(setting, CovariateLaw::Target, 64)
}

/// Estimator arms the replication harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorArm {
    PhiNoShift,
    PsiNoShift,
    PhiFusion,
    PsiFusion,
    PhiKnownRatio,
    CondIfPhiFusion,
    CondEifPhiFusion,
    CondIfPsiFusion,
    CondEifPsiFusion,
}

impl EstimatorArm {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorArm::PhiNoShift => "phi_no_shift",
            EstimatorArm::PsiNoShift => "psi_no_shift",
            EstimatorArm::PhiFusion => "phi_fusion",
            EstimatorArm::PsiFusion => "psi_fusion",
            EstimatorArm::PhiKnownRatio => "phi_known_ratio",
            EstimatorArm::CondIfPhiFusion => "cond_if_phi_fusion",
            EstimatorArm::CondEifPhiFusion => "cond_eif_phi_fusion",
            EstimatorArm::CondIfPsiFusion => "cond_if_psi_fusion",
            EstimatorArm::CondEifPsiFusion => "cond_eif_psi_fusion",
        }
    }

    /// Which covariate law the arm's estimand averages over.
    fn law(self) -> CovariateLaw {
        match self {
            EstimatorArm::PhiNoShift | EstimatorArm::PsiNoShift => CovariateLaw::Labeled,
            _ => CovariateLaw::Target,
        }
    }

    fn is_phi(self) -> bool {
        !matches!(
            self,
            EstimatorArm::PsiNoShift
                | EstimatorArm::PsiFusion
                | EstimatorArm::CondIfPsiFusion
                | EstimatorArm::CondEifPsiFusion
        )
    }
}

/// How the nuisances are estimated in a harness run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    /// Cross-fitted cubic-basis learners.
    Flexible,
    /// Deliberately misspecified working models: main effects plus
    /// interaction for the outcome and ratio (plus a quadratic in the first
    /// covariate for the outcome), main effects only for the propensity.
    Working,
    /// Closed-form true nuisance functions.
    Oracle,
}

impl NuisanceMode {
    pub fn name(self) -> &'static str {
        match self {
            NuisanceMode::Flexible => "flexible",
            NuisanceMode::Working => "working",
            NuisanceMode::Oracle => "oracle",
        }
    }
}

/// One harness configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSpec {
    pub setting: SettingId,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub nuisance: NuisanceMode,
    pub arms: Vec<EstimatorArm>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

fn default_folds() -> usize {
    5
}

fn default_ci_level() -> f64 {
    0.95
}

/// One output row of the harness: an (arm, estimator kind, component) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub setting: String,
    pub arm: String,
    pub nuisance: String,
    /// "plugin" or "onestep".
    pub estimator: String,
    /// Player index (2..=K).
    pub player: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub sd_estimate: f64,
    /// sqrt(n) times the absolute mean bias.
    pub scaled_abs_bias: f64,
    /// Wald coverage of the truth; absent for plug-in rows.
    pub coverage: Option<f64>,
    /// Mean interval width; absent for plug-in rows.
    pub avg_ci_width: Option<f64>,
    pub replications: usize,
    pub failures: usize,
}

/// Full harness output: metrics rows plus per-replication estimates and
/// intervals by arm, for paired comparisons across arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutput {
    pub rows: Vec<MetricsRow>,
    pub per_replication: Vec<ArmReplications>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReplications {
    pub arm: String,
    /// `[replication][component]` one-step point estimates.
    pub points: Vec<Vec<f64>>,
    /// `[replication][component]` plug-in estimates.
    pub plugins: Vec<Vec<f64>>,
    /// `[replication][component]` Wald intervals.
    pub intervals: Vec<Vec<(f64, f64)>>,
}

/// Counter-mode seed derivation: two mixing rounds over the master seed and
/// the replication index, so replications can run in parallel with
/// independent, reproducible streams.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    let mut z = master.wrapping_add(rep.wrapping_add(1).wrapping_mul(0x9e3779b97f4a7c15));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

fn working_outcome_spec() -> LearnerSpec {
    // main effects, the pairwise interaction, and a quadratic in x1
    LearnerSpec::LogisticMonomials {
        monomials: vec![vec![(0, 1)], vec![(1, 1)], vec![(0, 1), (1, 1)], vec![(0, 2)]],
    }
}

fn working_ratio_spec() -> LearnerSpec {
    LearnerSpec::LogisticMonomials {
        monomials: vec![vec![(0, 1)], vec![(1, 1)], vec![(0, 1), (1, 1)]],
    }
}

fn working_propensity_spec() -> LearnerSpec {
    LearnerSpec::LogisticMonomials { monomials: vec![vec![(0, 1)], vec![(1, 1)]] }
}

/// Nuisance configuration for a harness mode.
pub fn nuisance_spec_for(mode: NuisanceMode, folds: usize) -> NuisanceSpec {
    match mode {
        NuisanceMode::Flexible => {
            let mut spec = NuisanceSpec::flexible();
            spec.folds = folds;
            spec
        }
        NuisanceMode::Working => NuisanceSpec {
            outcome: working_outcome_spec(),
            propensity: working_propensity_spec(),
            ratio: Some(working_ratio_spec()),
            folds,
            clip_eps: 0.01,
            ratio_cap: 20.0,
        },
        NuisanceMode::Oracle => NuisanceSpec::flexible(),
    }
}

/// Build the nuisance bundle for one replication.
pub fn bundle_for(
    setting: SettingId,
    dataset: &ComparisonDataset,
    mode: NuisanceMode,
    folds: usize,
    seed: u64,
) -> Result<NuisanceBundle> {
    let players = setting.players();
    match mode {
        NuisanceMode::Oracle => NuisanceBundle::from_functions(
            players,
            dataset,
            |x, k, l| {
                if true_propensity(setting, x, k, l) > 0.0 {
                    Some(true_winprob(setting, x, k, l))
                } else {
                    None
                }
            },
            |x, k, l| true_propensity(setting, x, k, l),
            Some(&true_density_ratio),
            1e-6,
        ),
        _ => {
            let spec = nuisance_spec_for(mode, folds);
            fit_nuisances(players, dataset, &spec, seed)
        }
    }
}

/// Run one estimator arm on a prepared replication.
pub fn run_arm(
    arm: EstimatorArm,
    setting: SettingId,
    dataset: &ComparisonDataset,
    bundle: &NuisanceBundle,
    ci_level: f64,
) -> Result<Estimate> {
    let scheme = estimand_scheme(setting);
    let opts = SolverOptions::default();
    match arm {
        EstimatorArm::PhiNoShift => one_step_phi(&scheme, dataset, bundle, &opts, ci_level),
        EstimatorArm::PsiNoShift => one_step_psi(&scheme, dataset, bundle, &opts, ci_level),
        EstimatorArm::PhiFusion => one_step_phi_fusion(&scheme, dataset, bundle, &opts, ci_level),
        EstimatorArm::PsiFusion => one_step_psi_fusion(&scheme, dataset, bundle, &opts, ci_level),
        EstimatorArm::PhiKnownRatio => {
            let w: Vec<f64> =
                dataset.labeled().iter().map(|r| true_density_ratio(&r.x)).collect();
            known_ratio_phi(&scheme, dataset, bundle, &w, &opts, ci_level)
        }
        EstimatorArm::CondIfPhiFusion => {
            let gamma = cond_gamma(setting)?;
            cond_bt_if_phi(dataset, bundle, &gamma, true, ci_level)
        }
        EstimatorArm::CondEifPhiFusion => {
            cond_bt_eif_phi(dataset, bundle, setting.players(), &opts, true, ci_level)
        }
        EstimatorArm::CondIfPsiFusion => {
            let gamma = cond_gamma(setting)?;
            cond_bt_psi(&scheme, dataset, bundle, &CondPsiRoute::Fixed(gamma), &opts, true, ci_level)
        }
        EstimatorArm::CondEifPsiFusion => {
            cond_bt_psi(&scheme, dataset, bundle, &CondPsiRoute::Efficient, &opts, true, ci_level)
        }
    }
}

fn cond_gamma(setting: SettingId) -> Result<ComparisonMatrix> {
    match setting {
        SettingId::II => Ok(setting2_gamma()),
        SettingId::I => ComparisonMatrix::new(3, vec![(1, 2), (1, 3)]),
    }
}

/// Run independent replications of the configured arms and reduce to the
/// metrics table. Replications run in parallel but are reduced in
/// replication order, so the output is deterministic under the master seed.
/// Per-replication failures are recorded, not fatal.
pub fn run_replications(spec: &SettingSpec, reps: usize) -> Result<ReplicationOutput> {
    if reps == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let players = spec.setting.players();
    let dim = players - 1;
    type RepOutcome = std::result::Result<(Vec<f64>, Vec<f64>, Vec<(f64, f64)>), String>;
    let results: Vec<Vec<RepOutcome>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(spec.seed, rep as u64);
            let dataset = generate(spec.setting, spec.n, spec.m, seed);
            let bundle = match bundle_for(
                spec.setting,
                &dataset,
                spec.nuisance,
                spec.folds,
                replication_seed(seed, 1),
            ) {
                Ok(b) => b,
                Err(e) => {
                    return spec
                        .arms
                        .iter()
                        .map(|_| Err(format!("replication {rep}: {e}")))
                        .collect()
                }
            };
            spec.arms
                .iter()
                .map(|&arm| {
                    run_arm(arm, spec.setting, &dataset, &bundle, spec.ci_level)
                        .map(|est| {
                            (
                                est.report.point.as_slice().to_vec(),
                                est.plugin.clone(),
                                est.report.wald.clone(),
                            )
                        })
                        .map_err(|e| format!("replication {rep} arm {}: {e}", arm.name()))
                })
                .collect()
        })
        .collect();

    let mut failures = Vec::new();
    let mut per_replication: Vec<ArmReplications> = spec
        .arms
        .iter()
        .map(|a| ArmReplications {
            arm: a.name().to_string(),
            points: Vec::new(),
            plugins: Vec::new(),
            intervals: Vec::new(),
        })
        .collect();
    for rep_result in &results {
        for (a, arm_result) in rep_result.iter().enumerate() {
            match arm_result {
                Ok((point, plugin, wald)) => {
                    per_replication[a].points.push(point.clone());
                    per_replication[a].plugins.push(plugin.clone());
                    per_replication[a].intervals.push(wald.clone());
                }
                Err(e) => failures.push(e.clone()),
            }
        }
    }

    let mut rows = Vec::new();
    for (a, arm) in spec.arms.iter().enumerate() {
        let truth_full = true_values_under(spec.setting, arm.law(), 64)?;
        let truth = if arm.is_phi() { truth_full.0 } else { truth_full.1 };
        let arm_data = &per_replication[a];
        let ok = arm_data.points.len();
        let failed = reps - ok;
        for j in 0..dim {
            let t = truth[j + 1];
            for (kind, series) in [("plugin", &arm_data.plugins), ("onestep", &arm_data.points)] {
                if ok == 0 {
                    continue;
                }
                let mean = series.iter().map(|p| p[j]).sum::<f64>() / ok as f64;
                let var = if ok > 1 {
                    series.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (ok - 1) as f64
                } else {
                    0.0
                };
                let (coverage, width) = if kind == "onestep" {
                    let covered = arm_data
                        .intervals
                        .iter()
                        .filter(|w| w[j].0 <= t && t <= w[j].1)
                        .count();
                    let width = arm_data
                        .intervals
                        .iter()
                        .map(|w| w[j].1 - w[j].0)
                        .sum::<f64>()
                        / ok as f64;
                    (Some(covered as f64 / ok as f64), Some(width))
                } else {
                    (None, None)
                };
                rows.push(MetricsRow {
                    setting: spec.setting.to_string(),
                    arm: arm.name().to_string(),
                    nuisance: spec.nuisance.name().to_string(),
                    estimator: kind.to_string(),
                    player: j + 2,
                    truth: t,
                    mean_estimate: mean,
                    sd_estimate: var.sqrt(),
                    scaled_abs_bias: (spec.n as f64).sqrt() * (mean - t).abs(),
                    coverage,
                    avg_ci_width: width,
                    replications: ok,
                    failures: failed,
                });
            }
        }
    }
    Ok(ReplicationOutput { rows, per_replication, failures })
}
