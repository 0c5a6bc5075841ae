//! Every one-step estimator is checked against an independently written
//! scalar-loop transliteration of its defining formula on small instances.
//! The oracle and the estimator share only the nuisance prediction tables;
//! linear solves, Newton iterations, and all bookkeeping are separate code.

mod common;

use common::*;

use btshift::estimators::{
    cond_bt_eif_phi, cond_bt_if_phi, cond_bt_psi, known_ratio_phi, one_step_phi,
    one_step_phi_fusion, one_step_psi, one_step_psi_fusion, CondPsiRoute,
};
use btshift::graph::ComparisonMatrix;
use btshift::nuisance::NuisanceBundle;
use btshift::projection::SolverOptions;
use btshift::simulation::{
    estimand_scheme, generate, setting2_gamma, true_density_ratio, true_propensity,
    true_winprob, SettingId, SETTING2_PAIRS,
};
use btshift::types::ComparisonDataset;

const TOL: f64 = 1e-10;

fn opts() -> SolverOptions {
    SolverOptions { tol: 1e-12, max_iter: 200, damping: true }
}

/// Closed-form nuisance bundle over a generated dataset: true win
/// probabilities and propensities, true density ratio.
fn oracle_bundle(setting: SettingId, dataset: &ComparisonDataset) -> NuisanceBundle {
    NuisanceBundle::from_functions(
        setting.players(),
        dataset,
        |x, k, l| {
            if true_propensity(setting, x, k, l) > 0.0 {
                Some(true_winprob(setting, x, k, l))
            } else {
                None
            }
        },
        |x, k, l| true_propensity(setting, x, k, l),
        Some(&|x: &[f64]| true_density_ratio(x).max(0.05)),
        1e-6,
    )
    .unwrap()
}

fn setting1_fixture(seed: u64) -> (ComparisonDataset, NuisanceBundle, Tables) {
    let dataset = generate(SettingId::I, 50, 50, seed);
    let bundle = oracle_bundle(SettingId::I, &dataset);
    let scheme = estimand_scheme(SettingId::I);
    let tables = tables_from(&dataset, &bundle, scheme.rho());
    (dataset, bundle, tables)
}

fn setting2_fixture(seed: u64) -> (ComparisonDataset, NuisanceBundle, Tables) {
    let dataset = generate(SettingId::II, 50, 50, seed);
    let bundle = oracle_bundle(SettingId::II, &dataset);
    let scheme = estimand_scheme(SettingId::II);
    let tables = tables_from(&dataset, &bundle, scheme.rho());
    (dataset, bundle, tables)
}

#[test]
fn phi_no_shift_matches_transliteration() {
    for seed in [1, 2, 3] {
        let (dataset, bundle, tables) = setting1_fixture(seed);
        let scheme = estimand_scheme(SettingId::I);
        let est = one_step_phi(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap();
        let oracle = oracle_phi_no_shift(&tables);
        let d = max_abs_diff(est.report.point.as_slice(), &oracle);
        assert!(d <= TOL, "seed {seed}: deviation {d}");
    }
}

#[test]
fn psi_no_shift_matches_transliteration() {
    for seed in [1, 2, 3] {
        let (dataset, bundle, tables) = setting1_fixture(seed);
        let scheme = estimand_scheme(SettingId::I);
        let est = one_step_psi(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap();
        let oracle = oracle_psi_no_shift(&tables);
        let d = max_abs_diff(est.report.point.as_slice(), &oracle);
        assert!(d <= TOL, "seed {seed}: deviation {d}");
    }
}

#[test]
fn phi_fusion_matches_transliteration() {
    for seed in [4, 5, 6] {
        let (dataset, bundle, tables) = setting1_fixture(seed);
        let scheme = estimand_scheme(SettingId::I);
        let est = one_step_phi_fusion(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap();
        let oracle = oracle_phi_fusion(&tables);
        let d = max_abs_diff(est.report.point.as_slice(), &oracle);
        assert!(d <= TOL, "seed {seed}: deviation {d}");
    }
}

#[test]
fn psi_fusion_matches_transliteration() {
    for seed in [4, 5, 6] {
        let (dataset, bundle, tables) = setting1_fixture(seed);
        let scheme = estimand_scheme(SettingId::I);
        let est = one_step_psi_fusion(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap();
        let oracle = oracle_psi_fusion(&tables);
        let d = max_abs_diff(est.report.point.as_slice(), &oracle);
        assert!(d <= TOL, "seed {seed}: deviation {d}");
    }
}

#[test]
fn known_ratio_matches_transliteration() {
    for seed in [7, 8] {
        let (dataset, bundle, tables) = setting1_fixture(seed);
        let scheme = estimand_scheme(SettingId::I);
        // strictly positive synthetic weights varying across records
        let w: Vec<f64> = dataset
            .labeled()
            .iter()
            .enumerate()
            .map(|(i, r)| 0.2 + (0.7 * r.x[0]).exp() + (i % 3) as f64 * 0.1)
            .collect();
        let est = known_ratio_phi(&scheme, &dataset, &bundle, &w, &opts(), 0.95).unwrap();
        let oracle = oracle_known_ratio_phi(&tables, &w);
        let d = max_abs_diff(est.report.point.as_slice(), &oracle);
        assert!(d <= TOL, "seed {seed}: deviation {d}");
    }
}

#[test]
fn cond_if_phi_matches_transliteration() {
    for seed in [9, 10] {
        let (dataset, bundle, tables) = setting2_fixture(seed);
        let gamma = setting2_gamma();
        for fusion in [false, true] {
            let est = cond_bt_if_phi(&dataset, &bundle, &gamma, fusion, 0.95).unwrap();
            let oracle = oracle_cond_if_phi(&tables, gamma.pairs(), fusion);
            let d = max_abs_diff(est.report.point.as_slice(), &oracle);
            assert!(d <= TOL, "seed {seed} fusion {fusion}: deviation {d}");
        }
    }
}

#[test]
fn cond_eif_phi_matches_transliteration() {
    for seed in [11, 12] {
        let (dataset, bundle, tables) = setting2_fixture(seed);
        for fusion in [false, true] {
            let est = cond_bt_eif_phi(&dataset, &bundle, 5, &opts(), fusion, 0.95).unwrap();
            let oracle = oracle_cond_eif_phi(&tables, fusion);
            let d = max_abs_diff(est.report.point.as_slice(), &oracle);
            assert!(d <= TOL, "seed {seed} fusion {fusion}: deviation {d}");
        }
    }
}

#[test]
fn cond_psi_matches_transliteration_on_both_routes() {
    for seed in [13, 14] {
        let (dataset, bundle, tables) = setting2_fixture(seed);
        let scheme = estimand_scheme(SettingId::II);
        let gamma = setting2_gamma();
        for fusion in [false, true] {
            let est = cond_bt_psi(
                &scheme,
                &dataset,
                &bundle,
                &CondPsiRoute::Fixed(gamma.clone()),
                &opts(),
                fusion,
                0.95,
            )
            .unwrap();
            let oracle = oracle_cond_psi(&tables, Some(gamma.pairs()), fusion);
            let d = max_abs_diff(est.report.point.as_slice(), &oracle);
            assert!(d <= TOL, "fixed seed {seed} fusion {fusion}: deviation {d}");

            let est = cond_bt_psi(
                &scheme,
                &dataset,
                &bundle,
                &CondPsiRoute::Efficient,
                &opts(),
                fusion,
                0.95,
            )
            .unwrap();
            let oracle = oracle_cond_psi(&tables, None, fusion);
            let d = max_abs_diff(est.report.point.as_slice(), &oracle);
            assert!(d <= TOL, "efficient seed {seed} fusion {fusion}: deviation {d}");
        }
    }
}

/// The one-step point estimate decomposes exactly into the plug-in plus the
/// mean correction, as implemented.
#[test]
fn one_step_decomposition_is_bitwise() {
    let (dataset, bundle, _) = setting1_fixture(20);
    let scheme = estimand_scheme(SettingId::I);
    let runs = [
        one_step_phi(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap(),
        one_step_psi(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap(),
        one_step_phi_fusion(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap(),
        one_step_psi_fusion(&scheme, &dataset, &bundle, &opts(), 0.95).unwrap(),
    ];
    for est in &runs {
        for (j, p) in est.report.point.as_slice().iter().enumerate() {
            let recomposed = est.plugin[j] + est.correction_mean[j];
            assert_eq!(*p, recomposed, "component {j} of {:?}", est.report.regime);
        }
    }
}

/// Records whose pair is outside the fixed comparison matrix contribute zero
/// correction rather than erroring.
#[test]
fn cond_if_ignores_records_outside_the_matrix() {
    let (dataset, bundle, _) = setting2_fixture(15);
    // gamma without (3,5): records comparing (3,5) still present in data
    let gamma = ComparisonMatrix::new(5, vec![(1, 2), (2, 3), (2, 4), (2, 5)]).unwrap();
    assert!(dataset.labeled().iter().any(|r| r.pair == (3, 5)));
    let est = cond_bt_if_phi(&dataset, &bundle, &gamma, false, 0.95).unwrap();
    assert!(est.report.point.as_slice().iter().all(|v| v.is_finite()));
}

/// Sanity anchor for the fixtures: all five design pairs appear.
#[test]
fn fixtures_cover_every_observed_pair() {
    let (dataset, _, _) = setting2_fixture(16);
    let mut seen = std::collections::HashSet::new();
    for r in dataset.labeled() {
        seen.insert(r.pair);
    }
    for p in SETTING2_PAIRS {
        assert!(seen.contains(&p), "pair {p:?} missing; enlarge the fixture");
    }
}
