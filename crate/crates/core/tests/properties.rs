//! Property tests over the core invariants: pair-order bijection,
//! anti-symmetry of the win-probability layout, recovery of consistent
//! strengths, and the null-sum of the extended estimating equations.

use proptest::prelude::*;

use btshift::projection::{estimating_eq, sigmoid, solve_projection, SolverOptions};
use btshift::types::{num_pairs, pair_at, pair_index, StrengthVector, WinProbVector};

proptest! {
    #[test]
    fn pair_order_is_a_bijection(players in 2usize..10) {
        let mut seen = vec![false; num_pairs(players)];
        for k in 1..=players {
            for l in (k + 1)..=players {
                let j = pair_index(players, k, l).unwrap();
                prop_assert!(!seen[j]);
                seen[j] = true;
                prop_assert_eq!(pair_at(players, j).unwrap(), (k, l));
            }
        }
        prop_assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn winprob_antisymmetry_and_round_trip(
        players in 2usize..7,
        raw in proptest::collection::vec(0.001f64..0.999, 21),
    ) {
        let free = &raw[..num_pairs(players)];
        let m = WinProbVector::from_free(players, free).unwrap();
        for k in 1..=players {
            for l in 1..=players {
                if k != l {
                    prop_assert_eq!(m.get(k, l) + m.get(l, k), 1.0);
                }
            }
        }
        let back = m.free_values();
        for (a, b) in free.iter().zip(&back) {
            prop_assert_eq!(*a, *b);
        }
    }

    #[test]
    fn projection_recovers_consistent_strengths(
        players in 2usize..6,
        theta_raw in proptest::collection::vec(-2.0f64..2.0, 5),
        rho_raw in proptest::collection::vec(0.05f64..1.0, 15),
    ) {
        let dim = players - 1;
        let truth = StrengthVector::new(theta_raw[..dim].to_vec()).unwrap();
        let free: Vec<f64> = (0..num_pairs(players))
            .map(|j| {
                let (k, l) = pair_at(players, j).unwrap();
                sigmoid(truth.strength(k) - truth.strength(l))
            })
            .collect();
        let m = WinProbVector::from_free(players, &free).unwrap();
        let rho = &rho_raw[..num_pairs(players)];
        let (solved, _) =
            solve_projection(&m, rho, &SolverOptions::default()).unwrap();
        for p in 2..=players {
            prop_assert!((solved.strength(p) - truth.strength(p)).abs() < 1e-7);
        }
    }

    #[test]
    fn extended_equations_sum_to_zero(
        players in 2usize..6,
        theta_raw in proptest::collection::vec(-3.0f64..3.0, 5),
        free_raw in proptest::collection::vec(0.01f64..0.99, 15),
        rho_raw in proptest::collection::vec(0.0f64..1.0, 15),
    ) {
        let dim = players - 1;
        let theta = StrengthVector::new(theta_raw[..dim].to_vec()).unwrap();
        let m = WinProbVector::from_free(players, &free_raw[..num_pairs(players)]).unwrap();
        let rho = &rho_raw[..num_pairs(players)];
        let u = estimating_eq(&theta, &m, rho).unwrap();
        // the same formula extended to the reference player
        let mut u1 = 0.0;
        for l in 2..=players {
            let j = pair_index(players, 1, l).unwrap();
            if rho[j] > 0.0 {
                u1 += rho[j] * (sigmoid(-theta.strength(l)) - m.get(1, l));
            }
        }
        let total = u1 + u.iter().sum::<f64>();
        prop_assert!(total.abs() < 1e-12, "null sum violated: {}", total);
    }
}
