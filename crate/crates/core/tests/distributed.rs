mod common;

use common::{rel_diff, topology};
use mcbf_conic::{principal_eigenpair, solve};
use mcbf_core::assemble::assemble_subproblem;
use mcbf_core::backhaul::{periter_signaling_load, verify_exchange_count, Backhaul, Tag};
use mcbf_core::distributed::{
    admm_dual_update, admm_global_update, distributed_gaussian_randomization, network_subgradient, run_admm,
    run_primal_decomposition, solve_admm_local, solve_local, solve_nulling, AdmmSettings, CellCandidates, Coupling,
    PdSettings,
};
use mcbf_core::{
    evaluate_sinr, sample_channels, solve_centralized, solve_relaxed_qos, CVector, IciIndex, DEFAULT_CANDIDATES,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn single_cell_subproblem_is_the_network_problem() {
    let t = topology(1, 2, 4, 4, 2.0, 1.0);
    let ch = sample_channels(&t, 3);
    let idx = IciIndex::new(&t);
    assert!(idx.is_empty());
    let local = solve_local(0, &ch, &t, &idx, &[], 1e-6).unwrap().unwrap();
    let (relaxed, _, _) = solve_relaxed_qos(&ch, &t).unwrap();
    assert!(rel_diff(local.objective, relaxed.objective) < 1e-7);
    assert!(network_subgradient(&idx, &[local]).is_empty());
}

#[test]
fn zero_caps_give_the_nulling_relaxation() {
    let t = topology(2, 2, 4, 6, 1.0, 1.0);
    let ch = sample_channels(&t, 4);
    let idx = IciIndex::new(&t);
    let zeros = vec![0.0; idx.len()];
    let total: f64 = (0..2)
        .map(|b| {
            let cell = assemble_subproblem(b, &ch, &t, &idx, &zeros);
            solve(&cell.problem).unwrap().objective
        })
        .sum();
    let null = solve_nulling(&ch, &t, DEFAULT_CANDIDATES, &mut rng(4)).unwrap();
    assert!(rel_diff(total, null.relaxed_power) < 1e-5, "{total} vs {}", null.relaxed_power);
}

#[test]
fn nulling_leaves_no_leakage() {
    let t = topology(2, 2, 4, 6, 1.0, 1.0);
    let ch = sample_channels(&t, 5);
    let out = solve_nulling(&ch, &t, DEFAULT_CANDIDATES, &mut rng(5)).unwrap();
    for b in 0..2 {
        for g in t.groups_of_bs(b) {
            let w = out.solution.beamformer(g).unwrap();
            for u in t.out_of_cell_users(b) {
                assert!(ch.h(b, u).dotc(w).norm_sqr() < 1e-9);
            }
        }
    }
    for u in 0..t.num_users() {
        assert!(evaluate_sinr(&t, &ch, &out.solution, u).unwrap() >= t.gamma(u) * (1.0 - 1e-6));
    }
}

#[test]
fn slack_caps_have_zero_multipliers() {
    let t = topology(2, 2, 4, 4, 1.0, 20.0);
    let ch = sample_channels(&t, 7);
    let idx = IciIndex::new(&t);
    let theta = vec![50.0; idx.len()];
    let parts: Vec<_> = (0..2).map(|b| solve_local(b, &ch, &t, &idx, &theta, 1e-6).unwrap().unwrap()).collect();
    for p in &parts {
        for &(_, mu) in &p.mu {
            assert!(mu.abs() < 1e-6, "μ = {mu}");
        }
    }
    for s in network_subgradient(&idx, &parts) {
        assert!(s >= 0.0);
    }
}

#[test]
fn iteration_exchange_matches_closed_form() {
    let t = topology(2, 4, 8, 12, 1.0, 1.0);
    let ch = sample_channels(&t, 1);
    let expected = periter_signaling_load(2, 8).unwrap() as usize;
    assert_eq!(expected, 16);

    let pd_settings = PdSettings {
        max_iters: 3,
        ..PdSettings::default()
    };
    let pd = run_primal_decomposition(&ch, &t, &pd_settings, &mut rng(1)).unwrap();
    let admm_settings = AdmmSettings {
        max_iters: 3,
        ..AdmmSettings::default()
    };
    let admm = run_admm(&ch, &t, &admm_settings, &mut rng(1)).unwrap();
    for out in [&pd, &admm] {
        let iterative: Vec<usize> = out
            .log
            .records()
            .iter()
            .filter(|r| r.tag.is_iterative())
            .map(|r| r.round)
            .collect();
        let mut rounds = iterative.clone();
        rounds.dedup();
        assert_eq!(rounds.len(), out.iterations);
        for r in rounds {
            assert!(verify_exchange_count(&out.log, r, expected));
        }
        assert!(out.trace.rows.iter().all(|row| row.scalars_exchanged == expected));
    }
    assert_eq!(pd.log.tag_total(Tag::DualLambda) + pd.log.tag_total(Tag::DualMu), 3 * expected);
    assert_eq!(admm.log.tag_total(Tag::LocalCopy), 3 * expected);
}

#[test]
fn single_cell_admm_is_centralized() {
    let t = topology(1, 2, 4, 4, 1.0, 1.0);
    let ch = sample_channels(&t, 2);
    let central = solve_centralized(&ch, &t, DEFAULT_CANDIDATES, &mut rng(2)).unwrap();
    let admm = run_admm(&ch, &t, &AdmmSettings::default(), &mut rng(2)).unwrap();
    assert!(rel_diff(admm.solution.sum_power(), central.solution.sum_power()) < 1e-6);
    assert_eq!(admm.log.total(), 0);
}

#[test]
fn heavy_penalty_pins_local_copies() {
    let t = topology(2, 2, 4, 6, 1.0, 1.0);
    let ch = sample_channels(&t, 3);
    let idx = IciIndex::new(&t);
    let theta = vec![0.4; idx.len()];
    let nu = vec![0.0; idx.len()];
    for b in 0..2 {
        let loc = solve_admm_local(b, &ch, &t, &idx, &theta, &nu, 1e6).unwrap();
        for &(k, v) in &loc.copies {
            assert!((v - theta[k]).abs() <= 1e-3, "pair {k}: {v}");
        }
    }
}

#[test]
fn consensus_arithmetic() {
    assert_eq!(admm_global_update(2.0, 4.0), 3.0);
    assert_eq!(admm_global_update(0.7, 0.7), 0.7);
    assert_eq!(admm_dual_update(0.0, 0.5, 0.5, 2.0), 0.0);
    // θ̃ = 1.5, θ = mean(1.5, 0.5) = 1.0
    assert_eq!(admm_dual_update(1.0, 1.5, 0.5, 2.0), 2.0);
}

/// Golden-section minimizer of a unimodal scalar function.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn mean_minimizes_the_augmented_term() {
    let cases = [(0.3, 1.1, 0.4, 2.0), (2.0, 0.1, -1.5, 0.5), (0.0, 0.0, 3.0, 7.0)];
    for (ta, tb, nu, rho) in cases {
        // Opposite multipliers on the two copies.
        let f = |th: f64| {
            nu * (ta - th) - nu * (tb - th) + 0.5 * rho * ((ta - th).powi(2) + (tb - th).powi(2))
        };
        let oracle = golden_min(f, -10.0, 10.0);
        assert!((admm_global_update(ta, tb) - oracle).abs() < 1e-7);
    }
}

#[test]
fn restored_admm_design_is_feasible() {
    let t = topology(2, 2, 4, 6, 1.0, 1.0);
    for seed in 0..3 {
        let ch = sample_channels(&t, seed);
        let settings = AdmmSettings {
            max_iters: 15,
            ..AdmmSettings::default()
        };
        let out = run_admm(&ch, &t, &settings, &mut rng(seed)).unwrap();
        for u in 0..t.num_users() {
            assert!(evaluate_sinr(&t, &ch, &out.solution, u).unwrap() >= t.gamma(u) - 1e-5);
        }
    }
}

#[test]
fn subgradient_run_is_deterministic() {
    let t = topology(2, 2, 4, 6, 1.0, 1.0);
    let ch = sample_channels(&t, 8);
    let settings = PdSettings {
        max_iters: 10,
        ..PdSettings::default()
    };
    let a = run_primal_decomposition(&ch, &t, &settings, &mut rng(8)).unwrap();
    let b = run_primal_decomposition(&ch, &t, &settings, &mut rng(8)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.solution, b.solution);
}

#[test]
fn common_level_scheme_is_bounded_by_centralized() {
    let t = topology(2, 2, 4, 6, 1.0, 1.0);
    let ch = sample_channels(&t, 1);
    let central = solve_centralized(&ch, &t, DEFAULT_CANDIDATES, &mut rng(1)).unwrap();
    let settings = PdSettings {
        max_iters: 30,
        coupling: Coupling::Common,
        ..PdSettings::default()
    };
    let out = run_primal_decomposition(&ch, &t, &settings, &mut rng(1)).unwrap();
    assert!(out.theta.windows(2).all(|w| w[0] == w[1]));
    assert!(out.solution.sum_power() >= central.solution.sum_power() - 1e-6);
    // one scalar from each BS to the other per iteration
    assert!(out.trace.rows.iter().all(|r| r.scalars_exchanged == 2));
}

#[test]
fn rank_one_randomization_recovers_the_relaxation() {
    let t = topology(2, 2, 4, 6, 1.0, 1.0);
    let ch = sample_channels(&t, 2);
    let idx = IciIndex::new(&t);
    let theta = vec![0.3; idx.len()];
    for b in 0..2 {
        let local = solve_local(b, &ch, &t, &idx, &theta, 1e-6).unwrap().unwrap();
        assert!(local.solution.all_rank_one());
        let cand =
            distributed_gaussian_randomization(b, &ch, &t, &idx, &local.solution.covariances, &theta, 10, &mut rng(b as u64))
                .unwrap();
        let (_, u) = principal_eigenpair(&local.solution.covariances[0]).unwrap();
        let u = CVector::from_iterator(u.len(), u.iter().copied());
        assert!((cand.directions[0][0].dotc(&u).norm() - 1.0).abs() < 1e-6);
        assert!(rel_diff(cand.total(0), local.objective) < 1e-6, "{} vs {} ranks {:?}", cand.total(0), local.objective, local.solution.ranks);
    }
}

#[test]
fn candidate_selection_exchange() {
    let count = 100;
    let cells: Vec<CellCandidates> = (0..3)
        .map(|b| CellCandidates {
            bs: b,
            directions: vec![Vec::new(); count],
            powers: (0..count)
                .map(|i| if (i + b) % 7 == 0 { None } else { Some(vec![1.0 + ((i * 31 + b * 17) % 23) as f64]) })
                .collect(),
        })
        .collect();
    let mut bus = Backhaul::new(3);
    let chosen = select_common_candidate_checked(&cells, &mut bus);
    // Each BS sends its full table to both others.
    let declared = 3 * 2 * count;
    assert_eq!(bus.log().tag_total(Tag::GrPower), declared);
    assert!(verify_exchange_count(bus.log(), 0, declared));

    let oracle = (0..count)
        .map(|i| (i, cells.iter().map(|c| c.total(i)).sum::<f64>()))
        .filter(|(_, t)| t.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, t)| match best {
            Some((_, bt)) if bt <= t => best,
            _ => Some((i, t)),
        })
        .map(|(i, _)| i);
    assert_eq!(chosen, oracle);
}

fn select_common_candidate_checked(cells: &[CellCandidates], bus: &mut Backhaul) -> Option<usize> {
    mcbf_core::distributed::select_common_candidate(cells, bus).unwrap()
}

proptest! {
    #[test]
    fn dual_pair_sum_stays_zero(
        start in -5.0f64..5.0,
        steps in proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..30),
        rho in 0.1f64..10.0,
    ) {
        let (mut na, mut nb) = (start, -start);
        for (a, b) in steps {
            let _ = admm_global_update(a, b);
            na = admm_dual_update(na, a, b, rho);
            nb = admm_dual_update(nb, b, a, rho);
            prop_assert_eq!(na + nb, 0.0);
        }
    }

    #[test]
    fn mean_lies_between_copies(a in 0.0f64..1e3, b in 0.0f64..1e3) {
        let m = admm_global_update(a, b);
        prop_assert!(m >= a.min(b) && m <= a.max(b));
        prop_assert_eq!(m, admm_global_update(b, a));
    }
}
