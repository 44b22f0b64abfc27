mod common;

use common::db;
use mcbf_conic::{check_feasibility, Feasibility};
use mcbf_core::assemble::{assemble_feasibility, IciModel};
use mcbf_core::balancing::{
    balance_gaussian_randomization, balance_upper_bound, bisect, bisect_balance, distributed_balance, local_balance,
    local_balance_gr, uncoordinated_balance, uncoordinated_network, DEFAULT_EPSILON,
};
use mcbf_core::randomization::candidate_sets;
use mcbf_core::{build_topology, gain, sample_channels, CVector, CoreError, IciIndex, TopologyConfig};
use mcbf_conic::CMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = DEFAULT_EPSILON;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn feasible(ch: &mcbf_core::ChannelSet, t: &mcbf_core::Topology, level: f64) -> bool {
    check_feasibility(&assemble_feasibility(ch, t, level).problem).unwrap() == Feasibility::Feasible
}

#[test]
fn feasibility_boundaries() {
    let t = build_topology(&TopologyConfig::new(1, 1, 1, 3).p_max(2.0).sigma2(0.5)).unwrap();
    let ch = sample_channels(&t, 1);
    let bound = 2.0 * ch.h(0, 0).norm_squared() / 0.5;
    assert!(feasible(&ch, &t, 0.0));
    assert!(feasible(&ch, &t, 0.99 * bound));
    assert!(!feasible(&ch, &t, 1.01 * bound));
}

#[test]
fn feasibility_is_monotone_in_level() {
    let t = build_topology(&TopologyConfig::new(2, 2, 4, 4).d(db(3.0))).unwrap();
    let ch = sample_channels(&t, 2);
    let hi = balance_upper_bound(&ch, &t, 0..t.num_users());
    let answers: Vec<bool> = (0..=12).map(|i| feasible(&ch, &t, hi * i as f64 / 12.0)).collect();
    let first_infeasible = answers.iter().position(|f| !f).unwrap_or(answers.len());
    assert!(answers[first_infeasible..].iter().all(|f| !f), "{answers:?}");
    assert!(answers[0]);
}

#[test]
fn bisection_rejects_bad_epsilon() {
    let t = build_topology(&TopologyConfig::new(1, 1, 1, 2)).unwrap();
    let ch = sample_channels(&t, 0);
    assert!(matches!(bisect_balance(&ch, &t, 0.0, 10, &mut rng(0)), Err(CoreError::Config(_))));
    assert!(bisect_balance(&ch, &t, f64::NAN, 10, &mut rng(0)).is_err());
}

#[test]
fn bisection_on_synthetic_oracle() {
    let b = bisect(0.0, 10.0, 0.01, |t| Ok::<_, ()>(t <= 3.7)).unwrap();
    assert!((b.midpoint() - 3.7).abs() <= 0.01);
    assert_eq!(b.calls.len(), 10);
}

#[test]
fn rank_one_design_reaches_the_relaxed_level() {
    let t = build_topology(&TopologyConfig::new(2, 4, 8, 8).d(db(2.0)).p_max(3.0)).unwrap();
    let ch = sample_channels(&t, 3);
    let out = bisect_balance(&ch, &t, EPS, 100, &mut rng(3)).unwrap();
    assert!(!out.randomized);
    assert!((out.t_design - out.t_relaxed).abs() <= EPS);
    for b in 0..2 {
        let p: f64 = t.groups_of_bs(b).into_iter().map(|g| out.solution.beamformer(g).unwrap().norm_squared()).sum();
        assert!(p <= t.p_max(b) + 1e-7);
    }
}

#[test]
fn randomization_with_degenerate_candidates() {
    let t = build_topology(&TopologyConfig::new(2, 2, 4, 4).d(db(2.0))).unwrap();
    let ch = sample_channels(&t, 5);
    let out = bisect_balance(&ch, &t, EPS, 100, &mut rng(5)).unwrap();
    assert!(!out.randomized);

    // The rank-one design itself as the only candidate set.
    let dirs: Vec<CVector> = (0..2)
        .map(|g| {
            let w = out.solution.beamformer(g).unwrap();
            w / Complex64::new(w.norm(), 0.0)
        })
        .collect();
    let gr = balance_gaussian_randomization(&ch, &t, &[dirs.clone()], EPS).unwrap();
    assert!((gr.t - out.t_relaxed).abs() <= 2.0 * EPS, "{} vs {}", gr.t, out.t_relaxed);

    // A direction orthogonal to every user of its group caps that group at 0.
    let users: Vec<&CVector> = t.users_of_group(0).into_iter().map(|u| ch.h(0, u)).collect();
    let null = mcbf_core::distributed::null_space_basis(&users, 4);
    let blind: CVector = null.column(0).into_owned();
    let gr = balance_gaussian_randomization(&ch, &t, &[vec![blind, dirs[1].clone()]], EPS).unwrap();
    assert!(gr.t <= EPS);
}

#[test]
fn randomized_level_is_bounded_by_the_relaxation() {
    let t = build_topology(&TopologyConfig::new(2, 2, 8, 4).d(db(2.0))).unwrap();
    let ch = sample_channels(&t, 6);
    let out = bisect_balance(&ch, &t, EPS, 100, &mut rng(6)).unwrap();
    // Arbitrary full-rank covariances give arbitrary directions.
    let sets = candidate_sets(&[CMatrix::identity(4, 4), CMatrix::identity(4, 4)], 30, &mut rng(7));
    let gr = balance_gaussian_randomization(&ch, &t, &sets, EPS).unwrap();
    assert!(gr.t <= out.t_relaxed + EPS);
    assert!(out.t_design <= out.t_relaxed + EPS);
}

#[test]
fn single_cell_schemes_agree_with_centralized() {
    let t = build_topology(&TopologyConfig::new(1, 2, 4, 4).p_max(2.0)).unwrap();
    let ch = sample_channels(&t, 8);
    let central = bisect_balance(&ch, &t, EPS, 100, &mut rng(8)).unwrap();
    let unc = uncoordinated_balance(0, &ch, &t, EPS, 100, &mut rng(8)).unwrap();
    let idx = IciIndex::new(&t);
    let local = local_balance(0, &ch, &t, &idx, &[], EPS, 100, &mut rng(8)).unwrap();
    assert!((unc.t_relaxed - central.t_relaxed).abs() <= EPS);
    assert!((local.t_relaxed - central.t_relaxed).abs() <= EPS);
}

#[test]
fn local_randomization_respects_caps() {
    let t = build_topology(&TopologyConfig::new(2, 2, 6, 4).d(db(1.0))).unwrap();
    let ch = sample_channels(&t, 9);
    let idx = IciIndex::new(&t);
    let caps = vec![0.2; idx.len()];
    for b in 0..2 {
        let sets = candidate_sets(&[CMatrix::identity(4, 4)], 20, &mut rng(b as u64));
        let gr = local_balance_gr(b, &ch, &t, &idx, IciModel::Fixed(&caps), &sets, EPS).unwrap();
        for k in idx.outgoing(b) {
            let u = idx.pair(k).user;
            let leak: f64 = gr.beamformers.iter().map(|w| gain(ch.h(b, u), w)).sum();
            assert!(leak <= caps[k] + 1e-8, "pair {k}: {leak}");
        }
        let p: f64 = gr.beamformers.iter().map(|w| w.norm_squared()).sum();
        assert!(p <= t.p_max(b) + 1e-7);
    }
}

#[test]
fn local_level_grows_with_power_budget() {
    let idx_topo = |p: f64| build_topology(&TopologyConfig::new(2, 2, 4, 4).d(db(2.0)).p_max(p)).unwrap();
    let (t1, t2) = (idx_topo(1.0), idx_topo(2.0));
    let idx = IciIndex::new(&t1);
    let caps = vec![0.3; idx.len()];
    for seed in 0..3 {
        let ch = sample_channels(&t1, seed);
        for b in 0..2 {
            let a = local_balance(b, &ch, &t1, &idx, &caps, EPS, 100, &mut rng(seed)).unwrap();
            let c = local_balance(b, &ch, &t2, &idx, &caps, EPS, 100, &mut rng(seed)).unwrap();
            assert!(c.t_relaxed >= a.t_relaxed - EPS);
        }
    }
}

#[test]
fn negative_caps_are_rejected() {
    let t = build_topology(&TopologyConfig::new(2, 2, 4, 4)).unwrap();
    let ch = sample_channels(&t, 0);
    let idx = IciIndex::new(&t);
    let caps = vec![-1.0; idx.len()];
    assert!(local_balance(0, &ch, &t, &idx, &caps, EPS, 10, &mut rng(0)).is_err());
    assert!(local_balance(0, &ch, &t, &idx, &[0.1], EPS, 10, &mut rng(0)).is_err());
}

#[test]
fn ignored_interference_only_hurts() {
    let t = build_topology(&TopologyConfig::new(2, 2, 4, 4).d(db(1.0))).unwrap();
    for seed in 0..3 {
        let ch = sample_channels(&t, seed);
        let out = uncoordinated_network(&ch, &t, EPS, 100, &mut rng(seed)).unwrap();
        let optimistic = out.cells.iter().map(|c| c.t_design).fold(f64::INFINITY, f64::min);
        assert!(out.achieved <= optimistic + 1e-9);
    }
}

#[test]
fn coordination_never_beats_centralized() {
    let t = build_topology(&TopologyConfig::new(2, 2, 4, 4).d(db(1.0)).p_max(3.0)).unwrap();
    for seed in 0..3 {
        let ch = sample_channels(&t, seed);
        let central = bisect_balance(&ch, &t, EPS, 100, &mut rng(seed)).unwrap();
        if central.randomized {
            continue;
        }
        for level in [0.05, 0.5] {
            let d = distributed_balance(&ch, &t, level, EPS, 100, &mut rng(seed)).unwrap();
            assert!(d.achieved <= central.t_relaxed + EPS);
            assert_eq!(d.cells.len(), 2);
        }
    }
}

#[test]
fn uncoordinated_degrades_with_large_budgets() {
    let seeds = 20;
    let average = |p: f64| {
        let t = build_topology(&TopologyConfig::new(2, 6, 12, 12).d(db(1.0)).p_max(p)).unwrap();
        (0..seeds)
            .map(|seed| uncoordinated_network(&sample_channels(&t, seed), &t, EPS, 100, &mut rng(seed)).unwrap().achieved)
            .sum::<f64>()
            / seeds as f64
    };
    let (low, mid, high) = (average(1.0), average(10.0), average(100.0));
    assert!(mid > low, "{low} {mid} {high}");
    assert!(high < mid, "{low} {mid} {high}");
}
