use mcbf_conic::{solve, trace_product, CMatrix, ConicProblem, LinExpr, Relation, Status};
use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two multicast groups sharing an antenna array, each with QoS rows
/// `Tr(H_u W_g) − γ Tr(H_u W_other) ≥ γ`.
fn random_multicast(seed: u64, antennas: usize, users_per_group: usize, gamma: f64, scale: f64) -> ConicProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ConicProblem::new();
    let w = [p.add_matrix_var(antennas), p.add_matrix_var(antennas)];
    let id = CMatrix::identity(antennas, antennas) * Complex64::new(scale, 0.0);
    p.add_objective(LinExpr::new().trace(w[0], id.clone()).trace(w[1], id));
    for g in 0..2 {
        for _ in 0..users_per_group {
            let h = DVector::from_fn(antennas, |_, _| {
                Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            });
            let hh = &h * h.adjoint();
            let mut e = LinExpr::new();
            e.add_trace(w[g], hh.clone());
            e.add_trace_scaled(w[1 - g], &hh, -gamma);
            p.add_constraint(e, Relation::Ge, gamma);
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_duality_and_complementary_slackness(seed in 0u64..10_000, users in 1usize..4) {
        let p = random_multicast(seed, 3, users, 0.5, 1.0);
        let sol = solve(&p).unwrap();
        prop_assume!(sol.status == Status::Optimal);
        prop_assert!(sol.dual_objective <= sol.objective + 1e-7 * (1.0 + sol.objective.abs()));
        for (c, y) in p.constraints().iter().zip(&sol.duals) {
            prop_assert!(*y >= 0.0);
            let slack = c.slack(&sol.matrices, &sol.scalars);
            prop_assert!((y * slack).abs() <= 1e-6, "y {y} slack {slack}");
        }
        prop_assert!(sol.residuals.max() <= 1e-7);
    }

    #[test]
    fn objective_scaling_keeps_argmin_and_scales_duals(seed in 0u64..10_000, c in 0.1f64..20.0) {
        let base = solve(&random_multicast(seed, 3, 2, 0.5, 1.0)).unwrap();
        let scaled = solve(&random_multicast(seed, 3, 2, 0.5, c)).unwrap();
        prop_assume!(base.status == Status::Optimal && scaled.status == Status::Optimal);
        prop_assert!((scaled.objective - c * base.objective).abs() <= 1e-6 * c * base.objective.abs().max(1.0));
        // Power split and duals are compared through the optimal value,
        // which is insensitive to degenerate argmin directions.
        let p0: f64 = base.matrices.iter().map(|m| trace_product(m, &CMatrix::identity(3, 3))).sum();
        let p1: f64 = scaled.matrices.iter().map(|m| trace_product(m, &CMatrix::identity(3, 3))).sum();
        prop_assert!((p0 - p1).abs() <= 1e-5 * p0.max(1.0));
        for (y0, y1) in base.duals.iter().zip(&scaled.duals) {
            prop_assert!((y1 - c * y0).abs() <= 1e-4 * (c * y0.abs()).max(1e-3));
        }
    }
}
