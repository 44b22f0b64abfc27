use mcbf_conic::embed::embed_matrix;
use mcbf_conic::{
    check_feasibility, numerical_rank, principal_eigenpair, solve, trace_product, CMatrix,
    Certificate, ConicError, ConicProblem, Feasibility, LinExpr, Relation, Status, RANK_TOL,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cn(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * s, im * s)
    })
}

fn outer(h: &DVector<Complex64>) -> CMatrix {
    h * h.adjoint()
}

/// `min Tr(W) s.t. Tr(h hᴴ W) ≥ γσ², W ⪰ 0`.
fn single_user(h: &DVector<Complex64>, target: f64) -> (ConicProblem, mcbf_conic::MatrixVar) {
    let n = h.len();
    let mut p = ConicProblem::new();
    let w = p.add_matrix_var(n);
    p.add_objective(LinExpr::new().trace(w, CMatrix::identity(n, n)));
    p.add_constraint(LinExpr::new().trace(w, outer(h)), Relation::Ge, target);
    (p, w)
}

#[test]
fn lp_lower_bound() {
    let mut p = ConicProblem::new();
    let x = p.add_scalar_var();
    p.add_objective(LinExpr::new().scalar(x, 1.0));
    let c = p.add_constraint(LinExpr::new().scalar(x, 1.0), Relation::Ge, 2.0);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.scalar(x) - 2.0).abs() < 1e-7);
    assert!((sol.dual(c) - 1.0).abs() < 1e-7);
    assert!((sol.objective - 2.0).abs() < 1e-7);
}

#[test]
fn lp_upper_bound_dual_is_nonpositive() {
    // max x ⇔ min −x, x ≤ 3
    let mut p = ConicProblem::new();
    let x = p.add_scalar_var();
    p.add_objective(LinExpr::new().scalar(x, -1.0));
    let c = p.add_constraint(LinExpr::new().scalar(x, 1.0), Relation::Le, 3.0);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.scalar(x) - 3.0).abs() < 1e-7);
    assert!((sol.dual(c) + 1.0).abs() < 1e-7);
}

#[test]
fn equality_and_quadratic_objective() {
    // min ½·2·x² + y  s.t. x + y = 3  →  x = 0.5 (2x = 1), y = 2.5
    let mut p = ConicProblem::new();
    let x = p.add_scalar_var();
    let y = p.add_scalar_var();
    p.add_quadratic(x, 2.0);
    p.add_objective(LinExpr::new().scalar(y, 1.0));
    let c = p.add_constraint(LinExpr::new().scalar(x, 1.0).scalar(y, 1.0), Relation::Eq, 3.0);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.scalar(x) - 0.5).abs() < 1e-6);
    assert!((sol.scalar(y) - 2.5).abs() < 1e-6);
    assert!((sol.dual(c) - 1.0).abs() < 1e-6);
    assert!((sol.objective - 2.75).abs() < 1e-7);
}

#[test]
fn single_user_sdp_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let h = cn(&mut rng, 2);
        let target = 3.0;
        let (p, w) = single_user(&h, target);
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        let expected = target / h.norm_squared();
        assert!(
            (sol.objective - expected).abs() < 1e-7 * (1.0 + expected),
            "{} vs {expected}",
            sol.objective
        );
        assert_eq!(numerical_rank(sol.matrix(w), RANK_TOL), 1);
        // Dual of the QoS row is the marginal power per unit of target.
        assert!((sol.duals[0] - 1.0 / h.norm_squared()).abs() < 1e-6 / h.norm_squared());
    }
}

#[test]
fn single_user_sdp_beats_beamformer_grid() {
    // Independent oracle: search unit beamformers u = (cos a, e^{jφ} sin a) and
    // scale each to meet the target; the SDP must be no worse than the best.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = cn(&mut rng, 2);
    let target = 2.0;
    let (p, _) = single_user(&h, target);
    let sol = solve(&p).unwrap();
    let mut best = f64::INFINITY;
    let steps = 400;
    for ia in 0..=steps {
        let a = std::f64::consts::FRAC_PI_2 * ia as f64 / steps as f64;
        for ip in 0..steps {
            let phi = 2.0 * std::f64::consts::PI * ip as f64 / steps as f64;
            let u0 = Complex64::new(a.cos(), 0.0);
            let u1 = Complex64::from_polar(a.sin(), phi);
            let gain = (h[0].conj() * u0 + h[1].conj() * u1).norm_sqr();
            if gain > 0.0 {
                best = best.min(target / gain);
            }
        }
    }
    assert!(sol.objective <= best + 1e-9);
    assert!(best - sol.objective < 1e-3 * best);
}

#[test]
fn embedded_single_user_problem_has_same_optimum() {
    // Hand-build the real 2n×2n version: min ½Tr(X) s.t. ½Tr(Hₑ X) ≥ target.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = cn(&mut rng, 3);
    let target = 1.5;
    let (p, _) = single_user(&h, target);
    let direct = solve(&p).unwrap();

    let he = embed_matrix(&outer(&h)).map(|v| Complex64::new(0.5 * v, 0.0));
    let mut q = ConicProblem::new();
    let x = q.add_matrix_var(6);
    q.add_objective(LinExpr::new().trace(x, CMatrix::identity(6, 6) * Complex64::new(0.5, 0.0)));
    q.add_constraint(LinExpr::new().trace(x, he), Relation::Ge, target);
    let embedded = solve(&q).unwrap();
    assert_eq!(embedded.status, Status::Optimal);
    assert!((direct.objective - embedded.objective).abs() < 1e-9 * (1.0 + direct.objective.abs()));
}

#[test]
fn real_valued_input_gives_same_optimum_as_lp() {
    // A real diagonal SDP is equivalent to an LP over its diagonal.
    let mut p = ConicProblem::new();
    let w = p.add_matrix_var(2);
    let c = CMatrix::from_diagonal(&DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(3.0, 0.0)]));
    p.add_objective(LinExpr::new().trace(w, c));
    p.add_constraint(LinExpr::new().trace(w, CMatrix::identity(2, 2)), Relation::Ge, 4.0);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.objective - 4.0).abs() < 1e-7);
}

#[test]
fn contradictory_bounds_are_infeasible_with_certificate() {
    let mut p = ConicProblem::new();
    let x = p.add_scalar_var();
    p.add_objective(LinExpr::new().scalar(x, 1.0));
    p.add_constraint(LinExpr::new().scalar(x, 1.0), Relation::Ge, 1.0);
    p.add_constraint(LinExpr::new().scalar(x, -1.0), Relation::Ge, 0.0);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Infeasible);
    let cert = sol.certificate.expect("certificate");
    let check = cert.check(&p);
    assert!(check.holds(1e-8), "{check:?}");
    let Certificate::Farkas { y } = cert else {
        panic!("expected Farkas certificate")
    };
    assert!(y.iter().all(|&v| v >= 0.0));
    assert!((y[0] * 1.0 + y[1] * 0.0 - 1.0).abs() < 1e-12);
}

#[test]
fn unbounded_direction_is_detected() {
    let mut p = ConicProblem::new();
    let x = p.add_scalar_var();
    p.add_objective(LinExpr::new().scalar(x, -1.0));
    p.add_constraint(LinExpr::new().scalar(x, 1.0), Relation::Ge, 1.0);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Unbounded);
    assert!(sol.certificate.unwrap().check(&p).holds(1e-8));
}

#[test]
fn feasibility_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let h = cn(&mut rng, 2);
    let pmax = 2.0;
    let sigma2 = 1.0;
    let bound = pmax * h.norm_squared() / sigma2;
    let build = |t: f64| {
        let mut p = ConicProblem::new();
        let w = p.add_matrix_var(2);
        p.add_constraint(LinExpr::new().trace(w, outer(&h)), Relation::Ge, t * sigma2);
        p.add_constraint(LinExpr::new().trace(w, CMatrix::identity(2, 2)), Relation::Le, pmax);
        p
    };
    assert_eq!(check_feasibility(&build(0.0)).unwrap(), Feasibility::Feasible);
    assert_eq!(check_feasibility(&build(0.9 * bound)).unwrap(), Feasibility::Feasible);
    assert_eq!(check_feasibility(&build(1.1 * bound)).unwrap(), Feasibility::Infeasible);

    let mut empty = ConicProblem::new();
    empty.add_matrix_var(2);
    assert_eq!(check_feasibility(&empty).unwrap(), Feasibility::Feasible);
}

#[test]
fn construction_errors_surface() {
    let mut p = ConicProblem::new();
    let w = p.add_matrix_var(2);
    p.add_constraint(LinExpr::new().trace(w, CMatrix::identity(3, 3)), Relation::Ge, 1.0);
    assert!(matches!(solve(&p), Err(ConicError::DimensionMismatch(_))));
}

/// Cyclic Jacobi eigensolver on the real embedding of a Hermitian matrix.
fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn principal_eigenpair_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let g = CMatrix::from_fn(4, 4, |_, _| {
            Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        let w = &g * g.adjoint();
        let (lambda, u) = principal_eigenpair(&w).unwrap();
        // Embedded eigenvalues are the Hermitian ones, each doubled.
        let oracle = jacobi_eigenvalues(&embed_matrix(&w));
        let top = *oracle.last().unwrap();
        assert!((lambda - top).abs() < 1e-9 * top);
        assert!((u.norm() - 1.0).abs() < 1e-12);
        let resid = (&w * &u - &u * Complex64::new(lambda, 0.0)).norm();
        assert!(resid <= 1e-9 * w.norm());
        assert!((trace_product(&w, &CMatrix::identity(4, 4)) - oracle.iter().sum::<f64>() / 2.0).abs() < 1e-9 * top);
    }
}
