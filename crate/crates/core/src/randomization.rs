//! Rank-one extraction, Gaussian randomization and the fixed-direction power
//! LPs that turn randomized directions into feasible beamformers.

use log::warn;
use mcbf_conic::{
    numerical_rank, principal_eigenpair, solve, CMatrix, ConicProblem, LinExpr, Relation, Status, RANK_TOL,
};
use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CoreError;
use crate::ici::IciIndex;
use crate::network::{gain, BeamformingSolution, CVector, ChannelSet, Topology};

/// Default Gaussian randomization budget (draws, feasible or not).
pub const DEFAULT_CANDIDATES: usize = 100;

/// Absolute slack added to interference caps in the fixed-direction LPs.
pub const CAP_SLACK: f64 = 1e-9;

/// `w = √λ₁ u₁` for every covariance; beamformers are attached only when
/// every covariance has numerical rank at most one.
pub fn extract_rank_one(
    groups: Vec<usize>,
    covariances: Vec<CMatrix>,
    rank_tol: f64,
    objective: f64,
) -> Result<BeamformingSolution, CoreError> {
    let ranks: Vec<usize> = covariances
        .iter()
        .map(|w| numerical_rank(w, rank_tol).max(1))
        .collect();
    if ranks.iter().all(|&r| r == 1) {
        let mut beams = Vec::with_capacity(covariances.len());
        for w in &covariances {
            let (lambda, u) = principal_eigenpair(w)?;
            beams.push(u * Complex64::new(lambda.max(0.0).sqrt(), 0.0));
        }
        let mut sol = BeamformingSolution::from_beamformers(groups, beams, ranks, objective);
        sol.covariances = covariances;
        Ok(sol)
    } else {
        Ok(BeamformingSolution::from_covariances(groups, covariances, ranks, objective))
    }
}

/// `L` with `L Lᴴ = W`, from the eigendecomposition. Eigenvalues below
/// `RANK_TOL · λ_max` (the numerical-rank threshold) are set to zero.
pub fn psd_factor(w: &CMatrix) -> CMatrix {
    let herm = (w + w.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let cut = RANK_TOL * eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut l = eig.eigenvectors.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let lam = if lam > cut { lam } else { 0.0 };
        l.column_mut(k).scale_mut(lam.sqrt());
    }
    l
}

fn standard_complex_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * s, im * s)
    })
}

/// Raw draws `L z` with `z ~ CN(0, I)`, distributed as `CN(0, W)`.
pub fn gaussian_draws<R: Rng + ?Sized>(w: &CMatrix, count: usize, rng: &mut R) -> Vec<CVector> {
    let l = psd_factor(w);
    (0..count)
        .map(|_| &l * standard_complex_normal(w.nrows(), rng))
        .collect()
}

/// Unit-power directions drawn from `CN(0, W)`.
pub fn gaussian_candidates<R: Rng + ?Sized>(w: &CMatrix, count: usize, rng: &mut R) -> Vec<CVector> {
    gaussian_draws(w, count, rng)
        .into_iter()
        .map(|v| {
            let n = v.norm();
            if n > 0.0 {
                v / Complex64::new(n, 0.0)
            } else {
                v
            }
        })
        .collect()
}

/// One candidate set per randomization index: `sets[i][j]` is the direction
/// for the `j`-th covariance. Draws are taken covariance by covariance.
pub fn candidate_sets<R: Rng + ?Sized>(covariances: &[CMatrix], count: usize, rng: &mut R) -> Vec<Vec<CVector>> {
    let per_group: Vec<Vec<CVector>> = covariances
        .iter()
        .map(|w| gaussian_candidates(w, count, rng))
        .collect();
    (0..count)
        .map(|i| per_group.iter().map(|c| c[i].clone()).collect())
        .collect()
}

fn solve_lp(problem: &ConicProblem, n: usize) -> Result<Option<Vec<f64>>, CoreError> {
    let sol = solve(problem)?;
    match sol.status {
        Status::Optimal => Ok(Some(sol.scalars[..n].iter().map(|p| p.max(0.0)).collect())),
        Status::Infeasible => Ok(None),
        other => {
            warn!("power LP ended with status {other}; treating the candidate as infeasible");
            Ok(None)
        }
    }
}

/// Minimum-power scaling of fixed unit directions (one per group, indexed by
/// group) meeting every user's SINR target. `None` if no scaling works.
pub fn candidate_power_lp(
    channels: &ChannelSet,
    topology: &Topology,
    directions: &[CVector],
) -> Result<Option<Vec<f64>>, CoreError> {
    let ng = topology.num_groups();
    let mut p = ConicProblem::new();
    let vars: Vec<_> = (0..ng).map(|_| p.add_scalar_var()).collect();
    let mut obj = LinExpr::new();
    for &v in &vars {
        obj.add_scalar(v, 1.0);
    }
    p.add_objective(obj);
    for u in 0..topology.num_users() {
        let g = topology.group_of_user(u);
        let gamma = topology.gamma(u);
        let mut e = LinExpr::new();
        for k in 0..ng {
            let gk = gain(channels.h(topology.bs_of_group(k), u), &directions[k]);
            e.add_scalar(vars[k], if k == g { gk } else { -gamma * gk });
        }
        p.add_constraint(e, Relation::Ge, gamma * topology.sigma2(u));
    }
    solve_lp(&p, ng)
}

/// Per-cell version with incoming interference fixed and outgoing
/// interference capped by `theta`; `directions` follow `topology.groups_of_bs(b)`.
pub fn cell_power_lp(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    theta: &[f64],
    directions: &[CVector],
) -> Result<Option<Vec<f64>>, CoreError> {
    let groups = topology.groups_of_bs(b);
    let mut p = ConicProblem::new();
    let vars: Vec<_> = groups.iter().map(|_| p.add_scalar_var()).collect();
    let mut obj = LinExpr::new();
    for &v in &vars {
        obj.add_scalar(v, 1.0);
    }
    p.add_objective(obj);
    for u in topology.users_of_bs(b) {
        let gi = groups.iter().position(|&g| g == topology.group_of_user(u)).unwrap();
        let gamma = topology.gamma(u);
        let mut e = LinExpr::new();
        for (k, &v) in vars.iter().enumerate() {
            let gk = gain(channels.h(b, u), &directions[k]);
            e.add_scalar(v, if k == gi { gk } else { -gamma * gk });
        }
        let incoming: f64 = index.into_user(u).iter().map(|&k| theta[k]).sum();
        p.add_constraint(e, Relation::Ge, gamma * (topology.sigma2(u) + incoming));
    }
    for k in index.outgoing(b) {
        let u = index.pair(k).user;
        let mut e = LinExpr::new();
        for (i, &v) in vars.iter().enumerate() {
            e.add_scalar(v, gain(channels.h(b, u), &directions[i]));
        }
        p.add_constraint(e, Relation::Le, theta[k] + CAP_SLACK);
    }
    solve_lp(&p, groups.len())
}

/// Outcome of a randomization run.
#[derive(Debug, Clone)]
pub struct Randomized {
    /// Index of the chosen candidate set.
    pub index: usize,
    pub powers: Vec<f64>,
    pub beamformers: Vec<CVector>,
    pub feasible: usize,
}

/// Picks the lowest-total-power feasible candidate set (ties: lowest index).
pub fn select_best(
    sets: &[Vec<CVector>],
    mut lp: impl FnMut(&[CVector]) -> Result<Option<Vec<f64>>, CoreError>,
) -> Result<Option<Randomized>, CoreError> {
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut feasible = 0;
    for (i, dirs) in sets.iter().enumerate() {
        if let Some(p) = lp(dirs)? {
            feasible += 1;
            let total: f64 = p.iter().sum();
            if best.as_ref().is_none_or(|(t, _, _)| total < *t) {
                best = Some((total, i, p));
            }
        }
    }
    Ok(best.map(|(_, index, powers)| Randomized {
        beamformers: sets[index]
            .iter()
            .zip(&powers)
            .map(|(d, &p)| d * Complex64::new(p.sqrt(), 0.0))
            .collect(),
        index,
        powers,
        feasible,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rank_one_covariance_gives_its_direction() {
        let w = CVector::from_vec(vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.0, 1.0)]);
        let cov = &w * w.adjoint();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let unit = &w / c(w.norm(), 0.0);
        for v in gaussian_candidates(&cov, 20, &mut rng) {
            assert!((v.norm() - 1.0).abs() < 1e-12);
            assert!((v.dotc(&unit).norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_count_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(gaussian_candidates(&CMatrix::identity(2, 2), 0, &mut rng).is_empty());
    }

    #[test]
    fn extraction_reconstructs_rank_one_covariance() {
        let w = CVector::from_vec(vec![c(0.4, -0.1), c(1.2, 0.7)]);
        let cov = &w * w.adjoint();
        let s = extract_rank_one(vec![0], vec![cov.clone()], 1e-6, 0.0).unwrap();
        let got = s.beamformer(0).unwrap();
        assert!((got * got.adjoint() - cov).norm() < 1e-12);
        assert_eq!(s.ranks, vec![1]);
    }

    #[test]
    fn higher_rank_keeps_covariances_only() {
        let s = extract_rank_one(vec![0], vec![CMatrix::identity(2, 2)], 1e-6, 0.0).unwrap();
        assert!(!s.has_all_beamformers());
        assert_eq!(s.ranks, vec![2]);
    }
}
