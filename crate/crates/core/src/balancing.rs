//! Max-min SINR balancing: bisection over SDP feasibility (network-wide and
//! per cell with fixed interference caps), rank-one extraction and Gaussian
//! randomization with bisection over power LPs.

use log::warn;
use mcbf_conic::{
    check_feasibility, solve, CMatrix, ConicProblem, ConicSolution, Feasibility, LinExpr, Relation, Status, RANK_TOL,
};
use num_complex::Complex64;
use rand::Rng;

use crate::assemble::{assemble_feasibility, assemble_local_balance, assemble_min_power_at, IciModel};
use crate::error::CoreError;
use crate::ici::IciIndex;
use crate::network::{achieved_min_sinr, gain, BeamformingSolution, CVector, ChannelSet, Topology};
use crate::power_min::require_optimal;
use crate::randomization::{candidate_sets, extract_rank_one, CAP_SLACK};

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionCall {
    pub t: f64,
    pub feasible: bool,
}

/// Final bracket and every oracle query, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    pub lower: f64,
    pub upper: f64,
    pub calls: Vec<BisectionCall>,
}

impl Bisection {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// No feasible query lies above an infeasible one.
    pub fn is_monotone(&self) -> bool {
        calls_monotone(&self.calls)
    }
}

/// Whether a set of feasibility answers is consistent with nested feasible
/// sets (every feasible `t` below every infeasible `t`).
pub fn calls_monotone(calls: &[BisectionCall]) -> bool {
    let max_feasible = calls.iter().filter(|c| c.feasible).map(|c| c.t).fold(f64::NEG_INFINITY, f64::max);
    let min_infeasible = calls.iter().filter(|c| !c.feasible).map(|c| c.t).fold(f64::INFINITY, f64::min);
    max_feasible < min_infeasible
}

/// `⌈log₂(range / ε)⌉`, or 0 when the range is already within `ε`.
pub fn expected_calls(range: f64, epsilon: f64) -> usize {
    if range <= epsilon {
        0
    } else {
        (range / epsilon).log2().ceil() as usize
    }
}

/// Bisection on `[lo, hi]` for the largest `t` the oracle accepts, with
/// exactly [`expected_calls`] queries.
pub fn bisect<E>(lo: f64, hi: f64, epsilon: f64, mut oracle: impl FnMut(f64) -> Result<bool, E>) -> Result<Bisection, E> {
    let mut b = Bisection {
        lower: lo,
        upper: hi,
        calls: Vec::new(),
    };
    for _ in 0..expected_calls(hi - lo, epsilon) {
        let t = b.midpoint();
        let feasible = oracle(t)?;
        b.calls.push(BisectionCall { t, feasible });
        if feasible {
            b.lower = t;
        } else {
            b.upper = t;
        }
    }
    Ok(b)
}

fn check_epsilon(epsilon: f64) -> Result<(), CoreError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Config(format!("epsilon must be positive, got {epsilon}")))
    }
}

/// `max_u P_{b(u)} ‖h_{b(u),u}‖² / σ_u²` over the given users.
pub fn balance_upper_bound(channels: &ChannelSet, topology: &Topology, users: impl IntoIterator<Item = usize>) -> f64 {
    users
        .into_iter()
        .map(|u| {
            let b = topology.bs_of_user(u);
            topology.p_max(b) * channels.h(b, u).norm_squared() / topology.sigma2(u)
        })
        .fold(0.0, f64::max)
}

fn feasible(problem: &ConicProblem, what: &str, t: f64) -> Result<bool, CoreError> {
    match check_feasibility(problem) {
        Ok(Feasibility::Feasible) => Ok(true),
        Ok(Feasibility::Infeasible) => Ok(false),
        Err(mcbf_conic::ConicError::Indeterminate { iterations, residuals }) => {
            warn!("{what} at t = {t:.6e} undecided after {iterations} iterations ({residuals:?}); treated as infeasible");
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}

/// Minimum-power solve at the last feasible level, stepping down by `ε/4`
/// (at most four times) when the solver stalls.
fn resolve_below<T>(
    t_low: f64,
    epsilon: f64,
    what: &str,
    mut attempt: impl FnMut(f64) -> Result<(T, ConicSolution), CoreError>,
) -> Result<(f64, (T, ConicSolution)), CoreError> {
    let mut t = t_low;
    for k in 0..=4 {
        let (x, sol) = attempt(t)?;
        match require_optimal(&sol, what) {
            Ok(()) => return Ok((t, (x, sol))),
            Err(e) if k == 4 || t == 0.0 => return Err(e),
            Err(e) => warn!("{e}; retrying below t = {t:.6e}"),
        }
        t = (t - 0.25 * epsilon).max(0.0);
    }
    unreachable!()
}

/// Result of a balancing run (network-wide or one cell).
#[derive(Debug, Clone)]
pub struct BalanceOutcome {
    /// Midpoint of the final bracket of the relaxed problem.
    pub t_relaxed: f64,
    pub bisection: Bisection,
    /// Beamformers (rank-one extraction or randomization) for the groups
    /// covered by the run.
    pub solution: BeamformingSolution,
    /// Ranks of the relaxed covariances at the last feasible level.
    pub ranks: Vec<usize>,
    pub randomized: bool,
    /// Minimum SINR of `solution` under the run's own interference model
    /// (for per-cell runs: caps at their limits, or none).
    pub t_design: f64,
}

/// Centralized balancing: bisection over the SDP feasibility problem, then
/// the minimum-power point at the last feasible level.
pub fn bisect_balance<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    epsilon: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<BalanceOutcome, CoreError> {
    check_epsilon(epsilon)?;
    let hi = balance_upper_bound(channels, topology, 0..topology.num_users());
    let bisection = bisect(0.0, hi, epsilon, |t| {
        feasible(&assemble_feasibility(channels, topology, t).problem, "balancing feasibility", t)
    })?;
    let (t_low, (sdp, sol)) = resolve_below(bisection.lower, epsilon, "balancing re-solve", |t| {
        let sdp = assemble_min_power_at(channels, topology, t);
        let sol = solve(&sdp.problem)?;
        Ok((sdp, sol))
    })?;
    let covs: Vec<CMatrix> = sdp.vars.iter().map(|&v| sol.matrix(v).clone()).collect();
    let groups: Vec<usize> = (0..topology.num_groups()).collect();
    let relaxed = extract_rank_one(groups.clone(), covs, RANK_TOL, t_low)?;
    let ranks = relaxed.ranks.clone();
    let (solution, randomized) = if relaxed.has_all_beamformers() {
        (relaxed, false)
    } else {
        let sets = candidate_sets(&relaxed.covariances, candidates, rng);
        let gr = balance_gaussian_randomization(channels, topology, &sets, epsilon)?;
        (BeamformingSolution::from_beamformers(groups, gr.beamformers, ranks.clone(), gr.t), true)
    };
    let mut solution = solution;
    let t_design = achieved_min_sinr(topology, channels, &solution)?;
    solution.objective = t_design;
    Ok(BalanceOutcome {
        t_relaxed: bisection.midpoint(),
        bisection,
        solution,
        ranks,
        randomized,
        t_design,
    })
}

/// Chosen randomization candidate for balancing.
#[derive(Debug, Clone)]
pub struct BalanceGr {
    pub index: usize,
    /// Largest level shown feasible for the chosen directions.
    pub t: f64,
    pub powers: Vec<f64>,
    pub beamformers: Vec<CVector>,
}

fn solve_power_lp(problem: &ConicProblem, n: usize) -> Result<Option<Vec<f64>>, CoreError> {
    let sol = solve(problem)?;
    match sol.status {
        Status::Optimal => Ok(Some(sol.scalars[..n].iter().map(|p| p.max(0.0)).collect())),
        Status::Infeasible => Ok(None),
        s => {
            warn!("balancing LP ended with status {s}; treated as infeasible");
            Ok(None)
        }
    }
}

/// Minimum total power meeting SINR level `t` with fixed unit directions
/// (one per group, network-wide) under the per-BS power limits.
pub fn network_balance_lp(
    channels: &ChannelSet,
    topology: &Topology,
    t: f64,
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
        let mut e = LinExpr::new();
        for k in 0..ng {
            let gk = gain(channels.h(topology.bs_of_group(k), u), &directions[k]);
            let c = if k == g { gk } else { -t * gk };
            if c != 0.0 {
                e.add_scalar(vars[k], c);
            }
        }
        p.add_constraint(e, Relation::Ge, t * topology.sigma2(u));
    }
    for b in 0..topology.num_bs() {
        let mut e = LinExpr::new();
        for g in topology.groups_of_bs(b) {
            e.add_scalar(vars[g], 1.0);
        }
        p.add_constraint(e, Relation::Le, topology.p_max(b));
    }
    solve_power_lp(&p, ng)
}

/// Per-cell version: incoming interference at its caps (or ignored), outgoing
/// interference within the caps, BS power limit. `directions` follow
/// `topology.groups_of_bs(b)`.
pub fn cell_balance_lp(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    ici: IciModel<'_>,
    t: f64,
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
        let mut e = LinExpr::new();
        for (k, &v) in vars.iter().enumerate() {
            let gk = gain(channels.h(b, u), &directions[k]);
            let c = if k == gi { gk } else { -t * gk };
            if c != 0.0 {
                e.add_scalar(v, c);
            }
        }
        let incoming: f64 = match ici {
            IciModel::Fixed(theta) => index.into_user(u).iter().map(|&k| theta[k]).sum(),
            _ => 0.0,
        };
        p.add_constraint(e, Relation::Ge, t * (topology.sigma2(u) + incoming));
    }
    if let IciModel::Fixed(theta) = ici {
        for k in index.outgoing(b) {
            let u = index.pair(k).user;
            let mut e = LinExpr::new();
            for (i, &v) in vars.iter().enumerate() {
                e.add_scalar(v, gain(channels.h(b, u), &directions[i]));
            }
            p.add_constraint(e, Relation::Le, theta[k] + CAP_SLACK);
        }
    }
    let mut e = LinExpr::new();
    for &v in &vars {
        e.add_scalar(v, 1.0);
    }
    p.add_constraint(e, Relation::Le, topology.p_max(b));
    solve_power_lp(&p, groups.len())
}

/// For every candidate set, bisection over the power LP; keeps the set with
/// the largest level (ties: lowest index). A candidate only gets a full
/// bisection if it is feasible at the current best level.
pub fn select_balance_candidate(
    sets: &[Vec<CVector>],
    hi: f64,
    epsilon: f64,
    mut lp: impl FnMut(f64, &[CVector]) -> Result<Option<Vec<f64>>, CoreError>,
) -> Result<Option<BalanceGr>, CoreError> {
    check_epsilon(epsilon)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, dirs) in sets.iter().enumerate() {
        let lo = match best {
            Some((_, t)) if t > 0.0 => {
                if lp(t, dirs)?.is_none() {
                    continue;
                }
                t
            }
            _ => 0.0,
        };
        let b = bisect(lo, hi, epsilon, |t| Ok::<_, CoreError>(lp(t, dirs)?.is_some()))?;
        if best.is_none_or(|(_, t)| b.lower > t) {
            best = Some((i, b.lower));
        }
    }
    let Some((index, t)) = best else {
        return Ok(None);
    };
    if t < epsilon {
        warn!("best randomization candidate only reaches t = {t:.3e}");
    }
    let powers = lp(t, &sets[index])?.unwrap_or_else(|| vec![0.0; sets[index].len()]);
    let beamformers = sets[index]
        .iter()
        .zip(&powers)
        .map(|(d, &p)| d * Complex64::new(p.sqrt(), 0.0))
        .collect();
    Ok(Some(BalanceGr {
        index,
        t,
        powers,
        beamformers,
    }))
}

/// Network-wide randomization for balancing.
pub fn balance_gaussian_randomization(
    channels: &ChannelSet,
    topology: &Topology,
    sets: &[Vec<CVector>],
    epsilon: f64,
) -> Result<BalanceGr, CoreError> {
    let hi = balance_upper_bound(channels, topology, 0..topology.num_users());
    select_balance_candidate(sets, hi, epsilon, |t, d| network_balance_lp(channels, topology, t, d))?
        .ok_or_else(|| CoreError::Config("no randomization candidates were drawn".into()))
}

/// Per-cell randomization with fixed caps (or none).
pub fn local_balance_gr(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    ici: IciModel<'_>,
    sets: &[Vec<CVector>],
    epsilon: f64,
) -> Result<BalanceGr, CoreError> {
    let hi = balance_upper_bound(channels, topology, topology.users_of_bs(b));
    select_balance_candidate(sets, hi, epsilon, |t, d| cell_balance_lp(b, channels, topology, index, ici, t, d))?
        .ok_or_else(|| CoreError::Config("no randomization candidates were drawn".into()))
}

/// Per-cell SINR of user `u` under the cell's own interference model.
fn cell_design_sinr(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    ici: IciModel<'_>,
    solution: &BeamformingSolution,
    u: usize,
) -> f64 {
    let g = topology.group_of_user(u);
    let h = channels.h(b, u);
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (i, &k) in solution.groups.iter().enumerate() {
        let p = match &solution.beamformers[i] {
            Some(w) => gain(h, w),
            None => crate::network::trace_gain(channels.hh(b, u), &solution.covariances[i]),
        };
        if k == g {
            signal = p;
        } else {
            interference += p;
        }
    }
    let incoming: f64 = match ici {
        IciModel::Fixed(theta) => index.into_user(u).iter().map(|&k| theta[k]).sum(),
        _ => 0.0,
    };
    signal / (topology.sigma2(u) + incoming + interference)
}

fn run_local<R: Rng + ?Sized>(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    ici: IciModel<'_>,
    epsilon: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<BalanceOutcome, CoreError> {
    check_epsilon(epsilon)?;
    let users = topology.users_of_bs(b);
    let hi = balance_upper_bound(channels, topology, users.iter().copied());
    let bisection = bisect(0.0, hi, epsilon, |t| {
        let cell = assemble_local_balance(b, channels, topology, index, ici, t, false);
        feasible(&cell.problem, "local balancing feasibility", t)
    })?;
    let what = format!("local balancing re-solve at BS {b}");
    let (t_low, (cell, sol)) = resolve_below(bisection.lower, epsilon, &what, |t| {
        let cell = assemble_local_balance(b, channels, topology, index, ici, t, true);
        let sol = solve(&cell.problem)?;
        Ok((cell, sol))
    })?;
    let covs: Vec<CMatrix> = cell.vars.iter().map(|&v| sol.matrix(v).clone()).collect();
    let relaxed = extract_rank_one(cell.groups.clone(), covs, RANK_TOL, t_low)?;
    let ranks = relaxed.ranks.clone();
    let (mut solution, randomized) = if relaxed.has_all_beamformers() {
        (relaxed, false)
    } else {
        let sets = candidate_sets(&relaxed.covariances, candidates, rng);
        let gr = local_balance_gr(b, channels, topology, index, ici, &sets, epsilon)?;
        (
            BeamformingSolution::from_beamformers(cell.groups.clone(), gr.beamformers, ranks.clone(), gr.t),
            true,
        )
    };
    let t_design = users
        .iter()
        .map(|&u| cell_design_sinr(b, channels, topology, index, ici, &solution, u))
        .fold(f64::INFINITY, f64::min);
    solution.objective = t_design;
    Ok(BalanceOutcome {
        t_relaxed: bisection.midpoint(),
        bisection,
        solution,
        ranks,
        randomized,
        t_design,
    })
}

/// Cell `b` maximizes its own minimum SINR with incoming interference at
/// the caps and its outgoing interference kept within them.
#[allow(clippy::too_many_arguments)]
pub fn local_balance<R: Rng + ?Sized>(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    theta_cap: &[f64],
    epsilon: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<BalanceOutcome, CoreError> {
    if theta_cap.len() != index.len() || theta_cap.iter().any(|&t| !(t >= 0.0)) {
        return Err(CoreError::Config("interference caps must be nonnegative, one per pair".into()));
    }
    run_local(b, channels, topology, index, IciModel::Fixed(theta_cap), epsilon, candidates, rng)
}

/// Cell `b` balances its own users as if there were no other cells.
pub fn uncoordinated_balance<R: Rng + ?Sized>(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    epsilon: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<BalanceOutcome, CoreError> {
    let index = IciIndex::new(topology);
    run_local(b, channels, topology, &index, IciModel::Ignore, epsilon, candidates, rng)
}

/// Every cell's local result combined, with the minimum SINR re-evaluated
/// under the true network interference.
#[derive(Debug, Clone)]
pub struct NetworkBalance {
    pub cells: Vec<BalanceOutcome>,
    pub solution: BeamformingSolution,
    pub achieved: f64,
}

fn combine(topology: &Topology, channels: &ChannelSet, cells: Vec<BalanceOutcome>) -> Result<NetworkBalance, CoreError> {
    let parts: Vec<BeamformingSolution> = cells.iter().map(|c| c.solution.clone()).collect();
    let mut solution = BeamformingSolution::merge(&parts);
    let achieved = achieved_min_sinr(topology, channels, &solution)?;
    solution.objective = achieved;
    Ok(NetworkBalance {
        cells,
        solution,
        achieved,
    })
}

/// Distributed balancing with the same cap `level` on every pair.
pub fn distributed_balance<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    level: f64,
    epsilon: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<NetworkBalance, CoreError> {
    let index = IciIndex::new(topology);
    let caps = vec![level; index.len()];
    let cells = (0..topology.num_bs())
        .map(|b| local_balance(b, channels, topology, &index, &caps, epsilon, candidates, rng))
        .collect::<Result<Vec<_>, _>>()?;
    combine(topology, channels, cells)
}

/// Interference-blind baseline over all cells.
pub fn uncoordinated_network<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    epsilon: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<NetworkBalance, CoreError> {
    let cells = (0..topology.num_bs())
        .map(|b| uncoordinated_balance(b, channels, topology, epsilon, candidates, rng))
        .collect::<Result<Vec<_>, _>>()?;
    combine(topology, channels, cells)
}
