//! Distributed power minimization over the backhaul: primal decomposition
//! with a projected-subgradient master, ADMM consensus on local copies of
//! the interference levels, and the fixed-level special cases.
//!
//! Every BS keeps its own replica of the interference levels it touches.
//! Replicas are only ever changed by pure functions of exchanged data, so
//! both ends of a coupled pair hold bit-identical values.

use std::io::{self, Write};

use log::{debug, warn};
use mcbf_conic::{solve, CMatrix, ConicSolution, Status, RANK_TOL};
use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;

use crate::assemble::{assemble_admm_local, assemble_subproblem, CellSdp};
use crate::backhaul::{Backhaul, Message, MessageLog, Tag};
use crate::error::CoreError;
use crate::ici::IciIndex;
use crate::network::{BeamformingSolution, CVector, ChannelSet, Topology};
use crate::power_min::{require_optimal, solve_relaxed_qos};
use crate::randomization::{candidate_sets, cell_power_lp, extract_rank_one, DEFAULT_CANDIDATES};

/// Lower clamp keeping interference levels in the positive orthant.
pub const THETA_FLOOR: f64 = 1e-10;
pub const DEFAULT_STEP: f64 = 0.3;
pub const DEFAULT_RHO: f64 = 2.0;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const STOP_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_GROWTH: f64 = 2.0;

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Fixed(f64),
    /// `ς₀ / √(r + 1)`.
    Diminishing(f64),
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Fixed(DEFAULT_STEP)
    }
}

impl StepSchedule {
    pub fn step(self, r: usize) -> f64 {
        match self {
            StepSchedule::Fixed(s) => s,
            StepSchedule::Diminishing(s0) => s0 / ((r + 1) as f64).sqrt(),
        }
    }
}

/// `max(θ − ς s, floor)`.
pub fn master_step(theta: f64, s: f64, step: f64) -> f64 {
    (theta - step * s).max(THETA_FLOOR)
}

/// Projected subgradient step on every component.
pub fn master_update(theta: &[f64], s: &[f64], r: usize, schedule: StepSchedule) -> Vec<f64> {
    let step = schedule.step(r);
    theta.iter().zip(s).map(|(&t, &g)| master_step(t, g, step)).collect()
}

/// `s = λ − μ`.
pub fn subgradient(lambda: f64, mu: f64) -> f64 {
    lambda - mu
}

/// Average of the two owners' copies.
pub fn admm_global_update(copy_a: f64, copy_b: f64) -> f64 {
    0.5 * (copy_a + copy_b)
}

/// `ν + ρ(θ̃ − θ)` with `θ` the mean of the two copies, written so that the
/// two owners' updates are exact negatives of each other.
pub fn admm_dual_update(nu: f64, own_copy: f64, other_copy: f64, rho: f64) -> f64 {
    nu + rho * (0.5 * (own_copy - other_copy))
}

/// Result of one BS's subproblem.
#[derive(Debug, Clone)]
pub struct LocalSolve {
    pub bs: usize,
    /// Relaxed cell sum power.
    pub objective: f64,
    /// Cell covariances, with beamformers when all are rank one.
    pub solution: BeamformingSolution,
    /// `(pair, λ)` for every pair whose victim this BS serves.
    pub lambda: Vec<(usize, f64)>,
    /// `(pair, μ)` for every pair where this BS interferes.
    pub mu: Vec<(usize, f64)>,
}

/// Sensitivities of a solved subproblem with respect to its interference
/// levels: `λ` from the SINR rows (scaled by the user's target, as θ enters
/// the right-hand side multiplied by γ) and `μ` from the cap rows.
pub fn extract_subgradient(
    cell: &CellSdp,
    solution: &ConicSolution,
    topology: &Topology,
    index: &IciIndex,
) -> Result<(Vec<(usize, f64)>, Vec<(usize, f64)>), CoreError> {
    if solution.status != Status::Optimal {
        return Err(CoreError::State(format!(
            "duals requested from a {} subproblem",
            solution.status
        )));
    }
    if solution.duals.len() != cell.problem.num_constraints() {
        return Err(CoreError::State("subproblem solution carries no duals".into()));
    }
    let mut lambda = Vec::new();
    for (&u, &row) in cell.users.iter().zip(&cell.sinr_rows) {
        let y = solution.dual(row).max(0.0);
        for k in index.into_user(u) {
            lambda.push((k, topology.gamma(u) * y));
        }
    }
    lambda.sort_unstable_by_key(|p| p.0);
    let mu = cell
        .cap_pairs
        .iter()
        .zip(&cell.cap_rows)
        .map(|(&k, &row)| (k, (-solution.dual(row)).max(0.0)))
        .collect();
    Ok((lambda, mu))
}

fn cell_solution(cell: &CellSdp, sol: &ConicSolution, rank_tol: f64) -> Result<BeamformingSolution, CoreError> {
    let covs = cell.vars.iter().map(|&v| sol.matrix(v).clone()).collect();
    let power: f64 = cell.vars.iter().map(|&v| sol.matrix(v).trace().re).sum();
    extract_rank_one(cell.groups.clone(), covs, rank_tol, power)
}

/// Solves subproblem `b` at `theta`; `None` when it is infeasible or the
/// solver stalls short of optimality.
pub fn solve_local(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    theta: &[f64],
    rank_tol: f64,
) -> Result<Option<LocalSolve>, CoreError> {
    let cell = assemble_subproblem(b, channels, topology, index, theta);
    let sol = solve(&cell.problem)?;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => return Ok(None),
        other => {
            warn!("subproblem {b} ended with status {other:?}; treating the levels as infeasible");
            return Ok(None);
        }
    }
    let (lambda, mu) = extract_subgradient(&cell, &sol, topology, index)?;
    let solution = cell_solution(&cell, &sol, rank_tol)?;
    Ok(Some(LocalSolve {
        bs: b,
        objective: sol.objective,
        solution,
        lambda,
        mu,
    }))
}

/// Network-wide subgradient assembled from every BS's local duals.
pub fn network_subgradient(index: &IciIndex, parts: &[LocalSolve]) -> Vec<f64> {
    let mut s = vec![0.0; index.len()];
    for p in parts {
        for &(k, l) in &p.lambda {
            s[k] += l;
        }
        for &(k, m) in &p.mu {
            s[k] -= m;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Relaxed sum power of this iteration's local solves.
    pub sum_power: f64,
    /// Best feasible relaxed sum power so far.
    pub best_sum_power: f64,
    /// `‖θ⁽ʳ⁺¹⁾ − θ⁽ʳ⁾‖∞` (primal decomposition) or `‖θ̃ − θ‖∞` (ADMM).
    pub residual: f64,
    pub scalars_exchanged: usize,
    /// Power of a design meeting the true SINR constraints at this
    /// iteration, when one is available without randomization.
    pub feasible_power: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub const CSV_HEADER: &'static str =
        "iteration,sum_power,best_sum_power,residual,scalars_exchanged,feasible_power";

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            let fp = r.feasible_power.map(|p| format!("{p:.8e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.8e},{:.8e},{:.8e},{},{}",
                r.iteration, r.sum_power, r.best_sum_power, r.residual, r.scalars_exchanged, fp
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DistributedOutcome {
    /// Final network design with beamformers for every group.
    pub solution: BeamformingSolution,
    /// Relaxed sum power at the final interference levels.
    pub relaxed_power: f64,
    /// Final interference levels in [`IciIndex`] order.
    pub theta: Vec<f64>,
    pub trace: ConvergenceTrace,
    pub log: MessageLog,
    pub iterations: usize,
    pub converged: bool,
    pub randomized: bool,
    pub ranks: Vec<usize>,
    /// Per-iteration consensus state (ADMM only).
    pub admm: Vec<AdmmIterate>,
}

/// Consensus state after one ADMM iteration, in [`IciIndex`] order. Index 0
/// of each pair is the interferer's entry, index 1 the victim's BS.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmIterate {
    pub copies: Vec<[f64; 2]>,
    /// Mean of the two copies before the floor is applied.
    pub mean: Vec<f64>,
    /// Global levels each side stores.
    pub global: Vec<[f64; 2]>,
    pub nu: Vec<[f64; 2]>,
}

/// How the interference levels are coupled in the subgradient scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// One level per directed pair.
    PerPair,
    /// A single level shared by every pair.
    Common,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdSettings {
    pub max_iters: usize,
    pub schedule: StepSchedule,
    /// Initial level for every pair; the victim's noise power when `None`.
    pub theta0: Option<f64>,
    pub tol: f64,
    pub rank_tol: f64,
    pub candidates: usize,
    pub coupling: Coupling,
    /// Per-iteration growth bound `θ' ≤ c θ` applied after the projection.
    pub max_growth: Option<f64>,
}

impl Default for PdSettings {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            schedule: StepSchedule::default(),
            theta0: None,
            tol: STOP_TOL,
            rank_tol: RANK_TOL,
            candidates: DEFAULT_CANDIDATES,
            coupling: Coupling::PerPair,
            max_growth: Some(DEFAULT_MAX_GROWTH),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmSettings {
    pub max_iters: usize,
    pub rho: f64,
    pub theta0: Option<f64>,
    pub tol: f64,
    pub rank_tol: f64,
    pub candidates: usize,
    /// Restore a feasible design at every iteration for the trace.
    pub track_feasible: bool,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            rho: DEFAULT_RHO,
            theta0: None,
            tol: STOP_TOL,
            rank_tol: RANK_TOL,
            candidates: DEFAULT_CANDIDATES,
            track_feasible: true,
        }
    }
}

fn initial_theta(topology: &Topology, index: &IciIndex, theta0: Option<f64>) -> Vec<f64> {
    index
        .pairs()
        .iter()
        .map(|p| theta0.unwrap_or_else(|| topology.sigma2(p.user)).max(THETA_FLOOR))
        .collect()
}

/// Per-BS replicas: entries for pairs a BS does not touch are NaN.
fn replicate(theta: &[f64], topology: &Topology, index: &IciIndex) -> Vec<Vec<f64>> {
    (0..topology.num_bs())
        .map(|b| {
            let mut r = vec![f64::NAN; theta.len()];
            for k in index.touching(b) {
                r[k] = theta[k];
            }
            r
        })
        .collect()
}

/// Canonical values, checking that both ends of every pair agree bitwise.
fn canonical(replicas: &[Vec<f64>], index: &IciIndex) -> Result<Vec<f64>, CoreError> {
    index
        .pairs()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let a = replicas[p.from][k];
            let b = replicas[p.serving][k];
            if a.to_bits() == b.to_bits() {
                Ok(a)
            } else {
                Err(CoreError::State(format!("replicas of pair {k} diverged: {a} vs {b}")))
            }
        })
        .collect()
}

fn all_beamformers(parts: &[LocalSolve]) -> Option<f64> {
    parts
        .iter()
        .all(|p| p.solution.has_all_beamformers())
        .then(|| parts.iter().map(|p| p.solution.sum_power()).sum())
}

fn solve_all(
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    replicas: &[Vec<f64>],
    rank_tol: f64,
) -> Result<Result<Vec<LocalSolve>, usize>, CoreError> {
    let mut parts = Vec::with_capacity(topology.num_bs());
    for (b, theta) in replicas.iter().enumerate() {
        match solve_local(b, channels, topology, index, theta, rank_tol)? {
            Some(p) => parts.push(p),
            None => return Ok(Err(b)),
        }
    }
    Ok(Ok(parts))
}

/// Dual exchange plan: λ to the interfering BS, μ to the serving BS.
fn dual_plan(parts: &[LocalSolve], index: &IciIndex, num_bs: usize) -> Vec<Message> {
    let mut plan = Vec::new();
    for p in parts {
        for m in 0..num_bs {
            if m == p.bs {
                continue;
            }
            let lambda: Vec<(usize, f64)> =
                p.lambda.iter().copied().filter(|&(k, _)| index.pair(k).from == m).collect();
            if !lambda.is_empty() {
                plan.push(Message::new(p.bs, m, Tag::DualLambda, lambda));
            }
            let mu: Vec<(usize, f64)> =
                p.mu.iter().copied().filter(|&(k, _)| index.pair(k).serving == m).collect();
            if !mu.is_empty() {
                plan.push(Message::new(p.bs, m, Tag::DualMu, mu));
            }
        }
    }
    plan
}

/// Each BS's local share of the common-level subgradient, sent to every other BS.
fn common_plan(parts: &[LocalSolve], num_bs: usize) -> Vec<Message> {
    let mut plan = Vec::new();
    for p in parts {
        let share = local_common_share(p);
        for m in (0..num_bs).filter(|&m| m != p.bs) {
            plan.push(Message::new(p.bs, m, Tag::DualLambda, vec![(0, share)]));
        }
    }
    plan
}

fn local_common_share(p: &LocalSolve) -> f64 {
    p.lambda.iter().map(|x| x.1).sum::<f64>() - p.mu.iter().map(|x| x.1).sum::<f64>()
}

/// Subgradient entries each BS can form from its own duals plus its inbox.
fn local_subgradients(
    parts: &[LocalSolve],
    inbox: &[Vec<Message>],
    index: &IciIndex,
    coupling: Coupling,
) -> Vec<Vec<f64>> {
    parts
        .iter()
        .map(|p| {
            let b = p.bs;
            let mut lambda = vec![f64::NAN; index.len()];
            let mut mu = vec![f64::NAN; index.len()];
            match coupling {
                Coupling::PerPair => {
                    for &(k, v) in &p.lambda {
                        lambda[k] = v;
                    }
                    for &(k, v) in &p.mu {
                        mu[k] = v;
                    }
                    for m in &inbox[b] {
                        for &(k, v) in &m.payload {
                            match m.tag {
                                Tag::DualLambda => lambda[k] = v,
                                Tag::DualMu => mu[k] = v,
                                _ => {}
                            }
                        }
                    }
                    let mut s = vec![f64::NAN; index.len()];
                    for k in index.touching(b) {
                        s[k] = subgradient(lambda[k], mu[k]);
                    }
                    s
                }
                Coupling::Common => {
                    // shares summed in BS order so every agent gets the same bits
                    let mut shares = vec![0.0; parts.len()];
                    shares[b] = local_common_share(p);
                    for m in &inbox[b] {
                        shares[m.from] = m.payload[0].1;
                    }
                    let total: f64 = shares.iter().sum();
                    let mut s = vec![f64::NAN; index.len()];
                    for k in index.touching(b) {
                        s[k] = total;
                    }
                    s
                }
            }
        })
        .collect()
}

fn step_replicas(replicas: &[Vec<f64>], subgrads: &[Vec<f64>], step: f64, growth: Option<f64>) -> Vec<Vec<f64>> {
    replicas
        .iter()
        .zip(subgrads)
        .map(|(r, s)| {
            r.iter()
                .zip(s)
                .map(|(&t, &g)| {
                    if t.is_nan() {
                        t
                    } else {
                        let n = master_step(t, g, step);
                        growth.map_or(n, |c| n.min(c * t))
                    }
                })
                .collect()
        })
        .collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Primal decomposition: every iteration the BSs solve their subproblems,
/// exchange duals and take a projected subgradient step on their replicas.
/// The best iterate (lowest relaxed sum power) is kept and finalized with
/// rank-one extraction or distributed randomization.
pub fn run_primal_decomposition<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    settings: &PdSettings,
    rng: &mut R,
) -> Result<DistributedOutcome, CoreError> {
    let index = IciIndex::new(topology);
    let nb = topology.num_bs();
    let mut bus = Backhaul::new(nb);
    let mut theta = initial_theta(topology, &index, settings.theta0);
    if settings.coupling == Coupling::Common {
        let first = theta.first().copied().unwrap_or(THETA_FLOOR);
        theta.iter_mut().for_each(|t| *t = first);
    }
    let mut replicas = replicate(&theta, topology, &index);
    let mut trace = ConvergenceTrace::default();
    let mut best: Option<(f64, Vec<f64>, Vec<LocalSolve>)> = None;
    let mut prev: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> = None;
    let mut scale = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    for r in 0..settings.max_iters.max(1) {
        let mut halvings = 0;
        let parts = loop {
            match solve_all(channels, topology, &index, &replicas, settings.rank_tol)? {
                Ok(parts) => break parts,
                Err(b) => {
                    let Some((old, s, step)) = &prev else {
                        return Err(CoreError::Initialization { bs: b });
                    };
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(CoreError::Numerical(format!(
                            "subproblem {b} stayed infeasible after {MAX_HALVINGS} step halvings"
                        )));
                    }
                    scale *= 0.5;
                    warn!("subproblem {b} infeasible at iteration {r}; halving the step");
                    replicas = step_replicas(old, s, step * scale, settings.max_growth);
                }
            }
        };
        iterations = r + 1;
        let current = canonical(&replicas, &index)?;
        let sum_power: f64 = parts.iter().map(|p| p.objective).sum();
        let feasible_power = all_beamformers(&parts);
        if best.as_ref().is_none_or(|(p, _, _)| sum_power < *p) {
            best = Some((sum_power, current.clone(), parts.clone()));
        }
        let best_sum_power = best.as_ref().map_or(sum_power, |b| b.0);

        let round = bus.next_round();
        let plan = match settings.coupling {
            Coupling::PerPair => dual_plan(&parts, &index, nb),
            Coupling::Common => common_plan(&parts, nb),
        };
        let inbox = bus.run_round(plan)?;
        let exchanged = bus.log().round_total(round);
        let subgrads = local_subgradients(&parts, &inbox, &index, settings.coupling);
        let step = settings.schedule.step(r);
        let next = step_replicas(&replicas, &subgrads, step * scale, settings.max_growth);
        let next_theta = canonical(&next, &index)?;
        let residual = sup_diff(&next_theta, &current);
        trace.rows.push(TraceRow {
            iteration: r,
            sum_power,
            best_sum_power,
            residual,
            scalars_exchanged: exchanged,
            feasible_power,
        });
        debug!("pd iteration {r}: power {sum_power:.6e}, residual {residual:.3e}");
        prev = Some((replicas, subgrads, step));
        replicas = next;
        if residual <= settings.tol {
            converged = true;
            break;
        }
    }

    let (relaxed_power, theta, parts) = best.expect("at least one iteration");
    finalize(
        channels,
        topology,
        &index,
        &mut bus,
        Finalize {
            theta,
            parts,
            relaxed_power,
            trace,
            iterations,
            converged,
            candidates: settings.candidates,
        },
        rng,
    )
}

struct Finalize {
    theta: Vec<f64>,
    parts: Vec<LocalSolve>,
    relaxed_power: f64,
    trace: ConvergenceTrace,
    iterations: usize,
    converged: bool,
    candidates: usize,
}

/// Rank bit exchange, then eigen-extraction or distributed randomization.
fn finalize<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    bus: &mut Backhaul,
    f: Finalize,
    rng: &mut R,
) -> Result<DistributedOutcome, CoreError> {
    let nb = topology.num_bs();
    let mut plan = Vec::new();
    for p in &f.parts {
        let bit = if p.solution.has_all_beamformers() { 1.0 } else { 0.0 };
        for m in (0..nb).filter(|&m| m != p.bs) {
            plan.push(Message::new(p.bs, m, Tag::RankBit, vec![(0, bit)]));
        }
    }
    let inbox = bus.run_round(plan)?;
    let all_rank_one = f.parts.iter().all(|p| p.solution.has_all_beamformers())
        && inbox.iter().flatten().all(|m| m.payload[0].1 == 1.0);
    let merged = BeamformingSolution::merge(&f.parts.iter().map(|p| p.solution.clone()).collect::<Vec<_>>());
    let ranks = merged.ranks.clone();

    let (solution, randomized) = if all_rank_one {
        let mut s = merged;
        s.objective = s.sum_power();
        (s, false)
    } else {
        let cells = f
            .parts
            .iter()
            .map(|p| {
                distributed_gaussian_randomization(
                    p.bs,
                    channels,
                    topology,
                    index,
                    &p.solution.covariances,
                    &f.theta,
                    f.candidates,
                    rng,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let Some(i) = select_common_candidate(&cells, bus)? else {
            return Err(CoreError::RandomizationFailed {
                candidates: f.candidates,
                relaxed: Box::new(merged),
            });
        };
        let parts: Vec<BeamformingSolution> = cells
            .iter()
            .zip(&f.parts)
            .map(|(c, p)| {
                let powers = c.powers[i].as_ref().expect("selected candidate is feasible");
                let beams = c.directions[i]
                    .iter()
                    .zip(powers)
                    .map(|(d, &q)| d * Complex64::new(q.sqrt(), 0.0))
                    .collect();
                BeamformingSolution::from_beamformers(p.solution.groups.clone(), beams, p.solution.ranks.clone(), 0.0)
            })
            .collect();
        let mut s = BeamformingSolution::merge(&parts);
        s.objective = s.sum_power();
        (s, true)
    };
    Ok(DistributedOutcome {
        solution,
        relaxed_power: f.relaxed_power,
        theta: f.theta,
        trace: f.trace,
        log: bus.log().clone(),
        iterations: f.iterations,
        converged: f.converged,
        randomized,
        ranks,
        admm: Vec::new(),
    })
}

/// Randomization candidates of one BS with their per-cell power LPs at fixed
/// interference levels.
#[derive(Debug, Clone)]
pub struct CellCandidates {
    pub bs: usize,
    /// `directions[i][j]`: candidate `i` for the `j`-th group of the BS.
    pub directions: Vec<Vec<CVector>>,
    /// Optimal powers per candidate, `None` where the LP is infeasible.
    pub powers: Vec<Option<Vec<f64>>>,
}

impl CellCandidates {
    pub fn total(&self, i: usize) -> f64 {
        self.powers[i].as_ref().map_or(f64::INFINITY, |p| p.iter().sum())
    }
}

/// Draws `candidates` direction sets from the BS's covariances and solves
/// the per-cell power LP for each with `theta` fixed.
#[allow(clippy::too_many_arguments)]
pub fn distributed_gaussian_randomization<R: Rng + ?Sized>(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    covariances: &[CMatrix],
    theta: &[f64],
    candidates: usize,
    rng: &mut R,
) -> Result<CellCandidates, CoreError> {
    let directions = candidate_sets(covariances, candidates, rng);
    let powers = directions
        .iter()
        .map(|d| cell_power_lp(b, channels, topology, index, theta, d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CellCandidates { bs: b, directions, powers })
}

/// Every BS shares its per-candidate cell power with every other BS; all
/// then pick the same index with the lowest network total (ties: lowest
/// index). `None` if no index is feasible at every BS.
pub fn select_common_candidate(cells: &[CellCandidates], bus: &mut Backhaul) -> Result<Option<usize>, CoreError> {
    let count = cells.first().map_or(0, |c| c.powers.len());
    let mut plan = Vec::new();
    for c in cells {
        let payload: Vec<(usize, f64)> = (0..count).map(|i| (i, c.total(i))).collect();
        for m in (0..bus.num_bs()).filter(|&m| m != c.bs) {
            plan.push(Message::new(c.bs, m, Tag::GrPower, payload.clone()));
        }
    }
    let inbox = bus.run_round(plan)?;
    // each BS rebuilds the table from its inbox; the choice is identical everywhere
    let choices: Vec<Option<usize>> = cells
        .iter()
        .map(|c| {
            let mut table = vec![vec![f64::INFINITY; count]; bus.num_bs()];
            table[c.bs] = (0..count).map(|i| c.total(i)).collect();
            for m in &inbox[c.bs] {
                for &(i, v) in &m.payload {
                    table[m.from][i] = v;
                }
            }
            let mut best: Option<(f64, usize)> = None;
            for i in 0..count {
                let total: f64 = table.iter().map(|row| row[i]).sum();
                if total.is_finite() && best.is_none_or(|(t, _)| total < t) {
                    best = Some((total, i));
                }
            }
            best.map(|x| x.1)
        })
        .collect();
    if choices.windows(2).any(|w| w[0] != w[1]) {
        return Err(CoreError::State(format!("BSs disagree on the candidate: {choices:?}")));
    }
    Ok(choices.first().copied().flatten())
}

/// Local ADMM step result at one BS.
#[derive(Debug, Clone)]
pub struct AdmmLocal {
    pub bs: usize,
    /// `(pair, θ̃)` for every touching pair.
    pub copies: Vec<(usize, f64)>,
    /// Relaxed cell sum power.
    pub power: f64,
}

pub fn solve_admm_local(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    theta: &[f64],
    nu: &[f64],
    rho: f64,
) -> Result<AdmmLocal, CoreError> {
    let cell = assemble_admm_local(b, channels, topology, index, theta, nu, rho);
    let sol = solve(&cell.problem)?;
    require_optimal(&sol, &format!("ADMM local step at BS {b}"))?;
    let power = cell.vars.iter().map(|&v| sol.matrix(v).trace().re).sum();
    let copies = cell.copy_pairs.iter().zip(&cell.copies).map(|(&k, &v)| (k, sol.scalar(v))).collect();
    Ok(AdmmLocal { bs: b, copies, power })
}

/// Subproblem `b` with the local copies pinned to the global levels; `None`
/// when those levels are infeasible for the cell.
pub fn admm_feasibility_restore(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    theta_global: &[f64],
    rank_tol: f64,
) -> Result<Option<LocalSolve>, CoreError> {
    solve_local(b, channels, topology, index, theta_global, rank_tol)
}

/// ADMM consensus: local augmented-Lagrangian steps, exchange of local
/// copies, averaging and dual updates. The final design is restored at the
/// last global levels every cell accepts.
pub fn run_admm<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    settings: &AdmmSettings,
    rng: &mut R,
) -> Result<DistributedOutcome, CoreError> {
    if !(settings.rho > 0.0) {
        return Err(CoreError::Config(format!("rho must be positive, got {}", settings.rho)));
    }
    let index = IciIndex::new(topology);
    let nb = topology.num_bs();
    let mut bus = Backhaul::new(nb);
    let theta0 = initial_theta(topology, &index, settings.theta0);
    let mut replicas = replicate(&theta0, topology, &index);
    // nu[b][k]: BS b's dual for its copy of pair k
    let mut nu: Vec<Vec<f64>> = replicas.iter().map(|r| r.iter().map(|t| if t.is_nan() { f64::NAN } else { 0.0 }).collect()).collect();
    let mut trace = ConvergenceTrace::default();
    let mut restored: Option<(f64, Vec<f64>, Vec<LocalSolve>)> = None;
    let mut best_feasible = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut prev_theta = theta0.clone();

    let restore = |theta: &[f64]| -> Result<Option<Vec<LocalSolve>>, CoreError> {
        let mut parts = Vec::with_capacity(nb);
        for b in 0..nb {
            match admm_feasibility_restore(b, channels, topology, &index, theta, settings.rank_tol)? {
                Some(p) => parts.push(p),
                None => return Ok(None),
            }
        }
        Ok(Some(parts))
    };

    for l in 0..settings.max_iters.max(1) {
        let locals = (0..nb)
            .map(|b| solve_admm_local(b, channels, topology, &index, &replicas[b], &nu[b], settings.rho))
            .collect::<Result<Vec<_>, _>>()?;
        let round = bus.next_round();
        let mut plan = Vec::new();
        for loc in &locals {
            for m in (0..nb).filter(|&m| m != loc.bs) {
                let payload: Vec<(usize, f64)> = loc
                    .copies
                    .iter()
                    .copied()
                    .filter(|&(k, _)| {
                        let p = index.pair(k);
                        (p.from == loc.bs && p.serving == m) || (p.serving == loc.bs && p.from == m)
                    })
                    .collect();
                if !payload.is_empty() {
                    plan.push(Message::new(loc.bs, m, Tag::LocalCopy, payload));
                }
            }
        }
        let inbox = bus.run_round(plan)?;
        let exchanged = bus.log().round_total(round);

        let mut residual: f64 = 0.0;
        let mut state = AdmmIterate {
            copies: vec![[f64::NAN; 2]; index.len()],
            mean: vec![f64::NAN; index.len()],
            global: vec![[f64::NAN; 2]; index.len()],
            nu: vec![[f64::NAN; 2]; index.len()],
        };
        for loc in &locals {
            let b = loc.bs;
            let mut other = vec![f64::NAN; index.len()];
            for m in &inbox[b] {
                for &(k, v) in &m.payload {
                    other[k] = v;
                }
            }
            for &(k, own) in &loc.copies {
                let p = index.pair(k);
                // canonical operand order: interferer's copy first
                let (a, c) = if p.from == b { (own, other[k]) } else { (other[k], own) };
                let mean = admm_global_update(a, c);
                replicas[b][k] = mean.max(THETA_FLOOR);
                nu[b][k] = admm_dual_update(nu[b][k], own, other[k], settings.rho);
                residual = residual.max((own - mean).abs());
                let side = usize::from(p.from != b);
                state.copies[k][side] = own;
                state.mean[k] = mean;
                state.global[k][side] = replicas[b][k];
                state.nu[k][side] = nu[b][k];
            }
        }
        history.push(state);
        let theta = canonical(&replicas, &index)?;
        let movement = theta.iter().zip(&prev_theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dual_residual = settings.rho * movement;
        prev_theta = theta.clone();
        let sum_power: f64 = locals.iter().map(|x| x.power).sum();

        let mut feasible_power = None;
        if settings.track_feasible || l + 1 == settings.max_iters || residual.max(dual_residual) <= settings.tol {
            if let Some(parts) = restore(&theta)? {
                let relaxed: f64 = parts.iter().map(|p| p.objective).sum();
                feasible_power = all_beamformers(&parts).or(Some(relaxed));
                best_feasible = best_feasible.min(relaxed);
                restored = Some((relaxed, theta.clone(), parts));
            }
        }
        trace.rows.push(TraceRow {
            iteration: l,
            sum_power,
            best_sum_power: best_feasible,
            residual,
            scalars_exchanged: exchanged,
            feasible_power,
        });
        debug!("admm iteration {l}: local power {sum_power:.6e}, residual {residual:.3e}");
        iterations = l + 1;
        if residual <= settings.tol && dual_residual <= settings.tol {
            converged = true;
            break;
        }
    }

    if restored.as_ref().map(|r| &r.1) != Some(&canonical(&replicas, &index)?) {
        let theta = canonical(&replicas, &index)?;
        if let Some(parts) = restore(&theta)? {
            let relaxed = parts.iter().map(|p| p.objective).sum();
            restored = Some((relaxed, theta, parts));
        }
    }
    let Some((relaxed_power, theta, parts)) = restored else {
        return Err(CoreError::Numerical(
            "no ADMM iterate gave interference levels every cell could meet".into(),
        ));
    };
    let mut out = finalize(
        channels,
        topology,
        &index,
        &mut bus,
        Finalize {
            theta,
            parts,
            relaxed_power,
            trace,
            iterations,
            converged,
            candidates: settings.candidates,
        },
        rng,
    )?;
    out.admm = history;
    Ok(out)
}

/// Every BS solves its subproblem at the same fixed level for every pair,
/// with no iterative exchange. Level 0 is interference nulling.
pub fn solve_fixed_theta<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    level: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<DistributedOutcome, CoreError> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(CoreError::Config(format!("interference level must be finite and >= 0, got {level}")));
    }
    if level == 0.0 {
        return solve_nulling(channels, topology, candidates, rng);
    }
    let index = IciIndex::new(topology);
    let theta = vec![level; index.len()];
    let mut parts = Vec::new();
    for b in 0..topology.num_bs() {
        match solve_local(b, channels, topology, &index, &theta, RANK_TOL)? {
            Some(p) => parts.push(p),
            None => {
                return Err(CoreError::InfeasibleTarget(format!(
                    "BS {b} cannot meet its targets with interference level {level}"
                )))
            }
        }
    }
    let relaxed_power = parts.iter().map(|p| p.objective).sum();
    let mut bus = Backhaul::new(topology.num_bs());
    finalize(
        channels,
        topology,
        &index,
        &mut bus,
        Finalize {
            theta,
            parts,
            relaxed_power,
            trace: ConvergenceTrace::default(),
            iterations: 0,
            converged: true,
            candidates,
        },
        rng,
    )
}

/// Orthonormal basis (as columns) of the vectors orthogonal to every given
/// channel, from the eigenvectors of `Σ h hᴴ` with negligible eigenvalues.
pub fn null_space_basis(channels: &[&CVector], antennas: usize) -> CMatrix {
    let mut gram = CMatrix::zeros(antennas, antennas);
    for h in channels {
        gram += *h * h.adjoint();
    }
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * top.max(1e-300);
    let keep: Vec<usize> = (0..antennas).filter(|&i| eig.eigenvalues[i] <= tol).collect();
    CMatrix::from_fn(antennas, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

/// Interference nulling: each BS beamforms inside the null space of its
/// out-of-cell channels, which decouples the cells exactly.
pub fn solve_nulling<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    candidates: usize,
    rng: &mut R,
) -> Result<DistributedOutcome, CoreError> {
    let index = IciIndex::new(topology);
    let a = topology.antennas();
    let mut cells = Vec::new();
    let mut relaxed_power = 0.0;
    let mut randomized = false;
    for b in 0..topology.num_bs() {
        let out: Vec<&CVector> = topology.out_of_cell_users(b).into_iter().map(|u| channels.h(b, u)).collect();
        let basis = null_space_basis(&out, a);
        let dim = basis.ncols();
        if dim == 0 {
            return Err(CoreError::InfeasibleTarget(format!(
                "BS {b} has no spatial dimensions left after nulling {} out-of-cell users",
                out.len()
            )));
        }
        let users = topology.users_of_bs(b);
        let cell_topo = topology.single_cell(b).with_antennas(dim);
        let reduced: Vec<CVector> = users.iter().map(|&u| basis.adjoint() * channels.h(b, u)).collect();
        let cell_ch = ChannelSet::from_vectors(&cell_topo, vec![reduced])?;
        let (relaxed, _, _) = solve_relaxed_qos(&cell_ch, &cell_topo)?;
        relaxed_power += relaxed.objective;
        let groups = topology.groups_of_bs(b);
        let lift = |w: &CMatrix| &basis * w * basis.adjoint();
        let part = if relaxed.has_all_beamformers() {
            let beams = relaxed.beamformers.iter().flatten().map(|w| &basis * w).collect();
            BeamformingSolution::from_beamformers(groups, beams, relaxed.ranks.clone(), 0.0)
        } else {
            randomized = true;
            let sets = candidate_sets(&relaxed.covariances, candidates, rng);
            let best = crate::randomization::select_best(&sets, |d| {
                crate::randomization::candidate_power_lp(&cell_ch, &cell_topo, d)
            })?;
            let Some(best) = best else {
                let covs = relaxed.covariances.iter().map(lift).collect();
                return Err(CoreError::RandomizationFailed {
                    candidates,
                    relaxed: Box::new(BeamformingSolution::from_covariances(groups, covs, relaxed.ranks, relaxed.objective)),
                });
            };
            let beams = best.beamformers.iter().map(|w| &basis * w).collect();
            BeamformingSolution::from_beamformers(groups, beams, relaxed.ranks.clone(), 0.0)
        };
        cells.push(part);
    }
    let mut solution = BeamformingSolution::merge(&cells);
    solution.objective = solution.sum_power();
    let ranks = solution.ranks.clone();
    Ok(DistributedOutcome {
        solution,
        relaxed_power,
        theta: vec![0.0; index.len()],
        trace: ConvergenceTrace::default(),
        log: MessageLog::new(),
        iterations: 0,
        converged: true,
        randomized,
        ranks,
        admm: Vec::new(),
    })
}
