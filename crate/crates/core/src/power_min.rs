//! Centralized sum-power minimization: solve the relaxed QoS SDP, extract
//! rank-one beamformers or fall back to Gaussian randomization.

use log::debug;
use mcbf_conic::{solve, ConicSolution, Status, RANK_TOL};
use rand::Rng;

use crate::assemble::{assemble_qos_sdp, NetworkSdp};
use crate::error::CoreError;
use crate::network::{orthogonal_equivalent_target, BeamformingSolution, ChannelSet, Topology};
use crate::randomization::{candidate_power_lp, candidate_sets, extract_rank_one, select_best};

#[derive(Debug, Clone)]
pub struct PowerMinOutcome {
    /// Final design with beamformers for every group.
    pub solution: BeamformingSolution,
    /// Optimal value of the relaxation (lower bound on any design).
    pub sdr_power: f64,
    /// Ranks of the relaxed covariances.
    pub sdr_ranks: Vec<usize>,
    /// Whether Gaussian randomization was needed.
    pub randomized: bool,
    /// Feasible candidates out of the budget (0 when not randomized).
    pub feasible_candidates: usize,
}

pub(crate) fn require_optimal(sol: &ConicSolution, what: &str) -> Result<(), CoreError> {
    match sol.status {
        Status::Optimal => Ok(()),
        Status::Infeasible => Err(CoreError::InfeasibleTarget(format!("{what} is infeasible"))),
        s => Err(CoreError::Numerical(format!(
            "{what} ended with status {s} after {} iterations (residuals {:?})",
            sol.iterations, sol.residuals
        ))),
    }
}

/// Solves the relaxation and returns its covariances (with rank-one
/// beamformers attached when every covariance is rank one).
pub fn solve_relaxed_qos(channels: &ChannelSet, topology: &Topology) -> Result<(BeamformingSolution, NetworkSdp, ConicSolution), CoreError> {
    let sdp = assemble_qos_sdp(channels, topology);
    let sol = solve(&sdp.problem)?;
    require_optimal(&sol, "QoS relaxation")?;
    let covariances = sdp.vars.iter().map(|&v| sol.matrix(v).clone()).collect();
    let relaxed = extract_rank_one((0..topology.num_groups()).collect(), covariances, RANK_TOL, sol.objective)?;
    Ok((relaxed, sdp, sol))
}

/// Centralized power minimization with `candidates` randomization draws
/// when the relaxation is not rank one.
pub fn solve_centralized<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    candidates: usize,
    rng: &mut R,
) -> Result<PowerMinOutcome, CoreError> {
    let (relaxed, _, _) = solve_relaxed_qos(channels, topology)?;
    let sdr_power = relaxed.objective;
    let sdr_ranks = relaxed.ranks.clone();
    if relaxed.has_all_beamformers() {
        let mut solution = relaxed;
        solution.objective = solution.sum_power();
        return Ok(PowerMinOutcome {
            solution,
            sdr_power,
            sdr_ranks,
            randomized: false,
            feasible_candidates: 0,
        });
    }
    debug!("relaxation ranks {:?}; randomizing with {candidates} draws", relaxed.ranks);
    let sets = candidate_sets(&relaxed.covariances, candidates, rng);
    let best = select_best(&sets, |dirs| candidate_power_lp(channels, topology, dirs))?;
    let Some(best) = best else {
        return Err(CoreError::RandomizationFailed {
            candidates,
            relaxed: Box::new(relaxed),
        });
    };
    let total: f64 = best.powers.iter().sum();
    let mut solution = BeamformingSolution::from_beamformers(
        (0..topology.num_groups()).collect(),
        best.beamformers,
        relaxed.ranks.clone(),
        total,
    );
    solution.ranks = relaxed.ranks;
    Ok(PowerMinOutcome {
        solution,
        sdr_power,
        sdr_ranks,
        randomized: true,
        feasible_candidates: best.feasible,
    })
}

/// Orthogonal-access baseline: every cell is solved alone on its own share of
/// the resources, with targets raised to `(1 + γ)^B − 1`. The reported power
/// is the sum over cells.
pub fn solve_orthogonal<R: Rng + ?Sized>(
    channels: &ChannelSet,
    topology: &Topology,
    candidates: usize,
    rng: &mut R,
) -> Result<PowerMinOutcome, CoreError> {
    let nb = topology.num_bs();
    let mut parts = Vec::with_capacity(nb);
    let mut sdr_power = 0.0;
    let mut randomized = false;
    let mut feasible_candidates = 0;
    for b in 0..nb {
        let users = topology.users_of_bs(b);
        let mut cell_topo = topology.single_cell(b);
        for (i, &u) in users.iter().enumerate() {
            cell_topo.set_gamma(i, orthogonal_equivalent_target(topology.gamma(u), nb))?;
        }
        let h = users.iter().map(|&u| channels.h(b, u).clone()).collect();
        let cell_ch = ChannelSet::from_vectors(&cell_topo, vec![h])?;
        let mut out = solve_centralized(&cell_ch, &cell_topo, candidates, rng)?;
        out.solution.groups = topology.groups_of_bs(b);
        sdr_power += out.sdr_power;
        randomized |= out.randomized;
        feasible_candidates += out.feasible_candidates;
        parts.push(out.solution);
    }
    let mut solution = BeamformingSolution::merge(&parts);
    solution.objective = solution.sum_power();
    let sdr_ranks = solution.ranks.clone();
    Ok(PowerMinOutcome {
        solution,
        sdr_power,
        sdr_ranks,
        randomized,
        feasible_candidates,
    })
}
