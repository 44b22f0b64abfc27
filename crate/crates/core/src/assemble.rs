//! Relaxed (SDR) problem assembly: network-wide QoS and balancing
//! feasibility SDPs, and the per-cell variants with fixed, capped or locally
//! optimized inter-cell interference.

use mcbf_conic::{CMatrix, ConicProblem, ConstraintId, LinExpr, MatrixVar, Relation, ScalarVar};

use crate::ici::IciIndex;
use crate::network::{ChannelSet, Topology};

fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Network-wide SDP over one covariance per group.
#[derive(Debug, Clone)]
pub struct NetworkSdp {
    pub problem: ConicProblem,
    /// Indexed by group.
    pub vars: Vec<MatrixVar>,
    /// Indexed by user.
    pub sinr_rows: Vec<ConstraintId>,
    /// Indexed by BS; empty for the QoS problem.
    pub power_rows: Vec<ConstraintId>,
}

/// `Tr(H_{b,u} W_g) − τ Σ_{k≠g} Tr(H_{b(k),u} W_k)` for user `u` of group `g`.
fn network_sinr_expr(topology: &Topology, channels: &ChannelSet, vars: &[MatrixVar], u: usize, tau: f64) -> LinExpr {
    let g = topology.group_of_user(u);
    let mut e = LinExpr::new();
    e.add_trace(vars[g], channels.hh(topology.bs_of_group(g), u).clone());
    if tau != 0.0 {
        for k in 0..topology.num_groups() {
            if k != g {
                e.add_trace_scaled(vars[k], channels.hh(topology.bs_of_group(k), u), -tau);
            }
        }
    }
    e
}

/// Minimize `Σ_g Tr(W_g)` subject to every user's linearized SINR constraint.
pub fn assemble_qos_sdp(channels: &ChannelSet, topology: &Topology) -> NetworkSdp {
    let a = topology.antennas();
    let mut problem = ConicProblem::new();
    let vars: Vec<MatrixVar> = (0..topology.num_groups()).map(|_| problem.add_matrix_var(a)).collect();
    for &v in &vars {
        problem.add_objective(LinExpr::new().trace(v, identity(a)));
    }
    let sinr_rows = (0..topology.num_users())
        .map(|u| {
            let gamma = topology.gamma(u);
            let e = network_sinr_expr(topology, channels, &vars, u, gamma);
            problem.add_constraint(e, Relation::Ge, gamma * topology.sigma2(u))
        })
        .collect();
    NetworkSdp {
        problem,
        vars,
        sinr_rows,
        power_rows: Vec::new(),
    }
}

/// Zero-objective feasibility problem: every user's SINR at least `t` under
/// per-BS power limits.
pub fn assemble_feasibility(channels: &ChannelSet, topology: &Topology, t: f64) -> NetworkSdp {
    let a = topology.antennas();
    let mut problem = ConicProblem::new();
    let vars: Vec<MatrixVar> = (0..topology.num_groups()).map(|_| problem.add_matrix_var(a)).collect();
    let sinr_rows = (0..topology.num_users())
        .map(|u| {
            let e = network_sinr_expr(topology, channels, &vars, u, t);
            problem.add_constraint(e, Relation::Ge, t * topology.sigma2(u))
        })
        .collect();
    let power_rows = (0..topology.num_bs())
        .map(|b| {
            let mut e = LinExpr::new();
            for g in topology.groups_of_bs(b) {
                e.add_trace(vars[g], identity(a));
            }
            problem.add_constraint(e, Relation::Le, topology.p_max(b))
        })
        .collect();
    NetworkSdp {
        problem,
        vars,
        sinr_rows,
        power_rows,
    }
}

/// How a per-cell problem treats inter-cell interference.
#[derive(Debug, Clone, Copy)]
pub enum IciModel<'a> {
    /// Ignore it entirely (no incoming terms, no caps).
    Ignore,
    /// Incoming interference fixed at, and outgoing capped by, the given
    /// per-pair values.
    Fixed(&'a [f64]),
    /// Local copies `θ̃` as scalar variables for every touching pair.
    Copies,
}

/// Per-cell SDP with its bookkeeping.
#[derive(Debug, Clone)]
pub struct CellSdp {
    pub problem: ConicProblem,
    pub bs: usize,
    /// Groups of this BS and their covariance variables.
    pub groups: Vec<usize>,
    pub vars: Vec<MatrixVar>,
    /// Users of this BS and their SINR rows.
    pub users: Vec<usize>,
    pub sinr_rows: Vec<ConstraintId>,
    /// Outgoing pairs and their cap rows.
    pub cap_pairs: Vec<usize>,
    pub cap_rows: Vec<ConstraintId>,
    /// Touching pairs and their local copies (ADMM only).
    pub copy_pairs: Vec<usize>,
    pub copies: Vec<ScalarVar>,
    pub power_row: Option<ConstraintId>,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    PerUser,
    Common(f64),
}

struct CellSpec<'a> {
    b: usize,
    target: Target,
    ici: IciModel<'a>,
    power_limit: bool,
    minimize_power: bool,
}

fn build_cell(channels: &ChannelSet, topology: &Topology, index: &IciIndex, spec: CellSpec<'_>) -> CellSdp {
    let b = spec.b;
    let a = topology.antennas();
    let groups = topology.groups_of_bs(b);
    let users = topology.users_of_bs(b);
    let mut problem = ConicProblem::new();
    let vars: Vec<MatrixVar> = groups.iter().map(|_| problem.add_matrix_var(a)).collect();
    let (copy_pairs, copies) = match spec.ici {
        IciModel::Copies => {
            let pairs = index.touching(b);
            let vars = pairs.iter().map(|_| problem.add_scalar_var()).collect();
            (pairs, vars)
        }
        _ => (Vec::new(), Vec::new()),
    };
    let copy_of = |k: usize| copies[copy_pairs.iter().position(|&p| p == k).expect("touching pair")];
    if spec.minimize_power {
        for &v in &vars {
            problem.add_objective(LinExpr::new().trace(v, identity(a)));
        }
    }

    let mut sinr_rows = Vec::with_capacity(users.len());
    for &u in &users {
        let tau = match spec.target {
            Target::PerUser => topology.gamma(u),
            Target::Common(t) => t,
        };
        let gi = groups.iter().position(|&g| g == topology.group_of_user(u)).unwrap();
        let hh = channels.hh(b, u);
        let mut e = LinExpr::new();
        e.add_trace(vars[gi], hh.clone());
        if tau != 0.0 {
            for (k, &v) in vars.iter().enumerate() {
                if k != gi {
                    e.add_trace_scaled(v, hh, -tau);
                }
            }
        }
        let mut rhs = tau * topology.sigma2(u);
        match spec.ici {
            IciModel::Ignore => {}
            IciModel::Fixed(theta) => {
                for k in index.into_user(u) {
                    rhs += tau * theta[k];
                }
            }
            IciModel::Copies => {
                for k in index.into_user(u) {
                    if tau != 0.0 {
                        e.add_scalar(copy_of(k), -tau);
                    }
                }
            }
        }
        sinr_rows.push(problem.add_constraint(e, Relation::Ge, rhs));
    }

    let mut cap_pairs = Vec::new();
    let mut cap_rows = Vec::new();
    if !matches!(spec.ici, IciModel::Ignore) {
        for k in index.outgoing(b) {
            let u = index.pair(k).user;
            let hh = channels.hh(b, u);
            let mut e = LinExpr::new();
            for &v in &vars {
                e.add_trace(v, hh.clone());
            }
            let rhs = match spec.ici {
                IciModel::Fixed(theta) => theta[k],
                _ => {
                    e.add_scalar(copy_of(k), -1.0);
                    0.0
                }
            };
            cap_pairs.push(k);
            cap_rows.push(problem.add_constraint(e, Relation::Le, rhs));
        }
    }

    let power_row = spec.power_limit.then(|| {
        let mut e = LinExpr::new();
        for &v in &vars {
            e.add_trace(v, identity(a));
        }
        problem.add_constraint(e, Relation::Le, topology.p_max(b))
    });

    CellSdp {
        problem,
        bs: b,
        groups,
        vars,
        users,
        sinr_rows,
        cap_pairs,
        cap_rows,
        copy_pairs,
        copies,
        power_row,
    }
}

/// Power minimization at BS `b` with incoming interference fixed at `theta`
/// and outgoing interference capped by `theta` (indexed by [`IciIndex`]).
pub fn assemble_subproblem(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    theta: &[f64],
) -> CellSdp {
    build_cell(
        channels,
        topology,
        index,
        CellSpec {
            b,
            target: Target::PerUser,
            ici: IciModel::Fixed(theta),
            power_limit: false,
            minimize_power: true,
        },
    )
}

/// Augmented-Lagrangian local step at BS `b`:
/// `Σ Tr(W) + νᵀ(θ̃ − θ) + (ρ/2)‖θ̃ − θ‖²` over the cell's feasible set, with
/// `theta` and `nu` indexed by [`IciIndex`] (`nu` holds this BS's duals).
pub fn assemble_admm_local(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    theta: &[f64],
    nu: &[f64],
    rho: f64,
) -> CellSdp {
    let mut cell = build_cell(
        channels,
        topology,
        index,
        CellSpec {
            b,
            target: Target::PerUser,
            ici: IciModel::Copies,
            power_limit: false,
            minimize_power: true,
        },
    );
    let mut e = LinExpr::new();
    let mut constant = 0.0;
    for (&k, &s) in cell.copy_pairs.iter().zip(&cell.copies) {
        e.add_scalar(s, nu[k] - rho * theta[k]);
        cell.problem.add_quadratic(s, rho);
        constant += -nu[k] * theta[k] + 0.5 * rho * theta[k] * theta[k];
    }
    cell.problem.add_objective(e);
    cell.problem.add_objective_constant(constant);
    cell
}

/// Per-cell balancing at common SINR level `t` under the BS power limit.
/// `Fixed(θ)` assumes incoming interference at its cap and enforces outgoing
/// caps; `Ignore` is the interference-blind design.
pub fn assemble_local_balance(
    b: usize,
    channels: &ChannelSet,
    topology: &Topology,
    index: &IciIndex,
    ici: IciModel<'_>,
    t: f64,
    minimize_power: bool,
) -> CellSdp {
    build_cell(
        channels,
        topology,
        index,
        CellSpec {
            b,
            target: Target::Common(t),
            ici,
            power_limit: true,
            minimize_power,
        },
    )
}

/// Network-wide balancing at level `t`, minimizing power (used to pick a
/// low-rank point among the feasible ones).
pub fn assemble_min_power_at(channels: &ChannelSet, topology: &Topology, t: f64) -> NetworkSdp {
    let mut sdp = assemble_feasibility(channels, topology, t);
    let a = topology.antennas();
    for &v in &sdp.vars {
        sdp.problem.add_objective(LinExpr::new().trace(v, identity(a)));
    }
    sdp
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_topology, sample_channels, TopologyConfig};

    #[test]
    fn qos_structure() {
        let t = build_topology(&TopologyConfig::new(1, 1, 1, 2)).unwrap();
        let sdp = assemble_qos_sdp(&sample_channels(&t, 0), &t);
        assert_eq!(sdp.problem.num_matrix_vars(), 1);
        assert_eq!(sdp.problem.num_constraints(), 1);

        let t = build_topology(&TopologyConfig::new(2, 4, 8, 12)).unwrap();
        let sdp = assemble_qos_sdp(&sample_channels(&t, 0), &t);
        assert_eq!(sdp.problem.num_matrix_vars(), 4);
        assert_eq!(sdp.problem.num_constraints(), 8);
        sdp.problem.validate().unwrap();
    }

    #[test]
    fn single_cell_subproblem_has_no_interference_terms() {
        let t = build_topology(&TopologyConfig::new(1, 2, 4, 3)).unwrap();
        let ch = sample_channels(&t, 1);
        let idx = IciIndex::new(&t);
        let sub = assemble_subproblem(0, &ch, &t, &idx, &[]);
        assert!(sub.cap_rows.is_empty());
        assert_eq!(sub.problem.num_constraints(), 4);
        let full = assemble_qos_sdp(&ch, &t);
        for (a, b) in sub.problem.constraints().iter().zip(full.problem.constraints()) {
            assert_eq!(a.rhs, b.rhs);
        }
    }

    #[test]
    fn admm_local_has_copies_for_touching_pairs() {
        let t = build_topology(&TopologyConfig::new(2, 2, 4, 3)).unwrap();
        let ch = sample_channels(&t, 2);
        let idx = IciIndex::new(&t);
        let theta = vec![1.0; idx.len()];
        let nu = vec![0.0; idx.len()];
        let local = assemble_admm_local(0, &ch, &t, &idx, &theta, &nu, 2.0);
        assert_eq!(local.copies.len(), 4);
        assert_eq!(local.cap_rows.len(), 2);
        assert!(local.problem.has_quadratic());
        local.problem.validate().unwrap();
    }
}
