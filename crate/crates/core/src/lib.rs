//! Coordinated multicell multicast beamforming: network model, relaxed
//! problem assembly, centralized and distributed power minimization, SINR
//! balancing, and a backhaul message-passing harness.

pub mod assemble;
pub mod backhaul;
pub mod balancing;
pub mod distributed;
pub mod error;
pub mod ici;
pub mod network;
pub mod power_min;
pub mod randomization;

pub use error::CoreError;
pub use ici::{IciIndex, IciPair};
pub use network::{
    achieved_min_sinr, build_topology, evaluate_sinr, gain, orthogonal_equivalent_target, sample_channels,
    sum_power, BeamformingSolution, CVector, ChannelSet, Topology, TopologyConfig,
};
pub use power_min::{solve_centralized, solve_orthogonal, solve_relaxed_qos, PowerMinOutcome};
pub use randomization::DEFAULT_CANDIDATES;
