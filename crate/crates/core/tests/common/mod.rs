#![allow(dead_code)]

use mcbf_core::{build_topology, Topology, TopologyConfig};

pub fn db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

/// `{B, G, U, A}` with γ and d given in dB.
pub fn topology(bs: usize, groups: usize, users: usize, antennas: usize, gamma_db: f64, d_db: f64) -> Topology {
    build_topology(&TopologyConfig::new(bs, groups, users, antennas).gamma(db(gamma_db)).d(db(d_db))).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
