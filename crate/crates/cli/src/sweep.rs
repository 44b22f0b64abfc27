use std::time::Instant;

use mcbf_core::backhaul::centralized_signaling_load;
use mcbf_core::balancing::{bisect_balance, distributed_balance, uncoordinated_network};
use mcbf_core::distributed::{
    run_admm, run_primal_decomposition, solve_fixed_theta, solve_nulling, AdmmSettings, ConvergenceTrace, Coupling,
    DistributedOutcome, PdSettings, StepSchedule,
};
use mcbf_core::{
    achieved_min_sinr, build_topology, sample_channels, solve_centralized, solve_orthogonal, ChannelSet, CoreError,
    PowerMinOutcome, Topology,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::scenario::{ScenarioConfig, Scheme, SweepPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Infeasible,
    Error,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Infeasible => "infeasible",
            RunStatus::Error => "error",
        }
    }
}

/// Outcome of one scheme on one trial at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub point: usize,
    pub trial: usize,
    pub gamma_db: f64,
    pub d_db: f64,
    pub p_max: f64,
    pub scheme: Scheme,
    pub theta: Option<f64>,
    pub status: RunStatus,
    /// Sum power (W) for power minimization, achieved minimum SINR for
    /// balancing.
    pub objective: Option<f64>,
    /// Relaxation value: a lower bound on power or an upper bound on SINR.
    pub bound: Option<f64>,
    pub rank_one: Option<bool>,
    /// Sum of the relaxed covariance ranks over the number of groups.
    pub avg_rank: Option<f64>,
    pub randomized: bool,
    pub iterations: usize,
    pub converged: bool,
    pub signaling: u64,
    pub wall_ms: f64,
    pub message: String,
}

impl Record {
    pub const CSV_HEADER: [&'static str; 18] = [
        "point", "trial", "gamma_db", "d_db", "p_max", "scheme", "theta", "status", "objective", "bound", "rank_one",
        "avg_rank", "randomized", "iterations", "converged", "signaling", "wall_ms", "message",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub point: usize,
    pub trial: usize,
    pub scheme: Scheme,
    pub theta: Option<f64>,
    pub trace: ConvergenceTrace,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub records: Vec<Record>,
    pub traces: Vec<TraceEntry>,
}

impl SweepResult {
    pub fn errors(&self) -> usize {
        self.records.iter().filter(|r| r.status == RunStatus::Error).count()
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channel seed of a trial; shared by every point and scheme so comparisons
/// are paired.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    splitmix64(seed ^ splitmix64(trial as u64))
}

fn run_seed(channel_seed: u64, point: usize, scheme: Scheme, theta_index: usize) -> u64 {
    let tag = ((point as u64) << 24) ^ ((scheme as u64) << 12) ^ theta_index as u64;
    splitmix64(channel_seed ^ splitmix64(tag))
}

struct Job {
    point: SweepPoint,
    trial: usize,
    scheme: Scheme,
    theta: Option<(usize, f64)>,
}

struct Summary {
    objective: f64,
    bound: Option<f64>,
    ranks: Vec<usize>,
    randomized: bool,
    iterations: usize,
    converged: bool,
    signaling: u64,
    trace: Option<ConvergenceTrace>,
}

fn from_power_min(out: PowerMinOutcome, signaling: u64) -> Summary {
    Summary {
        objective: out.solution.sum_power(),
        bound: Some(out.sdr_power),
        ranks: out.sdr_ranks,
        randomized: out.randomized,
        iterations: 1,
        converged: true,
        signaling,
        trace: None,
    }
}

fn from_distributed(out: DistributedOutcome, keep_trace: bool) -> Summary {
    Summary {
        objective: out.solution.sum_power(),
        bound: Some(out.relaxed_power),
        ranks: out.ranks,
        randomized: out.randomized,
        iterations: out.iterations,
        converged: out.converged,
        signaling: out.log.total() as u64,
        trace: keep_trace.then_some(out.trace),
    }
}

fn run_scheme(
    cfg: &ScenarioConfig,
    topo: &Topology,
    ch: &ChannelSet,
    scheme: Scheme,
    theta: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Summary, CoreError> {
    let gr = cfg.gr_budget;
    let central_load = centralized_signaling_load(cfg.bs as u64, cfg.users as u64, cfg.antennas as u64);
    let pd = |coupling| PdSettings {
        max_iters: cfg.iters,
        schedule: StepSchedule::Fixed(cfg.step),
        candidates: gr,
        coupling,
        ..PdSettings::default()
    };
    Ok(match scheme {
        Scheme::Centralized => from_power_min(solve_centralized(ch, topo, gr, rng)?, central_load),
        Scheme::Orthogonal => from_power_min(solve_orthogonal(ch, topo, gr, rng)?, 0),
        Scheme::PrimalDecomp => from_distributed(run_primal_decomposition(ch, topo, &pd(Coupling::PerPair), rng)?, true),
        Scheme::CommonTheta => from_distributed(run_primal_decomposition(ch, topo, &pd(Coupling::Common), rng)?, true),
        Scheme::Admm => {
            let settings = AdmmSettings {
                max_iters: cfg.iters,
                rho: cfg.rho,
                candidates: gr,
                ..AdmmSettings::default()
            };
            from_distributed(run_admm(ch, topo, &settings, rng)?, true)
        }
        Scheme::Nulling => from_distributed(solve_nulling(ch, topo, gr, rng)?, false),
        Scheme::FixedTheta => from_distributed(solve_fixed_theta(ch, topo, theta.unwrap_or(0.0), gr, rng)?, false),
        Scheme::BalanceCentralized => {
            let out = bisect_balance(ch, topo, cfg.epsilon, gr, rng)?;
            Summary {
                objective: achieved_min_sinr(topo, ch, &out.solution)?,
                bound: Some(out.t_relaxed),
                ranks: out.ranks,
                randomized: out.randomized,
                iterations: out.bisection.calls.len(),
                converged: true,
                signaling: central_load,
                trace: None,
            }
        }
        Scheme::BalanceDistributed | Scheme::BalanceUncoordinated => {
            let out = if scheme == Scheme::BalanceDistributed {
                distributed_balance(ch, topo, theta.unwrap_or(0.0), cfg.epsilon, gr, rng)?
            } else {
                uncoordinated_network(ch, topo, cfg.epsilon, gr, rng)?
            };
            Summary {
                objective: out.achieved,
                bound: None,
                ranks: out.cells.iter().flat_map(|c| c.ranks.iter().copied()).collect(),
                randomized: out.cells.iter().any(|c| c.randomized),
                iterations: out.cells.iter().map(|c| c.bisection.calls.len()).sum(),
                converged: true,
                signaling: 0,
                trace: None,
            }
        }
    })
}

fn classify(e: &CoreError) -> RunStatus {
    match e {
        CoreError::InfeasibleTarget(_) | CoreError::Initialization { .. } | CoreError::RandomizationFailed { .. } => {
            RunStatus::Infeasible
        }
        _ => RunStatus::Error,
    }
}

fn run_job(cfg: &ScenarioConfig, job: &Job) -> (Record, Option<TraceEntry>) {
    let theta = job.theta.map(|(_, t)| t);
    let channel_seed = trial_seed(cfg.seed, job.trial);
    let mut record = Record {
        point: job.point.index,
        trial: job.trial,
        gamma_db: job.point.gamma_db,
        d_db: job.point.d_db,
        p_max: job.point.p_max,
        scheme: job.scheme,
        theta,
        status: RunStatus::Ok,
        objective: None,
        bound: None,
        rank_one: None,
        avg_rank: None,
        randomized: false,
        iterations: 0,
        converged: false,
        signaling: 0,
        wall_ms: 0.0,
        message: String::new(),
    };
    let topo = match build_topology(&cfg.topology_config(&job.point)) {
        Ok(t) => t,
        Err(e) => {
            record.status = RunStatus::Error;
            record.message = e.to_string();
            return (record, None);
        }
    };
    let ch = sample_channels(&topo, channel_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(
        channel_seed,
        job.point.index,
        job.scheme,
        job.theta.map_or(0, |(i, _)| i),
    ));
    let start = Instant::now();
    let result = run_scheme(cfg, &topo, &ch, job.scheme, theta, &mut rng);
    record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(s) => {
            record.objective = Some(s.objective);
            record.bound = s.bound;
            if !s.ranks.is_empty() {
                record.rank_one = Some(s.ranks.iter().all(|&r| r == 1));
                record.avg_rank = Some(s.ranks.iter().sum::<usize>() as f64 / s.ranks.len() as f64);
            }
            record.randomized = s.randomized;
            record.iterations = s.iterations;
            record.converged = s.converged;
            record.signaling = s.signaling;
            let trace = s.trace.map(|trace| TraceEntry {
                point: record.point,
                trial: record.trial,
                scheme: record.scheme,
                theta,
                trace,
            });
            (record, trace)
        }
        Err(e) => {
            log::debug!("{} trial {} point {}: {e}", job.scheme, job.trial, job.point.index);
            record.status = classify(&e);
            record.message = e.to_string();
            (record, None)
        }
    }
}

/// Runs every (point, trial, scheme, θ) combination in parallel. Records come
/// back ordered by point, trial, scheme (as listed) and θ (as listed).
pub fn run_sweep(cfg: &ScenarioConfig) -> Result<SweepResult, CliError> {
    let mut jobs = Vec::new();
    for point in cfg.points() {
        for trial in 0..cfg.trials {
            for &scheme in &cfg.schemes {
                if scheme.uses_theta_grid() {
                    for (i, &t) in cfg.theta_grid.iter().enumerate() {
                        jobs.push(Job {
                            point,
                            trial,
                            scheme,
                            theta: Some((i, t)),
                        });
                    }
                } else {
                    jobs.push(Job {
                        point,
                        trial,
                        scheme,
                        theta: None,
                    });
                }
            }
        }
    }
    let results: Vec<(Record, Option<TraceEntry>)> = jobs.par_iter().map(|j| run_job(cfg, j)).collect();
    let mut out = SweepResult::default();
    for (r, t) in results {
        out.records.push(r);
        out.traces.extend(t);
    }
    Ok(out)
}

/// Averages over the feasible trials of one (point, scheme, θ) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub point: usize,
    pub gamma_db: f64,
    pub d_db: f64,
    pub p_max: f64,
    pub scheme: Scheme,
    pub theta: Option<f64>,
    pub trials: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub errors: usize,
    pub mean_objective: Option<f64>,
    pub rank_one: usize,
    /// Mean of `avg_rank` over the trials that were not rank-one.
    pub mean_higher_rank: Option<f64>,
    pub mean_signaling: Option<f64>,
    pub mean_wall_ms: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: [&'static str; 15] = [
        "point", "gamma_db", "d_db", "p_max", "scheme", "theta", "trials", "feasible", "infeasible", "errors",
        "mean_objective", "rank_one", "mean_higher_rank", "mean_signaling", "mean_wall_ms",
    ];
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Groups records by (point, scheme, θ) in first-appearance order.
pub fn summarize(records: &[Record]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Scheme, Option<u64>)> = Vec::new();
    for r in records {
        let k = (r.point, r.scheme, r.theta.map(f64::to_bits));
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(point, scheme, theta)| {
            let cell: Vec<&Record> = records
                .iter()
                .filter(|r| r.point == point && r.scheme == scheme && r.theta.map(f64::to_bits) == theta)
                .collect();
            let ok: Vec<&&Record> = cell.iter().filter(|r| r.status == RunStatus::Ok).collect();
            let first = cell[0];
            SummaryRow {
                point,
                gamma_db: first.gamma_db,
                d_db: first.d_db,
                p_max: first.p_max,
                scheme,
                theta: first.theta,
                trials: cell.len(),
                feasible: ok.len(),
                infeasible: cell.iter().filter(|r| r.status == RunStatus::Infeasible).count(),
                errors: cell.iter().filter(|r| r.status == RunStatus::Error).count(),
                mean_objective: mean(ok.iter().filter_map(|r| r.objective)),
                rank_one: ok.iter().filter(|r| r.rank_one == Some(true)).count(),
                mean_higher_rank: mean(ok.iter().filter(|r| r.rank_one == Some(false)).filter_map(|r| r.avg_rank)),
                mean_signaling: mean(ok.iter().map(|r| r.signaling as f64)),
                mean_wall_ms: mean(cell.iter().map(|r| r.wall_ms)).unwrap_or(0.0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(trial_seed(0, 0), trial_seed(0, 1));
        assert_ne!(trial_seed(0, 0), trial_seed(1, 0));
    }

    #[test]
    fn means() {
        assert_eq!(mean([1.0, 2.0, 6.0].into_iter()), Some(3.0));
        assert_eq!(mean(std::iter::empty()), None);
    }
}
