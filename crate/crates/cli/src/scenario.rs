use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use mcbf_core::{build_topology, TopologyConfig};
use serde::{Deserialize, Serialize};
use toml::{Spanned, Value};

use crate::error::CliError;

/// Largest number of points a single sweep may expand to.
pub const MAX_SWEEP_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Centralized,
    PrimalDecomp,
    Admm,
    Nulling,
    #[serde(alias = "fixed-θ")]
    FixedTheta,
    #[serde(alias = "common-θ")]
    CommonTheta,
    Orthogonal,
    BalanceCentralized,
    BalanceDistributed,
    BalanceUncoordinated,
}

impl Scheme {
    pub const ALL: [Scheme; 10] = [
        Scheme::Centralized,
        Scheme::PrimalDecomp,
        Scheme::Admm,
        Scheme::Nulling,
        Scheme::FixedTheta,
        Scheme::CommonTheta,
        Scheme::Orthogonal,
        Scheme::BalanceCentralized,
        Scheme::BalanceDistributed,
        Scheme::BalanceUncoordinated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Centralized => "centralized",
            Scheme::PrimalDecomp => "primal-decomp",
            Scheme::Admm => "admm",
            Scheme::Nulling => "nulling",
            Scheme::FixedTheta => "fixed-theta",
            Scheme::CommonTheta => "common-theta",
            Scheme::Orthogonal => "orthogonal",
            Scheme::BalanceCentralized => "balance-centralized",
            Scheme::BalanceDistributed => "balance-distributed",
            Scheme::BalanceUncoordinated => "balance-uncoordinated",
        }
    }

    /// Runs once per entry of the θ grid.
    pub fn uses_theta_grid(self) -> bool {
        matches!(self, Scheme::FixedTheta | Scheme::BalanceDistributed)
    }

    /// Objective is a minimum SINR rather than a sum power.
    pub fn is_balancing(self) -> bool {
        matches!(
            self,
            Scheme::BalanceCentralized | Scheme::BalanceDistributed | Scheme::BalanceUncoordinated
        )
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.replace('θ', "theta");
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// Validated scenario. Decibel fields are kept in dB; conversion happens when
/// a topology is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub bs: usize,
    pub groups: usize,
    pub users: usize,
    pub antennas: usize,
    pub gamma_db: Vec<f64>,
    pub d_db: Vec<f64>,
    pub sigma2: f64,
    pub p_max: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub iters: usize,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub gr_budget: usize,
    pub theta_grid: Vec<f64>,
}

/// One combination of the swept parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub gamma_db: f64,
    pub d_db: f64,
    pub p_max: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ScenarioConfig {
    /// Cartesian product of the sweeps, γ varying slowest.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &gamma_db in &self.gamma_db {
            for &d_db in &self.d_db {
                for &p_max in &self.p_max {
                    out.push(SweepPoint {
                        index: out.len(),
                        gamma_db,
                        d_db,
                        p_max,
                    });
                }
            }
        }
        out
    }

    pub fn topology_config(&self, p: &SweepPoint) -> TopologyConfig {
        TopologyConfig::new(self.bs, self.groups, self.users, self.antennas)
            .gamma(db_to_linear(p.gamma_db))
            .d(db_to_linear(p.d_db))
            .sigma2(self.sigma2)
            .p_max(p.p_max)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    network: Spanned<RawNetwork>,
    run: Spanned<RawRun>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    bs: Spanned<usize>,
    groups: Spanned<usize>,
    users: Spanned<usize>,
    antennas: Spanned<usize>,
    gamma_db: Option<Spanned<Value>>,
    d_db: Option<Spanned<Value>>,
    sigma2: Option<Spanned<f64>>,
    p_max: Option<Spanned<Value>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    schemes: Spanned<Vec<Scheme>>,
    iters: Option<Spanned<usize>>,
    trials: Option<Spanned<usize>>,
    seed: Option<u64>,
    step: Option<Spanned<f64>>,
    rho: Option<Spanned<f64>>,
    epsilon: Option<Spanned<f64>>,
    gr_budget: Option<Spanned<usize>>,
    theta_grid: Option<Spanned<Vec<f64>>>,
}

/// Expands `"a:step:b"` (inclusive, optional trailing unit) into a list.
pub fn expand_range(spec: &str, unit: &str) -> Result<Vec<f64>, String> {
    let body = spec.trim();
    let body = match body.strip_suffix(unit) {
        Some(b) if !unit.is_empty() => b.trim_end(),
        _ => body,
    };
    let parts: Vec<&str> = body.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number in range `{spec}`"));
    match parts.as_slice() {
        [v] => Ok(vec![num(v)?]),
        [a, step, b] => {
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if !(step > 0.0) || !a.is_finite() || !b.is_finite() {
                return Err(format!("range `{spec}` needs a positive step and finite ends"));
            }
            if b < a {
                return Err(format!("range `{spec}` ends before it starts"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            if n >= MAX_SWEEP_POINTS {
                return Err(format!("range `{spec}` expands to more than {MAX_SWEEP_POINTS} points"));
            }
            Ok((0..=n).map(|i| a + i as f64 * step).collect())
        }
        _ => Err(format!("expected `start:step:stop` or a single value, got `{spec}`")),
    }
}

struct Source<'a> {
    path: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn error(&self, span: Range<usize>, field: &str, message: impl fmt::Display) -> CliError {
        let before = &self.text[..span.start.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        CliError::Scenario {
            path: self.path.to_string(),
            message: format!("line {line}, column {column}: `{field}` {message}"),
        }
    }

    fn sweep(&self, v: Option<Spanned<Value>>, field: &str, unit: &str, default: f64) -> Result<Vec<f64>, CliError> {
        let Some(v) = v else { return Ok(vec![default]) };
        let span = v.span();
        let values = match v.into_inner() {
            Value::Integer(i) => vec![i as f64],
            Value::Float(x) => vec![x],
            Value::String(s) => expand_range(&s, unit).map_err(|e| self.error(span.clone(), field, e))?,
            Value::Array(items) => items
                .into_iter()
                .map(|x| match x {
                    Value::Integer(i) => Ok(i as f64),
                    Value::Float(x) => Ok(x),
                    other => Err(self.error(span.clone(), field, format!("list entries must be numbers, got {other}"))),
                })
                .collect::<Result<_, _>>()?,
            other => return Err(self.error(span, field, format!("must be a number, list or range string, got {other}"))),
        };
        if values.is_empty() {
            return Err(self.error(span, field, "is empty"));
        }
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(self.error(span, field, format!("contains non-finite value {x}")));
        }
        Ok(values)
    }
}

fn positive(src: &Source, v: Option<Spanned<f64>>, field: &str, default: f64) -> Result<f64, CliError> {
    match v {
        None => Ok(default),
        Some(s) if *s.get_ref() > 0.0 && s.get_ref().is_finite() => Ok(*s.get_ref()),
        Some(s) => Err(src.error(s.span(), field, format!("must be positive, got {}", s.get_ref()))),
    }
}

fn count(src: &Source, v: Spanned<usize>, field: &str) -> Result<usize, CliError> {
    if *v.get_ref() == 0 {
        return Err(src.error(v.span(), field, "must be at least 1"));
    }
    Ok(v.into_inner())
}

/// Parses and validates scenario text; `path` only labels error messages.
pub fn parse_scenario_str(text: &str, path: &str) -> Result<ScenarioConfig, CliError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| CliError::Scenario {
        path: path.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let src = Source { path, text };
    let net_span = raw.network.span();
    let net = raw.network.into_inner();
    let run_span = raw.run.span();
    let run = raw.run.into_inner();

    let bs = count(&src, net.bs, "bs")?;
    let groups = count(&src, net.groups, "groups")?;
    let users = count(&src, net.users, "users")?;
    let antennas = count(&src, net.antennas, "antennas")?;
    let gamma_db = src.sweep(net.gamma_db, "gamma_db", "dB", 0.0)?;
    let d_db = src.sweep(net.d_db, "d_db", "dB", 0.0)?;
    let sigma2 = positive(&src, net.sigma2, "sigma2", 1.0)?;
    let p_span = net.p_max.as_ref().map(|p| p.span());
    let p_max = src.sweep(net.p_max, "p_max", "W", 1.0)?;
    if let Some(p) = p_max.iter().find(|&&p| p <= 0.0) {
        return Err(src.error(p_span.unwrap_or(net_span.clone()), "p_max", format!("must be positive, got {p}")));
    }
    if let Err(e) = build_topology(&TopologyConfig::new(bs, groups, users, antennas)) {
        return Err(src.error(net_span, "network", e));
    }

    let schemes_span = run.schemes.span();
    let mut schemes = run.schemes.into_inner();
    if schemes.is_empty() {
        return Err(src.error(schemes_span, "schemes", "must list at least one scheme"));
    }
    let mut seen = Vec::new();
    schemes.retain(|s| {
        let new = !seen.contains(s);
        seen.push(*s);
        new
    });
    let theta_grid = match run.theta_grid {
        None => vec![0.1, 1.0, 10.0],
        Some(g) => {
            let span = g.span();
            let g = g.into_inner();
            if g.is_empty() || g.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return Err(src.error(span, "theta_grid", "must be a non-empty list of finite values >= 0"));
            }
            g
        }
    };
    let _ = run_span;

    Ok(ScenarioConfig {
        bs,
        groups,
        users,
        antennas,
        gamma_db,
        d_db,
        sigma2,
        p_max,
        schemes,
        iters: run.iters.map(|v| count(&src, v, "iters")).transpose()?.unwrap_or(100),
        trials: run.trials.map(|v| count(&src, v, "trials")).transpose()?.unwrap_or(20),
        seed: run.seed.unwrap_or(0),
        step: positive(&src, run.step, "step", 0.3)?,
        rho: positive(&src, run.rho, "rho", 2.0)?,
        epsilon: positive(&src, run.epsilon, "epsilon", 1e-3)?,
        gr_budget: run.gr_budget.map(|v| count(&src, v, "gr_budget")).transpose()?.unwrap_or(100),
        theta_grid,
    })
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Scenario {
        path: label.clone(),
        message: e.to_string(),
    })?;
    parse_scenario_str(&text, &label)
}
