//! Topology, Rayleigh channels with cell-separation attenuation, and SINR /
//! power evaluation of beamformer sets.

use mcbf_conic::{trace_product, CMatrix};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CoreError;

pub type CVector = DVector<Complex64>;

/// Scenario parameters with uniform per-user / per-BS values, all linear scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyConfig {
    pub bs: usize,
    pub groups: usize,
    pub users: usize,
    pub antennas: usize,
    pub gamma: f64,
    pub p_max: f64,
    pub sigma2: f64,
    pub d: f64,
}

impl TopologyConfig {
    /// `{B, G, U, A}` with γ = 1, P = 1 W, σ² = 1 and d = 1.
    pub fn new(bs: usize, groups: usize, users: usize, antennas: usize) -> Self {
        Self {
            bs,
            groups,
            users,
            antennas,
            gamma: 1.0,
            p_max: 1.0,
            sigma2: 1.0,
            d: 1.0,
        }
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn p_max(mut self, p: f64) -> Self {
        self.p_max = p;
        self
    }

    pub fn sigma2(mut self, s: f64) -> Self {
        self.sigma2 = s;
        self
    }

    pub fn d(mut self, d: f64) -> Self {
        self.d = d;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    num_bs: usize,
    antennas: usize,
    group_of_user: Vec<usize>,
    bs_of_group: Vec<usize>,
    gamma: Vec<f64>,
    p_max: Vec<f64>,
    sigma2: Vec<f64>,
    d: f64,
}

/// Round-robin layout: group `g` is served by BS `g mod B`, user `u` joins
/// group `u mod G`.
pub fn build_topology(cfg: &TopologyConfig) -> Result<Topology, CoreError> {
    let TopologyConfig {
        bs,
        groups,
        users,
        antennas,
        ..
    } = *cfg;
    if bs == 0 || groups == 0 || users == 0 || antennas == 0 {
        return Err(CoreError::Config(format!(
            "counts must be positive, got {{B,G,U,A}} = {{{bs},{groups},{users},{antennas}}}"
        )));
    }
    if groups % bs != 0 {
        return Err(CoreError::Config(format!(
            "G = {groups} is not divisible by B = {bs}"
        )));
    }
    if users % groups != 0 {
        return Err(CoreError::Config(format!(
            "U = {users} is not divisible by G = {groups}"
        )));
    }
    check_positive("gamma", cfg.gamma)?;
    check_positive("sigma2", cfg.sigma2)?;
    check_positive("p_max", cfg.p_max)?;
    if !(cfg.d >= 1.0) || !cfg.d.is_finite() {
        return Err(CoreError::Config(format!(
            "cell separation d must be a finite linear ratio >= 1, got {}",
            cfg.d
        )));
    }
    Ok(Topology {
        num_bs: bs,
        antennas,
        group_of_user: (0..users).map(|u| u % groups).collect(),
        bs_of_group: (0..groups).map(|g| g % bs).collect(),
        gamma: vec![cfg.gamma; users],
        p_max: vec![cfg.p_max; bs],
        sigma2: vec![cfg.sigma2; users],
        d: cfg.d,
    })
}

fn check_positive(name: &str, v: f64) -> Result<(), CoreError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl Topology {
    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn num_groups(&self) -> usize {
        self.bs_of_group.len()
    }

    pub fn num_users(&self) -> usize {
        self.group_of_user.len()
    }

    pub fn group_of_user(&self, u: usize) -> usize {
        self.group_of_user[u]
    }

    pub fn bs_of_group(&self, g: usize) -> usize {
        self.bs_of_group[g]
    }

    pub fn bs_of_user(&self, u: usize) -> usize {
        self.bs_of_group[self.group_of_user[u]]
    }

    pub fn groups_of_bs(&self, b: usize) -> Vec<usize> {
        (0..self.num_groups()).filter(|&g| self.bs_of_group[g] == b).collect()
    }

    pub fn users_of_group(&self, g: usize) -> Vec<usize> {
        (0..self.num_users()).filter(|&u| self.group_of_user[u] == g).collect()
    }

    pub fn users_of_bs(&self, b: usize) -> Vec<usize> {
        (0..self.num_users()).filter(|&u| self.bs_of_user(u) == b).collect()
    }

    /// Users served by some other BS.
    pub fn out_of_cell_users(&self, b: usize) -> Vec<usize> {
        (0..self.num_users()).filter(|&u| self.bs_of_user(u) != b).collect()
    }

    pub fn gamma(&self, u: usize) -> f64 {
        self.gamma[u]
    }

    pub fn sigma2(&self, u: usize) -> f64 {
        self.sigma2[u]
    }

    pub fn p_max(&self, b: usize) -> f64 {
        self.p_max[b]
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn set_gamma(&mut self, u: usize, gamma: f64) -> Result<(), CoreError> {
        check_positive("gamma", gamma)?;
        self.gamma[u] = gamma;
        Ok(())
    }

    pub fn set_gamma_all(&mut self, gamma: f64) -> Result<(), CoreError> {
        check_positive("gamma", gamma)?;
        self.gamma.iter_mut().for_each(|g| *g = gamma);
        Ok(())
    }

    pub fn set_sigma2_all(&mut self, sigma2: f64) -> Result<(), CoreError> {
        check_positive("sigma2", sigma2)?;
        self.sigma2.iter_mut().for_each(|s| *s = sigma2);
        Ok(())
    }

    pub fn set_p_max(&mut self, b: usize, p: f64) -> Result<(), CoreError> {
        check_positive("p_max", p)?;
        self.p_max[b] = p;
        Ok(())
    }

    pub fn set_p_max_all(&mut self, p: f64) -> Result<(), CoreError> {
        check_positive("p_max", p)?;
        self.p_max.iter_mut().for_each(|x| *x = p);
        Ok(())
    }

    /// Same layout with a different antenna count (for problems posed in a
    /// reduced coordinate system).
    pub(crate) fn with_antennas(mut self, antennas: usize) -> Topology {
        self.antennas = antennas;
        self
    }

    /// The same layout restricted to the users and groups of BS `b`, as a
    /// single-cell topology (used for orthogonal-resource baselines).
    pub fn single_cell(&self, b: usize) -> Topology {
        let groups = self.groups_of_bs(b);
        let users = self.users_of_bs(b);
        Topology {
            num_bs: 1,
            antennas: self.antennas,
            group_of_user: users
                .iter()
                .map(|&u| groups.iter().position(|&g| g == self.group_of_user[u]).unwrap())
                .collect(),
            bs_of_group: vec![0; groups.len()],
            gamma: users.iter().map(|&u| self.gamma[u]).collect(),
            p_max: vec![self.p_max[b]],
            sigma2: users.iter().map(|&u| self.sigma2[u]).collect(),
            d: self.d,
        }
    }
}

/// Effective channels `h[b][u]` (cross-cell entries already attenuated by
/// `√(1/d)`) and their outer products.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    h: Vec<Vec<CVector>>,
    hh: Vec<Vec<CMatrix>>,
}

/// Draws i.i.d. CN(0, 1) coefficients from a ChaCha8 stream seeded by `seed`,
/// in (BS, user, antenna) order.
pub fn sample_channels(topology: &Topology, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let cross = (1.0 / topology.d).sqrt();
    let h = (0..topology.num_bs)
        .map(|b| {
            (0..topology.num_users())
                .map(|u| {
                    let scale = if topology.bs_of_user(u) == b { s } else { s * cross };
                    CVector::from_fn(topology.antennas, |_, _| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(re * scale, im * scale)
                    })
                })
                .collect()
        })
        .collect();
    ChannelSet::from_nested(h)
}

impl ChannelSet {
    /// Builds from explicit vectors `h[b][u]` of length `A`.
    pub fn from_vectors(topology: &Topology, h: Vec<Vec<CVector>>) -> Result<Self, CoreError> {
        if h.len() != topology.num_bs
            || h.iter().any(|row| {
                row.len() != topology.num_users() || row.iter().any(|v| v.len() != topology.antennas)
            })
        {
            return Err(CoreError::Config(
                "channel vectors must be indexed [BS][user] with length A".into(),
            ));
        }
        Ok(Self::from_nested(h))
    }

    fn from_nested(h: Vec<Vec<CVector>>) -> Self {
        let hh = h
            .iter()
            .map(|row| row.iter().map(|v| v * v.adjoint()).collect())
            .collect();
        Self { h, hh }
    }

    pub fn h(&self, b: usize, u: usize) -> &CVector {
        &self.h[b][u]
    }

    /// `h hᴴ`.
    pub fn hh(&self, b: usize, u: usize) -> &CMatrix {
        &self.hh[b][u]
    }

    /// Every channel multiplied by `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self::from_nested(
            self.h
                .iter()
                .map(|row| row.iter().map(|v| v * c).collect())
                .collect(),
        )
    }
}

/// Beamforming design for a set of groups (the whole network, or one cell).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    /// Global group indices, ascending.
    pub groups: Vec<usize>,
    /// Transmit covariance per listed group.
    pub covariances: Vec<CMatrix>,
    /// Rank-one beamformer per listed group, when available.
    pub beamformers: Vec<Option<CVector>>,
    /// `‖w_g‖²` when a beamformer is present, else `Tr(W_g)`.
    pub powers: Vec<f64>,
    pub ranks: Vec<usize>,
    /// Sum power for power minimization, balanced SINR for balancing.
    pub objective: f64,
}

impl BeamformingSolution {
    /// Covariances only, no extracted beamformers.
    pub fn from_covariances(groups: Vec<usize>, covariances: Vec<CMatrix>, ranks: Vec<usize>, objective: f64) -> Self {
        let powers = covariances.iter().map(trace_re).collect();
        Self {
            groups,
            beamformers: vec![None; covariances.len()],
            covariances,
            powers,
            ranks,
            objective,
        }
    }

    /// Beamformers with `W_g = w_g w_gᴴ`.
    pub fn from_beamformers(groups: Vec<usize>, beamformers: Vec<CVector>, ranks: Vec<usize>, objective: f64) -> Self {
        let covariances = beamformers.iter().map(|w| w * w.adjoint()).collect();
        let powers = beamformers.iter().map(|w| w.norm_squared()).collect();
        Self {
            groups,
            covariances,
            beamformers: beamformers.into_iter().map(Some).collect(),
            powers,
            ranks,
            objective,
        }
    }

    fn position(&self, g: usize) -> Option<usize> {
        self.groups.iter().position(|&x| x == g)
    }

    pub fn beamformer(&self, g: usize) -> Option<&CVector> {
        self.position(g).and_then(|i| self.beamformers[i].as_ref())
    }

    pub fn covariance(&self, g: usize) -> Option<&CMatrix> {
        self.position(g).map(|i| &self.covariances[i])
    }

    pub fn has_all_beamformers(&self) -> bool {
        self.beamformers.iter().all(Option::is_some)
    }

    pub fn all_rank_one(&self) -> bool {
        self.ranks.iter().all(|&r| r <= 1)
    }

    /// Joins per-cell solutions; the objective is the sum of the parts.
    pub fn merge(parts: &[BeamformingSolution]) -> Self {
        let mut idx: Vec<(usize, usize, usize)> = Vec::new();
        for (p, part) in parts.iter().enumerate() {
            for (i, &g) in part.groups.iter().enumerate() {
                idx.push((g, p, i));
            }
        }
        idx.sort_unstable();
        let at = |&(_, p, i): &(usize, usize, usize)| (&parts[p], i);
        Self {
            groups: idx.iter().map(|t| t.0).collect(),
            covariances: idx.iter().map(at).map(|(s, i)| s.covariances[i].clone()).collect(),
            beamformers: idx.iter().map(at).map(|(s, i)| s.beamformers[i].clone()).collect(),
            powers: idx.iter().map(at).map(|(s, i)| s.powers[i]).collect(),
            ranks: idx.iter().map(at).map(|(s, i)| s.ranks[i]).collect(),
            objective: parts.iter().map(|p| p.objective).sum(),
        }
    }

    /// `Σ ‖w_g‖²` if every group has a beamformer, else `Σ Tr(W_g)`.
    pub fn sum_power(&self) -> f64 {
        if self.has_all_beamformers() {
            self.beamformers.iter().flatten().map(|w| w.norm_squared()).sum()
        } else {
            self.covariances.iter().map(trace_re).sum()
        }
    }
}

pub(crate) fn trace_re(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// `|hᴴ w|²`.
pub fn gain(h: &CVector, w: &CVector) -> f64 {
    h.dotc(w).norm_sqr()
}

/// SINR of user `u`: its group's received power over noise plus the power
/// of every other group in the network through the corresponding BS channel.
pub fn evaluate_sinr(
    topology: &Topology,
    channels: &ChannelSet,
    solution: &BeamformingSolution,
    u: usize,
) -> Result<f64, CoreError> {
    let g = topology.group_of_user(u);
    let b = topology.bs_of_group(g);
    let w = |k: usize| {
        solution
            .beamformer(k)
            .ok_or_else(|| CoreError::State(format!("no beamformer for group {k}")))
    };
    let signal = gain(channels.h(b, u), w(g)?);
    let mut interference = 0.0;
    for k in 0..topology.num_groups() {
        if k != g {
            interference += gain(channels.h(topology.bs_of_group(k), u), w(k)?);
        }
    }
    Ok(signal / (topology.sigma2(u) + interference))
}

/// Minimum SINR over all users.
pub fn achieved_min_sinr(
    topology: &Topology,
    channels: &ChannelSet,
    solution: &BeamformingSolution,
) -> Result<f64, CoreError> {
    let mut t = f64::INFINITY;
    for u in 0..topology.num_users() {
        t = t.min(evaluate_sinr(topology, channels, solution, u)?);
    }
    Ok(t)
}

/// SINR target giving the same rate on a `1/B` share of the resources:
/// `(1 + γ)^B − 1`.
pub fn orthogonal_equivalent_target(gamma: f64, bs: usize) -> f64 {
    (1.0 + gamma).powi(bs as i32) - 1.0
}

pub fn sum_power(solution: &BeamformingSolution) -> f64 {
    solution.sum_power()
}

/// `Re Tr(H W)` helper re-exported for callers evaluating relaxed solutions.
pub fn trace_gain(hh: &CMatrix, w: &CMatrix) -> f64 {
    trace_product(hh, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_cell_layout_splits_evenly() {
        let t = build_topology(&TopologyConfig::new(2, 4, 8, 12)).unwrap();
        for b in 0..2 {
            assert_eq!(t.groups_of_bs(b).len(), 2);
        }
        for g in 0..4 {
            assert_eq!(t.users_of_group(g).len(), 2);
        }
        let mut seen = vec![0; 8];
        for g in 0..4 {
            for u in t.users_of_group(g) {
                seen[u] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn trivial_and_invalid_layouts() {
        let t = build_topology(&TopologyConfig::new(1, 1, 1, 2)).unwrap();
        assert_eq!(t.num_users(), 1);
        assert!(t.out_of_cell_users(0).is_empty());
        assert!(build_topology(&TopologyConfig::new(2, 3, 6, 2)).is_err());
        assert!(build_topology(&TopologyConfig::new(2, 4, 6, 2)).is_err());
        assert!(build_topology(&TopologyConfig::new(1, 1, 1, 2).d(0.5)).is_err());
    }

    #[test]
    fn orthogonal_targets() {
        assert_eq!(orthogonal_equivalent_target(1.0, 2), 3.0);
        assert_eq!(orthogonal_equivalent_target(0.7, 1), 0.7);
        assert_eq!(orthogonal_equivalent_target(3.0, 3), 63.0);
    }

    #[test]
    fn single_group_sinr_is_snr() {
        let t = build_topology(&TopologyConfig::new(1, 1, 1, 2)).unwrap();
        let ch = ChannelSet::from_vectors(&t, vec![vec![CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)])]]).unwrap();
        let sol = BeamformingSolution::from_beamformers(vec![0], vec![CVector::from_vec(vec![c(2.0, 0.0), c(5.0, 1.0)])], vec![1], 0.0);
        assert!((evaluate_sinr(&t, &ch, &sol, 0).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn sum_power_of_covariances_and_beams() {
        let w1 = CMatrix::identity(2, 2) * c(0.75, 0.0);
        let w2 = CMatrix::identity(2, 2) * c(1.25, 0.0);
        let s = BeamformingSolution::from_covariances(vec![0, 1], vec![w1, w2], vec![2, 2], 0.0);
        assert!((sum_power(&s) - 4.0).abs() < 1e-14);
        let w = CVector::from_vec(vec![c(1.0, 1.0), c(0.5, 0.0)]);
        let s = BeamformingSolution::from_beamformers(vec![0], vec![w.clone()], vec![1], 0.0);
        assert!((sum_power(&s) - w.norm_squared()).abs() < 1e-14);
        assert!((trace_re(&s.covariances[0]) - w.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn missing_beamformer_is_a_state_error() {
        let t = build_topology(&TopologyConfig::new(1, 1, 1, 2)).unwrap();
        let ch = sample_channels(&t, 1);
        let s = BeamformingSolution::from_covariances(vec![0], vec![CMatrix::identity(2, 2)], vec![2], 0.0);
        assert!(matches!(evaluate_sinr(&t, &ch, &s, 0), Err(CoreError::State(_))));
    }

    #[test]
    fn channels_are_deterministic_and_attenuated() {
        let t = build_topology(&TopologyConfig::new(2, 2, 2, 4).d(1e12)).unwrap();
        let a = sample_channels(&t, 9);
        assert_eq!(a, sample_channels(&t, 9));
        assert_ne!(a, sample_channels(&t, 10));
        // user 1 is served by BS 1
        assert!(a.h(0, 1).norm() < 1e-5);
        assert!(a.h(1, 1).norm() > 1e-3);
        assert!((a.hh(0, 0).trace().re - a.h(0, 0).norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn merge_orders_groups() {
        let w = |x: f64| CVector::from_vec(vec![c(x, 0.0)]);
        let a = BeamformingSolution::from_beamformers(vec![1], vec![w(2.0)], vec![1], 4.0);
        let b = BeamformingSolution::from_beamformers(vec![0], vec![w(1.0)], vec![1], 1.0);
        let m = BeamformingSolution::merge(&[a, b]);
        assert_eq!(m.groups, vec![0, 1]);
        assert_eq!(m.powers, vec![1.0, 4.0]);
        assert_eq!(m.objective, 5.0);
    }
}
