//! Infeasible-start primal-dual interior-point iterations with
//! Nesterov-Todd scaling and Mehrotra predictor-corrector steps.
//!
//! Works on the real standard form with rows scaled to unit norm and the
//! objective scaled to norm at most one. Acceptance of a candidate optimum,
//! Farkas ray or primal ray is delegated to a [`Verifier`], which judges it on
//! the original problem.

use log::{debug, trace};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

use crate::embed::RealProblem;

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub step_fraction: f64,
    /// Ratio `‖Aᵀy + Z‖ / bᵀy` below which a Farkas candidate is tested.
    pub ray_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    pub xs: Vec<DMatrix<f64>>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub zs: Vec<DMatrix<f64>>,
    pub z: DVector<f64>,
}

pub(crate) trait Verifier {
    /// Scaled iterate; `y` must be unscaled with [`ScaledProblem::unscale_y`].
    fn optimal(&mut self, problem: &ScaledProblem, it: &Iterate) -> bool;
    /// Unscaled multipliers with `bᵀy = 1`.
    fn infeasible(&mut self, y: &DVector<f64>) -> bool;
    /// Primal direction with linear objective slope `−1`.
    fn unbounded(&mut self, xs: &[DMatrix<f64>], x: &DVector<f64>) -> bool;
}

#[derive(Debug, Clone)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible(DVector<f64>),
    Unbounded(Vec<DMatrix<f64>>, DVector<f64>),
    MaxIter,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub outcome: Outcome,
    pub iterate: Iterate,
    pub iterations: usize,
}

pub(crate) struct ScaledProblem {
    dims: Vec<usize>,
    nl: usize,
    m: usize,
    c: Vec<DMatrix<f64>>,
    cl: DVector<f64>,
    ql: DVector<f64>,
    /// Per PSD block, the rows touching it and their (scaled) coefficient.
    blocks: Vec<Vec<(usize, DMatrix<f64>)>>,
    al: DMatrix<f64>,
    b: DVector<f64>,
    row_scale: DVector<f64>,
    obj_scale: f64,
}

impl ScaledProblem {
    /// Rows must all be nonzero.
    pub fn new(p: &RealProblem) -> Self {
        let m = p.rows.len();
        let nl = p.num_lin;
        let mut row_scale = DVector::zeros(m);
        let mut blocks: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); p.psd_dims.len()];
        let mut al = DMatrix::zeros(m, nl);
        let mut b = DVector::zeros(m);
        for (k, row) in p.rows.iter().enumerate() {
            let r = row.norm_sq().sqrt();
            debug_assert!(r > 0.0);
            row_scale[k] = r;
            for (blk, a) in &row.psd {
                blocks[*blk].push((k, a / r));
            }
            for (j, a) in &row.lin {
                al[(k, *j)] += a / r;
            }
            b[k] = p.b[k] / r;
        }
        let cnorm = (p.c_psd.iter().map(|c| c.norm_squared()).sum::<f64>()
            + p.c_lin.norm_squared()
            + p.q_lin.norm_squared())
        .sqrt();
        let s = cnorm.max(1.0);
        Self {
            dims: p.psd_dims.clone(),
            nl,
            m,
            c: p.c_psd.iter().map(|c| c / s).collect(),
            cl: &p.c_lin / s,
            ql: &p.q_lin / s,
            blocks,
            al,
            b,
            row_scale,
            obj_scale: s,
        }
    }

    /// Multipliers of the original rows: `y = s · ŷ / r`.
    pub fn unscale_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_div(&self.row_scale) * self.obj_scale
    }

    fn apply_a(&self, xs: &[DMatrix<f64>], x: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.al * x;
        for (blk, rows) in self.blocks.iter().enumerate() {
            for (k, a) in rows {
                out[*k] += a.dot(&xs[blk]);
            }
        }
        out
    }

    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let mut mats: Vec<DMatrix<f64>> = self.dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (blk, rows) in self.blocks.iter().enumerate() {
            for (k, a) in rows {
                mats[blk] += a * y[*k];
            }
        }
        (mats, self.al.transpose() * y)
    }

    fn linear_objective(&self, xs: &[DMatrix<f64>], x: &DVector<f64>) -> f64 {
        self.c.iter().zip(xs).map(|(c, x)| c.dot(x)).sum::<f64>() + self.cl.dot(x)
    }

    fn quad(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.iter().zip(self.ql.iter()).map(|(x, q)| q * x * x).sum::<f64>()
    }

    fn barrier_dim(&self) -> f64 {
        (self.dims.iter().sum::<usize>() + self.nl) as f64
    }

    fn initial_point(&self) -> Iterate {
        let n = self.barrier_dim();
        let mut xi: f64 = 10.0_f64.max(n.sqrt());
        for k in 0..self.m {
            // rows have unit norm
            xi = xi.max(n * (1.0 + self.b[k].abs()) / 2.0);
        }
        let cnorm = (self.c.iter().map(|c| c.norm_squared()).sum::<f64>() + self.cl.norm_squared()).sqrt();
        let eta = 10.0_f64.max(n.sqrt()).max(cnorm).max(1.0);
        Iterate {
            xs: self.dims.iter().map(|&d| DMatrix::identity(d, d) * xi).collect(),
            x: DVector::from_element(self.nl, xi),
            y: DVector::zeros(self.m),
            zs: self.dims.iter().map(|&d| DMatrix::identity(d, d) * eta).collect(),
            z: DVector::from_element(self.nl, eta),
        }
    }
}

struct BlockScaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
}

/// Some `L` with `L Lᵀ = X`; Cholesky first, symmetric square root otherwise.
fn factor(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(x.clone()) {
        return Some(ch.l());
    }
    let eig = SymmetricEigen::new(x.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let sq = eig.eigenvalues.map(f64::sqrt);
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.transpose())
}

fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<BlockScaling> {
    let l1 = factor(x)?;
    let l2 = factor(z)?;
    let svd = SVD::new(l2.transpose() * &l1, true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let sigma = svd.singular_values;
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    let isq = sigma.map(|s| 1.0 / s.sqrt());
    let d = DMatrix::from_diagonal(&isq);
    let r = &l1 * vt.transpose() * &d;
    let rinv = &d * u.transpose() * l2.transpose();
    let w = &r * r.transpose();
    Some(BlockScaling {
        r,
        rinv,
        w,
        lambda: sigma,
    })
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest `α` with `Λ + α D ⪰ 0`.
fn max_step_scaled(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let isq = lambda.map(|l| 1.0 / l.sqrt());
    let n = lambda.len();
    let m = DMatrix::from_fn(n, n, |i, j| isq[i] * d[(i, j)] * isq[j]);
    let ev = SymmetricEigen::new(sym(&m)).eigenvalues;
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        -1.0 / min
    } else {
        f64::INFINITY
    }
}

fn max_step_lin(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = f64::INFINITY;
    for (x, dx) in v.iter().zip(dv.iter()) {
        if *dx < 0.0 {
            a = a.min(-x / dx);
        }
    }
    a
}

struct Direction {
    dxs: Vec<DMatrix<f64>>,
    dx: DVector<f64>,
    dy: DVector<f64>,
    dzs: Vec<DMatrix<f64>>,
    dz: DVector<f64>,
}

struct Newton<'a> {
    p: &'a ScaledProblem,
    sc: Vec<BlockScaling>,
    /// `x / z` on the linear block.
    wl: DVector<f64>,
    /// `1 / (1 + wl·q)`.
    dl: DVector<f64>,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<'a> Newton<'a> {
    fn new(p: &'a ScaledProblem, it: &Iterate) -> Option<Self> {
        let mut sc = Vec::with_capacity(p.dims.len());
        for (x, z) in it.xs.iter().zip(&it.zs) {
            sc.push(nt_scaling(x, z)?);
        }
        let wl = it.x.component_div(&it.z);
        let dl = DVector::from_fn(p.nl, |j, _| 1.0 / (1.0 + wl[j] * p.ql[j]));

        let mut m = DMatrix::zeros(p.m, p.m);
        for (blk, rows) in p.blocks.iter().enumerate() {
            let w = &sc[blk].w;
            for (i, (k, ak)) in rows.iter().enumerate() {
                let t = w * ak * w;
                for (l, al) in &rows[i..] {
                    let v = t.dot(al);
                    m[(*k, *l)] += v;
                    if k != l {
                        m[(*l, *k)] += v;
                    }
                }
            }
        }
        let dw = dl.component_mul(&wl);
        let mut ad = p.al.clone();
        for j in 0..p.nl {
            ad.column_mut(j).scale_mut(dw[j]);
        }
        m += ad * p.al.transpose();

        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let (chol, lu) = match Cholesky::new(m.clone()) {
            Some(c) => (Some(c), None),
            None => {
                let maxd = m.diagonal().amax().max(1e-300);
                let mut reg = m.clone();
                for k in 0..p.m {
                    reg[(k, k)] += 1e-13 * maxd;
                }
                match Cholesky::new(reg) {
                    Some(c) => (Some(c), None),
                    None => (None, Some(m.lu())),
                }
            }
        };
        Some(Self {
            p,
            sc,
            wl,
            dl,
            chol,
            lu,
        })
    }

    fn solve_m(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        if let Some(c) = &self.chol {
            return Some(c.solve(rhs));
        }
        self.lu.as_ref()?.solve(rhs)
    }

    /// `e` is the scaled complementarity target per block; `el` the
    /// linear-block target for `z Δx + x Δz`.
    fn direction(
        &self,
        it: &Iterate,
        rp: &DVector<f64>,
        rd: &[DMatrix<f64>],
        rdl: &DVector<f64>,
        e: &[DMatrix<f64>],
        el: &DVector<f64>,
    ) -> Option<Direction> {
        let p = self.p;
        // Right-hand side for ΔX + W ΔZ W = rc.
        let mut g = Vec::with_capacity(p.dims.len());
        for (blk, s) in self.sc.iter().enumerate() {
            let n = s.lambda.len();
            let dt = DMatrix::from_fn(n, n, |i, j| 2.0 * e[blk][(i, j)] / (s.lambda[i] + s.lambda[j]));
            let rc = &s.r * dt * s.r.transpose();
            g.push(rc - &s.w * &rd[blk] * &s.w);
        }
        let rcl = el.component_div(&it.z);
        let gl = (rcl - self.wl.component_mul(rdl)).component_mul(&self.dl);

        let rhs = rp - p.apply_a(&g, &gl);
        let dy = self.solve_m(&rhs)?;
        let (aty, atyl) = p.apply_at(&dy);

        let mut dxs = g;
        let mut dzs = Vec::with_capacity(p.dims.len());
        for (blk, s) in self.sc.iter().enumerate() {
            dxs[blk] += &s.w * &aty[blk] * &s.w;
            dxs[blk] = sym(&dxs[blk]);
            dzs.push(sym(&(&rd[blk] - &aty[blk])));
        }
        let mut dx = gl + self.dl.component_mul(&self.wl).component_mul(&atyl);
        let mut dz = rdl - atyl + p.ql.component_mul(&dx);
        let mut dy = dy;

        // Iterative refinement of the primal linearization A(ΔX) = rp.
        let target = 1e-15 * (1.0 + rp.norm());
        for _ in 0..2 {
            let res = rp - p.apply_a(&dxs, &dx);
            if res.norm() <= target {
                break;
            }
            let ddy = self.solve_m(&res)?;
            let (daty, datyl) = p.apply_at(&ddy);
            for (blk, s) in self.sc.iter().enumerate() {
                dxs[blk] += sym(&(&s.w * &daty[blk] * &s.w));
                dzs[blk] -= &daty[blk];
            }
            let ddx = self.dl.component_mul(&self.wl).component_mul(&datyl);
            dz += p.ql.component_mul(&ddx) - datyl;
            dx += ddx;
            dy += ddy;
        }
        Some(Direction {
            dxs,
            dx,
            dy,
            dzs,
            dz,
        })
    }

    fn scaled_pair(&self, d: &Direction, blk: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = &self.sc[blk];
        let dxt = sym(&(&s.rinv * &d.dxs[blk] * s.rinv.transpose()));
        let dzt = sym(&(s.r.transpose() * &d.dzs[blk] * &s.r));
        (dxt, dzt)
    }

    fn max_step(&self, it: &Iterate, d: &Direction) -> f64 {
        let mut a = f64::INFINITY;
        for blk in 0..self.sc.len() {
            let (dxt, dzt) = self.scaled_pair(d, blk);
            a = a.min(max_step_scaled(&self.sc[blk].lambda, &dxt));
            a = a.min(max_step_scaled(&self.sc[blk].lambda, &dzt));
        }
        a = a.min(max_step_lin(&it.x, &d.dx));
        a.min(max_step_lin(&it.z, &d.dz))
    }
}

struct Measures {
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    rdl: DVector<f64>,
    mu: f64,
    rel_p: f64,
    rel_d: f64,
    rel_gap: f64,
    pobj: f64,
    dobj: f64,
}

fn measure(p: &ScaledProblem, it: &Iterate) -> Measures {
    let rp = &p.b - p.apply_a(&it.xs, &it.x);
    let (aty, atyl) = p.apply_at(&it.y);
    let rd: Vec<DMatrix<f64>> = (0..p.dims.len())
        .map(|blk| &p.c[blk] - &aty[blk] - &it.zs[blk])
        .collect();
    let rdl = &p.cl + p.ql.component_mul(&it.x) - atyl - &it.z;
    let compl = it.xs.iter().zip(&it.zs).map(|(x, z)| x.dot(z)).sum::<f64>() + it.x.dot(&it.z);
    let quad = p.quad(&it.x);
    let pobj = p.linear_objective(&it.xs, &it.x) + quad;
    let dobj = p.b.dot(&it.y) - quad;
    let cnorm = (p.c.iter().map(|c| c.norm_squared()).sum::<f64>() + p.cl.norm_squared()).sqrt();
    let rd_norm = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rdl.norm_squared()).sqrt();
    let denom = 1.0 + pobj.abs() + dobj.abs();
    Measures {
        rel_p: rp.norm() / (1.0 + p.b.norm()),
        rel_d: rd_norm / (1.0 + cnorm),
        rel_gap: ((pobj - dobj).abs().max(compl.abs())) / denom,
        mu: compl / p.barrier_dim(),
        rp,
        rd,
        rdl,
        pobj,
        dobj,
    }
}

fn take_step(it: &Iterate, d: &Direction, a: f64) -> Iterate {
    Iterate {
        xs: it.xs.iter().zip(&d.dxs).map(|(x, dx)| sym(&(x + dx * a))).collect(),
        x: &it.x + &d.dx * a,
        y: &it.y + &d.dy * a,
        zs: it.zs.iter().zip(&d.dzs).map(|(z, dz)| sym(&(z + dz * a))).collect(),
        z: &it.z + &d.dz * a,
    }
}

fn finite(it: &Iterate) -> bool {
    it.xs.iter().chain(&it.zs).all(|m| m.iter().all(|v| v.is_finite()))
        && it.x.iter().chain(it.y.iter()).chain(it.z.iter()).all(|v| v.is_finite())
}

/// Farkas candidate: normalized `ŷ` once `‖Aᵀy + Z‖ / bᵀy` is small.
fn farkas_candidate(p: &ScaledProblem, it: &Iterate, tol: f64) -> Option<DVector<f64>> {
    let by = p.b.dot(&it.y);
    if !(by > 0.0) {
        return None;
    }
    let (aty, atyl) = p.apply_at(&it.y);
    let res = (aty
        .iter()
        .zip(&it.zs)
        .map(|(a, z)| (a + z).norm_squared())
        .sum::<f64>()
        + (atyl + &it.z).norm_squared())
    .sqrt();
    (res / by < tol).then(|| it.y.component_div(&p.row_scale) / by)
}

/// Primal ray candidate with linear objective slope normalized to `−1`.
fn ray_candidate(
    p: &ScaledProblem,
    it: &Iterate,
    tol: f64,
) -> Option<(Vec<DMatrix<f64>>, DVector<f64>)> {
    let slope = -p.linear_objective(&it.xs, &it.x);
    if !(slope > 0.0) {
        return None;
    }
    let ax = p.apply_a(&it.xs, &it.x);
    if ax.norm() / slope >= tol {
        return None;
    }
    // Unscaled slope is `obj_scale` times the scaled one.
    let k = 1.0 / (slope * p.obj_scale);
    Some((it.xs.iter().map(|x| x * k).collect(), &it.x * k))
}

pub(crate) fn run(p: &ScaledProblem, settings: &IpmSettings, verifier: &mut dyn Verifier) -> IpmResult {
    let mut it = p.initial_point();
    let nu = p.barrier_dim();
    let mut stalls = 0;
    // Least-residual iterate, returned if the run ends without a verdict.
    let mut best: Option<(f64, Iterate)> = None;

    for iter in 0..settings.max_iter {
        let ms = measure(p, &it);
        let score = ms.rel_p.max(ms.rel_d).max(ms.rel_gap);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, it.clone()));
        }
        trace!(
            "iter {iter}: pobj {:.9e} dobj {:.9e} p {:.2e} d {:.2e} gap {:.2e} mu {:.2e}",
            ms.pobj, ms.dobj, ms.rel_p, ms.rel_d, ms.rel_gap, ms.mu
        );

        if ms.rel_p <= settings.tol && ms.rel_d <= settings.tol && ms.rel_gap <= settings.tol
            && verifier.optimal(p, &it)
        {
            debug!("optimal after {iter} iterations");
            return IpmResult {
                outcome: Outcome::Optimal,
                iterate: it,
                iterations: iter,
            };
        }
        if let Some(y) = farkas_candidate(p, &it, settings.ray_tol) {
            if verifier.infeasible(&y) {
                debug!("infeasible after {iter} iterations");
                return IpmResult {
                    outcome: Outcome::Infeasible(y),
                    iterate: it,
                    iterations: iter,
                };
            }
        }
        if let Some((xs, x)) = ray_candidate(p, &it, settings.ray_tol) {
            if verifier.unbounded(&xs, &x) {
                debug!("unbounded after {iter} iterations");
                return IpmResult {
                    outcome: Outcome::Unbounded(xs, x),
                    iterate: it,
                    iterations: iter,
                };
            }
        }

        let newton = match Newton::new(p, &it) {
            Some(n) => n,
            None => {
                debug!("scaling breakdown at iteration {iter}");
                return max_iter(best, it, iter);
            }
        };

        // Predictor: drive complementarity to zero.
        let e_aff: Vec<DMatrix<f64>> = newton
            .sc
            .iter()
            .map(|s| DMatrix::from_diagonal(&s.lambda.map(|l| -l * l)))
            .collect();
        let el_aff = -it.x.component_mul(&it.z);
        let Some(aff) = newton.direction(&it, &ms.rp, &ms.rd, &ms.rdl, &e_aff, &el_aff) else {
            return max_iter(best, it, iter);
        };
        let a_aff = newton.max_step(&it, &aff).min(1.0);
        let mut compl_aff = 0.0;
        for blk in 0..p.dims.len() {
            compl_aff += (&it.xs[blk] + &aff.dxs[blk] * a_aff).dot(&(&it.zs[blk] + &aff.dzs[blk] * a_aff));
        }
        compl_aff += (&it.x + &aff.dx * a_aff).dot(&(&it.z + &aff.dz * a_aff));
        let mu_aff = (compl_aff / nu).max(0.0);
        let sigma = if ms.mu > 0.0 { (mu_aff / ms.mu).powi(3).min(1.0) } else { 0.0 };

        // Corrector with second-order term.
        let mut e = Vec::with_capacity(p.dims.len());
        for (blk, s) in newton.sc.iter().enumerate() {
            let (dxt, dzt) = newton.scaled_pair(&aff, blk);
            let n = s.lambda.len();
            let mut eb = -sym(&(&dxt * &dzt));
            for i in 0..n {
                eb[(i, i)] += sigma * ms.mu - s.lambda[i] * s.lambda[i];
            }
            e.push(eb);
        }
        let el = DVector::from_fn(p.nl, |j, _| {
            sigma * ms.mu - it.x[j] * it.z[j] - aff.dx[j] * aff.dz[j]
        });
        let Some(dir) = newton.direction(&it, &ms.rp, &ms.rd, &ms.rdl, &e, &el) else {
            return max_iter(best, it, iter);
        };
        let amax = newton.max_step(&it, &dir);
        let a = (settings.step_fraction * amax).min(1.0);
        let next = take_step(&it, &dir, a);
        if !finite(&next) {
            debug!("non-finite iterate at iteration {iter}");
            return max_iter(best, it, iter);
        }
        if a < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                debug!("stalled at iteration {iter}");
                return max_iter(best, next, iter + 1);
            }
        } else {
            stalls = 0;
        }
        it = next;
    }
    max_iter(best, it, settings.max_iter)
}

fn max_iter(best: Option<(f64, Iterate)>, last: Iterate, iterations: usize) -> IpmResult {
    IpmResult {
        outcome: Outcome::MaxIter,
        iterate: best.map_or(last, |b| b.1),
        iterations,
    }
}
