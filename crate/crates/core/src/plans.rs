//! Convex order, martingale couplings, primal 3-plans and certification.
//!
//! The primal side is solved through the variance problem
//! `V = min { var(rho) : rho >=_c mu, rho >=_c nu }` on a finite candidate
//! support. For centred measures, gluing the two martingale couplings
//! through `rho` gives a 3-plan of cost `V - (var mu + var nu)/2`.
//!
//! The LP duals of the variance problem carry their own lower bound. With
//! multipliers `(a_i, G_i)` on the rows of `mu`, `(b_j, H_j)` on those of
//! `nu`, the most violated dual constraint for the pair `(i, j)` sits at
//! `z = c + (G_i + H_j)/2`. Shifting `a` by the largest violation gives a
//! dual feasible point for every candidate support at once, so
//! `LP value - violation` bounds `V` from below. Columns at those points are
//! also the natural ones to add when the bracket is too wide.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, dist_sq, dot, norm_sq};
use crate::lp::{LinearProgram, LpError};
use crate::measures::DiscreteMeasure;
use crate::wasserstein::Coupling;
use crate::zolotarev::{active_pairs, common_barycentre, solve_dual_z2, DualReport, OneField, TOL_ACTIVE};

/// Residual threshold of [`validate_three_plan`].
pub const TOL_VALID: f64 = 1e-8;
/// Support points closer than this are merged.
pub const TOL_SUPPORT: f64 = 1e-9;
/// Columns of `rho` below this are dropped before gluing.
pub const TOL_RHO: f64 = 1e-12;
/// LP entries below this are set to zero.
const TOL_CLEAN: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub m: f64,
}

/// A finitely supported probability on `(R^d)^3`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreePlan {
    pub triples: Vec<Triple>,
}

impl ThreePlan {
    pub fn total_mass(&self) -> f64 {
        self.triples.iter().map(|t| t.m).sum()
    }

    /// Third marginal as `(point, mass)` pairs, points merged within `TOL_SUPPORT`.
    pub fn third_marginal(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for t in &self.triples {
            match out.iter_mut().find(|(z, _)| dist(z, &t.z) <= TOL_SUPPORT) {
                Some((_, m)) => *m += t.m,
                None => out.push((t.z.clone(), t.m)),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialises")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub total_mass_residual: f64,
    pub marginal_mu_residual: f64,
    pub marginal_nu_residual: f64,
    /// Largest coordinate of `sum m (z - x)` over distinct `x`.
    pub martingale_mu_residual: f64,
    /// Largest coordinate of `sum m (z - y)` over distinct `y`.
    pub martingale_nu_residual: f64,
    pub min_mass: f64,
    pub valid: bool,
}

impl ValidationReport {
    pub fn max_residual(&self) -> f64 {
        self.total_mass_residual
            .max(self.marginal_mu_residual)
            .max(self.marginal_nu_residual)
            .max(self.martingale_mu_residual)
            .max(self.martingale_nu_residual)
    }
}

/// Checks membership of `pi` in the set of 3-plans between `mu` and `nu`.
pub fn validate_three_plan(pi: &ThreePlan, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> ValidationReport {
    let total_mass_residual = (pi.total_mass() - 1.0).abs();
    let marginal_mu_residual = marginal_residual(pi.triples.iter().map(|t| (t.x.as_slice(), t.m)), mu);
    let marginal_nu_residual = marginal_residual(pi.triples.iter().map(|t| (t.y.as_slice(), t.m)), nu);
    let martingale_mu_residual = martingale_residual(pi.triples.iter().map(|t| (t.x.as_slice(), t.z.as_slice(), t.m)));
    let martingale_nu_residual = martingale_residual(pi.triples.iter().map(|t| (t.y.as_slice(), t.z.as_slice(), t.m)));
    let min_mass = pi.triples.iter().map(|t| t.m).fold(f64::INFINITY, f64::min);
    let dims_ok = pi.triples.iter().all(|t| t.x.len() == mu.dim() && t.y.len() == nu.dim() && t.z.len() == mu.dim());
    let mut report = ValidationReport {
        total_mass_residual,
        marginal_mu_residual,
        marginal_nu_residual,
        martingale_mu_residual,
        martingale_nu_residual,
        min_mass,
        valid: false,
    };
    report.valid = dims_ok && !(min_mass < 0.0) && report.max_residual() <= TOL_VALID;
    report
}

fn marginal_residual<'a>(points: impl Iterator<Item = (&'a [f64], f64)>, target: &DiscreteMeasure) -> f64 {
    let mut sums = vec![0.0; target.len()];
    let mut stray = 0.0;
    for (x, m) in points {
        match target.atoms().iter().position(|a| dist(&a.x, x) <= TOL_SUPPORT) {
            Some(i) => sums[i] += m,
            None => stray += m.abs(),
        }
    }
    sums.iter().zip(target.weights()).map(|(s, w)| (s - w).abs()).fold(stray, f64::max)
}

fn martingale_residual<'a>(rows: impl Iterator<Item = (&'a [f64], &'a [f64], f64)>) -> f64 {
    let mut groups: Vec<(&[f64], Vec<f64>)> = Vec::new();
    for (x, z, m) in rows {
        let idx = match groups.iter().position(|(g, _)| dist(g, x) <= TOL_SUPPORT) {
            Some(i) => i,
            None => {
                groups.push((x, vec![0.0; x.len()]));
                groups.len() - 1
            }
        };
        for (s, (zl, xl)) in groups[idx].1.iter_mut().zip(z.iter().zip(x)) {
            *s += m * (zl - xl);
        }
    }
    groups.iter().flat_map(|(_, s)| s.iter()).fold(0.0, |a, v| a.max(v.abs()))
}

/// `sum m (|z - x|^2 + |z - y|^2)/2`.
pub fn three_plan_cost(pi: &ThreePlan) -> f64 {
    pi.triples.iter().map(|t| 0.5 * t.m * (dist_sq(&t.z, &t.x) + dist_sq(&t.z, &t.y))).sum()
}

/// Whether `nu` dominates `mu` in convex order.
///
/// On the line this is the call-price test: equal means and
/// `E(X - t)+ <= E(Y - t)+` at every atom. Otherwise a martingale coupling
/// is sought by linear programming.
pub fn check_convex_order(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<bool> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { left: mu.dim(), right: nu.dim() });
    }
    if mu.dim() == 1 {
        return Ok(convex_order_1d(mu, nu));
    }
    match martingale_lp(mu, nu) {
        Ok(_) => Ok(true),
        Err(Error::NotInConvexOrder) => Ok(false),
        Err(e) => Err(e),
    }
}

fn convex_order_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> bool {
    let scale = mu.radius_about(&[0.0]).max(nu.radius_about(&[0.0])).max(1.0);
    let tol = 1e-12 * scale;
    let (mm, mn) = (mu.barycentre()[0], nu.barycentre()[0]);
    if (mm - mn).abs() > tol {
        return false;
    }
    let call = |m: &DiscreteMeasure, t: f64| m.atoms().iter().map(|a| a.w * (a.x[0] - t).max(0.0)).sum::<f64>();
    mu.points().chain(nu.points()).all(|t| call(mu, t[0]) <= call(nu, t[0]) + tol)
}

/// A martingale coupling from `mu` to `nu` (any feasible one).
pub fn martingale_coupling(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Coupling> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { left: mu.dim(), right: nu.dim() });
    }
    martingale_lp(mu, nu)
}

fn martingale_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Coupling> {
    let (n, m, d) = (mu.len(), nu.len(), mu.dim());
    let c = mu.barycentre();
    let r = mu.radius_about(&c).max(nu.radius_about(&c)).max(f64::MIN_POSITIVE);
    let xs: Vec<Vec<f64>> = mu.points().map(|p| scaled(p, &c, r)).collect();
    let ys: Vec<Vec<f64>> = nu.points().map(|p| scaled(p, &c, r)).collect();
    let mut lp = LinearProgram::new(n * m);
    for (i, a) in mu.atoms().iter().enumerate() {
        lp.add_eq((0..m).map(|j| (i * m + j, 1.0)).collect(), a.w);
        for l in 0..d {
            lp.add_eq((0..m).map(|j| (i * m + j, ys[j][l] - xs[i][l])).collect(), 0.0);
        }
    }
    for (j, b) in nu.atoms().iter().enumerate() {
        lp.add_eq((0..n).map(|i| (i * m + j, 1.0)).collect(), b.w);
    }
    let sol = match lp.solve() {
        Ok(s) => s,
        Err(LpError::Infeasible) => return Err(Error::NotInConvexOrder),
        Err(e) => return Err(Error::Infeasible(e.to_string())),
    };
    let mut plan =
        Coupling::zeros(mu.points().map(<[f64]>::to_vec).collect(), nu.points().map(<[f64]>::to_vec).collect());
    for i in 0..n {
        for j in 0..m {
            plan.mass[i][j] = clean(sol.x[i * m + j]);
        }
    }
    Ok(plan)
}

/// `(var nu - var mu)/2` for a pair in convex order (either direction).
pub fn z2_convex_order_closed_form(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let (vm, vn) = (mu.stats().variance, nu.stats().variance);
    if check_convex_order(mu, nu)? {
        Ok(0.5 * (vn - vm))
    } else if check_convex_order(nu, mu)? {
        Ok(0.5 * (vm - vn))
    } else {
        Err(Error::NotInConvexOrder)
    }
}

fn scaled(p: &[f64], c: &[f64], r: f64) -> Vec<f64> {
    p.iter().zip(c).map(|(a, b)| (a - b) / r).collect()
}

fn clean(v: f64) -> f64 {
    if v < TOL_CLEAN {
        0.0
    } else {
        v
    }
}

/// Solution of the variance problem on a fixed candidate support.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceSolution {
    /// `sum_k rho_k |z_k - c|^2`; an upper bound for `V`.
    pub value: f64,
    pub support: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    /// Martingale coupling `mu -> rho`.
    pub pi_mu: Coupling,
    /// Martingale coupling `nu -> rho`.
    pub pi_nu: Coupling,
}

/// Centred and scaled problem data.
struct Frame {
    c: Vec<f64>,
    r: f64,
    xs: Vec<Vec<f64>>,
    mw: Vec<f64>,
    ys: Vec<Vec<f64>>,
    nw: Vec<f64>,
}

impl Frame {
    fn new(mu: &DiscreteMeasure, nu: &DiscreteMeasure, c: Vec<f64>) -> Self {
        let r = mu.radius_about(&c).max(nu.radius_about(&c));
        let r = if r > 0.0 { r } else { 1.0 };
        Self {
            xs: mu.points().map(|p| scaled(p, &c, r)).collect(),
            mw: mu.weights().collect(),
            ys: nu.points().map(|p| scaled(p, &c, r)).collect(),
            nw: nu.weights().collect(),
            c,
            r,
        }
    }

    fn to_frame(&self, p: &[f64]) -> Vec<f64> {
        scaled(p, &self.c, self.r)
    }

    fn to_original(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.c).map(|(a, b)| b + self.r * a).collect()
    }

    fn dim(&self) -> usize {
        self.c.len()
    }
}

/// Variance LP in frame coordinates with its multipliers.
struct FrameSolution {
    value: f64,
    /// `sum a_i mu_i + sum b_j nu_j`.
    dual_value: f64,
    /// `p[i][k]`, `q[j][k]`.
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    a: Vec<f64>,
    g: Vec<Vec<f64>>,
    b: Vec<f64>,
    h: Vec<Vec<f64>>,
}

fn solve_frame(f: &Frame, zs: &[Vec<f64>]) -> std::result::Result<FrameSolution, LpError> {
    let (n, m, k_len, d) = (f.xs.len(), f.ys.len(), zs.len(), f.dim());
    let pv = |i: usize, k: usize| i * k_len + k;
    let qv = |j: usize, k: usize| (n + j) * k_len + k;
    let mut lp = LinearProgram::new((n + m) * k_len);
    for i in 0..n {
        for (k, z) in zs.iter().enumerate() {
            lp.set_cost(pv(i, k), norm_sq(z));
        }
    }
    let mut row_a = Vec::with_capacity(n);
    let mut row_g = Vec::with_capacity(n);
    for i in 0..n {
        row_a.push(lp.add_eq((0..k_len).map(|k| (pv(i, k), 1.0)).collect(), f.mw[i]));
        row_g.push(
            (0..d)
                .map(|l| lp.add_eq((0..k_len).map(|k| (pv(i, k), zs[k][l] - f.xs[i][l])).collect(), 0.0))
                .collect::<Vec<_>>(),
        );
    }
    let mut row_b = Vec::with_capacity(m);
    let mut row_h = Vec::with_capacity(m);
    for j in 0..m {
        row_b.push(lp.add_eq((0..k_len).map(|k| (qv(j, k), 1.0)).collect(), f.nw[j]));
        row_h.push(
            (0..d)
                .map(|l| lp.add_eq((0..k_len).map(|k| (qv(j, k), zs[k][l] - f.ys[j][l])).collect(), 0.0))
                .collect::<Vec<_>>(),
        );
    }
    for k in 0..k_len {
        let mut row: Vec<(usize, f64)> = (0..n).map(|i| (pv(i, k), 1.0)).collect();
        row.extend((0..m).map(|j| (qv(j, k), -1.0)));
        lp.add_eq(row, 0.0);
    }
    let sol = lp.solve()?;
    let y = &sol.duals;
    let dual_value = row_a.iter().zip(&f.mw).map(|(&r, w)| y[r] * w).sum::<f64>()
        + row_b.iter().zip(&f.nw).map(|(&r, w)| y[r] * w).sum::<f64>();
    Ok(FrameSolution {
        value: sol.objective,
        dual_value,
        p: (0..n).map(|i| (0..k_len).map(|k| clean(sol.x[pv(i, k)])).collect()).collect(),
        q: (0..m).map(|j| (0..k_len).map(|k| clean(sol.x[qv(j, k)])).collect()).collect(),
        a: row_a.iter().map(|&r| y[r]).collect(),
        g: row_g.iter().map(|rs| rs.iter().map(|&r| y[r]).collect()).collect(),
        b: row_b.iter().map(|&r| y[r]).collect(),
        h: row_h.iter().map(|rs| rs.iter().map(|&r| y[r]).collect()).collect(),
    })
}

/// Largest dual violation over all `z`, per `(i, j)`: value and maximiser.
fn pricing(f: &Frame, s: &FrameSolution) -> Vec<(f64, usize, usize, Vec<f64>)> {
    let mut out = Vec::with_capacity(f.xs.len() * f.ys.len());
    for i in 0..f.xs.len() {
        let ai = s.a[i] - dot(&s.g[i], &f.xs[i]);
        for j in 0..f.ys.len() {
            let z: Vec<f64> = s.g[i].iter().zip(&s.h[j]).map(|(g, h)| 0.5 * (g + h)).collect();
            let v = ai + s.b[j] - dot(&s.h[j], &f.ys[j]) + norm_sq(&z);
            out.push((v, i, j, z));
        }
    }
    out
}

fn rho_of(s: &FrameSolution, k_len: usize) -> Vec<f64> {
    (0..k_len).map(|k| 0.5 * (s.p.iter().map(|r| r[k]).sum::<f64>() + s.q.iter().map(|r| r[k]).sum::<f64>())).collect()
}

fn frame_couplings(
    f: &Frame,
    s: &FrameSolution,
    zs: &[Vec<f64>],
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> VarianceSolution {
    let support: Vec<Vec<f64>> = zs.iter().map(|z| f.to_original(z)).collect();
    let mut pi_mu = Coupling::zeros(mu.points().map(<[f64]>::to_vec).collect(), support.clone());
    pi_mu.mass.clone_from(&s.p);
    let mut pi_nu = Coupling::zeros(nu.points().map(<[f64]>::to_vec).collect(), support.clone());
    pi_nu.mass.clone_from(&s.q);
    VarianceSolution { value: s.value * f.r * f.r, rho: rho_of(s, zs.len()), support, pi_mu, pi_nu }
}

/// Minimises `var(rho)` over `rho` on `candidate_support` dominating both
/// measures in convex order. Fails with `Infeasible` when no such `rho`
/// lives on the candidates.
pub fn solve_variance_lp(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    candidate_support: &[Vec<f64>],
) -> Result<VarianceSolution> {
    let c = common_barycentre(mu, nu)?;
    if candidate_support.is_empty() {
        return Err(Error::InvalidArgument("empty candidate support".into()));
    }
    if let Some(z) = candidate_support.iter().find(|z| z.len() != mu.dim()) {
        return Err(Error::DimensionMismatch { left: mu.dim(), right: z.len() });
    }
    let f = Frame::new(mu, nu, c);
    let zs: Vec<Vec<f64>> = candidate_support.iter().map(|z| f.to_frame(z)).collect();
    let s = solve_frame(&f, &zs).map_err(|e| Error::Infeasible(e.to_string()))?;
    Ok(frame_couplings(&f, &s, &zs, mu, nu))
}

/// Glues the two couplings through their common column marginal.
pub fn glue(sol: &VarianceSolution) -> ThreePlan {
    let mut triples = Vec::new();
    for (k, z) in sol.support.iter().enumerate() {
        let rho = sol.rho[k];
        if rho < TOL_RHO {
            continue;
        }
        for (i, x) in sol.pi_mu.rows.iter().enumerate() {
            let p = sol.pi_mu.mass[i][k];
            if p == 0.0 {
                continue;
            }
            for (j, y) in sol.pi_nu.rows.iter().enumerate() {
                let q = sol.pi_nu.mass[j][k];
                if q == 0.0 {
                    continue;
                }
                let m = p * q / rho;
                if m >= TOL_CLEAN {
                    triples.push(Triple { x: x.clone(), y: y.clone(), z: z.clone(), m });
                }
            }
        }
    }
    ThreePlan { triples }
}

fn dedup_push(set: &mut Vec<Vec<f64>>, z: Vec<f64>, tol: f64) -> bool {
    if set.iter().any(|s| dist(s, &z) <= tol) {
        false
    } else {
        set.push(z);
        true
    }
}

/// Gap-minimising points `z_u(p, q)` of the active pairs from `mu` to `nu`,
/// together with `supp mu ∪ supp nu`.
pub fn build_candidate_support(dual: &DualReport, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<Vec<f64>> {
    let field = &dual.field;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for &(p, q) in &dual.active_pairs {
        let (xp, xq) = (&field.points[p], &field.points[q]);
        if mu.weight_at(xp, TOL_SUPPORT).is_some() && nu.weight_at(xq, TOL_SUPPORT).is_some() {
            dedup_push(&mut out, field.z_bar(p, q), TOL_SUPPORT);
        }
    }
    // Diagonal pairs (p in both supports) have z = p; covered by S.
    for p in &field.points {
        dedup_push(&mut out, p.clone(), TOL_SUPPORT);
    }
    out
}

/// Certified bracket `lower <= Z2 <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertifiedZ2 {
    /// Best certified lower bound: the admissible field's objective or the
    /// shifted variance-LP dual, whichever is larger.
    pub lower: f64,
    /// Cost of `primal`.
    pub upper: f64,
    pub gap: f64,
    pub dual: DualReport,
    pub primal: ThreePlan,
    /// Lower bound from the variance-LP multipliers.
    pub lp_lower: f64,
    /// Column-generation rounds used.
    pub rounds: usize,
    pub support_size: usize,
}

impl CertifiedZ2 {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CertifyOptions {
    pub tol: f64,
    /// Column-generation rounds before and after midpoint enrichment.
    pub max_rounds: usize,
    /// New support points per round, as a multiple of the atom count.
    pub columns_per_round: usize,
}

impl CertifyOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, max_rounds: 25, columns_per_round: 1 }
    }
}

/// Runs the dual solve, the variance LP on the dual's gap-minimising points,
/// and column generation until `upper - lower <= tol`.
pub fn certify_z2(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<CertifiedZ2> {
    certify_z2_with(mu, nu, CertifyOptions::new(tol))
}

pub fn certify_z2_with(mu: &DiscreteMeasure, nu: &DiscreteMeasure, opts: CertifyOptions) -> Result<CertifiedZ2> {
    let c = common_barycentre(mu, nu)?;
    let dual = solve_dual_z2(mu, nu, opts.tol)?;
    let support = build_candidate_support(&dual, mu, nu);
    let f = Frame::new(mu, nu, c);
    let half_var = 0.5 * (mu.stats().variance + nu.stats().variance);
    let r2 = f.r * f.r;
    let n_atoms = mu.len() + nu.len();
    let field_points: Vec<Vec<f64>> = dual.field.points.iter().map(|p| f.to_frame(p)).collect();

    let mut zs: Vec<Vec<f64>> = support.iter().map(|z| f.to_frame(z)).collect();
    // A simplex around the data always supports a common dominating rho.
    for v in bounding_simplex(f.dim()) {
        dedup_push(&mut zs, v, TOL_SUPPORT);
    }
    let keep_first = zs.len();
    let mut best: Option<CertifiedZ2> = None;
    let mut enriched = false;
    let mut rounds = 0;
    let mut stalled = 0;
    loop {
        let s = solve_frame(&f, &zs).map_err(|e| Error::Infeasible(e.to_string()))?;
        let prices = pricing(&f, &s);
        let violation = prices.iter().map(|p| p.0).fold(0.0, f64::max);
        let lp_lower = (s.dual_value - violation) * r2 - half_var;
        let sol = frame_couplings(&f, &s, &zs, mu, nu);
        let primal = glue(&sol);
        let validation = validate_three_plan(&primal, mu, nu);
        let upper = if validation.valid { three_plan_cost(&primal) } else { f64::INFINITY };
        if !validation.valid {
            log::warn!("glued plan failed validation (residual {:e})", validation.max_residual());
        }
        let lower = dual.value.max(lp_lower);
        let gap = (upper - lower).max(0.0);
        log::debug!(
            "certify round {rounds}: |Z| = {}, upper {upper:.15e}, field {:.15e}, lp {lp_lower:.15e}, gap {gap:e}",
            zs.len(),
            dual.value
        );
        let improved = best.as_ref().is_none_or(|b| gap < b.gap);
        if improved {
            best = Some(CertifiedZ2 {
                lower,
                upper,
                gap,
                dual: dual.clone(),
                primal,
                lp_lower,
                rounds,
                support_size: zs.len(),
            });
            stalled = 0;
        } else {
            stalled += 1;
        }
        let current = best.as_ref().expect("set above");
        if current.gap <= opts.tol {
            return Ok(finish(mu, nu, &f, best.expect("set above"), opts.tol));
        }

        rounds += 1;
        let mut candidates: Vec<&(f64, usize, usize, Vec<f64>)> = prices.iter().filter(|p| p.0 > 1e-15).collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut added = 0;
        for cand in candidates {
            if added >= opts.columns_per_round * n_atoms {
                break;
            }
            if dedup_push(&mut zs, cand.3.clone(), 1e-12) {
                added += 1;
            }
        }
        let out_of_rounds = rounds >= opts.max_rounds * if enriched { 2 } else { 1 };
        if added == 0 || out_of_rounds || stalled >= 8 {
            if enriched {
                break;
            }
            enriched = true;
            stalled = 0;
            for (a, p) in field_points.iter().enumerate() {
                for q in &field_points[a + 1..] {
                    let mid: Vec<f64> = p.iter().zip(q).map(|(u, v)| 0.5 * (u + v)).collect();
                    dedup_push(&mut zs, mid, TOL_SUPPORT);
                }
            }
            log::debug!("certify: enriched support with pairwise midpoints ({} points)", zs.len());
        }
        prune(&mut zs, &s, n_atoms, keep_first);
    }
    let best = finish(mu, nu, &f, best.expect("at least one round"), opts.tol);
    if best.gap <= opts.tol {
        return Ok(best);
    }
    Err(Error::NotCertified(Box::new(best)))
}

/// Up to three polish rounds; keeps a refined bracket when it is certified
/// or narrower than the input.
fn finish(mu: &DiscreteMeasure, nu: &DiscreteMeasure, f: &Frame, cert: CertifiedZ2, tol: f64) -> CertifiedZ2 {
    let mut best = cert;
    for round in 0..3 {
        let Some(next) = refine(mu, nu, f, &best) else {
            break;
        };
        log::debug!("polish round {round}: gap {:e} -> {:e}", best.gap, next.gap);
        if next.gap <= tol.max(best.gap) {
            best = next;
        } else {
            break;
        }
    }
    quadratic_lower(mu, nu, f, &mut best);
    best
}

/// The fields `+-|x - c|^2 / 2` saturate every pairwise constraint, so both
/// are admissible with objectives `+-(var nu - var mu)/2`. In convex order
/// one of them is optimal, a case where every pair is active and the Newton
/// system is degenerate.
fn quadratic_lower(mu: &DiscreteMeasure, nu: &DiscreteMeasure, f: &Frame, best: &mut CertifiedZ2) {
    for sign in [1.0, -1.0] {
        let mut field = OneField::from_fn(
            best.dual.field.points.clone(),
            best.dual.field.base,
            |x| 0.5 * sign * dist_sq(x, &f.c),
            |x| x.iter().zip(&f.c).map(|(a, b)| sign * (a - b)).collect(),
        );
        let b: Vec<f64> = field.gradients[field.base].iter().map(|v| -v).collect();
        let a0 = -field.values[field.base] - dot(&b, &field.points[field.base]);
        field.add_affine(a0, &b);
        field.make_admissible();
        let Ok(value) = field.objective(mu, nu) else {
            continue;
        };
        if value > best.lower {
            log::debug!("quadratic field raises the lower bound {:e} -> {value:e}", best.lower);
            let (worst, _) = field.max_constraint();
            let active = active_pairs(&field, TOL_ACTIVE * f.r * f.r);
            best.dual =
                DualReport { value, max_violation: worst.max(0.0), active_pairs: active, field, ..best.dual.clone() };
            best.lower = value;
            best.gap = (best.upper - value).max(0.0);
        }
    }
}

/// Pair-level Newton refinement of a near-optimal bracket.
///
/// An optimal 3-plan carries one point `z = z_u(x, y)` per pair, so on the
/// pairs `A` that carry mass the optimum solves
///
/// ```text
/// C(x_a, y_a) = 0,   marginals of m = (mu, nu),
/// sum_a m_a (z_u(a) - x_a) = 0 per x,   sum_a m_a (z_u(a) - y_a) = 0 per y,
/// ```
///
/// in the unknowns `(u, g, m)`. Minimum-norm Gauss-Newton from the LP plan
/// converges quadratically when `A` is right; the result is checked like any
/// other bracket.
fn refine(mu: &DiscreteMeasure, nu: &DiscreteMeasure, f: &Frame, cert: &CertifiedZ2) -> Option<CertifiedZ2> {
    [1e-10, 1e-8, 1e-6].iter().find_map(|&min_mass| {
        let (field, pairs) = newton_pairs(mu, nu, f, cert, min_mass)?;
        let mut shrunk = field.clone();
        shrunk.make_admissible();
        let value = shrunk.objective(mu, nu).ok()?;
        let triples: Vec<Triple> = pairs
            .iter()
            .filter(|&&(_, _, m)| m > 0.0)
            .map(|&(p, q, m)| Triple {
                x: field.points[p].clone(),
                y: field.points[q].clone(),
                z: if p == q { field.points[p].clone() } else { field.z_bar(p, q) },
                m,
            })
            .collect();
        let primal = ThreePlan { triples };
        if !validate_three_plan(&primal, mu, nu).valid {
            return None;
        }
        let upper = three_plan_cost(&primal);
        let lower = value.max(cert.lp_lower);
        let (worst, _) = shrunk.max_constraint();
        let active = active_pairs(&shrunk, TOL_ACTIVE * f.r * f.r);
        let dual = DualReport {
            value,
            max_violation: worst.max(0.0),
            active_pairs: active,
            field: shrunk,
            ..cert.dual.clone()
        };
        Some(CertifiedZ2 {
            lower,
            upper,
            gap: (upper - lower).max(0.0),
            dual,
            lp_lower: cert.lp_lower,
            rounds: cert.rounds,
            support_size: primal.triples.len(),
            primal,
        })
    })
}

type PairMass = (usize, usize, f64);

/// Solves the pair system; returns the field and `(p, q, mass)` per pair.
/// Pairs whose mass reaches zero leave the active set.
fn newton_pairs(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    f: &Frame,
    cert: &CertifiedZ2,
    min_mass: f64,
) -> Option<(OneField, Vec<PairMass>)> {
    let field = &cert.dual.field;
    let d = f.dim();
    let stride = 1 + d;
    let r2 = f.r * f.r;
    let sys = PairSystem {
        pts: field.points.iter().map(|p| f.to_frame(p)).collect(),
        stride,
        mw: mu.weights().collect(),
        nw: nu.weights().collect(),
    };

    let mut pairs: Vec<Pair> = Vec::new();
    for t in &cert.primal.triples {
        let p = field.index_of(&t.x, TOL_SUPPORT)?;
        let q = field.index_of(&t.y, TOL_SUPPORT)?;
        match pairs.iter_mut().find(|e| e.p == p && e.q == q) {
            Some(e) => e.m += t.m,
            None => pairs.push(Pair {
                p,
                q,
                i: mu.index_of(&t.x, TOL_SUPPORT)?,
                j: nu.index_of(&t.y, TOL_SUPPORT)?,
                m: t.m,
            }),
        }
    }
    pairs.retain(|e| e.m >= min_mass);

    let mut g = DVector::<f64>::zeros(field.len() * stride);
    for s in 0..field.len() {
        g[s * stride] = field.values[s] / r2;
        for l in 0..d {
            g[s * stride + 1 + l] = field.gradients[s][l] / f.r;
        }
    }
    let to_field = |g: &DVector<f64>| {
        let mut out = field.clone();
        for s in 0..field.len() {
            out.values[s] = g[s * stride] * r2;
            for l in 0..d {
                out.gradients[s][l] = g[s * stride + 1 + l] * f.r;
            }
        }
        out
    };
    let mut additions = 0;
    let mut iterations = 0;
    loop {
        let (r, jac) = sys.eval(&g, &pairs);
        if r.amax() <= 1e-14 {
            // A violated pair between the supports belongs in the active set.
            let out = to_field(&g);
            let worst = (0..out.len())
                .flat_map(|p| (0..out.len()).map(move |q| (p, q)))
                .filter(|&(p, q)| p != q && !pairs.iter().any(|e| e.p == p && e.q == q))
                .filter_map(|(p, q)| {
                    let i = mu.index_of(&out.points[p], TOL_SUPPORT)?;
                    let j = nu.index_of(&out.points[q], TOL_SUPPORT)?;
                    Some((out.constraint(p, q), p, q, i, j))
                })
                .max_by(|a, b| a.0.total_cmp(&b.0));
            match worst {
                Some((c, p, q, i, j)) if c > 1e-13 * r2 && additions < 5 => {
                    pairs.push(Pair { p, q, i, j, m: 1e-9 });
                    additions += 1;
                    continue;
                }
                _ => break,
            }
        }
        iterations += 1;
        if iterations > 60 {
            return None;
        }
        let svd = jac.svd(true, true);
        let cutoff = 1e-10 * svd.singular_values.max();
        let step = svd.solve(&r, cutoff).ok()?;
        let nf = g.len();
        let mut t: f64 = 1.0;
        for (a, e) in pairs.iter().enumerate() {
            if step[nf + a] > e.m {
                t = t.min(e.m / step[nf + a]);
            }
        }
        g -= step.rows(0, nf) * t;
        for (a, e) in pairs.iter_mut().enumerate() {
            e.m -= t * step[nf + a];
        }
        pairs.retain(|e| e.m > 1e-15);
    }
    let mut out = to_field(&g);
    // Restore the gauge; C is invariant under affine terms.
    let b: Vec<f64> = out.gradients[out.base].iter().map(|v| -v).collect();
    let a0 = -out.values[out.base] - dot(&b, &out.points[out.base]);
    out.add_affine(a0, &b);
    Some((out, pairs.iter().map(|e| (e.p, e.q, e.m)).collect()))
}

/// A pair of field indices carrying mass, with its atom indices in `mu`, `nu`.
struct Pair {
    p: usize,
    q: usize,
    i: usize,
    j: usize,
    m: f64,
}

struct PairSystem {
    pts: Vec<Vec<f64>>,
    stride: usize,
    mw: Vec<f64>,
    nw: Vec<f64>,
}

impl PairSystem {
    /// Residual and Jacobian in the unknowns `(field, masses)`.
    fn eval(&self, g: &DVector<f64>, pairs: &[Pair]) -> (DVector<f64>, DMatrix<f64>) {
        let (stride, d) = (self.stride, self.stride - 1);
        let (n, m) = (self.mw.len(), self.nw.len());
        let nf = g.len();
        let n_eq = pairs.len() + (n + m) * stride;
        let mut r = DVector::<f64>::zeros(n_eq);
        let mut jac = DMatrix::<f64>::zeros(n_eq, nf + pairs.len());
        let row_mu = pairs.len();
        let row_nu = row_mu + n * stride;
        for (i, w) in self.mw.iter().enumerate() {
            r[row_mu + i * stride] = -w;
        }
        for (j, w) in self.nw.iter().enumerate() {
            r[row_nu + j * stride] = -w;
        }
        for (a, e) in pairs.iter().enumerate() {
            let (op, oq) = (e.p * stride, e.q * stride);
            let (xp, xq) = (&self.pts[e.p], &self.pts[e.q]);
            let mut z = xp.clone();
            if e.p != e.q {
                let mut c = g[oq] - g[op];
                jac[(a, oq)] = 1.0;
                jac[(a, op)] = -1.0;
                for l in 0..d {
                    let (gp, gq) = (g[op + 1 + l], g[oq + 1 + l]);
                    let dl = xq[l] - xp[l];
                    c += -0.5 * (gp + gq) * dl + 0.25 * (gq - gp).powi(2) - 0.25 * dl * dl;
                    jac[(a, op + 1 + l)] = -0.5 * dl - 0.5 * (gq - gp);
                    jac[(a, oq + 1 + l)] = -0.5 * dl + 0.5 * (gq - gp);
                    z[l] = 0.5 * (xp[l] + xq[l]) + 0.5 * (gq - gp);
                }
                r[a] = c;
            }
            for (row, anchor) in [(row_mu + e.i * stride, xp), (row_nu + e.j * stride, xq)] {
                r[row] += e.m;
                jac[(row, nf + a)] = 1.0;
                for l in 0..d {
                    r[row + 1 + l] += e.m * (z[l] - anchor[l]);
                    jac[(row + 1 + l, nf + a)] = z[l] - anchor[l];
                    if e.p != e.q {
                        jac[(row + 1 + l, oq + 1 + l)] += 0.5 * e.m;
                        jac[(row + 1 + l, op + 1 + l)] -= 0.5 * e.m;
                    }
                }
            }
        }
        (r, jac)
    }
}

/// Drops unused generated columns once the support grows large.
fn prune(zs: &mut Vec<Vec<f64>>, s: &FrameSolution, n_atoms: usize, keep_first: usize) {
    if zs.len() <= 6 * n_atoms {
        return;
    }
    let k_old = s.p.first().map_or(0, Vec::len);
    let rho = rho_of(s, k_old);
    let mut k = 0;
    zs.retain(|_| {
        let keep = k < keep_first || k >= k_old || rho[k] > 0.0;
        k += 1;
        keep
    });
}

/// Vertices of a simplex strictly containing the unit ball.
fn bounding_simplex(d: usize) -> Vec<Vec<f64>> {
    let base = vec![-1.5; d];
    let mut out = vec![base.clone()];
    for l in 0..d {
        let mut v = base.clone();
        v[l] += 3.0 * d as f64;
        out.push(v);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalityReport {
    /// Largest `|z - z_u(x, y)|` over triples with positive mass.
    pub max_z_residual: f64,
    /// Largest `|C(x, y)|` over triples with positive mass.
    pub max_two_point_residual: f64,
    pub worst_triple: Option<usize>,
    pub z_ok: bool,
    pub two_point_ok: bool,
}

impl OptimalityReport {
    pub fn ok(&self) -> bool {
        self.z_ok && self.two_point_ok
    }
}

/// Checks that the plan sits on the gap-minimising points of the field and
/// that each mass-carrying pair saturates its two-point constraint.
pub fn verify_optimality_conditions(dual: &DualReport, pi: &ThreePlan, tol: f64) -> Result<OptimalityReport> {
    verify_field_plan(&dual.field, pi, tol)
}

pub fn verify_field_plan(field: &OneField, pi: &ThreePlan, tol: f64) -> Result<OptimalityReport> {
    let mut max_z = 0.0f64;
    let mut max_c = 0.0f64;
    let mut worst = None;
    let mut worst_score = 0.0f64;
    for (t_idx, t) in pi.triples.iter().enumerate() {
        if !(t.m > 0.0) {
            continue;
        }
        let i = field.index_of(&t.x, TOL_SUPPORT).ok_or_else(|| Error::MissingPoint(t.x.clone()))?;
        let j = field.index_of(&t.y, TOL_SUPPORT).ok_or_else(|| Error::MissingPoint(t.y.clone()))?;
        let (zr, cr) = if i == j {
            (dist(&t.z, &t.x), 0.0)
        } else {
            (dist(&t.z, &field.z_bar(i, j)), field.constraint(i, j).abs())
        };
        max_z = max_z.max(zr);
        max_c = max_c.max(cr);
        if zr.max(cr) > worst_score {
            worst_score = zr.max(cr);
            worst = Some(t_idx);
        }
    }
    Ok(OptimalityReport {
        max_z_residual: max_z,
        max_two_point_residual: max_c,
        worst_triple: worst,
        z_ok: max_z <= tol,
        two_point_ok: max_c <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mu_ab(a: f64, b: f64) -> DiscreteMeasure {
        DiscreteMeasure::from_1d(&[-a, b], &[b / (a + b), a / (a + b)]).unwrap()
    }

    fn nu_ab(a: f64, b: f64) -> DiscreteMeasure {
        DiscreteMeasure::from_1d(&[-b, a], &[a / (a + b), b / (a + b)]).unwrap()
    }

    fn t(x: f64, y: f64, z: f64, m: f64) -> Triple {
        Triple { x: vec![x], y: vec![y], z: vec![z], m }
    }

    fn example_plan() -> ThreePlan {
        let third = 1.0 / 3.0;
        ThreePlan { triples: vec![t(-1.0, -2.0, -2.0, third), t(-1.0, 1.0, 0.0, third), t(2.0, 1.0, 2.0, third)] }
    }

    fn sym(a: f64) -> DiscreteMeasure {
        DiscreteMeasure::from_1d(&[-a, a], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn validates_explicit_two_atom_plan() {
        let r = validate_three_plan(&example_plan(), &mu_ab(1.0, 2.0), &nu_ab(1.0, 2.0));
        assert!(r.valid, "{r:?}");
        assert!(r.max_residual() <= 1e-15);
        assert_abs_diff_eq!(three_plan_cost(&example_plan()), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn validation_trivial_cases() {
        let d = DiscreteMeasure::dirac(vec![0.0]);
        let ok = ThreePlan { triples: vec![t(0.0, 0.0, 0.0, 1.0)] };
        assert!(validate_three_plan(&ok, &d, &d).valid);
        assert_eq!(three_plan_cost(&ok), 0.0);
        let bad = ThreePlan { triples: vec![t(0.0, 0.0, 1.0, 1.0)] };
        let r = validate_three_plan(&bad, &d, &d);
        assert!(!r.valid);
        assert_eq!(r.martingale_mu_residual, 1.0);
    }

    #[test]
    fn glued_product_plan_cost() {
        let p = ThreePlan { triples: vec![t(0.0, -1.0, -1.0, 0.5), t(0.0, 1.0, 1.0, 0.5)] };
        assert_abs_diff_eq!(three_plan_cost(&p), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn convex_order_examples() {
        let d0 = DiscreteMeasure::dirac(vec![0.0]);
        assert!(check_convex_order(&d0, &sym(1.0)).unwrap());
        assert!(!check_convex_order(&sym(1.0), &d0).unwrap());
        assert!(check_convex_order(&sym(1.0), &sym(2.0)).unwrap());
        let (mu, nu) = (mu_ab(1.0, 2.0), nu_ab(1.0, 2.0));
        assert!(!check_convex_order(&mu, &nu).unwrap());
        assert!(!check_convex_order(&nu, &mu).unwrap());
    }

    #[test]
    fn convex_order_lp_agrees_with_line_test() {
        let (mu, nu) = (mu_ab(1.0, 2.0), nu_ab(1.0, 2.0));
        assert!(matches!(martingale_lp(&mu, &nu), Err(Error::NotInConvexOrder)));
        assert!(martingale_lp(&sym(1.0), &sym(2.0)).is_ok());
    }

    #[test]
    fn martingale_couplings() {
        let d0 = DiscreteMeasure::dirac(vec![0.0]);
        let c = martingale_coupling(&d0, &sym(1.0)).unwrap();
        assert_abs_diff_eq!(c.mass[0][0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(c.mass[0][1], 0.5, epsilon = 1e-14);

        let m = DiscreteMeasure::from_1d(&[-1.0, 0.5, 3.0], &[0.2, 0.5, 0.3]).unwrap();
        let c = martingale_coupling(&m, &m).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(c.mass[i][i], m.atoms()[i].w, epsilon = 1e-14);
        }

        let c = martingale_coupling(&sym(1.0), &sym(2.0)).unwrap();
        assert!(c.martingale_residual() <= 1e-9);
        assert!(c.marginal_residual(&sym(1.0), &sym(2.0)) <= 1e-12);

        let (mu, nu) = (mu_ab(1.0, 2.0), nu_ab(1.0, 2.0));
        assert!(matches!(martingale_coupling(&mu, &nu), Err(Error::NotInConvexOrder)));
    }

    #[test]
    fn closed_form_examples() {
        let d0 = DiscreteMeasure::dirac(vec![0.0]);
        assert_abs_diff_eq!(z2_convex_order_closed_form(&d0, &sym(1.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(z2_convex_order_closed_form(&sym(1.0), &sym(2.0)).unwrap(), 1.5, epsilon = 1e-15);
        assert_eq!(z2_convex_order_closed_form(&sym(1.0), &sym(1.0)).unwrap(), 0.0);
        assert!(matches!(
            z2_convex_order_closed_form(&mu_ab(1.0, 2.0), &nu_ab(1.0, 2.0)),
            Err(Error::NotInConvexOrder)
        ));
    }

    #[test]
    fn variance_lp_on_dominating_support() {
        let d0 = DiscreteMeasure::dirac(vec![0.0]);
        let nu = sym(1.0);
        let s = solve_variance_lp(&d0, &nu, &[vec![0.0], vec![-1.0], vec![1.0]]).unwrap();
        assert_abs_diff_eq!(s.value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.rho[0], 0.0, epsilon = 1e-12);

        let m = DiscreteMeasure::from_1d(&[-1.0, 0.5], &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let s = solve_variance_lp(&m, &m, &[vec![-1.0], vec![0.5]]).unwrap();
        assert_abs_diff_eq!(s.value, m.stats().variance, epsilon = 1e-12);
    }

    #[test]
    fn gluing_identity() {
        let (mu, nu) = (mu_ab(1.0, 2.0), nu_ab(1.0, 2.0));
        let support = vec![vec![-2.0], vec![-1.0], vec![0.0], vec![1.0], vec![2.0]];
        let s = solve_variance_lp(&mu, &nu, &support).unwrap();
        let plan = glue(&s);
        assert!(validate_three_plan(&plan, &mu, &nu).valid);
        let half = 0.5 * (mu.stats().variance + nu.stats().variance);
        assert_abs_diff_eq!(three_plan_cost(&plan), s.value - half, epsilon = 1e-12);
    }

    #[test]
    fn candidate_support_for_quadratic_field() {
        let d0 = DiscreteMeasure::dirac(vec![0.0]);
        let nu = sym(1.0);
        let dual = solve_dual_z2(&d0, &nu, 1e-8).unwrap();
        let s = build_candidate_support(&dual, &d0, &nu);
        for y in nu.points() {
            assert!(s.iter().any(|z| dist(z, y) <= 1e-6));
        }
    }

    #[test]
    fn certify_convex_order_pair() {
        let d0 = DiscreteMeasure::dirac(vec![0.0]);
        let nu = sym(1.0);
        let c = certify_z2(&d0, &nu, 1e-8).unwrap();
        assert_abs_diff_eq!(c.lower, 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(c.upper, 0.5, epsilon = 1e-8);
        assert!(validate_three_plan(&c.primal, &d0, &nu).valid);
    }

    #[test]
    fn certify_identical_measures() {
        let m = DiscreteMeasure::from_1d(&[-1.0, 0.5], &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let c = certify_z2(&m, &m, 1e-8).unwrap();
        assert_abs_diff_eq!(c.upper, 0.0, epsilon = 1e-12);
        assert!(c.lower <= c.upper + 1e-10);
    }

    #[test]
    fn certify_two_atom_pair() {
        let (mu, nu) = (mu_ab(1.0, 2.0), nu_ab(1.0, 2.0));
        let c = certify_z2(&mu, &nu, 1e-8).unwrap();
        assert!(c.gap <= 1e-8);
        assert!(c.lower >= 0.5 - 1e-12 && c.upper <= 2.0 / 3.0 + 1e-8, "{} {}", c.lower, c.upper);
        let support = build_candidate_support(&c.dual, &mu, &nu);
        for z in [-2.0, 0.0, 2.0] {
            assert!(support.iter().any(|s| (s[0] - z).abs() <= 1e-4), "{z} missing from {support:?}");
        }
        let rep = verify_optimality_conditions(&c.dual, &c.primal, 1e-5).unwrap();
        assert!(rep.ok(), "{rep:?}");
    }

    #[test]
    fn perturbed_plan_fails_optimality() {
        let field = OneField::from_fn(vec![vec![0.0], vec![-1.0], vec![1.0]], 0, |x| 0.5 * x[0] * x[0], |x| x.to_vec());
        let mut plan = ThreePlan { triples: vec![t(0.0, -1.0, -1.0, 0.5), t(0.0, 1.0, 1.0, 0.5)] };
        let ok = verify_field_plan(&field, &plan, 1e-12).unwrap();
        assert!(ok.ok());
        assert_eq!(ok.max_two_point_residual, 0.0);
        plan.triples[1].z[0] += 0.1;
        let bad = verify_field_plan(&field, &plan, 1e-6).unwrap();
        assert!(!bad.z_ok);
        assert_abs_diff_eq!(bad.max_z_residual, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn plan_json_round_trip() {
        let p = example_plan();
        let s = p.to_json();
        assert!(s.contains("\"triples\""));
        assert_eq!(ThreePlan::from_json(&s).unwrap(), p);
    }
}
