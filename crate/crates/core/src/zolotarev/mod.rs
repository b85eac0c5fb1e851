//! Second-order Zolotarev distance through its finite dual.
//!
//! On the working set `S = supp mu ∪ supp nu` a candidate potential is a
//! [`OneField`]: a value `u(p)` and a gradient `g(p)` at every point. The
//! field is admissible when the two-point function
//!
//! ```text
//! C(p, q) = u(q) - u(p) - <g(p) + g(q), q - p>/2 + |g(q) - g(p)|^2/4 - |q - p|^2/4
//! ```
//!
//! is non-positive for every ordered pair. `C(p, q)` is the maximum over `z`
//! of the three-point gap, attained at `z = (p + q)/2 + (g(q) - g(p))/2`.
//!
//! Restricting to `S` is exact. An admissible field satisfies the three-point
//! inequality for every `z` at its pairs, so integrating against any feasible
//! three-plan bounds its objective by the plan cost, hence by `Z2`.
//! Conversely the restriction of any `C^{1,1}` potential with 1-Lipschitz
//! gradient is admissible. The finite problem therefore has value `Z2`
//! without appealing to an extension theorem.

mod barrier;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, dist_sq, dot, lex_cmp};
use crate::measures::DiscreteMeasure;

/// Default admissibility tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Pairs with `C >= -TOL_ACTIVE * R^2` (R the support radius) count as active.
pub const TOL_ACTIVE: f64 = 1e-7;
/// Barycentres closer than this (relative to the support radius, at least 1)
/// are treated as equal.
pub const TOL_BARYCENTRE: f64 = 1e-9;
/// Points of the two supports closer than this are identified.
const TOL_POINT: f64 = 1e-12;

/// Values and gradients attached to a finite point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneField {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    /// Gauge point: `u = 0`, `g = 0` there.
    pub base: usize,
}

impl OneField {
    pub fn zero(points: Vec<Vec<f64>>, base: usize) -> Self {
        let d = points.first().map_or(0, Vec::len);
        let n = points.len();
        Self { points, values: vec![0.0; n], gradients: vec![vec![0.0; d]; n], base }
    }

    /// Samples `u` and its gradient at `points`.
    pub fn from_fn(
        points: Vec<Vec<f64>>,
        base: usize,
        u: impl Fn(&[f64]) -> f64,
        g: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Self {
        let values = points.iter().map(|p| u(p)).collect();
        let gradients = points.iter().map(|p| g(p)).collect();
        Self { points, values, gradients, base }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, x: &[f64], tol: f64) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dist(p, x)))
            .filter(|(_, d)| *d <= tol)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn constraint(&self, p: usize, q: usize) -> f64 {
        pairwise_constraint(
            &self.points[p],
            self.values[p],
            &self.gradients[p],
            &self.points[q],
            self.values[q],
            &self.gradients[q],
        )
    }

    /// `z_u(p, q) = (p + q)/2 + (g(q) - g(p))/2`.
    pub fn z_bar(&self, p: usize, q: usize) -> Vec<f64> {
        z_bar(&self.points[p], &self.gradients[p], &self.points[q], &self.gradients[q])
    }

    /// `sum_q u(q) nu(q) - sum_p u(p) mu(p)`.
    pub fn objective(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
        let mut v = 0.0;
        for a in nu.atoms() {
            v += a.w * self.values[self.lookup(&a.x)?];
        }
        for a in mu.atoms() {
            v -= a.w * self.values[self.lookup(&a.x)?];
        }
        Ok(v)
    }

    fn lookup(&self, x: &[f64]) -> Result<usize> {
        self.index_of(x, 1e-9).ok_or_else(|| Error::MissingPoint(x.to_vec()))
    }

    /// Adds the affine function `a + <b, x>` to the potential.
    pub fn add_affine(&mut self, a: f64, b: &[f64]) {
        for (i, p) in self.points.iter().enumerate() {
            self.values[i] += a + dot(b, p);
            for (g, bk) in self.gradients[i].iter_mut().zip(b) {
                *g += bk;
            }
        }
    }

    fn scale(&mut self, theta: f64) {
        for v in &mut self.values {
            *v *= theta;
        }
        for g in &mut self.gradients {
            for c in g {
                *c *= theta;
            }
        }
    }

    /// Largest `C(p, q)` over ordered pairs, with its argmax.
    pub fn max_constraint(&self) -> (f64, Option<(usize, usize)>) {
        let mut worst = f64::NEG_INFINITY;
        let mut arg = None;
        for p in 0..self.len() {
            for q in 0..self.len() {
                if p != q {
                    let c = self.constraint(p, q);
                    if c > worst {
                        worst = c;
                        arg = Some((p, q));
                    }
                }
            }
        }
        (worst, arg)
    }

    /// Shrinks the field towards zero until every pairwise constraint holds.
    ///
    /// `C` is convex in `(u, g)` and the zero field has `C(p, q) = -d` with
    /// `d = |p - q|^2 / 4`, so scaling by `d / (C + d)` clears pair `(p, q)`.
    pub fn make_admissible(&mut self) -> f64 {
        let mut total = 1.0;
        let mut slack = 1e-15;
        // Rounding can leave a residue of order 1e-17; repeat with more slack.
        for _ in 0..60 {
            let mut theta: f64 = 1.0;
            for p in 0..self.len() {
                for q in 0..self.len() {
                    if p != q {
                        let c = self.constraint(p, q);
                        if c > 0.0 {
                            let d = 0.25 * dist_sq(&self.points[p], &self.points[q]);
                            theta = theta.min(d / (c + d));
                        }
                    }
                }
            }
            if theta == 1.0 {
                return total;
            }
            let theta = theta * (1.0 - slack);
            self.scale(theta);
            total *= theta;
            slack *= 4.0;
        }
        total
    }
}

/// Two-point function `C(p, q)`; non-positive for all pairs iff the field is
/// admissible.
pub fn pairwise_constraint(p: &[f64], u_p: f64, g_p: &[f64], q: &[f64], u_q: f64, g_q: &[f64]) -> f64 {
    let mut lin = 0.0;
    let mut quad_g = 0.0;
    let mut quad_x = 0.0;
    for l in 0..p.len() {
        let dx = q[l] - p[l];
        let dg = g_q[l] - g_p[l];
        lin += (g_p[l] + g_q[l]) * dx;
        quad_g += dg * dg;
        quad_x += dx * dx;
    }
    u_q - u_p - 0.5 * lin + 0.25 * quad_g - 0.25 * quad_x
}

/// `(u_y + <g_y, z - y>) - (u_x + <g_x, z - x>) - (|z - x|^2 + |z - y|^2)/2`.
pub fn three_point_gap(x: &[f64], u_x: f64, g_x: &[f64], y: &[f64], u_y: f64, g_y: &[f64], z: &[f64]) -> f64 {
    let mut v = u_y - u_x;
    for l in 0..x.len() {
        v += g_y[l] * (z[l] - y[l]) - g_x[l] * (z[l] - x[l]);
        v -= 0.5 * ((z[l] - x[l]).powi(2) + (z[l] - y[l]).powi(2));
    }
    v
}

/// Maximiser of the three-point gap in `z`.
pub fn z_bar(x: &[f64], g_x: &[f64], y: &[f64], g_y: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|l| 0.5 * (x[l] + y[l]) + 0.5 * (g_y[l] - g_x[l])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    /// Objective of the admissible field; a certified lower bound on `Z2`.
    pub value: f64,
    pub max_violation: f64,
    /// Ordered pairs `(p, q)` of field indices with `C(p, q)` near zero.
    pub active_pairs: Vec<(usize, usize)>,
    pub field: OneField,
    pub iterations: usize,
    pub converged: bool,
    /// Final surrogate duality gap of the interior-point solve.
    pub duality_measure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Admissibility {
    pub ok: bool,
    pub worst_pair: Option<(usize, usize)>,
    pub worst_value: f64,
}

/// Maximum of `C` over ordered pairs against `tol`.
pub fn check_field_admissible(field: &OneField, tol: f64) -> Admissibility {
    let (worst_value, worst_pair) = field.max_constraint();
    Admissibility { ok: worst_pair.is_none() || worst_value <= tol, worst_pair, worst_value }
}

/// `sum_q <q, g(q)>/2 nu(q) - sum_p <p, g(p)>/2 mu(p)`.
pub fn magic_formula_value(field: &OneField, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let mut v = 0.0;
    for a in nu.atoms() {
        let i = field.lookup(&a.x)?;
        v += 0.5 * a.w * dot(&a.x, &field.gradients[i]);
    }
    for a in mu.atoms() {
        let i = field.lookup(&a.x)?;
        v -= 0.5 * a.w * dot(&a.x, &field.gradients[i]);
    }
    Ok(v)
}

/// Common barycentre of the pair, or `BarycentreMismatch`.
pub fn common_barycentre(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Vec<f64>> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { left: mu.dim(), right: nu.dim() });
    }
    let bm = mu.barycentre();
    let bn = nu.barycentre();
    let d = dist(&bm, &bn);
    let scale = mu.radius_about(&bm).max(nu.radius_about(&bn)).max(1.0);
    if d > TOL_BARYCENTRE * scale {
        return Err(Error::BarycentreMismatch { distance: d });
    }
    Ok(bm.iter().zip(&bn).map(|(a, b)| 0.5 * (a + b)).collect())
}

/// Working set `supp mu ∪ supp nu` with objective weights `nu - mu`.
/// Ordered pairs with `C(p, q) >= -tol`.
pub(crate) fn active_pairs(field: &OneField, tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for p in 0..field.len() {
        for q in 0..field.len() {
            if p != q && field.constraint(p, q) >= -tol {
                out.push((p, q));
            }
        }
    }
    out
}

pub(crate) fn working_set(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(mu.len() + nu.len());
    let mut weight: Vec<f64> = Vec::with_capacity(mu.len() + nu.len());
    for a in mu.atoms() {
        points.push(a.x.clone());
        weight.push(-a.w);
    }
    for a in nu.atoms() {
        match points.iter().position(|p| dist(p, &a.x) <= TOL_POINT) {
            Some(i) => weight[i] += a.w,
            None => {
                points.push(a.x.clone());
                weight.push(a.w);
            }
        }
    }
    (points, weight)
}

/// Support point nearest `c`; ties broken lexicographically.
pub(crate) fn gauge_point(points: &[Vec<f64>], c: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        let di = dist_sq(&points[i], c);
        let db = dist_sq(&points[best], c);
        if di < db || (di == db && lex_cmp(&points[i], &points[best]).is_lt()) {
            best = i;
        }
    }
    best
}

/// Maximises `sum u d(nu - mu)` over admissible fields on `supp mu ∪ supp nu`.
///
/// The problem is translated to the common barycentre and scaled to unit
/// radius before the interior-point solve; the field is mapped back and, if
/// rounding left any `C(p, q) > 0`, shrunk to admissibility. `value` is
/// therefore always the objective of an admissible field.
pub fn solve_dual_z2(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<DualReport> {
    let c = common_barycentre(mu, nu)?;
    let (points, weight) = working_set(mu, nu);
    let base = gauge_point(&points, &c);
    if points.len() > 200 {
        log::warn!("dual solve on {} points; runtime grows quadratically in constraints", points.len());
    }
    let radius = points.iter().map(|p| dist(p, &c)).fold(0.0, f64::max);

    if weight.iter().all(|w| w.abs() <= 1e-15) || radius == 0.0 {
        let field = OneField::zero(points, base);
        return Ok(DualReport {
            value: 0.0,
            max_violation: field.max_constraint().0.max(0.0),
            active_pairs: Vec::new(),
            field,
            iterations: 0,
            converged: true,
            duality_measure: 0.0,
        });
    }

    let scaled: Vec<Vec<f64>> =
        points.iter().map(|p| p.iter().zip(&c).map(|(a, b)| (a - b) / radius).collect()).collect();
    let opts = barrier::BarrierOptions::default();
    let sol = barrier::solve(&scaled, &weight, base, opts);
    let r2 = radius * radius;

    // Back to original coordinates: u scales by R^2, g by R.
    let mut field = OneField {
        values: sol.values.iter().map(|v| v * r2).collect(),
        gradients: sol.gradients.iter().map(|g| g.iter().map(|v| v * radius).collect()).collect(),
        points,
        base,
    };
    // The gauge fixes u and g at the base point in the original frame too,
    // since C is translation invariant.
    let theta = field.make_admissible();
    if theta < 1.0 {
        log::debug!("dual field shrunk by {theta} to restore admissibility");
    }
    let (worst, _) = field.max_constraint();
    let max_violation = worst.max(0.0);
    let value: f64 = field.values.iter().zip(&weight).map(|(u, w)| u * w).sum();

    let active_pairs = active_pairs(&field, TOL_ACTIVE * r2);

    let measure = sol.surrogate_gap * r2;
    if !sol.converged && measure > tol.max(1e-6 * r2) {
        return Err(Error::NotConverged { iterations: sol.iterations, measure });
    }
    Ok(DualReport {
        value,
        max_violation,
        active_pairs,
        field,
        iterations: sol.iterations,
        converged: sol.converged,
        duality_measure: measure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad(points: Vec<Vec<f64>>) -> OneField {
        OneField::from_fn(points, 0, |x| 0.5 * dot(x, x), |x| x.to_vec())
    }

    #[test]
    fn pairwise_constraint_examples() {
        // Quadratic field: identically zero.
        let p = [0.3, -1.0];
        let q = [2.0, 0.5];
        let c = pairwise_constraint(&p, 0.5 * dot(&p, &p), &p, &q, 0.5 * dot(&q, &q), &q);
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-15);
        // Zero field, unit distance.
        assert_eq!(pairwise_constraint(&[0.0], 0.0, &[0.0], &[1.0], 0.0, &[0.0]), -0.25);
        // u = 0, g(p) = -p at p = -1, q = 1.
        assert_abs_diff_eq!(pairwise_constraint(&[-1.0], 0.0, &[1.0], &[1.0], 0.0, &[-1.0]), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn three_point_gap_examples() {
        assert_eq!(three_point_gap(&[0.5], 1.0, &[2.0], &[0.5], 1.0, &[2.0], &[0.5]), 0.0);
        assert_eq!(three_point_gap(&[0.0], 0.0, &[0.0], &[0.0], 0.0, &[0.0], &[1.0]), -1.0);
        // Quadratic field: gap = -|z - y|^2, zero exactly at z = y.
        let (x, y) = ([0.2, -0.4], [1.0, 0.7]);
        let (ux, uy) = (0.5 * dot(&x, &x), 0.5 * dot(&y, &y));
        for z in [[0.0, 0.0], [1.0, 0.7], [-2.0, 3.0]] {
            let gap = three_point_gap(&x, ux, &x, &y, uy, &y, &z);
            assert_abs_diff_eq!(gap, -dist_sq(&z, &y), epsilon = 1e-14);
        }
    }

    #[test]
    fn gap_maximum_equals_constraint() {
        let (x, gx, ux) = ([0.1, 0.9], [0.3, -0.2], 0.4);
        let (y, gy, uy) = ([-0.5, 0.2], [-0.1, 0.6], -0.3);
        let z = z_bar(&x, &gx, &y, &gy);
        let at_max = three_point_gap(&x, ux, &gx, &y, uy, &gy, &z);
        assert_abs_diff_eq!(at_max, pairwise_constraint(&x, ux, &gx, &y, uy, &gy), epsilon = 1e-15);
        for dz in [[1e-3, 0.0], [0.0, -1e-3], [0.1, 0.1]] {
            let zz = [z[0] + dz[0], z[1] + dz[1]];
            assert!(three_point_gap(&x, ux, &gx, &y, uy, &gy, &zz) < at_max);
        }
    }

    #[test]
    fn admissibility_examples() {
        let pts = vec![vec![-1.0], vec![0.0], vec![2.0]];
        let q = quad(pts.clone());
        let a = check_field_admissible(&q, 1e-12);
        assert!(a.ok);
        assert_abs_diff_eq!(a.worst_value, 0.0, epsilon = 1e-15);

        let mut inflated = q.clone();
        inflated.values[2] += 1.0;
        let a = check_field_admissible(&inflated, 1e-12);
        assert!(!a.ok);
        assert_abs_diff_eq!(a.worst_value, 1.0, epsilon = 1e-14);
        assert_eq!(a.worst_pair.map(|(_, qq)| qq), Some(2));

        let zero = OneField::zero(pts, 1);
        let a = check_field_admissible(&zero, 0.0);
        assert!(a.ok);
        assert_abs_diff_eq!(a.worst_value, -0.25, epsilon = 1e-15);
    }

    #[test]
    fn make_admissible_restores_feasibility() {
        let mut f = quad(vec![vec![-1.0], vec![0.0], vec![2.0]]);
        f.values[1] += 0.3;
        let theta = f.make_admissible();
        assert!(theta < 1.0);
        assert!(f.max_constraint().0 <= 0.0);
    }

    #[test]
    fn magic_formula_on_quadratic_fields() {
        let mu = DiscreteMeasure::dirac(vec![0.0]);
        let nu = DiscreteMeasure::from_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let f = quad(vec![vec![0.0], vec![-1.0], vec![1.0]]);
        assert_abs_diff_eq!(magic_formula_value(&f, &mu, &nu).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(magic_formula_value(&f, &nu, &nu).unwrap(), 0.0);

        let a = DiscreteMeasure::from_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let b = DiscreteMeasure::from_1d(&[-2.0, 2.0], &[0.5, 0.5]).unwrap();
        let f = quad(vec![vec![-1.0], vec![1.0], vec![-2.0], vec![2.0]]);
        assert_abs_diff_eq!(magic_formula_value(&f, &a, &b).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn dual_convex_order_pair() {
        let mu = DiscreteMeasure::dirac(vec![0.0]);
        let nu = DiscreteMeasure::from_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let r = solve_dual_z2(&mu, &nu, 1e-8).unwrap();
        assert!(r.max_violation <= FEASIBILITY_TOL);
        assert_abs_diff_eq!(r.value, 0.5, epsilon = 1e-8);
        // Optimal field is the quadratic one: g(x) = x.
        for (p, g) in r.field.points.iter().zip(&r.field.gradients) {
            assert_abs_diff_eq!(g[0], p[0], epsilon = 1e-4);
        }
    }

    #[test]
    fn dual_identical_measures() {
        let m = DiscreteMeasure::from_1d(&[-1.0, 0.5, 3.0], &[0.2, 0.5, 0.3]).unwrap().center();
        let r = solve_dual_z2(&m, &m, 1e-8).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.field.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dual_dilation_pair() {
        let a = DiscreteMeasure::from_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let b = DiscreteMeasure::from_1d(&[-2.0, 2.0], &[0.5, 0.5]).unwrap();
        let r = solve_dual_z2(&a, &b, 1e-8).unwrap();
        assert_abs_diff_eq!(r.value, 1.5, epsilon = 1e-8);
    }

    #[test]
    fn dual_two_atom_family_in_bracket() {
        let mu = DiscreteMeasure::from_1d(&[-1.0, 2.0], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let nu = DiscreteMeasure::from_1d(&[-2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let r = solve_dual_z2(&mu, &nu, 1e-8).unwrap();
        assert!(r.value >= 0.5 - 1e-9 && r.value <= 2.0 / 3.0 + 1e-9, "{}", r.value);
    }

    #[test]
    fn barycentre_mismatch_is_an_error() {
        let mu = DiscreteMeasure::dirac(vec![0.0]);
        let nu = DiscreteMeasure::dirac(vec![1.0]);
        assert!(matches!(solve_dual_z2(&mu, &nu, 1e-8), Err(Error::BarycentreMismatch { .. })));
    }
}
