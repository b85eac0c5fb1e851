//! Primal-dual interior-point method for the pairwise-constrained field problem
//!
//! ```text
//! maximise   sum_s c_s u_s
//! subject to C(p, q) <= 0   for every ordered pair p != q,
//!            u_base = 0, g_base = 0,
//! ```
//!
//! where `C` is the convex quadratic two-point function of
//! [`super::pairwise_constraint`]. Iterates stay strictly feasible, so every
//! iterate is a valid field.

use nalgebra::{DMatrix, DVector};

use crate::linalg::dot;

#[derive(Clone, Copy, Debug)]
pub(crate) struct BarrierOptions {
    /// Target for the surrogate duality gap `-sum_k lambda_k f_k`.
    pub gap_tol: f64,
    /// Target for the dual residual norm.
    pub residual_tol: f64,
    pub max_iterations: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-13, residual_tol: 1e-10, max_iterations: 300 }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BarrierSolution {
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    pub iterations: usize,
    pub surrogate_gap: f64,
    pub converged: bool,
}

struct Layout {
    dim: usize,
    /// Offset of `u_s` in the variable vector (the gradient follows), or
    /// `None` for the gauge point.
    offset: Vec<Option<usize>>,
    n_vars: usize,
}

impl Layout {
    fn new(n_points: usize, dim: usize, base: usize) -> Self {
        let mut offset = vec![None; n_points];
        let mut next = 0;
        for (s, o) in offset.iter_mut().enumerate() {
            if s != base {
                *o = Some(next);
                next += 1 + dim;
            }
        }
        Self { dim, offset, n_vars: next }
    }

    fn value(&self, x: &[f64], s: usize) -> f64 {
        self.offset[s].map_or(0.0, |o| x[o])
    }

    fn gradient<'a>(&self, x: &'a [f64], s: usize, zero: &'a [f64]) -> &'a [f64] {
        match self.offset[s] {
            Some(o) => &x[o + 1..o + 1 + self.dim],
            None => zero,
        }
    }
}

struct Problem<'a> {
    points: &'a [Vec<f64>],
    objective: &'a [f64],
    layout: Layout,
    pairs: Vec<(usize, usize)>,
    /// `q - p` and `|q - p|^2 / 4` per pair.
    deltas: Vec<(Vec<f64>, f64)>,
    zero: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn constraint(&self, x: &[f64], k: usize) -> f64 {
        let (p, q) = self.pairs[k];
        let (dq, quarter) = &self.deltas[k];
        let gp = self.layout.gradient(x, p, &self.zero);
        let gq = self.layout.gradient(x, q, &self.zero);
        let mut lin = 0.0;
        let mut quad = 0.0;
        for l in 0..self.layout.dim {
            lin += (gp[l] + gq[l]) * dq[l];
            let dg = gq[l] - gp[l];
            quad += dg * dg;
        }
        self.layout.value(x, q) - self.layout.value(x, p) - 0.5 * lin + 0.25 * quad - quarter
    }

    /// Sparse gradient of constraint `k` as `(variable, value)` pairs.
    fn gradient(&self, x: &[f64], k: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (p, q) = self.pairs[k];
        let (dq, _) = &self.deltas[k];
        let gp = self.layout.gradient(x, p, &self.zero);
        let gq = self.layout.gradient(x, q, &self.zero);
        if let Some(o) = self.layout.offset[p] {
            out.push((o, -1.0));
            for l in 0..self.layout.dim {
                out.push((o + 1 + l, -0.5 * dq[l] - 0.5 * (gq[l] - gp[l])));
            }
        }
        if let Some(o) = self.layout.offset[q] {
            out.push((o, 1.0));
            for l in 0..self.layout.dim {
                out.push((o + 1 + l, -0.5 * dq[l] + 0.5 * (gq[l] - gp[l])));
            }
        }
    }

    fn objective_value(&self, x: &[f64]) -> f64 {
        (0..self.points.len()).map(|s| self.objective[s] * self.layout.value(x, s)).sum()
    }

    /// Gradient of the minimised objective `-c.u`.
    fn objective_gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.n_vars];
        for (s, o) in self.layout.offset.iter().enumerate() {
            if let Some(o) = o {
                g[*o] = -self.objective[s];
            }
        }
        g
    }

    fn all_strictly_feasible(&self, x: &[f64]) -> bool {
        (0..self.pairs.len()).all(|k| self.constraint(x, k) < 0.0)
    }

    fn residual_norm(&self, x: &[f64], lambda: &[f64], t: f64, grad0: &[f64]) -> (f64, f64) {
        let mut r_dual = grad0.to_vec();
        let mut cent = 0.0;
        let mut buf = Vec::new();
        for k in 0..self.pairs.len() {
            let f = self.constraint(x, k);
            self.gradient(x, k, &mut buf);
            for &(a, v) in &buf {
                r_dual[a] += lambda[k] * v;
            }
            let rc = -lambda[k] * f - 1.0 / t;
            cent += rc * rc;
        }
        let dual = dot(&r_dual, &r_dual).sqrt();
        ((dual * dual + cent).sqrt(), dual)
    }
}

pub(crate) fn solve(points: &[Vec<f64>], objective: &[f64], base: usize, opts: BarrierOptions) -> BarrierSolution {
    let n_points = points.len();
    let dim = points.first().map_or(0, Vec::len);
    let layout = Layout::new(n_points, dim, base);
    let mut pairs = Vec::with_capacity(n_points * n_points.saturating_sub(1));
    let mut deltas = Vec::with_capacity(pairs.capacity());
    for p in 0..n_points {
        for q in 0..n_points {
            if p != q {
                let dq: Vec<f64> = points[q].iter().zip(&points[p]).map(|(a, b)| a - b).collect();
                let quarter = 0.25 * dot(&dq, &dq);
                pairs.push((p, q));
                deltas.push((dq, quarter));
            }
        }
    }
    let prob = Problem { points, objective, layout, pairs, deltas, zero: vec![0.0; dim] };
    let n = prob.layout.n_vars;
    let m = prob.pairs.len();

    let mut x = vec![0.0; n];
    let mut lambda = vec![1.0 / m.max(1) as f64; m];
    let grad0 = prob.objective_gradient();
    let mu = 10.0;

    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut buf = Vec::new();
    let mut fvals = vec![0.0; m];

    if n == 0 || m == 0 {
        return finish(&prob, &x, 0, 0.0, 0.0, true);
    }

    while iterations < opts.max_iterations {
        for (k, f) in fvals.iter_mut().enumerate() {
            *f = prob.constraint(&x, k);
        }
        gap = fvals.iter().zip(&lambda).map(|(f, l)| -f * l).sum();
        let t = mu * m as f64 / gap;
        let (_, dres) = prob.residual_norm(&x, &lambda, t, &grad0);
        dual_res = dres;
        if gap <= opts.gap_tol && dual_res <= opts.residual_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Reduced Newton system.
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::from_iterator(n, grad0.iter().map(|g| -g));
        for k in 0..m {
            let s = -fvals[k];
            let w = lambda[k] / s;
            prob.gradient(&x, k, &mut buf);
            for &(a, va) in &buf {
                rhs[a] -= va / (t * s);
                for &(b, vb) in &buf {
                    h[(a, b)] += w * va * vb;
                }
            }
            let (p, q) = prob.pairs[k];
            let half = 0.5 * lambda[k];
            let op = prob.layout.offset[p];
            let oq = prob.layout.offset[q];
            for l in 0..dim {
                if let Some(op) = op {
                    h[(op + 1 + l, op + 1 + l)] += half;
                }
                if let Some(oq) = oq {
                    h[(oq + 1 + l, oq + 1 + l)] += half;
                }
                if let (Some(op), Some(oq)) = (op, oq) {
                    h[(op + 1 + l, oq + 1 + l)] -= half;
                    h[(oq + 1 + l, op + 1 + l)] -= half;
                }
            }
        }
        let Some(dx) = solve_spd(h, &rhs) else {
            log::warn!("barrier: Newton system singular at iteration {iterations}");
            break;
        };
        let dx: Vec<f64> = dx.iter().copied().collect();

        let mut dlambda = vec![0.0; m];
        for k in 0..m {
            let s = -fvals[k];
            prob.gradient(&x, k, &mut buf);
            let gdx: f64 = buf.iter().map(|&(a, v)| v * dx[a]).sum();
            dlambda[k] = -lambda[k] + (1.0 / t + lambda[k] * gdx) / s;
        }

        // Line search: positivity of lambda, strict feasibility, residual decrease.
        let mut step: f64 = 1.0;
        for k in 0..m {
            if dlambda[k] < 0.0 {
                step = step.min(-lambda[k] / dlambda[k]);
            }
        }
        step *= 0.99;
        let trial = |s: f64| -> Vec<f64> { x.iter().zip(&dx).map(|(a, b)| a + s * b).collect() };
        let mut xn = trial(step);
        let mut halvings = 0;
        while !prob.all_strictly_feasible(&xn) && halvings < 60 {
            step *= 0.5;
            xn = trial(step);
            halvings += 1;
        }
        if halvings >= 60 {
            log::debug!("barrier: could not keep strict feasibility");
            break;
        }
        let (r0, _) = prob.residual_norm(&x, &lambda, t, &grad0);
        loop {
            let ln: Vec<f64> = lambda.iter().zip(&dlambda).map(|(l, d)| l + step * d).collect();
            let (r1, _) = prob.residual_norm(&xn, &ln, t, &grad0);
            if r1 <= (1.0 - 0.01 * step) * r0 || halvings >= 60 {
                lambda = ln;
                break;
            }
            step *= 0.5;
            xn = trial(step);
            halvings += 1;
        }
        if step < 1e-14 {
            log::debug!("barrier: step collapsed at iteration {iterations}");
            x = xn;
            break;
        }
        x = xn;
    }

    finish(&prob, &x, iterations, gap, dual_res, converged)
}

fn finish(
    prob: &Problem<'_>,
    x: &[f64],
    iterations: usize,
    surrogate_gap: f64,
    dual_residual: f64,
    converged: bool,
) -> BarrierSolution {
    let n_points = prob.points.len();
    let values = (0..n_points).map(|s| prob.layout.value(x, s)).collect();
    let gradients = (0..n_points).map(|s| prob.layout.gradient(x, s, &prob.zero).to_vec()).collect();
    log::debug!(
        "barrier: {iterations} iterations, objective {:.15e}, gap {surrogate_gap:e}, residual {dual_residual:e}",
        prob.objective_value(x)
    );
    BarrierSolution { values, gradients, iterations, surrogate_gap, converged }
}

fn solve_spd(h: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut reg = h.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += 1e-14 * scale;
    }
    if let Some(ch) = reg.cholesky() {
        return Some(ch.solve(rhs));
    }
    h.lu().solve(rhs)
}
