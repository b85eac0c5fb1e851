//! Small linear programs in index form, solved with HiGHS.
//!
//! ```text
//! minimise c.x   subject to   rows (=, <=, >=) b,   lo <= x <= hi.
//! ```
//!
//! Row duals follow the convention `c - A^T y >= 0` at optimality of a
//! minimisation, so `b.y` equals the optimal value when all variables sit at
//! zero lower bounds.

use highs::{HighsModelStatus, RowProblem, Sense as Direction};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense projection is skipped beyond this many matrix entries.
const MAX_PROJECTION: usize = 400_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Clone, Copy, Debug)]
enum Strategy {
    Default,
    NoPresolve,
    Primal,
    Ipm,
}

impl Strategy {
    const ALL: [Strategy; 4] = [Strategy::Default, Strategy::NoPresolve, Strategy::Primal, Strategy::Ipm];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

/// Sparse coefficients, sense and right-hand side.
type Row = (Vec<(usize, f64)>, Sense, f64);

#[derive(Clone, Debug)]
pub struct LinearProgram {
    cost: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<Row>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per row.
    pub duals: Vec<f64>,
}

impl LinearProgram {
    /// `n_vars` non-negative variables with zero cost.
    pub fn new(n_vars: usize) -> Self {
        Self { cost: vec![0.0; n_vars], bounds: vec![(0.0, f64::INFINITY); n_vars], rows: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn set_cost(&mut self, j: usize, c: f64) {
        self.cost[j] = c;
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.bounds[j] = (lo, hi);
    }

    pub fn set_free(&mut self, j: usize) {
        self.bounds[j] = (f64::NEG_INFINITY, f64::INFINITY);
    }

    pub fn add(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.cost.len()));
        self.rows.push((coeffs, sense, rhs));
        self.rows.len() - 1
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.add(coeffs, Sense::Eq, rhs)
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let mut last = LpError::Numerical("no attempt".into());
        for strategy in Strategy::ALL {
            match self.solve_with(strategy) {
                Err(LpError::Numerical(msg)) => {
                    log::debug!("HiGHS {strategy:?} failed ({msg}); retrying");
                    last = LpError::Numerical(msg);
                }
                other => return other,
            }
        }
        Err(last)
    }

    fn solve_with(&self, strategy: Strategy) -> Result<LpSolution, LpError> {
        let mut p = RowProblem::new();
        let cols: Vec<_> = self.cost.iter().zip(&self.bounds).map(|(&c, &(lo, hi))| p.add_column(c, lo..=hi)).collect();
        for (coeffs, sense, rhs) in &self.rows {
            let terms = coeffs.iter().map(|&(j, a)| (cols[j], a));
            match sense {
                Sense::Eq => p.add_row(*rhs..=*rhs, terms),
                Sense::Le => p.add_row(f64::NEG_INFINITY..=*rhs, terms),
                Sense::Ge => p.add_row(*rhs..=f64::INFINITY, terms),
            }
        }
        let mut model = p.optimise(Direction::Minimise);
        model.make_quiet();
        model.set_option("threads", 1);
        model.set_option("primal_feasibility_tolerance", 1e-10);
        model.set_option("dual_feasibility_tolerance", 1e-10);
        match strategy {
            Strategy::Default => {}
            Strategy::NoPresolve => model.set_option("presolve", "off"),
            Strategy::Primal => {
                model.set_option("presolve", "off");
                model.set_option("simplex_strategy", 4);
            }
            Strategy::Ipm => model.set_option("solver", "ipm"),
        }
        let solved = model.try_solve().map_err(|e| LpError::Numerical(format!("{e:?}")))?;
        match solved.status() {
            HighsModelStatus::Optimal => {}
            HighsModelStatus::Infeasible => return Err(LpError::Infeasible),
            HighsModelStatus::Unbounded => return Err(LpError::Unbounded),
            // Presolve cannot tell these apart; an all-zero objective disambiguates.
            HighsModelStatus::UnboundedOrInfeasible => return Err(self.infeasible_or_unbounded()),
            other => return Err(LpError::Numerical(format!("{other:?}"))),
        }
        let sol = solved.get_solution();
        let mut x = sol.columns().to_vec();
        self.project_support(&mut x);
        let objective = x.iter().zip(&self.cost).map(|(a, c)| a * c).sum();
        Ok(LpSolution { x, objective, duals: sol.dual_rows().to_vec() })
    }

    /// Least-norm correction of the positive entries of `x` onto `A x = b`,
    /// kept only when it stays non-negative and shrinks the residual. Applies
    /// to all-equality programs over non-negative variables.
    fn project_support(&self, x: &mut [f64]) {
        if self.rows.iter().any(|r| r.1 != Sense::Eq) || self.bounds.iter().any(|&(lo, hi)| lo != 0.0 || hi.is_finite())
        {
            return;
        }
        let support: Vec<usize> = (0..x.len()).filter(|&j| x[j] > 0.0).collect();
        if support.is_empty() || support.len() * self.rows.len() > MAX_PROJECTION {
            return;
        }
        let mut col = vec![usize::MAX; x.len()];
        for (c, &j) in support.iter().enumerate() {
            col[j] = c;
        }
        let mut a = DMatrix::<f64>::zeros(self.rows.len(), support.len());
        let mut r = DVector::<f64>::zeros(self.rows.len());
        for (i, (coeffs, _, rhs)) in self.rows.iter().enumerate() {
            r[i] = *rhs;
            for &(j, v) in coeffs {
                r[i] -= v * x[j];
                if col[j] != usize::MAX {
                    a[(i, col[j])] += v;
                }
            }
        }
        let before = r.amax();
        let Ok(delta) = a.clone().svd(true, true).solve(&r, 1e-13) else {
            return;
        };
        let after = (&r - &a * &delta).amax();
        let fixed: Vec<f64> = support.iter().enumerate().map(|(c, &j)| x[j] + delta[c]).collect();
        if after < before && fixed.iter().all(|&v| v >= 0.0) {
            for (&j, v) in support.iter().zip(fixed) {
                x[j] = v;
            }
        }
    }

    fn infeasible_or_unbounded(&self) -> LpError {
        if self.cost.iter().all(|&c| c == 0.0) {
            return LpError::Infeasible;
        }
        let mut feas = self.clone();
        feas.cost.iter_mut().for_each(|c| *c = 0.0);
        match feas.solve() {
            Ok(_) => LpError::Unbounded,
            Err(e) => e,
        }
    }
}
