//! Quadratic Wasserstein distance between discrete measures.
//!
//! [`solve_w2`] solves the transportation LP exactly with a network simplex;
//! [`solve_w2_1d_monotone`] builds the comonotone coupling on the line and
//! serves as an independent check in 1D.

mod network_simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::measures::DiscreteMeasure;

/// A transport plan between the atoms of two measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub rows: Vec<Vec<f64>>,
    pub cols: Vec<Vec<f64>>,
    /// `mass[i][j]` is the mass sent from `rows[i]` to `cols[j]`.
    pub mass: Vec<Vec<f64>>,
}

impl Coupling {
    pub fn zeros(rows: Vec<Vec<f64>>, cols: Vec<Vec<f64>>) -> Self {
        let mass = vec![vec![0.0; cols.len()]; rows.len()];
        Self { rows, cols, mass }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mass.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols.len()];
        for r in &self.mass {
            for (sj, v) in s.iter_mut().zip(r) {
                *sj += v;
            }
        }
        s
    }

    /// `sum_ij mass_ij |row_i - col_j|^2`.
    pub fn quadratic_cost(&self) -> f64 {
        let mut c = 0.0;
        for (i, r) in self.mass.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    c += v * dist_sq(&self.rows[i], &self.cols[j]);
                }
            }
        }
        c
    }

    /// Largest deviation of the marginals from the given weights.
    pub fn marginal_residual(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        let r = self.row_sums().iter().zip(mu.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(nu.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }

    /// Largest `|sum_j mass_ij (col_j - row_i)|_inf` over rows.
    pub fn martingale_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, r) in self.mass.iter().enumerate() {
            let d = self.rows[i].len();
            for k in 0..d {
                let s: f64 = r.iter().enumerate().map(|(j, &v)| v * (self.cols[j][k] - self.rows[i][k])).sum();
                worst = worst.max(s.abs());
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct W2Solution {
    pub w2: f64,
    pub plan: Coupling,
}

fn same_dim(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { left: mu.dim(), right: nu.dim() });
    }
    Ok(())
}

/// Exact W2 via the transportation LP.
pub fn solve_w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<W2Solution> {
    same_dim(mu, nu)?;
    let supply: Vec<f64> = mu.weights().collect();
    let demand: Vec<f64> = nu.weights().collect();
    let m = demand.len();
    let mut cost = Vec::with_capacity(supply.len() * m);
    for x in mu.points() {
        for y in nu.points() {
            cost.push(dist_sq(x, y));
        }
    }
    let sol = network_simplex::solve(&supply, &demand, &cost);
    log::debug!("transport simplex: {} pivots, cost {:e}", sol.pivots, sol.cost);
    let mut plan =
        Coupling::zeros(mu.points().map(<[f64]>::to_vec).collect(), nu.points().map(<[f64]>::to_vec).collect());
    for (i, row) in plan.mass.iter_mut().enumerate() {
        row.copy_from_slice(&sol.flow[i * m..(i + 1) * m]);
    }
    Ok(W2Solution { w2: sol.cost.max(0.0).sqrt(), plan })
}

/// Comonotone (quantile) coupling on the real line.
///
/// Atoms are sorted; when both cumulative weights are exhausted together the
/// left measure advances first.
pub fn solve_w2_1d_monotone(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<W2Solution> {
    same_dim(mu, nu)?;
    if mu.dim() != 1 {
        return Err(Error::InvalidArgument(format!("monotone coupling needs dim 1, got {}", mu.dim())));
    }
    let order = |m: &DiscreteMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m.atoms()[a].x[0].total_cmp(&m.atoms()[b].x[0]));
        idx
    };
    let (ia, ib) = (order(mu), order(nu));
    let mut plan =
        Coupling::zeros(mu.points().map(<[f64]>::to_vec).collect(), nu.points().map(<[f64]>::to_vec).collect());
    let (mut p, mut q) = (0usize, 0usize);
    let mut ra = mu.atoms()[ia[0]].w;
    let mut rb = nu.atoms()[ib[0]].w;
    loop {
        let t = ra.min(rb);
        plan.mass[ia[p]][ib[q]] += t;
        ra -= t;
        rb -= t;
        let last_a = p + 1 == ia.len();
        let last_b = q + 1 == ib.len();
        if last_a && last_b {
            break;
        }
        // Advance the side that is exhausted; on a tie the left measure goes first.
        if (ra <= rb && !last_a) || last_b {
            p += 1;
            ra += mu.atoms()[ia[p]].w;
        } else {
            q += 1;
            rb += nu.atoms()[ib[q]].w;
        }
    }
    let cost = plan.quadratic_cost();
    Ok(W2Solution { w2: cost.max(0.0).sqrt(), plan })
}

/// W2 between centred 1D Gaussians with standard deviations `sigma1`, `sigma2`.
pub fn w2_gaussian_1d(sigma1: f64, sigma2: f64) -> f64 {
    (sigma1 - sigma2).abs()
}
