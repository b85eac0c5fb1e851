//! Worked examples recomputed by the solvers and compared with their closed
//! forms, one row per quantity.

use std::io;

use anyhow::{bail, Result};
use clap::Subcommand;
use serde::Serialize;

use zoloto_core::inequalities::{symmetric_pair_measure, two_atom_pair, z2_bracket, CERT_TOL};
use zoloto_core::measures::gaussian_quantile_discretize;
use zoloto_core::plans::{certify_z2, three_plan_cost, validate_three_plan, ThreePlan, Triple};
use zoloto_core::wasserstein::{solve_w2, solve_w2_1d_monotone};

use crate::InputError;

#[derive(Subcommand, Debug)]
pub enum Example {
    /// Reflected two-atom pair exhibiting the optimal constant 1/4 (0 < a < b).
    Opt14 {
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 2.0)]
        b: f64,
    },
    /// Quantile-discretised centred Gaussians (0 < sigma1 <= sigma2).
    Gauss {
        #[arg(long, default_value_t = 1.0)]
        sigma1: f64,
        #[arg(long, default_value_t = 2.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Unbounded ratio Z2 / W2^2 for slightly wider two-point measures (n >= 1).
    Noreverse {
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Equality case of the upper bound (lambda >= 1).
    Dilation {
        #[arg(long, default_value_t = 2.0)]
        lambda: f64,
    },
}

/// Some computed quantity missed its closed form.
#[derive(Debug)]
pub struct Mismatch(pub Vec<String>);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "closed form not reproduced: {}", self.0.join(", "))
    }
}

impl std::error::Error for Mismatch {}

#[derive(Debug, Serialize)]
struct Row {
    quantity: &'static str,
    computed: f64,
    formula: &'static str,
    expected: f64,
    /// `|computed - expected|`, or the excess over `expected` for `<=` rows.
    diff: f64,
    tolerance: f64,
    ok: bool,
}

fn equal(quantity: &'static str, computed: f64, formula: &'static str, expected: f64, tolerance: f64) -> Row {
    let diff = (computed - expected).abs();
    Row { quantity, computed, formula, expected, diff, tolerance, ok: diff <= tolerance }
}

fn at_most(quantity: &'static str, computed: f64, formula: &'static str, expected: f64, tolerance: f64) -> Row {
    let diff = (computed - expected).max(0.0);
    Row { quantity, computed, formula, expected, diff, tolerance, ok: diff <= tolerance }
}

fn at_least(quantity: &'static str, computed: f64, formula: &'static str, expected: f64, tolerance: f64) -> Row {
    let diff = (expected - computed).max(0.0);
    Row { quantity, computed, formula, expected, diff, tolerance, ok: diff <= tolerance }
}

/// `a/(a+b) d(-a,-b,-b) + (b-a)/(a+b) d(-a,a,0) + a/(a+b) d(b,a,b)`.
fn two_atom_three_plan(a: f64, b: f64) -> ThreePlan {
    let t = |x: f64, y: f64, z: f64, m: f64| Triple { x: vec![x], y: vec![y], z: vec![z], m };
    let s = a + b;
    ThreePlan { triples: vec![t(-a, -b, -b, a / s), t(-a, a, 0.0, (b - a) / s), t(b, a, b, a / s)] }
}

fn opt14(a: f64, b: f64) -> Result<Vec<Row>> {
    if !(a > 0.0 && b > a && b.is_finite()) {
        bail!(InputError(format!("opt14 needs 0 < a < b, got a = {a}, b = {b}")));
    }
    let (mu, nu) = two_atom_pair(a, b)?;
    let w2sq = solve_w2(&mu, &nu)?.w2.powi(2);
    let plan = two_atom_three_plan(a, b);
    let validation = validate_three_plan(&plan, &mu, &nu);
    let cost = three_plan_cost(&plan);
    let z = z2_bracket(&mu, &nu, CERT_TOL)?;
    let formula_cost = a * b * (b - a) / (a + b);
    Ok(vec![
        equal("w2_squared", w2sq, "2a(b-a)", 2.0 * a * (b - a), 1e-10),
        equal("three_plan_residual", validation.max_residual(), "0", 0.0, 1e-12),
        equal("three_plan_cost", cost, "ab(b-a)/(a+b)", formula_cost, 1e-12),
        at_most("z2_upper", z.upper, "ab(b-a)/(a+b)", formula_cost, 1e-8),
        at_least("z2_lower", z.lower, "w2^2/4", 0.25 * w2sq, 1e-8),
        at_most("ratio_upper", z.upper / w2sq, "b/(2(a+b))", b / (2.0 * (a + b)), 1e-7),
        at_least("ratio_lower", z.lower / w2sq, "1/4", 0.25, 1e-7),
    ])
}

/// Relative tolerances of 2% on `W2` and 1/30 on `Z2` hold for `n >= 200`;
/// see the convergence table in the README.
fn gauss(s1: f64, s2: f64, n: usize) -> Result<Vec<Row>> {
    if !(s1 > 0.0 && s2 >= s1 && s2.is_finite()) || n == 0 {
        bail!(InputError(format!("gauss needs 0 < sigma1 <= sigma2 and n >= 1, got {s1}, {s2}, {n}")));
    }
    let mu = gaussian_quantile_discretize(s1, n)?;
    let nu = gaussian_quantile_discretize(s2, n)?;
    let w2 = solve_w2_1d_monotone(&mu, &nu)?.w2;
    let z2 = z2_bracket(&mu, &nu, CERT_TOL)?.midpoint();
    let z2_expected = 0.5 * (s2 * s2 - s1 * s1);
    Ok(vec![
        equal("w2", w2, "sigma2 - sigma1", s2 - s1, 0.02 * (s2 - s1)),
        equal("z2", z2, "(sigma2^2 - sigma1^2)/2", z2_expected, z2_expected / 30.0),
    ])
}

fn noreverse(n: usize) -> Result<Vec<Row>> {
    if n == 0 {
        bail!(InputError("noreverse needs n >= 1".into()));
    }
    let nf = n as f64;
    let mu = symmetric_pair_measure(1.0)?;
    let nu = symmetric_pair_measure(1.0 + 1.0 / nf)?;
    let w2sq = solve_w2_1d_monotone(&mu, &nu)?.w2.powi(2);
    let closed = z2_bracket(&mu, &nu, CERT_TOL)?.midpoint();
    let expected_z2 = 0.5 * ((1.0 + 1.0 / nf).powi(2) - 1.0);
    let mut rows = vec![
        equal("w2_squared", w2sq, "1/n^2", 1.0 / (nf * nf), 1e-12),
        equal("z2", closed, "((1+1/n)^2 - 1)/2", expected_z2, 1e-10),
        equal("ratio", closed / w2sq, "(2n+1)/2", (2.0 * nf + 1.0) / 2.0, 1e-6),
    ];
    if n <= 10 {
        let c = certify_z2(&mu, &nu, 1e-10)?;
        rows.push(equal("z2_certified", c.midpoint(), "((1+1/n)^2 - 1)/2", expected_z2, 1e-7));
    }
    Ok(rows)
}

fn dilation(lambda: f64) -> Result<Vec<Row>> {
    if !(lambda >= 1.0 && lambda.is_finite()) {
        bail!(InputError(format!("dilation needs lambda >= 1, got {lambda}")));
    }
    let mu = symmetric_pair_measure(1.0)?;
    let nu = mu.dilate(lambda)?;
    let w2 = solve_w2(&mu, &nu)?.w2;
    let z2 = certify_z2(&mu, &nu, 1e-10)?.midpoint();
    let bound = 0.5 * (mu.stats().std_dev + nu.stats().std_dev) * w2;
    Ok(vec![
        equal("w2", w2, "lambda - 1", lambda - 1.0, 1e-8),
        equal("z2", z2, "(lambda^2 - 1)/2", 0.5 * (lambda * lambda - 1.0), 1e-8),
        equal("z2_vs_bound", z2, "(sigma_mu + sigma_nu) w2 / 2", bound, 1e-6),
    ])
}

pub fn run(example: &Example, csv: bool) -> Result<u8> {
    let rows = match *example {
        Example::Opt14 { a, b } => opt14(a, b)?,
        Example::Gauss { sigma1, sigma2, n } => gauss(sigma1, sigma2, n)?,
        Example::Noreverse { n } => noreverse(n)?,
        Example::Dilation { lambda } => dilation(lambda)?,
    };
    if csv {
        let mut w = csv::Writer::from_writer(io::stdout().lock());
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    } else {
        crate::print_json(&serde_json::to_value(&rows)?)?;
    }
    let failed: Vec<String> = rows.iter().filter(|r| !r.ok).map(|r| r.quantity.to_string()).collect();
    if !failed.is_empty() {
        return Err(Mismatch(failed).into());
    }
    Ok(0)
}
