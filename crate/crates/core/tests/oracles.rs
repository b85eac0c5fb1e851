//! Solver output against independent oracles and closed forms.

mod common;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoloto_core::inequalities::{check_bounds, symmetric_pair_measure, two_atom_pair, EQ_TOL};
use zoloto_core::measures::gaussian_quantile_discretize;
use zoloto_core::plans::{
    certify_z2, three_plan_cost, validate_three_plan, z2_convex_order_closed_form, ThreePlan, Triple,
};
use zoloto_core::wasserstein::{solve_w2, solve_w2_1d_monotone};
use zoloto_core::zolotarev::solve_dual_z2;
use zoloto_core::{DiscreteMeasure, Error};

fn uniform(points: Vec<Vec<f64>>) -> DiscreteMeasure {
    let n = points.len();
    DiscreteMeasure::from_weighted(points[0].len(), points, vec![1.0 / n as f64; n]).unwrap()
}

#[test]
fn w2_matches_brute_force_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..40 {
        let d = 1 + trial % 3;
        let n = 1 + trial % 6;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
        };
        let xs = draw(&mut rng);
        let ys = draw(&mut rng);
        let oracle = common::w2_sq_assignment(&xs, &ys);
        let w = solve_w2(&uniform(xs), &uniform(ys)).unwrap().w2;
        assert_abs_diff_eq!(w * w, oracle, epsilon = 1e-9);
    }
}

#[test]
fn gaussian_atoms_match_erf_quantiles() {
    for &n in &[1usize, 2, 7, 50, 201] {
        let g = gaussian_quantile_discretize(1.5, n).unwrap();
        let mut xs: Vec<f64> = g.points().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        for (k, x) in xs.iter().enumerate() {
            let q = 1.5 * common::normal_quantile((k as f64 + 0.5) / n as f64);
            assert_abs_diff_eq!(*x, q, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(g.stats().variance, 2.25 * common::quantile_variance(n), epsilon = 1e-10);
    }
}

#[test]
fn discretised_gaussians_follow_the_variance_formula() {
    for &n in &[20usize, 100, 400] {
        let (s1, s2) = (1.0, 1.7);
        let mu = gaussian_quantile_discretize(s1, n).unwrap();
        let nu = gaussian_quantile_discretize(s2, n).unwrap();
        let z = z2_convex_order_closed_form(&mu, &nu).unwrap();
        let oracle = 0.5 * (s2 * s2 - s1 * s1) * common::quantile_variance(n);
        assert_abs_diff_eq!(z, oracle, epsilon = 1e-10);
        // The quantile atoms are a dilation, so the monotone map is linear.
        let w = solve_w2_1d_monotone(&mu, &nu).unwrap().w2;
        assert_abs_diff_eq!(w, (s2 - s1) * common::quantile_variance(n).sqrt(), epsilon = 1e-10);
    }
}

/// The monotone-support 3-plan for the reflected two-atom pair.
fn reflected_plan(a: f64, b: f64) -> ThreePlan {
    let t = |x: f64, y: f64, z: f64, m: f64| Triple { x: vec![x], y: vec![y], z: vec![z], m };
    let s = a + b;
    ThreePlan { triples: vec![t(-a, -b, -b, a / s), t(-a, a, 0.0, (b - a) / s), t(b, a, b, a / s)] }
}

#[test]
fn reflected_two_atom_pair() {
    for &(a, b) in &[(1.0, 2.0), (0.5, 0.6), (1.0, 1.05), (2.0, 7.0), (0.1, 3.0)] {
        let (mu, nu) = two_atom_pair(a, b).unwrap();
        let w = solve_w2(&mu, &nu).unwrap().w2;
        assert_abs_diff_eq!(w * w, 2.0 * a * (b - a), epsilon = 1e-10);

        let plan = reflected_plan(a, b);
        assert!(validate_three_plan(&plan, &mu, &nu).valid);
        let cost = three_plan_cost(&plan);
        assert_abs_diff_eq!(cost, a * b * (b - a) / (a + b), epsilon = 1e-12);

        let c = certify_z2(&mu, &nu, 1e-9).unwrap();
        assert!(c.lower <= cost + 1e-12, "lower {} above plan cost {cost}", c.lower);
        assert!(c.lower >= 0.25 * w * w - 1e-9);
        assert!(c.upper <= cost + 1e-9);
    }
}

#[test]
fn reflected_ratio_approaches_one_quarter() {
    let a = 1.0;
    let mut last = f64::INFINITY;
    for &b in &[2.0, 1.5, 1.1, 1.01] {
        let (mu, nu) = two_atom_pair(a, b).unwrap();
        let r = check_bounds(&mu, &nu, EQ_TOL).unwrap();
        let ratio = r.z2_upper / (r.w2 * r.w2);
        assert!(ratio <= b / (2.0 * (a + b)) + 1e-7);
        assert!(ratio >= 0.25 - 1e-7);
        assert!(ratio <= last + 1e-9);
        last = ratio;
    }
    assert!(last - 0.25 < 0.003);
}

#[test]
fn dirac_against_symmetric_pair() {
    let mu = DiscreteMeasure::dirac(vec![0.0]);
    let nu = symmetric_pair_measure(1.0).unwrap();
    let c = certify_z2(&mu, &nu, 1e-10).unwrap();
    assert_abs_diff_eq!(c.midpoint(), 0.5, epsilon = 1e-9);
    assert_abs_diff_eq!(solve_w2(&mu, &nu).unwrap().w2, 1.0, epsilon = 1e-12);
    let c = certify_z2(&nu, &mu, 1e-10).unwrap();
    assert_abs_diff_eq!(c.midpoint(), 0.5, epsilon = 1e-9);
}

#[test]
fn dilation_attains_the_upper_bound() {
    for &lambda in &[1.5, 2.0, 3.0] {
        let mu = symmetric_pair_measure(1.0).unwrap();
        let nu = mu.dilate(lambda).unwrap();
        let c = certify_z2(&mu, &nu, 1e-10).unwrap();
        assert_abs_diff_eq!(c.midpoint(), 0.5 * (lambda * lambda - 1.0), epsilon = 1e-8);
        let r = check_bounds(&mu, &nu, EQ_TOL).unwrap();
        assert!(r.eq_upper_sigma, "{r:?}");
        assert!(!r.eq_upper_var);
    }
}

#[test]
fn widening_two_point_measures() {
    let mu = symmetric_pair_measure(1.0).unwrap();
    for n in 1..=6 {
        let nf = n as f64;
        let nu = symmetric_pair_measure(1.0 + 1.0 / nf).unwrap();
        let w = solve_w2(&mu, &nu).unwrap().w2;
        assert_abs_diff_eq!(w * w, 1.0 / (nf * nf), epsilon = 1e-12);
        let z = certify_z2(&mu, &nu, 1e-10).unwrap().midpoint();
        assert_abs_diff_eq!(z, 0.5 * ((1.0 + 1.0 / nf).powi(2) - 1.0), epsilon = 1e-8);
        assert_abs_diff_eq!(z / (w * w), (2.0 * nf + 1.0) / 2.0, epsilon = 1e-5);
    }
}

#[test]
fn shifted_measures_have_no_finite_distance() {
    let mu = symmetric_pair_measure(1.0).unwrap();
    let nu = mu.translate(&[0.25]);
    assert!(matches!(solve_dual_z2(&mu, &nu, 1e-8), Err(Error::BarycentreMismatch { .. })));
    assert!(matches!(certify_z2(&mu, &nu, 1e-8), Err(Error::BarycentreMismatch { .. })));
    let r = check_bounds(&mu, &nu, EQ_TOL).unwrap();
    assert!(r.z2.is_infinite());
}

#[test]
fn identical_measures_are_at_distance_zero() {
    let (mu, _) = common::comparable_pair(3);
    let c = certify_z2(&mu, &mu, 1e-10).unwrap();
    assert!(c.upper <= 1e-10 && c.lower >= -1e-10, "{} {}", c.lower, c.upper);
    assert!(solve_w2(&mu, &mu).unwrap().w2 <= 1e-9);
}
