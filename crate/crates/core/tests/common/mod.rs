//! Generators and independent oracles shared by the integration suites.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zoloto_core::measures::{random_measure_with, GeneratorSpec};
use zoloto_core::plans::{ThreePlan, Triple};
use zoloto_core::zolotarev::OneField;
use zoloto_core::DiscreteMeasure;

/// Standard normal quantile by bisection on `erfc(-x / sqrt 2) / 2`.
pub fn normal_quantile(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Variance of the midpoint-quantile discretisation of N(0, 1) with `n` atoms.
pub fn quantile_variance(n: usize) -> f64 {
    (0..n).map(|k| normal_quantile((k as f64 + 0.5) / n as f64).powi(2)).sum::<f64>() / n as f64
}

/// `min_sigma sum_i |x_i - y_sigma(i)|^2 / n` over all permutations.
pub fn w2_sq_assignment(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    fn rec(k: usize, xs: &[Vec<f64>], ys: &[Vec<f64>], used: &mut [bool], acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if k == xs.len() {
            *best = acc;
            return;
        }
        for j in 0..ys.len() {
            if !used[j] {
                used[j] = true;
                let c: f64 = xs[k].iter().zip(&ys[j]).map(|(a, b)| (a - b).powi(2)).sum();
                rec(k + 1, xs, ys, used, acc + c, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(0, xs, ys, &mut vec![false; ys.len()], 0.0, &mut best);
    best / xs.len() as f64
}

pub fn variance(m: &DiscreteMeasure) -> f64 {
    let c = m.barycentre();
    m.atoms().iter().map(|a| a.w * a.x.iter().zip(&c).map(|(x, b)| (x - b).powi(2)).sum::<f64>()).sum()
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// A pair `mu <=_c nu`: each atom of a random centred `mu` is split into
/// two points along a random direction with the atom as barycentre.
pub fn comparable_pair(seed: u64) -> (DiscreteMeasure, DiscreteMeasure) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=3);
    let n = rng.random_range(1..=4);
    let mu = random_measure_with(d, n, &mut rng, &GeneratorSpec::default()).unwrap();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for a in mu.atoms() {
        let v = unit_vector(&mut rng, d);
        let (s, t) = (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        points.push(a.x.iter().zip(&v).map(|(x, v)| x + s * v).collect());
        weights.push(a.w * t / (s + t));
        points.push(a.x.iter().zip(&v).map(|(x, v)| x - t * v).collect());
        weights.push(a.w * s / (s + t));
    }
    let nu = DiscreteMeasure::from_weighted(d, points, weights).unwrap();
    (mu, nu)
}

/// Weighted mean of the `z`s in each group.
fn group_means(zs: &[Vec<f64>], ws: &[f64], groups: &[usize], n_groups: usize) -> Vec<Vec<f64>> {
    let d = zs[0].len();
    let mut sums = vec![vec![0.0; d]; n_groups];
    let mut mass = vec![0.0; n_groups];
    for k in 0..zs.len() {
        mass[groups[k]] += ws[k];
        for l in 0..d {
            sums[groups[k]][l] += ws[k] * zs[k][l];
        }
    }
    sums.iter().zip(&mass).map(|(s, m)| s.iter().map(|v| v / m).collect()).collect()
}

fn random_groups(rng: &mut ChaCha8Rng, k: usize) -> (Vec<usize>, usize) {
    let n_groups = rng.random_range(1..=k);
    let mut groups: Vec<usize> = (0..k).map(|i| if i < n_groups { i } else { rng.random_range(0..n_groups) }).collect();
    groups.shuffle(rng);
    (groups, n_groups)
}

/// A random 3-plan built from its third marginal: the `z`s are grouped twice
/// and each group collapsed to its barycentre, giving the `x`s and `y`s.
pub fn random_plan(rng: &mut ChaCha8Rng, d: usize) -> (DiscreteMeasure, DiscreteMeasure, ThreePlan) {
    let k = rng.random_range(1..=6);
    let zs: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let ws: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let (gx, nx) = random_groups(rng, k);
    let (gy, ny) = random_groups(rng, k);
    let xs = group_means(&zs, &ws, &gx, nx);
    let ys = group_means(&zs, &ws, &gy, ny);
    let triples: Vec<Triple> =
        (0..k).map(|i| Triple { x: xs[gx[i]].clone(), y: ys[gy[i]].clone(), z: zs[i].clone(), m: ws[i] }).collect();
    let mu = DiscreteMeasure::from_weighted(d, triples.iter().map(|t| t.x.clone()).collect(), ws.clone()).unwrap();
    let nu = DiscreteMeasure::from_weighted(d, triples.iter().map(|t| t.y.clone()).collect(), ws.clone()).unwrap();
    (mu, nu, ThreePlan { triples })
}

/// `supp mu` followed by the atoms of `nu` not already present.
pub fn union_support(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = mu.points().map(<[f64]>::to_vec).collect();
    for y in nu.points() {
        if !pts.iter().any(|p| p.iter().zip(y).all(|(a, b)| (a - b).abs() <= 1e-13)) {
            pts.push(y.to_vec());
        }
    }
    pts
}

/// Restriction of a smooth function whose Hessian has spectral norm below 1:
/// a diagonal quadratic, a linear term and a cosine ridge.
pub fn smooth_field(rng: &mut ChaCha8Rng, points: Vec<Vec<f64>>) -> OneField {
    let d = points[0].len();
    let alpha: f64 = rng.random_range(0.0..0.9);
    let diag: Vec<f64> = (0..d).map(|_| alpha * rng.random_range(-1.0..1.0)).collect();
    let lin: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let freq: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let k2: f64 = freq.iter().map(|f| f * f).sum::<f64>().max(1e-12);
    let amp = 0.95 * (1.0 - alpha) / k2;
    let arg = |x: &[f64]| x.iter().zip(&freq).map(|(a, f)| a * f).sum::<f64>() + phase;
    let u = |x: &[f64]| {
        let q: f64 = x.iter().zip(&diag).map(|(a, c)| 0.5 * c * a * a).sum();
        let l: f64 = x.iter().zip(&lin).map(|(a, c)| a * c).sum();
        q + l + amp * arg(x).cos()
    };
    let g = |x: &[f64]| -> Vec<f64> {
        let s = arg(x).sin();
        (0..d).map(|l| diag[l] * x[l] + lin[l] - amp * s * freq[l]).collect()
    };
    OneField::from_fn(points, 0, u, g)
}

/// Random values and gradients shrunk until admissible.
pub fn shrunk_random_field(rng: &mut ChaCha8Rng, points: Vec<Vec<f64>>) -> OneField {
    let d = points[0].len();
    let n = points.len();
    let mut f = OneField::zero(points, 0);
    for s in 0..n {
        f.values[s] = rng.random_range(-1.0..1.0);
        f.gradients[s] = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    }
    f.make_admissible();
    f
}
