//! Finitely supported probability measures on R^d.
//!
//! A [`DiscreteMeasure`] is validated on construction: weights are strictly
//! positive and sum to one, positions are finite, and atoms closer than
//! [`TOL_MERGE`] are merged by adding their weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{dist, norm_sq};

/// Atoms closer than this (Euclidean) are merged.
pub const TOL_MERGE: f64 = 1e-12;

/// Input weights may miss unit total mass by at most this much; they are
/// renormalised.
pub const TOL_MASS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Vec<f64>,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

#[derive(Deserialize)]
struct RawMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

impl TryFrom<RawMeasure> for DiscreteMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        DiscreteMeasure::new(raw.dim, raw.atoms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureStats {
    pub barycentre: Vec<f64>,
    pub variance: f64,
    pub std_dev: f64,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.x.len() != dim {
                return Err(Error::InvalidMeasure(format!("atom {i} has {} coordinates, expected {dim}", a.x.len())));
            }
            if a.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMeasure(format!("atom {i} has a non-finite coordinate")));
            }
            if !(a.w > 0.0) || !a.w.is_finite() {
                return Err(Error::InvalidMeasure(format!("atom {i} has weight {} <= 0", a.w)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.w).sum();
        if (total - 1.0).abs() > TOL_MASS {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }

        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.iter_mut().find(|m| dist(&m.x, &a.x) <= TOL_MERGE) {
                Some(m) => m.w += a.w,
                None => merged.push(a),
            }
        }
        // Left alone at rounding level so JSON round trips are exact.
        if (total - 1.0).abs() > 4.0 * f64::EPSILON {
            for m in &mut merged {
                m.w /= total;
            }
        }
        Ok(Self { dim, atoms: merged })
    }

    /// Builds a measure from positions and (unnormalised) positive weights.
    pub fn from_weighted(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure("points and weights differ in length".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidMeasure("total weight must be positive".into()));
        }
        let atoms = points.into_iter().zip(weights).map(|(x, w)| Atom { x, w: w / total }).collect();
        Self::new(dim, atoms)
    }

    /// One-dimensional convenience constructor.
    pub fn from_1d(points: &[f64], weights: &[f64]) -> Result<Self> {
        Self::from_weighted(1, points.iter().map(|&p| vec![p]).collect(), weights.to_vec())
    }

    pub fn dirac(x: Vec<f64>) -> Self {
        Self { dim: x.len(), atoms: vec![Atom { x, w: 1.0 }] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.iter().map(|a| a.x.as_slice())
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.w)
    }

    pub fn barycentre(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        for a in &self.atoms {
            for (bk, xk) in b.iter_mut().zip(&a.x) {
                *bk += a.w * xk;
            }
        }
        b
    }

    pub fn stats(&self) -> MeasureStats {
        let barycentre = self.barycentre();
        let variance: f64 = self.atoms.iter().map(|a| a.w * crate::linalg::dist_sq(&a.x, &barycentre)).sum();
        MeasureStats { barycentre, variance, std_dev: variance.sqrt() }
    }

    /// Largest distance from an atom to `c`.
    pub fn radius_about(&self, c: &[f64]) -> f64 {
        self.atoms.iter().map(|a| dist(&a.x, c)).fold(0.0, f64::max)
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.w * norm_sq(&a.x)).sum()
    }

    /// Translates every atom by `t`.
    pub fn translate(&self, t: &[f64]) -> Self {
        let atoms =
            self.atoms.iter().map(|a| Atom { x: a.x.iter().zip(t).map(|(x, s)| x + s).collect(), w: a.w }).collect();
        Self { dim: self.dim, atoms }
    }

    /// Translates the measure so that its barycentre is the origin.
    pub fn center(&self) -> Self {
        let b = self.barycentre();
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        self.translate(&neg)
    }

    /// Push-forward through `x -> lambda * x` (about the origin).
    pub fn dilate(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("dilation factor {lambda} must be positive")));
        }
        let atoms = self.atoms.iter().map(|a| Atom { x: a.x.iter().map(|v| lambda * v).collect(), w: a.w }).collect();
        Ok(Self { dim: self.dim, atoms })
    }

    /// Weight of the atom at `x`, if any (within `tol`).
    pub fn weight_at(&self, x: &[f64], tol: f64) -> Option<f64> {
        self.index_of(x, tol).map(|i| self.atoms[i].w)
    }

    pub fn index_of(&self, x: &[f64], tol: f64) -> Option<usize> {
        self.atoms.iter().position(|a| dist(&a.x, x) <= tol)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measure serialises")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Midpoint-quantile discretisation of N(0, sigma^2) with `n` equally
/// weighted atoms at `sigma * Phi^{-1}((k - 1/2) / n)`.
///
/// Negative quantiles are computed once and mirrored so the barycentre is
/// exactly zero.
pub fn gaussian_quantile_discretize(sigma: f64, n: usize) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one atom".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be non-negative")));
    }
    let normal = Normal::standard();
    let mut xs = vec![0.0; n];
    for k in 0..n / 2 {
        let q = normal.inverse_cdf((k as f64 + 0.5) / n as f64);
        xs[k] = sigma * q;
        xs[n - 1 - k] = -sigma * q;
    }
    let w = vec![1.0 / n as f64; n];
    DiscreteMeasure::from_1d(&xs, &w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Uniform on `[-half_width, half_width]^d`.
    Box { half_width: f64 },
    /// Uniform in the Euclidean ball of the given radius.
    Ball { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub region: Region,
    /// Symmetric Dirichlet concentration for the weights.
    pub dirichlet_alpha: f64,
    /// Translate the result to barycentre zero.
    pub center: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { region: Region::Box { half_width: 1.0 }, dirichlet_alpha: 1.0, center: true }
    }
}

/// Deterministic random measure for a given `(seed, spec)`.
pub fn random_measure(dim: usize, n_atoms: usize, seed: u64, spec: &GeneratorSpec) -> Result<DiscreteMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_measure_with(dim, n_atoms, &mut rng, spec)
}

pub fn random_measure_with<R: Rng>(
    dim: usize,
    n_atoms: usize,
    rng: &mut R,
    spec: &GeneratorSpec,
) -> Result<DiscreteMeasure> {
    if dim == 0 || n_atoms == 0 {
        return Err(Error::InvalidArgument("dim and n_atoms must be positive".into()));
    }
    if !(spec.dirichlet_alpha > 0.0) {
        return Err(Error::InvalidArgument("dirichlet_alpha must be positive".into()));
    }
    let gamma = Gamma::new(spec.dirichlet_alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut points = Vec::with_capacity(n_atoms);
    for _ in 0..n_atoms {
        let p: Vec<f64> = match spec.region {
            Region::Box { half_width } => (0..dim).map(|_| rng.random_range(-half_width..=half_width)).collect(),
            Region::Ball { radius } => {
                let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let len = norm_sq(&dir).sqrt().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                dir.iter().map(|v| v * r / len).collect()
            }
        };
        points.push(p);
    }
    // Floor keeps every weight strictly positive for small concentrations.
    let weights: Vec<f64> = (0..n_atoms).map(|_| gamma.sample(rng).max(1e-9)).collect();
    let m = DiscreteMeasure::from_weighted(dim, points, weights)?;
    Ok(if spec.center { m.center() } else { m })
}

/// Equality as atomic measures up to `tol`: atoms within `tol` are merged,
/// then each atom of `a` is greedily matched to the nearest unmatched atom
/// of `b` and their weights compared.
pub fn measures_equal(a: &DiscreteMeasure, b: &DiscreteMeasure, tol: f64) -> bool {
    if a.dim() != b.dim() {
        return false;
    }
    let ma = merge_within(a, tol);
    let mb = merge_within(b, tol);
    if ma.len() != mb.len() {
        return false;
    }
    let mut used = vec![false; mb.len()];
    for (x, w) in &ma {
        let best = mb
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, (y, _))| (j, dist(x, y)))
            .min_by(|p, q| p.1.total_cmp(&q.1));
        match best {
            Some((j, d)) if d <= tol && (mb[j].1 - w).abs() <= tol => used[j] = true,
            _ => return false,
        }
    }
    true
}

fn merge_within(m: &DiscreteMeasure, tol: f64) -> Vec<(Vec<f64>, f64)> {
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for a in m.atoms() {
        match out.iter_mut().find(|(x, _)| dist(x, &a.x) <= tol) {
            Some((_, w)) => *w += a.w,
            None => out.push((a.x.clone(), a.w)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_point() -> DiscreteMeasure {
        DiscreteMeasure::from_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn stats_of_symmetric_pair() {
        let s = two_point().stats();
        assert_eq!(s.barycentre, vec![0.0]);
        assert_eq!(s.variance, 1.0);
        assert_eq!(s.std_dev, 1.0);
    }

    #[test]
    fn stats_of_point_mass() {
        let s = DiscreteMeasure::dirac(vec![0.0]).stats();
        assert_eq!((s.barycentre[0], s.variance, s.std_dev), (0.0, 0.0, 0.0));
    }

    #[test]
    fn stats_of_two_atom_family() {
        // (2/3) d_{-1} + (1/3) d_2: variance ab = 2
        let m = DiscreteMeasure::from_1d(&[-1.0, 2.0], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let s = m.stats();
        assert_abs_diff_eq!(s.barycentre[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.variance, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.std_dev, 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn center_examples() {
        let c = DiscreteMeasure::dirac(vec![5.0]).center();
        assert_eq!(c.atoms()[0].x, vec![0.0]);
        let m = DiscreteMeasure::from_1d(&[0.0, 2.0], &[0.5, 0.5]).unwrap().center();
        assert_eq!(m, two_point());
        assert_eq!(two_point().center(), two_point());
    }

    #[test]
    fn dilate_examples() {
        let d = two_point().dilate(2.0).unwrap();
        assert_eq!(d, DiscreteMeasure::from_1d(&[-2.0, 2.0], &[0.5, 0.5]).unwrap());
        assert_eq!(two_point().dilate(1.0).unwrap(), two_point());
        assert_abs_diff_eq!(two_point().dilate(3.0).unwrap().stats().variance, 9.0, epsilon = 1e-14);
        assert!(two_point().dilate(0.0).is_err());
        assert!(two_point().dilate(-1.0).is_err());
    }

    #[test]
    fn duplicates_are_merged() {
        let m = DiscreteMeasure::from_1d(&[1.0, 1.0, 2.0], &[0.25, 0.25, 0.5]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.atoms()[0].w, 0.5);
    }

    #[test]
    fn parser_rejections() {
        let bad_w = r#"{"dim":1,"atoms":[{"x":[0.0],"w":0.0},{"x":[1.0],"w":1.0}]}"#;
        assert!(DiscreteMeasure::from_json(bad_w).is_err());
        let bad_sum = r#"{"dim":1,"atoms":[{"x":[0.0],"w":0.5},{"x":[1.0],"w":0.6}]}"#;
        assert!(DiscreteMeasure::from_json(bad_sum).is_err());
        let bad_len = r#"{"dim":2,"atoms":[{"x":[0.0],"w":1.0}]}"#;
        assert!(DiscreteMeasure::from_json(bad_len).is_err());
        let near = r#"{"dim":1,"atoms":[{"x":[0.0],"w":0.5},{"x":[1.0],"w":0.5000000001}]}"#;
        let m = DiscreteMeasure::from_json(near).unwrap();
        let total: f64 = m.weights().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_small_cases() {
        let g1 = gaussian_quantile_discretize(1.0, 1).unwrap();
        assert_eq!(g1.atoms()[0].x, vec![0.0]);
        let g2 = gaussian_quantile_discretize(1.0, 2).unwrap();
        assert_abs_diff_eq!(g2.atoms()[1].x[0], 0.674_489_750_196_081_7, epsilon = 1e-12);
        assert_eq!(g2.atoms()[0].x[0], -g2.atoms()[1].x[0]);
    }

    #[test]
    fn measures_equal_examples() {
        let m = two_point();
        assert!(measures_equal(&m, &m, 1e-9));
        let swapped = DiscreteMeasure::from_1d(&[1.0, -1.0], &[0.5, 0.5]).unwrap();
        assert!(measures_equal(&m, &swapped, 1e-9));
        assert!(!measures_equal(&DiscreteMeasure::dirac(vec![0.0]), &DiscreteMeasure::dirac(vec![1e-3]), 1e-9));
    }

    #[test]
    fn random_measure_is_deterministic() {
        let spec = GeneratorSpec::default();
        let a = random_measure(2, 6, 42, &spec).unwrap();
        let b = random_measure(2, 6, 42, &spec).unwrap();
        assert_eq!(a, b);
        let one = random_measure(3, 1, 1, &spec).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.atoms()[0].x.iter().all(|v| v.abs() < 1e-15));
    }
}
