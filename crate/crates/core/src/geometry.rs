//! Angle arithmetic, spherical coordinates, and the randomized isometry
//! between the zero-sum hyperplane and the unit ball.
//!
//! Coordination mechanisms are built from points of the form
//! `1/d + r * phi^{-1}(w)` where `phi` is an isometry mapping the
//! hyperplane `{x : <x, 1> = 0}` onto `R^{d-1}` and `w` is a point of the
//! unit ball. Reward directions on the unit sphere are addressed through
//! their spherical coordinates: `d - 3` polar angles in `[0, pi]` followed
//! by one azimuthal angle in `[0, 2pi)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TAU: f64 = std::f64::consts::TAU;
pub const PI: f64 = std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("non-finite input: {0}")]
    NonFinite(f64),
    #[error("modulus must be positive, got {0}")]
    BadModulus(f64),
    #[error("dimension must be at least {min}, got {got}")]
    Dimension { min: usize, got: usize },
    #[error("angle vector has length {got}, expected {expected}")]
    AngleLength { expected: usize, got: usize },
    #[error("angle {value} outside [0, pi] at position {index}")]
    AngleRange { index: usize, value: f64 },
    #[error("expected a unit vector, got norm {0}")]
    NotUnit(f64),
    #[error("probe radius {radius} leaves the simplex (entry {entry})")]
    SimplexViolation { radius: f64, entry: f64 },
}

/// Wraps `alpha` into `[0, m)` by adding the unique integer multiple of `m`.
pub fn wrap(alpha: f64, m: f64) -> Result<f64, GeometryError> {
    if !alpha.is_finite() {
        return Err(GeometryError::NonFinite(alpha));
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(GeometryError::BadModulus(m));
    }
    let mut r = alpha.rem_euclid(m);
    // rem_euclid may return `m` itself when alpha is a tiny negative number.
    if r >= m {
        r -= m;
    }
    Ok(r)
}

/// Arc length between two angles on the unit circle, in `[0, pi]`.
pub fn arc(alpha: f64, beta: f64) -> f64 {
    let a = wrap(beta - alpha, TAU).expect("finite angles");
    let b = wrap(alpha - beta, TAU).expect("finite angles");
    a.min(b)
}

/// Spherical coordinates of a reward direction: the first `len - 1` entries
/// lie in `[0, pi]`, the final azimuthal entry in `[0, 2pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleVector {
    coords: Vec<f64>,
}

impl AngleVector {
    /// Validates ranges and canonicalizes the azimuthal coordinate.
    pub fn new(mut coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.is_empty() {
            return Err(GeometryError::AngleLength { expected: 1, got: 0 });
        }
        let last = coords.len() - 1;
        for (i, &a) in coords.iter().enumerate() {
            if !a.is_finite() {
                return Err(GeometryError::NonFinite(a));
            }
            if i < last && !(-1e-12..=PI + 1e-12).contains(&a) {
                return Err(GeometryError::AngleRange { index: i, value: a });
            }
        }
        for a in coords.iter_mut().take(last) {
            *a = a.clamp(0.0, PI);
        }
        coords[last] = wrap(coords[last], TAU)?;
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Ambient mechanism dimension `d` this vector parameterizes.
    pub fn ambient_dim(&self) -> usize {
        self.coords.len() + 2
    }

    /// Coordinates from position `from` (0-based) to the end.
    pub fn tail(&self, from: usize) -> &[f64] {
        &self.coords[from..]
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// The spherical embedding: maps `len` angles to a unit vector in `R^{len+1}`.
///
/// Coordinate `i` is `prod_{j<i} sin a_j * cos a_i`; the final coordinate is
/// the full product of sines.
pub fn rho(coords: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coords.len() + 1);
    let mut sin_prod = 1.0;
    for &a in coords {
        out.push(sin_prod * a.cos());
        sin_prod *= a.sin();
    }
    out.push(sin_prod);
    out
}

pub fn spherical_embed(angles: &AngleVector) -> Vec<f64> {
    rho(angles.coords())
}

/// `xi`: the embedding with `prefix_len` leading right angles. Since
/// `sin(pi/2) = 1` and `cos(pi/2) = 0`, this is `rho(tail)` padded with
/// `prefix_len` leading zeros.
pub fn xi(prefix_len: usize, tail: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; prefix_len];
    out.extend(rho(tail));
    out
}

/// Inverse of the spherical embedding for unit vectors in `R^{k}`, `k >= 2`.
///
/// Pole convention: when all remaining mass is zero the polar angle is 0.
pub fn inverse_embed(v: &[f64]) -> Result<AngleVector, GeometryError> {
    if v.len() < 2 {
        return Err(GeometryError::Dimension { min: 2, got: v.len() });
    }
    let norm = norm2(v);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(GeometryError::NotUnit(norm));
    }
    let k = v.len();
    let mut coords = Vec::with_capacity(k - 1);
    for i in 0..k - 2 {
        let rem = norm2(&v[i..]);
        if rem < 1e-300 {
            coords.push(0.0);
        } else {
            coords.push((v[i] / rem).clamp(-1.0, 1.0).acos());
        }
    }
    let azim = wrap(v[k - 1].atan2(v[k - 2]), TAU)?;
    coords.push(azim);
    AngleVector::new(coords)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest probe radius that keeps `1/d + r * u` inside the simplex for every
/// unit `u` orthogonal to the all-ones vector, shrunk by 0.9 to guard
/// floating-point boundary violations.
pub fn probe_radius(d: usize) -> f64 {
    0.9 / ((d * (d - 1)) as f64).sqrt()
}

/// A linear isometry between the zero-sum hyperplane in `R^d` and `R^{d-1}`,
/// composed with a seeded Haar-random rotation.
#[derive(Debug, Clone)]
pub struct Isometry {
    d: usize,
    m: DMatrix<f64>,
    seed: u64,
}

impl Isometry {
    /// Deterministic function of `seed`: a Householder completion of the
    /// hyperplane basis composed with a random rotation obtained by
    /// orthogonalizing a Gaussian matrix with sign-fixed diagonal.
    pub fn sample(d: usize, seed: u64) -> Result<Self, GeometryError> {
        if d < 2 {
            return Err(GeometryError::Dimension { min: 2, got: d });
        }
        let base = householder_base(d);
        let k = d - 1;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let gauss = DMatrix::from_fn(k, k, |_, _| standard_normal(&mut rng));
        let qr = gauss.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..k {
            if r[(j, j)] < 0.0 {
                for i in 0..k {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        Ok(Self { d, m: q * base, seed })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Maps a zero-sum vector in `R^d` to `R^{d-1}`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d);
        (0..self.d - 1)
            .map(|i| (0..self.d).map(|j| self.m[(i, j)] * x[j]).sum())
            .collect()
    }

    /// Maps a vector in `R^{d-1}` back to the zero-sum hyperplane.
    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.d - 1);
        (0..self.d)
            .map(|j| (0..self.d - 1).map(|i| self.m[(i, j)] * y[i]).sum())
            .collect()
    }

    /// Simplex point `1/d + scale * phi^{-1}(w)`. Errors when the scaled
    /// probe escapes the simplex.
    pub fn simplex_point(&self, scale: f64, w: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let dir = self.apply_inverse(w);
        let base = 1.0 / self.d as f64;
        let mut out = Vec::with_capacity(self.d);
        for v in dir {
            let entry = base + scale * v;
            if entry < -1e-12 {
                return Err(GeometryError::SimplexViolation { radius: scale, entry });
            }
            out.push(entry.max(0.0));
        }
        Ok(out)
    }

    /// Row-major serialization of the matrix together with the seed.
    pub fn to_flat(&self) -> IsometryData {
        IsometryData {
            d: self.d,
            seed: self.seed,
            matrix: self.m.transpose().as_slice().to_vec(),
        }
    }

    pub fn from_flat(data: &IsometryData) -> Result<Self, GeometryError> {
        if data.d < 2 || data.matrix.len() != (data.d - 1) * data.d {
            return Err(GeometryError::Dimension { min: 2, got: data.d });
        }
        let m = DMatrix::from_row_slice(data.d - 1, data.d, &data.matrix);
        Ok(Self { d: data.d, m, seed: data.seed })
    }

    /// Verifies orthonormal rows, each orthogonal to the all-ones vector.
    pub fn check(&self, tol: f64) -> bool {
        let k = self.d - 1;
        for i in 0..k {
            let ones: f64 = (0..self.d).map(|j| self.m[(i, j)]).sum();
            if ones.abs() > tol {
                return false;
            }
            for l in 0..k {
                let dot: f64 = (0..self.d).map(|j| self.m[(i, j)] * self.m[(l, j)]).sum();
                let target = if i == l { 1.0 } else { 0.0 };
                if (dot - target).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsometryData {
    pub d: usize,
    pub seed: u64,
    pub matrix: Vec<f64>,
}

/// Rows 2..d of the Householder reflection sending `1/sqrt(d)` to `e_1`:
/// an orthonormal basis of the hyperplane orthogonal to the all-ones vector.
fn householder_base(d: usize) -> DMatrix<f64> {
    let s = 1.0 / (d as f64).sqrt();
    let mut w: Vec<f64> = vec![s; d];
    w[0] -= 1.0;
    let wnorm2: f64 = w.iter().map(|x| x * x).sum();
    DMatrix::from_fn(d - 1, d, |i, j| {
        let r = i + 1;
        let id = if r == j { 1.0 } else { 0.0 };
        id - 2.0 * w[r] * w[j] / wnorm2
    })
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Probe point on the simplex addressed by a single azimuthal angle:
/// `1/d + r * phi^{-1}((0, ..., 0, cos a, sin a))`.
pub fn x_of_angle(alpha: f64, r: f64, iso: &Isometry) -> Result<Vec<f64>, GeometryError> {
    let d = iso.dim();
    if d < 3 {
        return Err(GeometryError::Dimension { min: 3, got: d });
    }
    let mut w = vec![0.0; d - 1];
    w[d - 3] = alpha.cos();
    w[d - 2] = alpha.sin();
    iso.simplex_point(r, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn wrap_basic() {
        assert!(close(wrap(7.0 * PI / 2.0, TAU).unwrap(), 3.0 * PI / 2.0, 1e-12));
        assert!(close(wrap(-PI / 2.0, TAU).unwrap(), 3.0 * PI / 2.0, 1e-12));
        assert!(close(wrap(0.3, TAU).unwrap(), 0.3, 1e-15));
        assert!(wrap(f64::NAN, TAU).is_err());
        assert!(wrap(1.0, 0.0).is_err());
    }

    #[test]
    fn arc_basic() {
        assert!(close(arc(0.0, PI), PI, 1e-12));
        assert!(close(arc(0.1, TAU - 0.1), 0.2, 1e-12));
        assert!(close(arc(1.234, 1.234), 0.0, 1e-15));
    }

    #[test]
    fn rho_low_dimensions() {
        // d = 3: a point on the unit circle.
        let v = rho(&[0.7]);
        assert!(close(v[0], 0.7f64.cos(), 1e-15));
        assert!(close(v[1], 0.7f64.sin(), 1e-15));
        // d = 4 substitutions.
        let v = rho(&[PI / 2.0, 0.0]);
        assert!(close(v[0], 0.0, 1e-15) && close(v[1], 1.0, 1e-15) && close(v[2], 0.0, 1e-15));
        let v = rho(&[PI / 2.0, PI / 2.0]);
        assert!(close(v[0], 0.0, 1e-15) && close(v[1], 0.0, 1e-15) && close(v[2], 1.0, 1e-15));
    }

    #[test]
    fn xi_padding() {
        // No padding: identical to the plain embedding.
        assert_eq!(xi(0, &[0.4, 1.1]), rho(&[0.4, 1.1]));
        // d=4, i=2 (one leading right angle).
        let v = xi(1, &[0.0]);
        assert!(close(v[0], 0.0, 1e-15) && close(v[1], 1.0, 1e-15) && close(v[2], 0.0, 1e-15));
        // All-right-angle prefix leaves (0, .., 0, cos, sin).
        let v = xi(3, &[0.9]);
        assert_eq!(v.len(), 5);
        assert!(v[..3].iter().all(|&x| x == 0.0));
        assert!(close(v[3], 0.9f64.cos(), 1e-15) && close(v[4], 0.9f64.sin(), 1e-15));
    }

    #[test]
    fn inverse_embed_poles_and_examples() {
        let a = inverse_embed(&[1.0, 0.0]).unwrap();
        assert!(close(a.coords()[0], 0.0, 1e-15));
        let a = inverse_embed(&[0.0, 0.0, 1.0]).unwrap();
        assert!(close(a.coords()[0], PI / 2.0, 1e-12));
        assert!(close(a.coords()[1], PI / 2.0, 1e-12));
        assert!(inverse_embed(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn embed_roundtrip_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let len = rng.random_range(1..5usize);
            let mut coords: Vec<f64> = (0..len - 1)
                .map(|_| rng.random_range(0.05..PI - 0.05))
                .collect();
            coords.push(rng.random_range(0.05..TAU - 0.05));
            let a = AngleVector::new(coords).unwrap();
            let v = spherical_embed(&a);
            assert!(close(norm2(&v), 1.0, 1e-12));
            let back = inverse_embed(&v).unwrap();
            assert!(a.l1_distance(&back) <= 1e-8, "{:?} vs {:?}", a, back);
        }
    }

    #[test]
    fn isometry_deterministic_and_orthonormal() {
        for d in 2..7 {
            let iso = Isometry::sample(d, 42).unwrap();
            assert!(iso.check(1e-12), "d={d}");
            let again = Isometry::sample(d, 42).unwrap();
            assert_eq!(iso.to_flat().matrix, again.to_flat().matrix);
            if d >= 3 {
                // For d = 2 the rotation group is {-1, +1}; collisions are fine.
                let other = Isometry::sample(d, 43).unwrap();
                assert_ne!(iso.to_flat().matrix, other.to_flat().matrix);
            }
        }
        assert!(Isometry::sample(1, 0).is_err());
    }

    #[test]
    fn isometry_preserves_inner_products() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for d in 3..6 {
            let iso = Isometry::sample(d, 5).unwrap();
            for _ in 0..10_000 / (d as usize) {
                let x = random_zero_sum(&mut rng, d);
                let y = random_zero_sum(&mut rng, d);
                let dot_orig: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
                let fx = iso.apply(&x);
                let fy = iso.apply(&y);
                let dot_img: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
                assert!(close(dot_orig, dot_img, 1e-10));
            }
            // Linearity at the origin.
            let zero = iso.apply(&vec![0.0; d]);
            assert!(zero.iter().all(|&v| v.abs() < 1e-300));
        }
    }

    fn random_zero_sum(rng: &mut ChaCha12Rng, d: usize) -> Vec<f64> {
        let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean: f64 = x.iter().sum::<f64>() / d as f64;
        for v in &mut x {
            *v -= mean;
        }
        x
    }

    #[test]
    fn x_of_angle_inner_products() {
        // <x_beta, v> = r * cos(azimuth - beta) * prod sin(polar) for any
        // reward direction v on the embedded sphere.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for d in 3..6usize {
            let iso = Isometry::sample(d, 99).unwrap();
            let r = probe_radius(d);
            for _ in 0..1000 / d {
                let mut coords: Vec<f64> = (0..d - 3)
                    .map(|_| rng.random_range(0.1..PI - 0.1))
                    .collect();
                coords.push(rng.random_range(0.0..TAU));
                let beta = rng.random_range(0.0..TAU);
                let vbar = iso.apply_inverse(&rho(&coords));
                let x = x_of_angle(beta, r, &iso).unwrap();
                let dot: f64 = x.iter().zip(&vbar).map(|(a, b)| a * b).sum();
                let sin_prod: f64 = coords[..d - 3].iter().map(|a| a.sin()).product();
                let expect = r * (coords[d - 3] - beta).cos() * sin_prod;
                assert!(close(dot, expect, 1e-12), "d={d} dot={dot} expect={expect}");
            }
        }
    }

    #[test]
    fn x_of_angle_degenerate_radius() {
        let iso = Isometry::sample(4, 0).unwrap();
        let x = x_of_angle(1.0, 0.0, &iso).unwrap();
        for entry in x {
            assert!(close(entry, 0.25, 1e-15));
        }
        // Oversized radius escapes the simplex.
        assert!(x_of_angle(0.3, 5.0, &iso).is_err());
    }

    #[test]
    fn simplex_points_stay_stochastic() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for d in 3..6usize {
            let iso = Isometry::sample(d, 1).unwrap();
            let r = probe_radius(d);
            for _ in 0..200 {
                let a = rng.random_range(0.0..TAU);
                let x = x_of_angle(a, r, &iso).unwrap();
                let sum: f64 = x.iter().sum();
                assert!(close(sum, 1.0, 1e-12));
                assert!(x.iter().all(|&e| e >= 0.0));
            }
        }
    }

    proptest! {
        #[test]
        fn wrap_is_canonical(alpha in -100.0..100.0f64, m in 0.01..10.0f64) {
            let w = wrap(alpha, m).unwrap();
            prop_assert!((0.0..m).contains(&w));
            let k = (alpha - w) / m;
            prop_assert!((k - k.round()).abs() < 1e-6);
        }

        #[test]
        fn arc_symmetric_bounded(a in 0.0..TAU, b in 0.0..TAU) {
            let ab = arc(a, b);
            prop_assert!((ab - arc(b, a)).abs() < 1e-12);
            prop_assert!((0.0..=PI + 1e-12).contains(&ab));
        }

        #[test]
        fn rho_is_unit_and_lipschitz(
            a1 in 0.0..PI, a2 in 0.0..PI, az in 0.0..TAU,
            b1 in 0.0..PI, b2 in 0.0..PI, bz in 0.0..TAU,
        ) {
            let x = rho(&[a1, a2, az]);
            prop_assert!((norm2(&x) - 1.0).abs() < 1e-12);
            let y = rho(&[b1, b2, bz]);
            let dist: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let l1 = (a1 - b1).abs() + (a2 - b2).abs() + (az - bz).abs();
            prop_assert!(dist <= l1 + 1e-12);
        }
    }
}
