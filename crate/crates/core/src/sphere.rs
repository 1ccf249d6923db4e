//! Geometry of the unit sphere `S^{d-1}` embedded in `R^d`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::{dot, norm_sq, Scalar};

/// Norms at or below this value are rejected by [`radial_normalize`].
pub const NEAR_ZERO_NORM: f64 = 1e-12;

/// Tolerance for the unit-norm invariant of [`UnitVector`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A point of the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitVector<T> {
    coords: Vec<T>,
}

/// A vector of the tangent space at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T> {
    pub base: UnitVector<T>,
    pub vec: Vec<T>,
}

impl<T: Scalar> UnitVector<T> {
    /// Accepts coordinates whose norm is already 1 within [`UNIT_NORM_TOL`],
    /// then renormalizes them.
    pub fn new(coords: Vec<T>) -> Result<Self> {
        let n = norm_sq(&coords).sqrt();
        if !((n - T::one()).abs() <= T::lit(UNIT_NORM_TOL)) {
            return Err(Error::NotUnitNorm { norm: n.as_f64() });
        }
        radial_normalize(&coords)
    }

    /// The `k`-th standard basis vector of `R^dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut coords = vec![T::zero(); dim];
        coords[k] = T::one();
        Self { coords }
    }

    /// Uniform sample on the sphere (normalized Gaussian vector).
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let z: Vec<T> = (0..dim)
                .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            if let Ok(u) = radial_normalize(&z) {
                return u;
            }
        }
    }

    pub(crate) fn from_normalized_unchecked(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.coords
    }

    pub fn into_inner(self) -> Vec<T> {
        self.coords
    }
}

impl<T: Scalar> TangentVector<T> {
    pub fn norm(&self) -> T {
        norm_sq(&self.vec).sqrt()
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// In-place `v ← v − ⟨v, x⟩ x`.
#[inline(always)]
pub(crate) fn project_tangent_in_place<T: Scalar>(x: &[T], v: &mut [T]) {
    let c = dot(v, x);
    for (vi, xi) in v.iter_mut().zip(x) {
        *vi -= c * *xi;
    }
}

/// Orthogonal projection onto the tangent space at `x`: `v − ⟨v, x⟩ x`.
pub fn project_tangent<T: Scalar>(x: &UnitVector<T>, v: &[T]) -> Result<TangentVector<T>> {
    check_dim(x.dim(), v.len())?;
    let mut out = v.to_vec();
    project_tangent_in_place(x.as_slice(), &mut out);
    Ok(TangentVector {
        base: x.clone(),
        vec: out,
    })
}

/// Radial projection `z / |z|` onto the sphere.
pub fn radial_normalize<T: Scalar>(z: &[T]) -> Result<UnitVector<T>> {
    let mut out = z.to_vec();
    normalize_in_place(&mut out)?;
    Ok(UnitVector { coords: out })
}

#[inline]
pub(crate) fn normalize_in_place<T: Scalar>(z: &mut [T]) -> Result<()> {
    let n = norm_sq(z).sqrt();
    if !(n > T::lit(NEAR_ZERO_NORM)) {
        return Err(Error::NearZeroVector { norm: n.as_f64() });
    }
    for zi in z.iter_mut() {
        *zi /= n;
    }
    Ok(())
}

/// Riemannian gradient in `x` of the kernel `K(x, y) = exp(⟨x, D y⟩)`.
pub fn kernel_gradient<T: Scalar>(
    x: &UnitVector<T>,
    y: &UnitVector<T>,
    d: &SymMatrix<T>,
) -> Result<TangentVector<T>> {
    check_dim(x.dim(), y.dim())?;
    check_dim(x.dim(), d.dim())?;
    let mut dy = d.mul_vec(y.as_slice());
    let k = dot(x.as_slice(), &dy).exp();
    for v in dy.iter_mut() {
        *v *= k;
    }
    project_tangent_in_place(x.as_slice(), &mut dy);
    Ok(TangentVector {
        base: x.clone(),
        vec: dy,
    })
}

/// Geodesic (great-circle) distance between two unit vectors.
pub fn geodesic_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    dot(a, b).max(-T::one()).min(T::one()).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> UnitVector<f64> {
        radial_normalize(v).unwrap()
    }

    #[test]
    fn projection_kills_radial_component() {
        let x = UnitVector::<f64>::basis(3, 0);
        assert_eq!(project_tangent(&x, &[2.0, 3.0, 4.0]).unwrap().vec, vec![0.0, 3.0, 4.0]);
        assert_eq!(project_tangent(&x, &[5.0, 0.0, 0.0]).unwrap().vec, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let x = UnitVector::<f64>::basis(3, 0);
        assert!(matches!(
            project_tangent(&x, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn random_projection_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = UnitVector::<f64>::random(5, &mut rng);
            let v: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let t = project_tangent(&x, &v).unwrap();
            assert!(dot(&t.vec, x.as_slice()).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_normalize_examples() {
        assert_eq!(radial_normalize(&[3.0, 4.0, 0.0]).unwrap().as_slice(), &[0.6, 0.8, 0.0]);
        assert_eq!(radial_normalize(&[0.0, 0.0, 2.0]).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
        assert!(matches!(
            radial_normalize(&[0.0f64, 0.0, 0.0]),
            Err(Error::NearZeroVector { .. })
        ));
        assert!(radial_normalize(&[1e-13f64, 0.0]).is_err());
    }

    #[test]
    fn unit_vector_rejects_off_sphere_input() {
        assert!(matches!(
            UnitVector::new(vec![1.0f64, 1.0]),
            Err(Error::NotUnitNorm { .. })
        ));
        assert!(UnitVector::new(vec![0.6f64, 0.8]).is_ok());
    }

    #[test]
    fn kernel_gradient_examples() {
        let e1 = UnitVector::<f64>::basis(3, 0);
        let e2 = UnitVector::<f64>::basis(3, 1);
        let g = kernel_gradient(&e1, &e1, &SymMatrix::zeros(3)).unwrap();
        assert_eq!(g.vec, vec![0.0, 0.0, 0.0]);
        let g = kernel_gradient(&e1, &e2, &SymMatrix::identity(3)).unwrap();
        assert_eq!(g.vec, vec![0.0, 1.0, 0.0]);
    }

    /// Scalar kernel restricted to the sphere along the great circle through
    /// `x` with initial direction `u` (unit, tangent).
    fn kernel_on_circle(x: &[f64], u: &[f64], y: &[f64], d: &SymMatrix<f64>, s: f64) -> f64 {
        let p: Vec<f64> = x.iter().zip(u).map(|(a, b)| a * s.cos() + b * s.sin()).collect();
        d.bilinear(&p, y).exp()
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-4;
        for _ in 0..100 {
            let x = UnitVector::<f64>::random(3, &mut rng);
            let y = UnitVector::<f64>::random(3, &mut rng);
            let d = SymMatrix::from_upper_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = kernel_gradient(&x, &y, &d).unwrap();
            // Orthonormal tangent basis at x.
            let a: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let mut u1 = project_tangent(&x, &a).unwrap().vec;
            normalize_in_place(&mut u1).unwrap();
            let u2 = vec![
                x.as_slice()[1] * u1[2] - x.as_slice()[2] * u1[1],
                x.as_slice()[2] * u1[0] - x.as_slice()[0] * u1[2],
                x.as_slice()[0] * u1[1] - x.as_slice()[1] * u1[0],
            ];
            for u in [&u1, &u2] {
                let fd = (kernel_on_circle(x.as_slice(), u, y.as_slice(), &d, h)
                    - kernel_on_circle(x.as_slice(), u, y.as_slice(), &d, -h))
                    / (2.0 * h);
                let an = dot(&g.vec, u);
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn f32_projection_is_tangent() {
        let x = radial_normalize(&[1.0f32, 2.0, 2.0]).unwrap();
        let t = project_tangent(&x, &[0.3, -1.0, 4.0]).unwrap();
        assert!(dot(&t.vec, x.as_slice()).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_contracting(
            xs in prop::collection::vec(-1.0f64..1.0, 4),
            vs in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            prop_assume!(norm_sq(&xs) > 1e-6);
            let x = unit(&xs);
            let once = project_tangent(&x, &vs).unwrap().vec;
            let twice = project_tangent(&x, &once).unwrap().vec;
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(norm_sq(&once).sqrt() <= norm_sq(&vs).sqrt() + 1e-12);
        }

        #[test]
        fn radial_normalize_idempotent(zs in prop::collection::vec(-100.0f64..100.0, 3)) {
            prop_assume!(norm_sq(&zs) > 1e-6);
            let once = radial_normalize(&zs).unwrap();
            let twice = radial_normalize(once.as_slice()).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((norm_sq(once.as_slice()).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
