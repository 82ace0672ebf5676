//! Small fixed-size planar vector and matrix types.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A point or displacement in the plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Unit vector pointing along `bearing` (radians, counter-clockwise from +x).
    pub fn from_bearing(bearing: T) -> Self {
        Self::new(bearing.cos(), bearing.sin())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the planar cross product.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn norm_sqr(self) -> T {
        self.dot(self)
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn bearing(self) -> T {
        self.y.atan2(self.x)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    /// Returns `None` for the zero vector.
    pub fn unit(self) -> Option<Self> {
        let n = self.norm();
        (n > T::zero()).then(|| self.scale(T::one() / n))
    }

    pub fn cast<U: Real>(self) -> Vec2<U> {
        Vec2::new(U::from(self.x).unwrap(), U::from(self.y).unwrap())
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2<T> {
    pub m: [[T; 2]; 2],
}

impl<T: Real> Mat2<T> {
    pub const fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn from_rows(r0: Vec2<T>, r1: Vec2<T>) -> Self {
        Self::new(r0.x, r0.y, r1.x, r1.y)
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one())
    }

    pub fn zero() -> Self {
        Self::diag(T::zero(), T::zero())
    }

    pub fn diag(a: T, d: T) -> Self {
        Self::new(a, T::zero(), T::zero(), d)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn det(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> T {
        self.m[0][0] + self.m[1][1]
    }

    /// Returns `None` when the matrix is exactly singular or non-finite.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let inv = T::one() / det;
        Some(Self::new(
            self.m[1][1] * inv,
            -self.m[0][1] * inv,
            -self.m[1][0] * inv,
            self.m[0][0] * inv,
        ))
    }

    pub fn mul_vec(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }

    /// Averages the off-diagonal pair.
    pub fn symmetrized(&self) -> Self {
        let off = (self.m[0][1] + self.m[1][0]) / (T::one() + T::one());
        Self::new(self.m[0][0], off, off, self.m[1][1])
    }

    /// Singular values, largest first.
    pub fn singular_values(&self) -> (T, T) {
        // eigenvalues of A^T A in closed form
        let ata = self.transpose() * *self;
        let two = T::one() + T::one();
        let tr = ata.trace();
        let det = ata.det();
        let disc = ((tr * tr) / (two * two) - det).max(T::zero()).sqrt();
        let hi = (tr / two + disc).max(T::zero());
        // det(A)^2 = s1^2 s2^2 avoids cancellation in the small one
        let lo = if hi > T::zero() {
            Float::abs(self.det()) / hi.sqrt()
        } else {
            T::zero()
        };
        (hi.sqrt(), lo)
    }

    /// Two-norm condition number; infinite when singular.
    pub fn condition_number(&self) -> T {
        let (hi, lo) = self.singular_values();
        if lo > T::zero() {
            hi / lo
        } else {
            T::infinity()
        }
    }

    /// Symmetric positive definite test (Sylvester's criterion).
    pub fn is_spd(&self) -> bool {
        let sym = Float::abs(self.m[0][1] - self.m[1][0])
            <= T::epsilon().sqrt() * (Float::abs(self.m[0][1]) + Float::abs(self.m[1][0]));
        sym && self.m[0][0] > T::zero() && self.det() > T::zero()
    }
}

use num_traits::Float;

impl<T: Real> Mul for Mat2<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl<T: Real> Add for Mat2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let a = Mat2::new(2.0, 1.0, 0.5, 3.0);
        let p = a * a.inverse().unwrap();
        assert!((p.m[0][0] - 1.0).abs() < 1e-15 && p.m[0][1].abs() < 1e-15);
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }

    #[test]
    fn singular_values_of_diag() {
        let (hi, lo) = Mat2::diag(-3.0, 0.5).singular_values();
        assert!((hi - 3.0).abs() < 1e-12 && (lo - 0.5).abs() < 1e-12);
        assert!((Mat2::diag(1e-9, 1.0).condition_number() - 1e9).abs() < 1e-3);
    }
}
