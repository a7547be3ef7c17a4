//! Scalar abstraction and the small fixed-size linear algebra used by the
//! per-pixel solves. Everything is generic over [`Real`] so the same code
//! runs in f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
///
/// Implemented for `f32` and `f64` via the blanket impl.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossy conversion of an `f64` literal.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal converts to Real")
    }

    /// Lossy conversion to `f64` (used for diagnostics and export).
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Column 3-vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Vec3::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    /// Unit vector, or `None` when the norm is not safely invertible.
    #[inline]
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    #[inline]
    pub fn zero() -> Self {
        Mat3 {
            m: [[T::zero(); 3]; 3],
        }
    }

    #[inline]
    pub fn identity() -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            r.m[i][i] = T::one();
        }
        r
    }

    #[inline]
    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Mat3 {
            m: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    /// Row-major flat constructor.
    #[inline]
    pub fn from_flat(a: [T; 9]) -> Self {
        Mat3 {
            m: [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]],
        }
    }

    #[inline]
    pub fn to_flat(self) -> [T; 9] {
        let m = self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    #[inline]
    pub fn transpose(self) -> Self {
        let m = self.m;
        Mat3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    #[inline]
    pub fn mul_vec(self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        )
    }

    pub fn mul_mat(self, o: Self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s += self.m[i][k] * o.m[k][j];
                }
                r.m[i][j] = s;
            }
        }
        r
    }

    #[inline]
    pub fn trace(self) -> T {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn det(self) -> T {
        let m = self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse via the adjugate; `None` when the determinant is not safely
    /// invertible.
    pub fn inverse(self) -> Option<Self> {
        let m = self.m;
        let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
        let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
        let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
        let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let inv_det = T::one() / det;
        let mut r = Self::zero();
        r.m[0][0] = c00 * inv_det;
        r.m[1][0] = c01 * inv_det;
        r.m[2][0] = c02 * inv_det;
        r.m[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        r.m[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        r.m[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        r.m[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        r.m[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        r.m[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        Some(r)
    }

    /// Inverse of a symmetric positive-definite matrix via Cholesky.
    /// Stable for badly conditioned SPD matrices where the adjugate
    /// determinant cancels; `None` when a pivot is non-positive.
    pub fn spd_inverse(self) -> Option<Self> {
        let m = self.m;
        let d0 = m[0][0];
        if !(d0 > T::zero()) || !d0.is_finite() {
            return None;
        }
        let l00 = d0.sqrt();
        let l10 = m[1][0] / l00;
        let l20 = m[2][0] / l00;
        let d1 = m[1][1] - l10 * l10;
        if !(d1 > T::zero()) || !d1.is_finite() {
            return None;
        }
        let l11 = d1.sqrt();
        let l21 = (m[2][1] - l20 * l10) / l11;
        let d2 = m[2][2] - l20 * l20 - l21 * l21;
        if !(d2 > T::zero()) || !d2.is_finite() {
            return None;
        }
        let l22 = d2.sqrt();
        // B = L^{-1} (lower triangular), C = B^T B.
        let b00 = T::one() / l00;
        let b11 = T::one() / l11;
        let b22 = T::one() / l22;
        let b10 = -l10 * b00 * b11;
        let b21 = -l21 * b11 * b22;
        let b20 = -(l20 * b00 + l21 * b10) * b22;
        let mut c = Self::zero();
        c.m[0][0] = b00 * b00 + b10 * b10 + b20 * b20;
        c.m[0][1] = b10 * b11 + b20 * b21;
        c.m[0][2] = b20 * b22;
        c.m[1][1] = b11 * b11 + b21 * b21;
        c.m[1][2] = b21 * b22;
        c.m[2][2] = b22 * b22;
        c.m[1][0] = c.m[0][1];
        c.m[2][0] = c.m[0][2];
        c.m[2][1] = c.m[1][2];
        Some(c)
    }

    /// Rank-1 update `self += s * v * v^T`.
    #[inline]
    pub fn add_scaled_outer(&mut self, v: Vec3<T>, s: T) {
        let a = v.to_array();
        for i in 0..3 {
            for j in 0..3 {
                self.m[i][j] += s * a[i] * a[j];
            }
        }
    }

    /// `v * w^T`.
    pub fn outer(v: Vec3<T>, w: Vec3<T>) -> Self {
        let a = v.to_array();
        let b = w.to_array();
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = a[i] * b[j];
            }
        }
        r
    }

    /// True when `R^T R = I` and `det R = +1` within `tol`.
    pub fn is_rotation(self, tol: T) -> bool {
        let g = self.transpose().mul_mat(self);
        let id = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                if (g.m[i][j] - id.m[i][j]).abs() > tol {
                    return false;
                }
            }
        }
        (self.det() - T::one()).abs() <= tol
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut r = self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += o.m[i][j];
            }
        }
        r
    }
}

impl<T: Real> Mul<T> for Mat3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        let mut r = self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] *= s;
            }
        }
        r
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        let e = (-x).exp();
        T::one() / (T::one() + e)
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`]; requires `p` in (0, 1).
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}
