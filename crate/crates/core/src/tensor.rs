//! Dense small-dimension tensor algebra: d x d matrices and d x d x d
//! third-order tensors for d in {1, 2}, used pointwise by all densities.
//!
//! Index convention for third-order tensors: `t[(i, j, k)]` holds the
//! (i, j, k) entry, matching the Hessian layout where entry (i, j, k) is
//! the second partial of component i with respect to axes j and k.

use crate::num::Real;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

pub const MAX_DIM: usize = 2;

/// Dense d x d matrix, d in {1, 2}. Storage is a fixed 2x2 block; entries
/// outside the active d x d window stay zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<R: Real> {
    d: usize,
    a: [[R; MAX_DIM]; MAX_DIM],
}

/// Dense d x d x d third-order tensor, same storage convention as [`Mat`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tens3<R: Real> {
    d: usize,
    a: [[[R; MAX_DIM]; MAX_DIM]; MAX_DIM],
}

impl<R: Real> Mat<R> {
    pub fn zeros(d: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "dimension must be 1 or 2");
        Mat { d, a: [[R::zero(); MAX_DIM]; MAX_DIM] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i][i] = R::one();
        }
        m
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize) -> R) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.a[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows_2(rows: [[f64; 2]; 2]) -> Self {
        Self::from_fn(2, |i, j| R::of(rows[i][j]))
    }

    pub fn diag(d: usize, entries: &[R]) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i][i] = entries[i];
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.d, |i, j| self.a[j][i])
    }

    /// (M + M^T) / 2.
    pub fn sym(&self) -> Self {
        let half = R::of(0.5);
        Self::from_fn(self.d, |i, j| (self.a[i][j] + self.a[j][i]) * half)
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> R {
        debug_assert_eq!(self.d, other.d);
        let mut s = R::zero();
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.a[i][j] * other.a[i][j];
            }
        }
        s
    }

    pub fn frobenius(&self) -> R {
        self.dot(self).sqrt()
    }

    pub fn det(&self) -> R {
        match self.d {
            1 => self.a[0][0],
            _ => self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0],
        }
    }

    /// Inverse; `None` when |det| is below the machine-scale threshold.
    pub fn inv(&self) -> Option<Self> {
        let det = self.det();
        if det.abs() <= R::of(1e-300) {
            return None;
        }
        let inv_det = R::one() / det;
        Some(match self.d {
            1 => Self::from_fn(1, |_, _| inv_det),
            _ => {
                let mut m = Self::zeros(2);
                m.a[0][0] = self.a[1][1] * inv_det;
                m.a[0][1] = -self.a[0][1] * inv_det;
                m.a[1][0] = -self.a[1][0] * inv_det;
                m.a[1][1] = self.a[0][0] * inv_det;
                m
            }
        })
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.d, other.d);
        Self::from_fn(self.d, |i, j| {
            let mut s = R::zero();
            for k in 0..self.d {
                s += self.a[i][k] * other.a[k][j];
            }
            s
        })
    }

    pub fn scale(&self, s: R) -> Self {
        Self::from_fn(self.d, |i, j| self.a[i][j] * s)
    }
}

impl<R: Real> Index<(usize, usize)> for Mat<R> {
    type Output = R;
    fn index(&self, (i, j): (usize, usize)) -> &R {
        &self.a[i][j]
    }
}

impl<R: Real> IndexMut<(usize, usize)> for Mat<R> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut R {
        &mut self.a[i][j]
    }
}

impl<R: Real> Add for Mat<R> {
    type Output = Mat<R>;
    fn add(self, rhs: Self) -> Mat<R> {
        Mat::from_fn(self.d, |i, j| self.a[i][j] + rhs.a[i][j])
    }
}

impl<R: Real> Sub for Mat<R> {
    type Output = Mat<R>;
    fn sub(self, rhs: Self) -> Mat<R> {
        Mat::from_fn(self.d, |i, j| self.a[i][j] - rhs.a[i][j])
    }
}

impl<R: Real> Neg for Mat<R> {
    type Output = Mat<R>;
    fn neg(self) -> Mat<R> {
        self.scale(-R::one())
    }
}

impl<R: Real> Mul<Mat<R>> for Mat<R> {
    type Output = Mat<R>;
    fn mul(self, rhs: Mat<R>) -> Mat<R> {
        self.matmul(&rhs)
    }
}

impl<R: Real> Tens3<R> {
    pub fn zeros(d: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "dimension must be 1 or 2");
        Tens3 { d, a: [[[R::zero(); MAX_DIM]; MAX_DIM]; MAX_DIM] }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize) -> R) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    t.a[i][j][k] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn dot(&self, other: &Self) -> R {
        debug_assert_eq!(self.d, other.d);
        let mut s = R::zero();
        for i in 0..self.d {
            for j in 0..self.d {
                for k in 0..self.d {
                    s += self.a[i][j][k] * other.a[i][j][k];
                }
            }
        }
        s
    }

    pub fn frobenius(&self) -> R {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: R) -> Self {
        Self::from_fn(self.d, |i, j, k| self.a[i][j][k] * s)
    }
}

impl<R: Real> Index<(usize, usize, usize)> for Tens3<R> {
    type Output = R;
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &R {
        &self.a[i][j][k]
    }
}

impl<R: Real> IndexMut<(usize, usize, usize)> for Tens3<R> {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut R {
        &mut self.a[i][j][k]
    }
}

impl<R: Real> Add for Tens3<R> {
    type Output = Tens3<R>;
    fn add(self, rhs: Self) -> Tens3<R> {
        Tens3::from_fn(self.d, |i, j, k| self.a[i][j][k] + rhs.a[i][j][k])
    }
}

impl<R: Real> Sub for Tens3<R> {
    type Output = Tens3<R>;
    fn sub(self, rhs: Self) -> Tens3<R> {
        Tens3::from_fn(self.d, |i, j, k| self.a[i][j][k] - rhs.a[i][j][k])
    }
}

/// Right Cauchy-Green tensor C = F^T F.
pub fn cauchy_green<R: Real>(f: &Mat<R>) -> Mat<R> {
    f.transpose().matmul(f)
}

/// Rate of the Cauchy-Green tensor: Fdot^T F + F^T Fdot.
pub fn cauchy_green_rate<R: Real>(f: &Mat<R>, fdot: &Mat<R>) -> Mat<R> {
    fdot.transpose().matmul(f) + f.transpose().matmul(fdot)
}

/// Rotation in SO(d). For d = 1 the group is trivial; for d = 2 the angle
/// is drawn uniformly from [0, 2pi) by the given generator.
pub fn random_rotation<R: Real>(d: usize, rng: &mut impl rand::Rng) -> Mat<R> {
    match d {
        1 => Mat::identity(1),
        _ => {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            rotation_2d(R::of(theta))
        }
    }
}

/// Counterclockwise rotation by `theta` (d = 2).
pub fn rotation_2d<R: Real>(theta: R) -> Mat<R> {
    let (s, c) = (theta.sin(), theta.cos());
    let mut q = Mat::zeros(2);
    q[(0, 0)] = c;
    q[(0, 1)] = -s;
    q[(1, 0)] = s;
    q[(1, 1)] = c;
    q
}
