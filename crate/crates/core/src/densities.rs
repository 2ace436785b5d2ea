//! Pointwise energy, strain-gradient, viscous, and dissipation densities
//! with analytic first derivatives.
//!
//! The stored energy is a Saint-Venant-type term plus a convex determinant
//! barrier,
//!     W(F) = alpha_W |F^T F - Id|^2 + beta_W h_q(det F),
//!     h_q(s) = s^{-q} + q s - (q + 1)   for s > 0,
//! which is frame indifferent by construction, vanishes exactly on SO(d),
//! and blows up as det F -> 0+. For det F <= 0 the value is +infinity.
//!
//! The viscous density is R(F, Fdot) = (1/pt) |A Cdot|^pt with
//! Cdot = Fdot^T F + F^T Fdot, and the dissipation density is
//! D(F1, F2) = |A F1^T F1 - A F2^T F2|.

use crate::num::Real;
use crate::tensor::{cauchy_green, cauchy_green_rate, Mat, Tens3};
use thiserror::Error;

/// All model constants. The anisotropy matrix is spatially constant
/// (homogeneous material); c0/C0 are recorded diagnostics, not enforced.
#[derive(Clone, Debug)]
pub struct MaterialParams<R: Real> {
    /// Spatial dimension, 1 or 2.
    pub d: usize,
    /// Strain-gradient exponent, p > d (p > 2 required for d = 1).
    pub p: R,
    /// Viscosity exponent, pt > 1.
    pub p_tilde: R,
    /// Determinant-barrier exponent, q >= p d / (p - d).
    pub q: R,
    /// Saint-Venant coefficient.
    pub alpha_w: R,
    /// Determinant-barrier coefficient.
    pub beta_w: R,
    /// Strain-gradient coefficient, > 0.
    pub kappa_p: R,
    /// Anisotropy matrix, invertible.
    pub a: Mat<R>,
    /// Recorded lower-bound constant (reporting only).
    pub c0: R,
    /// Recorded upper-bound constant (reporting only).
    pub big_c0: R,
    /// Small-strain load scale, >= 0.
    pub delta: R,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("need p > d and p > 2, got p = {0}")]
    BadP(String),
    #[error("need q >= p d / (p - d), got q = {0}")]
    BadQ(String),
    #[error("need p_tilde > 1, got {0}")]
    BadPTilde(String),
    #[error("anisotropy matrix must be invertible")]
    SingularAnisotropy,
    #[error("kappa_p must be positive")]
    BadKappa,
    #[error("delta must be nonnegative")]
    BadDelta,
}

impl<R: Real> MaterialParams<R> {
    /// Reference parameter set: d = 2, p = 4, q = 4, isotropic viscosity.
    pub fn reference(d: usize) -> Self {
        MaterialParams {
            d,
            p: R::of(4.0),
            p_tilde: R::of(2.0),
            q: R::of(4.0),
            alpha_w: R::one(),
            beta_w: R::one(),
            kappa_p: R::of(1.0),
            a: Mat::identity(d),
            c0: R::of(0.1),
            big_c0: R::of(10.0),
            delta: R::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(1..=2).contains(&self.d) {
            return Err(ParamError::BadDimension(self.d));
        }
        let d = R::of(self.d as f64);
        if self.p <= d || self.p <= R::of(2.0) {
            return Err(ParamError::BadP(format!("{}", self.p)));
        }
        if self.q < self.p * d / (self.p - d) {
            return Err(ParamError::BadQ(format!("{}", self.q)));
        }
        if self.p_tilde <= R::one() {
            return Err(ParamError::BadPTilde(format!("{}", self.p_tilde)));
        }
        if self.a.inv().is_none() {
            return Err(ParamError::SingularAnisotropy);
        }
        if self.kappa_p <= R::zero() {
            return Err(ParamError::BadKappa);
        }
        if self.delta < R::zero() {
            return Err(ParamError::BadDelta);
        }
        Ok(())
    }
}

/// Stored-energy evaluation. `d_f` is `None` exactly when the value is the
/// +infinity sentinel (det F <= 0).
#[derive(Clone, Copy, Debug)]
pub struct WEval<R: Real> {
    pub value: R,
    pub d_f: Option<Mat<R>>,
}

#[derive(Clone, Copy, Debug)]
pub struct PEval<R: Real> {
    pub value: R,
    pub d_g: Tens3<R>,
}

#[derive(Clone, Copy, Debug)]
pub struct REval<R: Real> {
    pub value: R,
    pub d_fdot: Mat<R>,
}

/// Stored energy W and its derivative with respect to F.
pub fn w_eval<R: Real>(params: &MaterialParams<R>, f: &Mat<R>) -> WEval<R> {
    let det = f.det();
    if det <= R::zero() {
        return WEval { value: R::infinity(), d_f: None };
    }
    let d = params.d;
    let c_minus_id = cauchy_green(f) - Mat::identity(d);
    let sv = c_minus_id.dot(&c_minus_id);
    let q = params.q;
    let h = det.powf(-q) + q * det - (q + R::one());
    let h_prime = -q * det.powf(-q - R::one()) + q;
    let value = params.alpha_w * sv + params.beta_w * h;
    // d/dF |C - Id|^2 = 4 F (C - Id);  d/dF det F = det(F) F^{-T}
    let f_inv_t = f.inv().expect("det > 0 implies invertible").transpose();
    let d_f = f.matmul(&c_minus_id).scale(R::of(4.0) * params.alpha_w)
        + f_inv_t.scale(params.beta_w * h_prime * det);
    WEval { value, d_f: Some(d_f) }
}

/// Strain-gradient density P(G) = (kappa_P / p) |G|^p and its derivative.
pub fn p_eval<R: Real>(params: &MaterialParams<R>, g: &Tens3<R>) -> PEval<R> {
    let norm = g.frobenius();
    if norm == R::zero() {
        return PEval { value: R::zero(), d_g: Tens3::zeros(params.d) };
    }
    let p = params.p;
    PEval {
        value: params.kappa_p / p * norm.powf(p),
        d_g: g.scale(params.kappa_p * norm.powf(p - R::of(2.0))),
    }
}

/// Viscous density R(F, Fdot) = (1/pt) |A Cdot|^pt and its derivative with
/// respect to the rate. The derivative at Cdot = 0 is 0 (limit value).
pub fn r_eval<R: Real>(params: &MaterialParams<R>, f: &Mat<R>, fdot: &Mat<R>) -> REval<R> {
    let cdot = cauchy_green_rate(f, fdot);
    let acdot = params.a.matmul(&cdot);
    let norm = acdot.frobenius();
    let pt = params.p_tilde;
    if norm == R::zero() {
        return REval { value: R::zero(), d_fdot: Mat::zeros(params.d) };
    }
    let ata = params.a.transpose().matmul(&params.a);
    let d_fdot = (f.matmul(&cdot).matmul(&ata) + f.matmul(&ata).matmul(&cdot))
        .scale(norm.powf(pt - R::of(2.0)));
    REval { value: norm.powf(pt) / pt, d_fdot }
}

/// Dissipation density D(F1, F2) = |A F1^T F1 - A F2^T F2|.
pub fn d_pointwise<R: Real>(params: &MaterialParams<R>, f1: &Mat<R>, f2: &Mat<R>) -> R {
    let diff = cauchy_green(f1) - cauchy_green(f2);
    params.a.matmul(&diff).frobenius()
}

/// Best constant in (a+b)^pt <= a^pt + b^pt + C (a^{pt-1} b + b^{pt-1} a),
/// found by dense grid search over the normalized split a + b = 1.
pub fn power_inequality_constant<R: Real>(p_tilde: R, grid: usize) -> R {
    let one = R::one();
    let mut best = R::zero();
    for i in 1..grid {
        let a = R::of(i as f64 / grid as f64);
        let b = one - a;
        let num = one - a.powf(p_tilde) - b.powf(p_tilde);
        let den = a.powf(p_tilde - one) * b + b.powf(p_tilde - one) * a;
        if den > R::zero() && num / den > best {
            best = num / den;
        }
    }
    best
}
