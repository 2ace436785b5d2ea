//! Minimizing-movement solver and diagnostics suite for Kelvin-Voigt
//! viscoelastic second-grade materials.
//!
//! The evolution is a metric gradient flow: states are discrete deformation
//! fields on a uniform grid over the unit box, the driving functional is a
//! frame-indifferent elastic energy with a strain-gradient term, and the
//! dissipation geometry is an L^pt distance between anisotropically
//! transformed Cauchy-Green fields. Besides the time stepper itself, the
//! crate verifies the model's structural properties at desk scale: descent,
//! energy-dissipation balance, dual slope representation, rigidity and Korn
//! quotients, convexity estimates, and long-time decay rates.
//!
//! All numerics are generic over the scalar type via [`num::Real`]; the
//! aliases below fix the two supported precisions.

pub mod decay;
pub mod densities;
pub mod diagnostics;
pub mod field;
pub mod mms;
pub mod num;
pub mod propcheck;
pub mod slope;
pub mod tensor;

pub use num::Real;

/// f64 concrete aliases (the default precision for runs and reports).
pub type Mat64 = tensor::Mat<f64>;
pub type Tens364 = tensor::Tens3<f64>;
pub type MaterialParams64 = densities::MaterialParams<f64>;
pub type DeformationField64 = field::DeformationField<f64>;
pub type AdmissibleSet64 = field::AdmissibleSet<f64>;
pub type Trajectory64 = mms::Trajectory<f64>;

/// f32 concrete aliases.
pub type Mat32 = tensor::Mat<f32>;
pub type Tens332 = tensor::Tens3<f32>;
pub type MaterialParams32 = densities::MaterialParams<f32>;
pub type DeformationField32 = field::DeformationField<f32>;
