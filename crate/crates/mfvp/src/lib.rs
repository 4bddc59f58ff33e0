//! Training of mean-field single-hidden-layer networks by variable
//! projection, together with the weighted ultra-fast diffusion PDE that the
//! small-regularization training dynamic approaches, and the metrics used to
//! compare the two.
//!
//! All numerics are generic over a [`Scalar`] (`f32` or `f64`); concrete
//! `f64` aliases for the main types are exported at the crate root.

use std::fmt::{Debug, Display};

use num_traits::{FromPrimitive, ToPrimitive};

pub mod data;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod geometry;
pub mod outer;
pub mod pde;
pub mod teacher;

pub use error::{Error, Result};

/// Scalar type all numerics are generic over: `f32` or `f64`.
pub trait Scalar:
    nalgebra::RealField + Copy + Default + FromPrimitive + ToPrimitive + Display + Debug
{
    /// Conversion from `f64`, for literals and tolerances.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Domain64 = geometry::Domain<f64>;
pub type Point64 = geometry::ManifoldPoint<f64>;
pub type Ensemble64 = ensemble::ParticleEnsemble<f64>;
pub type DataSet64 = data::DataSet<f64>;
pub type FeatureModel64 = features::FeatureModel<f64>;
