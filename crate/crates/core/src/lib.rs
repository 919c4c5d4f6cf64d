//! Common and distinctive pattern analysis (CDPA) of two paired data matrices.
//!
//! The pipeline runs low-rank denoising, D-CCA, principal-angle analysis of the
//! two mixing channels and optional row matching, and returns the common-pattern
//! matrix together with each dataset's distinctive part. All numerics are
//! generic over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod align;
pub mod cdpa;
pub mod dcca;
pub mod denoise;
pub mod error;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod simulate;
pub mod subspace;

pub use align::{MatchMethod, PermutationPlan};
pub use cdpa::{estimate_cdpa, population_cdpa, CdpaConfig, DualWeightVariant, PermutationSource, SignMode};
pub use denoise::RankProfile;
pub use error::{CdpaError, Result};
pub use scalar::Scalar;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type ObservedMatrix = denoise::ObservedMatrix<f64>;
pub type SignalEstimate = denoise::SignalEstimate<f64>;
pub type SignalCovariance = denoise::SignalCovariance<f64>;
pub type CanonicalSystem = dcca::CanonicalSystem<f64>;
pub type MixingChannel = dcca::MixingChannel<f64>;
pub type SourceDecomposition = dcca::SourceDecomposition<f64>;
pub type ChannelSubspacePair = subspace::ChannelSubspacePair<f64>;
pub type PatternDecomposition = cdpa::PatternDecomposition<f64>;
pub type PopulationModel = cdpa::PopulationModel<f64>;
pub type PopulationCdpa = cdpa::PopulationCdpa<f64>;
pub type CdpaFit = cdpa::CdpaFit<f64>;
