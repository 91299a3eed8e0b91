//! Numerical core for diffuse-scene relighting analysis.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod campaign;
pub mod conefit;
pub mod egm;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod isotonic;
pub mod metrics;
pub mod radiosity;
pub mod report;
pub mod scenegen;

pub use error::{Error, Result};

pub use conefit::{FitResult, GeneratorSet};
pub use egm::{Egm, RadiosityBasis, SecondMoment, SymmetricDirichlet, ThetaSampler};
pub use geometry::{AffinePerturbation, LuminaireModel, Mat3, Patch, Scene, Vec3};
pub use metrics::{EmbeddingSet, FidInfinityFit, LfidInputs, RankedCandidate};
pub use radiosity::{KernelMatrix, RadiosityField, Transport};
pub use report::{fmt_f64, write_csv, CsvRecord};
