//! Numerical toolkit for classical (Newton-Cartan) spacetimes.
//!
//! Modules build on each other bottom-up: [`tensor`] and [`field`] give dense
//! tensors and fields on a global chart, [`spacetime`] adds degenerate metrics
//! and derivative operators, [`geodesics`] integrates curves, [`trautman`] maps
//! between flat-plus-potential and curved descriptions, [`matter`] builds
//! conserved dust bodies, [`flux`] integrates them over slices, and
//! [`harness`] drives the experiments.

// `!(x < y)` is used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod field;
pub mod flux;
pub mod geodesics;
pub mod harness;
pub mod hull;
pub mod matter;
pub mod potential;
pub mod quadrature;
pub mod sampling;
pub mod spacetime;
pub mod tensor;
pub mod trautman;

pub use error::{FieldError, FluxError, GeodesicError, MatterError, SpacetimeError, TensorError, TrautmanError};
pub use field::{AnalyticField, Backend, BoundingBox, GridField, TensorField};
pub use flux::{ConstantCobasis, Hypersurface, SliceMoments, SliceReport};
pub use geodesics::{Parametrization, Sample, WorldLine};
pub use harness::{CheckRow, ExperimentConfig, HarnessError, Status};
pub use matter::{BumpProfile, DensitySource, DustOptions, MassMomentumField, SymmetricTensor2};
pub use potential::{Harmonic, PointMass, Potential, Uniform, ZeroPotential};
pub use sampling::{Region, Shell};
pub use spacetime::{ClassicalSpacetime, DerivativeOperator};
pub use tensor::{Event, Slot, Tensor, Valence};
pub use trautman::{GeometrizedModel, NewtonianModel};
