use thiserror::Error;

use crate::tensor::{Event, Slot, Valence};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("rank {rank} exceeds the supported maximum of 6")]
    RankTooLarge { rank: usize },
    #[error("expected {expected} components, found {found}")]
    ComponentCount { expected: usize, found: usize },
    #[error("slot {slot:?} out of range for valence {valence}")]
    SlotOutOfRange { slot: Slot, valence: Valence },
    #[error("slot kinds do not match the operation")]
    SlotKindMismatch,
    #[error("slot listed twice")]
    RepeatedSlot,
    #[error("valence mismatch: expected {expected}, found {found}")]
    ValenceMismatch { expected: Valence, found: Valence },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("event {event} lies outside the field's bounding box")]
    OutsideBounds { event: Event },
    #[error("difference stencil around {event} with step {step} leaves the bounding box")]
    StencilOutsideBounds { event: Event, step: f64 },
    #[error("finite difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("grid needs at least 4 nodes per axis and positive spacing")]
    InvalidGrid,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpacetimeError {
    #[error("difference field is not symmetric in its lower slots (residual {residual:e})")]
    AsymmetricDifference { residual: f64 },
    #[error("expected a vector, got valence {0}")]
    NotAVector(Valence),
    #[error("vector with vanishing temporal length is not in the range of the spatial metric (residual {residual:e})")]
    NotInSpatialRange { residual: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesicError {
    #[error("curve left the working region at s = {s} near {event}")]
    ExitedRegion { s: f64, event: Event },
    #[error("non-finite state at s = {s}")]
    NonFinite { s: f64 },
    #[error("tolerance {tol:e} not reached with {steps} steps")]
    ToleranceUnreachable { tol: f64, steps: usize },
    #[error("invalid integration request: {0}")]
    InvalidInput(String),
    #[error("at least {needed} samples required, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("curve parameter is not strictly increasing at sample {index}")]
    NonMonotoneParameter { index: usize },
    #[error("curve is not timelike at sample {index}")]
    NotTimelike { index: usize },
    #[error("coordinate time is not monotone along the curve at sample {index}")]
    NonMonotoneTime { index: usize },
    #[error("time {t} outside the curve's span [{t0}, {t1}]")]
    TimeOutsideSpan { t: f64, t0: f64, t1: f64 },
    #[error(transparent)]
    Spacetime(#[from] SpacetimeError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrautmanError {
    #[error("Poisson residual {residual:e} exceeds {threshold:e}")]
    PoissonViolated { residual: f64, threshold: f64 },
    #[error("curvature conditions fail: cc1 {cc1:e}, cc2 {cc2:e}, cc3 {cc3:e} (threshold {threshold:e})")]
    CurvatureConditions {
        cc1: f64,
        cc2: f64,
        cc3: f64,
        threshold: f64,
    },
    #[error("acceleration field has curl {residual:e}; not recoverable on this region")]
    CurlNonzero { residual: f64 },
    #[error("recovered operator is not flat (residual {residual:e})")]
    RecoveredNotFlat { residual: f64 },
    #[error("spatial curvature residual {residual:e} too large for a flat operator along a curve")]
    SpatialCurvature { residual: f64 },
    #[error("anchor {0} is outside the working region")]
    AnchorOutside(Event),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Spacetime(#[from] SpacetimeError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatterError {
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("invalid body request: {0}")]
    InvalidInput(String),
    #[error("central curve is not a geodesic (residual {residual:e} > {threshold:e})")]
    NotGeodesic { residual: f64, threshold: f64 },
    #[error("congruence caustic at t = {t}: flow Jacobian {det:e}; try a smaller radius or window")]
    Caustic { t: f64, det: f64 },
    #[error("flow line left the working region at t = {t}")]
    LeftRegion { t: f64 },
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluxError {
    #[error("slice at t = {t} does not contain the support (needs [{needed_lo:?}, {needed_hi:?}])")]
    SlicingViolated {
        t: f64,
        needed_lo: [f64; 3],
        needed_hi: [f64; 3],
    },
    #[error("slice time {t} is outside the body's window")]
    OutsideWindow { t: f64 },
    #[error("body has no mass on the slice at t = {t}")]
    NoMass { t: f64 },
    #[error("cobasis transport left the operator's bounding box near {0}")]
    TransportOutside(Event),
    #[error("constant cobasis is degenerate at {0}")]
    DegenerateCobasis(Event),
    #[error("convex hull construction failed: {0}")]
    Hull(String),
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Matter(#[from] MatterError),
}
