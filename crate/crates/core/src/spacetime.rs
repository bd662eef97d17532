//! Classical spacetime structure: degenerate metrics, derivative operators and curvature.
//!
//! A derivative operator is stored as its difference field `C^a_bc` relative
//! to the coordinate operator `∂`, and acts as
//!
//! ```text
//! ∇_a ξ^b = ∂_a ξ^b − C^b_an ξ^n        ∇_a ω_b = ∂_a ω_b + C^n_ab ω_n
//! ```
//!
//! With this sign the geodesic equation reads `d²x^a/ds² = C^a_bc ẋ^b ẋ^c`
//! and the geometrized connection `C^a_bc = −t_b t_c ∇^a φ` makes free fall
//! coincide with acceleration `−∇^a φ`. Curvature follows
//! `R^a_bcd ξ^b = −2 ∇_[c ∇_d] ξ^a`, that is
//!
//! ```text
//! R^a_bcd = ∂_c C^a_db − ∂_d C^a_cb − C^a_cn C^n_db + C^a_dn C^n_cb
//! ```
//!
//! and `R_ab = R^n_abn`.

use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};

use crate::error::{FieldError, SpacetimeError};
use crate::field::{self, default_step_for, AnalyticField, Backend, BoundingBox, TensorField};
use crate::sampling::halton;
use crate::tensor::{Event, Tensor, Valence};

/// `c[a][b][c] = C^a_bc`.
pub type Christoffel = [[[f64; 4]; 4]; 4];
/// `d[m] = ∂_m C`.
pub type ChristoffelDerivative = [Christoffel; 4];
/// `r[a][b][c][d] = R^a_bcd`.
pub type Riemann = [[[[f64; 4]; 4]; 4]; 4];

pub type ScalarFn = Arc<dyn Fn(&Event) -> f64 + Send + Sync>;

pub const TAU_C_ANALYTIC: f64 = 1e-8;
pub const TAU_C_GRID: f64 = 1e-5;
pub const TAU_P: f64 = 1e-6;

pub const ZERO_CHRISTOFFEL: Christoffel = [[[0.0; 4]; 4]; 4];

/// Spatial metric of the adapted chart.
pub const ADAPTED_H: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];
/// Temporal metric of the adapted chart.
pub const ADAPTED_T: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

pub fn christoffel_to_tensor(c: &Christoffel) -> Tensor {
    Tensor::from_fn(Valence::new(1, 2), |i| c[i[0]][i[1]][i[2]]).expect("rank 3")
}

pub fn tensor_to_christoffel(t: &Tensor) -> Christoffel {
    let mut c = ZERO_CHRISTOFFEL;
    for (lin, v) in t.components().iter().enumerate() {
        c[lin / 16][(lin / 4) % 4][lin % 4] = *v;
    }
    c
}

pub fn christoffel_max_abs(c: &Christoffel) -> f64 {
    c.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn christoffel_max_diff(a: &Christoffel, b: &Christoffel) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                m = m.max((a[i][j][k] - b[i][j][k]).abs());
            }
        }
    }
    m
}

/// `C^a_bc u^b w^c`.
pub fn contract_christoffel(c: &Christoffel, u: &[f64; 4], w: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (a, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for b in 0..4 {
            if u[b] == 0.0 {
                continue;
            }
            for cc in 0..4 {
                s += c[a][b][cc] * u[b] * w[cc];
            }
        }
        *o = s;
    }
    out
}

/// A symmetric (1,2) difference field relative to the coordinate operator.
pub trait ConnectionField: Send + Sync {
    fn bounds(&self) -> BoundingBox;
    fn backend(&self) -> Backend;
    fn eval(&self, e: &Event) -> Christoffel;

    /// Exact coordinate derivative, when known.
    fn derivative(&self, _e: &Event) -> Option<ChristoffelDerivative> {
        None
    }

    /// True only for a field that vanishes identically.
    fn is_zero(&self) -> bool {
        false
    }
}

struct ZeroConnection {
    bounds: BoundingBox,
}

impl ConnectionField for ZeroConnection {
    fn bounds(&self) -> BoundingBox {
        self.bounds
    }
    fn backend(&self) -> Backend {
        Backend::Analytic
    }
    fn eval(&self, _e: &Event) -> Christoffel {
        ZERO_CHRISTOFFEL
    }
    fn derivative(&self, _e: &Event) -> Option<ChristoffelDerivative> {
        Some([ZERO_CHRISTOFFEL; 4])
    }
    fn is_zero(&self) -> bool {
        true
    }
}

struct SumConnection {
    parts: Vec<(f64, Arc<dyn ConnectionField>)>,
    bounds: BoundingBox,
}

impl ConnectionField for SumConnection {
    fn bounds(&self) -> BoundingBox {
        self.bounds
    }

    fn backend(&self) -> Backend {
        self.parts
            .iter()
            .fold(Backend::Analytic, |b, (_, p)| b.combine(p.backend()))
    }

    fn eval(&self, e: &Event) -> Christoffel {
        let mut out = ZERO_CHRISTOFFEL;
        for (w, p) in &self.parts {
            if p.is_zero() {
                continue;
            }
            let c = p.eval(e);
            for a in 0..4 {
                for b in 0..4 {
                    for k in 0..4 {
                        out[a][b][k] += w * c[a][b][k];
                    }
                }
            }
        }
        out
    }

    fn derivative(&self, e: &Event) -> Option<ChristoffelDerivative> {
        let mut out = [ZERO_CHRISTOFFEL; 4];
        for (w, p) in &self.parts {
            if p.is_zero() {
                continue;
            }
            let d = p.derivative(e)?;
            for m in 0..4 {
                for a in 0..4 {
                    for b in 0..4 {
                        for k in 0..4 {
                            out[m][a][b][k] += w * d[m][a][b][k];
                        }
                    }
                }
            }
        }
        Some(out)
    }

    fn is_zero(&self) -> bool {
        self.parts.iter().all(|(_, p)| p.is_zero())
    }
}

/// Views a (1,2) tensor field as a connection difference field.
pub struct TensorConnection {
    field: Arc<dyn TensorField>,
}

impl TensorConnection {
    pub fn new(field: Arc<dyn TensorField>) -> Result<Self, SpacetimeError> {
        if field.valence() != Valence::new(1, 2) {
            return Err(crate::error::TensorError::ValenceMismatch {
                expected: Valence::new(1, 2),
                found: field.valence(),
            }
            .into());
        }
        Ok(TensorConnection { field })
    }
}

impl ConnectionField for TensorConnection {
    fn bounds(&self) -> BoundingBox {
        self.field.bounds()
    }
    fn backend(&self) -> Backend {
        self.field.backend()
    }
    fn eval(&self, e: &Event) -> Christoffel {
        match self.field.eval(e) {
            Ok(t) => tensor_to_christoffel(&t),
            Err(_) => [[[f64::NAN; 4]; 4]; 4],
        }
    }
    fn derivative(&self, e: &Event) -> Option<ChristoffelDerivative> {
        // layout (a; m, b, c)
        let d = self.field.exact_derivative(e)?;
        let mut out = [ZERO_CHRISTOFFEL; 4];
        for (lin, v) in d.components().iter().enumerate() {
            let a = lin / 64;
            let m = (lin / 16) % 4;
            let b = (lin / 4) % 4;
            let c = lin % 4;
            out[m][a][b][c] = *v;
        }
        Some(out)
    }
}

struct ConnectionAsTensor {
    field: Arc<dyn ConnectionField>,
}

impl TensorField for ConnectionAsTensor {
    fn valence(&self) -> Valence {
        Valence::new(1, 2)
    }
    fn bounds(&self) -> BoundingBox {
        self.field.bounds()
    }
    fn backend(&self) -> Backend {
        self.field.backend()
    }
    fn eval(&self, e: &Event) -> Result<Tensor, FieldError> {
        if !self.field.bounds().contains(e) {
            return Err(FieldError::OutsideBounds { event: *e });
        }
        Ok(christoffel_to_tensor(&self.field.eval(e)))
    }
    fn exact_derivative(&self, e: &Event) -> Option<Tensor> {
        let d = self.field.derivative(e)?;
        Some(
            Tensor::from_fn(Valence::new(1, 3), |i| d[i[1]][i[0]][i[2]][i[3]]).expect("rank 4"),
        )
    }
}

/// A derivative operator, stored as its difference field from `∂`.
#[derive(Clone)]
pub struct DerivativeOperator {
    field: Arc<dyn ConnectionField>,
}

impl std::fmt::Debug for DerivativeOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DerivativeOperator")
            .field("bounds", &self.bounds())
            .field("backend", &self.backend())
            .finish()
    }
}

impl DerivativeOperator {
    /// The coordinate operator `∂` over the given bounds.
    pub fn coordinate(bounds: BoundingBox) -> Self {
        DerivativeOperator {
            field: Arc::new(ZeroConnection { bounds }),
        }
    }

    /// Wraps a difference field after checking lower-slot symmetry on sample events.
    pub fn from_connection(field: Arc<dyn ConnectionField>) -> Result<Self, SpacetimeError> {
        let residual = asymmetry(field.as_ref());
        if residual > 0.0 {
            return Err(SpacetimeError::AsymmetricDifference { residual });
        }
        Ok(DerivativeOperator { field })
    }

    pub fn from_tensor_field(field: Arc<dyn TensorField>) -> Result<Self, SpacetimeError> {
        Self::from_connection(Arc::new(TensorConnection::new(field)?))
    }

    pub fn connection(&self) -> &Arc<dyn ConnectionField> {
        &self.field
    }

    pub fn bounds(&self) -> BoundingBox {
        self.field.bounds()
    }

    pub fn backend(&self) -> Backend {
        self.field.backend()
    }

    pub fn is_coordinate(&self) -> bool {
        self.field.is_zero()
    }

    /// Compatibility tolerance for this operator's backend.
    pub fn tolerance(&self) -> f64 {
        if self.backend().is_analytic() {
            TAU_C_ANALYTIC
        } else {
            TAU_C_GRID
        }
    }

    pub fn christoffel(&self, e: &Event) -> Christoffel {
        self.field.eval(e)
    }

    /// `∂_m C^a_bc`, exact when available, otherwise by the fourth-order stencil.
    pub fn christoffel_derivative(&self, e: &Event) -> Result<ChristoffelDerivative, FieldError> {
        if let Some(d) = self.field.derivative(e) {
            return Ok(d);
        }
        let h = default_step_for(&self.bounds(), self.backend());
        self.christoffel_derivative_fd(e, h)
    }

    pub fn christoffel_derivative_fd(
        &self,
        e: &Event,
        h: f64,
    ) -> Result<ChristoffelDerivative, FieldError> {
        if !self.bounds().contains_stencil(e, h) {
            return Err(FieldError::StencilOutsideBounds { event: *e, step: h });
        }
        let mut out = [ZERO_CHRISTOFFEL; 4];
        for (m, slot) in out.iter_mut().enumerate() {
            let p2 = self.field.eval(&e.shifted(m, 2.0 * h));
            let p1 = self.field.eval(&e.shifted(m, h));
            let m1 = self.field.eval(&e.shifted(m, -h));
            let m2 = self.field.eval(&e.shifted(m, -2.0 * h));
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        slot[a][b][c] = (-p2[a][b][c] + 8.0 * p1[a][b][c] - 8.0 * m1[a][b][c]
                            + m2[a][b][c])
                            / (12.0 * h);
                    }
                }
            }
        }
        Ok(out)
    }

    /// The difference field as a (1,2) tensor field.
    pub fn difference_field(&self) -> Arc<dyn TensorField> {
        Arc::new(ConnectionAsTensor {
            field: self.field.clone(),
        })
    }

    /// Operator whose difference field is the pointwise sum with `extra`.
    pub fn compose(&self, extra: Arc<dyn ConnectionField>) -> Result<Self, SpacetimeError> {
        self.compose_scaled(extra, 1.0)
    }

    /// Operator with difference field `C + scale · extra`.
    pub fn compose_scaled(
        &self,
        extra: Arc<dyn ConnectionField>,
        scale: f64,
    ) -> Result<Self, SpacetimeError> {
        let residual = asymmetry(extra.as_ref());
        if residual > 0.0 {
            return Err(SpacetimeError::AsymmetricDifference { residual });
        }
        let bounds = self.bounds().intersect(&extra.bounds());
        let mut parts = Vec::new();
        if !self.field.is_zero() {
            parts.push((1.0, self.field.clone()));
        }
        if !extra.is_zero() {
            parts.push((scale, extra));
        }
        if parts.is_empty() {
            return Ok(DerivativeOperator::coordinate(bounds));
        }
        Ok(DerivativeOperator {
            field: Arc::new(SumConnection { parts, bounds }),
        })
    }

    pub fn compose_tensor_field(&self, extra: Arc<dyn TensorField>) -> Result<Self, SpacetimeError> {
        self.compose(Arc::new(TensorConnection::new(extra)?))
    }

    /// Sup-norm of the difference between two operators' fields at the events.
    pub fn max_difference(&self, other: &DerivativeOperator, events: &[Event]) -> f64 {
        events
            .iter()
            .map(|e| christoffel_max_diff(&self.christoffel(e), &other.christoffel(e)))
            .fold(0.0, f64::max)
    }
}

/// Largest lower-slot asymmetry over deterministic sample events, relative to the field size.
fn asymmetry(field: &dyn ConnectionField) -> f64 {
    if field.is_zero() {
        return 0.0;
    }
    let b = field.bounds();
    let mut worst: f64 = 0.0;
    for i in 1..=64u64 {
        let h = halton(i, 4);
        let mut c = [0.0; 4];
        for k in 0..4 {
            let (lo, hi) = if b.lo[k].is_finite() && b.hi[k].is_finite() {
                (b.lo[k], b.hi[k])
            } else {
                (b.lo[k].max(-1.0), b.hi[k].min(1.0))
            };
            c[k] = lo + h[k] * (hi - lo);
        }
        let g = field.eval(&Event(c));
        let scale = christoffel_max_abs(&g).max(1.0);
        for a in 0..4 {
            for p in 0..4 {
                for q in p + 1..4 {
                    let d = (g[a][p][q] - g[a][q][p]).abs();
                    if d > 1e-12 * scale {
                        worst = worst.max(d);
                    }
                }
            }
        }
    }
    worst
}

/// `∇_a f` at one event for an arbitrary tensor value and its coordinate derivative.
pub fn covariant_from_parts(c: &Christoffel, value: &Tensor, partial: &Tensor) -> Tensor {
    let v = value.valence();
    let mut out = partial.clone();
    let rank_out = v.rank() + 1;
    let mut idx = [0usize; 6];
    let mut src = [0usize; 6];
    let n = out.components().len();
    for lin in 0..n {
        let mut rem = lin;
        for k in (0..rank_out).rev() {
            idx[k] = rem % 4;
            rem /= 4;
        }
        let a = idx[v.up];
        // source index in value layout: ups then downs without the derivative slot
        for k in 0..v.up {
            src[k] = idx[k];
        }
        for k in 0..v.down {
            src[v.up + k] = idx[v.up + 1 + k];
        }
        let mut corr = 0.0;
        for k in 0..v.up {
            let upk = src[k];
            for nn in 0..4 {
                let cc = c[upk][a][nn];
                if cc != 0.0 {
                    src[k] = nn;
                    corr -= cc * value.get(&src[..v.rank()]);
                }
            }
            src[k] = upk;
        }
        for k in 0..v.down {
            let p = v.up + k;
            let dk = src[p];
            for nn in 0..4 {
                let cc = c[nn][a][dk];
                if cc != 0.0 {
                    src[p] = nn;
                    corr += cc * value.get(&src[..v.rank()]);
                }
            }
            src[p] = dk;
        }
        out.components_mut()[lin] += corr;
    }
    out
}

/// `∇_a f` at `e`; `step` overrides the field's default difference step.
pub fn covariant_derivative_at(
    op: &DerivativeOperator,
    f: &dyn TensorField,
    e: &Event,
    step: Option<f64>,
) -> Result<Tensor, FieldError> {
    let value = f.eval(e)?;
    let partial = match step {
        Some(h) => field::partial_derivative(f, e, h)?,
        None => field::derivative(f, e)?,
    };
    Ok(covariant_from_parts(&op.christoffel(e), &value, &partial))
}

/// The field `∇_a f`, valence `(r, s+1)` with the derivative slot first among covariant slots.
pub struct CovariantDerivative {
    op: DerivativeOperator,
    field: Arc<dyn TensorField>,
}

pub fn covariant_derivative(
    op: &DerivativeOperator,
    f: Arc<dyn TensorField>,
) -> Result<CovariantDerivative, SpacetimeError> {
    if f.valence().rank() > 5 {
        return Err(crate::error::TensorError::RankTooLarge {
            rank: f.valence().rank() + 1,
        }
        .into());
    }
    Ok(CovariantDerivative {
        op: op.clone(),
        field: f,
    })
}

impl TensorField for CovariantDerivative {
    fn valence(&self) -> Valence {
        let v = self.field.valence();
        Valence::new(v.up, v.down + 1)
    }
    fn bounds(&self) -> BoundingBox {
        self.field.bounds().intersect(&self.op.bounds())
    }
    fn backend(&self) -> Backend {
        self.field.backend().combine(self.op.backend())
    }
    fn eval(&self, e: &Event) -> Result<Tensor, FieldError> {
        covariant_derivative_at(&self.op, self.field.as_ref(), e, None)
    }
}

pub fn riemann_from(c: &Christoffel, dc: &ChristoffelDerivative) -> Riemann {
    let mut r = [[[[0.0; 4]; 4]; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            for cc in 0..4 {
                for d in 0..4 {
                    if cc == d {
                        continue;
                    }
                    let mut v = dc[cc][a][d][b] - dc[d][a][cc][b];
                    for n in 0..4 {
                        v += -c[a][cc][n] * c[n][d][b] + c[a][d][n] * c[n][cc][b];
                    }
                    r[a][b][cc][d] = v;
                }
            }
        }
    }
    r
}

pub fn riemann_at(op: &DerivativeOperator, e: &Event) -> Result<Riemann, FieldError> {
    let dc = op.christoffel_derivative(e)?;
    Ok(riemann_from(&op.christoffel(e), &dc))
}

/// `R_ab = R^n_abn`.
pub fn ricci_from(r: &Riemann) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            out[a][b] = (0..4).map(|n| r[n][a][b][n]).sum();
        }
    }
    out
}

/// Pointwise curvature quantities with indices raised by `h`.
#[derive(Clone, Debug)]
pub struct CurvaturePoint {
    pub riemann: Riemann,
    pub ricci: [[f64; 4]; 4],
}

impl CurvaturePoint {
    pub fn new(op: &DerivativeOperator, e: &Event) -> Result<Self, FieldError> {
        let riemann = riemann_at(op, e)?;
        let ricci = ricci_from(&riemann);
        Ok(CurvaturePoint { riemann, ricci })
    }

    pub fn riemann_tensor(&self) -> Tensor {
        let r = &self.riemann;
        Tensor::from_fn(Valence::new(1, 3), |i| r[i[0]][i[1]][i[2]][i[3]]).expect("rank 4")
    }

    /// `R^{ab} = h^am h^bn R_mn`.
    pub fn ricci_raised(&self, h: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let mut s = 0.0;
                for m in 0..4 {
                    for n in 0..4 {
                        s += h[a][m] * h[b][n] * self.ricci[m][n];
                    }
                }
                out[a][b] = s;
            }
        }
        out
    }

    /// `R^{ab}_cd = h^bm R^a_mcd`.
    pub fn half_raised(&self, h: &[[f64; 4]; 4]) -> Riemann {
        let mut out = [[[[0.0; 4]; 4]; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        out[a][b][c][d] = (0..4).map(|m| h[b][m] * self.riemann[a][m][c][d]).sum();
                    }
                }
            }
        }
        out
    }

    /// `R^a_b^c_d = h^cm R^a_bmd`.
    pub fn third_raised(&self, h: &[[f64; 4]; 4]) -> Riemann {
        let mut out = [[[[0.0; 4]; 4]; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        out[a][b][c][d] = (0..4).map(|m| h[c][m] * self.riemann[a][b][m][d]).sum();
                    }
                }
            }
        }
        out
    }

    /// `R^{abcd} = h^bm h^cn h^dp R^a_mnp`.
    pub fn fully_raised(&self, h: &[[f64; 4]; 4]) -> Riemann {
        let half = self.half_raised(h);
        let mut step = [[[[0.0; 4]; 4]; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        step[a][b][c][d] = (0..4).map(|n| h[c][n] * half[a][b][n][d]).sum();
                    }
                }
            }
        }
        let mut out = [[[[0.0; 4]; 4]; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        out[a][b][c][d] = (0..4).map(|p| h[d][p] * step[a][b][c][p]).sum();
                    }
                }
            }
        }
        out
    }

    /// `sup |R^a_[bcd]|`.
    pub fn bianchi_residual(&self) -> f64 {
        let r = &self.riemann;
        let mut m: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let v = (r[a][b][c][d] + r[a][c][d][b] + r[a][d][b][c]) / 3.0;
                        m = m.max(v.abs());
                    }
                }
            }
        }
        m
    }

    /// `sup |R^a_b^c_d − R^c_d^a_b|`.
    pub fn cc2_residual(&self, h: &[[f64; 4]; 4]) -> f64 {
        let q = self.third_raised(h);
        let mut m: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        m = m.max((q[a][b][c][d] - q[c][d][a][b]).abs());
                    }
                }
            }
        }
        m
    }

    /// `sup |R_ab − 4πρ t_a t_b|`.
    pub fn cc1_residual(&self, rho: f64, t: &[f64; 4]) -> f64 {
        let four_pi = 4.0 * std::f64::consts::PI;
        let mut m: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                m = m.max((self.ricci[a][b] - four_pi * rho * t[a] * t[b]).abs());
            }
        }
        m
    }
}

fn max4(r: &Riemann) -> f64 {
    r.iter().flatten().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

fn max2(r: &[[f64; 4]; 4]) -> f64 {
    r.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// Suprema of curvature residuals over a sample set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurvatureReport {
    pub samples: usize,
    /// `sup |R^a_bcd|`
    pub flatness: f64,
    /// `sup |R_ab|`
    pub ricci: f64,
    /// `sup |R^{ab}|`
    pub ricci_raised: f64,
    /// `sup |R^{abcd}|`
    pub spatial_flatness: f64,
    /// `sup |R^{ab}_cd|`
    pub newtonian: f64,
    pub bianchi: f64,
    pub cc2: f64,
    /// `sup |R_ab − 4πρ t_a t_b|` when a density was supplied.
    pub cc1: Option<f64>,
}

/// Curvature report with indices raised by the adapted-chart spatial metric.
pub fn riemann(op: &DerivativeOperator, events: &[Event]) -> Result<CurvatureReport, FieldError> {
    riemann_with(op, &ADAPTED_H, &ADAPTED_T, events, None)
}

pub fn riemann_with(
    op: &DerivativeOperator,
    h: &[[f64; 4]; 4],
    t: &[f64; 4],
    events: &[Event],
    density: Option<&ScalarFn>,
) -> Result<CurvatureReport, FieldError> {
    let mut rep = CurvatureReport {
        samples: events.len(),
        cc1: density.map(|_| 0.0),
        ..Default::default()
    };
    for e in events {
        let p = CurvaturePoint::new(op, e)?;
        rep.flatness = rep.flatness.max(max4(&p.riemann));
        rep.ricci = rep.ricci.max(max2(&p.ricci));
        rep.ricci_raised = rep.ricci_raised.max(max2(&p.ricci_raised(h)));
        rep.spatial_flatness = rep.spatial_flatness.max(max4(&p.fully_raised(h)));
        rep.newtonian = rep.newtonian.max(max4(&p.half_raised(h)));
        rep.bianchi = rep.bianchi.max(p.bianchi_residual());
        rep.cc2 = rep.cc2.max(p.cc2_residual(h));
        if let (Some(rho), Some(cc1)) = (density, rep.cc1.as_mut()) {
            *cc1 = cc1.max(p.cc1_residual(rho(e), t));
        }
    }
    Ok(rep)
}

/// Riemann tensor as a field, valence (1,3).
pub struct RiemannField {
    op: DerivativeOperator,
}

impl RiemannField {
    pub fn new(op: DerivativeOperator) -> Self {
        RiemannField { op }
    }
}

impl TensorField for RiemannField {
    fn valence(&self) -> Valence {
        Valence::new(1, 3)
    }
    fn bounds(&self) -> BoundingBox {
        self.op.bounds()
    }
    fn backend(&self) -> Backend {
        self.op.backend()
    }
    fn eval(&self, e: &Event) -> Result<Tensor, FieldError> {
        Ok(CurvaturePoint::new(&self.op, e)?.riemann_tensor())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorKind {
    Timelike,
    Spacelike,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub kind: VectorKind,
    pub temporal_length: f64,
    pub spatial_length: Option<f64>,
}

/// Compatibility, orthogonality and signature residuals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompatibilityReport {
    pub samples: usize,
    /// `sup |h^ab t_b|`
    pub orthogonality: f64,
    /// Zero when `h` is positive semi-definite of rank 3 and `t ≠ 0`; otherwise the size of the defect.
    pub signature: f64,
    /// `sup |∇_a t_b|`
    pub temporal: f64,
    /// `sup |∇_a h^bc|`
    pub spatial: f64,
}

impl CompatibilityReport {
    pub fn max(&self) -> f64 {
        self.orthogonality
            .max(self.signature)
            .max(self.temporal)
            .max(self.spatial)
    }
}

/// The quadruple (M, t_a, h^ab, ∇) over a global chart.
#[derive(Clone)]
pub struct ClassicalSpacetime {
    pub temporal: Arc<dyn TensorField>,
    pub spatial: Arc<dyn TensorField>,
    pub op: DerivativeOperator,
}

impl std::fmt::Debug for ClassicalSpacetime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassicalSpacetime").field("op", &self.op).finish()
    }
}

impl ClassicalSpacetime {
    /// Adapted chart: `t_a = (1,0,0,0)`, `h^ab = diag(0,1,1,1)`.
    pub fn adapted(op: DerivativeOperator) -> Self {
        let b = op.bounds();
        ClassicalSpacetime {
            temporal: Arc::new(AnalyticField::constant(Tensor::covector(ADAPTED_T), b)),
            spatial: Arc::new(AnalyticField::constant(
                Tensor::matrix(Valence::new(2, 0), &ADAPTED_H).expect("rank 2"),
                b,
            )),
            op,
        }
    }

    pub fn flat(bounds: BoundingBox) -> Self {
        Self::adapted(DerivativeOperator::coordinate(bounds))
    }

    pub fn with_operator(&self, op: DerivativeOperator) -> Self {
        ClassicalSpacetime {
            temporal: self.temporal.clone(),
            spatial: self.spatial.clone(),
            op,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.op.tolerance()
    }

    pub fn t_at(&self, e: &Event) -> Result<[f64; 4], FieldError> {
        Ok(self.temporal.eval(e)?.as_array4())
    }

    pub fn h_at(&self, e: &Event) -> Result<[[f64; 4]; 4], FieldError> {
        let h = self.spatial.eval(e)?;
        let mut m = [[0.0; 4]; 4];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = h.get(&[a, b]);
            }
        }
        Ok(m)
    }

    pub fn compatibility(&self, events: &[Event]) -> Result<CompatibilityReport, FieldError> {
        let mut rep = CompatibilityReport {
            samples: events.len(),
            ..Default::default()
        };
        for e in events {
            let t = self.t_at(e)?;
            let h = self.h_at(e)?;
            for row in &h {
                let s: f64 = (0..4).map(|b| row[b] * t[b]).sum();
                rep.orthogonality = rep.orthogonality.max(s.abs());
            }
            rep.signature = rep.signature.max(signature_defect(&h, &t));
            let dt = covariant_derivative_at(&self.op, self.temporal.as_ref(), e, None)?;
            let dh = covariant_derivative_at(&self.op, self.spatial.as_ref(), e, None)?;
            rep.temporal = rep.temporal.max(dt.max_abs());
            rep.spatial = rep.spatial.max(dh.max_abs());
        }
        Ok(rep)
    }

    /// Curvature report with this spacetime's metrics.
    pub fn curvature(
        &self,
        events: &[Event],
        density: Option<&ScalarFn>,
    ) -> Result<CurvatureReport, FieldError> {
        let probe = events.first().copied().unwrap_or(Event::new(0.0, 0.0, 0.0, 0.0));
        let h = self.h_at(&probe)?;
        let t = self.t_at(&probe)?;
        riemann_with(&self.op, &h, &t, events, density)
    }
}

fn signature_defect(h: &[[f64; 4]; 4], t: &[f64; 4]) -> f64 {
    let m = Matrix4::from_fn(|i, j| h[i][j]);
    let eig = m.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = vals[3].abs().max(1.0);
    let mut defect = vals[0].abs();
    if vals[1] <= 1e-10 * scale {
        defect = defect.max(1.0);
    }
    if t.iter().all(|v| *v == 0.0) {
        defect = defect.max(1.0);
    }
    defect
}

/// Spatial length `(h^ab σ_a σ_b)^{1/2}` for a chosen `σ`.
pub fn spatial_length_from_covector(h: &[[f64; 4]; 4], sigma: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            s += h[a][b] * sigma[a] * sigma[b];
        }
    }
    s.max(0.0).sqrt()
}

/// Least-squares `σ` with `h^ab σ_b = v^a`, treating singular values below 1e-10 as zero.
pub fn solve_spatial_covector(h: &[[f64; 4]; 4], v: &[f64; 4]) -> ([f64; 4], f64) {
    let m = Matrix4::from_fn(|i, j| h[i][j]);
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let rhs = Vector4::from_column_slice(v);
    let mut sigma = Vector4::zeros();
    for k in 0..4 {
        let s = svd.singular_values[k];
        if s > 1e-10 {
            let coef = u.column(k).dot(&rhs) / s;
            sigma += vt.row(k).transpose() * coef;
        }
    }
    let residual = (m * sigma - rhs).amax();
    ([sigma[0], sigma[1], sigma[2], sigma[3]], residual)
}

pub fn classify_vector(
    st: &ClassicalSpacetime,
    e: &Event,
    v: &Tensor,
) -> Result<Classification, SpacetimeError> {
    if v.valence() != Valence::VECTOR {
        return Err(SpacetimeError::NotAVector(v.valence()));
    }
    let v = v.as_array4();
    let t = st.t_at(e)?;
    let tv: f64 = (0..4).map(|a| t[a] * v[a]).sum();
    let tau = st.tolerance();
    if tv.abs() > tau {
        return Ok(Classification {
            kind: VectorKind::Timelike,
            temporal_length: tv.abs(),
            spatial_length: None,
        });
    }
    let h = st.h_at(e)?;
    let (sigma, residual) = solve_spatial_covector(&h, &v);
    if residual > tau {
        return Err(SpacetimeError::NotInSpatialRange { residual });
    }
    Ok(Classification {
        kind: VectorKind::Spacelike,
        temporal_length: tv.abs(),
        spatial_length: Some(spatial_length_from_covector(&h, &sigma)),
    })
}
