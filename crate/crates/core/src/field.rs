//! Tensor fields over the chart: closed-form evaluators and lattice samples.

use std::sync::Arc;

use crate::error::FieldError;
use crate::tensor::{Event, Tensor, Valence, DIM};

/// Axis-aligned box in the chart. Infinite extents are allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl BoundingBox {
    pub fn new(lo: [f64; 4], hi: [f64; 4]) -> Self {
        BoundingBox { lo, hi }
    }

    pub fn everywhere() -> Self {
        BoundingBox {
            lo: [f64::NEG_INFINITY; 4],
            hi: [f64::INFINITY; 4],
        }
    }

    /// `[t0, t1] × [-half, half]³`.
    pub fn slab(t0: f64, t1: f64, half: f64) -> Self {
        BoundingBox {
            lo: [t0, -half, -half, -half],
            hi: [t1, half, half, half],
        }
    }

    pub fn contains(&self, e: &Event) -> bool {
        (0..DIM).all(|k| e.0[k] >= self.lo[k] && e.0[k] <= self.hi[k])
    }

    pub fn intersect(&self, other: &BoundingBox) -> BoundingBox {
        let mut lo = [0.0; 4];
        let mut hi = [0.0; 4];
        for k in 0..DIM {
            lo[k] = self.lo[k].max(other.lo[k]);
            hi[k] = self.hi[k].min(other.hi[k]);
        }
        BoundingBox { lo, hi }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Largest finite extent, or `None` if every axis is unbounded.
    pub fn finite_extent(&self) -> Option<f64> {
        (0..DIM)
            .map(|k| self.extent(k))
            .filter(|e| e.is_finite())
            .reduce(f64::max)
    }

    /// Whether the four-point stencil of the given step fits on every axis.
    pub fn contains_stencil(&self, e: &Event, step: f64) -> bool {
        (0..DIM).all(|k| e.0[k] - 2.0 * step >= self.lo[k] && e.0[k] + 2.0 * step <= self.hi[k])
    }

    pub fn shrunk(&self, margin: f64) -> BoundingBox {
        let mut out = *self;
        for k in 0..DIM {
            out.lo[k] += margin;
            out.hi[k] -= margin;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backend {
    Analytic,
    Grid { spacing: [f64; 4] },
}

impl Backend {
    pub fn is_analytic(&self) -> bool {
        matches!(self, Backend::Analytic)
    }

    /// Combined backend of a sum of fields: grid wins, with the coarsest spacing.
    pub fn combine(self, other: Backend) -> Backend {
        match (self, other) {
            (Backend::Analytic, b) | (b, Backend::Analytic) => b,
            (Backend::Grid { spacing: a }, Backend::Grid { spacing: b }) => {
                let mut s = [0.0; 4];
                for k in 0..4 {
                    s[k] = a[k].max(b[k]);
                }
                Backend::Grid { spacing: s }
            }
        }
    }
}

pub trait TensorField: Send + Sync {
    fn valence(&self) -> Valence;
    fn bounds(&self) -> BoundingBox;
    fn backend(&self) -> Backend;
    fn eval(&self, e: &Event) -> Result<Tensor, FieldError>;

    /// Exact coordinate derivative in the layout of [`partial_derivative`], if known.
    fn exact_derivative(&self, _e: &Event) -> Option<Tensor> {
        None
    }

    /// Default finite difference step.
    fn default_step(&self) -> f64 {
        default_step_for(&self.bounds(), self.backend())
    }
}

pub(crate) fn default_step_for(bounds: &BoundingBox, backend: Backend) -> f64 {
    match backend {
        Backend::Analytic => 1e-3 * bounds.finite_extent().unwrap_or(1.0),
        Backend::Grid { spacing } => 0.25 * spacing.iter().cloned().fold(f64::INFINITY, f64::min),
    }
}

type Evaluator = dyn Fn(&Event) -> Tensor + Send + Sync;

/// A field given by a closed-form evaluator.
#[derive(Clone)]
pub struct AnalyticField {
    valence: Valence,
    bounds: BoundingBox,
    eval: Arc<Evaluator>,
    derivative: Option<Arc<Evaluator>>,
}

impl AnalyticField {
    pub fn new<F>(valence: Valence, bounds: BoundingBox, f: F) -> Self
    where
        F: Fn(&Event) -> Tensor + Send + Sync + 'static,
    {
        AnalyticField {
            valence,
            bounds,
            eval: Arc::new(f),
            derivative: None,
        }
    }

    /// Attaches an exact derivative, laid out as [`partial_derivative`] returns it.
    pub fn with_derivative<F>(mut self, d: F) -> Self
    where
        F: Fn(&Event) -> Tensor + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn scalar<F>(bounds: BoundingBox, f: F) -> Self
    where
        F: Fn(&Event) -> f64 + Send + Sync + 'static,
    {
        AnalyticField::new(Valence::SCALAR, bounds, move |e| Tensor::scalar(f(e)))
    }

    pub fn constant(value: Tensor, bounds: BoundingBox) -> Self {
        let v = value.valence();
        let zero = Tensor::zeros(Valence::new(v.up, v.down + 1)).expect("constant field rank");
        let value = Arc::new(value);
        AnalyticField::new(v, bounds, move |_| (*value).clone()).with_derivative(move |_| zero.clone())
    }
}

impl TensorField for AnalyticField {
    fn valence(&self) -> Valence {
        self.valence
    }

    fn bounds(&self) -> BoundingBox {
        self.bounds
    }

    fn backend(&self) -> Backend {
        Backend::Analytic
    }

    fn eval(&self, e: &Event) -> Result<Tensor, FieldError> {
        if !self.bounds.contains(e) {
            return Err(FieldError::OutsideBounds { event: *e });
        }
        Ok((self.eval)(e))
    }

    fn exact_derivative(&self, e: &Event) -> Option<Tensor> {
        self.derivative.as_ref().map(|d| d(e))
    }
}

/// Samples on a uniform 4D lattice with tensor-product cubic interpolation.
#[derive(Clone, Debug)]
pub struct GridField {
    valence: Valence,
    origin: [f64; 4],
    spacing: [f64; 4],
    counts: [usize; 4],
    data: Vec<f64>,
}

impl GridField {
    /// Samples `f` at `origin + k * spacing` for `k < counts` on every axis.
    pub fn sample<F>(
        valence: Valence,
        origin: [f64; 4],
        spacing: [f64; 4],
        counts: [usize; 4],
        f: F,
    ) -> Result<Self, FieldError>
    where
        F: Fn(&Event) -> Tensor,
    {
        if counts.iter().any(|&n| n < 4) || spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(FieldError::InvalidGrid);
        }
        let ncomp = valence.len();
        let total: usize = counts.iter().product();
        let mut data = Vec::with_capacity(total * ncomp);
        for i0 in 0..counts[0] {
            for i1 in 0..counts[1] {
                for i2 in 0..counts[2] {
                    for i3 in 0..counts[3] {
                        let e = Event([
                            origin[0] + i0 as f64 * spacing[0],
                            origin[1] + i1 as f64 * spacing[1],
                            origin[2] + i2 as f64 * spacing[2],
                            origin[3] + i3 as f64 * spacing[3],
                        ]);
                        let t = f(&e);
                        if t.valence() != valence {
                            return Err(crate::error::TensorError::ValenceMismatch {
                                expected: valence,
                                found: t.valence(),
                            }
                            .into());
                        }
                        data.extend_from_slice(t.components());
                    }
                }
            }
        }
        Ok(GridField {
            valence,
            origin,
            spacing,
            counts,
            data,
        })
    }

    pub fn spacing(&self) -> [f64; 4] {
        self.spacing
    }

    pub fn counts(&self) -> [usize; 4] {
        self.counts
    }

    /// Writes one row per lattice node: the event coordinates then the components.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let ncomp = self.valence.len();
        write!(w, "t,x,y,z")?;
        for c in 0..ncomp {
            write!(w, ",c{c}")?;
        }
        writeln!(w)?;
        let mut node = 0;
        for i0 in 0..self.counts[0] {
            for i1 in 0..self.counts[1] {
                for i2 in 0..self.counts[2] {
                    for i3 in 0..self.counts[3] {
                        let idx = [i0, i1, i2, i3];
                        for k in 0..4 {
                            if k > 0 {
                                write!(w, ",")?;
                            }
                            write!(w, "{}", self.origin[k] + idx[k] as f64 * self.spacing[k])?;
                        }
                        for v in &self.data[node * ncomp..(node + 1) * ncomp] {
                            write!(w, ",{v}")?;
                        }
                        writeln!(w)?;
                        node += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Four-point Lagrange weights and stencil start for coordinate `x` on a lattice
/// of `n` nodes starting at `x0` with spacing `h`.
pub(crate) fn cubic_stencil(x: f64, x0: f64, h: f64, n: usize) -> (usize, [f64; 4]) {
    let u = (x - x0) / h;
    let cell = u.floor() as isize;
    let start = (cell - 1).clamp(0, n as isize - 4) as usize;
    let s = u - start as f64;
    (start, lagrange4(s))
}

/// Weights of the cubic through nodes 0, 1, 2, 3 evaluated at `s`.
pub(crate) fn lagrange4(s: f64) -> [f64; 4] {
    let a = s;
    let b = s - 1.0;
    let c = s - 2.0;
    let d = s - 3.0;
    [
        -b * c * d / 6.0,
        a * c * d / 2.0,
        -a * b * d / 2.0,
        a * b * c / 6.0,
    ]
}

impl TensorField for GridField {
    fn valence(&self) -> Valence {
        self.valence
    }

    fn bounds(&self) -> BoundingBox {
        let mut hi = [0.0; 4];
        for k in 0..4 {
            hi[k] = self.origin[k] + (self.counts[k] - 1) as f64 * self.spacing[k];
        }
        BoundingBox::new(self.origin, hi)
    }

    fn backend(&self) -> Backend {
        Backend::Grid {
            spacing: self.spacing,
        }
    }

    fn eval(&self, e: &Event) -> Result<Tensor, FieldError> {
        if !self.bounds().contains(e) {
            return Err(FieldError::OutsideBounds { event: *e });
        }
        let ncomp = self.valence.len();
        let mut starts = [0usize; 4];
        let mut weights = [[0.0; 4]; 4];
        for k in 0..4 {
            let (s, w) = cubic_stencil(e.0[k], self.origin[k], self.spacing[k], self.counts[k]);
            starts[k] = s;
            weights[k] = w;
        }
        let strides = [
            self.counts[1] * self.counts[2] * self.counts[3],
            self.counts[2] * self.counts[3],
            self.counts[3],
            1,
        ];
        let mut out = vec![0.0; ncomp];
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let wabc = weights[0][a] * weights[1][b] * weights[2][c];
                    if wabc == 0.0 {
                        continue;
                    }
                    for d in 0..4 {
                        let w = wabc * weights[3][d];
                        let node = (starts[0] + a) * strides[0]
                            + (starts[1] + b) * strides[1]
                            + (starts[2] + c) * strides[2]
                            + (starts[3] + d);
                        let src = &self.data[node * ncomp..(node + 1) * ncomp];
                        for (o, v) in out.iter_mut().zip(src) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_components(self.valence, out)?)
    }
}

/// Coordinate derivative by the fourth-order central stencil. The result has
/// valence `(r, s + 1)` with the new covariant slot first among the covariant
/// slots.
pub fn partial_derivative(
    f: &dyn TensorField,
    e: &Event,
    step: f64,
) -> Result<Tensor, FieldError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(FieldError::InvalidStep(step));
    }
    if !f.bounds().contains_stencil(e, step) {
        return Err(FieldError::StencilOutsideBounds { event: *e, step });
    }
    let mut per_axis: Vec<Tensor> = Vec::with_capacity(DIM);
    for axis in 0..DIM {
        let p2 = f.eval(&e.shifted(axis, 2.0 * step))?;
        let p1 = f.eval(&e.shifted(axis, step))?;
        let m1 = f.eval(&e.shifted(axis, -step))?;
        let m2 = f.eval(&e.shifted(axis, -2.0 * step))?;
        let d: Vec<f64> = (0..p1.components().len())
            .map(|i| {
                (-p2.components()[i] + 8.0 * p1.components()[i] - 8.0 * m1.components()[i]
                    + m2.components()[i])
                    / (12.0 * step)
            })
            .collect();
        per_axis.push(Tensor::from_components(f.valence(), d)?);
    }
    interleave_derivative(f.valence(), &per_axis)
}

/// Coordinate derivative using the exact form when the field provides one,
/// otherwise the stencil with the field's default step.
pub fn derivative(f: &dyn TensorField, e: &Event) -> Result<Tensor, FieldError> {
    if let Some(d) = f.exact_derivative(e) {
        return Ok(d);
    }
    partial_derivative(f, e, f.default_step())
}

/// Assembles `∂_a f` from the four per-axis derivatives.
pub fn interleave_derivative(valence: Valence, per_axis: &[Tensor]) -> Result<Tensor, FieldError> {
    let out_valence = Valence::new(valence.up, valence.down + 1);
    let down_len = DIM.pow(valence.down as u32);
    let mut out = Tensor::zeros(out_valence)?;
    let data = out.components_mut();
    for (axis, d) in per_axis.iter().enumerate() {
        for (lin, v) in d.components().iter().enumerate() {
            let up = lin / down_len;
            let down = lin % down_len;
            data[(up * DIM + axis) * down_len + down] = *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_field<F: Fn(&Event) -> f64 + Send + Sync + 'static>(f: F) -> AnalyticField {
        AnalyticField::scalar(BoundingBox::slab(-10.0, 10.0, 10.0), f)
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let f = AnalyticField::new(
            Valence::new(1, 1),
            BoundingBox::slab(-1.0, 1.0, 1.0),
            |_| Tensor::identity(),
        );
        let d = partial_derivative(&f, &Event::new(0.0, 0.1, 0.2, 0.3), 0.01).unwrap();
        assert_eq!(d.valence(), Valence::new(1, 2));
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn quadratic_is_exact() {
        let f = scalar_field(|e| e.0[1] * e.0[1]);
        let d = partial_derivative(&f, &Event::new(0.0, 3.0, 0.0, 0.0), 0.1).unwrap();
        let want = [0.0, 6.0, 0.0, 0.0];
        for k in 0..4 {
            assert!((d.components()[k] - want[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn sine_matches_cosine() {
        let f = scalar_field(|e| e.0[1].sin());
        let d = partial_derivative(&f, &Event::new(0.0, 0.0, 0.0, 0.0), 0.05).unwrap();
        assert!((d.components()[1] - 1.0).abs() < 1e-6);
        assert_eq!(d.components()[0], 0.0);
    }

    #[test]
    fn stencil_outside_box_is_an_error() {
        let f = AnalyticField::scalar(BoundingBox::slab(0.0, 1.0, 1.0), |e| e.0[1]);
        let r = partial_derivative(&f, &Event::new(0.5, 0.95, 0.0, 0.0), 0.1);
        assert!(matches!(r, Err(FieldError::StencilOutsideBounds { .. })));
    }

    #[test]
    fn stencil_error_is_fourth_order() {
        for (name, f, exact) in [
            (
                "sin",
                scalar_field(|e| (1.3 * e.0[2]).sin()),
                1.3 * (1.3f64 * 0.4).cos(),
            ),
            (
                "exp",
                scalar_field(|e| (0.7 * e.0[2]).exp()),
                0.7 * (0.7f64 * 0.4).exp(),
            ),
        ] {
            let e = Event::new(0.0, 0.0, 0.4, 0.0);
            let err = |h: f64| (partial_derivative(&f, &e, h).unwrap().components()[2] - exact).abs();
            let ratio = err(0.2) / err(0.1);
            assert!(ratio >= 12.0, "{name}: ratio {ratio}");
        }
    }

    #[test]
    fn derivative_slot_layout() {
        // f^a = (0, x y, 0, 0): ∂_b f^a has ups [a], downs [b].
        let f = AnalyticField::new(Valence::VECTOR, BoundingBox::slab(-2.0, 2.0, 2.0), |e| {
            Tensor::vector([0.0, e.0[1] * e.0[2], 0.0, 0.0])
        });
        let d = partial_derivative(&f, &Event::new(0.0, 0.5, 2.0 / 3.0, 0.0), 0.01).unwrap();
        assert!((d.get(&[1, 1]) - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.get(&[1, 2]) - 0.5).abs() < 1e-12);
        assert!(d.get(&[2, 1]).abs() < 1e-12);
    }

    #[test]
    fn grid_reproduces_cubics() {
        let cubic = |e: &Event| e.0[1].powi(3) - 2.0 * e.0[2] * e.0[0] + e.0[3];
        let g = GridField::sample(
            Valence::SCALAR,
            [0.0, -1.0, -1.0, -1.0],
            [0.25, 0.25, 0.25, 0.25],
            [5, 9, 9, 9],
            |e| Tensor::scalar(cubic(e)),
        )
        .unwrap();
        for e in [
            Event::new(0.33, 0.12, -0.71, 0.5),
            Event::new(0.9, -0.99, 0.99, 0.0),
        ] {
            let v = g.eval(&e).unwrap().as_scalar();
            assert!((v - cubic(&e)).abs() < 1e-12, "{v}");
        }
        assert!(matches!(
            g.eval(&Event::new(2.0, 0.0, 0.0, 0.0)),
            Err(FieldError::OutsideBounds { .. })
        ));
    }

    #[test]
    fn grid_default_step_follows_spacing() {
        let g = GridField::sample(
            Valence::SCALAR,
            [0.0; 4],
            [0.1, 0.2, 0.2, 0.2],
            [4, 4, 4, 4],
            |_| Tensor::scalar(1.0),
        )
        .unwrap();
        assert!((g.default_step() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn lagrange_weights_partition_unity() {
        for s in [0.0, 0.3, 1.7, 2.5] {
            let v: f64 = lagrange4(s).iter().sum();
            assert!((v - 1.0).abs() < 1e-14);
        }
    }
}
