//! Geometrization and recovery between flat-plus-potential and curved
//! Newtonian gravitation, and flat operators that agree with a curved one
//! along a timelike curve.

use std::sync::Arc;

use crate::error::TrautmanError;
use crate::field::{Backend, BoundingBox};
use crate::geodesics::WorldLine;
use crate::potential::{GeometrizedConnection, Potential};
use crate::quadrature::simpson;
use crate::sampling::Region;
use crate::spacetime::{
    Christoffel, ChristoffelDerivative, ClassicalSpacetime, ConnectionField, CurvaturePoint,
    DerivativeOperator, ScalarFn, ADAPTED_H, ADAPTED_T, TAU_P, ZERO_CHRISTOFFEL,
};
use crate::tensor::Event;

/// Number of sample events used for the internal precondition checks.
const CHECK_SAMPLES: usize = 200;

/// Sample events kept far enough from the region's faces for difference stencils.
fn check_events(region: &Region) -> Vec<Event> {
    let margin = 3e-3 * region.bbox.finite_extent().unwrap_or(1.0);
    region.samples(CHECK_SAMPLES, margin)
}

/// Flat spacetime, a potential and the density it is sourced by.
#[derive(Clone)]
pub struct NewtonianModel {
    pub spacetime: ClassicalSpacetime,
    pub potential: Arc<dyn Potential>,
    pub density: ScalarFn,
    pub region: Region,
}

impl std::fmt::Debug for NewtonianModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NewtonianModel")
            .field("potential", &self.potential.describe())
            .field("region", &self.region)
            .finish()
    }
}

impl NewtonianModel {
    /// Coordinate operator over the region's box, density from Poisson's equation.
    pub fn new(potential: Arc<dyn Potential>, region: Region) -> Self {
        let p = potential.clone();
        NewtonianModel {
            spacetime: ClassicalSpacetime::flat(region.bbox),
            potential,
            density: Arc::new(move |e| p.poisson_density(e)),
            region,
        }
    }

    pub fn with_density(mut self, density: ScalarFn) -> Self {
        self.density = density;
        self
    }

    /// `sup |∇²φ − 4πρ|` over the given events.
    pub fn poisson_residual(&self, events: &[Event]) -> f64 {
        let four_pi = 4.0 * std::f64::consts::PI;
        events
            .iter()
            .map(|e| (self.potential.laplacian(e) - four_pi * (self.density)(e)).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_samples(&self) -> Vec<Event> {
        check_events(&self.region)
    }
}

/// A curved classical spacetime together with its matter density.
#[derive(Clone)]
pub struct GeometrizedModel {
    pub spacetime: ClassicalSpacetime,
    pub density: ScalarFn,
    pub region: Region,
}

impl std::fmt::Debug for GeometrizedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeometrizedModel")
            .field("spacetime", &self.spacetime)
            .field("region", &self.region)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcReport {
    pub cc1: f64,
    pub cc2: f64,
    pub cc3: f64,
}

impl CcReport {
    pub fn max(&self) -> f64 {
        self.cc1.max(self.cc2).max(self.cc3)
    }
}

impl GeometrizedModel {
    pub fn cc_report(&self, events: &[Event]) -> Result<CcReport, TrautmanError> {
        let rep = self.spacetime.curvature(events, Some(&self.density))?;
        Ok(CcReport {
            cc1: rep.cc1.unwrap_or(0.0),
            cc2: rep.cc2,
            cc3: rep.newtonian,
        })
    }
}

/// Difference field `C^a_bc = −t_b t_c ∇^a φ` added to the model's flat operator.
pub fn geometrize(m: &NewtonianModel) -> Result<GeometrizedModel, TrautmanError> {
    let residual = m.poisson_residual(&m.check_samples());
    if !(residual < TAU_P) {
        return Err(TrautmanError::PoissonViolated {
            residual,
            threshold: TAU_P,
        });
    }
    let c = Arc::new(GeometrizedConnection::new(
        m.potential.clone(),
        m.spacetime.op.bounds(),
    ));
    let op = m.spacetime.op.compose(c)?;
    Ok(GeometrizedModel {
        spacetime: m.spacetime.with_operator(op),
        density: m.density.clone(),
        region: m.region,
    })
}

/// Potential reconstructed from a curved operator's acceleration field
/// `a^b = ∂_b φ = −C^b_00`, normalised by `φ(anchor) = 0` on every slice.
pub struct RecoveredPotential {
    op: DerivativeOperator,
    anchor: [f64; 3],
}

impl RecoveredPotential {
    fn acceleration(&self, e: &Event) -> [f64; 3] {
        let c = self.op.christoffel(e);
        [-c[1][0][0], -c[2][0][0], -c[3][0][0]]
    }
}

impl Potential for RecoveredPotential {
    /// Line integral of `a` along the x, then y, then z legs from the anchor.
    fn value(&self, e: &Event) -> f64 {
        let t = e.time();
        let target = e.spatial();
        let mut start = self.anchor;
        let mut total = 0.0;
        for axis in 0..3 {
            let len = target[axis] - start[axis];
            if len != 0.0 {
                let intervals = 2 * ((len.abs() / 0.04).ceil() as usize).max(4);
                let base = start;
                total += simpson(
                    |s| {
                        let mut p = base;
                        p[axis] = s;
                        self.acceleration(&Event::from_parts(t, p))[axis]
                    },
                    start[axis],
                    target[axis],
                    intervals,
                );
            }
            start[axis] = target[axis];
        }
        total
    }

    fn gradient(&self, e: &Event) -> [f64; 3] {
        self.acceleration(e)
    }

    fn hessian(&self, e: &Event) -> [[f64; 4]; 3] {
        match self.op.christoffel_derivative(e) {
            Ok(d) => {
                let mut h = [[0.0; 4]; 3];
                for (i, row) in h.iter_mut().enumerate() {
                    for (m, v) in row.iter_mut().enumerate() {
                        *v = -d[m][i + 1][0][0];
                    }
                }
                h
            }
            Err(_) => [[f64::NAN; 4]; 3],
        }
    }

    fn describe(&self) -> String {
        format!("recovered anchor={:?}", self.anchor)
    }
}

/// Inverse of [`geometrize`] with the gauge `φ(anchor) = 0` and the
/// adapted-chart flat operator as reference.
pub fn recover(g: &GeometrizedModel, anchor: &Event) -> Result<NewtonianModel, TrautmanError> {
    if !g.region.contains(anchor) {
        return Err(TrautmanError::AnchorOutside(*anchor));
    }
    let events = check_events(&g.region);
    let cc = g.cc_report(&events)?;
    if !(cc.max() < TAU_P) {
        return Err(TrautmanError::CurvatureConditions {
            cc1: cc.cc1,
            cc2: cc.cc2,
            cc3: cc.cc3,
            threshold: TAU_P,
        });
    }
    let op = &g.spacetime.op;
    let mut curl: f64 = 0.0;
    for e in &events {
        let d = op.christoffel_derivative(e)?;
        for i in 1..4 {
            for j in 1..4 {
                curl = curl.max((d[j][i][0][0] - d[i][j][0][0]).abs());
            }
        }
    }
    if !(curl < TAU_P) {
        return Err(TrautmanError::CurlNonzero { residual: curl });
    }
    let potential: Arc<dyn Potential> = Arc::new(RecoveredPotential {
        op: op.clone(),
        anchor: anchor.spatial(),
    });
    let flat = op.compose_scaled(
        Arc::new(GeometrizedConnection::new(potential.clone(), op.bounds())),
        -1.0,
    )?;
    let flatness = crate::spacetime::riemann(&flat, &events)?.flatness;
    if !(flatness < TAU_P) {
        return Err(TrautmanError::RecoveredNotFlat { residual: flatness });
    }
    Ok(NewtonianModel {
        spacetime: g.spacetime.with_operator(flat),
        potential,
        density: g.density.clone(),
        region: g.region,
    })
}

/// Spatial metric lowered relative to the adapted unit timelike field.
const ADAPTED_H_LOWER: [[f64; 4]; 4] = ADAPTED_H;

/// `C¹^a_bc = h^am (t_b κ_cm + t_c κ_bm)` with
/// `κ_ab = ½ (ĥ_nb ∇_a η^n − ĥ_na ∇_b η^n)` and `∇_a η^n = −C^n_a0` for
/// `η = (1,0,0,0)`. Linear in `C`, so it also maps derivatives of `C`.
fn rigid_correction(c: &Christoffel) -> Christoffel {
    let mut nabla_eta = [[0.0; 4]; 4];
    for (a, row) in nabla_eta.iter_mut().enumerate() {
        for (n, v) in row.iter_mut().enumerate() {
            *v = -c[n][a][0];
        }
    }
    let mut kappa = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let mut s = 0.0;
            for n in 0..4 {
                s += ADAPTED_H_LOWER[n][b] * nabla_eta[a][n] - ADAPTED_H_LOWER[n][a] * nabla_eta[b][n];
            }
            kappa[a][b] = 0.5 * s;
        }
    }
    let t = ADAPTED_T;
    let mut out = ZERO_CHRISTOFFEL;
    for a in 0..4 {
        for b in 0..4 {
            for cc in 0..4 {
                let mut s = 0.0;
                for m in 0..4 {
                    s += ADAPTED_H[a][m] * (t[b] * kappa[cc][m] + t[cc] * kappa[b][m]);
                }
                out[a][b][cc] = s;
            }
        }
    }
    out
}

struct FlatOnCurve {
    base: DerivativeOperator,
    curve: WorldLine,
    span: (f64, f64),
}

impl FlatOnCurve {
    fn curve_point(&self, t: f64) -> (Event, [f64; 4], bool) {
        let clamped = t.clamp(self.span.0, self.span.1);
        let inside = clamped == t;
        let (x, v) = self.curve.at_time(clamped).expect("time clamped into span");
        (Event::from_parts(clamped, x), [1.0, v[0], v[1], v[2]], inside)
    }

    /// `ψ^a(t) = −C¹^a_00` evaluated on the curve at time `t`.
    fn psi(&self, t: f64) -> [f64; 4] {
        let (p, _, _) = self.curve_point(t);
        let c1 = rigid_correction(&self.base.christoffel(&p));
        [0, 1, 2, 3].map(|a| -c1[a][0][0])
    }
}

impl ConnectionField for FlatOnCurve {
    fn bounds(&self) -> BoundingBox {
        self.base.bounds()
    }

    fn backend(&self) -> Backend {
        self.base.backend()
    }

    fn eval(&self, e: &Event) -> Christoffel {
        let c = self.base.christoffel(e);
        let c1 = rigid_correction(&c);
        let psi = self.psi(e.time());
        let mut out = c;
        for a in 0..4 {
            for b in 0..4 {
                for k in 0..4 {
                    out[a][b][k] += c1[a][b][k];
                }
            }
            out[a][0][0] += psi[a];
        }
        out
    }

    fn derivative(&self, e: &Event) -> Option<ChristoffelDerivative> {
        let d = self.base.connection().derivative(e)?;
        let mut out = [ZERO_CHRISTOFFEL; 4];
        for m in 0..4 {
            let c1 = rigid_correction(&d[m]);
            for a in 0..4 {
                for b in 0..4 {
                    for k in 0..4 {
                        out[m][a][b][k] = d[m][a][b][k] + c1[a][b][k];
                    }
                }
            }
        }
        let (p, vel, inside) = self.curve_point(e.time());
        if inside {
            let dp = self.base.connection().derivative(&p)?;
            for a in 0..4 {
                let mut s = 0.0;
                for (n, vn) in vel.iter().enumerate() {
                    s += rigid_correction(&dp[n])[a][0][0] * vn;
                }
                out[0][a][0][0] -= s;
            }
        }
        Some(out)
    }
}

/// A flat, compatible operator that agrees with `st.op` along `γ`.
///
/// Times outside the curve's span use the nearest end of the curve.
pub fn flat_operator_on_curve(
    st: &ClassicalSpacetime,
    gamma: &WorldLine,
) -> Result<DerivativeOperator, TrautmanError> {
    let curve = gamma.time_normalized()?;
    let samples = curve.samples();
    let stride = (samples.len() / CHECK_SAMPLES).max(1);
    let mut spatial: f64 = 0.0;
    for smp in samples.iter().step_by(stride) {
        let p = CurvaturePoint::new(&st.op, &smp.event)?;
        let r = p.half_raised(&ADAPTED_H);
        spatial = spatial.max(
            r.iter()
                .flatten()
                .flatten()
                .flatten()
                .fold(0.0, |m: f64, v| m.max(v.abs())),
        );
    }
    if !(spatial < TAU_P) {
        return Err(TrautmanError::SpatialCurvature { residual: spatial });
    }
    let span = (curve.first().event.time(), curve.last().event.time());
    let field = FlatOnCurve {
        base: st.op.clone(),
        curve,
        span,
    };
    Ok(DerivativeOperator::from_connection(Arc::new(field))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::{integrate_geodesic, Parametrization, Sample};
    use crate::potential::{Harmonic, PointMass, ZeroPotential};
    use crate::sampling::Shell;
    use crate::tensor::Tensor;

    fn trap_region() -> Region {
        Region::boxed(BoundingBox::new([0.0, -1.0, -1.0, -1.0], [1.0, 1.0, 1.0, 1.0]))
    }

    #[test]
    fn vacuum_geometrizes_to_itself() {
        let m = NewtonianModel::new(Arc::new(ZeroPotential), trap_region());
        let g = geometrize(&m).unwrap();
        let ev = trap_region().samples(50, 0.0);
        assert_eq!(g.spacetime.op.max_difference(&m.spacetime.op, &ev), 0.0);
    }

    #[test]
    fn inconsistent_density_is_refused() {
        let m = NewtonianModel::new(Arc::new(Harmonic { k: 1.0, center: [0.0; 3] }), trap_region())
            .with_density(Arc::new(|_| 0.0));
        assert!(matches!(geometrize(&m), Err(TrautmanError::PoissonViolated { .. })));
    }

    #[test]
    fn harmonic_round_trip() {
        let phi: Arc<dyn Potential> = Arc::new(Harmonic { k: 1.0, center: [0.0; 3] });
        let m = NewtonianModel::new(phi.clone(), trap_region());
        let g = geometrize(&m).unwrap();
        let anchor = Event::new(0.5, 0.0, 0.0, 0.0);
        let back = recover(&g, &anchor).unwrap();
        let ev = trap_region().samples(200, 0.0);
        let offset = back.potential.value(&anchor) - phi.value(&anchor);
        let worst = ev
            .iter()
            .map(|e| (back.potential.value(e) - phi.value(e) - offset).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
        let again = geometrize(&back).unwrap();
        assert!(again.spacetime.op.max_difference(&g.spacetime.op, &ev) < 1e-8);
    }

    #[test]
    fn curl_is_detected() {
        // C^1_00 = −y, C^2_00 = 0: a = (y, 0, 0) has curl.
        struct Swirl;
        impl ConnectionField for Swirl {
            fn bounds(&self) -> BoundingBox {
                BoundingBox::new([0.0, -1.0, -1.0, -1.0], [1.0, 1.0, 1.0, 1.0])
            }
            fn backend(&self) -> Backend {
                Backend::Analytic
            }
            fn eval(&self, e: &Event) -> Christoffel {
                let mut c = ZERO_CHRISTOFFEL;
                c[1][0][0] = -e.0[2];
                c
            }
        }
        let op = DerivativeOperator::from_connection(Arc::new(Swirl)).unwrap();
        let g = GeometrizedModel {
            spacetime: ClassicalSpacetime::adapted(op),
            density: Arc::new(|_| 0.0),
            region: trap_region(),
        };
        let r = recover(&g, &Event::new(0.5, 0.0, 0.0, 0.0));
        // the swirl also breaks CC2, which is checked first
        assert!(matches!(
            r,
            Err(TrautmanError::CurvatureConditions { .. }) | Err(TrautmanError::CurlNonzero { .. })
        ));
    }

    #[test]
    fn flat_input_gives_same_operator() {
        let st = ClassicalSpacetime::flat(BoundingBox::slab(0.0, 2.0, 3.0));
        let gamma = integrate_geodesic(
            &st.op,
            &Event::new(0.0, 0.1, 0.0, 0.0),
            &Tensor::vector([1.0, 0.2, 0.0, 0.1]),
            1.5,
            1e-10,
        )
        .unwrap();
        let f = flat_operator_on_curve(&st, &gamma).unwrap();
        let ev = Region::boxed(st.op.bounds()).samples(100, 0.0);
        assert!(f.max_difference(&st.op, &ev) < 1e-10);
    }

    #[test]
    fn re_entering_curve_is_refused() {
        let st = ClassicalSpacetime::flat(BoundingBox::slab(-2.0, 2.0, 3.0));
        let mk = |s: f64, t: f64| Sample {
            s,
            event: Event::new(t, 0.0, 0.0, 0.0),
            tangent: [1.0, 0.0, 0.0, 0.0],
        };
        let w = WorldLine::new(vec![mk(0.0, 0.0), mk(1.0, 0.5), mk(2.0, 0.2)], Parametrization::General).unwrap();
        assert!(flat_operator_on_curve(&st, &w).is_err());
    }

    #[test]
    fn point_mass_curve_operator_agrees_on_curve() {
        let region = Region::shell(0.0, 7.0, Shell { center: [0.0; 3], r_min: 0.5, r_max: 2.0 });
        let m = NewtonianModel::new(Arc::new(PointMass { mass: 1.0, center: [0.0; 3] }), region);
        let g = geometrize(&m).unwrap();
        let gamma = integrate_geodesic(
            &g.spacetime.op,
            &Event::new(0.0, 1.0, 0.0, 0.0),
            &Tensor::vector([1.0, 0.0, 1.0, 0.0]),
            6.0,
            1e-10,
        )
        .unwrap();
        let f = flat_operator_on_curve(&g.spacetime, &gamma).unwrap();
        let on_curve = gamma
            .samples()
            .iter()
            .map(|s| crate::spacetime::christoffel_max_diff(&f.christoffel(&s.event), &g.spacetime.op.christoffel(&s.event)))
            .fold(0.0, f64::max);
        assert!(on_curve < 1e-6, "{on_curve}");
        let ev = region.samples(200, 0.05);
        let rep = crate::spacetime::riemann(&f, &ev).unwrap();
        assert!(rep.flatness < 1e-6, "{}", rep.flatness);
        let comp = g.spacetime.with_operator(f).compatibility(&ev).unwrap();
        assert!(comp.max() < 1e-6);
    }
}
