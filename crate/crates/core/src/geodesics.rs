//! Geodesics, forced trajectories and sampled world lines.

use std::io::Write;

use crate::error::GeodesicError;
use crate::field::BoundingBox;
use crate::potential::Potential;
use crate::spacetime::{contract_christoffel, DerivativeOperator, ADAPTED_T};
use crate::tensor::{Event, Tensor, Valence};

/// Threshold on `|t_a ξ^a|` for calling a tangent timelike.
pub const TIMELIKE_THRESHOLD: f64 = 1e-10;

const MIN_STEPS: usize = 16;
const MAX_STEPS: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub s: f64,
    pub event: Event,
    pub tangent: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parametrization {
    Affine,
    /// `t_a ξ^a = 1` and `s` equals coordinate time.
    TimeNormalized,
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldLine {
    samples: Vec<Sample>,
    parametrization: Parametrization,
}

impl WorldLine {
    pub fn new(samples: Vec<Sample>, parametrization: Parametrization) -> Result<Self, GeodesicError> {
        if samples.len() < 2 {
            return Err(GeodesicError::TooFewSamples {
                needed: 2,
                found: samples.len(),
            });
        }
        for i in 1..samples.len() {
            if !(samples[i].s > samples[i - 1].s) {
                return Err(GeodesicError::NonMonotoneParameter { index: i });
            }
        }
        Ok(WorldLine {
            samples,
            parametrization,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn parametrization(&self) -> Parametrization {
        self.parametrization
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        &self.samples[self.samples.len() - 1]
    }

    /// Checks that every tangent is timelike and coordinate time increases strictly.
    pub fn check_time_monotone(&self) -> Result<(), GeodesicError> {
        for (i, smp) in self.samples.iter().enumerate() {
            if smp.tangent[0].abs() <= TIMELIKE_THRESHOLD {
                return Err(GeodesicError::NotTimelike { index: i });
            }
            if i > 0 && !(smp.event.time() > self.samples[i - 1].event.time()) {
                return Err(GeodesicError::NonMonotoneTime { index: i });
            }
        }
        Ok(())
    }

    /// Reparametrizes by coordinate time, scaling tangents to `t_a ξ^a = 1`.
    pub fn time_normalized(&self) -> Result<WorldLine, GeodesicError> {
        self.check_time_monotone()?;
        let samples = self
            .samples
            .iter()
            .map(|smp| {
                let k = 1.0 / smp.tangent[0];
                Sample {
                    s: smp.event.time(),
                    event: smp.event,
                    tangent: smp.tangent.map(|v| v * k),
                }
            })
            .collect();
        WorldLine::new(samples, Parametrization::TimeNormalized)
    }

    /// Event and tangent at parameter `s` by cubic Hermite interpolation.
    pub fn at_parameter(&self, s: f64) -> Result<(Event, [f64; 4]), GeodesicError> {
        let n = self.samples.len();
        let (s0, s1) = (self.samples[0].s, self.samples[n - 1].s);
        if s < s0 - 1e-12 * (1.0 + s0.abs()) || s > s1 + 1e-12 * (1.0 + s1.abs()) {
            return Err(GeodesicError::TimeOutsideSpan { t: s, t0: s0, t1: s1 });
        }
        let i = self
            .samples
            .partition_point(|smp| smp.s <= s)
            .clamp(1, n - 1);
        let a = &self.samples[i - 1];
        let b = &self.samples[i];
        Ok(hermite(a.s, &a.event.0, &a.tangent, b.s, &b.event.0, &b.tangent, s))
    }

    /// Spatial position and velocity `dx/dt` at coordinate time `t`.
    pub fn at_time(&self, t: f64) -> Result<([f64; 3], [f64; 3]), GeodesicError> {
        let n = self.samples.len();
        let (t0, t1) = (self.samples[0].event.time(), self.samples[n - 1].event.time());
        if t < t0 - 1e-12 * (1.0 + t0.abs()) || t > t1 + 1e-12 * (1.0 + t1.abs()) {
            return Err(GeodesicError::TimeOutsideSpan { t, t0, t1 });
        }
        let i = self
            .samples
            .partition_point(|smp| smp.event.time() <= t)
            .clamp(1, n - 1);
        let a = &self.samples[i - 1];
        let b = &self.samples[i];
        let va = a.tangent.map(|v| v / a.tangent[0]);
        let vb = b.tangent.map(|v| v / b.tangent[0]);
        let (e, v) = hermite(a.event.time(), &a.event.0, &va, b.event.time(), &b.event.0, &vb, t);
        Ok((e.spatial(), [v[1], v[2], v[3]]))
    }

    /// Sup over this curve's samples of the chart distance to `other` at equal parameter.
    pub fn sup_distance(&self, other: &WorldLine) -> Result<f64, GeodesicError> {
        let same_grid = self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.s == b.s);
        let mut worst: f64 = 0.0;
        for (k, smp) in self.samples.iter().enumerate() {
            let e = if same_grid {
                other.samples[k].event
            } else {
                other.at_parameter(smp.s)?.0
            };
            let d = (0..4)
                .map(|i| (smp.event.0[i] - e.0[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        }
        Ok(worst)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s,t,x,y,z,xi0,xi1,xi2,xi3")?;
        for smp in &self.samples {
            let e = smp.event.0;
            let x = smp.tangent;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                smp.s, e[0], e[1], e[2], e[3], x[0], x[1], x[2], x[3]
            )?;
        }
        Ok(())
    }
}

fn hermite(
    s0: f64,
    p0: &[f64; 4],
    m0: &[f64; 4],
    s1: f64,
    p1: &[f64; 4],
    m1: &[f64; 4],
    s: f64,
) -> (Event, [f64; 4]) {
    let h = s1 - s0;
    let u = (s - s0) / h;
    let u2 = u * u;
    let u3 = u2 * u;
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    let d00 = (6.0 * u2 - 6.0 * u) / h;
    let d10 = 3.0 * u2 - 4.0 * u + 1.0;
    let d01 = (-6.0 * u2 + 6.0 * u) / h;
    let d11 = 3.0 * u2 - 2.0 * u;
    let mut p = [0.0; 4];
    let mut v = [0.0; 4];
    for k in 0..4 {
        p[k] = h00 * p0[k] + h10 * h * m0[k] + h01 * p1[k] + h11 * h * m1[k];
        v[k] = d00 * p0[k] + d10 * m0[k] + d01 * p1[k] + d11 * m1[k];
    }
    (Event(p), v)
}

type State = [f64; 8];

fn axpy(y: &State, k: &State, h: f64) -> State {
    let mut out = *y;
    for i in 0..8 {
        out[i] += h * k[i];
    }
    out
}

fn state_event(y: &State) -> Event {
    Event([y[0], y[1], y[2], y[3]])
}

/// Fixed-step classical fourth-order run; returns every step.
fn rk4_run<F>(
    rhs: &F,
    y0: State,
    s_max: f64,
    steps: usize,
    bounds: &BoundingBox,
) -> Result<Vec<(f64, State)>, GeodesicError>
where
    F: Fn(&State) -> State,
{
    let h = s_max / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0;
    out.push((0.0, y));
    for n in 0..steps {
        let s = n as f64 * h;
        let check = |st: &State, s: f64| -> Result<(), GeodesicError> {
            if st.iter().any(|v| !v.is_finite()) {
                return Err(GeodesicError::NonFinite { s });
            }
            if !bounds.contains(&state_event(st)) {
                return Err(GeodesicError::ExitedRegion {
                    s,
                    event: state_event(st),
                });
            }
            Ok(())
        };
        let k1 = rhs(&y);
        let y2 = axpy(&y, &k1, 0.5 * h);
        check(&y2, s)?;
        let k2 = rhs(&y2);
        let y3 = axpy(&y, &k2, 0.5 * h);
        check(&y3, s)?;
        let k3 = rhs(&y3);
        let y4 = axpy(&y, &k3, h);
        check(&y4, s)?;
        let k4 = rhs(&y4);
        for i in 0..8 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check(&y, s + h)?;
        out.push(((n + 1) as f64 * h, y));
    }
    Ok(out)
}

fn to_worldline(run: Vec<(f64, State)>, p: Parametrization) -> Result<WorldLine, GeodesicError> {
    let samples = run
        .into_iter()
        .map(|(s, y)| Sample {
            s,
            event: state_event(&y),
            tangent: [y[4], y[5], y[6], y[7]],
        })
        .collect();
    WorldLine::new(samples, p)
}

/// Doubles the step count from 16 until two successive runs agree to `tol`
/// (Richardson estimate), then returns the finer run.
fn integrate_adaptive_count<F>(
    rhs: F,
    y0: State,
    s_max: f64,
    tol: f64,
    bounds: &BoundingBox,
) -> Result<Vec<(f64, State)>, GeodesicError>
where
    F: Fn(&State) -> State,
{
    if !(s_max > 0.0) || !s_max.is_finite() {
        return Err(GeodesicError::InvalidInput(format!("s_max must be positive, got {s_max}")));
    }
    if !(tol > 0.0) {
        return Err(GeodesicError::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if y0.iter().any(|v| !v.is_finite()) || !bounds.contains(&state_event(&y0)) {
        return Err(GeodesicError::ExitedRegion {
            s: 0.0,
            event: state_event(&y0),
        });
    }
    let mut n = MIN_STEPS;
    let mut coarse = rk4_run(&rhs, y0, s_max, n, bounds);
    loop {
        let fine = rk4_run(&rhs, y0, s_max, 2 * n, bounds);
        match (&coarse, &fine) {
            (Ok(c), Ok(f)) => {
                let a = c.last().unwrap().1;
                let b = f.last().unwrap().1;
                let err = (0..8).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max) / 15.0;
                if err < tol {
                    return fine;
                }
            }
            (Err(_), Err(e)) => return Err(e.clone()),
            _ => {}
        }
        n *= 2;
        if 2 * n > MAX_STEPS {
            return match fine {
                Err(e) => Err(e),
                Ok(_) => Err(GeodesicError::ToleranceUnreachable { tol, steps: n }),
            };
        }
        coarse = fine;
    }
}

fn vector_components(v0: &Tensor) -> Result<[f64; 4], GeodesicError> {
    if v0.valence() != Valence::VECTOR {
        return Err(GeodesicError::InvalidInput(format!(
            "initial tangent must be a vector, got valence {}",
            v0.valence()
        )));
    }
    Ok(v0.as_array4())
}

fn initial_state(e0: &Event, v: &[f64; 4]) -> State {
    [e0.0[0], e0.0[1], e0.0[2], e0.0[3], v[0], v[1], v[2], v[3]]
}

fn geodesic_rhs(op: &DerivativeOperator) -> impl Fn(&State) -> State + '_ {
    move |y: &State| {
        let xi = [y[4], y[5], y[6], y[7]];
        let c = op.christoffel(&state_event(y));
        let a = contract_christoffel(&c, &xi, &xi);
        [xi[0], xi[1], xi[2], xi[3], a[0], a[1], a[2], a[3]]
    }
}

/// Solves `ξ^n ∇_n ξ^a = 0`, i.e. `dξ^a/ds = C^a_bc ξ^b ξ^c`.
pub fn integrate_geodesic(
    op: &DerivativeOperator,
    e0: &Event,
    v0: &Tensor,
    s_max: f64,
    tol: f64,
) -> Result<WorldLine, GeodesicError> {
    let v = vector_components(v0)?;
    let run = integrate_adaptive_count(geodesic_rhs(op), initial_state(e0, &v), s_max, tol, &op.bounds())?;
    to_worldline(run, Parametrization::Affine)
}

/// Geodesic with a prescribed number of steps.
pub fn integrate_geodesic_fixed(
    op: &DerivativeOperator,
    e0: &Event,
    v0: &Tensor,
    s_max: f64,
    steps: usize,
) -> Result<WorldLine, GeodesicError> {
    let v = vector_components(v0)?;
    if steps == 0 || !(s_max > 0.0) {
        return Err(GeodesicError::InvalidInput("need positive steps and s_max".into()));
    }
    let run = rk4_run(&geodesic_rhs(op), initial_state(e0, &v), s_max, steps, &op.bounds())?;
    to_worldline(run, Parametrization::Affine)
}

/// Solves `ξ^n ∇_n ξ^a = −(t_b ξ^b)² ∇^a φ` relative to the given operator.
pub fn integrate_forced(
    flat: &DerivativeOperator,
    potential: &dyn Potential,
    e0: &Event,
    v0: &Tensor,
    s_max: f64,
    tol: f64,
) -> Result<WorldLine, GeodesicError> {
    let v = vector_components(v0)?;
    let rhs = |y: &State| {
        let xi = [y[4], y[5], y[6], y[7]];
        let e = state_event(y);
        let c = flat.christoffel(&e);
        let mut a = contract_christoffel(&c, &xi, &xi);
        let g = potential.gradient(&e);
        let tx: f64 = (0..4).map(|k| ADAPTED_T[k] * xi[k]).sum();
        for i in 0..3 {
            a[i + 1] -= tx * tx * g[i];
        }
        [xi[0], xi[1], xi[2], xi[3], a[0], a[1], a[2], a[3]]
    };
    let run = integrate_adaptive_count(rhs, initial_state(e0, &v), s_max, tol, &flat.bounds())?;
    to_worldline(run, Parametrization::Affine)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicResidual {
    /// `sup |ξ^n ∇_n ξ^a|`
    pub affine: f64,
    /// Sup of the part of the acceleration not along `ξ`.
    pub reparam: f64,
}

/// Derivative weights at `nodes[at]` of the interpolating polynomial through `nodes`.
pub(crate) fn lagrange_derivative_weights(nodes: &[f64], at: usize) -> Vec<f64> {
    let x = nodes[at];
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for k in 0..n {
        let mut sum = 0.0;
        for m in 0..n {
            if m == k {
                continue;
            }
            let mut prod = 1.0 / (nodes[k] - nodes[m]);
            for l in 0..n {
                if l != k && l != m {
                    prod *= (x - nodes[l]) / (nodes[k] - nodes[l]);
                }
            }
            sum += prod;
        }
        w[k] = sum;
    }
    w
}

/// Differentiates the sampled tangents with five-point stencils and measures
/// how far the curve is from satisfying the geodesic equation.
pub fn geodesic_residual(
    op: &DerivativeOperator,
    w: &WorldLine,
) -> Result<GeodesicResidual, GeodesicError> {
    let n = w.len();
    if n < 5 {
        return Err(GeodesicError::TooFewSamples { needed: 5, found: n });
    }
    let s: Vec<f64> = w.samples.iter().map(|x| x.s).collect();
    let mut affine: f64 = 0.0;
    let mut reparam: f64 = 0.0;
    for i in 0..n {
        let start = i.saturating_sub(2).min(n - 5);
        let weights = lagrange_derivative_weights(&s[start..start + 5], i - start);
        let mut dxi = [0.0; 4];
        for (k, wk) in weights.iter().enumerate() {
            for (c, d) in dxi.iter_mut().enumerate() {
                *d += wk * w.samples[start + k].tangent[c];
            }
        }
        let smp = &w.samples[i];
        let c = op.christoffel(&smp.event);
        let cxx = contract_christoffel(&c, &smp.tangent, &smp.tangent);
        let a: [f64; 4] = [0, 1, 2, 3].map(|k| dxi[k] - cxx[k]);
        affine = affine.max(a.iter().map(|v| v * v).sum::<f64>().sqrt());
        let tx: f64 = (0..4).map(|k| ADAPTED_T[k] * smp.tangent[k]).sum();
        let r = if tx.abs() > TIMELIKE_THRESHOLD {
            let ta: f64 = (0..4).map(|k| ADAPTED_T[k] * a[k]).sum();
            let f = ta / tx;
            (1..4).map(|k| (a[k] - f * smp.tangent[k]).powi(2)).sum::<f64>().sqrt()
        } else {
            a.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        reparam = reparam.max(r);
    }
    Ok(GeodesicResidual { affine, reparam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Uniform, ZeroPotential};

    fn flat_op() -> DerivativeOperator {
        DerivativeOperator::coordinate(BoundingBox::slab(-10.0, 10.0, 10.0))
    }

    #[test]
    fn flat_geodesic_is_a_straight_line() {
        let e0 = Event::new(0.0, 0.1, 0.2, 0.3);
        let v0 = [1.0, 0.3, -0.2, 0.1];
        let w = integrate_geodesic(&flat_op(), &e0, &Tensor::vector(v0), 2.0, 1e-10).unwrap();
        for smp in w.samples() {
            for k in 0..4 {
                assert!((smp.event.0[k] - (e0.0[k] + smp.s * v0[k])).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn uniform_field_parabola() {
        let g = 2.5;
        let pot = Uniform { g: [0.0, 0.0, g] };
        let e0 = Event::new(0.0, 0.0, 0.0, 1.0);
        let v0 = [1.0, 0.0, 0.0, 0.7];
        let w = integrate_forced(&flat_op(), &pot, &e0, &Tensor::vector(v0), 1.5, 1e-10).unwrap();
        for smp in w.samples() {
            let t = smp.s;
            let z = 1.0 + 0.7 * t - 0.5 * g * t * t;
            assert!((smp.event.0[3] - z).abs() < 1e-8);
        }
        let res = geodesic_residual(&flat_op(), &w).unwrap();
        assert!(res.reparam > 0.5 * g);
    }

    #[test]
    fn zero_force_is_straight() {
        let e0 = Event::new(0.0, 0.0, 0.0, 0.0);
        let v = Tensor::vector([1.0, 0.2, 0.0, 0.0]);
        let w = integrate_forced(&flat_op(), &ZeroPotential, &e0, &v, 1.0, 1e-10).unwrap();
        assert!((w.last().event.0[1] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn leaving_the_box_is_reported() {
        let op = DerivativeOperator::coordinate(BoundingBox::slab(-1.0, 1.0, 1.0));
        let r = integrate_geodesic(&op, &Event::new(0.0, 0.0, 0.0, 0.0), &Tensor::vector([1.0, 2.0, 0.0, 0.0]), 0.9, 1e-8);
        assert!(matches!(r, Err(GeodesicError::ExitedRegion { .. })));
    }

    #[test]
    fn too_few_samples() {
        let w = integrate_geodesic_fixed(&flat_op(), &Event::new(0.0, 0.0, 0.0, 0.0), &Tensor::vector([1.0, 0.0, 0.0, 0.0]), 1.0, 2)
            .unwrap();
        assert!(matches!(
            geodesic_residual(&flat_op(), &w),
            Err(GeodesicError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn time_normalization_is_exact_at_samples() {
        let e0 = Event::new(0.0, 0.0, 0.0, 0.0);
        let w = integrate_forced(&flat_op(), &Uniform { g: [0.3, 0.0, 0.0] }, &e0, &Tensor::vector([2.0, 0.2, 0.1, 0.0]), 1.0, 1e-10)
            .unwrap();
        let n = w.time_normalized().unwrap();
        assert_eq!(n.parametrization(), Parametrization::TimeNormalized);
        for smp in n.samples() {
            assert_eq!(smp.tangent[0], 1.0);
            assert_eq!(smp.s, smp.event.time());
        }
    }

    #[test]
    fn worldline_rejects_non_increasing_parameter() {
        let smp = Sample {
            s: 0.0,
            event: Event::new(0.0, 0.0, 0.0, 0.0),
            tangent: [1.0, 0.0, 0.0, 0.0],
        };
        assert!(matches!(
            WorldLine::new(vec![smp, smp], Parametrization::General),
            Err(GeodesicError::NonMonotoneParameter { index: 1 })
        ));
    }

    #[test]
    fn csv_header_and_rows() {
        let w = integrate_geodesic_fixed(&flat_op(), &Event::new(0.0, 0.0, 0.0, 0.0), &Tensor::vector([1.0, 0.0, 0.0, 0.0]), 1.0, 4)
            .unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,t,x,y,z,xi0,xi1,xi2,xi3\n"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn hermite_reproduces_cubic_motion() {
        let traj = |t: f64| [t, t * t * t - t, 0.5 * t * t, 2.0 * t];
        let vel = |t: f64| [1.0, 3.0 * t * t - 1.0, t, 2.0];
        let samples: Vec<Sample> = (0..5)
            .map(|i| {
                let t = i as f64 * 0.25;
                Sample { s: t, event: Event(traj(t)), tangent: vel(t) }
            })
            .collect();
        let w = WorldLine::new(samples, Parametrization::TimeNormalized).unwrap();
        let (x, v) = w.at_time(0.6).unwrap();
        let want = traj(0.6);
        let wv = vel(0.6);
        for i in 0..3 {
            assert!((x[i] - want[i + 1]).abs() < 1e-13);
            assert!((v[i] - wv[i + 1]).abs() < 1e-12);
        }
    }
}
