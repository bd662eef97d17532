//! Conserved dust bodies `T^ab = ρ u^a u^b` in small tubes around a geodesic.
//!
//! A lattice of labels around the curve's initial position is carried along
//! the geodesic congruence, with the flow Jacobian `D = ∂x/∂x₀` integrated
//! alongside to detect caustics. Positions, velocities and accelerations are
//! stored per label; the flow map `X(t, x₀)` is their quintic Hermite
//! interpolant in time and a tensor-product cubic spline in the labels. Eulerian
//! values come from inverting `X` with Newton's method and setting
//! `u = (1, ∂_t X)`, `ρ = ρ₀(x₀) / det ∂X/∂x₀`, so continuity holds for the
//! interpolant itself.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FieldError, MatterError};
use crate::field::{Backend, BoundingBox, TensorField};
use crate::geodesics::{geodesic_residual, Parametrization, Sample, WorldLine};
use crate::quadrature::simpson;
use crate::sampling::halton;
use crate::spacetime::{ClassicalSpacetime, DerivativeOperator};
use crate::tensor::{Event, Tensor, Valence};

/// Flow Jacobian below which the congruence is treated as having a caustic.
pub const CAUSTIC_THRESHOLD: f64 = 1e-6;
/// Default conservation tolerance for built bodies.
pub const TAU_D: f64 = 1e-4;

/// Values stored per label and time sample: position, velocity,
/// acceleration, `det D` and its first two time derivatives.
const REC: usize = 12;
/// Interpolated position, velocity and `det D`.
const VAL: usize = 7;

/// Symmetric 4x4 tensor stored once per unordered index pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymmetricTensor2(pub [f64; 10]);

impl SymmetricTensor2 {
    #[inline]
    pub fn index(a: usize, b: usize) -> usize {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        i * 4 - i * (i.saturating_sub(1)) / 2 + (j - i)
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0[Self::index(a, b)]
    }

    /// `ρ u^a u^b`.
    pub fn dust(rho: f64, u: &[f64; 4]) -> Self {
        let mut out = [0.0; 10];
        for a in 0..4 {
            for b in a..4 {
                out[Self::index(a, b)] = rho * u[a] * u[b];
            }
        }
        SymmetricTensor2(out)
    }

    pub fn scale(&self, f: f64) -> Self {
        SymmetricTensor2(self.0.map(|v| v * f))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(Valence::new(2, 0), |i| self.get(i[0], i[1])).expect("rank 2")
    }
}

/// `ρ₀(r) = A exp(1 / ((r/ε)² − 1))` for `r < ε`, zero outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub epsilon: f64,
    pub amplitude: f64,
}

impl BumpProfile {
    /// Amplitude chosen so the profile integrates to one.
    pub fn unit_mass(epsilon: f64) -> Result<Self, MatterError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(MatterError::InvalidRadius(epsilon));
        }
        let shape = simpson(
            |s| {
                if s >= 1.0 {
                    0.0
                } else {
                    s * s * (1.0 / (s * s - 1.0)).exp()
                }
            },
            0.0,
            1.0,
            20_000,
        );
        let volume = 4.0 * std::f64::consts::PI * epsilon.powi(3) * shape;
        Ok(BumpProfile {
            epsilon,
            amplitude: 1.0 / volume,
        })
    }

    #[inline]
    pub fn density(&self, r: f64) -> f64 {
        let s = r / self.epsilon;
        if s >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 / (s * s - 1.0)).exp()
        }
    }

    pub fn peak(&self) -> f64 {
        self.amplitude * (-1.0f64).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DustOptions {
    /// Label nodes across the body's diameter.
    pub nodes_across: usize,
    /// Stored time samples over the window.
    pub time_samples: usize,
    /// Integration steps between stored samples.
    pub substeps: usize,
    /// Largest admissible geodesic residual of the central curve.
    pub geodesic_tolerance: f64,
}

impl Default for DustOptions {
    fn default() -> Self {
        DustOptions {
            nodes_across: 24,
            time_samples: 25,
            substeps: 2,
            geodesic_tolerance: 1e-6,
        }
    }
}

/// Tube containing the support: central flow line, spatial radius, time window.
#[derive(Clone, Debug)]
pub struct TubeSupport {
    pub center: WorldLine,
    pub radius: f64,
    pub epsilon: f64,
    pub window: (f64, f64),
}

struct DustBody {
    profile: BumpProfile,
    c0: [f64; 3],
    origin: [f64; 3],
    h: f64,
    n: usize,
    /// Spline coefficients per axis: the `n` label nodes plus one ghost each side.
    nc: usize,
    t0: f64,
    dt: f64,
    nt: usize,
    /// Spline coefficients, `[coefficient][time][REC]`.
    data: Vec<f64>,
    /// Central label's record per time sample.
    center: Vec<[f64; REC]>,
    radius: f64,
}

/// Eulerian state of the congruence at an event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CongruencePoint {
    pub rho: f64,
    pub u: [f64; 4],
    pub label: [f64; 3],
}

impl DustBody {
    #[inline]
    fn label_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nc + j) * self.nc + k
    }

    fn time_weights(&self, t: f64) -> TimeWeights {
        let u = (t - self.t0) / self.dt;
        let k = (u.floor() as isize).clamp(0, self.nt as isize - 2) as usize;
        let s = u - k as f64;
        let (pos, vel) = hermite5(s, self.dt);
        TimeWeights { k, pos, vel }
    }

    fn apply_time(rec0: &[f64], rec1: &[f64], tw: &TimeWeights) -> [f64; VAL] {
        let mut out = [0.0; VAL];
        for c in 0..3 {
            let v = [rec0[c], rec0[3 + c], rec0[6 + c], rec1[c], rec1[3 + c], rec1[6 + c]];
            for j in 0..6 {
                out[c] += tw.pos[j] * v[j];
                out[3 + c] += tw.vel[j] * v[j];
            }
        }
        let d = [rec0[9], rec0[10], rec0[11], rec1[9], rec1[10], rec1[11]];
        out[6] = (0..6).map(|j| tw.pos[j] * d[j]).sum();
        out
    }

    fn label_at_time(&self, label: usize, tw: &TimeWeights) -> [f64; VAL] {
        let off = (label * self.nt + tw.k) * REC;
        Self::apply_time(&self.data[off..off + REC], &self.data[off + REC..off + 2 * REC], tw)
    }

    fn center_at(&self, t: f64) -> [f64; VAL] {
        let tw = self.time_weights(t);
        Self::apply_time(&self.center[tw.k], &self.center[tw.k + 1], &tw)
    }

    /// Newton inversion of the flow map at fixed time; `values(label)` yields
    /// the stored record interpolated to that time.
    fn invert<F>(
        &self,
        x: &[f64; 3],
        center: &[f64; VAL],
        source: DensitySource,
        values: F,
    ) -> Option<CongruencePoint>
    where
        F: Fn(usize) -> [f64; VAL],
    {
        let d2 = (0..3).map(|i| (x[i] - center[i]).powi(2)).sum::<f64>();
        if d2.sqrt() > self.radius + self.h {
            return None;
        }
        let n = self.n as isize;
        let mut q = [0.0; 3];
        for i in 0..3 {
            q[i] = (self.c0[i] + x[i] - center[i] - self.origin[i]) / self.h;
        }
        let tol = 1e-13 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut rec = [0.0; VAL];
        let mut jac_det = 0.0;
        let mut converged = false;
        for _ in 0..40 {
            if q.iter().any(|v| !v.is_finite() || *v < -2.0 || *v > (n + 1) as f64) {
                return None;
            }
            let mut start = [0usize; 3];
            let mut w = [[0.0; 4]; 3];
            let mut dw = [[0.0; 4]; 3];
            for a in 0..3 {
                let j = (q[a].floor() as isize).clamp(0, n - 2) as usize;
                start[a] = j;
                (w[a], dw[a]) = bspline3(q[a] - j as f64);
            }
            let mut val = [0.0; VAL];
            let mut jac = [[0.0; 3]; 3]; // jac[i][a] = ∂X^i/∂q^a
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        let r = values(self.label_index(start[0] + a, start[1] + b, start[2] + c));
                        let wv = w[0][a] * w[1][b] * w[2][c];
                        let g = [
                            dw[0][a] * w[1][b] * w[2][c],
                            w[0][a] * dw[1][b] * w[2][c],
                            w[0][a] * w[1][b] * dw[2][c],
                        ];
                        for k in 0..VAL {
                            val[k] += wv * r[k];
                        }
                        for i in 0..3 {
                            for (ax, gv) in g.iter().enumerate() {
                                jac[i][ax] += gv * r[i];
                            }
                        }
                    }
                }
            }
            rec = val;
            jac_det = det3(&jac);
            let f = [val[0] - x[0], val[1] - x[1], val[2] - x[2]];
            let err = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if err <= tol {
                converged = true;
                break;
            }
            let step = solve3(&jac, &f)?;
            for i in 0..3 {
                q[i] -= step[i];
            }
            if step.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return None;
        }
        let label = [0, 1, 2].map(|i| self.origin[i] + q[i] * self.h);
        let r = ((0..3).map(|i| (label[i] - self.c0[i]).powi(2)).sum::<f64>()).sqrt();
        let rho0 = self.profile.density(r);
        let det = match source {
            DensitySource::FlowMap => jac_det / self.h.powi(3),
            DensitySource::Transported => rec[6],
        };
        if rho0 == 0.0 || !(det > 0.0) {
            return None;
        }
        Some(CongruencePoint {
            rho: rho0 / det,
            u: [1.0, rec[3], rec[4], rec[5]],
            label,
        })
    }

    fn congruence_at(&self, e: &Event, source: DensitySource) -> Option<CongruencePoint> {
        let tw = self.time_weights(e.time());
        let center = self.center_at(e.time());
        self.invert(&e.spatial(), &center, source, |l| self.label_at_time(l, &tw))
    }
}

struct TimeWeights {
    k: usize,
    pos: [f64; 6],
    vel: [f64; 6],
}

/// Quintic Hermite weights on `[0, 1]` for `(x₀, v₀, a₀, x₁, v₁, a₁)` on an
/// interval of length `dt`, for the value and its time derivative.
fn hermite5(s: f64, dt: f64) -> ([f64; 6], [f64; 6]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let pos = [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        dt * (s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5),
        dt * dt * (0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5),
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
        dt * (-4.0 * s3 + 7.0 * s4 - 3.0 * s5),
        dt * dt * (0.5 * s3 - s4 + 0.5 * s5),
    ];
    let vel = [
        (-30.0 * s2 + 60.0 * s3 - 30.0 * s4) / dt,
        1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
        dt * (s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4),
        (30.0 * s2 - 60.0 * s3 + 30.0 * s4) / dt,
        -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
        dt * (1.5 * s2 - 4.0 * s3 + 2.5 * s4),
    ];
    (pos, vel)
}

/// Uniform cubic B-spline weights for coefficients `j−1..=j+2` at `j + s`.
fn bspline3(s: f64) -> ([f64; 4], [f64; 4]) {
    let r = 1.0 - s;
    let s2 = s * s;
    let s3 = s2 * s;
    (
        [
            r * r * r / 6.0,
            (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0,
            (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
            s3 / 6.0,
        ],
        [
            -0.5 * r * r,
            0.5 * (3.0 * s2 - 4.0 * s),
            0.5 * (-3.0 * s2 + 2.0 * s + 1.0),
            0.5 * s2,
        ],
    )
}

/// Natural cubic spline coefficients for `f` (length `n ≥ 3`), returned with
/// one ghost coefficient at each end.
fn spline_prefilter(f: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let n = f.len();
    out[1] = f[0];
    out[n] = f[n - 1];
    // interior system c_{i-1} + 4 c_i + c_{i+1} = 6 f_i, i = 1..n-2
    let m = n - 2;
    scratch.clear();
    scratch.resize(2 * m, 0.0);
    let (cp, dp) = scratch.split_at_mut(m);
    for i in 0..m {
        let mut rhs = 6.0 * f[i + 1];
        if i == 0 {
            rhs -= f[0];
        }
        if i == m - 1 {
            rhs -= f[n - 1];
        }
        let denom = if i == 0 { 4.0 } else { 4.0 - cp[i - 1] };
        cp[i] = 1.0 / denom;
        dp[i] = if i == 0 { rhs / denom } else { (rhs - dp[i - 1]) / denom };
    }
    out[m + 1] = dp[m - 1];
    for i in (0..m - 1).rev() {
        out[i + 2] = dp[i] - cp[i] * out[i + 3];
    }
    out[0] = 2.0 * out[1] - out[2];
    out[n + 1] = 2.0 * out[n] - out[n - 1];
}

/// Turns per-label records into tensor-product spline coefficients.
fn spline_coefficients(flows: &[Vec<[f64; REC]>], n: usize, nt: usize) -> Vec<f64> {
    let nc = n + 2;
    let stride = nt * REC;
    let mut data = vec![0.0; nc * nc * nc * stride];
    let at = |i: usize, j: usize, k: usize| ((i * nc + j) * nc + k) * stride;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let off = at(i + 1, j + 1, k + 1);
                for (q, rec) in flows[(i * n + j) * n + k].iter().enumerate() {
                    data[off + q * REC..off + (q + 1) * REC].copy_from_slice(rec);
                }
            }
        }
    }
    let mut line = vec![0.0; n];
    let mut coef = vec![0.0; nc];
    let mut scratch = Vec::new();
    for axis in 0..3 {
        // other two indices range over nodes for axes not yet filtered, all coefficients otherwise
        let range = |ax: usize| if ax < axis { 0..nc } else { 1..n + 1 };
        let others: Vec<usize> = (0..3).filter(|a| *a != axis).collect();
        for u in range(others[0]) {
            for v in range(others[1]) {
                let index = |w: usize| {
                    let mut idx = [0; 3];
                    idx[axis] = w;
                    idx[others[0]] = u;
                    idx[others[1]] = v;
                    at(idx[0], idx[1], idx[2])
                };
                for c in 0..stride {
                    for (w, l) in line.iter_mut().enumerate() {
                        *l = data[index(w + 1) + c];
                    }
                    spline_prefilter(&line, &mut coef, &mut scratch);
                    for (w, cv) in coef.iter().enumerate() {
                        data[index(w) + c] = *cv;
                    }
                }
            }
        }
    }
    data
}

fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = det3(m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = *m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        *o = det3(&mc) / det;
    }
    Some(out)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Which flow Jacobian divides the initial density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensitySource {
    /// Determinant of the interpolated flow map; continuity holds for the interpolant.
    #[default]
    FlowMap,
    /// Interpolated `det D` from the variational equations.
    Transported,
}

/// Deliberate alterations of a built body, used as defect fixtures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Modifier {
    None,
    Scaled(f64),
    /// `T = 0` where `x^axis > cut` and `t ≥ t_cut` (axis 1..=3).
    Clipped { axis: usize, cut: f64, t_cut: f64 },
    Zero,
}

/// A mass-momentum field with compact spatial support.
#[derive(Clone)]
pub struct MassMomentumField {
    body: Arc<DustBody>,
    support: Arc<TubeSupport>,
    modifier: Modifier,
    source: DensitySource,
}

impl std::fmt::Debug for MassMomentumField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MassMomentumField")
            .field("epsilon", &self.support.epsilon)
            .field("radius", &self.support.radius)
            .field("window", &self.support.window)
            .field("modifier", &self.modifier)
            .finish()
    }
}

type FlowState = [f64; 24];

fn flow_rhs(op: &DerivativeOperator, t: f64, y: &FlowState) -> Result<FlowState, MatterError> {
    let e = Event([t, y[0], y[1], y[2]]);
    if !op.bounds().contains(&e) {
        return Err(MatterError::LeftRegion { t });
    }
    let c = op.christoffel(&e);
    let dc = op.christoffel_derivative(&e)?;
    let u = [1.0, y[3], y[4], y[5]];
    let mut out = [0.0; 24];
    let mut ax = [[0.0; 3]; 3];
    let mut av = [[0.0; 3]; 3];
    for i in 0..3 {
        let mut acc = 0.0;
        for b in 0..4 {
            for k in 0..4 {
                acc += c[i + 1][b][k] * u[b] * u[k];
            }
        }
        out[i] = y[3 + i];
        out[3 + i] = acc;
        for j in 0..3 {
            let mut s = 0.0;
            for b in 0..4 {
                for k in 0..4 {
                    s += dc[j + 1][i + 1][b][k] * u[b] * u[k];
                }
            }
            ax[i][j] = s;
            av[i][j] = 2.0 * (0..4).map(|k| c[i + 1][j + 1][k] * u[k]).sum::<f64>();
        }
    }
    // D at 6..15, W at 15..24, row-major
    for i in 0..3 {
        for j in 0..3 {
            out[6 + 3 * i + j] = y[15 + 3 * i + j];
            let mut s = 0.0;
            for k in 0..3 {
                s += ax[i][k] * y[6 + 3 * k + j] + av[i][k] * y[15 + 3 * k + j];
            }
            out[15 + 3 * i + j] = s;
        }
    }
    Ok(out)
}

fn flow_det(y: &FlowState) -> f64 {
    let m = [
        [y[6], y[7], y[8]],
        [y[9], y[10], y[11]],
        [y[12], y[13], y[14]],
    ];
    det3(&m)
}

/// First and second time derivatives of `det D`, given `dD/dt = W` and
/// `dW/dt` from the flow right-hand side `dy`.
fn flow_det_rates(y: &FlowState, dy: &FlowState) -> (f64, f64) {
    let row = |base: usize, r: usize| [y[base + 3 * r], y[base + 1 + 3 * r], y[base + 2 + 3 * r]];
    let d = [row(6, 0), row(6, 1), row(6, 2)];
    let w = [row(15, 0), row(15, 1), row(15, 2)];
    let dw = [0, 1, 2].map(|r| [dy[15 + 3 * r], dy[16 + 3 * r], dy[17 + 3 * r]]);
    let mut first = 0.0;
    let mut second = 0.0;
    for k in 0..3 {
        let mut m = d;
        m[k] = w[k];
        first += det3(&m);
        let mut m = d;
        m[k] = dw[k];
        second += det3(&m);
        for l in 0..3 {
            if l != k {
                let mut m = d;
                m[k] = w[k];
                m[l] = w[l];
                second += det3(&m);
            }
        }
    }
    (first, second)
}

/// Integrates one flow line, returning its stored record at each sample.
fn integrate_label(
    op: &DerivativeOperator,
    x0: [f64; 3],
    v0: [f64; 3],
    t0: f64,
    dt: f64,
    nt: usize,
    substeps: usize,
    in_support: bool,
) -> Result<Vec<[f64; REC]>, MatterError> {
    let mut y: FlowState = [0.0; 24];
    y[..3].copy_from_slice(&x0);
    y[3..6].copy_from_slice(&v0);
    y[6] = 1.0;
    y[10] = 1.0;
    y[14] = 1.0;
    let record = |t: f64, y: &FlowState| -> Result<[f64; REC], MatterError> {
        let d = flow_rhs(op, t, y)?;
        let (rate, accel) = flow_det_rates(y, &d);
        Ok([
            y[0],
            y[1],
            y[2],
            y[3],
            y[4],
            y[5],
            d[3],
            d[4],
            d[5],
            flow_det(y),
            rate,
            accel,
        ])
    };
    let mut out = Vec::with_capacity(nt);
    out.push(record(t0, &y)?);
    let h = dt / substeps as f64;
    for k in 1..nt {
        for s in 0..substeps {
            let t = t0 + (k - 1) as f64 * dt + s as f64 * h;
            let k1 = flow_rhs(op, t, &y)?;
            let mut tmp = y;
            for i in 0..24 {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            let k2 = flow_rhs(op, t + 0.5 * h, &tmp)?;
            for i in 0..24 {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            let k3 = flow_rhs(op, t + 0.5 * h, &tmp)?;
            for i in 0..24 {
                tmp[i] = y[i] + h * k3[i];
            }
            let k4 = flow_rhs(op, t + h, &tmp)?;
            for i in 0..24 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let t = t0 + k as f64 * dt;
        let det = flow_det(&y);
        if in_support && !(det >= CAUSTIC_THRESHOLD) {
            return Err(MatterError::Caustic { t, det });
        }
        out.push(record(t, &y)?);
    }
    Ok(out)
}

/// Dust body around the geodesic `γ` over `window`, with a unit-mass bump of radius `ε`.
pub fn build_dust_body(
    st: &ClassicalSpacetime,
    gamma: &WorldLine,
    profile: BumpProfile,
    window: (f64, f64),
    options: &DustOptions,
) -> Result<MassMomentumField, MatterError> {
    let eps = profile.epsilon;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(MatterError::InvalidRadius(eps));
    }
    if !(window.1 > window.0) {
        return Err(MatterError::InvalidInput(format!("empty window {window:?}")));
    }
    if options.time_samples < 4 || options.nodes_across < 4 || options.substeps == 0 {
        return Err(MatterError::InvalidInput(
            "need at least 4 time samples, 4 nodes across and one substep".into(),
        ));
    }
    let op = &st.op;
    let res = geodesic_residual(op, gamma)?;
    if !(res.affine < options.geodesic_tolerance) {
        return Err(MatterError::NotGeodesic {
            residual: res.affine,
            threshold: options.geodesic_tolerance,
        });
    }
    let curve = gamma.time_normalized()?;
    let (c0, v0) = curve.at_time(window.0)?;
    curve.at_time(window.1)?;

    let half = options.nodes_across.div_ceil(2) + 2;
    let n = 2 * half + 1;
    let h = 2.0 * eps / options.nodes_across as f64;
    let origin = [0, 1, 2].map(|i| c0[i] - half as f64 * h);
    let nt = options.time_samples;
    let dt = (window.1 - window.0) / (nt - 1) as f64;

    let labels: Vec<usize> = (0..n * n * n).collect();
    let flows: Vec<Vec<[f64; REC]>> = labels
        .par_iter()
        .map(|&l| {
            let i = l / (n * n);
            let j = (l / n) % n;
            let k = l % n;
            let x0 = [
                origin[0] + i as f64 * h,
                origin[1] + j as f64 * h,
                origin[2] + k as f64 * h,
            ];
            let r = ((0..3).map(|a| (x0[a] - c0[a]).powi(2)).sum::<f64>()).sqrt();
            integrate_label(op, x0, v0, window.0, dt, nt, options.substeps, r < eps)
        })
        .collect::<Result<_, _>>()?;

    let center_label = (half * n + half) * n + half;
    let center: Vec<[f64; REC]> = flows[center_label].clone();
    let mut radius: f64 = 0.0;
    for (l, flow) in flows.iter().enumerate() {
        let i = l / (n * n);
        let j = (l / n) % n;
        let k = l % n;
        let x0 = [
            origin[0] + i as f64 * h,
            origin[1] + j as f64 * h,
            origin[2] + k as f64 * h,
        ];
        let r0 = ((0..3).map(|a| (x0[a] - c0[a]).powi(2)).sum::<f64>()).sqrt();
        if r0 >= eps {
            continue;
        }
        for (q, rec) in flow.iter().enumerate() {
            let d = ((0..3).map(|a| (rec[a] - center[q][a]).powi(2)).sum::<f64>()).sqrt();
            radius = radius.max(d);
        }
    }
    radius += h;
    let data = spline_coefficients(&flows, n, nt);
    let center_line = WorldLine::new(
        center
            .iter()
            .enumerate()
            .map(|(q, c)| {
                let t = window.0 + q as f64 * dt;
                Sample {
                    s: t,
                    event: Event([t, c[0], c[1], c[2]]),
                    tangent: [1.0, c[3], c[4], c[5]],
                }
            })
            .collect(),
        Parametrization::TimeNormalized,
    )?;
    let body = DustBody {
        profile,
        c0,
        origin,
        h,
        n,
        nc: n + 2,
        t0: window.0,
        dt,
        nt,
        data,
        center,
        radius,
    };
    Ok(MassMomentumField {
        support: Arc::new(TubeSupport {
            center: center_line,
            radius,
            epsilon: eps,
            window,
        }),
        body: Arc::new(body),
        modifier: Modifier::None,
        source: DensitySource::FlowMap,
    })
}

/// Label values interpolated to one time, for many evaluations on a slice.
pub struct SliceSampler<'a> {
    field: &'a MassMomentumField,
    t: f64,
    center: [f64; VAL],
    values: Vec<[f64; VAL]>,
}

impl SliceSampler<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn congruence(&self, x: &[f64; 3]) -> Option<CongruencePoint> {
        self.field
            .body
            .invert(x, &self.center, self.field.source, |l| self.values[l])
    }

    pub fn eval(&self, x: &[f64; 3]) -> SymmetricTensor2 {
        let raw = match self.congruence(x) {
            Some(p) => SymmetricTensor2::dust(p.rho, &p.u),
            None => SymmetricTensor2::default(),
        };
        self.field.apply_modifier(&Event::from_parts(self.t, *x), raw)
    }
}

impl MassMomentumField {
    pub fn support(&self) -> &TubeSupport {
        &self.support
    }

    pub fn modifier(&self) -> Modifier {
        self.modifier
    }

    pub fn profile(&self) -> BumpProfile {
        self.body.profile
    }

    pub fn label_spacing(&self) -> f64 {
        self.body.h
    }

    pub fn time_spacing(&self) -> f64 {
        self.body.dt
    }

    pub fn window(&self) -> (f64, f64) {
        self.support.window
    }

    /// Center of the tube at time `t`.
    pub fn tube_center(&self, t: f64) -> [f64; 3] {
        let c = self.body.center_at(t);
        [c[0], c[1], c[2]]
    }

    pub fn scaled(&self, f: f64) -> Self {
        let modifier = match self.modifier {
            Modifier::Scaled(g) => Modifier::Scaled(f * g),
            Modifier::None => Modifier::Scaled(f),
            other => other,
        };
        MassMomentumField {
            modifier,
            ..self.clone()
        }
    }

    pub fn clipped(&self, axis: usize, cut: f64, t_cut: f64) -> Self {
        MassMomentumField {
            modifier: Modifier::Clipped { axis, cut, t_cut },
            ..self.clone()
        }
    }

    /// Same body with `ρ` taken from the chosen Jacobian.
    pub fn with_density_source(&self, source: DensitySource) -> Self {
        MassMomentumField {
            source,
            ..self.clone()
        }
    }

    pub fn density_source(&self) -> DensitySource {
        self.source
    }

    pub fn zeroed(&self) -> Self {
        MassMomentumField {
            modifier: Modifier::Zero,
            ..self.clone()
        }
    }

    fn in_window(&self, t: f64) -> bool {
        let (a, b) = self.support.window;
        t >= a && t <= b
    }

    fn apply_modifier(&self, e: &Event, t: SymmetricTensor2) -> SymmetricTensor2 {
        match self.modifier {
            Modifier::None => t,
            Modifier::Scaled(f) => t.scale(f),
            Modifier::Clipped { axis, cut, t_cut } => {
                if e.time() >= t_cut && e.0[axis] > cut {
                    SymmetricTensor2::default()
                } else {
                    t
                }
            }
            Modifier::Zero => SymmetricTensor2::default(),
        }
    }

    /// Congruence density and velocity at `e`, ignoring modifiers.
    pub fn congruence(&self, e: &Event) -> Option<CongruencePoint> {
        if !self.in_window(e.time()) {
            return None;
        }
        self.body.congruence_at(e, self.source)
    }

    /// Congruence at `e` with the density taken from the given Jacobian.
    pub fn congruence_with(&self, e: &Event, source: DensitySource) -> Option<CongruencePoint> {
        if !self.in_window(e.time()) {
            return None;
        }
        self.body.congruence_at(e, source)
    }

    pub fn eval(&self, e: &Event) -> Result<SymmetricTensor2, FieldError> {
        if !self.in_window(e.time()) {
            return Err(FieldError::OutsideBounds { event: *e });
        }
        let raw = match self.body.congruence_at(e, self.source) {
            Some(p) => SymmetricTensor2::dust(p.rho, &p.u),
            None => SymmetricTensor2::default(),
        };
        Ok(self.apply_modifier(e, raw))
    }

    /// `ρ = t_a t_b T^ab`; zero outside the window.
    pub fn mass_density(&self, e: &Event) -> f64 {
        self.eval(e).map(|t| t.get(0, 0)).unwrap_or(0.0)
    }

    pub fn slice(&self, t: f64) -> Result<SliceSampler<'_>, FieldError> {
        if !self.in_window(t) {
            return Err(FieldError::OutsideBounds {
                event: Event::new(t, 0.0, 0.0, 0.0),
            });
        }
        let b = &self.body;
        let tw = b.time_weights(t);
        let values = (0..b.nc * b.nc * b.nc).map(|l| b.label_at_time(l, &tw)).collect();
        Ok(SliceSampler {
            field: self,
            t,
            center: b.center_at(t),
            values,
        })
    }

    /// Spatial box containing the support on the slice at `t`.
    pub fn support_box(&self, t: f64) -> ([f64; 3], [f64; 3]) {
        let c = self.tube_center(t);
        let r = self.support.radius;
        ([c[0] - r, c[1] - r, c[2] - r], [c[0] + r, c[1] + r, c[2] + r])
    }

    /// Default difference step for conservation checks.
    pub fn default_step(&self) -> f64 {
        self.support.epsilon / 1024.0
    }

    /// `∇_a T^ab` at `e` by the fourth-order stencil of step `h`.
    pub fn divergence(
        &self,
        op: &DerivativeOperator,
        e: &Event,
        h: f64,
    ) -> Result<[f64; 4], FieldError> {
        let mut div = [0.0; 4];
        for a in 0..4 {
            let p2 = self.eval(&e.shifted(a, 2.0 * h))?;
            let p1 = self.eval(&e.shifted(a, h))?;
            let m1 = self.eval(&e.shifted(a, -h))?;
            let m2 = self.eval(&e.shifted(a, -2.0 * h))?;
            for (b, d) in div.iter_mut().enumerate() {
                let i = SymmetricTensor2::index(a, b);
                *d += (-p2.0[i] + 8.0 * p1.0[i] - 8.0 * m1.0[i] + m2.0[i]) / (12.0 * h);
            }
        }
        let t = self.eval(e)?;
        if op.is_coordinate() || t.is_zero() {
            return Ok(div);
        }
        let c = op.christoffel(e);
        for (b, d) in div.iter_mut().enumerate() {
            let mut s = 0.0;
            for a in 0..4 {
                for n in 0..4 {
                    s -= c[a][a][n] * t.get(n, b) + c[b][a][n] * t.get(a, n);
                }
            }
            *d += s;
        }
        Ok(div)
    }

    /// Views the field as a (2,0) tensor field on the tube's bounding box.
    pub fn as_tensor_field(&self) -> Arc<dyn TensorField> {
        Arc::new(self.clone())
    }

    /// Writes `t, x, y, z, T00..T33` (upper triangle) at the Simpson nodes of a slice.
    pub fn write_slice_csv<W: std::io::Write>(
        &self,
        t: f64,
        nodes: usize,
        mut w: W,
    ) -> std::io::Result<()> {
        writeln!(w, "t,x,y,z,T00,T01,T02,T03,T11,T12,T13,T22,T23,T33")?;
        let (lo, hi) = self.support_box(t);
        let sampler = self
            .slice(t)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        for i in 0..=nodes {
            for j in 0..=nodes {
                for k in 0..=nodes {
                    let x = [
                        lo[0] + (hi[0] - lo[0]) * i as f64 / nodes as f64,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / nodes as f64,
                        lo[2] + (hi[2] - lo[2]) * k as f64 / nodes as f64,
                    ];
                    let v = sampler.eval(&x);
                    write!(w, "{t},{},{},{}", x[0], x[1], x[2])?;
                    for c in v.0 {
                        write!(w, ",{c}")?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

impl TensorField for MassMomentumField {
    fn valence(&self) -> Valence {
        Valence::new(2, 0)
    }

    fn bounds(&self) -> BoundingBox {
        let (t0, t1) = self.support.window;
        BoundingBox::new(
            [t0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            [t1, f64::INFINITY, f64::INFINITY, f64::INFINITY],
        )
    }

    fn backend(&self) -> Backend {
        Backend::Grid {
            spacing: [self.body.dt, self.body.h, self.body.h, self.body.h],
        }
    }

    fn eval(&self, e: &Event) -> Result<Tensor, FieldError> {
        Ok(MassMomentumField::eval(self, e)?.to_tensor())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConditionReport {
    pub samples: usize,
    /// Sample events where `T ≠ 0`.
    pub support_points: usize,
    /// Of those, events where `t_a t_b T^ab ≤ 0`.
    pub mass_violations: usize,
    /// `sup |∇_a T^ab| · ε / sup |T^00|`.
    pub conservation: f64,
    /// `sup |T^ab − T^ba|`.
    pub symmetry: f64,
    /// `sup |T|` over sample events outside the declared tube.
    pub support: f64,
}

/// Residuals of the mass, conservation, symmetry and support conditions over
/// quasi-random events in the tube and in a shell just outside it.
pub fn check_conditions(
    st: &ClassicalSpacetime,
    m: &MassMomentumField,
    samples: usize,
    step: Option<f64>,
) -> Result<ConditionReport, FieldError> {
    let h = step.unwrap_or_else(|| m.default_step());
    let (t0, t1) = m.window();
    let (ta, tb) = (t0 + 2.5 * h, t1 - 2.5 * h);
    let radius = m.support.radius;
    let n_tube = samples;
    let n_shell = (samples / 4).max(1);
    let events: Vec<(Event, bool)> = (0..n_tube + n_shell)
        .map(|i| {
            let q = halton(i as u64 + 1, 4);
            let inside = i < n_tube;
            let t = ta + q[0] * (tb - ta);
            let r = if inside {
                radius * q[1].cbrt()
            } else {
                radius * (1.0 + 0.25 * q[1])
            };
            let cos_th = 2.0 * q[2] - 1.0;
            let sin_th = (1.0 - cos_th * cos_th).max(0.0).sqrt();
            let ph = 2.0 * std::f64::consts::PI * q[3];
            let c = m.tube_center(t);
            (
                Event([
                    t,
                    c[0] + r * sin_th * ph.cos(),
                    c[1] + r * sin_th * ph.sin(),
                    c[2] + r * cos_th,
                ]),
                inside,
            )
        })
        .collect();
    let rows: Vec<Result<(SymmetricTensor2, [f64; 4], bool), FieldError>> = events
        .par_iter()
        .map(|(e, inside)| {
            let t = m.eval(e)?;
            let div = if *inside && !t.is_zero() {
                m.divergence(&st.op, e, h)?
            } else {
                [0.0; 4]
            };
            Ok((t, div, *inside))
        })
        .collect();
    let mut rep = ConditionReport {
        samples: events.len(),
        ..Default::default()
    };
    let mut div_max: f64 = 0.0;
    let mut rho_max: f64 = 0.0;
    for row in rows {
        let (t, div, inside) = row?;
        if !t.is_zero() {
            rep.support_points += 1;
            if !(t.get(0, 0) > 0.0) {
                rep.mass_violations += 1;
            }
        }
        if !inside {
            rep.support = rep.support.max(t.max_abs());
        }
        rho_max = rho_max.max(t.get(0, 0).abs());
        div_max = div_max.max(div.iter().fold(0.0, |a, v| a.max(v.abs())));
        let full = t.to_tensor();
        for a in 0..4 {
            for b in 0..4 {
                rep.symmetry = rep.symmetry.max((full.get(&[a, b]) - full.get(&[b, a])).abs());
            }
        }
    }
    rep.conservation = if rho_max > 0.0 {
        div_max * m.support.epsilon / rho_max
    } else {
        div_max
    };
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::integrate_geodesic;

    fn static_body(eps: f64, nodes: usize) -> (ClassicalSpacetime, MassMomentumField) {
        let st = ClassicalSpacetime::flat(BoundingBox::slab(0.0, 1.0, 2.0));
        let gamma = integrate_geodesic(
            &st.op,
            &Event::new(0.0, 0.0, 0.0, 0.0),
            &Tensor::vector([1.0, 0.0, 0.0, 0.0]),
            1.0,
            1e-10,
        )
        .unwrap();
        let opts = DustOptions {
            nodes_across: nodes,
            time_samples: 9,
            ..Default::default()
        };
        let body = build_dust_body(&st, &gamma, BumpProfile::unit_mass(eps).unwrap(), (0.0, 1.0), &opts)
            .unwrap();
        (st, body)
    }

    #[test]
    fn symmetric_index_map_is_a_bijection() {
        let mut seen = [false; 10];
        for a in 0..4 {
            for b in a..4 {
                let i = SymmetricTensor2::index(a, b);
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(i, SymmetricTensor2::index(b, a));
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn bump_normalization_matches_closed_form_moment() {
        // ∫₀¹ s² e^{1/(s²−1)} ds, high-accuracy reference from an independent rule
        let p = BumpProfile::unit_mass(1.0).unwrap();
        let reference = 4.0 * std::f64::consts::PI * 0.035100738376487705;
        assert!((1.0 / p.amplitude - reference).abs() / reference < 1e-9);
    }

    #[test]
    fn static_dust_reads_back_profile() {
        let (_, body) = static_body(0.2, 12);
        let peak = body.mass_density(&Event::new(0.0, 0.0, 0.0, 0.0));
        assert!((peak - body.profile().peak()).abs() < 1e-12 * peak);
        assert_eq!(body.mass_density(&Event::new(0.5, 0.5, 0.0, 0.0)), 0.0);
        let p = body.congruence(&Event::new(0.7, 0.05, -0.02, 0.1)).unwrap();
        assert_eq!(p.u, [1.0, 0.0, 0.0, 0.0]);
        let direct = body.profile().density((0.05f64 * 0.05 + 0.02 * 0.02 + 0.01).sqrt());
        assert!((p.rho - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn static_dust_is_conserved() {
        let (st, body) = static_body(0.2, 12);
        let rep = check_conditions(&st, &body, 300, None).unwrap();
        assert!(rep.conservation < 1e-10, "{}", rep.conservation);
        assert_eq!(rep.mass_violations, 0);
        assert!(rep.support_points > 100);
        assert_eq!(rep.support, 0.0);
        assert_eq!(rep.symmetry, 0.0);
    }

    #[test]
    fn sign_flip_violates_mass_condition_everywhere() {
        let (st, body) = static_body(0.2, 12);
        let rep = check_conditions(&st, &body.scaled(-1.0), 200, None).unwrap();
        assert_eq!(rep.mass_violations, rep.support_points);
        assert!(rep.support_points > 0);
    }

    #[test]
    fn zeroed_body_has_no_support() {
        let (st, body) = static_body(0.2, 12);
        let rep = check_conditions(&st, &body.zeroed(), 100, None).unwrap();
        assert_eq!(rep.support_points, 0);
    }

    #[test]
    fn spline_reproduces_cubics_in_the_interior() {
        let f: Vec<f64> = (0..12).map(|i| 0.5 + 0.2 * i as f64 - 0.03 * (i * i) as f64).collect();
        let mut c = vec![0.0; 14];
        spline_prefilter(&f, &mut c, &mut Vec::new());
        for (i, fi) in f.iter().enumerate() {
            let (w, _) = bspline3(0.0);
            let v: f64 = (0..3).map(|k| w[k] * c[i + k]).sum();
            assert!((v - fi).abs() < 1e-13);
        }
        // quadratic data: the natural end condition only disturbs the ends
        let (w, dw) = bspline3(0.5);
        let v: f64 = (0..4).map(|k| w[k] * c[6 + k]).sum();
        let d: f64 = (0..4).map(|k| dw[k] * c[6 + k]).sum();
        let x: f64 = 6.5;
        assert!((v - (0.5 + 0.2 * x - 0.03 * x * x)).abs() < 1e-3);
        assert!((d - (0.2 - 0.06 * x)).abs() < 1e-3);
    }

    #[test]
    fn invalid_radius_rejected() {
        assert!(matches!(BumpProfile::unit_mass(0.0), Err(MatterError::InvalidRadius(_))));
        assert!(matches!(BumpProfile::unit_mass(f64::NAN), Err(MatterError::InvalidRadius(_))));
    }

    #[test]
    fn non_geodesic_curve_rejected() {
        let st = ClassicalSpacetime::flat(BoundingBox::slab(0.0, 1.0, 2.0));
        let samples = (0..20)
            .map(|i| {
                let t = i as f64 / 19.0;
                Sample {
                    s: t,
                    event: Event::new(t, 0.3 * t * t, 0.0, 0.0),
                    tangent: [1.0, 0.6 * t, 0.0, 0.0],
                }
            })
            .collect();
        let w = WorldLine::new(samples, Parametrization::TimeNormalized).unwrap();
        let r = build_dust_body(&st, &w, BumpProfile::unit_mass(0.1).unwrap(), (0.0, 1.0), &DustOptions::default());
        assert!(matches!(r, Err(MatterError::NotGeodesic { .. })));
    }
}
