//! Fluxes of a mass-momentum field through constant-time slices.
//!
//! Vector-valued integrals are taken component-wise against a cobasis that is
//! constant for a flat operator. For the coordinate operator the cobasis is
//! `dx^A`; otherwise covectors are parallel transported from an anchor event
//! (a time leg, then lines along x, y and z over the quadrature grid) together
//! with the adapted coordinates `X^A = ∫ σ^A`, which realize position fields as
//! coordinate differences.
//!
//! The slice measure is `dx dy dz`, so a unit-mass body has `t_a P^a = 1`.

use rayon::prelude::*;

use crate::error::FluxError;
use crate::geodesics::{lagrange_derivative_weights, Parametrization, Sample, WorldLine};
use crate::hull::{ConvexHull3, HULL_TOLERANCE};
use crate::matter::{MassMomentumField, SymmetricTensor2};
use crate::quadrature::{pairwise_sum, SimpsonGrid3};
use crate::spacetime::{DerivativeOperator, ADAPTED_H, ADAPTED_T};
use crate::tensor::{levi_civita, Event, Slot, Tensor, Valence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Orientation {
    #[default]
    Future,
    Past,
}

/// A bounded piece of the slice `t = time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hypersurface {
    pub time: f64,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub orientation: Orientation,
}

impl Hypersurface {
    pub fn future(time: f64, lo: [f64; 3], hi: [f64; 3]) -> Self {
        Hypersurface {
            time,
            lo,
            hi,
            orientation: Orientation::Future,
        }
    }

    pub fn sign(&self) -> f64 {
        match self.orientation {
            Orientation::Future => 1.0,
            Orientation::Past => -1.0,
        }
    }

    /// Unit normal covector `±t_a`.
    pub fn normal(&self) -> [f64; 4] {
        ADAPTED_T.map(|v| self.sign() * v)
    }

    pub fn diameter(&self) -> f64 {
        (0..3).map(|i| (self.hi[i] - self.lo[i]).powi(2)).sum::<f64>().sqrt()
    }

    /// The slice must contain the body's support box on it.
    pub fn check_slices(&self, m: &MassMomentumField) -> Result<(), FluxError> {
        let (lo, hi) = m.support_box(self.time);
        if (0..3).any(|i| lo[i] < self.lo[i] || hi[i] > self.hi[i]) {
            return Err(FluxError::SlicingViolated {
                t: self.time,
                needed_lo: lo,
                needed_hi: hi,
            });
        }
        Ok(())
    }
}

/// `ε_abcd` of the adapted chart with a chosen sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeElement {
    pub sign: f64,
}

impl Default for VolumeElement {
    fn default() -> Self {
        VolumeElement { sign: 1.0 }
    }
}

impl VolumeElement {
    pub fn tensor(&self) -> Tensor {
        levi_civita(self.sign)
    }

    /// `|ε_abcd ε_efgh h^bf h^cg h^dh − 6 t_a t_e|`.
    pub fn normalization_residual(&self) -> f64 {
        let eps = self.tensor();
        let h = Tensor::matrix(Valence::new(2, 0), &ADAPTED_H).expect("rank 2");
        let mut lhs = [[0.0; 4]; 4];
        for a in 0..4 {
            for e in 0..4 {
                let mut s = 0.0;
                for b in 0..4 {
                    for c in 0..4 {
                        for d in 0..4 {
                            let x = eps.get(&[a, b, c, d]);
                            if x == 0.0 {
                                continue;
                            }
                            for f in 0..4 {
                                for g in 0..4 {
                                    for hh in 0..4 {
                                        s += x
                                            * eps.get(&[e, f, g, hh])
                                            * h.get(&[b, f])
                                            * h.get(&[c, g])
                                            * h.get(&[d, hh]);
                                    }
                                }
                            }
                        }
                    }
                }
                lhs[a][e] = s;
            }
        }
        let mut r: f64 = 0.0;
        for a in 0..4 {
            for e in 0..4 {
                r = r.max((lhs[a][e] - 6.0 * ADAPTED_T[a] * ADAPTED_T[e]).abs());
            }
        }
        r
    }

    /// `ω_bcd` with `ε_abcd = n_[a ω_bcd]` for the future normal `n = t`.
    pub fn slice_form(&self) -> Tensor {
        Tensor::from_fn(Valence::new(0, 3), |i| {
            if i.contains(&0) {
                0.0
            } else {
                4.0 * self.tensor().get(&[0, i[0], i[1], i[2]])
            }
        })
        .expect("rank 3")
    }

    /// `|ε_abcd − n_[a ω_bcd]|` for the future normal.
    pub fn factorization_residual(&self) -> f64 {
        let n = Tensor::covector(ADAPTED_T);
        let prod = n.outer(&self.slice_form()).expect("rank 4");
        let alt = prod
            .antisymmetrize(&[Slot::Down(0), Slot::Down(1), Slot::Down(2), Slot::Down(3)])
            .expect("four lower slots");
        alt.max_abs_diff(&self.tensor()).expect("same valence")
    }
}

/// `(∫_Σ β^a ε_abcd, ¼ ∫_Σ (β^a n_a) ω_bcd)` evaluated on the slice's oriented
/// coordinate frame, by Simpson quadrature.
pub fn factorization_integrals<F>(
    vol: &VolumeElement,
    sigma: &Hypersurface,
    beta: F,
    intervals: usize,
) -> (f64, f64)
where
    F: Fn(&Event) -> [f64; 4] + Sync,
{
    let grid = SimpsonGrid3::new(sigma.lo, sigma.hi, [intervals; 3]);
    let eps = vol.tensor();
    let omega = vol.slice_form();
    let n = sigma.normal();
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (x, w) = grid.point(i);
            let b = beta(&Event::from_parts(sigma.time, x));
            let contracted = Tensor::vector(b)
                .product_contract(&eps, &[(Slot::Up(0), Slot::Down(0))])
                .expect("vector into 4-form");
            let bn: f64 = (0..4).map(|a| b[a] * n[a]).sum();
            (
                w * sigma.sign() * contracted.get(&[1, 2, 3]),
                w * 0.25 * bn * omega.get(&[1, 2, 3]),
            )
        })
        .unzip();
    (pairwise_sum(&lhs), pairwise_sum(&rhs))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxOptions {
    /// Simpson intervals across the support box (even).
    pub intervals: usize,
    /// Extra nodes on each side of the support box.
    pub pad_nodes: usize,
    /// RK4 steps per grid interval when transporting the cobasis.
    pub transport_substeps: usize,
}

impl Default for FluxOptions {
    fn default() -> Self {
        FluxOptions {
            intervals: 48,
            pad_nodes: 2,
            transport_substeps: 2,
        }
    }
}

/// Cobasis values and adapted coordinates at one event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CobasisPoint {
    /// `sigma[A][b]`; row 0 is `dt`.
    pub sigma: [[f64; 4]; 4],
    /// `X^A`, with `X^0 = t`.
    pub x: [f64; 4],
}

/// Transport state: spatial covectors `σ^A_b` (A = 1..3) and `X^A`.
type TransportState = [f64; 15];

/// Four covector fields constant relative to a flat operator.
#[derive(Clone)]
pub struct ConstantCobasis {
    op: DerivativeOperator,
    anchor: Event,
    frame: [[f64; 3]; 3],
    time_step: f64,
}

impl std::fmt::Debug for ConstantCobasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstantCobasis")
            .field("anchor", &self.anchor)
            .field("frame", &self.frame)
            .field("coordinate", &self.op.is_coordinate())
            .finish()
    }
}

impl ConstantCobasis {
    /// Cobasis equal to `dx^A` at `anchor`.
    pub fn new(op: DerivativeOperator, anchor: Event) -> Self {
        ConstantCobasis {
            op,
            anchor,
            frame: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            time_step: 0.01,
        }
    }

    /// Spatial covectors replaced by `R σ`.
    pub fn rotated(&self, r: [[f64; 3]; 3]) -> Self {
        let mut frame = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                frame[a][b] = (0..3).map(|k| r[a][k] * self.frame[k][b]).sum();
            }
        }
        ConstantCobasis {
            frame,
            ..self.clone()
        }
    }

    pub fn operator(&self) -> &DerivativeOperator {
        &self.op
    }

    pub fn anchor(&self) -> Event {
        self.anchor
    }

    pub fn frame(&self) -> [[f64; 3]; 3] {
        self.frame
    }

    fn initial_state(&self) -> TransportState {
        let mut s = [0.0; 15];
        for a in 0..3 {
            for b in 0..3 {
                s[4 * a + b + 1] = self.frame[a][b];
            }
        }
        s
    }

    fn rhs(&self, e: &Event, dx: &[f64; 4], s: &TransportState) -> Result<TransportState, FluxError> {
        if !self.op.bounds().contains(e) {
            return Err(FluxError::TransportOutside(*e));
        }
        let c = self.op.christoffel(e);
        let mut out = [0.0; 15];
        for a in 0..3 {
            for b in 0..4 {
                let mut acc = 0.0;
                for (m, dm) in dx.iter().enumerate() {
                    if *dm == 0.0 {
                        continue;
                    }
                    for n in 0..4 {
                        acc -= dm * c[n][m][b] * s[4 * a + n];
                    }
                }
                out[4 * a + b] = acc;
            }
            out[12 + a] = (0..4).map(|m| s[4 * a + m] * dx[m]).sum();
        }
        Ok(out)
    }

    /// RK4 along the straight segment `from → to`.
    fn leg(
        &self,
        from: &Event,
        to: &Event,
        steps: usize,
        mut s: TransportState,
    ) -> Result<TransportState, FluxError> {
        let dx = [0, 1, 2, 3].map(|k| to.0[k] - from.0[k]);
        let h = 1.0 / steps as f64;
        let at = |lam: f64| from.offset(&dx, lam);
        for i in 0..steps {
            let l = i as f64 * h;
            let k1 = self.rhs(&at(l), &dx, &s)?;
            let mut tmp = s;
            for j in 0..15 {
                tmp[j] = s[j] + 0.5 * h * k1[j];
            }
            let k2 = self.rhs(&at(l + 0.5 * h), &dx, &tmp)?;
            for j in 0..15 {
                tmp[j] = s[j] + 0.5 * h * k2[j];
            }
            let k3 = self.rhs(&at(l + 0.5 * h), &dx, &tmp)?;
            for j in 0..15 {
                tmp[j] = s[j] + h * k3[j];
            }
            let k4 = self.rhs(&at(l + h), &dx, &tmp)?;
            for j in 0..15 {
                s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        Ok(s)
    }

    fn to_point(&self, t: f64, s: &TransportState) -> CobasisPoint {
        let mut sigma = [[0.0; 4]; 4];
        sigma[0] = ADAPTED_T;
        for a in 0..3 {
            sigma[a + 1].copy_from_slice(&s[4 * a..4 * a + 4]);
        }
        CobasisPoint {
            sigma,
            x: [t, s[12], s[13], s[14]],
        }
    }

    fn coordinate_point(&self, e: &Event) -> CobasisPoint {
        let mut sigma = [[0.0; 4]; 4];
        sigma[0] = ADAPTED_T;
        let mut x = [e.time(), 0.0, 0.0, 0.0];
        for a in 0..3 {
            for b in 0..3 {
                sigma[a + 1][b + 1] = self.frame[a][b];
                x[a + 1] += self.frame[a][b] * (e.0[b + 1] - self.anchor.0[b + 1]);
            }
        }
        CobasisPoint { sigma, x }
    }

    fn time_leg(&self, t: f64) -> Result<TransportState, FluxError> {
        let end = Event([t, self.anchor.0[1], self.anchor.0[2], self.anchor.0[3]]);
        let steps = ((t - self.anchor.time()).abs() / self.time_step).ceil().max(1.0) as usize;
        self.leg(&self.anchor, &end, steps, self.initial_state())
    }

    /// Cobasis and adapted coordinates at `e` (time leg, then a straight spatial leg).
    pub fn at(&self, e: &Event) -> Result<CobasisPoint, FluxError> {
        if self.op.is_coordinate() {
            return Ok(self.coordinate_point(e));
        }
        let s = self.time_leg(e.time())?;
        let start = Event([e.time(), self.anchor.0[1], self.anchor.0[2], self.anchor.0[3]]);
        let dist = (1..4).map(|k| (e.0[k] - start.0[k]).powi(2)).sum::<f64>().sqrt();
        let steps = (dist / self.time_step).ceil().max(4.0) as usize;
        let s = self.leg(&start, e, steps, s)?;
        Ok(self.to_point(e.time(), &s))
    }

    /// Cobasis on every node of `grid` on the slice `t`, in the grid's order.
    pub fn on_grid(
        &self,
        t: f64,
        grid: &SimpsonGrid3,
        substeps: usize,
    ) -> Result<Vec<CobasisPoint>, FluxError> {
        let [xs, ys, zs] = &grid.nodes;
        let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
        if self.op.is_coordinate() {
            let mut out = Vec::with_capacity(nx * ny * nz);
            for x in xs {
                for y in ys {
                    for z in zs {
                        out.push(self.coordinate_point(&Event::new(t, *x, *y, *z)));
                    }
                }
            }
            return Ok(out);
        }
        let substeps = substeps.max(1);
        let s = self.time_leg(t)?;
        let start = Event([t, self.anchor.0[1], self.anchor.0[2], self.anchor.0[3]]);
        let corner = Event::new(t, xs[0], ys[0], zs[0]);
        let dist = (1..4).map(|k| (corner.0[k] - start.0[k]).powi(2)).sum::<f64>().sqrt();
        let s = self.leg(&start, &corner, (dist / self.time_step).ceil().max(4.0) as usize, s)?;
        let mut xline = Vec::with_capacity(nx);
        xline.push(s);
        for i in 1..nx {
            let a = Event::new(t, xs[i - 1], ys[0], zs[0]);
            let b = Event::new(t, xs[i], ys[0], zs[0]);
            let next = self.leg(&a, &b, substeps, xline[i - 1])?;
            xline.push(next);
        }
        let planes: Vec<Vec<TransportState>> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let mut yline = Vec::with_capacity(ny);
                yline.push(xline[i]);
                for j in 1..ny {
                    let a = Event::new(t, xs[i], ys[j - 1], zs[0]);
                    let b = Event::new(t, xs[i], ys[j], zs[0]);
                    let next = self.leg(&a, &b, substeps, yline[j - 1])?;
                    yline.push(next);
                }
                let mut col = Vec::with_capacity(ny * nz);
                for (j, sj) in yline.iter().enumerate() {
                    col.push(*sj);
                    for k in 1..nz {
                        let a = Event::new(t, xs[i], ys[j], zs[k - 1]);
                        let b = Event::new(t, xs[i], ys[j], zs[k]);
                        let next = self.leg(&a, &b, substeps, col[col.len() - 1])?;
                        col.push(next);
                    }
                }
                Ok(col)
            })
            .collect::<Result<_, FluxError>>()?;
        Ok(planes
            .iter()
            .flat_map(|p| p.iter().map(|s| self.to_point(t, s)))
            .collect())
    }

    /// Spatial point on the slice `t` whose adapted coordinates are `target`.
    pub fn locate(&self, t: f64, target: &[f64; 3], guess: [f64; 3]) -> Result<[f64; 3], FluxError> {
        let mut x = guess;
        for _ in 0..30 {
            let p = self.at(&Event::from_parts(t, x))?;
            let f = [0, 1, 2].map(|a| p.x[a + 1] - target[a]);
            let err = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if err < 1e-13 * (1.0 + target.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                return Ok(x);
            }
            let jac = [0, 1, 2].map(|a| [p.sigma[a + 1][1], p.sigma[a + 1][2], p.sigma[a + 1][3]]);
            let step = solve3(&jac, &f).ok_or(FluxError::DegenerateCobasis(Event::from_parts(t, x)))?;
            for i in 0..3 {
                x[i] -= step[i];
            }
        }
        Ok(x)
    }
}

fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = *m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

/// Zeroth and first moments of a body on one slice, in cobasis components.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceMoments {
    pub time: f64,
    /// `P^A = ∫ σ^A_b T^bc t_c`.
    pub p: [f64; 4],
    /// `M^AB = ∫ X^A σ^B_b T^bc t_c`.
    pub first: [[f64; 4]; 4],
    /// Adapted coordinates of extreme support nodes along x-lines.
    pub hull_points: Vec<[f64; 3]>,
    pub support_nodes: usize,
    pub sign: f64,
}

impl SliceMoments {
    pub fn mass(&self) -> f64 {
        self.p[0]
    }

    /// `J^AB(p)` for a point with adapted coordinates `xp`.
    pub fn angular_momentum(&self, xp: &[f64; 4]) -> [[f64; 4]; 4] {
        let mut j = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                j[a][b] = 0.5
                    * (self.first[a][b] - self.first[b][a] - xp[a] * self.p[b] + xp[b] * self.p[a]);
            }
        }
        j
    }

    /// Adapted coordinates of the mass-weighted mean position.
    pub fn mean_position(&self) -> Result<[f64; 3], FluxError> {
        let m = self.mass();
        if !(m.abs() > 0.0) {
            return Err(FluxError::NoMass { t: self.time });
        }
        Ok([1, 2, 3].map(|a| self.first[a][0] / m))
    }
}

/// Simpson grid over the support box on Σ, padded by whole nodes.
pub fn slice_grid(m: &MassMomentumField, sigma: &Hypersurface, opts: &FluxOptions) -> SimpsonGrid3 {
    let n = opts.intervals + opts.intervals % 2;
    let (lo, hi) = m.support_box(sigma.time);
    let mut plo = [0.0; 3];
    let mut phi = [0.0; 3];
    for i in 0..3 {
        let h = (hi[i] - lo[i]) / n as f64;
        plo[i] = lo[i] - opts.pad_nodes as f64 * h;
        phi[i] = hi[i] + opts.pad_nodes as f64 * h;
    }
    SimpsonGrid3::new(plo, phi, [n + 2 * opts.pad_nodes; 3])
}

pub fn slice_moments(
    m: &MassMomentumField,
    sigma: &Hypersurface,
    cob: &ConstantCobasis,
    opts: &FluxOptions,
) -> Result<SliceMoments, FluxError> {
    let (w0, w1) = m.window();
    if !(sigma.time >= w0 && sigma.time <= w1) {
        return Err(FluxError::OutsideWindow { t: sigma.time });
    }
    sigma.check_slices(m)?;
    let grid = slice_grid(m, sigma, opts);
    let frames = cob.on_grid(sigma.time, &grid, opts.transport_substeps)?;
    let sampler = m.slice(sigma.time).map_err(|_| FluxError::OutsideWindow { t: sigma.time })?;
    let values: Vec<SymmetricTensor2> = (0..grid.len())
        .into_par_iter()
        .map(|i| sampler.eval(&grid.point(i).0))
        .collect();
    let sign = sigma.sign();
    let contributions: Vec<[f64; 20]> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let t = &values[i];
            let mut out = [0.0; 20];
            if t.is_zero() {
                return out;
            }
            let w = sign * grid.point(i).1;
            let f = &frames[i];
            let flux = [0, 1, 2, 3].map(|b| t.get(b, 0));
            let mut pa = [0.0; 4];
            for (a, pv) in pa.iter_mut().enumerate() {
                *pv = (0..4).map(|b| f.sigma[a][b] * flux[b]).sum();
            }
            for a in 0..4 {
                out[a] = w * pa[a];
                for b in 0..4 {
                    out[4 + 4 * a + b] = w * f.x[a] * pa[b];
                }
            }
            out
        })
        .collect();
    let sum = |k: usize| pairwise_sum(&contributions.iter().map(|c| c[k]).collect::<Vec<_>>());
    let mut p = [0.0; 4];
    let mut first = [[0.0; 4]; 4];
    for a in 0..4 {
        p[a] = sum(a);
        for b in 0..4 {
            first[a][b] = sum(4 + 4 * a + b);
        }
    }
    let [xs, ys, zs] = &grid.nodes;
    let (ny, nz) = (ys.len(), zs.len());
    let mut hull_points = Vec::new();
    let mut support_nodes = 0;
    for j in 0..ny {
        for k in 0..nz {
            let mut first_ix = None;
            let mut last_ix = None;
            for i in 0..xs.len() {
                let idx = (i * ny + j) * nz + k;
                if !values[idx].is_zero() {
                    support_nodes += 1;
                    first_ix.get_or_insert(idx);
                    last_ix = Some(idx);
                }
            }
            for idx in [first_ix, last_ix].into_iter().flatten() {
                let x = frames[idx].x;
                hull_points.push([x[1], x[2], x[3]]);
            }
        }
    }
    hull_points.dedup();
    Ok(SliceMoments {
        time: sigma.time,
        p,
        first,
        hull_points,
        support_nodes,
        sign,
    })
}

/// `P^a(Σ)` in cobasis components.
pub fn momentum_flux(
    m: &MassMomentumField,
    sigma: &Hypersurface,
    cob: &ConstantCobasis,
    opts: &FluxOptions,
) -> Result<Tensor, FluxError> {
    Ok(Tensor::vector(slice_moments(m, sigma, cob, opts)?.p))
}

/// `J^ab(Σ, p)` in cobasis components.
pub fn angular_momentum_flux(
    m: &MassMomentumField,
    sigma: &Hypersurface,
    p: &Event,
    cob: &ConstantCobasis,
    opts: &FluxOptions,
) -> Result<Tensor, FluxError> {
    let mom = slice_moments(m, sigma, cob, opts)?;
    let xp = cob.at(p)?.x;
    let j = mom.angular_momentum(&xp);
    Ok(Tensor::from_fn(Valence::new(2, 0), |i| j[i[0]][i[1]]).expect("rank 2"))
}

/// `t_a P^a(Σ)`.
pub fn total_mass(
    m: &MassMomentumField,
    sigma: &Hypersurface,
    cob: &ConstantCobasis,
    opts: &FluxOptions,
) -> Result<f64, FluxError> {
    Ok(slice_moments(m, sigma, cob, opts)?.mass())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterOfMass {
    pub event: Event,
    /// Adapted coordinates of the center.
    pub adapted: [f64; 3],
    /// `max_A |J^{A b}(Σ, q) t_b|`.
    pub j_residual: f64,
    /// `1e-5 ·` slice diameter.
    pub tolerance: f64,
    /// Signed distance to the support hull in adapted coordinates.
    pub hull_distance: f64,
    pub moments: SliceMoments,
}

impl CenterOfMass {
    pub fn in_hull(&self) -> bool {
        self.hull_distance <= HULL_TOLERANCE
    }
}

/// Center of mass from moments, measuring positions from `origin`.
pub fn center_of_mass_from(
    mom: SliceMoments,
    sigma: &Hypersurface,
    origin: &Event,
    cob: &ConstantCobasis,
) -> Result<CenterOfMass, FluxError> {
    let mass = mom.mass();
    if !(mass > 0.0) {
        return Err(FluxError::NoMass { t: sigma.time });
    }
    let xo = cob.at(&Event::from_parts(sigma.time, origin.spatial()))?.x;
    // R^A = ∫ χ_o^A ρ / M, χ_o = X − X(o)
    let r = [1, 2, 3].map(|a| (mom.first[a][0] - xo[a] * mass) / mass);
    let target = [0, 1, 2].map(|a| xo[a + 1] + r[a]);
    let guess = [0, 1, 2].map(|a| origin.0[a + 1] + r[a]);
    let x = cob.locate(sigma.time, &target, guess)?;
    let event = Event::from_parts(sigma.time, x);
    let xq = cob.at(&event)?.x;
    let j = mom.angular_momentum(&xq);
    let j_residual = (0..4).fold(0.0f64, |acc, a| acc.max(j[a][0].abs()));
    let hull = ConvexHull3::new(&mom.hull_points)?;
    let hull_distance = hull.signed_distance(&[xq[1], xq[2], xq[3]]);
    Ok(CenterOfMass {
        event,
        adapted: [xq[1], xq[2], xq[3]],
        j_residual,
        tolerance: 1e-5 * sigma.diameter(),
        hull_distance,
        moments: mom,
    })
}

pub fn center_of_mass(
    m: &MassMomentumField,
    sigma: &Hypersurface,
    cob: &ConstantCobasis,
    opts: &FluxOptions,
) -> Result<CenterOfMass, FluxError> {
    let mom = slice_moments(m, sigma, cob, opts)?;
    let c = m.tube_center(sigma.time);
    center_of_mass_from(mom, sigma, &Event::from_parts(sigma.time, c), cob)
}

/// One row of the slice table.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceReport {
    pub t: f64,
    pub p: [f64; 4],
    pub mass: f64,
    pub com: [f64; 3],
    pub j_residual: f64,
    pub in_hull: bool,
}

impl SliceReport {
    /// `V^a = P^a / (P^n t_n)`.
    pub fn velocity(&self) -> [f64; 4] {
        self.p.map(|v| v / self.p[0])
    }
}

#[derive(Clone, Debug)]
pub struct ComTrack {
    pub worldline: WorldLine,
    pub slices: Vec<SliceReport>,
}

/// Center-of-mass events on each slice, with finite-difference tangents.
pub fn com_worldline(
    m: &MassMomentumField,
    slices: &[Hypersurface],
    cob: &ConstantCobasis,
    opts: &FluxOptions,
) -> Result<ComTrack, FluxError> {
    if slices.len() < 2 {
        return Err(FluxError::InvalidInput("need at least two slices".into()));
    }
    if slices.windows(2).any(|w| !(w[1].time > w[0].time)) {
        return Err(FluxError::InvalidInput("slice times must increase".into()));
    }
    let mut reports = Vec::with_capacity(slices.len());
    for s in slices {
        let c = center_of_mass(m, s, cob, opts)?;
        reports.push(SliceReport {
            t: s.time,
            p: c.moments.p,
            mass: c.moments.mass(),
            com: c.event.spatial(),
            j_residual: c.j_residual,
            in_hull: c.in_hull(),
        });
    }
    let times: Vec<f64> = reports.iter().map(|r| r.t).collect();
    let n = times.len();
    let width = n.min(5);
    let samples = (0..n)
        .map(|i| {
            let start = i.saturating_sub(width / 2).min(n - width);
            let w = lagrange_derivative_weights(&times[start..start + width], i - start);
            let mut v = [0.0; 3];
            for (k, wk) in w.iter().enumerate() {
                for a in 0..3 {
                    v[a] += wk * reports[start + k].com[a];
                }
            }
            Sample {
                s: times[i],
                event: Event::from_parts(times[i], reports[i].com),
                tangent: [1.0, v[0], v[1], v[2]],
            }
        })
        .collect();
    Ok(ComTrack {
        worldline: WorldLine::new(samples, Parametrization::TimeNormalized)?,
        slices: reports,
    })
}

pub const SLICE_CSV_HEADER: &str = "t,P0,P1,P2,P3,mass,com_x,com_y,com_z,j_residual";

pub fn write_slice_csv<W: std::io::Write>(rows: &[SliceReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SLICE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.t, r.p[0], r.p[1], r.p[2], r.p[3], r.mass, r.com[0], r.com[1], r.com[2], r.j_residual
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JDerivativeReport {
    /// `sup |∂_m J^BC + δ_m^[B P^C]|` over the events.
    pub j_residual: f64,
    /// `sup |∇P|`; zero because `P` is one constant per body.
    pub p_residual: f64,
    /// Largest spread of `P` over the slices used.
    pub p_spread: f64,
}

/// Finite-difference check of `∇_a J^bc = −δ_a^[b P^c]` for the field
/// `p ↦ J(Σ_p, p)`, `Σ_p` being the slice through `p`.
pub fn check_j_derivative(
    m: &MassMomentumField,
    region: ([f64; 3], [f64; 3]),
    cob: &ConstantCobasis,
    events: &[Event],
    step: f64,
    opts: &FluxOptions,
) -> Result<JDerivativeReport, FluxError> {
    if !(step > 0.0) {
        return Err(FluxError::InvalidInput(format!("step must be positive, got {step}")));
    }
    let mut cache: Vec<(f64, SliceMoments)> = Vec::new();
    let mut moments_at = |t: f64| -> Result<SliceMoments, FluxError> {
        if let Some((_, mom)) = cache.iter().find(|(tt, _)| *tt == t) {
            return Ok(mom.clone());
        }
        let mom = slice_moments(m, &Hypersurface::future(t, region.0, region.1), cob, opts)?;
        cache.push((t, mom.clone()));
        Ok(mom)
    };
    let mut rep = JDerivativeReport::default();
    let mut p_lo = [f64::INFINITY; 4];
    let mut p_hi = [f64::NEG_INFINITY; 4];
    for e in events {
        let p = moments_at(e.time())?.p;
        let sigma = cob.at(e)?.sigma;
        for axis in 0..4 {
            let mut d = [[0.0; 4]; 4];
            for (k, c) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
                let q = e.shifted(axis, k * step);
                let mom = moments_at(q.time())?;
                for a in 0..4 {
                    p_lo[a] = p_lo[a].min(mom.p[a]);
                    p_hi[a] = p_hi[a].max(mom.p[a]);
                }
                let j = mom.angular_momentum(&cob.at(&q)?.x);
                for b in 0..4 {
                    for cc in 0..4 {
                        d[b][cc] += c * j[b][cc] / (12.0 * step);
                    }
                }
            }
            for b in 0..4 {
                for c in 0..4 {
                    let expected = -0.5 * (sigma[b][axis] * p[c] - sigma[c][axis] * p[b]);
                    rep.j_residual = rep.j_residual.max((d[b][c] - expected).abs());
                }
            }
        }
    }
    rep.p_spread = (0..4).fold(0.0f64, |acc, a| acc.max(p_hi[a] - p_lo[a]));
    Ok(rep)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StokesReport {
    /// `P(Σ₂) − P(Σ₁)`.
    pub flux_difference: [f64; 4],
    /// Flux out through the box's spatial faces between the slices.
    pub side_flux: [f64; 4],
    /// `∫ ∂_a T^aB` over the slab.
    pub volume_divergence: [f64; 4],
}

impl StokesReport {
    /// Boundary integral `P(Σ₂) − P(Σ₁) + side flux`.
    pub fn boundary(&self) -> f64 {
        (0..4).fold(0.0f64, |m, a| m.max((self.flux_difference[a] + self.side_flux[a]).abs()))
    }

    /// Mismatch between the boundary integral and the volume integral.
    pub fn consistency(&self) -> f64 {
        (0..4).fold(0.0f64, |m, a| {
            m.max((self.flux_difference[a] + self.side_flux[a] - self.volume_divergence[a]).abs())
        })
    }
}

/// Boundary and volume forms of the flux balance over the slab between two
/// slices, for the coordinate cobasis.
pub fn stokes_check(
    m: &MassMomentumField,
    s1: &Hypersurface,
    s2: &Hypersurface,
    cob: &ConstantCobasis,
    opts: &FluxOptions,
    slab_intervals: [usize; 2],
) -> Result<StokesReport, FluxError> {
    if !cob.operator().is_coordinate() {
        return Err(FluxError::InvalidInput(
            "slab balance needs the coordinate operator".into(),
        ));
    }
    if !(s2.time > s1.time) {
        return Err(FluxError::InvalidInput("second slice must be later".into()));
    }
    let p1 = slice_moments(m, s1, cob, opts)?.p;
    let p2 = slice_moments(m, s2, cob, opts)?.p;
    let frame = cob.coordinate_point(&cob.anchor()).sigma;
    let [nt, nx] = slab_intervals.map(|n| n + n % 2);
    let (tn, tw) = crate::quadrature::simpson_rule(s1.time, s2.time, nt);
    // box: union of support boxes, padded
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for t in &tn {
        let (l, h) = m.support_box(*t);
        for i in 0..3 {
            lo[i] = lo[i].min(l[i]);
            hi[i] = hi[i].max(h[i]);
        }
    }
    for i in 0..3 {
        let pad = 0.1 * (hi[i] - lo[i]);
        lo[i] -= pad;
        hi[i] += pad;
    }
    let grid = SimpsonGrid3::new(lo, hi, [nx; 3]);
    let op = cob.operator().clone();
    let step = m.default_step();
    let mut volume = [0.0; 4];
    for (t, wt) in tn.iter().zip(&tw) {
        let t = t.clamp(s1.time + 2.0 * step, s2.time - 2.0 * step);
        let parts: Vec<[f64; 4]> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let (x, w) = grid.point(i);
                let e = Event::from_parts(t, x);
                match m.divergence(&op, &e, step) {
                    Ok(d) => {
                        let mut out = [0.0; 4];
                        for a in 0..4 {
                            out[a] = w * (0..4).map(|b| frame[a][b] * d[b]).sum::<f64>();
                        }
                        out
                    }
                    Err(_) => [0.0; 4],
                }
            })
            .collect();
        for a in 0..4 {
            volume[a] += wt * pairwise_sum(&parts.iter().map(|p| p[a]).collect::<Vec<_>>());
        }
    }
    // faces: outward flux ∫ T^{iB} n_i over each face, integrated in time
    let mut side = [0.0; 4];
    let (fn_, fw) = crate::quadrature::simpson_rule(0.0, 1.0, nx);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for (face, sgn) in [(lo[axis], -1.0), (hi[axis], 1.0)] {
            for (t, wt) in tn.iter().zip(&tw) {
                for (a_i, a) in fn_.iter().enumerate() {
                    for (b_i, b) in fn_.iter().enumerate() {
                        let mut x = [0.0; 3];
                        x[axis] = face;
                        x[u] = lo[u] + a * (hi[u] - lo[u]);
                        x[v] = lo[v] + b * (hi[v] - lo[v]);
                        let w = wt * fw[a_i] * fw[b_i] * (hi[u] - lo[u]) * (hi[v] - lo[v]);
                        if let Ok(tt) = m.eval(&Event::from_parts(*t, x)) {
                            for c in 0..4 {
                                let flux: f64 = (0..4).map(|b| frame[c][b] * tt.get(axis + 1, b)).sum();
                                side[c] += sgn * w * flux;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut flux_difference = [0.0; 4];
    for a in 0..4 {
        flux_difference[a] = p2[a] - p1[a];
    }
    Ok(StokesReport {
        flux_difference,
        side_flux: side,
        volume_divergence: volume,
    })
}
