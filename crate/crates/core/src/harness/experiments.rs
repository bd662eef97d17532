use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;

use super::plot::{loglog_svg, track_svg, Series};
use super::{create_file, write_summary, CheckRow, ExperimentConfig, HarnessError};
use crate::flux::{
    center_of_mass_from, check_j_derivative, com_worldline, slice_moments, stokes_check, write_slice_csv, ComTrack,
    ConstantCobasis, Hypersurface, SliceMoments, SliceReport,
};
use crate::geodesics::{integrate_forced, integrate_geodesic, WorldLine};
use crate::matter::{build_dust_body, check_conditions, BumpProfile, MassMomentumField};
use crate::potential::{GeometrizedConnection, Uniform};
use crate::sampling::{halton, Region};
use crate::spacetime::{christoffel_max_diff, riemann, DerivativeOperator};
use crate::tensor::{Event, Tensor};
use crate::trautman::{flat_operator_on_curve, geometrize, recover, GeometrizedModel, NewtonianModel};

fn check_events(region: &Region, n: usize) -> Vec<Event> {
    let margin = 3e-3 * region.bbox.finite_extent().unwrap_or(1.0);
    region.samples(n, margin)
}

fn models(cfg: &ExperimentConfig) -> Result<(NewtonianModel, GeometrizedModel), HarnessError> {
    let n = NewtonianModel::new(cfg.spacetime.potential(), cfg.region());
    let g = if cfg.spacetime.is_flat() {
        GeometrizedModel {
            spacetime: n.spacetime.clone(),
            density: n.density.clone(),
            region: n.region,
        }
    } else {
        geometrize(&n)?
    };
    Ok((n, g))
}

struct Setup {
    geometrized: GeometrizedModel,
    gamma: WorldLine,
    cobasis: ConstantCobasis,
    slices: Vec<Hypersurface>,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Setup, HarnessError> {
        let (_, g) = models(cfg)?;
        let st = &g.spacetime;
        let [w0, w1] = cfg.body.window;
        let e0 = Event::from_parts(w0, cfg.body.position);
        let v = cfg.body.velocity;
        let gamma = integrate_geodesic(
            &st.op,
            &e0,
            &Tensor::vector([1.0, v[0], v[1], v[2]]),
            w1 - w0,
            cfg.checks.geodesic_tolerance,
        )?;
        let flat = if cfg.spacetime.is_flat() {
            st.op.clone()
        } else {
            flat_operator_on_curve(st, &gamma)?
        };
        Ok(Setup {
            cobasis: ConstantCobasis::new(flat, e0),
            slices: cfg.hypersurfaces(),
            geometrized: g,
            gamma,
        })
    }

    fn body(&self, cfg: &ExperimentConfig, epsilon: f64) -> Result<MassMomentumField, HarnessError> {
        let [w0, w1] = cfg.body.window;
        let m = build_dust_body(
            &self.geometrized.spacetime,
            &self.gamma,
            BumpProfile::unit_mass(epsilon)?,
            (w0, w1),
            &cfg.body.dust,
        )?
        .with_density_source(cfg.body.density);
        Ok(match cfg.body.clip {
            Some(c) => m.clipped(c.axis, c.cut, c.t_cut),
            None => m,
        })
    }
}

/// Compatibility and orthogonality of the configured spacetime.
pub fn check_spacetime(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, HarnessError> {
    let (_, g) = models(cfg)?;
    let ev = check_events(&cfg.region(), cfg.checks.events);
    let rep = g.spacetime.compatibility(&ev)?;
    let tol = cfg.tolerances.compatibility;
    Ok(vec![
        CheckRow::new("Compatibility", "orthogonality", rep.orthogonality, tol),
        CheckRow::new("Compatibility", "signature", rep.signature, tol),
        CheckRow::new("Compatibility", "temporal", rep.temporal, tol),
        CheckRow::new("Compatibility", "spatial", rep.spatial, tol),
    ])
}

/// Curvature conditions of the geometrized operator and the free-fall equivalence.
pub fn geometrize_report(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, HarnessError> {
    let (n, g) = models(cfg)?;
    let ev = check_events(&cfg.region(), cfg.checks.events);
    let cc = g.cc_report(&ev)?;
    let tol = cfg.tolerances.curvature;
    Ok(vec![
        CheckRow::new("Geometrize", "cc1", cc.cc1, tol),
        CheckRow::new("Geometrize", "cc2", cc.cc2, tol),
        CheckRow::new("Geometrize", "cc3", cc.cc3, tol),
        CheckRow::new(
            "EquivalenceG",
            "sup_distance",
            equivalence_trials(cfg, &n, &g)?,
            cfg.tolerances.equivalence,
        ),
    ])
}

/// Sup distance between free fall under the curved operator and forced
/// motion under the flat one, over quasi-random timelike initial data whose
/// forced trajectories stay in the region.
pub fn equivalence_trials(
    cfg: &ExperimentConfig,
    n: &NewtonianModel,
    g: &GeometrizedModel,
) -> Result<f64, HarnessError> {
    let c = &cfg.checks;
    let region = cfg.region();
    let b = region
        .bbox
        .shrunk(3e-3 * region.bbox.finite_extent().unwrap_or(1.0));
    let span = c.equivalence_span;
    if !(b.hi[0] - b.lo[0] > span) {
        return Err(HarnessError::Config(
            "region.time is shorter than checks.equivalence_span".into(),
        ));
    }
    let mut index = 1 + 10_000 * cfg.run.seed;
    let limit = index + 1000 * c.equivalence_trials as u64 + 1000;
    let mut accepted = 0;
    let mut worst: f64 = 0.0;
    while accepted < c.equivalence_trials {
        if index >= limit {
            return Err(HarnessError::Unsupported(
                "could not place equivalence trials inside the region".into(),
            ));
        }
        let q = halton(index, 7);
        index += 1;
        let t = b.lo[0] + q[0] * (b.hi[0] - span - b.lo[0]);
        let x = [1, 2, 3].map(|k| b.lo[k] + q[k] * (b.hi[k] - b.lo[k]));
        let v = [4, 5, 6].map(|k| c.equivalence_speed * (2.0 * q[k] - 1.0));
        let e0 = Event::from_parts(t, x);
        if !region.contains(&e0) {
            continue;
        }
        let v0 = Tensor::vector([1.0, v[0], v[1], v[2]]);
        let Ok(forced) = integrate_forced(&n.spacetime.op, n.potential.as_ref(), &e0, &v0, span, c.ode_tolerance)
        else {
            continue;
        };
        if !forced.samples().iter().all(|s| region.contains(&s.event)) {
            continue;
        }
        let free = integrate_geodesic(&g.spacetime.op, &e0, &v0, span, c.ode_tolerance)?;
        worst = worst.max(free.sup_distance(&forced)?);
        accepted += 1;
    }
    Ok(worst)
}

/// Whether the x, y, z legs from `a` to `b` keep clear of a shell's hole.
fn legs_clear(region: &Region, a: [f64; 3], b: [f64; 3]) -> bool {
    let Some(shell) = region.shell else {
        return true;
    };
    let mut p = a;
    for axis in 0..3 {
        let (lo, hi) = (p[axis].min(b[axis]), p[axis].max(b[axis]));
        let mut nearest = p;
        nearest[axis] = shell.center[axis].clamp(lo, hi);
        let d2: f64 = (0..3).map(|k| (nearest[k] - shell.center[k]).powi(2)).sum();
        if d2.sqrt() < shell.r_min {
            return false;
        }
        p[axis] = b[axis];
    }
    true
}

fn recover_rows(cfg: &ExperimentConfig, n: &NewtonianModel, g: &GeometrizedModel) -> Result<Vec<CheckRow>, HarnessError> {
    let region = cfg.region();
    let ev = check_events(&region, cfg.checks.events);
    let anchor = ev[0];
    let back = recover(g, &anchor)?;
    let phi = &n.potential;
    let mut worst: f64 = 0.0;
    for e in ev.iter().filter(|e| legs_clear(&region, anchor.spatial(), e.spatial())) {
        // the recovered gauge vanishes at the anchor's position on every slice
        let gauge = phi.value(&Event::from_parts(e.time(), anchor.spatial()));
        worst = worst.max((back.potential.value(e) - phi.value(e) + gauge).abs());
    }
    let again = geometrize(&back)?;
    let op = again.spacetime.op.max_difference(&g.spacetime.op, &ev);
    Ok(vec![
        CheckRow::new("TrautmanRoundTrip", "potential", worst, cfg.tolerances.recovery_potential),
        CheckRow::new("TrautmanRoundTrip", "operator", op, cfg.tolerances.recovery_operator),
    ])
}

/// Recovers the potential from the geometrized operator and geometrizes it again.
pub fn recover_report(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>, HarnessError> {
    let (n, g) = models(cfg)?;
    recover_rows(cfg, &n, &g)
}

/// Least-squares line `x(t) = origin + slope · t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub origin: [f64; 3],
    pub slope: [f64; 3],
    /// Largest chart distance of a point from the line.
    pub residual: f64,
}

pub fn fit_line(points: &[(f64, [f64; 3])]) -> LineFit {
    let n = points.len() as f64;
    let tm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let xm = [0, 1, 2].map(|a| points.iter().map(|p| p.1[a]).sum::<f64>() / n);
    let stt: f64 = points.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let slope = [0, 1, 2].map(|a| {
        if stt > 0.0 {
            points.iter().map(|p| (p.0 - tm) * (p.1[a] - xm[a])).sum::<f64>() / stt
        } else {
            0.0
        }
    });
    let origin = [0, 1, 2].map(|a| xm[a] - slope[a] * tm);
    let norm = (1.0 + slope.iter().map(|s| s * s).sum::<f64>()).sqrt();
    let d = [1.0 / norm, slope[0] / norm, slope[1] / norm, slope[2] / norm];
    let residual = points
        .iter()
        .map(|(t, x)| {
            let w = [*t, x[0] - origin[0], x[1] - origin[1], x[2] - origin[2]];
            let along: f64 = (0..4).map(|k| w[k] * d[k]).sum();
            (0..4).map(|k| (w[k] - along * d[k]).powi(2)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);
    LineFit {
        origin,
        slope,
        residual,
    }
}

/// Chart angle between the directions `(1, a)` and `(1, b)`.
fn direction_angle(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let unit = |v: &[f64; 3]| {
        let n = (1.0 + v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        [1.0 / n, v[0] / n, v[1] / n, v[2] / n]
    };
    let (u, w) = (unit(a), unit(b));
    let diff = (0..4).map(|k| (u[k] - w[k]).powi(2)).sum::<f64>().sqrt();
    let sum = (0..4).map(|k| (u[k] + w[k]).powi(2)).sum::<f64>().sqrt();
    2.0 * diff.atan2(sum)
}

#[derive(Clone, Debug)]
pub struct FirstLawRun {
    pub epsilon: f64,
    pub fit: LineFit,
    /// Spatial part of `V^a = P^a / (P^n t_n)` on the first slice.
    pub velocity: [f64; 3],
    pub angle: f64,
    pub track: ComTrack,
}

#[derive(Clone, Debug)]
pub struct FirstLawReport {
    pub runs: Vec<FirstLawRun>,
    pub rows: Vec<CheckRow>,
}

/// Center-of-mass tracks of flat-space bodies, fitted by straight lines.
pub fn run_first_law(cfg: &ExperimentConfig) -> Result<FirstLawReport, HarnessError> {
    if !cfg.spacetime.is_flat() {
        return Err(HarnessError::Unsupported("first-law runs need spacetime.kind = \"flat\"".into()));
    }
    let setup = Setup::new(cfg)?;
    let opts = cfg.flux_options();
    let runs = cfg
        .body
        .epsilons
        .par_iter()
        .map(|&epsilon| -> Result<FirstLawRun, HarnessError> {
            let m = setup.body(cfg, epsilon)?;
            let track = com_worldline(&m, &setup.slices, &setup.cobasis, &opts)?;
            let points: Vec<(f64, [f64; 3])> = track.slices.iter().map(|r| (r.t, r.com)).collect();
            let fit = fit_line(&points);
            let v = track.slices[0].velocity();
            let velocity = [v[1], v[2], v[3]];
            Ok(FirstLawRun {
                epsilon,
                angle: direction_angle(&fit.slope, &velocity),
                fit,
                velocity,
                track,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let tol = &cfg.tolerances;
    let mut rows = Vec::new();
    for r in &runs {
        let tag = |q: &str| format!("{q}[eps={}]", r.epsilon);
        rows.push(CheckRow::new("FirstLaw", &tag("line_residual"), r.fit.residual, tol.first_law_residual));
        rows.push(CheckRow::new("FirstLaw", &tag("direction_angle"), r.angle, tol.first_law_angle));
    }
    if runs.len() > 1 {
        let base = &runs[0].fit;
        let spread = runs[1..]
            .iter()
            .flat_map(|r| (0..3).map(move |a| (r.fit.origin[a] - base.origin[a]).abs().max((r.fit.slope[a] - base.slope[a]).abs())))
            .fold(0.0, f64::max);
        rows.push(CheckRow::new("FirstLaw", "line_agreement", spread, tol.first_law_residual));
    }
    Ok(FirstLawReport { runs, rows })
}

impl FirstLawReport {
    pub fn passed(&self) -> bool {
        super::all_passed(&self.rows)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        write_summary(dir, &self.rows)?;
        let mut f = create_file(dir, "fit.csv")?;
        writeln!(f, "epsilon,origin_x,origin_y,origin_z,slope_x,slope_y,slope_z,V_x,V_y,V_z,residual,angle")?;
        for r in &self.runs {
            let (o, s, v) = (r.fit.origin, r.fit.slope, r.velocity);
            writeln!(
                f,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.epsilon, o[0], o[1], o[2], s[0], s[1], s[2], v[0], v[1], v[2], r.fit.residual, r.angle
            )?;
        }
        f.flush()?;
        for (k, r) in self.runs.iter().enumerate() {
            write_track(dir, k, &r.track)?;
        }
        Ok(())
    }
}

fn write_track(dir: &Path, k: usize, track: &ComTrack) -> std::io::Result<()> {
    let mut f = create_file(dir, &format!("slices_eps{k}.csv"))?;
    write_slice_csv(&track.slices, &mut f)?;
    f.flush()?;
    let mut f = create_file(dir, &format!("com_eps{k}.csv"))?;
    track.worldline.write_csv(&mut f)?;
    f.flush()
}

#[derive(Clone, Debug)]
pub struct ConvergenceRecord {
    pub epsilon: f64,
    /// Sup over slices of the spatial distance between the center of mass and
    /// the reference geodesic.
    pub deviation: f64,
    /// Relative `∇_a T^ab` of the body.
    pub conservation: f64,
    /// Largest relative change of the mass across slices.
    pub mass_drift: f64,
    pub j_residual: f64,
    pub track: ComTrack,
    pub reference: WorldLine,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    /// In decreasing order of `ε`.
    pub records: Vec<ConvergenceRecord>,
    /// Least-squares slope of `log deviation` against `log ε`; informational.
    pub fitted_order: Option<f64>,
    pub noise_floor: f64,
    pub rows: Vec<CheckRow>,
}

/// `V^a` in chart components from cobasis components of `P`.
fn chart_velocity(cob: &ConstantCobasis, e: &Event, p: &[f64; 4]) -> Result<[f64; 4], HarnessError> {
    let sigma = cob.at(e)?.sigma;
    let m = Matrix4::from_fn(|i, j| sigma[i][j]);
    let v = m
        .lu()
        .solve(&Vector4::from_column_slice(p))
        .ok_or_else(|| HarnessError::Unsupported(format!("singular cobasis at {e}")))?;
    if !(v[0] > 0.0) {
        return Err(HarnessError::Unsupported(format!("total momentum is not future directed at {e}")));
    }
    Ok([1.0, v[1] / v[0], v[2] / v[0], v[3] / v[0]])
}

fn convergence_record(cfg: &ExperimentConfig, setup: &Setup, epsilon: f64) -> Result<ConvergenceRecord, HarnessError> {
    let st = &setup.geometrized.spacetime;
    let m = setup.body(cfg, epsilon)?;
    let track = com_worldline(&m, &setup.slices, &setup.cobasis, &cfg.flux_options())?;
    let conservation = check_conditions(st, &m, cfg.checks.condition_samples, None)?.conservation;
    let first = &track.slices[0];
    let last = &track.slices[track.slices.len() - 1];
    let mass_drift = track
        .slices
        .iter()
        .map(|r| ((r.mass - first.mass) / first.mass).abs())
        .fold(0.0, f64::max);
    let j_residual = track.slices.iter().map(|r| r.j_residual).fold(0.0, f64::max);
    let e_first = Event::from_parts(first.t, first.com);
    let v = chart_velocity(&setup.cobasis, &e_first, &first.p)?;
    let reference = integrate_geodesic(
        &st.op,
        &e_first,
        &Tensor::vector(v),
        last.t - first.t,
        cfg.checks.geodesic_tolerance,
    )?
    .time_normalized()?;
    let mut deviation: f64 = 0.0;
    for r in &track.slices {
        let (x, _) = reference.at_time(r.t)?;
        deviation = deviation.max((0..3).map(|a| (r.com[a] - x[a]).powi(2)).sum::<f64>().sqrt());
    }
    Ok(ConvergenceRecord {
        epsilon,
        deviation,
        conservation,
        mass_drift,
        j_residual,
        track,
        reference,
    })
}

/// Largest ratio `d(ε_{k+1}) / d(ε_k)` over consecutive records whose smaller
/// body deviates by more than the floor; zero if there are none.
fn worst_ratio(deviations: &[f64], floor: f64) -> f64 {
    deviations
        .windows(2)
        .filter(|w| w[1] > floor)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

fn fitted_order(records: &[ConvergenceRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.deviation > 0.0)
        .map(|r| (r.epsilon.ln(), r.deviation.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    Some(sxy / sxx)
}

/// Bodies of shrinking radius around a geodesic: how far their centers of
/// mass stray from a geodesic launched with the body's own momentum.
pub fn run_theorem_w_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, HarnessError> {
    let setup = Setup::new(cfg)?;
    let ev = check_events(&cfg.region(), cfg.checks.events);
    let cc = setup.geometrized.cc_report(&ev)?;
    let records = cfg
        .body
        .epsilons
        .par_iter()
        .map(|&eps| convergence_record(cfg, &setup, eps))
        .collect::<Result<Vec<_>, _>>()?;
    let noise_floor = 2.0 * cfg.tolerances.quadrature;
    let deviations: Vec<f64> = records.iter().map(|r| r.deviation).collect();
    let rows = vec![
        CheckRow::new("TheoremW", "curvature_conditions", cc.max(), cfg.tolerances.curvature),
        CheckRow::new("TheoremW", "deviation_ratio", worst_ratio(&deviations, noise_floor), 1.0),
    ];
    Ok(SweepReport {
        fitted_order: fitted_order(&records),
        records,
        noise_floor,
        rows,
    })
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        super::all_passed(&self.rows)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        write_summary(dir, &self.rows)?;
        let mut f = create_file(dir, "convergence.csv")?;
        writeln!(f, "epsilon,deviation,conservation,mass_drift,j_residual")?;
        for r in &self.records {
            writeln!(
                f,
                "{:e},{:e},{:e},{:e},{:e}",
                r.epsilon, r.deviation, r.conservation, r.mass_drift, r.j_residual
            )?;
        }
        match self.fitted_order {
            Some(p) => writeln!(f, "# fitted order {p:e}, noise floor {:e}", self.noise_floor)?,
            None => writeln!(f, "# fitted order n/a, noise floor {:e}", self.noise_floor)?,
        }
        f.flush()?;
        let mut curves = Vec::new();
        for (k, r) in self.records.iter().enumerate() {
            write_track(dir, k, &r.track)?;
            let mut f = create_file(dir, &format!("reference_eps{k}.csv"))?;
            r.reference.write_csv(&mut f)?;
            f.flush()?;
            curves.push(Series {
                label: format!("geodesic eps={}", r.epsilon),
                points: r.reference.samples().iter().map(|s| (s.event.0[1], s.event.0[2])).collect(),
                line: true,
            });
            curves.push(Series {
                label: format!("center of mass eps={}", r.epsilon),
                points: r.track.slices.iter().map(|s| (s.com[0], s.com[1])).collect(),
                line: false,
            });
        }
        let dev = Series {
            label: "deviation".into(),
            points: self.records.iter().map(|r| (r.epsilon, r.deviation)).collect(),
            line: true,
        };
        let floor = Series {
            label: "noise floor".into(),
            points: self.records.iter().map(|r| (r.epsilon, self.noise_floor)).collect(),
            line: true,
        };
        std::fs::write(
            dir.join("deviation.svg"),
            loglog_svg("center of mass deviation", "epsilon", "deviation", &[dev, floor]),
        )?;
        std::fs::write(dir.join("tracks.svg"), track_svg("tracks (x, y)", "x", "y", &curves))
    }
}

#[derive(Clone, Debug)]
pub struct PropositionReport {
    pub rows: Vec<CheckRow>,
    /// Slice table of the suite's body, if it could be built.
    pub slices: Vec<SliceReport>,
    pub gamma: Option<WorldLine>,
    /// Errors that turned checks into failures.
    pub messages: Vec<String>,
}

impl PropositionReport {
    pub fn passed(&self) -> bool {
        super::all_passed(&self.rows)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        write_summary(dir, &self.rows)?;
        let mut f = create_file(dir, "slices.csv")?;
        write_slice_csv(&self.slices, &mut f)?;
        f.flush()?;
        if let Some(g) = &self.gamma {
            let mut f = create_file(dir, "central_curve.csv")?;
            g.write_csv(&mut f)?;
            f.flush()?;
        }
        if !self.messages.is_empty() {
            let mut f = create_file(dir, "errors.txt")?;
            for m in &self.messages {
                writeln!(f, "{m}")?;
            }
            f.flush()?;
        }
        Ok(())
    }
}

struct Suite<'a> {
    cfg: &'a ExperimentConfig,
    rows: Vec<CheckRow>,
    messages: Vec<String>,
}

impl Suite<'_> {
    /// Appends the rows, or one failing row per quantity if the check errored.
    fn add(&mut self, check: &str, quantities: &[(&str, f64)], result: Result<Vec<CheckRow>, HarnessError>) {
        match result {
            Ok(rows) => self.rows.extend(rows),
            Err(e) => {
                self.messages.push(format!("{check}: {e}"));
                for (q, threshold) in quantities {
                    self.rows.push(CheckRow::failed(check, q, *threshold));
                }
            }
        }
    }

    fn skip(&mut self, check: &str, quantities: &[(&str, f64)]) {
        for (q, _) in quantities {
            self.rows.push(CheckRow::skipped(check, q));
        }
    }

    fn flat(&self) -> bool {
        self.cfg.spacetime.is_flat()
    }
}

fn max_pair_spread<const N: usize>(values: &[[f64; N]]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in values {
        for b in values {
            for k in 0..N {
                worst = worst.max((a[k] - b[k]).abs());
            }
        }
    }
    worst
}

struct BodyRun {
    body: MassMomentumField,
    moments: Vec<SliceMoments>,
}

fn body_run(cfg: &ExperimentConfig, setup: &Setup) -> Result<BodyRun, HarnessError> {
    let body = setup.body(cfg, cfg.body.epsilons[0])?;
    let opts = cfg.flux_options();
    let moments = setup
        .slices
        .iter()
        .map(|s| slice_moments(&body, s, &setup.cobasis, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BodyRun { body, moments })
}

/// Fixed event away from the body's center, used as the `J` base point.
fn probe_event(run: &BodyRun, cfg: &ExperimentConfig, t: f64) -> Event {
    let eps = cfg.body.epsilons[0];
    let c = run.body.tube_center(t);
    Event::from_parts(t, [c[0] + 0.3 * eps, c[1] - 0.2 * eps, c[2] + 0.1 * eps])
}

/// Every module-level invariant at the configured tolerances, one row per
/// quantity. Failures become rows; nothing aborts.
pub fn run_proposition_suite(cfg: &ExperimentConfig) -> PropositionReport {
    let tol = cfg.tolerances;
    let mut suite = Suite {
        cfg,
        rows: Vec::new(),
        messages: Vec::new(),
    };
    let prop1 = [("momentum_spread", tol.conservation), ("divergence", tol.divergence)];
    let prop2 = [("momentum_gradient", tol.conservation)];
    let prop3 = [("angular_momentum_spread", tol.conservation)];
    let prop4 = [("angular_momentum_gradient", tol.j_derivative)];
    let prop5 = [("center_of_mass", tol.center_of_mass)];
    let lemma2 = [("flatness", tol.lemma2), ("compatibility", tol.lemma2), ("agreement", tol.lemma2)];
    let lemma3 = [("mass_spread", tol.lemma3)];
    let stokes = [("boundary", tol.conservation), ("consistency", tol.conservation)];

    let setup = Setup::new(cfg);
    let run = match &setup {
        Ok(s) => body_run(cfg, s),
        Err(e) => Err(HarnessError::Unsupported(format!("setup failed: {e}"))),
    };
    let mut slices = Vec::new();

    match (&setup, &run) {
        (Ok(setup), Ok(run)) => {
            let st = &setup.geometrized.spacetime;
            let opts = cfg.flux_options();
            for (mom, s) in run.moments.iter().zip(&setup.slices) {
                let origin = Event::from_parts(s.time, run.body.tube_center(s.time));
                if let Ok(c) = center_of_mass_from(mom.clone(), s, &origin, &setup.cobasis) {
                    slices.push(SliceReport {
                        t: s.time,
                        p: mom.p,
                        mass: mom.mass(),
                        com: c.event.spatial(),
                        j_residual: c.j_residual,
                        in_hull: c.in_hull(),
                    });
                }
            }

            let r = (|| {
                let div = check_conditions(st, &run.body, cfg.checks.condition_samples, None)?.conservation;
                let mut rows = Vec::new();
                if suite.flat() {
                    let p: Vec<[f64; 4]> = run.moments.iter().map(|m| m.p).collect();
                    let spread = max_pair_spread(&p) / run.moments[0].p[0];
                    rows.push(CheckRow::new("Prop1", "momentum_spread", spread, tol.conservation));
                } else {
                    rows.push(CheckRow::skipped("Prop1", "momentum_spread"));
                }
                rows.push(CheckRow::new("Prop1", "divergence", div, tol.divergence));
                Ok(rows)
            })();
            suite.add("Prop1", &prop1, r);

            if suite.flat() {
                let k = setup.slices.len() / 2;
                let tk = setup.slices[k].time;
                let s = &setup.slices[k];
                let eps = cfg.body.epsilons[0];
                let c = run.body.tube_center(tk);
                let dt = 0.5 * (setup.slices[k].time - setup.slices[k - 1].time);
                let events = [
                    Event::from_parts(tk, [c[0] + 0.5 * eps, c[1] + 0.25 * eps, c[2]]),
                    Event::from_parts(tk - dt, [c[0] - 0.3 * eps, c[1] + 0.4 * eps, c[2] + 0.2 * eps]),
                ];
                let jd = check_j_derivative(&run.body, (s.lo, s.hi), &setup.cobasis, &events, cfg.checks.j_step, &opts)
                    .map_err(HarnessError::from);
                match jd {
                    Ok(rep) => {
                        suite.rows.push(CheckRow::new(
                            "Prop2",
                            "momentum_gradient",
                            rep.p_residual.max(rep.p_spread),
                            tol.conservation,
                        ));
                        let r = (|| {
                            let xp = setup.cobasis.at(&probe_event(run, cfg, tk))?.x;
                            let j: Vec<[f64; 16]> = run
                                .moments
                                .iter()
                                .map(|m| {
                                    let j = m.angular_momentum(&xp);
                                    std::array::from_fn(|i| j[i / 4][i % 4])
                                })
                                .collect();
                            Ok(vec![CheckRow::new("Prop3", "angular_momentum_spread", max_pair_spread(&j), tol.conservation)])
                        })();
                        suite.add("Prop3", &prop3, r);
                        suite.rows.push(CheckRow::new(
                            "Prop4",
                            "angular_momentum_gradient",
                            rep.j_residual,
                            tol.j_derivative,
                        ));
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        suite.add("Prop2", &prop2, Err(HarnessError::Unsupported(msg.clone())));
                        suite.add("Prop3", &prop3, Err(HarnessError::Unsupported(msg.clone())));
                        suite.add("Prop4", &prop4, Err(HarnessError::Unsupported(msg)));
                    }
                }
            } else {
                suite.skip("Prop2", &prop2);
                suite.skip("Prop3", &prop3);
                suite.skip("Prop4", &prop4);
            }

            let r = (|| {
                let k = setup.slices.len() / 2;
                let s = &setup.slices[k];
                let (lo, hi) = run.body.support_box(s.time);
                let mut events = Vec::new();
                let mut worst: f64 = 0.0;
                for i in 0..cfg.checks.origins {
                    let q = halton(1 + 10_000 * cfg.run.seed + i as u64, 3);
                    let o = [0, 1, 2].map(|a| lo[a] + q[a] * (hi[a] - lo[a]));
                    let c = center_of_mass_from(run.moments[k].clone(), s, &Event::from_parts(s.time, o), &setup.cobasis)?;
                    worst = worst.max(c.j_residual).max(c.hull_distance.max(0.0));
                    events.push(c.event.0);
                }
                worst = worst.max(max_pair_spread(&events));
                Ok(vec![CheckRow::new("Prop5", "center_of_mass", worst, tol.center_of_mass)])
            })();
            suite.add("Prop5", &prop5, r);

            let r = (|| {
                let op = flat_operator_on_curve(st, &setup.gamma)?;
                let ev = check_events(&cfg.region(), cfg.checks.events);
                let flatness = riemann(&op, &ev)?.flatness;
                let compat = st.with_operator(op.clone()).compatibility(&ev)?.max();
                let agreement = setup
                    .gamma
                    .samples()
                    .iter()
                    .map(|s| christoffel_max_diff(&op.christoffel(&s.event), &st.op.christoffel(&s.event)))
                    .fold(0.0, f64::max);
                Ok(vec![
                    CheckRow::new("Lemma2", "flatness", flatness, tol.lemma2),
                    CheckRow::new("Lemma2", "compatibility", compat, tol.lemma2),
                    CheckRow::new("Lemma2", "agreement", agreement, tol.lemma2),
                ])
            })();
            suite.add("Lemma2", &lemma2, r);

            let r = (|| {
                let masses: Vec<[f64; 1]> = if suite.flat() {
                    let op = arbitrary_flat_operator(cfg, &st.op)?;
                    let cob = ConstantCobasis::new(op, setup.cobasis.anchor());
                    setup
                        .slices
                        .iter()
                        .map(|s| Ok([slice_moments(&run.body, s, &cob, &opts)?.mass()]))
                        .collect::<Result<Vec<_>, HarnessError>>()?
                } else {
                    run.moments.iter().map(|m| [m.mass()]).collect()
                };
                let spread = max_pair_spread(&masses) / masses[0][0];
                Ok(vec![CheckRow::new("Lemma3", "mass_spread", spread, tol.lemma3)])
            })();
            suite.add("Lemma3", &lemma3, r);

            if suite.flat() {
                let r = (|| {
                    let (mut boundary, mut consistency): (f64, f64) = (0.0, 0.0);
                    for w in setup.slices.windows(2) {
                        let rep = stokes_check(&run.body, &w[0], &w[1], &setup.cobasis, &opts, cfg.checks.stokes_intervals)?;
                        boundary = boundary.max(rep.boundary());
                        consistency = consistency.max(rep.consistency());
                    }
                    Ok(vec![
                        CheckRow::new("StokesChecks", "boundary", boundary, tol.conservation),
                        CheckRow::new("StokesChecks", "consistency", consistency, tol.conservation),
                    ])
                })();
                suite.add("StokesChecks", &stokes, r);
            } else {
                suite.skip("StokesChecks", &stokes);
            }
        }
        _ => {
            let msg = match (&setup, &run) {
                (Err(e), _) | (_, Err(e)) => e.to_string(),
                _ => unreachable!(),
            };
            suite.messages.push(format!("body: {msg}"));
            for (check, qs) in [
                ("Prop1", &prop1[..]),
                ("Prop2", &prop2[..]),
                ("Prop3", &prop3[..]),
                ("Prop4", &prop4[..]),
                ("Prop5", &prop5[..]),
                ("Lemma2", &lemma2[..]),
                ("Lemma3", &lemma3[..]),
                ("StokesChecks", &stokes[..]),
            ] {
                for (q, t) in qs {
                    suite.rows.push(CheckRow::failed(check, q, *t));
                }
            }
        }
    }

    let round_trip = [("potential", tol.recovery_potential), ("operator", tol.recovery_operator)];
    let equivalence = [("sup_distance", tol.equivalence)];
    match models(cfg) {
        Ok((n, g)) => {
            suite.add("TrautmanRoundTrip", &round_trip, recover_rows(cfg, &n, &g));
            let r = equivalence_trials(cfg, &n, &g)
                .map(|d| vec![CheckRow::new("EquivalenceG", "sup_distance", d, tol.equivalence)]);
            suite.add("EquivalenceG", &equivalence, r);
        }
        Err(e) => {
            let msg = e.to_string();
            suite.add("TrautmanRoundTrip", &round_trip, Err(HarnessError::Unsupported(msg.clone())));
            suite.add("EquivalenceG", &equivalence, Err(HarnessError::Unsupported(msg)));
        }
    }

    PropositionReport {
        rows: suite.rows,
        slices,
        gamma: setup.ok().map(|s| s.gamma),
        messages: suite.messages,
    }
}

/// The flat operator of a uniformly accelerated frame.
fn arbitrary_flat_operator(cfg: &ExperimentConfig, base: &DerivativeOperator) -> Result<DerivativeOperator, HarnessError> {
    let g = cfg.checks.frame_acceleration;
    Ok(base.compose(Arc::new(GeometrizedConnection::new(Arc::new(Uniform { g }), base.bounds())))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_a_line() {
        let pts: Vec<(f64, [f64; 3])> = (0..5)
            .map(|i| {
                let t = 0.1 * i as f64;
                (t, [1.0 + 0.3 * t, -0.5 * t, 2.0])
            })
            .collect();
        let f = fit_line(&pts);
        assert!((f.slope[0] - 0.3).abs() < 1e-14 && (f.slope[1] + 0.5).abs() < 1e-14);
        assert!(f.residual < 1e-14);
        let mut bent = pts.clone();
        bent[2].1[0] += 1e-3;
        assert!(fit_line(&bent).residual > 1e-4);
    }

    #[test]
    fn angles() {
        assert_eq!(direction_angle(&[0.0; 3], &[0.0; 3]), 0.0);
        let a = direction_angle(&[1.0, 0.0, 0.0], &[0.0; 3]);
        assert!((a - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn ratio_respects_floor() {
        assert_eq!(worst_ratio(&[4e-4, 1e-4, 2.5e-5], 2e-6), 0.25);
        assert_eq!(worst_ratio(&[1e-7, 3e-7, 2e-7], 2e-6), 0.0);
        assert!(worst_ratio(&[1e-4, 2e-4], 2e-6) > 1.0);
    }

    #[test]
    fn shell_legs() {
        let region = Region::shell(
            0.0,
            1.0,
            crate::sampling::Shell {
                center: [0.0; 3],
                r_min: 0.5,
                r_max: 3.0,
            },
        );
        assert!(!legs_clear(&region, [-2.0, 0.0, 0.0], [2.0, 0.0, 0.0]));
        assert!(legs_clear(&region, [-2.0, 1.0, 0.0], [2.0, 1.0, 0.0]));
    }
}
