use std::sync::Arc;

use nclab_core::error::MatterError;
use nclab_core::geodesics::integrate_geodesic;
use nclab_core::matter::{build_dust_body, check_conditions, BumpProfile, DensitySource, DustOptions, MassMomentumField};
use nclab_core::trautman::{geometrize, NewtonianModel};
use nclab_core::{BoundingBox, ClassicalSpacetime, Event, Harmonic, PointMass, Region, Shell, Tensor};

fn trap() -> ClassicalSpacetime {
    let region = Region::boxed(BoundingBox::new([-0.1, -2.0, -2.0, -2.0], [1.6, 2.0, 2.0, 2.0]));
    let n = NewtonianModel::new(Arc::new(Harmonic { k: 1.0, center: [0.0; 3] }), region);
    geometrize(&n).unwrap().spacetime
}

fn rest_body(st: &ClassicalSpacetime, eps: f64, window: (f64, f64), nodes: usize) -> Result<MassMomentumField, MatterError> {
    let gamma = integrate_geodesic(
        &st.op,
        &Event::new(window.0, 0.3, 0.0, 0.0),
        &Tensor::vector([1.0, 0.0, 0.0, 0.0]),
        window.1 - window.0,
        1e-11,
    )?;
    build_dust_body(
        st,
        &gamma,
        BumpProfile::unit_mass(eps)?,
        window,
        &DustOptions {
            nodes_across: nodes,
            ..DustOptions::default()
        },
    )
}

fn source_gap(m: &MassMomentumField, span: (f64, f64), width: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..400 {
        let q = nclab_core::sampling::halton(i + 1, 4);
        let t = span.0 + (span.1 - span.0) * q[0];
        let c = m.tube_center(t);
        let e = Event::from_parts(t, [0, 1, 2].map(|a| c[a] + width * (q[a + 1] - 0.5)));
        if let (Some(a), Some(b)) = (m.congruence_with(&e, DensitySource::FlowMap), m.congruence_with(&e, DensitySource::Transported)) {
            worst = worst.max((a.rho - b.rho).abs() / m.profile().peak());
        }
    }
    worst
}

#[test]
fn transported_density_approaches_flow_map_under_refinement() {
    let region = Region::shell(-0.1, 2.0, Shell { center: [0.0; 3], r_min: 0.5, r_max: 3.0 });
    let st = geometrize(&NewtonianModel::new(Arc::new(PointMass { mass: 1.0, center: [0.0; 3] }), region))
        .unwrap()
        .spacetime;
    let gamma = integrate_geodesic(&st.op, &Event::new(0.0, 2.0, 0.0, 0.0), &Tensor::vector([1.0, 0.0, 0.5f64.sqrt(), 0.0]), 1.0, 1e-11)
        .unwrap();
    let gaps: Vec<f64> = [8, 16]
        .into_iter()
        .map(|n| {
            let opts = DustOptions {
                nodes_across: n,
                time_samples: 17,
                ..DustOptions::default()
            };
            let m = build_dust_body(&st, &gamma, BumpProfile::unit_mass(0.4).unwrap(), (0.0, 1.0), &opts).unwrap();
            source_gap(&m, (0.05, 0.95), 0.8)
        })
        .collect();
    // measured about 17x
    assert!(gaps[1] < gaps[0] / 4.0, "{gaps:?}");
}

#[test]
fn flow_map_density_matches_transported() {
    let st = trap();
    let m = rest_body(&st, 0.2, (0.0, 0.8), 24).unwrap();
    let peak = m.profile().peak();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let q = nclab_core::sampling::halton(i + 1, 4);
        let t = 0.05 + 0.7 * q[0];
        let c = m.tube_center(t);
        let e = Event::from_parts(t, [0, 1, 2].map(|a| c[a] + 0.4 * (q[a + 1] - 0.5)));
        let a = m.congruence_with(&e, DensitySource::FlowMap);
        let b = m.congruence_with(&e, DensitySource::Transported);
        if let (Some(a), Some(b)) = (a, b) {
            worst = worst.max((a.rho - b.rho).abs() / peak);
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn support_shrinks_with_radius() {
    let st = trap();
    for eps in [0.2, 0.1] {
        let m = rest_body(&st, eps, (0.0, 0.5), 12).unwrap();
        let h = m.label_spacing();
        assert!(m.support().radius <= eps + 1.5 * h, "{} {}", m.support().radius, eps);
        let rep = check_conditions(&st, &m, 100, None).unwrap();
        assert_eq!(rep.support, 0.0);
        assert_eq!(rep.mass_violations, 0);
        assert_eq!(rep.symmetry, 0.0);
        assert!(rep.support_points > 0);
    }
}

#[test]
fn density_is_nonnegative_on_a_grid() {
    let st = trap();
    let m = rest_body(&st, 0.2, (0.0, 0.8), 12).unwrap();
    for t in [0.0, 0.4, 0.8] {
        let s = m.slice(t).unwrap();
        let (lo, hi) = m.support_box(t);
        for i in 0..=10 {
            for j in 0..=10 {
                for k in 0..=10 {
                    let f = |a: usize, n: usize| lo[a] + (hi[a] - lo[a]) * n as f64 / 10.0;
                    let x = [f(0, i), f(1, j), f(2, k)];
                    assert!(s.eval(&x).get(0, 0) >= 0.0);
                }
            }
        }
    }
}

#[test]
fn clipping_breaks_conservation_and_scaling_keeps_it() {
    let st = ClassicalSpacetime::flat(BoundingBox::slab(-0.1, 1.1, 3.0));
    let gamma = integrate_geodesic(
        &st.op,
        &Event::new(0.0, 0.0, 0.0, 0.0),
        &Tensor::vector([1.0, 0.2, 0.0, 0.0]),
        1.0,
        1e-11,
    )
    .unwrap();
    let opts = DustOptions {
        nodes_across: 12,
        ..DustOptions::default()
    };
    let m = build_dust_body(&st, &gamma, BumpProfile::unit_mass(0.2).unwrap(), (0.0, 1.0), &opts).unwrap();
    let e = Event::new(0.5, 0.1, 0.02, -0.03);
    let base = m.eval(&e).unwrap();
    assert!((m.scaled(3.0).eval(&e).unwrap().get(0, 0) - 3.0 * base.get(0, 0)).abs() < 1e-12 * base.get(0, 0));
    assert!(m.zeroed().eval(&e).unwrap().is_zero());
    // a plane through the body at x = 0.1 from t = 0.5 on
    let clipped = m.clipped(1, 0.1, 0.5);
    assert!(clipped.eval(&Event::new(0.6, 0.15, 0.0, 0.0)).unwrap().is_zero());
    let h = m.default_step();
    let at_cut = Event::new(0.6, 0.1 + 0.5 * h, 0.0, 0.0);
    let div = clipped.divergence(&st.op, &at_cut, h).unwrap();
    let ok = m.divergence(&st.op, &at_cut, h).unwrap();
    assert!(div[1].abs() > 1e3 * ok[1].abs().max(1e-9), "{div:?} {ok:?}");
}

#[test]
fn focusing_trap_produces_caustic() {
    let st = trap();
    let r = rest_body(&st, 0.2, (0.0, 1.5), 12);
    assert!(matches!(r, Err(MatterError::Caustic { .. })), "{r:?}");
}

#[test]
fn window_and_radius_validation() {
    let st = trap();
    assert!(matches!(BumpProfile::unit_mass(-1.0), Err(MatterError::InvalidRadius(_))));
    let m = rest_body(&st, 0.2, (0.0, 0.5), 12).unwrap();
    assert!(m.eval(&Event::new(0.7, 0.3, 0.0, 0.0)).is_err());
}
