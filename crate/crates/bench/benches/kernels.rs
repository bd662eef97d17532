use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use nclab_core::flux::{slice_moments, FluxOptions};
use nclab_core::geodesics::integrate_geodesic;
use nclab_core::matter::{build_dust_body, BumpProfile, DustOptions};
use nclab_core::trautman::{geometrize, NewtonianModel};
use nclab_core::{BoundingBox, ClassicalSpacetime, ConstantCobasis, Event, Harmonic, Hypersurface, PointMass, Region, Shell, Tensor};

fn point_mass() -> ClassicalSpacetime {
    let region = Region::shell(-0.1, 2.0, Shell { center: [0.0; 3], r_min: 0.5, r_max: 3.0 });
    geometrize(&NewtonianModel::new(Arc::new(PointMass { mass: 1.0, center: [0.0; 3] }), region))
        .unwrap()
        .spacetime
}

fn christoffel(c: &mut Criterion) {
    let st = point_mass();
    let e = Event::new(0.5, 1.2, -0.4, 0.7);
    c.bench_function("christoffel_point_mass", |b| b.iter(|| st.op.christoffel(black_box(&e))));
}

fn geodesic(c: &mut Criterion) {
    let st = point_mass();
    let start = Event::new(0.0, 2.0, 0.0, 0.0);
    let tangent = Tensor::vector([1.0, 0.0, 0.5f64.sqrt(), 0.0]);
    c.bench_function("circular_orbit_1p5", |b| {
        b.iter(|| integrate_geodesic(&st.op, black_box(&start), &tangent, 1.5, 1e-11).unwrap())
    });
}

fn moments(c: &mut Criterion) {
    let region = Region::boxed(BoundingBox::new([-0.1, -2.0, -2.0, -2.0], [1.0, 2.0, 2.0, 2.0]));
    let st = geometrize(&NewtonianModel::new(Arc::new(Harmonic { k: 1.0, center: [0.0; 3] }), region))
        .unwrap()
        .spacetime;
    let gamma = integrate_geodesic(&st.op, &Event::new(0.0, 0.3, 0.0, 0.0), &Tensor::vector([1.0, 0.0, 0.3, 0.0]), 0.8, 1e-11)
        .unwrap();
    let opts = DustOptions {
        nodes_across: 12,
        ..DustOptions::default()
    };
    let body = build_dust_body(&st, &gamma, BumpProfile::unit_mass(0.2).unwrap(), (0.0, 0.8), &opts).unwrap();
    let cob = ConstantCobasis::new(st.op.clone(), Event::new(0.0, 0.3, 0.0, 0.0));
    let sigma = Hypersurface::future(0.4, [-1.5; 3], [1.5; 3]);
    let flux = FluxOptions {
        intervals: 16,
        ..FluxOptions::default()
    };
    let mut group = c.benchmark_group("slice");
    group.sample_size(20);
    group.bench_function("moments_16", |b| b.iter(|| slice_moments(&body, black_box(&sigma), &cob, &flux).unwrap()));
    group.finish();
}

criterion_group!(kernels, christoffel, geodesic, moments);
criterion_main!(kernels);
