//! Newtonian potentials and the geometrized difference field they induce.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::field::{Backend, BoundingBox};
use crate::spacetime::{Christoffel, ChristoffelDerivative, ConnectionField, ZERO_CHRISTOFFEL};
use crate::tensor::Event;

pub trait Potential: Send + Sync {
    fn value(&self, e: &Event) -> f64;
    /// Spatial gradient `∂_i φ`.
    fn gradient(&self, e: &Event) -> [f64; 3];
    /// `h[i][m] = ∂_m ∂_i φ` for spatial `i` and chart index `m` (time first).
    fn hessian(&self, e: &Event) -> [[f64; 4]; 3];

    fn laplacian(&self, e: &Event) -> f64 {
        let h = self.hessian(e);
        h[0][1] + h[1][2] + h[2][3]
    }

    /// Density that makes Poisson's equation hold exactly.
    fn poisson_density(&self, e: &Event) -> f64 {
        self.laplacian(e) / (4.0 * PI)
    }

    fn describe(&self) -> String;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn value(&self, _e: &Event) -> f64 {
        0.0
    }
    fn gradient(&self, _e: &Event) -> [f64; 3] {
        [0.0; 3]
    }
    fn hessian(&self, _e: &Event) -> [[f64; 4]; 3] {
        [[0.0; 4]; 3]
    }
    fn describe(&self) -> String {
        "zero".into()
    }
}

/// `φ = k |x − c|²`.
#[derive(Clone, Copy, Debug)]
pub struct Harmonic {
    pub k: f64,
    pub center: [f64; 3],
}

impl Potential for Harmonic {
    fn value(&self, e: &Event) -> f64 {
        let x = e.spatial();
        (0..3).map(|i| self.k * (x[i] - self.center[i]).powi(2)).sum()
    }
    fn gradient(&self, e: &Event) -> [f64; 3] {
        let x = e.spatial();
        [0, 1, 2].map(|i| 2.0 * self.k * (x[i] - self.center[i]))
    }
    fn hessian(&self, _e: &Event) -> [[f64; 4]; 3] {
        let mut h = [[0.0; 4]; 3];
        for (i, row) in h.iter_mut().enumerate() {
            row[i + 1] = 2.0 * self.k;
        }
        h
    }
    fn describe(&self) -> String {
        format!("harmonic k={} center={:?}", self.k, self.center)
    }
}

/// `φ = −M / |x − c|`.
#[derive(Clone, Copy, Debug)]
pub struct PointMass {
    pub mass: f64,
    pub center: [f64; 3],
}

impl PointMass {
    fn offset(&self, e: &Event) -> ([f64; 3], f64) {
        let x = e.spatial();
        let d = [0, 1, 2].map(|i| x[i] - self.center[i]);
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (d, r)
    }
}

impl Potential for PointMass {
    fn value(&self, e: &Event) -> f64 {
        -self.mass / self.offset(e).1
    }
    fn gradient(&self, e: &Event) -> [f64; 3] {
        let (d, r) = self.offset(e);
        let f = self.mass / (r * r * r);
        d.map(|v| f * v)
    }
    fn hessian(&self, e: &Event) -> [[f64; 4]; 3] {
        let (d, r) = self.offset(e);
        let r2 = r * r;
        let r3 = r2 * r;
        let r5 = r3 * r2;
        let mut h = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                h[i][j + 1] = self.mass * (delta / r3 - 3.0 * d[i] * d[j] / r5);
            }
        }
        h
    }
    fn laplacian(&self, _e: &Event) -> f64 {
        0.0
    }
    fn describe(&self) -> String {
        format!("point-mass M={} center={:?}", self.mass, self.center)
    }
}

/// `φ = g · x`.
#[derive(Clone, Copy, Debug)]
pub struct Uniform {
    pub g: [f64; 3],
}

impl Potential for Uniform {
    fn value(&self, e: &Event) -> f64 {
        let x = e.spatial();
        (0..3).map(|i| self.g[i] * x[i]).sum()
    }
    fn gradient(&self, _e: &Event) -> [f64; 3] {
        self.g
    }
    fn hessian(&self, _e: &Event) -> [[f64; 4]; 3] {
        [[0.0; 4]; 3]
    }
    fn describe(&self) -> String {
        format!("uniform g={:?}", self.g)
    }
}

/// `C^a_bc = −t_b t_c h^am ∂_m φ` in the adapted chart, i.e. `C^i_00 = −∂_i φ`.
pub struct GeometrizedConnection {
    potential: Arc<dyn Potential>,
    bounds: BoundingBox,
}

impl GeometrizedConnection {
    pub fn new(potential: Arc<dyn Potential>, bounds: BoundingBox) -> Self {
        GeometrizedConnection { potential, bounds }
    }
}

impl ConnectionField for GeometrizedConnection {
    fn bounds(&self) -> BoundingBox {
        self.bounds
    }
    fn backend(&self) -> Backend {
        Backend::Analytic
    }
    fn eval(&self, e: &Event) -> Christoffel {
        let g = self.potential.gradient(e);
        let mut c = ZERO_CHRISTOFFEL;
        for i in 0..3 {
            c[i + 1][0][0] = -g[i];
        }
        c
    }
    fn derivative(&self, e: &Event) -> Option<ChristoffelDerivative> {
        let h = self.potential.hessian(e);
        let mut d = [ZERO_CHRISTOFFEL; 4];
        for (m, dm) in d.iter_mut().enumerate() {
            for i in 0..3 {
                dm[i + 1][0][0] = -h[i][m];
            }
        }
        Some(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{partial_derivative, AnalyticField};

    fn check_consistency(p: Arc<dyn Potential>, e: Event) {
        let pc = p.clone();
        let f = AnalyticField::scalar(BoundingBox::slab(-5.0, 5.0, 5.0), move |e| pc.value(e));
        let d = partial_derivative(&f, &e, 1e-3).unwrap();
        let g = p.gradient(&e);
        for i in 0..3 {
            assert!((d.components()[i + 1] - g[i]).abs() < 1e-8, "{}", p.describe());
        }
        let h = p.hessian(&e);
        for i in 0..3 {
            let pg = p.clone();
            let gi = AnalyticField::scalar(BoundingBox::slab(-5.0, 5.0, 5.0), move |e| pg.gradient(e)[i]);
            let dg = partial_derivative(&gi, &e, 1e-3).unwrap();
            for m in 0..4 {
                assert!((dg.components()[m] - h[i][m]).abs() < 1e-7, "{}", p.describe());
            }
        }
    }

    #[test]
    fn closed_forms_are_consistent() {
        let e = Event::new(0.3, 0.9, -0.4, 0.6);
        check_consistency(Arc::new(Harmonic { k: 1.0, center: [0.1, 0.0, -0.2] }), e);
        check_consistency(Arc::new(PointMass { mass: 1.3, center: [0.0; 3] }), e);
        check_consistency(Arc::new(Uniform { g: [0.0, 0.0, 9.8] }), e);
    }

    #[test]
    fn harmonic_density() {
        let p = Harmonic { k: 1.0, center: [0.0; 3] };
        let rho = p.poisson_density(&Event::new(0.0, 0.4, 0.1, 0.2));
        assert!((rho - 6.0 / (4.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn point_mass_hessian_is_traceless() {
        let p = PointMass { mass: 2.0, center: [0.0; 3] };
        let h = p.hessian(&Event::new(0.0, 1.1, -0.3, 0.7));
        assert!((h[0][1] + h[1][2] + h[2][3]).abs() < 1e-14);
    }
}
