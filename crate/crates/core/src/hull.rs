//! Spatial convex hulls of point sets, with a signed-distance membership test.

use crate::error::FluxError;

/// Default membership tolerance in hull-face signed distance.
pub const HULL_TOLERANCE: f64 = 1e-9;

/// Convex hull as an intersection of half-spaces `n · x ≤ d` with unit `n`.
#[derive(Clone, Debug)]
pub struct ConvexHull3 {
    faces: Vec<([f64; 3], f64)>,
    vertices: usize,
}

fn sub(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl ConvexHull3 {
    pub fn new(points: &[[f64; 3]]) -> Result<Self, FluxError> {
        let pts: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        let hull = chull::ConvexHullWrapper::try_new(&pts, None)
            .map_err(|e| FluxError::Hull(e.to_string()))?;
        let (verts, indices) = hull.vertices_indices();
        if verts.is_empty() || indices.len() < 12 {
            return Err(FluxError::Hull("degenerate hull".into()));
        }
        let mut centroid = [0.0; 3];
        for v in &verts {
            for k in 0..3 {
                centroid[k] += v[k] / verts.len() as f64;
            }
        }
        let mut faces = Vec::with_capacity(indices.len() / 3);
        for tri in indices.chunks_exact(3) {
            let (a, b, c) = (&verts[tri[0]], &verts[tri[1]], &verts[tri[2]]);
            let mut n = cross(&sub(b, a), &sub(c, a));
            let len = dot(&n, &n).sqrt();
            if len == 0.0 {
                continue;
            }
            n = n.map(|v| v / len);
            let a3 = [a[0], a[1], a[2]];
            let mut d = dot(&n, &a3);
            if dot(&n, &centroid) > d {
                n = n.map(|v| -v);
                d = -d;
            }
            faces.push((n, d));
        }
        Ok(ConvexHull3 {
            faces,
            vertices: verts.len(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    /// Largest face-plane signed distance; non-positive inside.
    pub fn signed_distance(&self, p: &[f64; 3]) -> f64 {
        self.faces
            .iter()
            .fold(f64::NEG_INFINITY, |m, (n, d)| m.max(dot(n, p) - d))
    }

    pub fn contains(&self, p: &[f64; 3], tol: f64) -> bool {
        self.signed_distance(p) <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_membership() {
        let mut pts = Vec::new();
        for i in 0..27 {
            pts.push([(i % 3) as f64 - 1.0, ((i / 3) % 3) as f64 - 1.0, (i / 9) as f64 - 1.0]);
        }
        let h = ConvexHull3::new(&pts).unwrap();
        assert!(h.contains(&[0.0, 0.0, 0.0], HULL_TOLERANCE));
        assert!(h.contains(&[1.0, 1.0, 1.0], HULL_TOLERANCE));
        assert!(!h.contains(&[1.0 + 1e-6, 0.0, 0.0], HULL_TOLERANCE));
        assert!((h.signed_distance(&[0.0, 0.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_set_is_rejected() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(matches!(ConvexHull3::new(&pts), Err(FluxError::Hull(_))));
    }
}
