//! Deterministic quasi-random sampling of working regions.

use serde::{Deserialize, Serialize};

use crate::field::BoundingBox;
use crate::tensor::Event;

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % b) as f64 * f;
        index /= b;
        f *= inv;
    }
    r
}

/// The `index`-th point of the Halton sequence in `dim ≤ 8` dimensions.
pub fn halton(index: u64, dim: usize) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (k, o) in out.iter_mut().enumerate().take(dim) {
        *o = radical_inverse(index, PRIMES[k]);
    }
    out
}

/// A spherical shell filter in space, fixed in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shell {
    pub center: [f64; 3],
    pub r_min: f64,
    pub r_max: f64,
}

impl Shell {
    pub fn contains(&self, x: &[f64; 3]) -> bool {
        let r = dist(x, &self.center);
        r >= self.r_min && r <= self.r_max
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Working region: a box, optionally restricted to a spherical shell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub bbox: BoundingBox,
    pub shell: Option<Shell>,
}

impl Region {
    pub fn boxed(bbox: BoundingBox) -> Self {
        Region { bbox, shell: None }
    }

    pub fn shell(t0: f64, t1: f64, shell: Shell) -> Self {
        let c = shell.center;
        let r = shell.r_max;
        Region {
            bbox: BoundingBox::new(
                [t0, c[0] - r, c[1] - r, c[2] - r],
                [t1, c[0] + r, c[1] + r, c[2] + r],
            ),
            shell: Some(shell),
        }
    }

    pub fn contains(&self, e: &Event) -> bool {
        self.bbox.contains(e) && self.shell.map_or(true, |s| s.contains(&e.spatial()))
    }

    /// `n` deterministic Halton events inside the region, shrunk by `margin`
    /// on every side so that difference stencils stay inside.
    pub fn samples(&self, n: usize, margin: f64) -> Vec<Event> {
        let b = self.bbox.shrunk(margin);
        let shell = self.shell.map(|s| Shell {
            r_min: s.r_min + margin,
            r_max: s.r_max - margin,
            ..s
        });
        let mut out = Vec::with_capacity(n);
        let mut index = 1u64;
        while out.len() < n {
            let h = halton(index, 4);
            index += 1;
            let mut c = [0.0; 4];
            for k in 0..4 {
                c[k] = b.lo[k] + h[k] * (b.hi[k] - b.lo[k]);
            }
            let e = Event(c);
            if shell.map_or(true, |s| s.contains(&e.spatial())) {
                out.push(e);
            }
            assert!(index < 1_000_000 + 1000 * n as u64, "region has no interior");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn samples_respect_shell_and_margin() {
        let r = Region::shell(
            0.0,
            1.0,
            Shell {
                center: [0.0; 3],
                r_min: 1.0,
                r_max: 2.0,
            },
        );
        let pts = r.samples(500, 0.05);
        assert_eq!(pts.len(), 500);
        for p in &pts {
            let rad = dist(&p.spatial(), &[0.0; 3]);
            assert!((1.05..=1.95).contains(&rad));
            assert!(p.time() >= 0.05 && p.time() <= 0.95);
        }
        assert_eq!(pts, r.samples(500, 0.05));
    }
}
