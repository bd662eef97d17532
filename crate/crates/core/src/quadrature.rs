//! Composite Simpson rules and deterministic summation.

/// Composite Simpson nodes and weights on `[a, b]` with `intervals` (even, ≥ 2).
pub fn simpson_rule(a: f64, b: f64, intervals: usize) -> (Vec<f64>, Vec<f64>) {
    let n = if intervals % 2 == 1 { intervals + 1 } else { intervals.max(2) };
    let h = (b - a) / n as f64;
    let nodes = (0..=n).map(|i| a + i as f64 * h).collect();
    let weights = (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

/// One-dimensional composite Simpson integral.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let (x, w) = simpson_rule(a, b, intervals);
    let terms: Vec<f64> = x.iter().zip(&w).map(|(x, w)| w * f(*x)).collect();
    pairwise_sum(&terms)
}

/// Pairwise summation with a fixed split, independent of how the terms were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if v.len() <= LEAF {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Tensor-product Simpson rule over a 3D box with the given interval counts.
#[derive(Clone, Debug)]
pub struct SimpsonGrid3 {
    pub nodes: [Vec<f64>; 3],
    pub weights: [Vec<f64>; 3],
}

impl SimpsonGrid3 {
    pub fn new(lo: [f64; 3], hi: [f64; 3], intervals: [usize; 3]) -> Self {
        let (x0, w0) = simpson_rule(lo[0], hi[0], intervals[0]);
        let (x1, w1) = simpson_rule(lo[1], hi[1], intervals[1]);
        let (x2, w2) = simpson_rule(lo[2], hi[2], intervals[2]);
        SimpsonGrid3 {
            nodes: [x0, x1, x2],
            weights: [w0, w1, w2],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node and weight of the `i`-th point in x-major order.
    pub fn point(&self, i: usize) -> ([f64; 3], f64) {
        let nz = self.nodes[2].len();
        let ny = self.nodes[1].len();
        let iz = i % nz;
        let iy = (i / nz) % ny;
        let ix = i / (nz * ny);
        (
            [self.nodes[0][ix], self.nodes[1][iy], self.nodes[2][iz]],
            self.weights[0][ix] * self.weights[1][iy] * self.weights[2][iz],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 2);
        let exact = (16.0 / 4.0 - 4.0 + 2.0) - (1.0 / 4.0 - 1.0 - 1.0);
        assert!((v - exact).abs() < 1e-14);
    }

    #[test]
    fn simpson_order_on_halving() {
        let exact = 1.0 - (-2.0f64).exp();
        let err = |n| (simpson(|x| (-x).exp(), 0.0, 2.0, n) - exact).abs();
        assert!(err(8) / err(16) >= 8.0);
        assert!(err(16) / err(32) >= 8.0);
    }

    #[test]
    fn grid_weights_sum_to_volume() {
        let g = SimpsonGrid3::new([0.0, -1.0, 2.0], [1.0, 1.0, 5.0], [4, 6, 8]);
        let total: f64 = (0..g.len()).map(|i| g.point(i).1).sum();
        assert!((total - 6.0).abs() < 1e-13);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }
}
