use nclab_core::harness::{fit_line, CheckRow, Status};
use nclab_core::quadrature::simpson;
use nclab_core::sampling::halton;
use nclab_core::{Slot, Tensor, Valence};
use proptest::prelude::*;

fn rank2(v: Valence) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-10.0f64..10.0, 16).prop_map(move |d| Tensor::from_components(v, d).unwrap())
}

proptest! {
    #[test]
    fn antisymmetrize_is_idempotent(t in rank2(Valence::new(0, 2))) {
        let slots = [Slot::Down(0), Slot::Down(1)];
        let a = t.antisymmetrize(&slots).unwrap();
        let aa = a.antisymmetrize(&slots).unwrap();
        prop_assert!(a.max_abs_diff(&aa).unwrap() < 1e-12);
    }

    #[test]
    fn symmetric_and_alternating_parts_add_up(t in rank2(Valence::new(2, 0))) {
        let slots = [Slot::Up(0), Slot::Up(1)];
        let s = t.symmetrize(&slots).unwrap();
        let a = t.antisymmetrize(&slots).unwrap();
        let sum = s.try_add(&a).unwrap();
        prop_assert!(sum.max_abs_diff(&t).unwrap() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                prop_assert_eq!(s.get(&[i, j]), s.get(&[j, i]));
                prop_assert_eq!(a.get(&[i, j]), -a.get(&[j, i]));
            }
        }
    }

    #[test]
    fn halton_points_lie_in_the_unit_cube(index in 0u64..1_000_000, dim in 1usize..=8) {
        let q = halton(index, dim);
        for (k, v) in q.iter().enumerate() {
            if k < dim {
                prop_assert!((0.0..1.0).contains(v));
            } else {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn line_fit_is_exact_on_lines(
        origin in prop::array::uniform3(-5.0f64..5.0),
        slope in prop::array::uniform3(-2.0f64..2.0),
        n in 3usize..12,
    ) {
        let pts: Vec<(f64, [f64; 3])> = (0..n)
            .map(|k| {
                let t = 0.1 * k as f64;
                (t, [0, 1, 2].map(|a| origin[a] + slope[a] * t))
            })
            .collect();
        let fit = fit_line(&pts);
        prop_assert!(fit.residual < 1e-12, "{}", fit.residual);
        for a in 0..3 {
            prop_assert!((fit.slope[a] - slope[a]).abs() < 1e-10);
            prop_assert!((fit.origin[a] - origin[a]).abs() < 1e-10);
        }
    }

    #[test]
    fn rows_pass_only_below_threshold(residual in -1.0f64..1.0, threshold in 0.0f64..1.0) {
        let r = CheckRow::new("X", "q", residual, threshold);
        prop_assert_eq!(r.status == Status::Pass, residual < threshold);
    }

    #[test]
    fn simpson_is_exact_on_cubics(
        c in prop::array::uniform4(-3.0f64..3.0),
        a in -2.0f64..2.0,
        w in 0.1f64..3.0,
        half in 1usize..10,
    ) {
        let b = a + w;
        let p = |x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
        let anti = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
        let exact = anti(b) - anti(a);
        prop_assert!((simpson(p, a, b, 2 * half) - exact).abs() < 1e-10 * (1.0 + exact.abs()));
    }
}

#[test]
fn nan_residuals_fail() {
    assert_eq!(CheckRow::new("X", "q", f64::NAN, 1.0).status, Status::Fail);
    assert_eq!(CheckRow::new("X", "q", 0.0, 0.0).status, Status::Fail);
}
