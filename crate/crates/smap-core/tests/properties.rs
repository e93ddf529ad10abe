use proptest::prelude::*;

use smap_core::decompose::{synthesize, DecomposeConfig};
use smap_core::diagnostics::j_closed;
use smap_core::evolve::{midpoint_step, rotate, RadialOperator, SphereField};
use smap_core::ground_state::{ambient_to_frame, frame_to_ambient};
use smap_core::modulation_ode::kappa;
use smap_core::profiles::{log_integral, CutoffFamily};
use smap_core::RadialGrid;

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_is_an_isometry_and_composes(x in -2.0..2.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64, p in -7.0..7.0f64, q in -7.0..7.0f64) {
        let v = [x, y, z];
        prop_assert!((norm(rotate(v, p)) - norm(v)).abs() <= 1e-12);
        let two = rotate(rotate(v, p), q);
        let one = rotate(v, p + q);
        for k in 0..3 {
            prop_assert!((two[k] - one[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn frame_change_round_trips(y in 1e-3..1e3f64, a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64) {
        let amb = frame_to_ambient(y, a, b, c);
        prop_assert!((norm(amb) - norm([a, b, 1.0 + c])).abs() <= 1e-12);
        let back = ambient_to_frame(y, amb);
        prop_assert!((back[0] - a).abs() <= 1e-12 && (back[1] - b).abs() <= 1e-12 && (back[2] - c).abs() <= 1e-12);
    }

    #[test]
    fn cutoff_is_monotone_between_zero_and_one(x in 0.0..3.0f64, dx in 0.0..1.0f64) {
        let c = CutoffFamily::default();
        let (lo, hi) = (c.eval(x), c.eval(x + dx));
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(hi <= lo);
    }

    #[test]
    fn log_integral_has_the_right_derivative(y in 1e-2..1e3f64) {
        let h = 1e-4 * y;
        let fd = (log_integral(y + h) - log_integral(y - h)) / (2.0 * h);
        let exact = (1.0 + y * y).ln() / y;
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.max(1.0));
    }

    #[test]
    fn kappa_is_odd_in_a_and_vanishes_for_nonpositive_b(a in -1.0..1.0f64, b in 1e-8..0.5f64) {
        prop_assert_eq!(kappa(-a, b), -kappa(a, b));
        prop_assert_eq!(kappa(a, -b), 0.0);
    }

    #[test]
    fn j_is_bounded_by_its_limit(y in 1e-4..1e4f64) {
        let j = j_closed(y);
        prop_assert!((0.0..=0.5).contains(&j));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthesized_fields_lie_on_the_sphere(lambda in 0.5..2.0f64, theta in -3.0..3.0f64, a in -0.005..0.005f64, b in 0.01..0.08f64) {
        let grid = RadialGrid::log_uniform(1e-3, 200.0, 300).unwrap();
        let v = synthesize(&grid, lambda, theta, a, b, &DecomposeConfig::adapted_to(0.08)).unwrap();
        prop_assert!(v.sphere_violation() <= 1e-12);
    }

    #[test]
    fn midpoint_step_conserves_energy_and_constraint(amp in -0.3..0.3f64, width in 0.5..4.0f64, dt in 1e-3..5e-2f64) {
        let grid = RadialGrid::log_uniform(1e-3, 100.0, 200).unwrap();
        let q = SphereField::q_profile(&grid, 1.0);
        let bumped: Vec<[f64; 3]> = q
            .values()
            .iter()
            .zip(grid.nodes())
            .map(|(v, r)| {
                let w = rotate(*v, amp * (-r * r / (width * width)).exp());
                let tilt = [w[0], w[1] + 0.5 * amp * r * (-r / width).exp(), w[2]];
                let n = norm(tilt);
                [tilt[0] / n, tilt[1] / n, tilt[2] / n]
            })
            .collect();
        let op = RadialOperator::new(&grid);
        let (next, _) = midpoint_step(&op, &bumped, dt).unwrap();
        let (e0, e1) = (op.energy(&bumped), op.energy(&next));
        prop_assert!((e1 - e0).abs() <= 1e-9 * e0);
        let worst = next.iter().map(|v| (norm(*v) - 1.0).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-14);
    }
}
