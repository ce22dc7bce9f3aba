use bh_plasticity::geometry::{
    acceptance, epsilon_bound, required_m, run_ac_trials, AcTrialConfig, Box3, CentroidPlacement, Theta, Vec3, SQRT_3,
    THETA_MAX,
};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = Box3> {
    (
        (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64),
        (0.1..10.0f64, 0.1..10.0f64, 0.1..10.0f64),
    )
        .prop_map(|((x, y, z), (a, b, c))| Box3::new(Vec3::new(x, y, z), Vec3::new(a, b, c)).unwrap())
}

fn point_in(b: Box3, u: (f64, f64, f64)) -> Vec3 {
    b.min_corner() + Vec3::new(u.0, u.1, u.2).mul_elem(&b.sides())
}

fn unit() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)
}

proptest! {
    // A box containing the searcher is never accepted when the centroid
    // is within a diagonal of it.
    #[test]
    fn containing_box_is_always_expanded(b in arb_box(), uq in unit(), up in unit(), t in 0.01..=1.0f64) {
        let theta = Theta::new(t * THETA_MAX).unwrap();
        let q = point_in(b, uq);
        let p = point_in(b, up);
        let d = p.distance(&q);
        prop_assume!(d > 0.0 && d <= b.diagonal());
        prop_assert!(!acceptance(b.max_side(), d, theta).unwrap());
    }

    #[test]
    fn acceptance_matches_ratio(l in 0.01..100.0f64, d in 0.01..1000.0f64, t in 0.01..0.57f64) {
        let theta = Theta::new(t).unwrap();
        prop_assert_eq!(acceptance(l, d, theta).unwrap(), l / d < t);
    }

    #[test]
    fn required_m_increases(a in 0.001..0.577f64, b in 0.001..0.577f64) {
        prop_assume!(a < b);
        let ma = required_m(Theta::new(a).unwrap()).unwrap();
        let mb = required_m(Theta::new(b).unwrap()).unwrap();
        prop_assert!(ma >= 1.0);
        prop_assert!(ma < mb);
    }

    #[test]
    fn epsilon_bounds_scale_with_max_side(b in arb_box()) {
        prop_assert!(epsilon_bound(&b, false) <= SQRT_3 * b.max_side() * (1.0 + 1e-12));
        prop_assert!(epsilon_bound(&b, true) <= 0.25 * SQRT_3 * b.max_side() * (1.0 + 1e-12));
        prop_assert!((epsilon_bound(&b, true) * 4.0 - epsilon_bound(&b, false)).abs() < 1e-12);
    }

    #[test]
    fn every_point_has_exactly_one_octant(b in arb_box(), u in unit()) {
        let p = point_in(b, u);
        prop_assume!(b.contains(&p));
        let owners: Vec<usize> = (0..8).filter(|&i| b.octant(i).contains(&p)).collect();
        prop_assert_eq!(owners, vec![b.octant_of(&p)]);
    }
}

#[test]
fn upper_corner_is_outside() {
    let b = Box3::cube(Vec3::ZERO, 2.0).unwrap();
    assert!(b.contains(&Vec3::ZERO));
    assert!(!b.contains(&Vec3::new(2.0, 1.0, 1.0)));
    assert!(b.contains_closed(&Vec3::new(2.0, 1.0, 1.0)));
    assert_eq!(b.octant_of(&Vec3::splat(1.0)), 7);
}

proptest! {
    // Centroid at the far corner, child centroid at the near corner, query
    // just inside acceptance range along the diagonal.
    #[test]
    fn corner_construction_breaks_above_the_child_guarantee(t in (0.5 / SQRT_3 + 1e-6)..=THETA_MAX, side in 0.1..100.0f64) {
        let theta = Theta::new(t).unwrap();
        let s = Box3::cube(Vec3::ZERO, side).unwrap();
        let p = s.max_corner();
        let q = p + Vec3::splat(-1.0 / SQRT_3) * (side / t * (1.0 + 1e-9));
        prop_assert!(acceptance(side, p.distance(&q), theta).unwrap());
        prop_assert!(!acceptance(side / 2.0, s.min_corner().distance(&q), theta).unwrap());
    }
}

#[test]
fn random_trials_hold_at_the_child_guarantee() {
    let t = Theta::new(0.5 / SQRT_3).unwrap();
    let report = run_ac_trials(&AcTrialConfig::new(t, 200_000, 5, CentroidPlacement::Anywhere));
    assert_eq!(report.violations, 0);
    assert!(report.first.is_none());
}
