mod common;

use common::{angle_gap, grid_search_rotation, random_shape, rng};
use posefer::harness::{synth_landmarks, SynthConfig, SynthParams};
use posefer::shape::{
    center, flip_reorder, gpa, optimal_rotation, procrustes_align, scale_of, FlipPermutation,
    Mirror, Shape,
};
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = Shape> {
    prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 68)
        .prop_filter("non-degenerate", |pts| {
            let s = Shape::from_xy(pts).unwrap();
            scale_of(&s) > 1e-3
        })
        .prop_map(|pts| Shape::from_xy(&pts).unwrap())
}

#[test]
fn rotation_matches_brute_force_search() {
    let mut r = rng(21);
    for _ in 0..20 {
        let a = random_shape(&mut r).normalized().unwrap();
        let b = random_shape(&mut r).normalized().unwrap();
        let theta = optimal_rotation(&a, &b).unwrap();
        let brute = grid_search_rotation(&a, &b, 10_000);
        assert!(angle_gap(theta, brute) < 1e-6, "{theta} vs {brute}");
    }
}

#[test]
fn rotation_of_a_rotated_copy_is_recovered() {
    let face = synth_landmarks(&SynthConfig::default(), &SynthParams::neutral(10.0));
    let (face, _) = center(&face);
    for theta in [-3.0, -1.2, 0.0, 0.4, 2.9] {
        let turned = face.rotated(theta);
        let back = optimal_rotation(&turned, &face).unwrap();
        assert!(angle_gap(back, -theta) < 1e-12, "{theta}: {back}");
    }
}

#[test]
fn gpa_does_not_depend_on_input_order() {
    let mut r = rng(5);
    let base = random_shape(&mut r);
    let mut shapes: Vec<Shape> = (0..12)
        .map(|i| {
            let pts: Vec<(f64, f64)> = base
                .points()
                .iter()
                .map(|p| {
                    (
                        p.x + 0.05 * ((i * 7 + 3) as f64).sin(),
                        p.y + 0.03 * (i as f64).cos(),
                    )
                })
                .collect();
            Shape::from_xy(&pts)
                .unwrap()
                .rotated(0.1 * i as f64)
                .scaled(1.0 + i as f64)
        })
        .collect();
    let a = gpa(&shapes, 100).unwrap();
    shapes.reverse();
    let b = gpa(&shapes, 100).unwrap();
    assert!(a.mean_shape.max_abs_diff(&b.mean_shape).unwrap() < 1e-9);
}

#[test]
fn gpa_mean_is_centered_unit_scale() {
    let mut r = rng(6);
    let shapes: Vec<Shape> = (0..10).map(|_| random_shape(&mut r)).collect();
    let g = gpa(&shapes, 100).unwrap();
    let c = g.mean_shape.centroid();
    assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
    assert!((scale_of(&g.mean_shape) - 1.0).abs() < 1e-12);
    assert_eq!(g.aligned_shapes.len(), 10);
}

#[test]
fn flip_table_round_trips_through_text() {
    let p = FlipPermutation::default_68();
    assert_eq!(FlipPermutation::parse(&p.to_table_string()).unwrap(), p);
}

#[test]
fn flip_table_pairs_contours_and_keeps_the_midline() {
    let p = FlipPermutation::default_68();
    assert_eq!(p.map(0), 16);
    assert_eq!(p.map(8), 8);
    assert_eq!(p.map(30), 30);
    assert_eq!(p.map(36), 45);
    assert_eq!(p.map(48), 54);
    for j in 0..68 {
        assert_eq!(p.map(p.map(j)), j);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalizing_twice_changes_nothing(s in shape_strategy()) {
        let once = s.normalized().unwrap();
        let twice = once.normalized().unwrap();
        prop_assert!(once.max_abs_diff(&twice).unwrap() < 1e-12);
        let c = once.centroid();
        prop_assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
        prop_assert!((scale_of(&once) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_copies_align_onto_the_reference(
        s in shape_strategy(),
        theta in -3.1..3.1f64,
        k in 0.01..100.0f64,
        tx in -1e3..1e3f64,
        ty in -1e3..1e3f64,
    ) {
        let moved = s.rotated(theta).scaled(k).translated(tx, ty);
        let (aligned, _) = procrustes_align(&moved, &s).unwrap();
        let (centered, _) = center(&s);
        prop_assert!(aligned.max_abs_diff(&centered).unwrap() < 1e-8 * (1.0 + scale_of(&s)));
    }

    #[test]
    fn alignment_never_increases_distance(a in shape_strategy(), b in shape_strategy()) {
        let (ref_c, _) = center(&b);
        let (aligned, _) = procrustes_align(&a, &b).unwrap();
        let (a_c, _) = center(&a);
        let plain = a_c.scaled(scale_of(&ref_c) / scale_of(&a_c));
        prop_assert!(aligned.sq_distance(&ref_c).unwrap() <= plain.sq_distance(&ref_c).unwrap() + 1e-9);
    }

    #[test]
    fn mirroring_twice_is_identity(s in shape_strategy(), w in 1.0..500.0f64) {
        let p = FlipPermutation::default_68();
        let back = flip_reorder(&flip_reorder(&s, &p, Mirror::Width(w)).unwrap(), &p, Mirror::Width(w)).unwrap();
        prop_assert!(back.max_abs_diff(&s).unwrap() < 1e-9);
    }
}
