use posefer::features::{
    combine_features, geometric_feature, lbp_code, normalize_feature, pca_reduce_apply,
    pca_reduce_fit, sift_descriptor_at, tplbp_code, tplbp_grid_feature, FeatureFamily,
    FeatureMatrix, FeatureVector, GrayImage, HistogramBins, PcaReducer, SiftParams, TplbpParams,
};
use posefer::shape::{Point, Shape};
use proptest::prelude::*;

fn spot(w: usize, h: usize, x: usize, y: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |px, py| if (px, py) == (x, y) { 1.0 } else { 0.0 })
}

#[test]
fn lbp_with_bright_east_neighbour() {
    // The east sample sees the spot directly; the two diagonal samples next
    // to it pick up a bilinear share of it. Bits 0, 1 and 7.
    let img = spot(5, 5, 3, 2);
    assert_eq!(lbp_code(&img, 2, 2, 1.0).unwrap(), 0b1000_0011);
}

#[test]
fn lbp_with_bright_north_neighbour() {
    // Sample 2 points up (towards row 0).
    let img = spot(5, 5, 2, 1);
    assert_eq!(lbp_code(&img, 2, 2, 1.0).unwrap(), 0b0000_1110);
}

#[test]
fn lbp_of_flat_image_is_zero_and_needs_a_full_ring() {
    let img = GrayImage::constant(5, 5, 0.3);
    assert_eq!(lbp_code(&img, 2, 2, 1.0).unwrap(), 0);
    assert!(lbp_code(&img, 0, 2, 1.0).is_err());
    assert!(lbp_code(&img, 2, 2, 0.0).is_err());
}

#[test]
fn tplbp_with_a_spot_in_the_east_patch() {
    // r = 2, w = 3: the spot at (x + 3, y) lies in the east patch P0 only
    // (D0 = 1). The diagonal patches P1 and P7 reach it through one
    // interpolated sample each, D = (0.4142 * 0.5858)^2 = 0.0589. Bit 0
    // (D0 - D2 = 1) and bit 1 (D1 - D3 = 0.0589) pass tau = 0.01; bit 7
    // compares D7 with D1 and is 0.
    let img = spot(13, 13, 9, 6);
    let params = TplbpParams::default();
    assert_eq!(tplbp_code(&img, 6, 6, &params).unwrap(), 0b0000_0011);
}

#[test]
fn tplbp_threshold_is_inclusive_of_tau() {
    let img = GrayImage::constant(13, 13, 0.5);
    let params = TplbpParams {
        tau: 0.0,
        ..TplbpParams::default()
    };
    // all distances are zero and 0 - 0 >= 0 sets every bit
    assert_eq!(tplbp_code(&img, 6, 6, &params).unwrap(), 0xff);
    assert_eq!(tplbp_code(&img, 6, 6, &TplbpParams::default()).unwrap(), 0);
}

#[test]
fn tplbp_needs_the_full_support() {
    let img = GrayImage::constant(13, 13, 0.5);
    let params = TplbpParams::default();
    // ring radius 2 plus half a patch: margin 3
    assert!(tplbp_code(&img, 3, 3, &params).is_ok());
    assert!(tplbp_code(&img, 2, 6, &params).is_err());
    assert!(tplbp_code(&img, 10, 6, &params).is_err());
}

#[test]
fn uniform_bins_keep_histogram_mass() {
    let img = GrayImage::from_fn(40, 40, |x, y| ((x * 7 + y * 13) % 11) as f64 / 10.0);
    let full = tplbp_grid_feature(&img, &TplbpParams::default()).unwrap();
    let uniform = tplbp_grid_feature(
        &img,
        &TplbpParams {
            bins: HistogramBins::Uniform,
            ..TplbpParams::default()
        },
    )
    .unwrap();
    assert_eq!(full.dim(), 4096);
    assert_eq!(uniform.dim(), 16 * 59);
    let sum = |v: &FeatureVector| v.values.iter().sum::<f64>();
    assert_eq!(sum(&full), sum(&uniform));
    assert_eq!(sum(&full), (34 * 34) as f64);
}

#[test]
fn sift_of_a_horizontal_ramp_points_east() {
    let img = GrayImage::from_fn(40, 40, |x, _| x as f64 / 40.0);
    let d = sift_descriptor_at(&img, Point::new(20.0, 20.0), &SiftParams::default()).unwrap();
    assert_eq!(d.len(), 128);
    let east: f64 = d.iter().step_by(8).map(|v| v * v).sum();
    let all: f64 = d.iter().map(|v| v * v).sum();
    assert!((all - 1.0).abs() < 1e-12);
    assert!((east - all).abs() < 1e-12, "east share {east}");
    // the window is centered on a pixel, so cells mirror across both axes
    let cell = |r: usize, c: usize| d[(r * 4 + c) * 8];
    for r in 0..4 {
        for c in 0..4 {
            assert!((cell(r, c) - cell(3 - r, c)).abs() < 1e-12);
            assert!((cell(r, c) - cell(r, 3 - c)).abs() < 1e-12);
            assert!(cell(r, c) > 0.0);
        }
    }
}

#[test]
fn sift_of_a_flat_image_is_zero() {
    let img = GrayImage::constant(30, 30, 0.4);
    let d = sift_descriptor_at(&img, Point::new(15.0, 15.0), &SiftParams::default()).unwrap();
    assert!(d.iter().all(|v| *v == 0.0));
    assert!(sift_descriptor_at(&img, Point::new(31.0, 2.0), &SiftParams::default()).is_err());
}

#[test]
fn geometric_feature_is_the_coordinate_vector() {
    let pts: Vec<(f64, f64)> = (0..68).map(|i| (i as f64, -(i as f64))).collect();
    let g = geometric_feature(&Shape::from_xy(&pts).unwrap()).unwrap();
    assert_eq!(g.family, FeatureFamily::Geom);
    assert_eq!(
        g.values[..68],
        (0..68).map(|i| i as f64).collect::<Vec<_>>()[..]
    );
    assert_eq!(g.values[68], 0.0);
    assert_eq!(g.values[135], -67.0);
    assert!(geometric_feature(&Shape::from_xy(&pts[..5]).unwrap()).is_err());
}

#[test]
fn pca_reducer_text_round_trip() {
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|i| (0..5).map(|j| ((i * j) as f64).sin()).collect())
        .collect();
    let r = pca_reduce_fit(&rows, 0.9).unwrap();
    let back = PcaReducer::from_text(&r.to_text()).unwrap();
    assert_eq!(back, r);
    assert_eq!(
        pca_reduce_apply(&back, &rows[3]).unwrap(),
        pca_reduce_apply(&r, &rows[3]).unwrap()
    );
}

fn finite_vec(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6..1e6f64, 0..max)
}

proptest! {
    #[test]
    fn normalized_vectors_have_unit_norm_or_are_zero(v in finite_vec(50)) {
        let n = normalize_feature(&v);
        prop_assert_eq!(n.len(), v.len());
        let norm: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
        let again = normalize_feature(&n);
        for (a, b) in n.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn combining_concatenates(a in finite_vec(20), b in finite_vec(20)) {
        let c = combine_features(&[
            FeatureVector::new(FeatureFamily::Sift, a.clone()),
            FeatureVector::new(FeatureFamily::Geom, b.clone()),
        ]);
        prop_assert_eq!(c.family, FeatureFamily::Combined);
        prop_assert_eq!(c.dim(), a.len() + b.len());
        prop_assert_eq!(&c.values[..a.len()], &a[..]);
    }

    #[test]
    fn feature_matrix_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e9..1e9f64, 3), 1..20)) {
        let m = FeatureMatrix::from_rows(FeatureFamily::TplbpRegion, &rows).unwrap();
        let back = FeatureMatrix::decode(&m.encode()).unwrap();
        prop_assert_eq!(back.to_rows(), rows);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn histograms_count_every_coded_pixel(w in 28usize..60, h in 28usize..60, seed in 0u64..1000) {
        let img = GrayImage::from_fn(w, h, |x, y| (((x * 31 + y * 17) as u64 ^ seed) % 97) as f64 / 96.0);
        let f = tplbp_grid_feature(&img, &TplbpParams::default()).unwrap();
        prop_assert_eq!(f.values.iter().sum::<f64>(), ((w - 6) * (h - 6)) as f64);
    }
}
