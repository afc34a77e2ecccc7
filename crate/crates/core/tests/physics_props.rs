use proptest::prelude::*;

use wgsr::physics::{
    default_mode_count, greens_function, synthesize_response, ArrayGeometry, FrequencyGrid, ModalBasis, Point,
    ResponseSynthesizer, SourceConfig, Truncation, WaveguideModel,
};

fn model() -> WaveguideModel {
    WaveguideModel::new(1500.0, 200.0).unwrap()
}

fn k_center() -> f64 {
    model().wavenumber(32.0625)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn vanishes_on_both_boundaries(x in 0.0..600.0f64, xs in 0.0..600.0f64, ys in 1.0..199.0f64) {
        prop_assume!((x - xs).abs() >= 1.0);
        let m = model();
        let basis = ModalBasis::for_min_offset(&m, k_center(), 1.0).unwrap();
        for y in [0.0, 200.0] {
            let g = greens_function(&m, &basis, Point::new(x, y), Point::new(xs, ys)).unwrap();
            prop_assert!(g.norm() < 1e-12, "|G| = {}", g.norm());
        }
    }

    #[test]
    fn reciprocal(
        x in 0.0..600.0f64, y in 1.0..199.0f64,
        xs in 0.0..600.0f64, ys in 1.0..199.0f64,
    ) {
        prop_assume!((x - xs).abs() >= 1.0);
        let m = model();
        let basis = ModalBasis::for_min_offset(&m, k_center(), 1.0).unwrap();
        let a = greens_function(&m, &basis, Point::new(x, y), Point::new(xs, ys)).unwrap();
        let b = greens_function(&m, &basis, Point::new(xs, ys), Point::new(x, y)).unwrap();
        prop_assert!((a - b).norm() < 1e-12 * a.norm().max(1.0));
    }

    #[test]
    fn doubling_the_truncation_changes_little(
        dx in 10.0..600.0f64, y in 1.0..199.0f64, ys in 1.0..199.0f64,
    ) {
        let m = model();
        let k = k_center();
        let n = default_mode_count(&m, k, 10.0).unwrap();
        let b1 = ModalBasis::new(&m, k, n).unwrap();
        let b2 = ModalBasis::new(&m, k, 2 * n).unwrap();
        let (p, q) = (Point::new(0.0, y), Point::new(dx, ys));
        let g1 = greens_function(&m, &b1, p, q).unwrap();
        let g2 = greens_function(&m, &b2, p, q).unwrap();
        prop_assert!((g1 - g2).norm() <= 1e-6 * g2.norm().max(1e-12));
    }

    #[test]
    fn responses_superpose(
        pts in prop::collection::vec((490.0..570.0f64, 1.0..199.0f64), 2..6),
    ) {
        let m = model();
        let freqs = FrequencyGrid::new(32.0625, 12.825, 5).unwrap();
        let array = ArrayGeometry::uniform(0.0, 0.0, 10.0, 21);
        let synth = ResponseSynthesizer::new(&m, &freqs, &array, Truncation::Auto { min_offset: 490.0 }).unwrap();
        let sources: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let whole = synth.synthesize(&SourceConfig::new(sources.clone())).unwrap();
        let mut sum = synth.synthesize(&SourceConfig::new(vec![])).unwrap();
        for s in &sources {
            sum = sum.try_add(&synth.synthesize(&SourceConfig::new(vec![*s])).unwrap()).unwrap();
        }
        // Appending one source to a prefix is exact: accumulation is in source order.
        let (last, prefix) = sources.split_last().unwrap();
        let head = synth.synthesize(&SourceConfig::new(prefix.to_vec())).unwrap();
        let tail = synth.synthesize(&SourceConfig::new(vec![*last])).unwrap();
        prop_assert_eq!(head.try_add(&tail).unwrap(), whole.clone());
        let scale = whole.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in whole.as_slice().iter().zip(sum.as_slice()) {
            prop_assert!((a - b).norm() <= 1e-13 * scale);
        }
    }
}

#[test]
fn doubling_a_source_doubles_the_response() {
    let m = model();
    let freqs = FrequencyGrid::new(32.0625, 12.825, 7).unwrap();
    let array = ArrayGeometry::uniform(0.0, 0.0, 2.5, 81);
    let s = Point::new(530.0, 77.0);
    let one = synthesize_response(&m, &freqs, &array, &SourceConfig::new(vec![s])).unwrap();
    let two = synthesize_response(&m, &freqs, &array, &SourceConfig::new(vec![s, s])).unwrap();
    assert_eq!(two, one.scaled(num_complex::Complex64::new(2.0, 0.0)));
}
