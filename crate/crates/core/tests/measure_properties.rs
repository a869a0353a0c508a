//! Metric and coupling properties of the measure representations.

use proptest::prelude::*;
use ranknoise::measures::{w1_from_cdfs, wasserstein};
use ranknoise::{EmpiricalMeasure, GridCdf, WassersteinOrder};

fn sample(n: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec(-5.0f64..5.0, n).prop_map(|p| EmpiricalMeasure::new(p).unwrap())
}

fn triple() -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure, EmpiricalMeasure)> {
    (1usize..40).prop_flat_map(|n| (sample(n), sample(n), sample(n)))
}

fn mixed_triple() -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure, EmpiricalMeasure)> {
    (1usize..30, 1usize..30, 1usize..30).prop_flat_map(|(n, m, k)| (sample(n), sample(m), sample(k)))
}

/// `int |F_a - F_b| dx`, summed exactly between consecutive atoms of either
/// measure: the CDF form of `W_1`, independent of any quantile coupling.
fn w1_by_cdf_integral(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let mut xs: Vec<f64> = a.points().iter().chain(b.points()).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.windows(2).map(|w| (a.cdf(w[0]) - b.cdf(w[0])).abs() * (w[1] - w[0])).sum()
}

proptest! {
    #[test]
    fn unequal_sizes_match_the_cdf_integral((a, b, c) in mixed_triple()) {
        let w = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| wasserstein(x, y, WassersteinOrder::W1);
        prop_assert!((w(&a, &b) - w1_by_cdf_integral(&a, &b)).abs() <= 1e-12);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
        prop_assert_eq!(w(&a, &b), w(&b, &a));
    }

    #[test]
    fn w1_is_a_metric((a, b, c) in triple()) {
        let w = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| wasserstein(x, y, WassersteinOrder::W1);
        prop_assert_eq!(w(&a, &b), w(&b, &a));
        prop_assert_eq!(w(&a, &a), 0.0);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
    }

    #[test]
    fn w2_triangle((a, b, c) in triple()) {
        let w = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| wasserstein(x, y, WassersteinOrder::W2);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
    }

    #[test]
    fn shift_is_an_isometry((a, b, _) in triple(), c in -3.0f64..3.0) {
        // translating both atoms of a coupled pair by the same c leaves their
        // difference unchanged up to one rounding of each shifted atom
        let before = wasserstein(&a, &b, WassersteinOrder::W1);
        let after = wasserstein(&a.shift(c), &b.shift(c), WassersteinOrder::W1);
        prop_assert!((before - after).abs() <= 4.0 * f64::EPSILON * 8.0);
        // when the shift is exactly representable for every atom the
        // distances coincide bit for bit
        let ints_a = EmpiricalMeasure::new(a.points().iter().map(|x| x.round()).collect()).unwrap();
        let ints_b = EmpiricalMeasure::new(b.points().iter().map(|x| x.round()).collect()).unwrap();
        prop_assert_eq!(
            wasserstein(&ints_a.shift(3.0), &ints_b.shift(3.0), WassersteinOrder::W1),
            wasserstein(&ints_a, &ints_b, WassersteinOrder::W1)
        );
    }

    #[test]
    fn grid_and_quantile_w1_agree((a, b, _) in triple()) {
        let (x_min, x_max, m) = (-6.0, 6.0, 1201);
        let dx = (x_max - x_min) / (m - 1) as f64;
        let ga = a.to_grid(x_min, x_max, m, 1e-9).unwrap();
        let gb = b.to_grid(x_min, x_max, m, 1e-9).unwrap();
        let grid = w1_from_cdfs(&ga, &gb).unwrap();
        let exact = wasserstein(&a, &b, WassersteinOrder::W1);
        prop_assert!((grid - exact).abs() <= 3.0 * dx, "{} vs {}", grid, exact);
    }

    #[test]
    fn quantile_then_cdf_reaches_level(a in (1usize..30).prop_flat_map(sample), k in 1usize..30) {
        let n = a.len();
        let u = (k.min(n) as f64) / n as f64;
        if u < 1.0 {
            prop_assert!(a.cdf(a.quantile(u).unwrap()) >= u);
        }
    }
}

#[test]
fn unequal_sizes_small_cases() {
    let m = |p: &[f64]| EmpiricalMeasure::new(p.to_vec()).unwrap();
    let w = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| wasserstein(x, y, WassersteinOrder::W1);
    assert_eq!(w(&m(&[0.0]), &m(&[0.0, 1.0])), 0.5);
    assert_eq!(w(&m(&[0.0, 1.0]), &m(&[0.0, 0.0, 1.0, 1.0])), 0.0);
    // breaks at 1/3, 1/2, 2/3: 0/3 + |1-0|/6 + |1-3|/6 + |2-3|/3
    let d = w(&m(&[0.0, 1.0, 2.0]), &m(&[0.0, 3.0]));
    assert!((d - 5.0 / 6.0).abs() < 1e-15, "{d}");
    let w2 = wasserstein(&m(&[0.0]), &m(&[0.0, 2.0]), WassersteinOrder::W2);
    assert!((w2 - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn w1_of_shifted_gaussian_grid_matches_translation() {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    let f = GridCdf::from_fn(-8.0, 8.0, 1601, |x| n.cdf(x)).unwrap();
    let g = f.shift(0.3).unwrap();
    let dx = f.dx();
    assert!((w1_from_cdfs(&f, &g).unwrap() - 0.3).abs() <= 2.0 * dx);
    // cross-check against the quantile coupling of large samples
    let qs: Vec<f64> = (0..20_000).map(|i| n.inverse_cdf((i as f64 + 0.5) / 20_000.0)).collect();
    let mu = EmpiricalMeasure::new(qs).unwrap();
    assert!((wasserstein(&mu, &mu.shift(0.3), WassersteinOrder::W1) - 0.3).abs() < 1e-12);
}

#[test]
fn csv_round_trip_of_grid_is_bitwise() {
    let g = GridCdf::from_fn(-2.0, 2.0, 41, |x| ((x + 2.0) / 4.0).clamp(0.0, 1.0)).unwrap();
    let mut buf = Vec::new();
    g.write_csv(&mut buf).unwrap();
    assert_eq!(GridCdf::read_csv(buf.as_slice()).unwrap(), g);
}
