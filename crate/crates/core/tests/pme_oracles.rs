//! The deterministic solver against closed-form solutions.

use proptest::prelude::*;
use ranknoise::pme_solver::{pme_weak_residual, solve_pme, uniform_times, PmeGrid};
use ranknoise::weak_form::default_test_family;
use ranknoise::{CoefficientSpec, GammaSpec, GridCdf, InitialLawSpec, RankFunction};
use statrs::distribution::{ContinuousCDF, Normal};

fn phi(z: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

fn coeffs(b: f64, sigma: f64) -> CoefficientSpec {
    CoefficientSpec::degenerate(RankFunction::Constant(b), RankFunction::Constant(sigma), GammaSpec::zero()).unwrap()
}

fn sup_error(g: &GridCdf, exact: impl Fn(f64) -> f64) -> f64 {
    g.nodes().zip(g.values()).map(|(x, v)| (v - exact(x)).abs()).fold(0.0, f64::max)
}

#[test]
fn heat_equation_oracle() {
    let c = coeffs(0.0, 2f64.sqrt());
    let grid = PmeGrid::with_cfl(-8.0, 9.0, 1601, 1.0, &c).unwrap();
    let init = grid.initial(&InitialLawSpec::gaussian(0.0, 1.0).unwrap()).unwrap();
    let times = [0.0, 0.25, 0.5, 1.0];
    let sol = solve_pme(&init, &c, &grid, &times).unwrap();
    for (k, t) in times.iter().enumerate() {
        let err = sup_error(sol.slice(k), |x| phi(x / (1.0 + 2.0 * t).sqrt()));
        assert!(err < 5e-3, "t = {t}: {err:e}");
    }
}

#[test]
fn advection_diffusion_error_is_first_order() {
    let c = coeffs(1.0, 1.0);
    let law = InitialLawSpec::gaussian(0.0, 1.0).unwrap();
    let mut errors = Vec::new();
    for m in [201, 401, 801, 1601] {
        let grid = PmeGrid::with_cfl(-8.0, 9.0, m, 1.0, &c).unwrap();
        let sol = solve_pme(&grid.initial(&law).unwrap(), &c, &grid, &[0.0, 1.0]).unwrap();
        errors.push(sup_error(sol.slice(1), |x| phi((x - 1.0) / 2f64.sqrt())));
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 0.9, "{errors:?}");
    }
}

#[test]
fn oracle_weak_residual_is_small_and_exact_at_zero_horizon() {
    let c = coeffs(1.0, 1.0);
    let fam = default_test_family(-4.0, 5.0);
    // the oracle is sampled, not stepped, so no step restriction applies
    let grid = PmeGrid { x_min: -8.0, x_max: 9.0, m: 1701, dt_pde: 1e-3, horizon: 1.0 };
    let oracle = |t: f64, x: f64| phi((x - t) / (1.0 + t).sqrt());
    let sol = ranknoise::pme_solver::PmeSolution::from_fn(grid, uniform_times(1.0, 1e-3), oracle).unwrap();
    let r = pme_weak_residual(&sol, &c, &fam).unwrap();
    // left-point time sums cost O(dt); the spatial quadrature is spectrally accurate
    assert!(r < 5e-3, "{r:e}");
    let fine = ranknoise::pme_solver::PmeSolution::from_fn(grid, uniform_times(1.0, 5e-4), oracle).unwrap();
    assert!(pme_weak_residual(&fine, &c, &fam).unwrap() < 0.6 * r);
    let zero = ranknoise::pme_solver::PmeSolution::from_fn(grid, vec![0.0], oracle).unwrap();
    assert_eq!(pme_weak_residual(&zero, &c, &fam).unwrap(), 0.0);
}

#[test]
fn solver_weak_residual_halves_under_refinement() {
    let c = coeffs(1.0, 1.0);
    let law = InitialLawSpec::gaussian(0.0, 1.0).unwrap();
    let fam = default_test_family(-4.0, 5.0);
    let mut res = Vec::new();
    let (mut m, mut dt) = (341, 0.02);
    for _ in 0..3 {
        let grid = PmeGrid::with_cfl(-8.0, 9.0, m, 1.0, &c).unwrap();
        let sol = solve_pme(&grid.initial(&law).unwrap(), &c, &grid, &uniform_times(1.0, dt)).unwrap();
        res.push(pme_weak_residual(&sol, &c, &fam).unwrap());
        m = 2 * m - 1;
        dt *= 0.5;
    }
    for w in res.windows(2) {
        assert!(w[0] / w[1] >= 1.5, "{res:?}");
    }
}

#[test]
fn affine_coefficients_keep_slices_monotone() {
    let c = CoefficientSpec::new(
        RankFunction::Affine { intercept: 0.5, slope: 1.0 },
        RankFunction::Affine { intercept: 0.8, slope: 0.6 },
        GammaSpec::zero(),
    )
    .unwrap();
    let law = InitialLawSpec::gaussian(0.3, 0.7).unwrap();
    let grid = PmeGrid::for_law(&law, &c, 801, 1.0).unwrap();
    let sol = solve_pme(&grid.initial(&law).unwrap(), &c, &grid, &uniform_times(1.0, 0.1)).unwrap();
    assert!(sol.max_violation() < 1e-12);
    for s in sol.slices() {
        assert!(s.values().windows(2).all(|w| w[1] >= w[0]));
        assert_eq!((s.values()[0], s.values()[s.len() - 1]), (0.0, 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn comparison_principle(mean in -0.5f64..0.5, sd in 0.5f64..1.5, gap in 0.0f64..0.5) {
        // a law shifted right has a pointwise smaller CDF, for all times
        let c = CoefficientSpec::new(
            RankFunction::Affine { intercept: 1.0, slope: 0.5 },
            RankFunction::Constant(1.0),
            GammaSpec::zero(),
        ).unwrap();
        let lo = InitialLawSpec::gaussian(mean + gap, sd).unwrap();
        let hi = InitialLawSpec::gaussian(mean, sd).unwrap();
        let grid = PmeGrid::with_cfl(-12.0, 14.0, 261, 0.5, &c).unwrap();
        let times = uniform_times(0.5, 0.05);
        let a = solve_pme(&grid.initial(&lo).unwrap(), &c, &grid, &times).unwrap();
        let b = solve_pme(&grid.initial(&hi).unwrap(), &c, &grid, &times).unwrap();
        for (s, t) in a.slices().iter().zip(b.slices()) {
            prop_assert!(s.values().iter().zip(t.values()).all(|(x, y)| x <= y));
        }
    }
}
