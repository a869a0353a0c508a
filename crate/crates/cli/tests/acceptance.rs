//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so that every criterion is
//! reported even when an earlier one fails. The process exits nonzero if any
//! criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use ranknoise::convergence::{run_convergence, ConvergenceConfig};
use ranknoise::io::write_rows;
use ranknoise::limit_solver::{base_solution, decay_ratio, shift_identity_error, spde_weak_residual, sup_w1};
use ranknoise::measures::{w1_from_cdfs, wasserstein};
use ranknoise::particle_sim::{decompose_y, simulate};
use ranknoise::pme_solver::{solve_pme, uniform_times, PmeGrid};
use ranknoise::weak_form::{default_test_family, QvWeighting};
use ranknoise::{
    BrownianPath, CoefficientSpec, EmpiricalMeasure, FixedPointConfig, GammaSpec, InitialCandidate, InitialLawSpec,
    Integrand, LimitPath, LimitProblem, RankFunction, SimConfig, WassersteinOrder,
};

const SEED: u64 = 42;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

fn gaussian() -> InitialLawSpec {
    InitialLawSpec::gaussian(0.0, 1.0).unwrap()
}

fn constants(b: f64, sigma: f64, gamma: GammaSpec) -> CoefficientSpec {
    CoefficientSpec::degenerate(RankFunction::Constant(b), RankFunction::Constant(sigma), gamma).unwrap()
}

/// Sup error of the PDE solution against `exact(t, x)` at `t = 0.25, 0.5, 1`,
/// and the slice CSV.
fn pme_against(c: &CoefficientSpec, lo: f64, hi: f64, exact: impl Fn(f64, f64) -> f64) -> (f64, Vec<u8>) {
    let grid = PmeGrid::with_cfl(lo, hi, 1601, 1.0, c).unwrap();
    let times = uniform_times(1.0, 0.25);
    let sol = solve_pme(&grid.initial(&gaussian()).unwrap(), c, &grid, &times).unwrap();
    let mut worst = 0.0f64;
    for t in [0.25, 0.5, 1.0] {
        let slice = sol.slice_at(t).unwrap();
        for (x, &r) in slice.nodes().zip(slice.values()) {
            worst = worst.max((r - exact(t, x)).abs());
        }
    }
    let mut csv = Vec::new();
    sol.write_slices_csv(&mut csv, &(0..times.len()).collect::<Vec<_>>()).unwrap();
    (worst, csv)
}

fn criterion_1() -> (Verdict, Vec<u8>) {
    let start = Instant::now();
    let c = constants(1.0, 1.0, GammaSpec::zero());
    let (err, csv) = pme_against(&c, -8.0, 9.0, |t, x| phi((x - t) / (1.0 + t).sqrt()));
    let el = start.elapsed();
    let v = verdict(
        err <= 5e-3 && within(el, 10.0),
        format!("sup error {err:.3e} (<= 5e-3), {:.2} s (< 10 s)", el.as_secs_f64()),
    );
    (v, csv)
}

fn criterion_2() -> (Verdict, Vec<u8>) {
    let start = Instant::now();
    let c = constants(0.0, 2f64.sqrt(), GammaSpec::zero());
    let (err, csv) = pme_against(&c, -8.5, 8.5, |t, x| phi(x / (1.0 + 2.0 * t).sqrt()));
    let el = start.elapsed();
    let v = verdict(
        err <= 5e-3 && within(el, 10.0),
        format!("sup error {err:.3e} (<= 5e-3), {:.2} s (< 10 s)", el.as_secs_f64()),
    );
    (v, csv)
}

struct FixedPointRun {
    problem: LimitProblem,
    path: LimitPath,
    alt: LimitPath,
    elapsed: Duration,
}

fn fixed_point_run() -> FixedPointRun {
    let start = Instant::now();
    let gamma = GammaSpec::mean_functional(Integrand::Tanh { scale: 0.5, rate: 1.0 });
    let c = CoefficientSpec::new(RankFunction::Constant(1.0), RankFunction::Constant(1.0), gamma).unwrap();
    let base = base_solution(&gaussian(), &c, 1601, 1.0, 1e-3).unwrap();
    let steps = base.times().len() - 1;
    let problem = LimitProblem::new(Arc::new(base), c, BrownianPath::common(SEED, 1e-3, steps)).unwrap();
    let cfg = FixedPointConfig::default();
    let path = problem.fixed_point_solve(&InitialCandidate::PmeLaw, &cfg).unwrap();
    let start_path: Vec<f64> = problem.times().iter().map(|t| 0.5 * (3.0 * t).sin()).collect();
    let alt = problem.fixed_point_solve(&InitialCandidate::Path(start_path), &cfg).unwrap();
    FixedPointRun {
        problem,
        path,
        alt,
        elapsed: start.elapsed(),
    }
}

fn fixed_point_csv(run: &FixedPointRun) -> Vec<u8> {
    let mut csv = Vec::new();
    run.path.write_gamma_csv(&mut csv).unwrap();
    run.path.write_log_csv(&mut csv).unwrap();
    csv
}

fn criterion_3(run: &FixedPointRun) -> Verdict {
    let log = &run.path.log;
    let monotone = log.windows(2).all(|w| w[1] <= w[0]);
    let ratio = decay_ratio(log).unwrap_or(f64::NAN);
    let last = *log.last().unwrap();
    let gap = sup_w1(&run.path, &run.alt).unwrap();
    verdict(
        monotone && ratio < 1.0 && last < 1e-8 && log.len() <= 30 && gap <= 2e-8 && within(run.elapsed, 30.0),
        format!(
            "{} iterations (<= 30), monotone {monotone}, fitted ratio {ratio:.3} (< 1), terminal sup-W1 {last:.2e} (< 1e-8), \
             second start within {gap:.2e} (<= 2e-8), {:.1} s (< 30 s)",
            log.len(),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4(run: &FixedPointRun) -> Verdict {
    let levels: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
    let err = shift_identity_error(&run.path, &run.problem.base, &levels).unwrap();
    let dx = run.problem.base.grid.dx();
    verdict(
        err <= 2.0 * dx,
        format!("max quantile-shift error {err:.3e} (<= 2 dx = {:.3e}) over u = 0.1..0.9 and all {} times", 2.0 * dx, run.path.times.len()),
    )
}

/// Residuals of the closed-form shifted Gaussian at three refinement levels.
fn residual_levels(weighting: QvWeighting) -> (Vec<f64>, Vec<u8>) {
    let c = constants(1.0, 1.0, GammaSpec::constant(0.5));
    let fam = default_test_family(-4.0, 6.0);
    let (x_min, x_max) = (-12.0, 14.0);
    let mut path = BrownianPath::common(SEED, 0.01, 100);
    let mut m = 521;
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for level in 0..3u64 {
        if level > 0 {
            path = path.refine(SEED, level);
            m = 2 * m - 1;
        }
        let dt = path.dt();
        let w = path.values();
        let times = uniform_times(1.0, dt);
        let grid = PmeGrid { x_min, x_max, m, dt_pde: dt, horizon: 1.0 };
        let field = LimitPath::from_fn(&grid, times.clone(), w.iter().map(|v| 0.5 * v).collect(), vec![0.5; times.len()], |t, x| {
            let j = (t / dt).round() as usize;
            phi((x - t - 0.5 * w[j]) / (1.0 + t).sqrt())
        })
        .unwrap();
        let r = spde_weak_residual(&field, &c, &path, &fam, weighting).unwrap();
        out.push(r);
        rows.push(vec![level as f64, grid.dx(), dt, r]);
    }
    let mut csv = Vec::new();
    write_rows(&mut csv, &["level", "dx", "dt", "residual"], rows).unwrap();
    (out, csv)
}

fn criterion_5() -> (Verdict, Vec<u8>) {
    let start = Instant::now();
    let (calendar, csv) = residual_levels(QvWeighting::Calendar);
    let (realized, _) = residual_levels(QvWeighting::Realized);
    let el = start.elapsed();
    let ratios = |r: &[f64]| -> Vec<f64> { r.windows(2).map(|w| w[0] / w[1]).collect() };
    let (rc, rr) = (ratios(&calendar), ratios(&realized));
    let fmt = |r: &[f64]| r.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    let v = verdict(
        rc.iter().all(|&q| q >= 1.4) && within(el, 60.0),
        format!(
            "residuals {:?}, ratios [{}] (>= 1.4 each), {:.1} s (< 60 s); diagnostic with dW^2 in place of dt: ratios [{}]",
            calendar.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>(),
            fmt(&rc),
            el.as_secs_f64(),
            fmt(&rr)
        ),
    );
    (v, csv)
}

fn convergence_report() -> (ranknoise::convergence::ConvergenceReport, Duration) {
    let start = Instant::now();
    let cfg = ConvergenceConfig {
        ns: vec![100, 400, 1600, 6400],
        replicas: 20,
        base_seed: SEED,
        horizon: 0.5,
        dt: 1e-3,
        m: 4001,
        coefficients: constants(1.0, 1.0, GammaSpec::constant(0.3)),
        initial: gaussian(),
        fixed_point: FixedPointConfig::default(),
    };
    let report = run_convergence(&cfg).unwrap();
    (report, start.elapsed())
}

fn criterion_6(report: &ranknoise::convergence::ConvergenceReport, el: Duration) -> Verdict {
    let s = &report.summary;
    let means: Vec<String> = s.levels.iter().map(|l| format!("{:.4}", l.mean_sup_w1)).collect();
    let slope = s.w1_rate.map(|r| r.slope).unwrap_or(f64::NAN);
    verdict(
        s.w1_strictly_decreasing && (-0.7..=-0.3).contains(&slope) && within(el, 600.0),
        format!(
            "mean sup-W1 [{}] strictly decreasing {}, slope {slope:.3} (in [-0.7, -0.3]), {:.0} s on {} threads (< 600 s)",
            means.join(", "),
            s.w1_strictly_decreasing,
            el.as_secs_f64(),
            rayon::current_num_threads()
        ),
    )
}

fn structural_config(gamma: GammaSpec) -> SimConfig {
    let c = CoefficientSpec::new(
        RankFunction::Affine { intercept: 0.5, slope: 1.0 },
        RankFunction::Affine { intercept: 1.2, slope: -0.6 },
        gamma,
    )
    .unwrap();
    SimConfig::new(500, 1.0, 1e-3, SEED, c, gaussian()).unwrap().keep_positions(true)
}

fn criterion_7() -> (Verdict, Vec<u8>) {
    let zero = simulate(&structural_config(GammaSpec::zero())).unwrap();
    let zero_gamma = zero.gamma_integral.iter().all(|&g| g == 0.0);

    let traj = simulate(&structural_config(GammaSpec::constant(0.4))).unwrap();
    let y = decompose_y(&traj).unwrap();
    let mut order_kept = true;
    let mut ties_created = 0usize;
    for j in 0..traj.times.len() {
        let x = traj.positions_row(j).unwrap();
        let yr = y.positions_row(j).unwrap();
        let mut by_y: Vec<usize> = (0..x.len()).collect();
        by_y.sort_by(|&a, &b| yr[a].total_cmp(&yr[b]));
        for w in by_y.windows(2) {
            if x[w[1]] < x[w[0]] {
                order_kept = false;
            }
            if x[w[1]] == x[w[0]] && yr[w[1]] != yr[w[0]] {
                ties_created += 1;
            }
        }
    }
    let same_y = y.comoving == zero.comoving;
    let mut csv = Vec::new();
    traj.write_summary_csv(&mut csv).unwrap();
    let v = verdict(
        zero_gamma && order_kept && ties_created == 0 && same_y,
        format!(
            "Gamma == 0 under gamma == 0: {zero_gamma}; X ordered as Y at all {} steps: {order_kept} ({ties_created} ties created); \
             Y under gamma == 0.4 bitwise equal to gamma == 0: {same_y}",
            traj.times.len()
        ),
    );
    (v, csv)
}

fn random_measure(rng: &mut ChaCha8Rng, dyadic: bool) -> EmpiricalMeasure {
    let n = rng.random_range(1..=40);
    let pts = (0..n)
        .map(|_| {
            if dyadic {
                rng.random_range(-2048i32..=2048) as f64 / 1024.0
            } else {
                rng.random_range(-2.0..2.0) * rng.random_range(0.1..1.5)
            }
        })
        .collect();
    EmpiricalMeasure::new(pts).unwrap()
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let w1 = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| wasserstein(a, b, WassersteinOrder::W1);
    let (x_min, x_max, m) = (-4.0, 4.0, 2001);
    let dx = (x_max - x_min) / (m - 1) as f64;
    let mut triangle_excess = 0.0f64;
    let mut shift_mismatch_dyadic = 0usize;
    let mut shift_rel_general = 0.0f64;
    let mut grid_gap = 0.0f64;
    for k in 0..10_000 {
        let dyadic = k % 2 == 0;
        let (a, b, c) = (random_measure(&mut rng, dyadic), random_measure(&mut rng, dyadic), random_measure(&mut rng, dyadic));
        let (ab, bc, ac) = (w1(&a, &b), w1(&b, &c), w1(&a, &c));
        triangle_excess = triangle_excess.max(ac - ab - bc);

        if dyadic {
            let s = rng.random_range(-64i32..=64) as f64 / 8.0;
            if w1(&a.shift(s), &b.shift(s)) != ab {
                shift_mismatch_dyadic += 1;
            }
        } else {
            let s: f64 = rng.random_range(-10.0..10.0);
            let d = (w1(&a.shift(s), &b.shift(s)) - ab).abs();
            shift_rel_general = shift_rel_general.max(d / (1.0 + s.abs()));
        }

        let (ga, gb) = (a.to_grid(x_min, x_max, m, 0.0).unwrap(), b.to_grid(x_min, x_max, m, 0.0).unwrap());
        grid_gap = grid_gap.max((w1_from_cdfs(&ga, &gb).unwrap() - ab).abs());
    }
    verdict(
        triangle_excess <= 1e-12 && shift_mismatch_dyadic == 0 && shift_rel_general <= 1e-12 && grid_gap <= 3.0 * dx,
        format!(
            "10^4 triples: worst triangle excess {triangle_excess:.2e} (<= 1e-12); shift isometry exact on {} dyadic cases \
             ({shift_mismatch_dyadic} mismatches), general shifts within {shift_rel_general:.2e} relative (rounding); \
             CDF-integral vs quantile W1 within {grid_gap:.3e} (<= 3 dx = {:.3e})",
            5_000,
            3.0 * dx
        ),
    )
}

fn main() {
    let suite = Instant::now();
    let mut lines: Vec<(usize, &str, Verdict)> = Vec::new();

    let (v1, csv1) = criterion_1();
    lines.push((1, "PME oracle, constant coefficients", v1));
    let (v2, csv2) = criterion_2();
    lines.push((2, "heat-equation oracle", v2));
    let fp = fixed_point_run();
    lines.push((3, "fixed-point convergence and uniqueness", criterion_3(&fp)));
    lines.push((4, "shift representation", criterion_4(&fp)));
    let (v5, csv5) = criterion_5();
    lines.push((5, "SPDE weak residual under refinement", v5));
    let (report, el6) = convergence_report();
    lines.push((6, "particle convergence", criterion_6(&report, el6)));
    let (v7, csv7) = criterion_7();
    lines.push((7, "exact structural identities", v7));
    lines.push((8, "measures metric suite", criterion_8()));

    // 9: every data CSV above, produced again from scratch
    let mut report_csv = Vec::new();
    report.write_report_csv(&mut report_csv).unwrap();
    let again_report = {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (r, _) = pool.install(convergence_report);
        let mut csv = Vec::new();
        r.write_report_csv(&mut csv).unwrap();
        csv
    };
    let pairs: Vec<(&str, Vec<u8>, Vec<u8>)> = vec![
        ("criterion 1 slices", csv1, criterion_1().1),
        ("criterion 2 slices", csv2, criterion_2().1),
        ("criterion 3 gamma and log", fixed_point_csv(&fp), fixed_point_csv(&fixed_point_run())),
        ("criterion 5 residuals", csv5, criterion_5().1),
        ("criterion 6 report", report_csv, again_report),
        ("criterion 7 trajectory", csv7, criterion_7().1),
    ];
    let differing: Vec<&str> = pairs.iter().filter(|(_, a, b)| a != b).map(|(n, _, _)| *n).collect();
    let bytes: usize = pairs.iter().map(|(_, a, _)| a.len()).sum();
    lines.push((
        9,
        "reproducibility",
        verdict(
            differing.is_empty(),
            format!(
                "{} CSV outputs ({bytes} bytes) regenerated, report rerun on 3 threads; differing: {differing:?}",
                pairs.len()
            ),
        ),
    ));

    let mut failed = 0;
    for (k, name, v) in &lines {
        if !v.pass {
            failed += 1;
        }
        println!("{} [{k}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!(
        "{} of {} criteria passed in {:.0} s",
        lines.len() - failed,
        lines.len(),
        suite.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
