//! Coupled comparisons of particle systems against the limit path.
//!
//! A replica fixes one seed. Its common increments drive both the limit
//! solver and every particle system in the `n` ladder, so all gaps within a
//! replica are measured on the same realisation of `W`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{CoefficientSpec, InitialLawSpec};
use crate::error::{Error, Result};
use crate::limit_solver::{base_solution, FixedPointConfig, InitialCandidate, LimitPath, LimitProblem};
use crate::measures::{sup_cdf_gap, w1_empirical_grid, EmpiricalMeasure};
use crate::particle_sim::{simulate_with, SimConfig, TrajectoryRecord};
use crate::pme_solver::PmeSolution;

/// Gaps of one particle system against the limit, each a sup over grid times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRecord {
    pub n: usize,
    pub replica: usize,
    /// `sup_j W_1(rho_n(t_j), rho(t_j))`.
    pub sup_w1: f64,
    /// `sup_j sup_x |F_n(t_j, x) - R(t_j, x - Gamma(t_j))|`.
    pub sup_cdf: f64,
    /// `sup_j |Gamma_n(t_j) - Gamma(t_j)|`.
    pub sup_gamma_gap: f64,
    /// `sup_j sup_x |F_{Y,n}(t_j, x) - R(t_j, x)|` for the co-moving system.
    pub sup_rank_cdf_gap: f64,
    /// `max_j` of the CDF gap minus its triangle bound
    /// `rank gap + C_* |Gamma_n - Gamma| + C_* dx`; nonpositive when the bound holds.
    pub triangle_excess: f64,
    /// `sup_j` of the empirical second absolute moment.
    pub sup_moment: f64,
    pub wall_ms: f64,
}

/// Runs the particle system of `config` and measures it against `limit`,
/// whose slices must sit on the simulation's time grid; `base` is `R` on the
/// same grid.
pub fn coupled_gap(config: &SimConfig, limit: &LimitPath, base: &PmeSolution) -> Result<GapRecord> {
    let start = Instant::now();
    let times = config.times();
    if times.len() != limit.times.len()
        || times.iter().zip(&limit.times).any(|(a, b)| (a - b).abs() > 1e-9)
        || base.times().len() != times.len()
    {
        return Err(Error::TimeGridMismatch(format!(
            "simulation has {} times (dt = {}), limit has {}, PDE has {}",
            times.len(),
            config.dt,
            limit.times.len(),
            base.times().len()
        )));
    }
    let c_star = base.c_star();
    let slack = c_star * base.grid.dx();
    let mut rec = GapRecord {
        n: config.n,
        replica: 0,
        sup_w1: 0.0,
        sup_cdf: 0.0,
        sup_gamma_gap: 0.0,
        sup_rank_cdf_gap: 0.0,
        triangle_excess: f64::NEG_INFINITY,
        sup_moment: 0.0,
        wall_ms: 0.0,
    };
    simulate_with(config, |view| {
        let j = view.step;
        let g = &limit.slices[j];
        let w1 = w1_empirical_grid(view.positions, g);
        let cdf = sup_cdf_gap(view.positions, g);
        let gamma_gap = (view.gamma_integral - limit.gamma_path[j]).abs();
        let y = EmpiricalMeasure::from_sorted(view.comoving_sorted.to_vec());
        let rank = sup_cdf_gap(&y, base.slice(j));
        rec.sup_w1 = rec.sup_w1.max(w1);
        rec.sup_cdf = rec.sup_cdf.max(cdf);
        rec.sup_gamma_gap = rec.sup_gamma_gap.max(gamma_gap);
        rec.sup_rank_cdf_gap = rec.sup_rank_cdf_gap.max(rank);
        rec.triangle_excess = rec
            .triangle_excess
            .max(cdf - (rank + c_star * gamma_gap + slack));
        rec.sup_moment = rec.sup_moment.max(view.positions.abs_moment(2.0));
        Ok(())
    })?;
    rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(rec)
}

/// Fitted slope of `log(mean gap)` against `log n` with a normal-theory band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub std_error: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Least-squares slope of `log(mean gap)` vs `log n` over `(n, gap)` rows.
/// The band propagates each level's replica standard error through the
/// logarithm and the linear fit.
pub fn rate_fit(rows: &[(usize, f64)]) -> Result<RateFit> {
    let levels = group_by_n(rows);
    if levels.len() < 3 {
        return Err(Error::UndefinedSlope(format!(
            "need at least 3 distinct n, got {}",
            levels.len()
        )));
    }
    if let Some((n, g)) = levels.iter().find(|(_, g)| g.len() < 5) {
        return Err(Error::UndefinedSlope(format!(
            "n = {n} has {} replicas, need at least 5",
            g.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut vars = Vec::new();
    for (n, g) in &levels {
        let k = g.len() as f64;
        let mean = g.iter().sum::<f64>() / k;
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::UndefinedSlope(format!(
                "mean gap at n = {n} is {mean}; its logarithm is undefined"
            )));
        }
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        xs.push((*n as f64).ln());
        ys.push(mean.ln());
        vars.push(var / k / (mean * mean));
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let var_slope: f64 = xs
        .iter()
        .zip(&vars)
        .map(|(x, v)| ((x - mx) / sxx).powi(2) * v)
        .sum();
    let se = var_slope.sqrt();
    Ok(RateFit {
        slope,
        std_error: se,
        band_lo: slope - 1.96 * se,
        band_hi: slope + 1.96 * se,
    })
}

fn group_by_n(rows: &[(usize, f64)]) -> Vec<(usize, Vec<f64>)> {
    let mut levels: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.0);
    for (n, g) in sorted {
        match levels.last_mut() {
            Some((m, v)) if *m == n => v.push(g),
            _ => levels.push((n, vec![g])),
        }
    }
    levels
}

/// `sup_t` of the empirical `p`-th absolute moment.
pub fn moment_check(traj: &TrajectoryRecord, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::Domain {
            what: "p",
            value: p,
            domain: "p > 1",
        });
    }
    Ok(traj
        .states
        .iter()
        .map(|s| s.abs_moment(p))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub ns: Vec<usize>,
    pub replicas: usize,
    pub base_seed: u64,
    pub horizon: f64,
    pub dt: f64,
    /// PDE grid nodes.
    pub m: usize,
    pub coefficients: CoefficientSpec,
    pub initial: InitialLawSpec,
    pub fixed_point: FixedPointConfig,
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.windows(2).any(|w| w[1] <= w[0]) || self.ns[0] == 0 {
            return Err(Error::InvalidSpec(format!(
                "n ladder must be positive and strictly increasing, got {:?}",
                self.ns
            )));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidSpec("need at least one replica".into()));
        }
        Ok(())
    }

    pub fn seed(&self, replica: usize) -> u64 {
        self.base_seed.wrapping_add(replica as u64)
    }
}

/// Mean gaps at one `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSummary {
    pub n: usize,
    pub mean_sup_w1: f64,
    pub mean_sup_cdf: f64,
    pub mean_sup_gamma_gap: f64,
    pub mean_sup_moment: f64,
    /// Paired t statistic of the drop in `sup_w1` from the previous level.
    pub paired_t_vs_previous: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSummary {
    pub ns: Vec<usize>,
    pub replicas: usize,
    pub base_seed: u64,
    pub levels: Vec<LevelSummary>,
    pub w1_rate: Option<RateFit>,
    pub w1_strictly_decreasing: bool,
    pub triangle_violations: usize,
    pub fixed_point_iterations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Sorted by `(n, replica)`.
    pub rows: Vec<GapRecord>,
    pub summary: ConvergenceSummary,
    pub pde_c_star: f64,
}

impl ConvergenceReport {
    /// `n,replica,sup_w1,sup_cdf,sup_gamma_gap`.
    pub fn write_report_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.rows.iter().map(|r| {
            vec![r.n as f64, r.replica as f64, r.sup_w1, r.sup_cdf, r.sup_gamma_gap]
        });
        write_integer_columns(w, &["n", "replica", "sup_w1", "sup_cdf", "sup_gamma_gap"], 2, rows)
    }

    /// `n,replica,wall_ms`; kept apart because timings differ between runs.
    pub fn write_timing_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self
            .rows
            .iter()
            .map(|r| vec![r.n as f64, r.replica as f64, r.wall_ms]);
        write_integer_columns(w, &["n", "replica", "wall_ms"], 2, rows)
    }
}

/// Like [`write_rows`] but prints the first `ints` columns as integers.
fn write_integer_columns<W: Write>(
    mut w: W,
    header: &[&str],
    ints: usize,
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(k, v)| {
                if k < ints {
                    format!("{}", *v as u64)
                } else {
                    crate::io::fmt_f64(*v)
                }
            })
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Solves `R` once, the limit once per replica, and every `n` against it.
pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let probe = SimConfig::new(1, cfg.horizon, cfg.dt, cfg.base_seed, cfg.coefficients.clone(), cfg.initial.clone())?;
    let base = Arc::new(base_solution(&cfg.initial, &cfg.coefficients, cfg.m, cfg.horizon, probe.dt)?);
    let per_replica = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<(usize, Vec<GapRecord>)> {
            let seed = cfg.seed(r);
            let noise = crate::noise::BrownianPath::common(seed, probe.dt, probe.steps);
            let problem = LimitProblem::new(base.clone(), cfg.coefficients.clone(), noise)?;
            let limit = problem.fixed_point_solve(&InitialCandidate::PmeLaw, &cfg.fixed_point)?;
            let rows = cfg
                .ns
                .par_iter()
                .map(|&n| {
                    let sim = SimConfig::new(n, cfg.horizon, cfg.dt, seed, cfg.coefficients.clone(), cfg.initial.clone())?;
                    let mut rec = coupled_gap(&sim, &limit, &base)?;
                    rec.replica = r;
                    Ok(rec)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((limit.iterations(), rows))
        })
        .collect::<Result<Vec<_>>>()?;

    let fixed_point_iterations = per_replica.iter().map(|p| p.0).collect();
    let mut rows: Vec<GapRecord> = per_replica.into_iter().flat_map(|p| p.1).collect();
    rows.sort_by_key(|r| (r.n, r.replica));

    let mut levels: Vec<LevelSummary> = Vec::new();
    for &n in &cfg.ns {
        let at: Vec<&GapRecord> = rows.iter().filter(|r| r.n == n).collect();
        let k = at.len() as f64;
        let mean = |f: fn(&GapRecord) -> f64| at.iter().map(|r| f(r)).sum::<f64>() / k;
        let paired_t_vs_previous = levels.last().map(|prev: &LevelSummary| {
            let before: Vec<&GapRecord> = rows.iter().filter(|r| r.n == prev.n).collect();
            let d: Vec<f64> = before.iter().zip(&at).map(|(a, b)| a.sup_w1 - b.sup_w1).collect();
            paired_t(&d)
        });
        levels.push(LevelSummary {
            n,
            mean_sup_w1: mean(|r| r.sup_w1),
            mean_sup_cdf: mean(|r| r.sup_cdf),
            mean_sup_gamma_gap: mean(|r| r.sup_gamma_gap),
            mean_sup_moment: mean(|r| r.sup_moment),
            paired_t_vs_previous,
        });
    }
    let w1_strictly_decreasing = levels.windows(2).all(|w| w[1].mean_sup_w1 < w[0].mean_sup_w1);
    let fit_rows: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.sup_w1)).collect();
    let summary = ConvergenceSummary {
        ns: cfg.ns.clone(),
        replicas: cfg.replicas,
        base_seed: cfg.base_seed,
        levels,
        w1_rate: rate_fit(&fit_rows).ok(),
        w1_strictly_decreasing,
        triangle_violations: rows.iter().filter(|r| r.triangle_excess > 0.0).count(),
        fixed_point_iterations,
    };
    Ok(ConvergenceReport {
        rows,
        summary,
        pde_c_star: base.c_star(),
    })
}

fn paired_t(d: &[f64]) -> f64 {
    let k = d.len() as f64;
    if k < 2.0 {
        return f64::NAN;
    }
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    mean / (var / k).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{GammaSpec, RankFunction};
    use crate::particle_sim::simulate;
    use crate::pme_solver::{solve_pme, uniform_times, PmeGrid};

    #[test]
    fn rate_fit_recovers_power_law() {
        let mut rows = Vec::new();
        for &n in &[100usize, 400, 1600, 6400] {
            for r in 0..5 {
                // replica spread proportional to the mean keeps log-means exact
                let scale = 1.0 + 0.1 * (r as f64 - 2.0);
                rows.push((n, scale * (n as f64).powf(-0.5)));
            }
        }
        let fit = rate_fit(&rows).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!(fit.band_lo < fit.slope && fit.slope < fit.band_hi);
    }

    #[test]
    fn rate_fit_of_constant_gaps_is_flat() {
        let rows: Vec<(usize, f64)> = [10usize, 20, 40]
            .iter()
            .flat_map(|&n| (0..5).map(move |_| (n, 0.25)))
            .collect();
        let fit = rate_fit(&rows).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.std_error, 0.0);
    }

    #[test]
    fn rate_fit_rejects_degenerate_inputs() {
        let zero: Vec<(usize, f64)> = [10usize, 20, 40]
            .iter()
            .flat_map(|&n| (0..5).map(move |_| (n, 0.0)))
            .collect();
        assert!(matches!(rate_fit(&zero), Err(Error::UndefinedSlope(_))));
        let two: Vec<(usize, f64)> = (0..10).map(|k| (10 + 10 * (k % 2), 1.0)).collect();
        assert!(rate_fit(&two).is_err());
        let thin = vec![(10, 1.0), (20, 1.0), (40, 1.0)];
        assert!(rate_fit(&thin).is_err());
    }

    fn frozen() -> CoefficientSpec {
        CoefficientSpec::degenerate(
            RankFunction::Constant(0.0),
            RankFunction::Constant(0.0),
            GammaSpec::zero(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_system_matches_heaviside_limit() {
        let c = frozen();
        let law = InitialLawSpec::dirac(0.0);
        let sim = SimConfig::new(1, 0.1, 0.01, 5, c.clone(), law.clone()).unwrap();
        let grid = PmeGrid::new(-2.0, 2.0, 401, 0.01, 0.1, &c).unwrap();
        let base = solve_pme(&grid.initial(&law).unwrap(), &c, &grid, &uniform_times(0.1, 0.01)).unwrap();
        let noise = crate::noise::BrownianPath::common(5, sim.dt, sim.steps);
        let limit = LimitProblem::new(Arc::new(base.clone()), c, noise)
            .unwrap()
            .fixed_point_solve(&InitialCandidate::PmeLaw, &FixedPointConfig::default())
            .unwrap();
        let rec = coupled_gap(&sim, &limit, &base).unwrap();
        let dx = grid.dx();
        // the grid CDF ramps over the cell left of the atom: W1 = dx / 2
        assert!((rec.sup_w1 - 0.5 * dx).abs() < 1e-12, "{}", rec.sup_w1);
        assert_eq!(rec.sup_gamma_gap, 0.0);
        assert_eq!(rec.sup_moment, 0.0);
        // the uniform gap of a jump against its interpolant is not resolved
        // by the grid; it is attained just left of the atom and nowhere else
        let atom = EmpiricalMeasure::dirac(0.0);
        assert_eq!(rec.sup_cdf, sup_cdf_gap(&atom, base.slice(0)));
        let right = base.slice(0).nodes().filter(|&x| x >= 0.0 || x <= -dx);
        assert!(right.map(|x| (atom.cdf(x) - base.slice(0).eval(x)).abs()).all(|d| d == 0.0));
    }

    #[test]
    fn time_grid_mismatch_is_reported() {
        let c = frozen();
        let law = InitialLawSpec::dirac(0.0);
        let grid = PmeGrid::new(-2.0, 2.0, 101, 0.01, 0.1, &c).unwrap();
        let base = solve_pme(&grid.initial(&law).unwrap(), &c, &grid, &uniform_times(0.1, 0.01)).unwrap();
        let noise = crate::noise::BrownianPath::common(1, 0.01, 10);
        let limit = LimitProblem::new(Arc::new(base.clone()), c.clone(), noise)
            .unwrap()
            .fixed_point_solve(&InitialCandidate::PmeLaw, &FixedPointConfig::default())
            .unwrap();
        let sim = SimConfig::new(3, 0.1, 0.005, 1, c, law).unwrap();
        assert!(matches!(
            coupled_gap(&sim, &limit, &base),
            Err(Error::TimeGridMismatch(_))
        ));
    }

    #[test]
    fn moment_check_of_frozen_dirac_is_zero() {
        let sim = SimConfig::new(4, 0.1, 0.01, 1, frozen(), InitialLawSpec::dirac(0.0)).unwrap();
        let traj = simulate(&sim).unwrap();
        assert_eq!(moment_check(&traj, 2.0).unwrap(), 0.0);
        assert!(moment_check(&traj, 1.0).is_err());
    }
}
