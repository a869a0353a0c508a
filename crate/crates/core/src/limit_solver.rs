//! The common-noise limit on one Brownian path.
//!
//! The limit CDF is `G(t, x) = R(t, x - Gamma(t))` where `R` solves the
//! deterministic equation and `Gamma(t) = int_0^t gamma(s, rho(s)) dW(s)`
//! depends on the limit itself. For a fixed path `W` this is a fixed point in
//! `Gamma`, found by Picard iteration: evaluate `gamma` along the candidate,
//! integrate against `dW` with left-point sums, shift `R`, repeat until
//! successive iterates agree in `sup_t W_1`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::coefficients::{CoefficientSpec, InitialLawSpec};
use crate::error::{Error, Result};
use crate::io::write_rows;
use crate::measures::{w1_from_cdfs, GridCdf};
use crate::noise::BrownianPath;
use crate::pme_solver::{solve_pme, uniform_times, PmeGrid, PmeSolution};
use crate::weak_form::{max_weak_defect, QvWeighting, TestFunction, WeakProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

impl FixedPointConfig {
    pub fn new(tol: f64, max_iter: usize) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::Domain {
                what: "tol",
                value: tol,
                domain: "tol > 0",
            });
        }
        if max_iter == 0 {
            return Err(Error::Domain {
                what: "max_iter",
                value: 0.0,
                domain: "max_iter >= 1",
            });
        }
        Ok(Self { tol, max_iter })
    }
}

/// Where the iteration starts.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCandidate {
    /// `Gamma = 0`: the law of the deterministic equation.
    PmeLaw,
    /// `R` shifted by the given `Gamma(t_j)`, one value per grid time.
    Path(Vec<f64>),
}

/// `G(t_j, .)` with its shift path.
#[derive(Debug, Clone)]
pub struct LimitPath {
    pub times: Vec<f64>,
    pub slices: Vec<GridCdf>,
    /// `Gamma(t_j)`, `Gamma(0) = 0`.
    pub gamma_path: Vec<f64>,
    /// `gamma(t_j, rho(t_j))` as used to build `gamma_path`.
    pub gamma_values: Vec<f64>,
    /// `sup_j W_1` between successive iterates.
    pub log: Vec<f64>,
}

impl LimitPath {
    /// A field given in closed form, e.g. a shifted Gaussian oracle.
    pub fn from_fn(
        grid: &PmeGrid,
        times: Vec<f64>,
        gamma_path: Vec<f64>,
        gamma_values: Vec<f64>,
        f: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<Self> {
        let slices = times
            .par_iter()
            .map(|&t| GridCdf::from_fn(grid.x_min, grid.x_max, grid.m, |x| f(t, x)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            times,
            slices,
            gamma_path,
            gamma_values,
            log: Vec::new(),
        })
    }

    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    /// `iter,sup_w1`.
    pub fn write_log_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self
            .log
            .iter()
            .enumerate()
            .map(|(k, &d)| vec![(k + 1) as f64, d]);
        write_rows(w, &["iter", "sup_w1"], rows)
    }

    /// `t,Gamma,gamma`.
    pub fn write_gamma_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = (0..self.times.len())
            .map(|j| vec![self.times[j], self.gamma_path[j], self.gamma_values[j]]);
        write_rows(w, &["t", "Gamma", "gamma"], rows)
    }

    /// Long-format `t,x,G` for the listed slice indices.
    pub fn write_slices_csv<W: Write>(&self, w: W, which: &[usize]) -> Result<()> {
        let rows = which.iter().flat_map(|&j| {
            let t = self.times[j];
            self.slices[j]
                .nodes()
                .zip(self.slices[j].values())
                .map(move |(x, &g)| vec![t, x, g])
        });
        write_rows(w, &["t", "x", "G"], rows)
    }
}

/// `R` at the noise grid times together with the coefficients and the path.
#[derive(Clone)]
pub struct LimitProblem {
    pub base: Arc<PmeSolution>,
    pub coefficients: CoefficientSpec,
    pub noise: BrownianPath,
}

impl LimitProblem {
    pub fn new(base: Arc<PmeSolution>, coefficients: CoefficientSpec, noise: BrownianPath) -> Result<Self> {
        let times = base.times();
        if times.len() != noise.steps() + 1 {
            return Err(Error::TimeGridMismatch(format!(
                "{} PDE times for {} noise increments",
                times.len(),
                noise.steps()
            )));
        }
        let dt = noise.dt();
        let off = times
            .iter()
            .enumerate()
            .find(|(j, &t)| (t - (*j as f64 * dt).min(times[times.len() - 1])).abs() > 1e-9);
        if let Some((j, t)) = off {
            return Err(Error::TimeGridMismatch(format!(
                "PDE time {t} at index {j} is not on the noise grid with dt = {dt}"
            )));
        }
        Ok(Self {
            base,
            coefficients,
            noise,
        })
    }

    pub fn times(&self) -> &[f64] {
        self.base.times()
    }

    /// `R` shifted along `gamma_path`.
    fn shifted(&self, gamma_path: &[f64]) -> Result<Vec<GridCdf>> {
        self.base
            .slices()
            .par_iter()
            .zip(gamma_path.par_iter())
            .map(|(r, &g)| r.shift(g))
            .collect()
    }

    pub fn candidate(&self, init: &InitialCandidate) -> Result<LimitPath> {
        let n = self.times().len();
        let gamma_path = match init {
            InitialCandidate::PmeLaw => vec![0.0; n],
            InitialCandidate::Path(p) => {
                if p.len() != n {
                    return Err(Error::TimeGridMismatch(format!(
                        "initial Gamma has {} values for {n} times",
                        p.len()
                    )));
                }
                p.clone()
            }
        };
        Ok(LimitPath {
            times: self.times().to_vec(),
            slices: self.shifted(&gamma_path)?,
            gamma_path,
            gamma_values: vec![0.0; n],
            log: Vec::new(),
        })
    }

    /// One application of the map: `gamma` along the candidate, left-point
    /// Ito sum against `dW`, shift of `R`.
    pub fn phi_map(&self, candidate: &LimitPath) -> Result<LimitPath> {
        let times = self.times();
        if candidate.slices.len() != times.len() {
            return Err(Error::TimeGridMismatch(format!(
                "candidate has {} slices for {} times",
                candidate.slices.len(),
                times.len()
            )));
        }
        let gamma = self.coefficients.gamma();
        let gamma_values = times
            .par_iter()
            .zip(candidate.slices.par_iter())
            .map(|(&t, g)| gamma.eval(t, g))
            .collect::<Result<Vec<f64>>>()?;
        let mut gamma_path = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        gamma_path.push(acc);
        for (g, dw) in gamma_values.iter().zip(self.noise.increments()) {
            acc += g * dw;
            gamma_path.push(acc);
        }
        Ok(LimitPath {
            times: times.to_vec(),
            slices: self.shifted(&gamma_path)?,
            gamma_path,
            gamma_values,
            log: candidate.log.clone(),
        })
    }

    /// Picard iteration from `init` until `sup_j W_1` between successive
    /// iterates drops below `cfg.tol`.
    pub fn fixed_point_solve(&self, init: &InitialCandidate, cfg: &FixedPointConfig) -> Result<LimitPath> {
        let mut cur = self.candidate(init)?;
        let mut log = Vec::new();
        for _ in 0..cfg.max_iter {
            let mut next = self.phi_map(&cur)?;
            let d = sup_w1(&next, &cur)?;
            log.push(d);
            if d < cfg.tol {
                next.log = log;
                return Ok(next);
            }
            cur = next;
        }
        Err(Error::NoConvergence { log })
    }
}

/// `sup_j W_1(a(t_j), b(t_j))`.
pub fn sup_w1(a: &LimitPath, b: &LimitPath) -> Result<f64> {
    if a.slices.len() != b.slices.len() {
        return Err(Error::TimeGridMismatch(format!(
            "{} vs {} slices",
            a.slices.len(),
            b.slices.len()
        )));
    }
    let d = a
        .slices
        .par_iter()
        .zip(b.slices.par_iter())
        .map(|(x, y)| w1_from_cdfs(x, y))
        .collect::<Result<Vec<f64>>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// Least-squares slope of `log d_{k+1}` against `k` over the strictly
/// positive entries of an iteration log, as a per-iteration ratio.
pub fn decay_ratio(log: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = log
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(k, &d)| (k as f64, d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// `max |q_G(t_j)(u) - q_R(t_j)(u) - Gamma(t_j)|` over grid times and levels.
pub fn shift_identity_error(path: &LimitPath, base: &PmeSolution, levels: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (j, g) in path.slices.iter().enumerate() {
        let r = base.slice(j);
        for &u in levels {
            let e = (g.quantile(u)? - r.quantile(u)? - path.gamma_path[j]).abs();
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Largest weak defect of the stochastic equation over the test family.
pub fn spde_weak_residual(
    path: &LimitPath,
    coefficients: &CoefficientSpec,
    noise: &BrownianPath,
    test_fns: &[TestFunction],
    weighting: QvWeighting,
) -> Result<f64> {
    let problem = WeakProblem {
        slices: &path.slices,
        times: &path.times,
        coefficients,
        noise: Some((&path.gamma_values, noise.increments())),
        weighting,
    };
    max_weak_defect(&problem, test_fns)
}

/// Solves the deterministic equation on the noise grid `0, dt, ..., T`.
pub fn base_solution(
    initial: &InitialLawSpec,
    coefficients: &CoefficientSpec,
    m: usize,
    horizon: f64,
    dt: f64,
) -> Result<PmeSolution> {
    let grid = PmeGrid::for_law(initial, coefficients, m, horizon)?;
    let init = grid.initial(initial)?;
    solve_pme(&init, coefficients, &grid, &uniform_times(horizon, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{GammaSpec, Integrand, RankFunction};

    fn setup(gamma: GammaSpec, seed: u64) -> LimitProblem {
        let c = CoefficientSpec::new(RankFunction::Constant(1.0), RankFunction::Constant(1.0), gamma).unwrap();
        let law = InitialLawSpec::gaussian(0.0, 1.0).unwrap();
        let (dt, horizon) = (0.01, 1.0);
        let base = base_solution(&law, &c, 601, horizon, dt).unwrap();
        let noise = BrownianPath::common(seed, dt, 100);
        LimitProblem::new(Arc::new(base), c, noise).unwrap()
    }

    #[test]
    fn zero_gamma_returns_r() {
        let p = setup(GammaSpec::zero(), 1);
        let path = p.fixed_point_solve(&InitialCandidate::PmeLaw, &FixedPointConfig::default()).unwrap();
        assert_eq!(path.log, vec![0.0]);
        assert!(path.gamma_path.iter().all(|&g| g == 0.0));
        assert_eq!(path.slices, p.base.slices());
    }

    #[test]
    fn constant_gamma_is_c_times_w() {
        let p = setup(GammaSpec::constant(0.5), 2);
        let path = p.fixed_point_solve(&InitialCandidate::PmeLaw, &FixedPointConfig::default()).unwrap();
        assert_eq!(path.iterations(), 2);
        assert_eq!(path.log[1], 0.0);
        for (g, w) in path.gamma_path.iter().zip(p.noise.values()) {
            assert!((g - 0.5 * w).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_functional_contracts() {
        let gamma = GammaSpec::mean_functional(Integrand::Tanh { scale: 0.5, rate: 1.0 });
        let p = setup(gamma, 3);
        let path = p.fixed_point_solve(&InitialCandidate::PmeLaw, &FixedPointConfig::default()).unwrap();
        assert!(path.iterations() <= 30);
        assert!(*path.log.last().unwrap() < 1e-8);
        assert!(decay_ratio(&path.log).unwrap() < 1.0);
        let again = p.phi_map(&path).unwrap();
        assert!(sup_w1(&again, &path).unwrap() < 1e-8);
        let levels: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let dx = p.base.grid.dx();
        assert!(shift_identity_error(&path, &p.base, &levels).unwrap() <= 2.0 * dx);
    }

    #[test]
    fn mismatched_noise_grid_is_rejected() {
        let p = setup(GammaSpec::zero(), 4);
        let noise = BrownianPath::common(4, 0.02, 50);
        assert!(matches!(
            LimitProblem::new(p.base.clone(), p.coefficients.clone(), noise),
            Err(Error::TimeGridMismatch(_))
        ));
    }

    #[test]
    fn decay_ratio_of_geometric_log() {
        let log: Vec<f64> = (0..6).map(|k| 0.3f64.powi(k)).collect();
        assert!((decay_ratio(&log).unwrap() - 0.3).abs() < 1e-12);
    }
}
