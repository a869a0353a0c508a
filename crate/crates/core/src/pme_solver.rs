//! Explicit finite-volume solver for `R_t = -B(R)_x + Sigma(R)_xx` with CDF
//! initial data.
//!
//! The drift flux is upwinded from the left (`b > 0` moves mass to the
//! right), the diffusion uses the standard three-point stencil, and both
//! boundary values are pinned. Under the step restriction
//! `dt (max b / dx + max sigma^2 / dx^2) <= 0.9` every nodal update is a
//! monotone function of its three inputs, which gives the comparison
//! principle and keeps slices nondecreasing without help.

use std::io::Write;

use serde::Serialize;

use crate::coefficients::{CoefficientSpec, InitialLawSpec};
use crate::error::{Error, Result};
use crate::io::write_rows;
use crate::measures::GridCdf;
use crate::weak_form::{max_weak_defect, QvWeighting, TestFunction, WeakProblem};

pub const CFL_SAFETY: f64 = 0.9;

/// Spatial grid, largest admissible PDE step and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub m: usize,
    pub dt_pde: f64,
    pub horizon: f64,
}

/// Largest stable step for the given coefficients and spacing.
pub fn cfl_limit(coefficients: &CoefficientSpec, dx: f64) -> f64 {
    let rate = coefficients.b_max() / dx + coefficients.sigma_sq_max() / (dx * dx);
    if rate > 0.0 {
        CFL_SAFETY / rate
    } else {
        f64::INFINITY
    }
}

impl PmeGrid {
    pub fn new(
        x_min: f64,
        x_max: f64,
        m: usize,
        dt_pde: f64,
        horizon: f64,
        coefficients: &CoefficientSpec,
    ) -> Result<Self> {
        if m < 3 {
            return Err(Error::Domain {
                what: "m",
                value: m as f64,
                domain: "m >= 3",
            });
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::InvalidSpec(format!(
                "bad PDE interval [{x_min}, {x_max}]"
            )));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Domain {
                what: "T",
                value: horizon,
                domain: "T >= 0",
            });
        }
        if !(dt_pde > 0.0) {
            return Err(Error::Domain {
                what: "dt_pde",
                value: dt_pde,
                domain: "dt_pde > 0",
            });
        }
        let grid = Self {
            x_min,
            x_max,
            m,
            dt_pde,
            horizon,
        };
        let limit = cfl_limit(coefficients, grid.dx());
        if dt_pde > limit {
            return Err(Error::Cfl { dt: dt_pde, limit });
        }
        Ok(grid)
    }

    /// Grid with the largest stable step.
    pub fn with_cfl(
        x_min: f64,
        x_max: f64,
        m: usize,
        horizon: f64,
        coefficients: &CoefficientSpec,
    ) -> Result<Self> {
        let dx = (x_max - x_min) / (m.max(2) - 1) as f64;
        let dt = cfl_limit(coefficients, dx).min(horizon.max(f64::MIN_POSITIVE));
        Self::new(x_min, x_max, m, dt, horizon, coefficients)
    }

    /// Domain wide enough that neither the PDE nor later shifts by `Gamma`
    /// push more than `BOUNDARY_MASS_TOL` of mass past either end:
    /// `[q(eps) - pad, q(1 - eps) + pad]` with
    /// `pad = max b T + 6 sqrt(max sigma^2 T) + 6 bound(gamma) sqrt(T)`.
    pub fn for_law(
        initial: &InitialLawSpec,
        coefficients: &CoefficientSpec,
        m: usize,
        horizon: f64,
    ) -> Result<Self> {
        let eps = crate::BOUNDARY_MASS_TOL;
        let (lo, hi) = (initial.quantile(eps), initial.quantile(1.0 - eps));
        let pad = coefficients.b_max() * horizon
            + 6.0 * (coefficients.sigma_sq_max() * horizon).sqrt()
            + 6.0 * coefficients.gamma().bound() * horizon.sqrt();
        // a Dirac law with no motion still needs a nondegenerate interval
        let pad = pad.max(1.0);
        Self::with_cfl(lo - pad, hi + pad, m, horizon, coefficients)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.m - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    /// The initial law sampled on this grid.
    pub fn initial(&self, law: &InitialLawSpec) -> Result<GridCdf> {
        law.to_grid(self.x_min, self.x_max, self.m, crate::BOUNDARY_MASS_TOL)
    }

    fn matches(&self, g: &GridCdf) -> bool {
        g.x_min() == self.x_min && g.x_max() == self.x_max && g.len() == self.m
    }
}

/// `R` at the requested output times.
#[derive(Debug, Clone)]
pub struct PmeSolution {
    pub grid: PmeGrid,
    times: Vec<f64>,
    slices: Vec<GridCdf>,
    c_star: f64,
    max_violation: f64,
    steps_taken: usize,
}

impl PmeSolution {
    /// Wraps externally computed slices, e.g. a closed-form oracle.
    pub fn from_slices(grid: PmeGrid, times: Vec<f64>, slices: Vec<GridCdf>) -> Result<Self> {
        if times.len() != slices.len() || times.is_empty() {
            return Err(Error::TimeGridMismatch(format!(
                "{} times for {} slices",
                times.len(),
                slices.len()
            )));
        }
        if let Some(s) = slices.iter().find(|s| !grid.matches(s)) {
            return Err(Error::GridMismatch(format!(
                "slice on [{}, {}] x {} vs grid [{}, {}] x {}",
                s.x_min(),
                s.x_max(),
                s.len(),
                grid.x_min,
                grid.x_max,
                grid.m
            )));
        }
        let c_star = slices.iter().map(GridCdf::max_slope).fold(0.0, f64::max);
        Ok(Self {
            grid,
            times,
            slices,
            c_star,
            max_violation: 0.0,
            steps_taken: 0,
        })
    }

    /// Samples `f(t, x)` on the grid at each time.
    pub fn from_fn(grid: PmeGrid, times: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let slices = times
            .iter()
            .map(|&t| GridCdf::from_fn(grid.x_min, grid.x_max, grid.m, |x| f(t, x)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_slices(grid, times, slices)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[GridCdf] {
        &self.slices
    }

    pub fn slice(&self, j: usize) -> &GridCdf {
        &self.slices[j]
    }

    pub fn into_slices(self) -> Vec<GridCdf> {
        self.slices
    }

    /// `sup |R_x|` by central differences over every step taken (or every
    /// stored slice for wrapped solutions).
    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    /// Largest downward step seen before monotone repair, over all steps.
    pub fn max_violation(&self) -> f64 {
        self.max_violation
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Slice at the stored time nearest to `t`, within `1e-9`.
    pub fn slice_at(&self, t: f64) -> Option<&GridCdf> {
        let j = self.times.partition_point(|&s| s < t - 1e-9);
        (j < self.times.len() && (self.times[j] - t).abs() <= 1e-9).then(|| &self.slices[j])
    }

    /// Long-format CSV `t,x,R` for the slices whose index is in `which`.
    pub fn write_slices_csv<W: Write>(&self, w: W, which: &[usize]) -> Result<()> {
        let rows = which.iter().flat_map(|&j| {
            let t = self.times[j];
            self.slices[j]
                .nodes()
                .zip(self.slices[j].values())
                .map(move |(x, &r)| vec![t, x, r])
        });
        write_rows(w, &["t", "x", "R"], rows)
    }

    pub fn summary(&self, coefficients: &CoefficientSpec) -> PmeSummary {
        let dx = self.grid.dx();
        PmeSummary {
            grid: self.grid,
            dx,
            c_star: self.c_star,
            cfl_limit: cfl_limit(coefficients, dx),
            cfl_safety: CFL_SAFETY,
            advective_number: coefficients.b_max() * self.grid.dt_pde / dx,
            diffusive_number: coefficients.sigma_sq_max() * self.grid.dt_pde / (dx * dx),
            steps: self.steps_taken,
            max_monotone_violation: self.max_violation,
            output_times: self.times.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PmeSummary {
    pub grid: PmeGrid,
    pub dx: f64,
    pub c_star: f64,
    pub cfl_limit: f64,
    pub cfl_safety: f64,
    pub advective_number: f64,
    pub diffusive_number: f64,
    pub steps: usize,
    pub max_monotone_violation: f64,
    pub output_times: usize,
}

/// Uniform output times `0, dt, ..., T` with the last step shortened if
/// `dt` does not divide `T`.
pub fn uniform_times(horizon: f64, dt: f64) -> Vec<f64> {
    let (steps, _, _) = crate::particle_sim::time_steps(horizon, dt);
    (0..=steps)
        .map(|j| if j == steps { horizon } else { j as f64 * dt })
        .collect()
}

/// One explicit step from `cur` into `next`; returns the largest downward
/// step before repair.
fn step(cur: &[f64], next: &mut [f64], flux: &mut [f64], diff: &mut [f64], lam: f64, mu: f64, c: &CoefficientSpec) -> f64 {
    for (k, &r) in cur.iter().enumerate() {
        flux[k] = c.flux(r);
        diff[k] = c.diffusion(r);
    }
    let m = cur.len();
    next[0] = 0.0;
    next[m - 1] = 1.0;
    for j in 1..m - 1 {
        next[j] = cur[j] - lam * (flux[j] - flux[j - 1])
            + mu * (diff[j + 1] - 2.0 * diff[j] + diff[j - 1]);
    }
    let mut violation = 0.0f64;
    let mut run = 0.0f64;
    for v in next.iter_mut() {
        if *v < run {
            violation = violation.max(run - *v);
        }
        run = run.max(*v);
        *v = run.clamp(0.0, 1.0);
    }
    violation
}

/// Solves from `initial` and records the solution at `output_times`, which
/// must start at 0 and increase. Each output interval is split into equal
/// substeps no longer than `grid.dt_pde`, so every output time is hit
/// exactly.
pub fn solve_pme(
    initial: &GridCdf,
    coefficients: &CoefficientSpec,
    grid: &PmeGrid,
    output_times: &[f64],
) -> Result<PmeSolution> {
    if !grid.matches(initial) {
        return Err(Error::GridMismatch(format!(
            "initial CDF on [{}, {}] x {} vs grid [{}, {}] x {}",
            initial.x_min(),
            initial.x_max(),
            initial.len(),
            grid.x_min,
            grid.x_max,
            grid.m
        )));
    }
    if output_times.first() != Some(&0.0) || output_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::TimeGridMismatch(
            "output times must start at 0 and increase".into(),
        ));
    }
    let dx = grid.dx();
    let m = grid.m;
    let mut cur = initial.values().to_vec();
    let mut next = vec![0.0; m];
    let (mut flux, mut diff) = (vec![0.0; m], vec![0.0; m]);
    let mut slices = Vec::with_capacity(output_times.len());
    slices.push(initial.clone());
    let mut c_star = initial.max_slope();
    let mut max_violation = 0.0f64;
    let mut taken = 0usize;
    for w in output_times.windows(2) {
        let interval = w[1] - w[0];
        let sub = (interval / grid.dt_pde * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let dt = interval / sub as f64;
        let (lam, mu) = (dt / dx, dt / (dx * dx));
        for _ in 0..sub {
            let v = step(&cur, &mut next, &mut flux, &mut diff, lam, mu, coefficients);
            taken += 1;
            if !v.is_finite() || next.iter().any(|x| !x.is_finite()) {
                return Err(Error::Blowup { step: taken });
            }
            max_violation = max_violation.max(v);
            std::mem::swap(&mut cur, &mut next);
            let slope = cur
                .windows(3)
                .map(|w| (w[2] - w[0]) / (2.0 * dx))
                .fold(0.0, f64::max);
            c_star = c_star.max(slope);
        }
        slices.push(GridCdf::from_repaired(grid.x_min, grid.x_max, cur.clone()));
    }
    Ok(PmeSolution {
        grid: *grid,
        times: output_times.to_vec(),
        slices,
        c_star,
        max_violation,
        steps_taken: taken,
    })
}

pub fn density_bound(sol: &PmeSolution) -> f64 {
    sol.c_star()
}

/// Largest weak-form defect of the solution over the test family.
pub fn pme_weak_residual(
    sol: &PmeSolution,
    coefficients: &CoefficientSpec,
    test_fns: &[TestFunction],
) -> Result<f64> {
    let problem = WeakProblem {
        slices: &sol.slices,
        times: &sol.times,
        coefficients,
        noise: None,
        weighting: QvWeighting::Calendar,
    };
    max_weak_defect(&problem, test_fns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{GammaSpec, RankFunction};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn phi(z: f64) -> f64 {
        Normal::new(0.0, 1.0).unwrap().cdf(z)
    }

    fn unit() -> CoefficientSpec {
        CoefficientSpec::new(
            RankFunction::Constant(1.0),
            RankFunction::Constant(1.0),
            GammaSpec::zero(),
        )
        .unwrap()
    }

    #[test]
    fn cfl_is_enforced() {
        let c = unit();
        let dx = 0.01;
        let limit = cfl_limit(&c, dx);
        assert!(PmeGrid::new(-5.0, 5.0, 1001, limit * 1.01, 1.0, &c).is_err());
        assert!(PmeGrid::new(-5.0, 5.0, 1001, limit, 1.0, &c).is_ok());
        // the sum form is at least as strict as each term alone
        assert!(limit <= CFL_SAFETY * (dx / c.b_max()).min(dx * dx / c.sigma_sq_max()));
    }

    #[test]
    fn first_slice_is_initial() {
        let c = unit();
        let grid = PmeGrid::with_cfl(-8.0, 9.0, 341, 0.1, &c).unwrap();
        let init = grid.initial(&InitialLawSpec::gaussian(0.0, 1.0).unwrap()).unwrap();
        let sol = solve_pme(&init, &c, &grid, &[0.0, 0.05, 0.1]).unwrap();
        assert_eq!(sol.slice(0), &init);
        assert_eq!(sol.times(), &[0.0, 0.05, 0.1]);
    }

    #[test]
    fn advection_diffusion_oracle() {
        let c = unit();
        let grid = PmeGrid::with_cfl(-8.0, 9.0, 801, 1.0, &c).unwrap();
        let init = grid.initial(&InitialLawSpec::gaussian(0.0, 1.0).unwrap()).unwrap();
        let times = [0.0, 0.25, 0.5, 1.0];
        let sol = solve_pme(&init, &c, &grid, &times).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let err = sol
                .slice(k)
                .nodes()
                .zip(sol.slice(k).values())
                .map(|(x, r)| (r - phi((x - t) / (1.0 + t).sqrt())).abs())
                .fold(0.0, f64::max);
            assert!(err < 5e-3, "t = {t}: {err}");
        }
        assert!(sol.max_violation() < 1e-12);
    }

    #[test]
    fn c_star_of_gaussian_starts_at_peak_density() {
        let c = unit();
        let grid = PmeGrid::with_cfl(-8.0, 9.0, 1601, 0.5, &c).unwrap();
        let init = grid.initial(&InitialLawSpec::gaussian(0.0, 1.0).unwrap()).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((init.max_slope() - peak).abs() < 1e-4);
        let sol = solve_pme(&init, &c, &grid, &uniform_times(0.5, 0.1)).unwrap();
        assert!((density_bound(&sol) - peak).abs() < 1e-4);
        let slopes: Vec<f64> = sol.slices().iter().map(GridCdf::max_slope).collect();
        assert!(slopes.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn residual_of_zero_horizon_is_zero() {
        let c = unit();
        let grid = PmeGrid::with_cfl(-8.0, 9.0, 401, 0.0, &c).unwrap();
        let init = grid.initial(&InitialLawSpec::gaussian(0.0, 1.0).unwrap()).unwrap();
        let sol = solve_pme(&init, &c, &grid, &[0.0]).unwrap();
        let fam = crate::weak_form::default_test_family(-8.0, 9.0);
        assert_eq!(pme_weak_residual(&sol, &c, &fam).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_heaviside_stays_put() {
        let c = CoefficientSpec::degenerate(
            RankFunction::Constant(0.0),
            RankFunction::Constant(0.0),
            GammaSpec::zero(),
        )
        .unwrap();
        let grid = PmeGrid::for_law(&InitialLawSpec::dirac(0.0), &c, 101, 1.0).unwrap();
        let init = grid.initial(&InitialLawSpec::dirac(0.0)).unwrap();
        let sol = solve_pme(&init, &c, &grid, &uniform_times(1.0, 0.25)).unwrap();
        for s in sol.slices() {
            assert_eq!(s, &init);
        }
    }

    #[test]
    fn boundary_touching_test_function_is_rejected() {
        let c = unit();
        let grid = PmeGrid::with_cfl(-4.0, 4.0, 101, 0.1, &c).unwrap();
        let init = grid.initial(&InitialLawSpec::gaussian(0.0, 0.5).unwrap()).unwrap();
        let sol = solve_pme(&init, &c, &grid, &[0.0, 0.1]).unwrap();
        let bad = [TestFunction::new(3.5, 1.0)];
        assert!(matches!(
            pme_weak_residual(&sol, &c, &bad),
            Err(Error::SupportTouchesBoundary { .. })
        ));
    }
}
