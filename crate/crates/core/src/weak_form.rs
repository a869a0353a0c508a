//! Weak-form defects of CDF fields tested against smooth bumps.
//!
//! For a field `G(t_j, x)` on a grid, a test function `phi` and coefficient
//! data, the defect at `t_J` is
//!
//! ```text
//! <G_J, phi> - <G_0, phi>
//!   - sum_{j<J} ( <B(G_j), phi'> + <Sigma(G_j), phi''> + gamma_j^2 / 2 <G_j, phi''> ) w_j
//!   - sum_{j<J} gamma_j <G_j, phi'> dW_j
//! ```
//!
//! with left-point time sums. All spatial derivatives sit on `phi`. With
//! `gamma = 0` this is the weak form of `R_t = -B(R)_x + Sigma(R)_xx`.

use crate::coefficients::CoefficientSpec;
use crate::error::{Error, Result};
use crate::measures::GridCdf;

/// The smooth bump `exp(-1 / (1 - s^2))`, `s = (x - center) / half_width`,
/// supported on `[center - half_width, center + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub center: f64,
    pub half_width: f64,
}

impl TestFunction {
    pub fn new(center: f64, half_width: f64) -> Self {
        Self { center, half_width }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }

    /// `(phi, phi', phi'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let w = self.half_width;
        let s = (x - self.center) / w;
        if s.abs() >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let q = 1.0 - s * s;
        let g = 1.0 / q;
        let phi = (-g).exp();
        // g' = 2 s g^2, g'' = 2 g^2 + 8 s^2 g^3 (derivatives in s)
        let g1 = 2.0 * s * g * g;
        let g2 = 2.0 * g * g + 8.0 * s * s * g * g * g;
        let d1 = -phi * g1 / w;
        let d2 = phi * (g1 * g1 - g2) / (w * w);
        (phi, d1, d2)
    }

    fn check_inside(&self, x_min: f64, x_max: f64) -> Result<()> {
        let (lo, hi) = self.support();
        if lo > x_min && hi < x_max && self.half_width > 0.0 {
            Ok(())
        } else {
            Err(Error::SupportTouchesBoundary {
                lo,
                hi,
                x_min,
                x_max,
            })
        }
    }
}

/// Five bumps spread over the bulk of `[lo, hi]`.
pub fn default_test_family(lo: f64, hi: f64) -> Vec<TestFunction> {
    let span = hi - lo;
    let half_width = 0.2 * span;
    (0..5)
        .map(|k| TestFunction::new(lo + span * (0.3 + 0.1 * k as f64), half_width))
        .collect()
}

/// What multiplies the Ito correction `gamma^2 / 2 <G, phi''>` in each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QvWeighting {
    /// The time step `dt`.
    Calendar,
    /// The realised quadratic variation `dW_j^2` of the step.
    Realized,
}

/// Node values of a test function on a grid, nonzero part only.
struct Sampled {
    start: usize,
    phi: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Sampled {
    fn new(f: &TestFunction, grid: &GridCdf) -> Self {
        let (lo, hi) = f.support();
        let dx = grid.dx();
        let start = (((lo - grid.x_min()) / dx).floor().max(0.0)) as usize;
        let end = ((((hi - grid.x_min()) / dx).ceil()) as usize + 1).min(grid.len());
        let (mut phi, mut d1, mut d2) = (Vec::new(), Vec::new(), Vec::new());
        for j in start..end {
            let (a, b, c) = f.eval(grid.node(j));
            phi.push(a);
            d1.push(b);
            d2.push(c);
        }
        Self { start, phi, d1, d2 }
    }

    /// `dx * sum_j v(G_j) w_j`; the test function vanishes at both ends of
    /// its window, so this is the trapezoidal rule.
    fn pair(&self, weights: &[f64], values: &[f64], dx: f64, v: impl Fn(f64) -> f64) -> f64 {
        let window = &values[self.start..self.start + weights.len()];
        dx * window
            .iter()
            .zip(weights)
            .map(|(&g, &w)| v(g) * w)
            .sum::<f64>()
    }
}

/// Inputs of [`max_weak_defect`].
pub struct WeakProblem<'a> {
    pub slices: &'a [GridCdf],
    pub times: &'a [f64],
    pub coefficients: &'a CoefficientSpec,
    /// `gamma_j` per time and `dW_j` per step; `None` for the deterministic
    /// equation.
    pub noise: Option<(&'a [f64], &'a [f64])>,
    pub weighting: QvWeighting,
}

/// Defects at every grid time for one test function.
pub fn weak_defects(problem: &WeakProblem<'_>, f: &TestFunction) -> Result<Vec<f64>> {
    let slices = problem.slices;
    let first = slices
        .first()
        .ok_or_else(|| Error::TimeGridMismatch("no time slices".into()))?;
    if slices.len() != problem.times.len() {
        return Err(Error::TimeGridMismatch(format!(
            "{} slices for {} times",
            slices.len(),
            problem.times.len()
        )));
    }
    for s in slices {
        first.check_same_grid(s)?;
    }
    if let Some((gammas, dw)) = problem.noise {
        if gammas.len() < slices.len() || dw.len() + 1 < slices.len() {
            return Err(Error::TimeGridMismatch(format!(
                "{} gamma values and {} increments for {} times",
                gammas.len(),
                dw.len(),
                slices.len()
            )));
        }
    }
    f.check_inside(first.x_min(), first.x_max())?;
    let sampled = Sampled::new(f, first);
    let dx = first.dx();
    let c = problem.coefficients;

    let mass0 = sampled.pair(&sampled.phi, first.values(), dx, |g| g);
    let mut defects = Vec::with_capacity(slices.len());
    let mut integral = 0.0;
    defects.push(0.0);
    for j in 0..slices.len() - 1 {
        let values = slices[j].values();
        let dt = problem.times[j + 1] - problem.times[j];
        let flux = sampled.pair(&sampled.d1, values, dx, |g| c.flux(g));
        let diffusion = sampled.pair(&sampled.d2, values, dx, |g| c.diffusion(g));
        integral += (flux + diffusion) * dt;
        if let Some((gammas, dw)) = problem.noise {
            let gamma = gammas[j];
            let weight = match problem.weighting {
                QvWeighting::Calendar => dt,
                QvWeighting::Realized => dw[j] * dw[j],
            };
            let curvature = sampled.pair(&sampled.d2, values, dx, |g| g);
            let transport = sampled.pair(&sampled.d1, values, dx, |g| g);
            integral += 0.5 * gamma * gamma * curvature * weight + gamma * transport * dw[j];
        }
        let mass = sampled.pair(&sampled.phi, slices[j + 1].values(), dx, |g| g);
        defects.push(mass - mass0 - integral);
    }
    Ok(defects)
}

/// `max over test functions and times of |defect|`.
pub fn max_weak_defect(problem: &WeakProblem<'_>, family: &[TestFunction]) -> Result<f64> {
    let mut worst = 0.0f64;
    for f in family {
        for d in weak_defects(problem, f)? {
            worst = worst.max(d.abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::adaptive_simpson;

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let f = TestFunction::new(0.3, 1.7);
        let h = 1e-5;
        for x in [-1.0, -0.2, 0.3, 0.9, 1.8] {
            let (_, d1, d2) = f.eval(x);
            let fd1 = (f.eval(x + h).0 - f.eval(x - h).0) / (2.0 * h);
            let fd2 = (f.eval(x + h).0 - 2.0 * f.eval(x).0 + f.eval(x - h).0) / (h * h);
            assert!((d1 - fd1).abs() < 1e-7, "{x}: {d1} vs {fd1}");
            assert!((d2 - fd2).abs() < 1e-4, "{x}: {d2} vs {fd2}");
        }
        assert_eq!(f.eval(2.0 + 1e-9), (0.0, 0.0, 0.0));
    }

    #[test]
    fn derivatives_integrate_to_zero() {
        let f = TestFunction::new(0.0, 1.0);
        let i1 = adaptive_simpson(&|x| f.eval(x).1, -1.0, 1.0, 1e-13);
        let i2 = adaptive_simpson(&|x| f.eval(x).2, -1.0, 1.0, 1e-13);
        assert!(i1.abs() < 1e-10 && i2.abs() < 1e-10);
    }

    #[test]
    fn family_fits_inside_its_interval() {
        let fam = default_test_family(-4.0, 6.0);
        assert_eq!(fam.len(), 5);
        for f in fam {
            assert!(f.check_inside(-4.0, 6.0).is_ok());
        }
        assert!(TestFunction::new(0.0, 1.0).check_inside(-1.0, 5.0).is_err());
    }
}
