//! Probability measures on the real line.
//!
//! Two representations are used throughout the crate: [`EmpiricalMeasure`], a
//! sorted sample with mass `1/n` per atom, and [`GridCdf`], a monotone CDF
//! sampled on a uniform grid and linearly interpolated between nodes.
//!
//! CDFs are right-continuous with `<=` counting, so an empirical CDF evaluated
//! at an atom counts the atom itself and every tie.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from an arbitrary sample. Fails on an empty or
    /// non-finite sample.
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("empty sample".into()));
        }
        if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite atom {bad}")));
        }
        points.sort_unstable_by(f64::total_cmp);
        Ok(Self { points })
    }

    /// Wraps an already sorted, finite, non-empty sample.
    pub(crate) fn from_sorted(points: Vec<f64>) -> Self {
        debug_assert!(!points.is_empty());
        debug_assert!(points.windows(2).all(|w| w[0] <= w[1]));
        Self { points }
    }

    pub fn dirac(x: f64) -> Self {
        Self { points: vec![x] }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `F(x) = #{i : x_i <= x} / n`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.points.partition_point(|&p| p <= x) as f64 / self.len() as f64
    }

    /// Left limit `F(x-) = #{i : x_i < x} / n`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        self.points.partition_point(|&p| p < x) as f64 / self.len() as f64
    }

    /// Generalised inverse `inf {x : F(x) >= u}` for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_level(u)?;
        Ok(self.points[self.quantile_index(u)])
    }

    fn quantile_index(&self, u: f64) -> usize {
        let n = self.len();
        let nf = n as f64;
        let mut k = ((u * nf).ceil() as usize).clamp(1, n) - 1;
        // F(x_(k)) >= (k + 1) / n; fix rounding in u * n in the same arithmetic
        // cdf() uses.
        while k + 1 < n && ((k + 1) as f64 / nf) < u {
            k += 1;
        }
        while k > 0 && (k as f64 / nf) >= u {
            k -= 1;
        }
        k
    }

    pub fn shift(&self, c: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p + c).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().sum::<f64>() / self.len() as f64
    }

    /// Empirical `p`-th absolute moment `(1/n) sum |x_i|^p`.
    pub fn abs_moment(&self, p: f64) -> f64 {
        self.points.iter().map(|x| x.abs().powf(p)).sum::<f64>() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.points.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.len() as f64
    }

    /// Samples the empirical CDF on a uniform grid. Atoms outside the grid
    /// must carry at most `tol` mass on either side.
    pub fn to_grid(&self, x_min: f64, x_max: f64, m: usize, tol: f64) -> Result<GridCdf> {
        let dx = grid_spacing(x_min, x_max, m)?;
        let values = (0..m)
            .map(|j| self.cdf(x_min + j as f64 * dx))
            .collect::<Vec<_>>();
        GridCdf::with_tolerance(x_min, x_max, values, tol)
    }
}

fn check_level(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "quantile level",
            value: u,
            domain: "(0, 1)",
        })
    }
}

/// Moment exponent of a Wasserstein distance, `p >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WassersteinOrder(f64);

impl WassersteinOrder {
    pub const W1: Self = Self(1.0);
    pub const W2: Self = Self(2.0);

    pub fn new(p: f64) -> Result<Self> {
        if p >= 1.0 && p.is_finite() {
            Ok(Self(p))
        } else {
            Err(Error::Domain {
                what: "Wasserstein order",
                value: p,
                domain: "[1, inf)",
            })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `W_p` between two empirical measures.
///
/// Both quantile functions are step functions, constant between the levels
/// `k / n_mu` and `l / n_nu`, so the integral `int_0^1 |Q_mu - Q_nu|^p du` is
/// a finite sum over the merged levels. Equal sizes reduce to the
/// order-statistics coupling.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, order: WassersteinOrder) -> f64 {
    let p = order.get();
    let cost = |a: f64, b: f64| {
        let d = (a - b).abs();
        if p == 1.0 {
            d
        } else {
            d.powf(p)
        }
    };
    let mean_cost = if mu.len() == nu.len() {
        mu.points
            .iter()
            .zip(&nu.points)
            .map(|(&a, &b)| cost(a, b))
            .sum::<f64>()
            / mu.len() as f64
    } else {
        // levels in units of 1 / (n m), kept as integers so that shared
        // breakpoints are recognised exactly
        let (n, m) = (mu.len() as u128, nu.len() as u128);
        let (mut i, mut k) = (0usize, 0usize);
        let mut prev = 0u128;
        let mut acc = 0.0;
        while i < mu.len() && k < nu.len() {
            let (end_i, end_k) = ((i as u128 + 1) * m, (k as u128 + 1) * n);
            let end = end_i.min(end_k);
            acc += (end - prev) as f64 * cost(mu.points[i], nu.points[k]);
            prev = end;
            if end_i == end {
                i += 1;
            }
            if end_k == end {
                k += 1;
            }
        }
        acc / (n * m) as f64
    };
    if p == 1.0 {
        mean_cost
    } else {
        mean_cost.powf(1.0 / p)
    }
}

fn grid_spacing(x_min: f64, x_max: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidMeasure(format!("grid needs at least 2 nodes, got {m}")));
    }
    if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
        return Err(Error::InvalidMeasure(format!(
            "bad grid interval [{x_min}, {x_max}]"
        )));
    }
    Ok((x_max - x_min) / (m - 1) as f64)
}

/// Largest downward step tolerated by [`GridCdf::new`] before it refuses to
/// repair the input.
const MONOTONE_SLACK: f64 = 1e-12;

/// A CDF sampled on the uniform grid `x_j = x_min + j dx`, `j = 0..m`.
///
/// Values are nondecreasing with `values[0] == 0` and `values[m-1] == 1`.
/// Between nodes the CDF is linear; below `x_min` it is 0 and above `x_max`
/// it is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCdf {
    x_min: f64,
    x_max: f64,
    dx: f64,
    values: Vec<f64>,
}

impl GridCdf {
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(x_min, x_max, values, crate::BOUNDARY_MASS_TOL)
    }

    /// Validates the end values against `tol`, pins them to 0 and 1 and
    /// repairs sub-`1e-12` monotonicity defects.
    pub fn with_tolerance(x_min: f64, x_max: f64, mut values: Vec<f64>, tol: f64) -> Result<Self> {
        let dx = grid_spacing(x_min, x_max, values.len())?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite CDF value {v}")));
        }
        let m = values.len();
        if values[0] > tol || values[0] < -tol {
            return Err(Error::InvalidMeasure(format!(
                "CDF at x_min = {x_min} is {} (more than {tol:e} of mass below the grid)",
                values[0]
            )));
        }
        if (1.0 - values[m - 1]).abs() > tol {
            return Err(Error::InvalidMeasure(format!(
                "CDF at x_max = {x_max} is {} (more than {tol:e} of mass above the grid)",
                values[m - 1]
            )));
        }
        if let Some(w) = values.windows(2).find(|w| w[1] < w[0] - MONOTONE_SLACK) {
            return Err(Error::InvalidMeasure(format!(
                "CDF decreases from {} to {}",
                w[0], w[1]
            )));
        }
        values[0] = 0.0;
        values[m - 1] = 1.0;
        repair_monotone(&mut values);
        Ok(Self {
            x_min,
            x_max,
            dx,
            values,
        })
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(x_min: f64, x_max: f64, m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = grid_spacing(x_min, x_max, m)?;
        let values = (0..m).map(|j| f(x_min + j as f64 * dx)).collect();
        Self::new(x_min, x_max, values)
    }

    /// Heaviside CDF of a Dirac mass at `at`.
    pub fn heaviside(x_min: f64, x_max: f64, m: usize, at: f64) -> Result<Self> {
        Self::from_fn(x_min, x_max, m, |x| if x >= at { 1.0 } else { 0.0 })
    }

    /// Builds a grid CDF from values that are already known to be a valid,
    /// pinned, monotone CDF.
    pub(crate) fn from_repaired(x_min: f64, x_max: f64, values: Vec<f64>) -> Self {
        let dx = (x_max - x_min) / (values.len() - 1) as f64;
        Self {
            x_min,
            x_max,
            dx,
            values,
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|j| self.node(j))
    }

    pub fn same_grid(&self, other: &GridCdf) -> bool {
        self.x_min == other.x_min && self.x_max == other.x_max && self.len() == other.len()
    }

    pub(crate) fn check_same_grid(&self, other: &GridCdf) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[{}, {}] x {} vs [{}, {}] x {}",
                self.x_min,
                self.x_max,
                self.len(),
                other.x_min,
                other.x_max,
                other.len()
            )))
        }
    }

    /// Value at a fractional node index, 0 to the left of the grid and 1 to
    /// the right.
    fn at_index(&self, pos: f64) -> f64 {
        let last = self.len() - 1;
        if pos <= 0.0 {
            return if pos < 0.0 { 0.0 } else { self.values[0] };
        }
        if pos >= last as f64 {
            return 1.0;
        }
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        if w == 0.0 {
            self.values[i]
        } else {
            self.values[i] + w * (self.values[i + 1] - self.values[i])
        }
    }

    /// Piecewise-linear CDF evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.at_index((x - self.x_min) / self.dx)
    }

    /// `inf {x : F(x) >= u}`, linearly interpolated between the bracketing
    /// nodes.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_level(u)?;
        let j = self.values.partition_point(|&v| v < u);
        // values[0] == 0 < u and values[m-1] == 1 >= u
        let (lo, hi) = (self.values[j - 1], self.values[j]);
        Ok(self.node(j - 1) + (u - lo) / (hi - lo) * self.dx)
    }

    /// The CDF of the law translated by `c`, `x -> F(x - c)`, resampled on the
    /// same grid.
    pub fn shift(&self, c: f64) -> Result<GridCdf> {
        self.shift_with_tolerance(c, crate::BOUNDARY_MASS_TOL)
    }

    pub fn shift_with_tolerance(&self, c: f64, tol: f64) -> Result<GridCdf> {
        if c == 0.0 {
            return Ok(self.clone());
        }
        let lost = if c > 0.0 {
            1.0 - self.eval(self.x_max - c)
        } else {
            self.eval(self.x_min - c)
        };
        if lost > tol {
            return Err(Error::TruncationOverflow {
                shift: c,
                mass: lost,
                tol,
                x_min: self.x_min,
                x_max: self.x_max,
            });
        }
        let s = c / self.dx;
        let m = self.len();
        let mut values: Vec<f64> = (0..m).map(|j| self.at_index(j as f64 - s)).collect();
        values[0] = 0.0;
        values[m - 1] = 1.0;
        repair_monotone(&mut values);
        Ok(Self::from_repaired(self.x_min, self.x_max, values))
    }

    /// Maximum central-difference slope `(F_{j+1} - F_{j-1}) / (2 dx)`.
    pub fn max_slope(&self) -> f64 {
        self.values
            .windows(3)
            .map(|w| (w[2] - w[0]) / (2.0 * self.dx))
            .fold(0.0, f64::max)
    }

    /// Trapezoidal `int g(x) dx` over the grid of a per-node integrand.
    pub(crate) fn trapezoid(&self, mut g: impl FnMut(usize) -> f64) -> f64 {
        let m = self.len();
        let inner: f64 = (1..m - 1).map(&mut g).sum();
        self.dx * (inner + 0.5 * (g(0) + g(m - 1)))
    }
}

/// Running maximum followed by a clamp to `[0, 1]`.
pub(crate) fn repair_monotone(values: &mut [f64]) {
    let mut run = f64::NEG_INFINITY;
    for v in values.iter_mut() {
        run = run.max(*v);
        *v = run.clamp(0.0, 1.0);
    }
}

/// `W_1 = int |F - G| dx` by the trapezoidal rule on a shared grid.
pub fn w1_from_cdfs(f: &GridCdf, g: &GridCdf) -> Result<f64> {
    f.check_same_grid(g)?;
    Ok(f.trapezoid(|j| (f.values[j] - g.values[j]).abs()))
}

/// `int |F_mu - G| dx` over the whole line, exact for the piecewise-linear
/// grid CDF `G` (0 left of the grid, 1 right of it).
pub fn w1_empirical_grid(mu: &EmpiricalMeasure, g: &GridCdf) -> f64 {
    let n = mu.len() as f64;
    let pts = mu.points();
    let mut total = 0.0;

    // Tails outside the grid, where G is exactly 0 or 1.
    let below = pts.partition_point(|&p| p < g.x_min);
    total += pts[..below].iter().map(|p| g.x_min - p).sum::<f64>() / n;
    let above = pts.partition_point(|&p| p <= g.x_max);
    total += pts[above..].iter().map(|p| p - g.x_max).sum::<f64>() / n;

    // Walk the grid cells; atoms split cells into pieces where F_mu is
    // constant and G is linear.
    let mut k = below; // atoms < current left end are already counted
    for j in 0..g.len() - 1 {
        let (x0, x1) = (g.node(j), g.node(j + 1));
        let (g0, g1) = (g.values[j], g.values[j + 1]);
        let slope = (g1 - g0) / g.dx;
        let mut a = x0;
        // atoms <= a
        while k < pts.len() && pts[k] <= a {
            k += 1;
        }
        loop {
            let b = if k < pts.len() && pts[k] < x1 { pts[k] } else { x1 };
            if b > a {
                let level = k as f64 / n;
                let ga = g0 + slope * (a - x0);
                let gb = g0 + slope * (b - x0);
                total += abs_linear_integral(level - ga, level - gb, b - a);
            }
            if b >= x1 {
                break;
            }
            a = b;
            while k < pts.len() && pts[k] <= a {
                k += 1;
            }
        }
    }
    total
}

/// `int_0^h |d(s)| ds` for `d` linear from `d0` to `d1`.
fn abs_linear_integral(d0: f64, d1: f64, h: f64) -> f64 {
    if d0 * d1 >= 0.0 {
        0.5 * (d0.abs() + d1.abs()) * h
    } else {
        0.5 * h * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
    }
}

/// `sup_x |F_mu(x) - G(x)|`.
///
/// The difference of a step function and a continuous piecewise-linear
/// function attains its supremum at a grid node or at one side of a jump, so
/// both candidate sets are scanned.
pub fn sup_cdf_gap(mu: &EmpiricalMeasure, g: &GridCdf) -> f64 {
    let at_nodes = g
        .nodes()
        .zip(&g.values)
        .map(|(x, &v)| (mu.cdf(x) - v).abs())
        .fold(0.0, f64::max);
    let at_atoms = mu
        .points()
        .iter()
        .map(|&x| {
            let gx = g.eval(x);
            (mu.cdf(x) - gx).abs().max((mu.cdf_left(x) - gx).abs())
        })
        .fold(0.0, f64::max);
    at_nodes.max(at_atoms)
}

/// A measure argument for functionals such as `gamma`.
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    Empirical(&'a EmpiricalMeasure),
    Grid(&'a GridCdf),
}

impl<'a> From<&'a EmpiricalMeasure> for MeasureRef<'a> {
    fn from(m: &'a EmpiricalMeasure) -> Self {
        MeasureRef::Empirical(m)
    }
}

impl<'a> From<&'a GridCdf> for MeasureRef<'a> {
    fn from(g: &'a GridCdf) -> Self {
        MeasureRef::Grid(g)
    }
}
