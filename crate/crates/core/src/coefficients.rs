//! Rank coefficients `b`, `sigma`, the common-noise coefficient `gamma` and the
//! initial law.
//!
//! `b` and `sigma` are functions on `[0, 1]` evaluated at the rank
//! `F(X_i) = k/n` of a particle. Their primitives
//! `B(r) = int_0^r b` and `Sigma(r) = int_0^r sigma^2 / 2` are the flux and
//! diffusion of the porous medium equation.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::measures::{wasserstein, EmpiricalMeasure, GridCdf, MeasureRef, WassersteinOrder};

/// Number of points of the mesh on `[0, 1]` used for positivity checks.
pub const VALIDATION_MESH: usize = 10_000;

/// Absolute tolerance of the adaptive Simpson rule used for primitives.
const QUAD_TOL: f64 = 1e-10;

/// Closed-form coefficient families addressable by name from config files.
#[derive(Debug, Clone, PartialEq)]
pub enum RegistryEntry {
    /// `base + amplitude * sin(pi a)`
    SineBump { base: f64, amplitude: f64 },
    /// `scale * exp(rate a)`
    Exponential { scale: f64, rate: f64 },
}

impl RegistryEntry {
    pub fn name(&self) -> &'static str {
        match self {
            RegistryEntry::SineBump { .. } => "sine-bump",
            RegistryEntry::Exponential { .. } => "exponential",
        }
    }

    fn eval(&self, a: f64) -> f64 {
        match *self {
            RegistryEntry::SineBump { base, amplitude } => {
                base + amplitude * (std::f64::consts::PI * a).sin()
            }
            RegistryEntry::Exponential { scale, rate } => scale * (rate * a).exp(),
        }
    }
}

/// A function `[0, 1] -> R` used for `b` or `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub enum RankFunction {
    Constant(f64),
    /// `intercept + slope * a`
    Affine { intercept: f64, slope: f64 },
    /// Linear interpolation of `values` at the uniform nodes `k / (len - 1)`.
    Table(Vec<f64>),
    Registry(RegistryEntry),
}

impl RankFunction {
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            RankFunction::Constant(c) => *c,
            RankFunction::Affine { intercept, slope } => intercept + slope * a,
            RankFunction::Table(values) => {
                let last = values.len() - 1;
                let pos = (a.clamp(0.0, 1.0)) * last as f64;
                let i = (pos.floor() as usize).min(last - 1);
                let w = pos - i as f64;
                values[i] + w * (values[i + 1] - values[i])
            }
            RankFunction::Registry(entry) => entry.eval(a),
        }
    }

    /// `(intercept, slope)` for the kinds whose primitives have closed forms.
    fn affine_parts(&self) -> Option<(f64, f64)> {
        match *self {
            RankFunction::Constant(c) => Some((c, 0.0)),
            RankFunction::Affine { intercept, slope } => Some((intercept, slope)),
            _ => None,
        }
    }

    fn check_shape(&self, name: &str) -> Result<()> {
        let params: Vec<f64> = match self {
            RankFunction::Constant(c) => vec![*c],
            RankFunction::Affine { intercept, slope } => vec![*intercept, *slope],
            RankFunction::Table(values) => {
                if values.len() < 2 {
                    return Err(Error::InvalidSpec(format!(
                        "{name}: a table needs at least 2 values"
                    )));
                }
                values.clone()
            }
            RankFunction::Registry(RegistryEntry::SineBump { base, amplitude }) => {
                vec![*base, *amplitude]
            }
            RankFunction::Registry(RegistryEntry::Exponential { scale, rate }) => {
                vec![*scale, *rate]
            }
        };
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidSpec(format!("{name}: non-finite parameter")));
        }
        Ok(())
    }

    /// Minimum and maximum over the validation mesh.
    fn mesh_range(&self) -> (f64, f64) {
        (0..VALIDATION_MESH)
            .map(|k| self.eval(k as f64 / (VALIDATION_MESH - 1) as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn check_unit(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "rank",
            value: r,
            domain: "[0, 1]",
        })
    }
}

/// `B(r) = int_0^r b(a) da`.
pub fn antiderivative_b(b: &RankFunction, r: f64) -> Result<f64> {
    check_unit(r)?;
    Ok(match b.affine_parts() {
        Some((c0, c1)) => c0 * r + 0.5 * c1 * r * r,
        None => adaptive_simpson(&|a| b.eval(a), 0.0, r, QUAD_TOL),
    })
}

/// `Sigma(r) = int_0^r sigma(a)^2 / 2 da`.
pub fn antiderivative_sigma(sigma: &RankFunction, r: f64) -> Result<f64> {
    check_unit(r)?;
    Ok(match sigma.affine_parts() {
        Some((c0, c1)) => 0.5 * (c0 * c0 * r + c0 * c1 * r * r + c1 * c1 * r * r * r / 3.0),
        None => adaptive_simpson(
            &|a| {
                let s = sigma.eval(a);
                0.5 * s * s
            },
            0.0,
            r,
            QUAD_TOL,
        ),
    })
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Fast evaluator of a primitive on `[0, 1]` for the solver's inner loop.
///
/// Affine and constant integrands use the exact polynomial; everything else
/// is tabulated once with adaptive Simpson and read back by cubic Hermite
/// interpolation with the integrand itself as the derivative.
#[derive(Debug, Clone)]
pub enum Primitive {
    /// `c1 r + c2 r^2 + c3 r^3`
    Cubic([f64; 3]),
    Hermite {
        values: Vec<f64>,
        slopes: Vec<f64>,
    },
}

const HERMITE_NODES: usize = 2049;

impl Primitive {
    fn tabulate(integrand: impl Fn(f64) -> f64) -> Self {
        let h = 1.0 / (HERMITE_NODES - 1) as f64;
        let mut values = Vec::with_capacity(HERMITE_NODES);
        let mut acc = 0.0;
        values.push(0.0);
        for k in 1..HERMITE_NODES {
            acc += adaptive_simpson(&integrand, (k - 1) as f64 * h, k as f64 * h, 1e-14);
            values.push(acc);
        }
        let slopes = (0..HERMITE_NODES).map(|k| integrand(k as f64 * h)).collect();
        Primitive::Hermite { values, slopes }
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Primitive::Cubic([c1, c2, c3]) => r * (c1 + r * (c2 + r * c3)),
            Primitive::Hermite { values, slopes } => {
                let last = values.len() - 1;
                let h = 1.0 / last as f64;
                let pos = r.clamp(0.0, 1.0) * last as f64;
                let i = (pos.floor() as usize).min(last - 1);
                let s = pos - i as f64;
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                h00 * values[i] + h * h10 * slopes[i] + h01 * values[i + 1] + h * h11 * slopes[i + 1]
            }
        }
    }
}

/// `f` in a mean functional `gamma(nu) = int f dnu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrand {
    /// `scale * tanh(rate x)`
    Tanh { scale: f64, rate: f64 },
    /// `scale * sin(rate x)`
    Sine { scale: f64, rate: f64 },
    /// `scale * atan(rate x)`
    Atan { scale: f64, rate: f64 },
}

impl Integrand {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Integrand::Tanh { scale, rate } => scale * (rate * x).tanh(),
            Integrand::Sine { scale, rate } => scale * (rate * x).sin(),
            Integrand::Atan { scale, rate } => scale * (rate * x).atan(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Integrand::Tanh { scale, rate } => {
                let c = (rate * x).cosh();
                scale * rate / (c * c)
            }
            Integrand::Sine { scale, rate } => scale * rate * (rate * x).cos(),
            Integrand::Atan { scale, rate } => scale * rate / (1.0 + (rate * x) * (rate * x)),
        }
    }

    /// `sup |f'|`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Integrand::Tanh { scale, rate }
            | Integrand::Sine { scale, rate }
            | Integrand::Atan { scale, rate } => (scale * rate).abs(),
        }
    }

    /// `sup |f|`.
    pub fn sup(&self) -> f64 {
        match *self {
            Integrand::Tanh { scale, rate } | Integrand::Sine { scale, rate } => {
                if rate == 0.0 {
                    0.0
                } else {
                    scale.abs()
                }
            }
            Integrand::Atan { scale, rate } => {
                if rate == 0.0 {
                    0.0
                } else {
                    scale.abs() * std::f64::consts::FRAC_PI_2
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Integrand::Tanh { .. } => "tanh",
            Integrand::Sine { .. } => "sine",
            Integrand::Atan { .. } => "atan",
        }
    }

    pub fn params(&self) -> (f64, f64) {
        match *self {
            Integrand::Tanh { scale, rate }
            | Integrand::Sine { scale, rate }
            | Integrand::Atan { scale, rate } => (scale, rate),
        }
    }
}

pub type CustomGamma = Arc<dyn Fn(f64, MeasureRef<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum GammaKind {
    Zero,
    Constant(f64),
    /// `offset + amplitude * sin(omega t)`, independent of the measure.
    TimeSine {
        offset: f64,
        amplitude: f64,
        omega: f64,
    },
    /// `int f dnu`
    MeanFunctional(Integrand),
    Custom(CustomGamma),
}

impl fmt::Debug for GammaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaKind::Zero => write!(f, "Zero"),
            GammaKind::Constant(c) => write!(f, "Constant({c})"),
            GammaKind::TimeSine {
                offset,
                amplitude,
                omega,
            } => write!(f, "TimeSine({offset}, {amplitude}, {omega})"),
            GammaKind::MeanFunctional(i) => write!(f, "MeanFunctional({i:?})"),
            GammaKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// The common-noise coefficient `gamma(t, nu)` with its declared Lipschitz
/// constant (w.r.t. `W_1`) and uniform bound.
#[derive(Debug, Clone)]
pub struct GammaSpec {
    kind: GammaKind,
    lipschitz: f64,
    bound: f64,
}

impl GammaSpec {
    pub fn zero() -> Self {
        Self {
            kind: GammaKind::Zero,
            lipschitz: 0.0,
            bound: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            kind: GammaKind::Constant(c),
            lipschitz: 0.0,
            bound: c.abs(),
        }
    }

    pub fn time_sine(offset: f64, amplitude: f64, omega: f64) -> Self {
        Self {
            kind: GammaKind::TimeSine {
                offset,
                amplitude,
                omega,
            },
            lipschitz: 0.0,
            bound: offset.abs() + amplitude.abs(),
        }
    }

    /// `gamma(nu) = int f dnu`, with `L = sup |f'|` and bound `sup |f|`.
    pub fn mean_functional(f: Integrand) -> Self {
        Self {
            kind: GammaKind::MeanFunctional(f),
            lipschitz: f.lipschitz(),
            bound: f.sup(),
        }
    }

    pub fn custom(f: CustomGamma, lipschitz: f64, bound: f64) -> Result<Self> {
        if !(lipschitz >= 0.0 && bound >= 0.0 && lipschitz.is_finite() && bound.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "gamma: need finite L >= 0 and bound >= 0, got L = {lipschitz}, bound = {bound}"
            )));
        }
        Ok(Self {
            kind: GammaKind::Custom(f),
            lipschitz,
            bound,
        })
    }

    /// Replaces the declared Lipschitz constant, e.g. with a value read from
    /// a config file; [`lipschitz_probe`] then checks the claim.
    pub fn with_declared_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "gamma: declared Lipschitz constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn kind(&self) -> &GammaKind {
        &self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Whether `gamma` ignores its measure argument.
    pub fn is_measure_free(&self) -> bool {
        matches!(
            self.kind,
            GammaKind::Zero | GammaKind::Constant(_) | GammaKind::TimeSine { .. }
        )
    }

    fn check_params(&self) -> Result<()> {
        let ok = match &self.kind {
            GammaKind::Zero | GammaKind::Custom(_) => true,
            GammaKind::Constant(c) => c.is_finite(),
            GammaKind::TimeSine {
                offset,
                amplitude,
                omega,
            } => offset.is_finite() && amplitude.is_finite() && omega.is_finite(),
            GammaKind::MeanFunctional(f) => {
                let (s, r) = f.params();
                s.is_finite() && r.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec("gamma: non-finite parameter".into()))
        }
    }

    /// Evaluates `gamma(t, nu)` and enforces the declared bound.
    pub fn eval<'a>(&self, t: f64, nu: impl Into<MeasureRef<'a>>) -> Result<f64> {
        let value = self.eval_unchecked(t, nu.into());
        if !(value.abs() <= self.bound * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::GammaBound {
                t,
                value,
                bound: self.bound,
            });
        }
        Ok(value)
    }

    fn eval_unchecked(&self, t: f64, nu: MeasureRef<'_>) -> f64 {
        match &self.kind {
            GammaKind::Zero => 0.0,
            GammaKind::Constant(c) => *c,
            GammaKind::TimeSine {
                offset,
                amplitude,
                omega,
            } => offset + amplitude * (omega * t).sin(),
            GammaKind::MeanFunctional(f) => match nu {
                MeasureRef::Empirical(mu) => {
                    mu.points().iter().map(|&x| f.eval(x)).sum::<f64>() / mu.len() as f64
                }
                MeasureRef::Grid(g) => mean_by_parts(f, g),
            },
            GammaKind::Custom(g) => g(t, nu),
        }
    }
}

/// `int f dnu = f(x_max) - int_{x_min}^{x_max} f'(x) F(x) dx` on a grid CDF
/// with `F(x_min) = 0` and `F(x_max) = 1`.
pub fn mean_by_parts(f: &Integrand, g: &GridCdf) -> f64 {
    let xs: Vec<f64> = g.nodes().collect();
    let vals = g.values();
    f.eval(g.x_max()) - g.trapezoid(|j| f.derivative(xs[j]) * vals[j])
}

/// Largest `|gamma(nu1) - gamma(nu2)| / W_1(nu1, nu2)` over `trials` random
/// pairs of equal-size empirical measures. Fails, returning the witnessing
/// pair, if the ratio exceeds the declared constant by more than `1e-9`
/// relative.
pub fn lipschitz_probe(spec: &GammaSpec, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Domain {
            what: "trials",
            value: 0.0,
            domain: ">= 1",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..=40);
        let t = rng.random::<f64>();
        let draw = |rng: &mut ChaCha8Rng| {
            let centre = 3.0 * rng.sample::<f64, _>(StandardNormal);
            let spread = 0.05 + 2.0 * rng.random::<f64>();
            let pts = (0..n)
                .map(|_| centre + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            EmpiricalMeasure::new(pts).expect("finite sample")
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let w1 = wasserstein(&a, &b, WassersteinOrder::W1);
        if w1 == 0.0 {
            continue;
        }
        let ga = spec.eval_unchecked(t, MeasureRef::Empirical(&a));
        let gb = spec.eval_unchecked(t, MeasureRef::Empirical(&b));
        let ratio = (ga - gb).abs() / w1;
        if ratio > spec.lipschitz * (1.0 + 1e-9) {
            return Err(Error::LipschitzExceeded {
                ratio,
                declared: spec.lipschitz,
                witness: Box::new((a, b)),
            });
        }
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Piecewise-linear CDF through `(xs[k], cdf[k])`, right-continuous at
/// repeated abscissae (a repeated `x` encodes a jump).
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl CdfTable {
    pub fn new(xs: Vec<f64>, cdf: Vec<f64>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("initial law table: {msg}")));
        if xs.len() != cdf.len() || xs.len() < 2 {
            return bad("need two equal-length columns with >= 2 rows");
        }
        if xs.iter().chain(&cdf).any(|v| !v.is_finite()) {
            return bad("non-finite entry");
        }
        if xs.windows(2).any(|w| w[1] < w[0]) || cdf.windows(2).any(|w| w[1] < w[0]) {
            return bad("x and F must be nondecreasing");
        }
        if cdf[0] != 0.0 || cdf[cdf.len() - 1] != 1.0 {
            return bad("F must start at 0 and end at 1");
        }
        Ok(Self { xs, cdf })
    }

    /// Dirac mass at `x`.
    pub fn heaviside(x: f64) -> Self {
        Self {
            xs: vec![x, x],
            cdf: vec![0.0, 1.0],
        }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&xi| xi <= x);
        if k == 0 {
            return 0.0;
        }
        if k == self.xs.len() {
            return 1.0;
        }
        let i = k - 1;
        let (x0, x1) = (self.xs[i], self.xs[k]);
        self.cdf[i] + (x - x0) / (x1 - x0) * (self.cdf[k] - self.cdf[i])
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&f| f < u);
        if k == 0 {
            return self.xs[0];
        }
        let (f0, f1) = (self.cdf[k - 1], self.cdf[k]);
        self.xs[k - 1] + (u - f0) / (f1 - f0) * (self.xs[k] - self.xs[k - 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Gaussian { mean: f64, sd: f64 },
    Table(CdfTable),
}

/// The initial law `lambda` and the moment exponent `p > 1` it is assumed to
/// have.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLawSpec {
    law: InitialLaw,
    moment_exponent: f64,
}

impl InitialLawSpec {
    pub fn new(law: InitialLaw, moment_exponent: f64) -> Result<Self> {
        if !(moment_exponent > 1.0 && moment_exponent.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "moment exponent p must be > 1, got {moment_exponent}"
            )));
        }
        if let InitialLaw::Gaussian { mean, sd } = law {
            if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "gaussian initial law needs finite mean and sd > 0, got ({mean}, {sd})"
                )));
            }
        }
        let spec = Self {
            law,
            moment_exponent,
        };
        spec.smoke_check()?;
        Ok(spec)
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Self::new(InitialLaw::Gaussian { mean, sd }, 2.0)
    }

    pub fn dirac(x: f64) -> Self {
        Self {
            law: InitialLaw::Table(CdfTable::heaviside(x)),
            moment_exponent: 2.0,
        }
    }

    pub fn law(&self) -> &InitialLaw {
        &self.law
    }

    pub fn moment_exponent(&self) -> f64 {
        self.moment_exponent
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match &self.law {
            InitialLaw::Gaussian { mean, sd } => normal(*mean, *sd).cdf(x),
            InitialLaw::Table(t) => t.cdf(x),
        }
    }

    /// Quantile for `u` in `(0, 1)`; used for inverse-CDF sampling.
    pub fn quantile(&self, u: f64) -> f64 {
        match &self.law {
            InitialLaw::Gaussian { mean, sd } => normal(*mean, *sd).inverse_cdf(u),
            InitialLaw::Table(t) => t.quantile(u),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.law {
            InitialLaw::Gaussian { mean, .. } => *mean,
            InitialLaw::Table(t) => {
                // mean of the piecewise-linear law: midpoint of each segment
                // weighted by its mass
                t.xs
                    .windows(2)
                    .zip(t.cdf.windows(2))
                    .map(|(x, f)| 0.5 * (x[0] + x[1]) * (f[1] - f[0]))
                    .sum()
            }
        }
    }

    /// CDF sampled on a grid; fails if more than `tol` mass falls outside.
    pub fn to_grid(&self, x_min: f64, x_max: f64, m: usize, tol: f64) -> Result<GridCdf> {
        let dx = (x_max - x_min) / (m.max(2) - 1) as f64;
        let values = (0..m).map(|j| self.cdf(x_min + j as f64 * dx)).collect();
        GridCdf::with_tolerance(x_min, x_max, values, tol)
    }

    /// Finite values and bounded second differences of `F` on a mesh over the
    /// bulk of the law. Higher regularity is not checked.
    pub fn smoke_check(&self) -> Result<()> {
        let lo = self.quantile(1e-6);
        let hi = self.quantile(1.0 - 1e-6);
        let span = (hi - lo).max(1e-9);
        let (a, b) = (lo - 0.1 * span, hi + 0.1 * span);
        let k = 1000;
        let h = (b - a) / k as f64;
        let vals: Vec<f64> = (0..=k).map(|i| self.cdf(a + i as f64 * h)).collect();
        let finite = vals.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        let second_ok = vals
            .windows(3)
            .all(|w| (w[2] - 2.0 * w[1] + w[0]).is_finite());
        if finite && second_ok && lo.is_finite() && hi.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec("initial law CDF failed the smoke check".into()))
        }
    }
}

fn normal(mean: f64, sd: f64) -> Normal {
    Normal::new(mean, sd).expect("validated normal parameters")
}

/// The coefficient triple `(b, sigma, gamma)`, validated against positivity
/// of `b` and a positive lower bound for `sigma` on the validation mesh.
#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    b: RankFunction,
    sigma: RankFunction,
    gamma: GammaSpec,
    b_max: f64,
    sigma_sq_max: f64,
    drift_primitive: Arc<Primitive>,
    diffusion_primitive: Arc<Primitive>,
}

impl CoefficientSpec {
    pub fn new(b: RankFunction, sigma: RankFunction, gamma: GammaSpec) -> Result<Self> {
        let mut errors = Vec::new();
        for (name, f) in [("b", &b), ("sigma", &sigma)] {
            if let Err(Error::InvalidSpec(msg)) = f.check_shape(name) {
                errors.push(msg);
            }
        }
        if let Err(Error::InvalidSpec(msg)) = gamma.check_params() {
            errors.push(msg);
        }
        if !errors.is_empty() {
            return Err(Error::InvalidSpec(errors.join("; ")));
        }
        let (b_min, b_max) = b.mesh_range();
        let (s_min, s_max) = sigma.mesh_range();
        if !(b_min > 0.0) {
            errors.push(format!(
                "b must be strictly positive on [0, 1] (positivity of the rank drift); min over mesh = {b_min}"
            ));
        }
        if !(s_min > 0.0) {
            errors.push(format!(
                "sigma must be bounded away from zero on [0, 1]; min over mesh = {s_min}"
            ));
        }
        if !errors.is_empty() {
            return Err(Error::InvalidSpec(errors.join("; ")));
        }
        Ok(Self::build(b, sigma, gamma, b_max, s_max.max(-s_min)))
    }

    /// Coefficients that may vanish (`b = 0` or `sigma = 0`), for degenerate
    /// and oracle test cases. Only finiteness and `b >= 0` are enforced.
    pub fn degenerate(b: RankFunction, sigma: RankFunction, gamma: GammaSpec) -> Result<Self> {
        b.check_shape("b")?;
        sigma.check_shape("sigma")?;
        gamma.check_params()?;
        let (b_min, b_max) = b.mesh_range();
        if b_min < 0.0 {
            return Err(Error::InvalidSpec(format!("b must be >= 0, min = {b_min}")));
        }
        let (s_min, s_max) = sigma.mesh_range();
        Ok(Self::build(b, sigma, gamma, b_max, s_max.abs().max(s_min.abs())))
    }

    fn build(
        b: RankFunction,
        sigma: RankFunction,
        gamma: GammaSpec,
        b_max: f64,
        sigma_abs_max: f64,
    ) -> Self {
        let drift_primitive = match b.affine_parts() {
            Some((c0, c1)) => Primitive::Cubic([c0, 0.5 * c1, 0.0]),
            None => Primitive::tabulate(|a| b.eval(a)),
        };
        let diffusion_primitive = match sigma.affine_parts() {
            Some((c0, c1)) => Primitive::Cubic([0.5 * c0 * c0, 0.5 * c0 * c1, c1 * c1 / 6.0]),
            None => Primitive::tabulate(|a| {
                let s = sigma.eval(a);
                0.5 * s * s
            }),
        };
        Self {
            b,
            sigma,
            gamma,
            b_max,
            sigma_sq_max: sigma_abs_max * sigma_abs_max,
            drift_primitive: Arc::new(drift_primitive),
            diffusion_primitive: Arc::new(diffusion_primitive),
        }
    }

    /// Replaces `gamma`, keeping `b` and `sigma`.
    pub fn with_gamma(&self, gamma: GammaSpec) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    pub fn b(&self) -> &RankFunction {
        &self.b
    }

    pub fn sigma(&self) -> &RankFunction {
        &self.sigma
    }

    pub fn gamma(&self) -> &GammaSpec {
        &self.gamma
    }

    /// `max b` over the validation mesh.
    pub fn b_max(&self) -> f64 {
        self.b_max
    }

    /// `max sigma^2` over the validation mesh.
    pub fn sigma_sq_max(&self) -> f64 {
        self.sigma_sq_max
    }

    /// Fast `B(r)`.
    #[inline]
    pub fn flux(&self, r: f64) -> f64 {
        self.drift_primitive.eval(r)
    }

    /// Fast `Sigma(r)`.
    #[inline]
    pub fn diffusion(&self, r: f64) -> f64 {
        self.diffusion_primitive.eval(r)
    }
}
