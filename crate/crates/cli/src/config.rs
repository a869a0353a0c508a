//! Run configuration: parsing, validation and the canonical text form.
//!
//! Configs are TOML. Every key is checked; unknown keys, missing required
//! keys, wrong types and rejected coefficient specs are all collected and
//! reported together. `docs/config.md` documents the schema.

use std::fmt::Write as _;
use std::path::PathBuf;

use ranknoise::coefficients::{lipschitz_probe, CdfTable, GammaKind, InitialLaw, Integrand, RegistryEntry};
use ranknoise::limit_solver::FixedPointConfig;
use ranknoise::pme_solver::PmeGrid;
use ranknoise::{CoefficientSpec, GammaSpec, InitialLawSpec, RankFunction};
use toml::{Table, Value};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_DT: f64 = 1e-3;

/// Trials of the Lipschitz probe run on every `gamma` at load time.
const PROBE_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SolvePme,
    Simulate,
    FixedPoint,
    Converge,
    SpdeResidual,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::SolvePme,
        Experiment::Simulate,
        Experiment::FixedPoint,
        Experiment::Converge,
        Experiment::SpdeResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::SolvePme => "solve-pme",
            Experiment::Simulate => "simulate",
            Experiment::FixedPoint => "fixed-point",
            Experiment::Converge => "converge",
            Experiment::SpdeResidual => "spde-residual",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualField {
    /// The fixed-point limit computed from the PDE solution.
    Solver,
    /// The closed form available for constant `b`, `sigma`, `gamma` and a
    /// Gaussian initial law.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSection {
    pub m: usize,
    pub domain: Option<(f64, f64)>,
    /// Explicit PDE step; the largest stable step when absent.
    pub dt: Option<f64>,
    /// Number of slices after `t = 0` written by `solve-pme`, and the
    /// stride of slices written by the other experiments.
    pub slices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSection {
    pub n: usize,
    pub keep_positions: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSection {
    pub tol: f64,
    pub max_iter: usize,
    /// Also solve from a second starting path and report the distance.
    pub uniqueness_probe: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeSection {
    pub ns: Vec<usize>,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSection {
    pub field: ResidualField,
    pub levels: usize,
    pub dt0: f64,
    pub m0: usize,
    /// Interval spanned by the five test bumps; derived from the law when
    /// absent.
    pub test_interval: Option<(f64, f64)>,
}

/// A fully validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub horizon: f64,
    pub dt: f64,
    pub output_dir: Option<PathBuf>,
    /// Admit `b = 0` or `sigma = 0` (oracle and degenerate test cases).
    pub degenerate: bool,
    pub coefficients: CoefficientSpec,
    pub initial_law: InitialLawSpec,
    pub pde: PdeSection,
    pub simulate: SimulateSection,
    pub fixed_point: FixedPointSection,
    pub converge: ConvergeSection,
    pub spde_residual: ResidualSection,
}

/// Reads typed values out of a TOML table while recording every problem.
struct Reader<'a> {
    errors: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn unknown_keys(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(format!("unknown key `{}`", join(prefix, key)));
            }
        }
    }

    fn float(&mut self, table: &Table, prefix: &str, key: &str) -> Option<f64> {
        match table.get(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.err(format!("`{}`: expected a number, found {}", join(prefix, key), other.type_str()));
                None
            }
        }
    }

    fn float_or(&mut self, table: &Table, prefix: &str, key: &str, default: f64) -> f64 {
        self.float(table, prefix, key).unwrap_or(default)
    }

    fn required_float(&mut self, table: &Table, prefix: &str, key: &str) -> Option<f64> {
        if !table.contains_key(key) {
            self.err(format!("missing required key `{}`", join(prefix, key)));
        }
        self.float(table, prefix, key)
    }

    fn count(&mut self, table: &Table, prefix: &str, key: &str) -> Option<usize> {
        match table.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            other => {
                self.err(format!(
                    "`{}`: expected a nonnegative integer, found {}",
                    join(prefix, key),
                    describe(other)
                ));
                None
            }
        }
    }

    fn boolean(&mut self, table: &Table, prefix: &str, key: &str) -> Option<bool> {
        match table.get(key)? {
            Value::Boolean(b) => Some(*b),
            other => {
                self.err(format!("`{}`: expected true or false, found {}", join(prefix, key), other.type_str()));
                None
            }
        }
    }

    fn string<'t>(&mut self, table: &'t Table, prefix: &str, key: &str) -> Option<&'t str> {
        match table.get(key)? {
            Value::String(s) => Some(s.as_str()),
            other => {
                self.err(format!("`{}`: expected a string, found {}", join(prefix, key), other.type_str()));
                None
            }
        }
    }

    fn floats(&mut self, table: &Table, prefix: &str, key: &str) -> Option<Vec<f64>> {
        let name = join(prefix, key);
        match table.get(key)? {
            Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for v in items {
                    match v {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(i) => out.push(*i as f64),
                        other => {
                            self.err(format!("`{name}`: expected numbers, found {}", other.type_str()));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            other => {
                self.err(format!("`{name}`: expected an array of numbers, found {}", other.type_str()));
                None
            }
        }
    }

    fn section<'t>(&mut self, root: &'t Table, key: &str) -> Option<&'t Table> {
        match root.get(key)? {
            Value::Table(t) => Some(t),
            other => {
                self.err(format!("`{key}`: expected a table, found {}", other.type_str()));
                None
            }
        }
    }

    fn interval(&mut self, table: &Table, prefix: &str, lo: &str, hi: &str) -> Option<(f64, f64)> {
        let a = self.float(table, prefix, lo);
        let b = self.float(table, prefix, hi);
        match (a, b) {
            (Some(a), Some(b)) if a < b => Some((a, b)),
            (Some(a), Some(b)) => {
                self.err(format!("`{}` = {a} must be below `{}` = {b}", join(prefix, lo), join(prefix, hi)));
                None
            }
            (None, None) => None,
            _ => {
                if table.contains_key(lo) != table.contains_key(hi) {
                    self.err(format!(
                        "`{}` and `{}` must be given together",
                        join(prefix, lo),
                        join(prefix, hi)
                    ));
                }
                None
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::Integer(i) => format!("{i}"),
        Value::Float(x) => format!("{x}"),
        other => other.type_str().to_string(),
    }
}

fn rank_function(r: &mut Reader<'_>, parent: &Table, prefix: &str, key: &str) -> Option<RankFunction> {
    let name = join(prefix, key);
    let value = match parent.get(key) {
        Some(v) => v,
        None => {
            r.err(format!("missing required key `{name}`"));
            return None;
        }
    };
    let t = match value {
        Value::Float(x) => return Some(RankFunction::Constant(*x)),
        Value::Integer(i) => return Some(RankFunction::Constant(*i as f64)),
        Value::Table(t) => t,
        other => {
            r.err(format!("`{name}`: expected a number or a table, found {}", other.type_str()));
            return None;
        }
    };
    let kind = r.string(t, &name, "kind");
    let kind = match kind {
        Some(k) => k,
        None => {
            if !t.contains_key("kind") {
                r.err(format!("missing required key `{name}.kind`"));
            }
            return None;
        }
    };
    let (allowed, f): (&[&str], Option<RankFunction>) = match kind {
        "constant" => (&["kind", "value"], r.required_float(t, &name, "value").map(RankFunction::Constant)),
        "affine" => {
            let a = r.required_float(t, &name, "intercept");
            let b = r.required_float(t, &name, "slope");
            (
                &["kind", "intercept", "slope"],
                a.zip(b).map(|(intercept, slope)| RankFunction::Affine { intercept, slope }),
            )
        }
        "table" => {
            if !t.contains_key("values") {
                r.err(format!("missing required key `{name}.values`"));
            }
            (&["kind", "values"], r.floats(t, &name, "values").map(RankFunction::Table))
        }
        "sine-bump" => {
            let a = r.required_float(t, &name, "base");
            let b = r.required_float(t, &name, "amplitude");
            (
                &["kind", "base", "amplitude"],
                a.zip(b)
                    .map(|(base, amplitude)| RankFunction::Registry(RegistryEntry::SineBump { base, amplitude })),
            )
        }
        "exponential" => {
            let a = r.required_float(t, &name, "scale");
            let b = r.required_float(t, &name, "rate");
            (
                &["kind", "scale", "rate"],
                a.zip(b)
                    .map(|(scale, rate)| RankFunction::Registry(RegistryEntry::Exponential { scale, rate })),
            )
        }
        other => {
            r.err(format!(
                "`{name}.kind`: unknown kind {other:?} (constant, affine, table, sine-bump, exponential)"
            ));
            return None;
        }
    };
    r.unknown_keys(t, &name, allowed);
    f
}

fn gamma_spec(r: &mut Reader<'_>, parent: &Table, prefix: &str) -> Option<GammaSpec> {
    let name = join(prefix, "gamma");
    let t = match parent.get("gamma") {
        None => return Some(GammaSpec::zero()),
        Some(Value::Float(x)) => return Some(GammaSpec::constant(*x)),
        Some(Value::Integer(i)) => return Some(GammaSpec::constant(*i as f64)),
        Some(Value::Table(t)) => t,
        Some(other) => {
            r.err(format!("`{name}`: expected a number or a table, found {}", other.type_str()));
            return None;
        }
    };
    let kind = match r.string(t, &name, "kind") {
        Some(k) => k,
        None => {
            if !t.contains_key("kind") {
                r.err(format!("missing required key `{name}.kind`"));
            }
            return None;
        }
    };
    let declared = r.float(t, &name, "lipschitz");
    let (allowed, spec): (&[&str], Option<GammaSpec>) = match kind {
        "zero" => (&["kind", "lipschitz"], Some(GammaSpec::zero())),
        "constant" => (&["kind", "value", "lipschitz"], r.required_float(t, &name, "value").map(GammaSpec::constant)),
        "time-sine" => {
            let o = r.required_float(t, &name, "offset");
            let a = r.required_float(t, &name, "amplitude");
            let w = r.required_float(t, &name, "omega");
            (
                &["kind", "offset", "amplitude", "omega", "lipschitz"],
                match (o, a, w) {
                    (Some(o), Some(a), Some(w)) => Some(GammaSpec::time_sine(o, a, w)),
                    _ => None,
                },
            )
        }
        "mean-functional" => {
            let integrand = r.string(t, &name, "integrand");
            if integrand.is_none() && !t.contains_key("integrand") {
                r.err(format!("missing required key `{name}.integrand`"));
            }
            let scale = r.required_float(t, &name, "scale");
            let rate = r.float_or(t, &name, "rate", 1.0);
            let f = match (integrand, scale) {
                (Some("tanh"), Some(scale)) => Some(Integrand::Tanh { scale, rate }),
                (Some("sine"), Some(scale)) => Some(Integrand::Sine { scale, rate }),
                (Some("atan"), Some(scale)) => Some(Integrand::Atan { scale, rate }),
                (Some(other), _) if !matches!(other, "tanh" | "sine" | "atan") => {
                    r.err(format!("`{name}.integrand`: unknown integrand {other:?} (tanh, sine, atan)"));
                    None
                }
                _ => None,
            };
            (
                &["kind", "integrand", "scale", "rate", "lipschitz"],
                f.map(GammaSpec::mean_functional),
            )
        }
        other => {
            r.err(format!(
                "`{name}.kind`: unknown kind {other:?} (zero, constant, time-sine, mean-functional)"
            ));
            return None;
        }
    };
    r.unknown_keys(t, &name, allowed);
    let spec = spec?;
    match declared {
        None => Some(spec),
        Some(l) => match spec.with_declared_lipschitz(l) {
            Ok(s) => Some(s),
            Err(e) => {
                r.err(e.to_string());
                None
            }
        },
    }
}

fn initial_law(r: &mut Reader<'_>, root: &Table) -> Option<InitialLawSpec> {
    let t = match root.get("initial_law") {
        None => {
            r.err("missing required table `initial_law`".into());
            return None;
        }
        Some(Value::Table(t)) => t,
        Some(other) => {
            r.err(format!("`initial_law`: expected a table, found {}", other.type_str()));
            return None;
        }
    };
    let p = "initial_law";
    let kind = match r.string(t, p, "kind") {
        Some(k) => k,
        None => {
            if !t.contains_key("kind") {
                r.err("missing required key `initial_law.kind`".into());
            }
            return None;
        }
    };
    let moment = r.float_or(t, p, "moment_exponent", 2.0);
    let (allowed, law): (&[&str], Option<InitialLaw>) = match kind {
        "gaussian" => {
            let mean = r.float_or(t, p, "mean", 0.0);
            let sd = r.float_or(t, p, "sd", 1.0);
            (&["kind", "mean", "sd", "moment_exponent"], Some(InitialLaw::Gaussian { mean, sd }))
        }
        "dirac" => {
            let at = r.float_or(t, p, "at", 0.0);
            (&["kind", "at", "moment_exponent"], Some(InitialLaw::Table(CdfTable::heaviside(at))))
        }
        "table" => {
            for key in ["x", "F"] {
                if !t.contains_key(key) {
                    r.err(format!("missing required key `initial_law.{key}`"));
                }
            }
            let xs = r.floats(t, p, "x");
            let fs = r.floats(t, p, "F");
            let table = match (xs, fs) {
                (Some(xs), Some(fs)) => match CdfTable::new(xs, fs) {
                    Ok(t) => Some(InitialLaw::Table(t)),
                    Err(e) => {
                        r.err(e.to_string());
                        None
                    }
                },
                _ => None,
            };
            (&["kind", "x", "F", "moment_exponent"], table)
        }
        other => {
            r.err(format!("`initial_law.kind`: unknown kind {other:?} (gaussian, dirac, table)"));
            return None;
        }
    };
    r.unknown_keys(t, p, allowed);
    match InitialLawSpec::new(law?, moment) {
        Ok(l) => Some(l),
        Err(e) => {
            r.err(e.to_string());
            None
        }
    }
}

/// Parses and validates a config. On failure every problem found is
/// returned, not just the first.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<String>> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| vec![format!("malformed config: {e}")])?;
    let mut errors = Vec::new();
    let mut r = Reader { errors: &mut errors };
    r.unknown_keys(
        &root,
        "",
        &[
            "experiment",
            "seed",
            "horizon",
            "dt",
            "output_dir",
            "coefficients",
            "initial_law",
            "pde",
            "simulate",
            "fixed_point",
            "converge",
            "spde_residual",
        ],
    );

    let experiment = r.string(&root, "", "experiment").and_then(|s| {
        let e = Experiment::from_name(s);
        if e.is_none() {
            r.err(format!(
                "`experiment`: unknown experiment {s:?} (solve-pme, simulate, fixed-point, converge, spde-residual)"
            ));
        }
        e
    });
    let seed = match root.get("seed") {
        None => DEFAULT_SEED,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(other) => {
            r.err(format!("`seed`: expected a nonnegative integer, found {}", describe(other)));
            DEFAULT_SEED
        }
    };
    let horizon = r.float_or(&root, "", "horizon", DEFAULT_HORIZON);
    if !(horizon > 0.0 && horizon.is_finite()) {
        r.err(format!("`horizon` must be positive and finite, got {horizon}"));
    }
    let dt = r.float_or(&root, "", "dt", DEFAULT_DT);
    if !(dt > 0.0 && dt.is_finite() && dt <= horizon) {
        r.err(format!("`dt` must be in (0, horizon], got {dt}"));
    }
    let output_dir = r.string(&root, "", "output_dir").map(PathBuf::from);

    // coefficients
    let empty = Table::new();
    let coeff_table = match root.get("coefficients") {
        None => {
            r.err("missing required table `coefficients`".into());
            &empty
        }
        Some(_) => r.section(&root, "coefficients").unwrap_or(&empty),
    };
    r.unknown_keys(coeff_table, "coefficients", &["b", "sigma", "gamma", "degenerate"]);
    let degenerate = r.boolean(coeff_table, "coefficients", "degenerate").unwrap_or(false);
    let b = if coeff_table.is_empty() { None } else { rank_function(&mut r, coeff_table, "coefficients", "b") };
    let sigma = if coeff_table.is_empty() { None } else { rank_function(&mut r, coeff_table, "coefficients", "sigma") };
    let gamma = gamma_spec(&mut r, coeff_table, "coefficients");
    let coefficients = match (b, sigma, gamma) {
        (Some(b), Some(sigma), Some(gamma)) => match if degenerate {
            CoefficientSpec::degenerate(b, sigma, gamma)
        } else {
            CoefficientSpec::new(b, sigma, gamma)
        } {
            Ok(c) => match lipschitz_probe(c.gamma(), PROBE_TRIALS, seed) {
                Ok(_) => Some(c),
                Err(e) => {
                    r.err(format!("coefficients.gamma is rejected: {e} (gamma must be W1-Lipschitz with the declared constant)"));
                    None
                }
            },
            Err(e) => {
                r.err(e.to_string());
                None
            }
        },
        _ => None,
    };
    let initial = initial_law(&mut r, &root);

    // pde
    let t = r.section(&root, "pde").unwrap_or(&empty);
    r.unknown_keys(t, "pde", &["m", "x_min", "x_max", "dt", "slices"]);
    let pde = PdeSection {
        m: r.count(t, "pde", "m").unwrap_or(2001),
        domain: r.interval(t, "pde", "x_min", "x_max"),
        dt: r.float(t, "pde", "dt"),
        slices: r.count(t, "pde", "slices").unwrap_or(10),
    };
    if pde.m < 3 {
        r.err(format!("`pde.m` must be at least 3, got {}", pde.m));
    }
    if pde.slices == 0 {
        r.err("`pde.slices` must be at least 1".into());
    }

    // simulate
    let t = r.section(&root, "simulate").unwrap_or(&empty);
    r.unknown_keys(t, "simulate", &["n", "keep_positions"]);
    let simulate = SimulateSection {
        n: r.count(t, "simulate", "n").unwrap_or(1000),
        keep_positions: r.boolean(t, "simulate", "keep_positions").unwrap_or(false),
    };
    if simulate.n == 0 {
        r.err("`simulate.n` must be at least 1".into());
    }

    // fixed_point
    let t = r.section(&root, "fixed_point").unwrap_or(&empty);
    r.unknown_keys(t, "fixed_point", &["tol", "max_iter", "uniqueness_probe"]);
    let fixed_point = FixedPointSection {
        tol: r.float_or(t, "fixed_point", "tol", 1e-8),
        max_iter: r.count(t, "fixed_point", "max_iter").unwrap_or(50),
        uniqueness_probe: r.boolean(t, "fixed_point", "uniqueness_probe").unwrap_or(true),
    };
    if let Err(e) = FixedPointConfig::new(fixed_point.tol, fixed_point.max_iter) {
        r.err(format!("fixed_point: {e}"));
    }

    // converge
    let t = r.section(&root, "converge").unwrap_or(&empty);
    r.unknown_keys(t, "converge", &["ns", "replicas"]);
    let ns = match t.get("ns") {
        None => vec![100, 400, 1600, 6400],
        Some(Value::Array(items)) => {
            let parsed: Option<Vec<usize>> = items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i > 0 => Some(*i as usize),
                    _ => None,
                })
                .collect();
            match parsed {
                Some(ns) if !ns.is_empty() && ns.windows(2).all(|w| w[1] > w[0]) => ns,
                _ => {
                    r.err("`converge.ns` must be a strictly increasing array of positive integers".into());
                    Vec::new()
                }
            }
        }
        Some(other) => {
            r.err(format!("`converge.ns`: expected an array, found {}", other.type_str()));
            Vec::new()
        }
    };
    let converge = ConvergeSection {
        ns,
        replicas: r.count(t, "converge", "replicas").unwrap_or(20),
    };
    if converge.replicas == 0 {
        r.err("`converge.replicas` must be at least 1".into());
    }

    // spde_residual
    let t = r.section(&root, "spde_residual").unwrap_or(&empty);
    r.unknown_keys(t, "spde_residual", &["field", "levels", "dt0", "m0", "test_lo", "test_hi"]);
    let field = match r.string(t, "spde_residual", "field") {
        None | Some("solver") => ResidualField::Solver,
        Some("oracle") => ResidualField::Oracle,
        Some(other) => {
            r.err(format!("`spde_residual.field`: unknown field {other:?} (solver, oracle)"));
            ResidualField::Solver
        }
    };
    let spde_residual = ResidualSection {
        field,
        levels: r.count(t, "spde_residual", "levels").unwrap_or(3),
        dt0: r.float_or(t, "spde_residual", "dt0", 1e-2),
        m0: r.count(t, "spde_residual", "m0").unwrap_or(521),
        test_interval: r.interval(t, "spde_residual", "test_lo", "test_hi"),
    };
    if spde_residual.levels < 2 {
        r.err("`spde_residual.levels` must be at least 2".into());
    }
    if !(spde_residual.dt0 > 0.0 && spde_residual.dt0 <= horizon) {
        r.err(format!("`spde_residual.dt0` must be in (0, horizon], got {}", spde_residual.dt0));
    }
    if spde_residual.m0 < 3 {
        r.err("`spde_residual.m0` must be at least 3".into());
    }

    // cross-field checks
    if let (Some(c), Some((lo, hi)), Some(dt_pde)) = (&coefficients, pde.domain, pde.dt) {
        if let Err(e) = PmeGrid::new(lo, hi, pde.m, dt_pde, horizon, c) {
            r.err(format!("pde: {e}"));
        }
    }
    if let (Some(c), Some(l)) = (&coefficients, &initial) {
        if field == ResidualField::Oracle && oracle_parameters(c, l).is_none() {
            r.err("`spde_residual.field = \"oracle\"` needs constant b, sigma and gamma and a gaussian initial law".into());
        }
    }

    if errors.is_empty() {
        Ok(RunConfig {
            experiment,
            seed,
            horizon,
            dt,
            output_dir,
            degenerate,
            coefficients: coefficients.expect("validated"),
            initial_law: initial.expect("validated"),
            pde,
            simulate,
            fixed_point,
            converge,
            spde_residual,
        })
    } else {
        Err(errors)
    }
}

/// `(b, sigma, gamma, mean, sd)` when the limit has the closed form
/// `Phi((x - mean - b t - gamma W) / sqrt(sd^2 + sigma^2 t))`.
pub fn oracle_parameters(c: &CoefficientSpec, law: &InitialLawSpec) -> Option<(f64, f64, f64, f64, f64)> {
    let b = match c.b() {
        RankFunction::Constant(b) => *b,
        _ => return None,
    };
    let s = match c.sigma() {
        RankFunction::Constant(s) => *s,
        _ => return None,
    };
    let g = match c.gamma().kind() {
        GammaKind::Zero => 0.0,
        GammaKind::Constant(g) => *g,
        _ => return None,
    };
    match law.law() {
        InitialLaw::Gaussian { mean, sd } => Some((b, s, g, *mean, *sd)),
        _ => None,
    }
}

fn num(x: f64) -> String {
    // Debug formatting is the shortest text that parses back to the same bits
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn num_list(xs: &[f64]) -> String {
    format!("[{}]", xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", "))
}

fn rank_function_text(f: &RankFunction) -> String {
    match f {
        RankFunction::Constant(c) => format!("{{ kind = \"constant\", value = {} }}", num(*c)),
        RankFunction::Affine { intercept, slope } => format!(
            "{{ kind = \"affine\", intercept = {}, slope = {} }}",
            num(*intercept),
            num(*slope)
        ),
        RankFunction::Table(values) => format!("{{ kind = \"table\", values = {} }}", num_list(values)),
        RankFunction::Registry(RegistryEntry::SineBump { base, amplitude }) => format!(
            "{{ kind = \"sine-bump\", base = {}, amplitude = {} }}",
            num(*base),
            num(*amplitude)
        ),
        RankFunction::Registry(RegistryEntry::Exponential { scale, rate }) => format!(
            "{{ kind = \"exponential\", scale = {}, rate = {} }}",
            num(*scale),
            num(*rate)
        ),
    }
}

fn gamma_text(g: &GammaSpec) -> String {
    let l = num(g.lipschitz());
    match g.kind() {
        GammaKind::Zero => format!("{{ kind = \"zero\", lipschitz = {l} }}"),
        GammaKind::Constant(c) => format!("{{ kind = \"constant\", value = {}, lipschitz = {l} }}", num(*c)),
        GammaKind::TimeSine { offset, amplitude, omega } => format!(
            "{{ kind = \"time-sine\", offset = {}, amplitude = {}, omega = {}, lipschitz = {l} }}",
            num(*offset),
            num(*amplitude),
            num(*omega)
        ),
        GammaKind::MeanFunctional(f) => {
            let (scale, rate) = f.params();
            format!(
                "{{ kind = \"mean-functional\", integrand = \"{}\", scale = {}, rate = {}, lipschitz = {l} }}",
                f.name(),
                num(scale),
                num(rate)
            )
        }
        GammaKind::Custom(_) => unreachable!("custom gamma cannot come from a config file"),
    }
}

impl RunConfig {
    /// The canonical text: every key present, defaults spelled out, a fixed
    /// key order and shortest round-trip float formatting. Parsing the
    /// canonical text gives back the same config.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        if let Some(e) = self.experiment {
            writeln!(w, "experiment = \"{}\"", e.name()).unwrap();
        }
        writeln!(w, "seed = {}", self.seed).unwrap();
        writeln!(w, "horizon = {}", num(self.horizon)).unwrap();
        writeln!(w, "dt = {}", num(self.dt)).unwrap();
        if let Some(dir) = &self.output_dir {
            writeln!(w, "output_dir = {:?}", dir.to_string_lossy()).unwrap();
        }
        writeln!(w, "\n[coefficients]").unwrap();
        writeln!(w, "b = {}", rank_function_text(self.coefficients.b())).unwrap();
        writeln!(w, "sigma = {}", rank_function_text(self.coefficients.sigma())).unwrap();
        writeln!(w, "gamma = {}", gamma_text(self.coefficients.gamma())).unwrap();
        writeln!(w, "degenerate = {}", self.degenerate).unwrap();

        writeln!(w, "\n[initial_law]").unwrap();
        match self.initial_law.law() {
            InitialLaw::Gaussian { mean, sd } => {
                writeln!(w, "kind = \"gaussian\"\nmean = {}\nsd = {}", num(*mean), num(*sd)).unwrap();
            }
            InitialLaw::Table(t) if t.xs().len() == 2 && t.xs()[0] == t.xs()[1] => {
                writeln!(w, "kind = \"dirac\"\nat = {}", num(t.xs()[0])).unwrap();
            }
            InitialLaw::Table(t) => {
                writeln!(w, "kind = \"table\"\nx = {}\nF = {}", num_list(t.xs()), num_list(t.cdf_values())).unwrap();
            }
        }
        writeln!(w, "moment_exponent = {}", num(self.initial_law.moment_exponent())).unwrap();

        writeln!(w, "\n[pde]\nm = {}", self.pde.m).unwrap();
        if let Some((lo, hi)) = self.pde.domain {
            writeln!(w, "x_min = {}\nx_max = {}", num(lo), num(hi)).unwrap();
        }
        if let Some(dt) = self.pde.dt {
            writeln!(w, "dt = {}", num(dt)).unwrap();
        }
        writeln!(w, "slices = {}", self.pde.slices).unwrap();

        writeln!(
            w,
            "\n[simulate]\nn = {}\nkeep_positions = {}",
            self.simulate.n, self.simulate.keep_positions
        )
        .unwrap();
        writeln!(
            w,
            "\n[fixed_point]\ntol = {}\nmax_iter = {}\nuniqueness_probe = {}",
            num(self.fixed_point.tol),
            self.fixed_point.max_iter,
            self.fixed_point.uniqueness_probe
        )
        .unwrap();
        let ns: Vec<String> = self.converge.ns.iter().map(|n| n.to_string()).collect();
        writeln!(
            w,
            "\n[converge]\nns = [{}]\nreplicas = {}",
            ns.join(", "),
            self.converge.replicas
        )
        .unwrap();
        let field = match self.spde_residual.field {
            ResidualField::Solver => "solver",
            ResidualField::Oracle => "oracle",
        };
        writeln!(
            w,
            "\n[spde_residual]\nfield = \"{field}\"\nlevels = {}\ndt0 = {}\nm0 = {}",
            self.spde_residual.levels,
            num(self.spde_residual.dt0),
            self.spde_residual.m0
        )
        .unwrap();
        if let Some((lo, hi)) = self.spde_residual.test_interval {
            writeln!(w, "test_lo = {}\ntest_hi = {}", num(lo), num(hi)).unwrap();
        }
        s
    }
}
