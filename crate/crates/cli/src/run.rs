//! Experiment dispatch and the artifact directory.
//!
//! Every run stages its files in a temporary directory next to the target and
//! renames it into place at the end, so a reader never sees a half-written
//! result. `manifest.json` is written on success and on failure.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use ranknoise::convergence::{moment_check, run_convergence, ConvergenceConfig};
use ranknoise::io::{fmt_f64, write_rows};
use ranknoise::limit_solver::{decay_ratio, shift_identity_error, spde_weak_residual, sup_w1};
use ranknoise::particle_sim::{simulate, time_steps};
use ranknoise::pme_solver::{pme_weak_residual, solve_pme, uniform_times, PmeGrid, PmeSolution};
use ranknoise::weak_form::{default_test_family, QvWeighting, TestFunction};
use ranknoise::{
    BrownianPath, Error, FixedPointConfig, InitialCandidate, LimitPath, LimitProblem, SeedLineage, SimConfig,
};

use crate::config::{oracle_parameters, parse_config, Experiment, ResidualField, RunConfig};

/// Overrides the output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "RANKNOISE_OUT_DIR";

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const BLOWUP: i32 = 3;
    pub const NO_CONVERGENCE: i32 = 4;
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub quiet: bool,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
    pub details: Vec<String>,
    pub decay_log: Option<Vec<f64>>,
}

impl Failure {
    fn validation(message: impl Into<String>, details: Vec<String>) -> Self {
        Self {
            code: exit::VALIDATION,
            message: message.into(),
            details,
            decay_log: None,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Blowup { .. } | Error::TruncationOverflow { .. } => exit::BLOWUP,
        Error::NoConvergence { .. } => exit::NO_CONVERGENCE,
        Error::Domain { .. }
        | Error::InvalidSpec(_)
        | Error::Cfl { .. }
        | Error::GammaBound { .. }
        | Error::LipschitzExceeded { .. }
        | Error::SupportTouchesBoundary { .. } => exit::VALIDATION,
        _ => exit::FAILURE,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let decay_log = match &e {
            Error::NoConvergence { log } => Some(log.clone()),
            _ => None,
        };
        Self {
            code: exit_code(&e),
            message: e.to_string(),
            details: Vec::new(),
            decay_log,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

/// What an experiment hands back besides its files.
struct Outcome {
    lineage: Value,
    summary: Value,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct FileEntry {
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    experiment: &'static str,
    status: &'static str,
    exit_code: i32,
    error: Option<String>,
    error_details: Vec<String>,
    decay_log: Option<Vec<f64>>,
    config_path: String,
    config_sha256: Option<String>,
    seed: Option<u64>,
    seed_lineage: Value,
    versions: BTreeMap<&'static str, &'static str>,
    workers: usize,
    started_unix_s: u64,
    wall_time_s: f64,
    warnings: Vec<String>,
    summary: Value,
    files: BTreeMap<String, FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn create(dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn finish(mut w: BufWriter<File>) -> std::io::Result<()> {
    w.flush()
}

/// `--out`, then the environment, then the config, then `runs/<experiment>`.
pub fn resolve_out_dir(opts: &Options, cfg: Option<&RunConfig>, experiment: Experiment) -> PathBuf {
    if let Some(p) = &opts.out {
        return p.clone();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    if let Some(p) = cfg.and_then(|c| c.output_dir.clone()) {
        return p;
    }
    Path::new("runs").join(experiment.name())
}

fn parent_of(target: &Path) -> PathBuf {
    match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// An existing target is only replaced if an earlier run left a manifest in
/// it.
fn check_replaceable(target: &Path) -> Result<(), String> {
    if target.exists() && !target.join("manifest.json").is_file() {
        return Err(format!(
            "refusing to replace {}: it exists and holds no manifest.json",
            target.display()
        ));
    }
    Ok(())
}

fn install(staging: tempfile::TempDir, target: &Path) -> std::io::Result<()> {
    let parent = parent_of(target);
    let old = if target.exists() {
        let holder = tempfile::Builder::new().prefix(".ranknoise-old-").tempdir_in(&parent)?;
        fs::rename(target, holder.path().join("previous"))?;
        Some(holder)
    } else {
        None
    };
    let staged = staging.keep();
    if let Err(e) = fs::rename(&staged, target) {
        if let Some(holder) = &old {
            let _ = fs::rename(holder.path().join("previous"), target);
        }
        let _ = fs::remove_dir_all(&staged);
        return Err(e);
    }
    drop(old);
    Ok(())
}

fn clear_except(dir: &Path, keep: &[&str]) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if keep.iter().any(|k| entry.file_name() == *k) {
            continue;
        }
        if entry.file_type()?.is_dir() {
            fs::remove_dir_all(entry.path())?;
        } else {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

fn hash_files(dir: &Path) -> std::io::Result<BTreeMap<String, FileEntry>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            FileEntry {
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            },
        );
    }
    Ok(files)
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Failure::validation("--workers must be at least 1", Vec::new())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Failure {
                    code: exit::FAILURE,
                    message: format!("cannot start {k} workers: {e}"),
                    details: Vec::new(),
                    decay_log: None,
                })?;
            Ok(pool.install(f))
        }
    }
}

/// Reads the config, runs `experiment`, installs the artifacts and returns
/// the exit code.
pub fn execute(experiment: Experiment, opts: &Options) -> i32 {
    let clock = Instant::now();
    let started_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let parsed: Result<RunConfig, Failure> = fs::read_to_string(&opts.config)
        .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", opts.config.display()), Vec::new()))
        .and_then(|text| {
            parse_config(&text).map_err(|errs| Failure::validation(format!("{} config error(s)", errs.len()), errs))
        })
        .and_then(|mut cfg| {
            if let Some(seed) = opts.seed {
                cfg.seed = seed;
            }
            match cfg.experiment {
                Some(e) if e != experiment => Err(Failure::validation(
                    format!("config is for `{}` but `{}` was requested", e.name(), experiment.name()),
                    Vec::new(),
                )),
                _ => Ok(cfg),
            }
        });

    let target = resolve_out_dir(opts, parsed.as_ref().ok(), experiment);
    if let Err(msg) = check_replaceable(&target) {
        eprintln!("error: {msg}");
        return exit::VALIDATION;
    }
    let staging = match fs::create_dir_all(parent_of(&target))
        .and_then(|_| tempfile::Builder::new().prefix(".ranknoise-run-").tempdir_in(parent_of(&target)))
    {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot stage output next to {}: {e}", target.display());
            return exit::FAILURE;
        }
    };

    let mut config_sha256 = None;
    let mut seed = None;
    let result = parsed.and_then(|cfg| {
        let canonical = cfg.to_canonical();
        config_sha256 = Some(sha256_hex(canonical.as_bytes()));
        seed = Some(cfg.seed);
        fs::write(staging.path().join("config.toml"), &canonical)?;
        let dir = staging.path();
        with_workers(opts.workers, || dispatch(experiment, &cfg, dir))?
    });

    let (code, outcome, failure) = match result {
        Ok(o) => (exit::OK, Some(o), None),
        Err(f) => {
            if let Err(e) = clear_except(staging.path(), &["config.toml"]) {
                eprintln!("warning: could not discard partial output: {e}");
            }
            (f.code, None, Some(f))
        }
    };
    let files = match hash_files(staging.path()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot hash outputs: {e}");
            return exit::FAILURE;
        }
    };
    let mut versions = BTreeMap::new();
    versions.insert("ranknoise", ranknoise::VERSION);
    versions.insert("ranknoise-cli", env!("CARGO_PKG_VERSION"));
    let manifest = Manifest {
        tool: "ranknoise",
        experiment: experiment.name(),
        status: if code == exit::OK { "ok" } else { "failed" },
        exit_code: code,
        error: failure.as_ref().map(|f| f.message.clone()),
        error_details: failure.as_ref().map(|f| f.details.clone()).unwrap_or_default(),
        decay_log: failure.as_ref().and_then(|f| f.decay_log.clone()),
        config_path: opts.config.display().to_string(),
        config_sha256,
        seed,
        seed_lineage: outcome.as_ref().map(|o| o.lineage.clone()).unwrap_or(Value::Null),
        versions,
        workers: opts.workers.unwrap_or_else(rayon::current_num_threads),
        started_unix_s,
        wall_time_s: clock.elapsed().as_secs_f64(),
        warnings: outcome.as_ref().map(|o| o.warnings.clone()).unwrap_or_default(),
        summary: outcome.as_ref().map(|o| o.summary.clone()).unwrap_or(Value::Null),
        files,
    };
    let written = serde_json::to_vec_pretty(&manifest)
        .map_err(std::io::Error::other)
        .and_then(|mut bytes| {
            bytes.push(b'\n');
            fs::write(staging.path().join("manifest.json"), bytes)
        });
    if let Err(e) = written.and_then(|_| install(staging, &target)) {
        eprintln!("error: cannot write {}: {e}", target.display());
        return exit::FAILURE;
    }

    if let Some(f) = &failure {
        eprintln!("error: {}", f.message);
        for d in &f.details {
            eprintln!("  {d}");
        }
    } else if !opts.quiet {
        for w in &manifest.warnings {
            eprintln!("warning: {w}");
        }
        eprintln!(
            "{}: wrote {} files to {} in {:.2} s",
            experiment.name(),
            manifest.files.len() + 1,
            target.display(),
            manifest.wall_time_s
        );
    }
    code
}

fn dispatch(experiment: Experiment, cfg: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    match experiment {
        Experiment::SolvePme => run_solve_pme(cfg, dir),
        Experiment::Simulate => run_simulate(cfg, dir),
        Experiment::FixedPoint => run_fixed_point(cfg, dir),
        Experiment::Converge => run_converge(cfg, dir),
        Experiment::SpdeResidual => run_spde_residual(cfg, dir),
    }
}

/// The PDE grid for `m` nodes: the configured domain or one sized from the
/// law and coefficients.
fn pde_grid(cfg: &RunConfig, m: usize) -> ranknoise::Result<PmeGrid> {
    let c = &cfg.coefficients;
    match (cfg.pde.domain, cfg.pde.dt) {
        (Some((lo, hi)), Some(dt)) => PmeGrid::new(lo, hi, m, dt, cfg.horizon, c),
        (Some((lo, hi)), None) => PmeGrid::with_cfl(lo, hi, m, cfg.horizon, c),
        (None, _) => {
            let g = PmeGrid::for_law(&cfg.initial_law, c, m, cfg.horizon)?;
            match cfg.pde.dt {
                Some(dt) => PmeGrid::new(g.x_min, g.x_max, m, dt, cfg.horizon, c),
                None => Ok(g),
            }
        }
    }
}

/// About `count + 1` evenly spread indices into `0..len`, first and last
/// included.
fn slice_indices(len: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=count)
        .map(|k| ((k as f64 * (len - 1) as f64) / count as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Five bumps over the configured interval, or over the bulk of the law
/// widened by the drift travel.
fn test_family(cfg: &RunConfig, x_min: f64, x_max: f64) -> Vec<TestFunction> {
    let (lo, hi) = cfg.spde_residual.test_interval.unwrap_or_else(|| {
        let law = &cfg.initial_law;
        (
            law.quantile(1e-3),
            law.quantile(1.0 - 1e-3) + cfg.coefficients.b_max() * cfg.horizon,
        )
    });
    default_test_family(lo.max(x_min), hi.min(x_max))
}

fn residual_or_note(r: ranknoise::Result<f64>) -> Value {
    match r {
        Ok(v) => json!(v),
        Err(e) => json!({ "unavailable": e.to_string() }),
    }
}

fn run_solve_pme(cfg: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.coefficients;
    let grid = pde_grid(cfg, cfg.pde.m)?;
    // solve on the simulation time grid so the weak residual sees fine time
    // sums, and write every slice in the output stride
    let (_, dt, warning) = time_steps(cfg.horizon, cfg.dt);
    let times = uniform_times(cfg.horizon, dt);
    let sol = solve_pme(&grid.initial(&cfg.initial_law)?, c, &grid, &times)?;
    let which = slice_indices(times.len(), cfg.pde.slices);
    let mut w = create(dir, "pme_slices.csv")?;
    sol.write_slices_csv(&mut w, &which)?;
    finish(w)?;

    let family = test_family(cfg, grid.x_min, grid.x_max);
    let oracle = oracle_parameters(c, &cfg.initial_law).map(|(b, s, _, mean, sd)| oracle_error(&sol, b, s, mean, sd));
    let summary = json!({
        "pde": sol.summary(c),
        "density_bound": sol.c_star(),
        "weak_residual": residual_or_note(pme_weak_residual(&sol, c, &family)),
        "oracle_sup_error": oracle,
    });
    fs::write(dir.join("pme_summary.json"), pretty(&summary))?;
    Ok(Outcome {
        lineage: json!({ "randomness": "none" }),
        summary,
        warnings: warning.into_iter().collect(),
    })
}

/// `max_j sup_x |R(t_j, x) - Phi((x - mean - b t) / sqrt(sd^2 + sigma^2 t))|`.
pub fn oracle_error(sol: &PmeSolution, b: f64, sigma: f64, mean: f64, sd: f64) -> f64 {
    let nrm = Normal::new(0.0, 1.0).expect("standard normal");
    let mut worst = 0.0f64;
    for (&t, slice) in sol.times().iter().zip(sol.slices()) {
        let scale = (sd * sd + sigma * sigma * t).sqrt();
        for (x, &r) in slice.nodes().zip(slice.values()) {
            worst = worst.max((r - nrm.cdf((x - mean - b * t) / scale)).abs());
        }
    }
    worst
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("json values serialise");
    bytes.push(b'\n');
    bytes
}

fn run_simulate(cfg: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let sim = SimConfig::new(
        cfg.simulate.n,
        cfg.horizon,
        cfg.dt,
        cfg.seed,
        cfg.coefficients.clone(),
        cfg.initial_law.clone(),
    )?
    .keep_positions(cfg.simulate.keep_positions);
    let traj = simulate(&sim)?;
    let mut w = create(dir, "trajectory_summary.csv")?;
    traj.write_summary_csv(&mut w)?;
    finish(w)?;
    let mut w = create(dir, "gamma.csv")?;
    write_rows(
        &mut w,
        &["t", "Gamma", "gamma"],
        traj.times
            .iter()
            .zip(&traj.gamma_integral)
            .zip(&traj.gamma_values)
            .map(|((&t, &g), &v)| vec![t, g, v]),
    )?;
    finish(w)?;
    if cfg.simulate.keep_positions {
        let mut bin = create(dir, "positions.bin")?;
        let mut side = create(dir, "positions.json")?;
        traj.write_positions(&mut bin, &mut side)?;
        finish(bin)?;
        finish(side)?;
    }
    let p = cfg.initial_law.moment_exponent();
    let last = traj.states.last().expect("at least one time");
    let summary = json!({
        "n": sim.n,
        "steps": sim.steps,
        "dt": sim.dt,
        "terminal_mean": last.mean(),
        "terminal_gamma_integral": traj.gamma_integral.last(),
        "moment_exponent": p,
        "sup_moment": moment_check(&traj, p)?,
    });
    fs::write(dir.join("simulate_summary.json"), pretty(&summary))?;
    Ok(Outcome {
        lineage: serde_json::to_value(&traj.lineage).expect("lineage serialises"),
        summary,
        warnings: sim.warnings.clone(),
    })
}

/// `R` on the simulation time grid and the common path of `seed`.
fn limit_problem(cfg: &RunConfig, seed: u64) -> ranknoise::Result<(LimitProblem, Vec<String>)> {
    let (steps, dt, warning) = time_steps(cfg.horizon, cfg.dt);
    let c = &cfg.coefficients;
    let grid = pde_grid(cfg, cfg.pde.m)?;
    let base = solve_pme(&grid.initial(&cfg.initial_law)?, c, &grid, &uniform_times(cfg.horizon, dt))?;
    let problem = LimitProblem::new(Arc::new(base), c.clone(), BrownianPath::common(seed, dt, steps))?;
    Ok((problem, warning.into_iter().collect()))
}

fn fixed_point_config(cfg: &RunConfig) -> ranknoise::Result<FixedPointConfig> {
    FixedPointConfig::new(cfg.fixed_point.tol, cfg.fixed_point.max_iter)
}

fn run_fixed_point(cfg: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let (problem, warnings) = limit_problem(cfg, cfg.seed)?;
    let fp = fixed_point_config(cfg)?;
    let path = problem.fixed_point_solve(&InitialCandidate::PmeLaw, &fp)?;

    let mut w = create(dir, "fixed_point_log.csv")?;
    path.write_log_csv(&mut w)?;
    finish(w)?;
    let mut w = create(dir, "gamma.csv")?;
    path.write_gamma_csv(&mut w)?;
    finish(w)?;
    let which = slice_indices(path.times.len(), cfg.pde.slices);
    let mut w = create(dir, "limit_slices.csv")?;
    path.write_slices_csv(&mut w, &which)?;
    finish(w)?;

    let levels: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
    let uniqueness = if cfg.fixed_point.uniqueness_probe {
        let alt: Vec<f64> = problem.times().iter().map(|t| 0.5 * (3.0 * t).sin()).collect();
        match problem.fixed_point_solve(&InitialCandidate::Path(alt), &fp) {
            Ok(other) => json!({ "sup_w1": sup_w1(&path, &other)?, "iterations": other.iterations() }),
            Err(e) => json!({ "unavailable": e.to_string() }),
        }
    } else {
        Value::Null
    };
    let summary = json!({
        "iterations": path.iterations(),
        "terminal_sup_w1": path.log.last(),
        "decay_ratio": decay_ratio(&path.log),
        "monotone_decay": path.log.windows(2).all(|w| w[1] <= w[0]),
        "shift_identity_error": shift_identity_error(&path, &problem.base, &levels)?,
        "dx": problem.base.grid.dx(),
        "density_bound": problem.base.c_star(),
        "uniqueness_probe": uniqueness,
    });
    fs::write(dir.join("fixed_point_summary.json"), pretty(&summary))?;
    Ok(Outcome {
        lineage: json!({
            "seed": cfg.seed,
            "common_stream": SeedLineage::new(cfg.seed, 0).common_stream,
        }),
        summary,
        warnings,
    })
}

fn run_converge(cfg: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let cc = ConvergenceConfig {
        ns: cfg.converge.ns.clone(),
        replicas: cfg.converge.replicas,
        base_seed: cfg.seed,
        horizon: cfg.horizon,
        dt: cfg.dt,
        m: cfg.pde.m,
        coefficients: cfg.coefficients.clone(),
        initial: cfg.initial_law.clone(),
        fixed_point: fixed_point_config(cfg)?,
    };
    let report = run_convergence(&cc)?;
    let mut w = create(dir, "report.csv")?;
    report.write_report_csv(&mut w)?;
    finish(w)?;
    let mut w = create(dir, "report_timing.csv")?;
    report.write_timing_csv(&mut w)?;
    finish(w)?;
    let summary = json!({
        "convergence": report.summary,
        "pde_c_star": report.pde_c_star,
    });
    fs::write(dir.join("convergence_summary.json"), pretty(&summary))?;
    let n_max = cfg.converge.ns.last().copied().unwrap_or(0);
    let replicas: Vec<Value> = (0..cc.replicas)
        .map(|r| serde_json::to_value(SeedLineage::new(cc.seed(r), n_max)).expect("lineage serialises"))
        .collect();
    let (_, _, warning) = time_steps(cfg.horizon, cfg.dt);
    Ok(Outcome {
        lineage: json!({
            "base_seed": cfg.seed,
            "replica_seed": "base_seed + replica",
            "shared_across_n": "particle i uses the same streams for every n > i",
            "replicas": replicas,
        }),
        summary,
        warnings: warning.into_iter().collect(),
    })
}

/// Residual of the stochastic equation under simultaneous halving of `dx`
/// and `dt`, with the common path refined by Brownian bridges.
fn run_spde_residual(cfg: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.coefficients;
    let rs = &cfg.spde_residual;
    let (x_min, x_max) = match cfg.pde.domain {
        Some(d) => d,
        None => {
            let g = PmeGrid::for_law(&cfg.initial_law, c, rs.m0, cfg.horizon)?;
            (g.x_min, g.x_max)
        }
    };
    let family = test_family(cfg, x_min, x_max);
    let fp = fixed_point_config(cfg)?;
    let (steps0, dt0, warning) = time_steps(cfg.horizon, rs.dt0);
    let mut noise = BrownianPath::common(cfg.seed, dt0, steps0);
    let mut rows = Vec::new();
    for level in 0..rs.levels {
        if level > 0 {
            noise = noise.refine(cfg.seed, level as u64);
        }
        let m = (rs.m0 - 1) * (1usize << level) + 1;
        let dt = noise.dt();
        let times = uniform_times(cfg.horizon, dt);
        let field: LimitPath = match rs.field {
            ResidualField::Oracle => {
                let (b, s, g, mean, sd) = oracle_parameters(c, &cfg.initial_law).expect("checked at parse time");
                let nrm = Normal::new(0.0, 1.0).expect("standard normal");
                let w = noise.values();
                let grid = PmeGrid {
                    x_min,
                    x_max,
                    m,
                    dt_pde: dt,
                    horizon: cfg.horizon,
                };
                let gamma_path = w.iter().map(|v| g * v).collect();
                LimitPath::from_fn(&grid, times.clone(), gamma_path, vec![g; times.len()], |t, x| {
                    let j = (t / dt).round() as usize;
                    nrm.cdf((x - mean - b * t - g * w[j]) / (sd * sd + s * s * t).sqrt())
                })?
            }
            ResidualField::Solver => {
                let grid = PmeGrid::with_cfl(x_min, x_max, m, cfg.horizon, c)?;
                let base = solve_pme(&grid.initial(&cfg.initial_law)?, c, &grid, &times)?;
                LimitProblem::new(Arc::new(base), c.clone(), noise.clone())?
                    .fixed_point_solve(&InitialCandidate::PmeLaw, &fp)?
            }
        };
        let calendar = spde_weak_residual(&field, c, &noise, &family, QvWeighting::Calendar)?;
        let realized = spde_weak_residual(&field, c, &noise, &family, QvWeighting::Realized)?;
        rows.push((level, m, (x_max - x_min) / (m - 1) as f64, dt, calendar, realized));
    }

    let mut w = create(dir, "spde_residual.csv")?;
    writeln!(w, "level,m,dx,dt,residual,residual_realized_qv")?;
    for &(level, m, dx, dt, a, b) in &rows {
        writeln!(w, "{level},{m},{},{},{},{}", fmt_f64(dx), fmt_f64(dt), fmt_f64(a), fmt_f64(b))?;
    }
    finish(w)?;
    let ratios = |pick: fn(&(usize, usize, f64, f64, f64, f64)) -> f64| -> Vec<f64> {
        rows.windows(2).map(|p| pick(&p[0]) / pick(&p[1])).collect()
    };
    let summary = json!({
        "field": match rs.field { ResidualField::Solver => "solver", ResidualField::Oracle => "oracle" },
        "domain": [x_min, x_max],
        "test_functions": family.iter().map(|f| json!({ "center": f.center, "half_width": f.half_width })).collect::<Vec<_>>(),
        "residuals": rows.iter().map(|r| r.4).collect::<Vec<_>>(),
        "ratios": ratios(|r| r.4),
        "residuals_realized_qv": rows.iter().map(|r| r.5).collect::<Vec<_>>(),
        "ratios_realized_qv": ratios(|r| r.5),
    });
    fs::write(dir.join("spde_residual_summary.json"), pretty(&summary))?;
    Ok(Outcome {
        lineage: json!({
            "seed": cfg.seed,
            "common_stream": SeedLineage::new(cfg.seed, 0).common_stream,
            "refinement": "level k halves every step with Brownian bridge stream (seed, bridge, k)",
        }),
        summary,
        warnings: warning.into_iter().collect(),
    })
}
