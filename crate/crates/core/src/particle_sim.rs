//! Euler-Maruyama for the rank-based particle system with common noise
//!
//! ```text
//! dX_i = b(F(X_i)) dt + sigma(F(X_i)) dB_i + gamma(t, rho_n) dW,
//! ```
//!
//! where `F` is the empirical CDF of `rho_n = (1/n) sum delta_{X_i}`.
//!
//! The simulator integrates the co-moving coordinates `Y_i = X_i - Gamma` with
//! `Gamma(t_j) = sum_{k<j} gamma(t_k, rho_n(t_k)) dW_k`. Ranks of `X` and `Y`
//! coincide, so `Y` follows the same scheme with `gamma = 0`, and
//! `X = Y + Gamma` is materialised on demand. In exact arithmetic this is the
//! plain Euler-Maruyama update of `X`; in floating point it makes the
//! decomposition identities exact.

use std::io::Write;

use serde::Serialize;

use crate::coefficients::{CoefficientSpec, InitialLawSpec};
use crate::error::{Error, Result};
use crate::io::write_rows;
use crate::measures::EmpiricalMeasure;
use crate::noise::{open_uniform, stream, Domain, NoiseBundle, SeedLineage};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub coefficients: CoefficientSpec,
    pub initial: InitialLawSpec,
    /// Keep every particle's co-moving position at every step.
    pub keep_positions: bool,
    /// Adjustments made at construction, such as rounding `T / dt`.
    pub warnings: Vec<String>,
}

impl SimConfig {
    pub fn new(
        n: usize,
        horizon: f64,
        dt: f64,
        seed: u64,
        coefficients: CoefficientSpec,
        initial: InitialLawSpec,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain {
                what: "n",
                value: 0.0,
                domain: ">= 1",
            });
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain {
                what: "T",
                value: horizon,
                domain: "(0, inf)",
            });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain {
                what: "dt",
                value: dt,
                domain: "(0, inf)",
            });
        }
        let (steps, dt_used, warning) = time_steps(horizon, dt);
        Ok(Self {
            n,
            horizon,
            dt: dt_used,
            steps,
            seed,
            coefficients,
            initial,
            keep_positions: false,
            warnings: warning.into_iter().collect(),
        })
    }

    pub fn keep_positions(mut self, keep: bool) -> Self {
        self.keep_positions = keep;
        self
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| j as f64 * self.dt).collect()
    }

    pub fn noise(&self) -> NoiseBundle {
        NoiseBundle::new(self.seed, self.n, self.dt, self.steps)
    }
}

/// `(steps, dt, warning)` with `steps = round(T / dt)` and `dt = T / steps`
/// when the ratio was not already an integer.
pub fn time_steps(horizon: f64, dt: f64) -> (usize, f64, Option<String>) {
    let ratio = horizon / dt;
    let steps = (ratio.round() as usize).max(1);
    if (ratio - steps as f64).abs() <= 1e-9 * ratio.max(1.0) {
        (steps, dt, None)
    } else {
        let adjusted = horizon / steps as f64;
        (
            steps,
            adjusted,
            Some(format!(
                "T / dt = {ratio} is not an integer; using {steps} steps of dt = {adjusted}"
            )),
        )
    }
}

/// Initial positions in particle order, `X_i(0) = Q_lambda(U_i)` with `U_i`
/// from particle `i`'s own stream.
pub fn initial_positions(config: &SimConfig) -> Vec<f64> {
    (0..config.n as u64)
        .map(|i| {
            let mut rng = stream(config.seed, Domain::Initial, i);
            config.initial.quantile(open_uniform(&mut rng))
        })
        .collect()
}

/// `n` i.i.d. draws from the initial law, sorted.
pub fn sample_initial(config: &SimConfig) -> EmpiricalMeasure {
    EmpiricalMeasure::new(initial_positions(config)).expect("quantiles of a valid law are finite")
}

/// `<=`-counts of a sorted sample: entry `k` is the number of atoms that are
/// `<= sorted[k]`, so tied atoms share a value.
pub fn rank_counts(sorted: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; sorted.len()];
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        counts[start..end].fill(end);
        start = end;
    }
    counts
}

/// One Euler-Maruyama step of the particle system from sorted positions.
///
/// `db[k]` is the idiosyncratic increment of the particle at sorted position
/// `k`. Coefficients are evaluated at the pre-step ranks; the result is sorted.
#[allow(clippy::too_many_arguments)]
pub fn em_step(
    positions: &EmpiricalMeasure,
    t: f64,
    dw: f64,
    db: &[f64],
    coefficients: &CoefficientSpec,
    dt: f64,
    step: usize,
) -> Result<EmpiricalMeasure> {
    let next = em_update(positions, t, dw, db, coefficients, dt, step)?;
    EmpiricalMeasure::new(next)
}

/// [`em_step`] without the final sort: entry `k` is the new position of the
/// particle that was at sorted position `k`.
#[allow(clippy::too_many_arguments)]
pub fn em_update(
    positions: &EmpiricalMeasure,
    t: f64,
    dw: f64,
    db: &[f64],
    coefficients: &CoefficientSpec,
    dt: f64,
    step: usize,
) -> Result<Vec<f64>> {
    let n = positions.len();
    if db.len() != n {
        return Err(Error::InvalidMeasure(format!(
            "{} idiosyncratic increments for {n} particles",
            db.len()
        )));
    }
    let gamma = coefficients.gamma().eval(t, positions)?;
    let counts = rank_counts(positions.points());
    let next = positions
        .points()
        .iter()
        .zip(&counts)
        .zip(db)
        .map(|((&x, &c), &d)| {
            let r = c as f64 / n as f64;
            x + coefficients.b().eval(r) * dt + coefficients.sigma().eval(r) * d + gamma * dw
        })
        .collect::<Vec<_>>();
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::Blowup { step });
    }
    Ok(next)
}

/// State handed to a [`simulate_with`] observer at every time `t_j`,
/// `j = 0..=steps`.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    /// `rho_n(t_j)`, the sorted positions `X`.
    pub positions: &'a EmpiricalMeasure,
    /// Sorted co-moving positions `Y`, aligned with `positions`.
    pub comoving_sorted: &'a [f64],
    /// Co-moving positions in particle order.
    pub comoving: &'a [f64],
    pub gamma_integral: f64,
    /// `gamma(t_j, rho_n(t_j))`.
    pub gamma: f64,
}

/// Runs the scheme, calling `observe` at every grid time.
pub fn simulate_with(
    config: &SimConfig,
    mut observe: impl FnMut(&StepView<'_>) -> Result<()>,
) -> Result<()> {
    let n = config.n;
    let dt = config.dt;
    let noise = config.noise();
    let dw = noise.common.increments();
    let mut idio = noise.idiosyncratic();
    let coeffs = &config.coefficients;

    // b and sigma are only ever evaluated at k / n
    let drift: Vec<f64> = (0..=n)
        .map(|k| coeffs.b().eval(k as f64 / n as f64) * dt)
        .collect();
    let vol: Vec<f64> = (0..=n)
        .map(|k| coeffs.sigma().eval(k as f64 / n as f64))
        .collect();

    let mut y = initial_positions(config);
    let mut order: Vec<usize> = (0..n).collect();
    let mut sorted_y = vec![0.0; n];
    let mut db = vec![0.0; n];
    let mut gamma_integral = 0.0;

    for j in 0..=config.steps {
        let t = j as f64 * dt;
        // stable sort from the previous order: near-linear on nearly sorted
        // data and deterministic among ties
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        for (s, &i) in sorted_y.iter_mut().zip(&order) {
            *s = y[i];
        }
        let x = EmpiricalMeasure::from_sorted(sorted_y.iter().map(|v| v + gamma_integral).collect());
        let gamma = coeffs.gamma().eval(t, &x)?;
        observe(&StepView {
            step: j,
            t,
            positions: &x,
            comoving_sorted: &sorted_y,
            comoving: &y,
            gamma_integral,
            gamma,
        })?;
        if j == config.steps {
            break;
        }

        let counts = rank_counts(&sorted_y);
        idio.fill_step(&mut db);
        for (&i, &c) in order.iter().zip(&counts) {
            let next = y[i] + drift[c] + vol[c] * db[i];
            if !next.is_finite() {
                return Err(Error::Blowup { step: j });
            }
            y[i] = next;
        }
        gamma_integral += gamma * dw[j];
        if !gamma_integral.is_finite() {
            return Err(Error::Blowup { step: j });
        }
    }
    Ok(())
}

/// A simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub n: usize,
    pub times: Vec<f64>,
    /// Sorted positions per time.
    pub states: Vec<EmpiricalMeasure>,
    /// `Gamma(t_j)`; identically zero after [`decompose_y`].
    pub gamma_integral: Vec<f64>,
    /// `gamma(t_j, rho_n(t_j))` as used in the Ito sum.
    pub gamma_values: Vec<f64>,
    /// Co-moving positions `Y`, row-major time x particle, particle order.
    pub comoving: Option<Vec<f64>>,
    pub lineage: SeedLineage,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `X(t_j)` in particle order.
    pub fn positions_row(&self, j: usize) -> Result<Vec<f64>> {
        let y = self.comoving.as_ref().ok_or(Error::MissingPositions)?;
        let g = self.gamma_integral[j];
        Ok(y[j * self.n..(j + 1) * self.n].iter().map(|v| v + g).collect())
    }

    /// Summary CSV `t,gamma_integral,q05,q25,q50,q75,q95`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        const LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
        let rows = self
            .times
            .iter()
            .zip(&self.states)
            .zip(&self.gamma_integral)
            .map(|((&t, s), &g)| {
                let mut row = vec![t, g];
                row.extend(LEVELS.iter().map(|&u| s.quantile(u).expect("level in (0,1)")));
                row
            });
        write_rows(
            w,
            &["t", "gamma_integral", "q05", "q25", "q50", "q75", "q95"],
            rows,
        )
    }

    /// Little-endian `f64` dump of `X`, row-major time x particle, and the
    /// JSON sidecar describing it.
    pub fn write_positions<W: Write, J: Write>(&self, bin: W, mut sidecar: J) -> Result<()> {
        let mut bin = std::io::BufWriter::new(bin);
        for j in 0..self.times.len() {
            crate::io::write_f64_le(&mut bin, &self.positions_row(j)?)?;
        }
        bin.flush()?;
        let meta = PositionsSidecar {
            dtype: "float64",
            byte_order: "little-endian",
            layout: "row-major [time][particle]",
            rows: self.times.len(),
            columns: self.n,
            t0: self.times[0],
            dt: if self.times.len() > 1 {
                self.times[1] - self.times[0]
            } else {
                0.0
            },
            seed_lineage: &self.lineage,
        };
        serde_json::to_writer_pretty(&mut sidecar, &meta)
            .map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(sidecar)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct PositionsSidecar<'a> {
    dtype: &'static str,
    byte_order: &'static str,
    layout: &'static str,
    rows: usize,
    columns: usize,
    t0: f64,
    dt: f64,
    seed_lineage: &'a SeedLineage,
}

/// Simulates `config.steps` Euler-Maruyama steps and records every time.
pub fn simulate(config: &SimConfig) -> Result<TrajectoryRecord> {
    let mut states = Vec::with_capacity(config.steps + 1);
    let mut gamma_integral = Vec::with_capacity(config.steps + 1);
    let mut gamma_values = Vec::with_capacity(config.steps + 1);
    let mut comoving = config
        .keep_positions
        .then(|| Vec::with_capacity((config.steps + 1) * config.n));
    simulate_with(config, |view| {
        states.push(view.positions.clone());
        gamma_integral.push(view.gamma_integral);
        gamma_values.push(view.gamma);
        if let Some(c) = comoving.as_mut() {
            c.extend_from_slice(view.comoving);
        }
        Ok(())
    })?;
    Ok(TrajectoryRecord {
        n: config.n,
        times: config.times(),
        states,
        gamma_integral,
        gamma_values,
        comoving,
        lineage: SeedLineage::new(config.seed, config.n),
    })
}

/// The co-moving path `Y = X - Gamma` as a trajectory of empirical measures
/// `mu_n(t_j)` with zero shift.
pub fn decompose_y(traj: &TrajectoryRecord) -> Result<TrajectoryRecord> {
    let y = traj.comoving.as_ref().ok_or(Error::MissingPositions)?;
    let states = y
        .chunks(traj.n)
        .map(|row| EmpiricalMeasure::new(row.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryRecord {
        n: traj.n,
        times: traj.times.clone(),
        states,
        gamma_integral: vec![0.0; traj.times.len()],
        gamma_values: traj.gamma_values.clone(),
        comoving: Some(y.clone()),
        lineage: traj.lineage.clone(),
    })
}
