//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 generator whose key depends only on the run seed
//! and a domain tag, and whose 64-bit stream id selects the particle (or
//! refinement level). Particle `i`'s idiosyncratic increments therefore do not
//! depend on the number of particles, and the common increments do not depend
//! on anything but the seed, which couples systems of different sizes to the
//! same Brownian path `W`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Common = 0x636f_6d6d_6f6e,
    Idiosyncratic = 0x6964_696f,
    Initial = 0x696e_6974,
    Bridge = 0x6272_6964_6765,
}

impl Domain {
    fn label(self) -> &'static str {
        match self {
            Domain::Common => "common",
            Domain::Idiosyncratic => "idio",
            Domain::Initial => "init",
            Domain::Bridge => "bridge",
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Uniform draw in the open interval `(0, 1)`.
pub fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Human-readable record of which streams produced a run's randomness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedLineage {
    pub seed: u64,
    pub generator: &'static str,
    pub common_stream: String,
    pub idiosyncratic_streams: String,
    pub initial_streams: String,
}

impl SeedLineage {
    pub fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            generator: "ChaCha8 (rand_chacha), key = splitmix64(seed ^ splitmix64(domain))",
            common_stream: format!("({seed}, {}, 0)", Domain::Common.label()),
            idiosyncratic_streams: format!(
                "({seed}, {}, i) for i in 0..{n}",
                Domain::Idiosyncratic.label()
            ),
            initial_streams: format!("({seed}, {}, i) for i in 0..{n}", Domain::Initial.label()),
        }
    }
}

/// Increments of a Brownian path on a uniform time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dt: f64,
    increments: Vec<f64>,
}

impl BrownianPath {
    /// The common path of `seed`: `dW_j = sqrt(dt) Z_j`, `Z_j` read in order
    /// from the `(seed, common, 0)` stream.
    pub fn common(seed: u64, dt: f64, steps: usize) -> Self {
        let mut rng = stream(seed, Domain::Common, 0);
        let scale = dt.sqrt();
        let increments = (0..steps)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { dt, increments }
    }

    pub fn from_increments(dt: f64, increments: Vec<f64>) -> Self {
        Self { dt, increments }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_j)` for `j = 0..=steps`.
    pub fn values(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.steps() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for d in &self.increments {
            acc += d;
            w.push(acc);
        }
        w
    }

    /// Halves the step by sampling each midpoint from the Brownian bridge
    /// between its endpoints. The coarse increments are sums of consecutive
    /// fine ones, so every level of a refinement sequence describes the same
    /// path. `level` selects the bridge stream.
    pub fn refine(&self, seed: u64, level: u64) -> Self {
        let mut rng = stream(seed, Domain::Bridge, level);
        let sd = (self.dt / 4.0).sqrt();
        let mut increments = Vec::with_capacity(2 * self.steps());
        for &d in &self.increments {
            let xi = sd * rng.sample::<f64, _>(StandardNormal);
            let first = 0.5 * d + xi;
            increments.push(first);
            increments.push(d - first);
        }
        Self {
            dt: 0.5 * self.dt,
            increments,
        }
    }
}

/// Per-particle idiosyncratic generators, advanced one step at a time.
pub struct IdiosyncraticStreams {
    rngs: Vec<ChaCha8Rng>,
    scale: f64,
}

impl IdiosyncraticStreams {
    pub fn new(seed: u64, n: usize, dt: f64) -> Self {
        Self {
            rngs: (0..n as u64)
                .map(|i| stream(seed, Domain::Idiosyncratic, i))
                .collect(),
            scale: dt.sqrt(),
        }
    }

    /// Fills `out[i]` with particle `i`'s next increment `dB_i`.
    pub fn fill_step(&mut self, out: &mut [f64]) {
        for (o, rng) in out.iter_mut().zip(self.rngs.iter_mut()) {
            *o = self.scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// The randomness of one run: the common increments, the seed to derive the
/// idiosyncratic streams from, and the lineage record.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    pub common: BrownianPath,
    pub lineage: SeedLineage,
    seed: u64,
    n: usize,
}

impl NoiseBundle {
    pub fn new(seed: u64, n: usize, dt: f64, steps: usize) -> Self {
        Self {
            common: BrownianPath::common(seed, dt, steps),
            lineage: SeedLineage::new(seed, n),
            seed,
            n,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn idiosyncratic(&self) -> IdiosyncraticStreams {
        IdiosyncraticStreams::new(self.seed, self.n, self.common.dt())
    }

    /// Particle `i`'s first `steps` increments, materialised.
    pub fn idiosyncratic_increments(&self, i: usize, steps: usize) -> Vec<f64> {
        let mut rng = stream(self.seed, Domain::Idiosyncratic, i as u64);
        let scale = self.common.dt().sqrt();
        (0..steps)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn common_stream_ignores_system_size() {
        let a = NoiseBundle::new(9, 10, 1e-3, 100);
        let b = NoiseBundle::new(9, 1000, 1e-3, 100);
        assert_eq!(a.common, b.common);
        assert_ne!(a.common, NoiseBundle::new(10, 10, 1e-3, 100).common);
    }

    #[test]
    fn idiosyncratic_streams_are_indexed_not_sequential() {
        let small = NoiseBundle::new(5, 3, 0.01, 20);
        let large = NoiseBundle::new(5, 50, 0.01, 20);
        let mut s = small.idiosyncratic();
        let mut l = large.idiosyncratic();
        let (mut bs, mut bl) = (vec![0.0; 3], vec![0.0; 50]);
        for step in 0..20 {
            s.fill_step(&mut bs);
            l.fill_step(&mut bl);
            assert_eq!(bs[..], bl[..3], "step {step}");
        }
        assert_eq!(
            small.idiosyncratic_increments(2, 20),
            large.idiosyncratic_increments(2, 20)
        );
    }

    #[test]
    fn domains_are_decorrelated() {
        let mut a = stream(1, Domain::Common, 0);
        let mut b = stream(1, Domain::Idiosyncratic, 0);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn increments_have_brownian_variance() {
        let dt = 0.01;
        let path = BrownianPath::common(3, dt, 200_000);
        let var = path.increments().iter().map(|d| d * d).sum::<f64>() / path.steps() as f64;
        // sd of the estimator is dt * sqrt(2 / N) ~ 3.2e-5
        assert!((var - dt).abs() < 2e-4, "{var}");
    }

    #[test]
    fn bridge_refinement_preserves_coarse_increments() {
        let coarse = BrownianPath::common(11, 0.1, 10);
        let fine = coarse.refine(11, 0);
        assert_eq!(fine.steps(), 20);
        assert_eq!(fine.dt(), 0.05);
        for (j, d) in coarse.increments().iter().enumerate() {
            let sum = fine.increments()[2 * j] + fine.increments()[2 * j + 1];
            assert!((sum - d).abs() < 1e-15);
        }
        let wc = coarse.values();
        let wf = fine.values();
        for j in 0..wc.len() {
            assert!((wc[j] - wf[2 * j]).abs() < 1e-14);
        }
    }

    #[test]
    fn bridge_midpoints_have_bridge_variance() {
        // midpoint deviation from the chord has variance dt / 4
        let dt = 0.1;
        let coarse = BrownianPath::from_increments(dt, vec![0.0; 100_000]);
        let fine = coarse.refine(2, 0);
        let var = fine
            .increments()
            .iter()
            .step_by(2)
            .map(|x| x * x)
            .sum::<f64>()
            / 100_000.0;
        assert!((var - dt / 4.0).abs() < 5e-4, "{var}");
    }
}
