//! Monte Carlo paths of `Y_t`.
//!
//! One step of length `h` is a symmetric splitting: exact linear mass flow
//! over `h/2`, then the branching noise (Feller diffusion and compensated
//! Poisson jumps, one truncation at zero per site) with rates frozen at the
//! current state, then immigration over `h`, then the flow over `h/2` again.
//!
//! A site whose mass is below `EXACT_ZONE` diffusion variances `2 beta b h`
//! takes its diffusion and drift immigration from the exact critical CBI
//! transition, a Poisson mixture of Gamma laws, instead of the Euler step.
//! Near zero the truncated Euler step would add mass.
//!
//! States are carried in eigen-coordinates `Z_k = <phi_k, Y>`. The flow is
//! diagonal there, and subdominant coordinates keep their own relative
//! precision when the total mass grows by many orders of magnitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{dot, Scenario};
use crate::spectral::SpectralSystem;

/// Bumped whenever the scheme changes numerically.
pub const SCHEME_VERSION: &str = "strang-eigen-3";

/// Masses below this many `2 beta b h` use the exact local transition; the
/// Euler step would need a 4-sigma draw to cross zero above it.
const EXACT_ZONE: f64 = 16.0;

/// Above this mean, Poisson counts are drawn from their normal approximation.
const POISSON_NORMAL_CUTOFF: f64 = 1e12;

/// Largest `|lambda_k| (t - t0)` the interaction form may reach.
const REBASE_EXPONENT: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimMode {
    Full,
    NativeOnly,
    ImmigrationOnly,
}

impl SimMode {
    pub fn label(self) -> &'static str {
        match self {
            SimMode::Full => "full",
            SimMode::NativeOnly => "native_only",
            SimMode::ImmigrationOnly => "immigration_only",
        }
    }

    pub fn parse(s: &str) -> Option<SimMode> {
        match s {
            "full" => Some(SimMode::Full),
            "native_only" => Some(SimMode::NativeOnly),
            "immigration_only" => Some(SimMode::ImmigrationOnly),
            _ => None,
        }
    }

    fn tag(self) -> u64 {
        match self {
            SimMode::Full => 0,
            SimMode::NativeOnly => 0x6e61_7469_7665,
            SimMode::ImmigrationOnly => 0x696d_6d69_6772,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_snapshots: Vec<f64>,
    pub replicates: usize,
    pub master_seed: u64,
    pub mode: SimMode,
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::precondition(format!("dt must be positive, got {}", self.dt)));
        }
        if self.replicates == 0 {
            return Err(Error::precondition("replicates must be at least 1"));
        }
        if self.t_snapshots.is_empty() {
            return Err(Error::precondition("at least one snapshot time is required"));
        }
        let mut prev = 0.0;
        for (i, &t) in self.t_snapshots.iter().enumerate() {
            if !t.is_finite() || t < 0.0 || (i > 0 && t <= prev) {
                return Err(Error::precondition(
                    "snapshot times must be finite, nonnegative and strictly increasing",
                ));
            }
            if t > prev && t - prev < self.dt * (1.0 - 1e-12) {
                return Err(Error::precondition(format!(
                    "dt = {} exceeds the snapshot gap {}",
                    self.dt,
                    t - prev
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Step lengths from 0 to the last snapshot, landing exactly on each snapshot.
/// `marks[i]` is the number of steps taken when snapshot `i` is reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub steps: Vec<f64>,
    pub marks: Vec<usize>,
    pub snapshots: Vec<f64>,
}

impl Schedule {
    pub fn new(dt: f64, snapshots: &[f64]) -> Schedule {
        let mut steps = Vec::new();
        let mut marks = Vec::with_capacity(snapshots.len());
        let mut t = 0.0;
        for &target in snapshots {
            let slack = 1e-9 * dt;
            while target - t > slack {
                let h = if target - t - dt <= slack { target - t } else { dt };
                steps.push(h);
                t += h;
            }
            t = target;
            marks.push(steps.len());
        }
        Schedule {
            steps,
            marks,
            snapshots: snapshots.to_vec(),
        }
    }
}

/// Randomness consumed by the stepper.
pub trait NoiseSource {
    fn normal(&mut self) -> f64;
    fn poisson(&mut self, mean: f64) -> f64;
    fn gamma(&mut self, shape: f64, scale: f64) -> f64;
}

impl<R: Rng> NoiseSource for R {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    fn poisson(&mut self, mean: f64) -> f64 {
        if mean <= 0.0 {
            0.0
        } else if mean > POISSON_NORMAL_CUTOFF {
            let z: f64 = StandardNormal.sample(self);
            (mean + mean.sqrt() * z).round().max(0.0)
        } else {
            Poisson::new(mean).expect("finite positive mean").sample(self)
        }
    }

    fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        if shape <= 0.0 {
            0.0
        } else {
            Gamma::new(shape, scale).expect("positive shape and scale").sample(self)
        }
    }
}

/// `ChaCha8` stream for one replicate: the key is derived from the master
/// seed and the replicate index selects the stream.
pub fn seed_stream(master_seed: u64, replicate_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate_index);
    rng
}

/// The seed used for one simulation mode, so that decomposition ensembles
/// draw from streams independent of the full ensemble.
pub fn mode_seed(master_seed: u64, mode: SimMode) -> u64 {
    if mode == SimMode::Full {
        return master_seed;
    }
    // SplitMix64 finalizer.
    let mut z = master_seed ^ mode.tag();
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct SiteAtom {
    size: f64,
    rate: f64,
}

/// The per-step transition, precomputed for one scenario and mode.
pub struct Stepper {
    n: usize,
    m: Vec<f64>,
    rates: Vec<f64>,
    /// `phi[k][x]`.
    phi: Vec<Vec<f64>>,
    /// `2 beta b` per site.
    diffusion: Vec<f64>,
    beta: Vec<f64>,
    atoms: Vec<Vec<SiteAtom>>,
    /// `eta` in eigen-coordinates, `<eta, phi_k>`.
    eta_z: Vec<f64>,
    /// `eta` per site, zero when immigration is off.
    eta: Vec<f64>,
    /// Per immigration atom, `(rate, <nu, phi_k>)`.
    arrivals: Vec<(f64, Vec<f64>)>,
    immigrate: bool,
    start: Vec<f64>,
}

impl Stepper {
    pub fn new(scenario: &Scenario, sys: &SpectralSystem, mode: SimMode) -> Stepper {
        let n = scenario.n();
        let br = &scenario.branching;
        let phi = sys.eigenfunctions().to_vec();
        let mut atoms: Vec<Vec<SiteAtom>> = (0..n).map(|_| Vec::new()).collect();
        for a in &br.jump_atoms {
            atoms[a.site].push(SiteAtom {
                size: a.size,
                rate: a.rate,
            });
        }
        let im = &scenario.immigration;
        let start = match mode {
            SimMode::ImmigrationOnly => vec![0.0; n],
            _ => phi.iter().map(|p| dot(&scenario.mu0, p)).collect(),
        };
        Stepper {
            n,
            m: sys.weights().to_vec(),
            rates: sys.rates().to_vec(),
            diffusion: (0..n).map(|x| 2.0 * br.beta[x] * br.b[x]).collect(),
            beta: br.beta.clone(),
            atoms,
            eta_z: phi.iter().map(|p| dot(&im.eta, p)).collect(),
            eta: if mode != SimMode::NativeOnly {
                im.eta.clone()
            } else {
                vec![0.0; n]
            },
            arrivals: im
                .h_atoms
                .iter()
                .map(|a| (a.rate, phi.iter().map(|p| dot(&a.nu, p)).collect()))
                .collect(),
            immigrate: mode != SimMode::NativeOnly && !im.is_empty(),
            start,
            phi,
        }
    }

    /// Initial state in eigen-coordinates.
    pub fn start(&self) -> &[f64] {
        &self.start
    }

    /// Site masses `Y_x = m_x sum_k Z_k phi_k(x)`, clamped at zero.
    pub fn site_masses(&self, z: &[f64], out: &mut [f64]) {
        for x in 0..self.n {
            let v: f64 = z.iter().zip(&self.phi).map(|(zk, p)| zk * p[x]).sum();
            out[x] = (self.m[x] * v).max(0.0);
        }
    }

    /// Advances the state by one Strang step of length `h`. The state is kept
    /// in interaction form `w_k = e^{lambda_k (t - t0)} Z_k`, so the linear
    /// flow is exact and never accumulates rounding; `grow[k]` is
    /// `e^{lambda_k (t_mid - t0)}` at the midpoint of the step.
    fn step<N: NoiseSource>(&self, w: &mut [f64], h: f64, grow: &[f64], y: &mut [f64], noise: &mut N) {
        for x in 0..self.n {
            let v: f64 = (0..self.n).map(|k| w[k] / grow[k] * self.phi[k][x]).sum();
            y[x] = (self.m[x] * v).max(0.0);
        }
        for x in 0..self.n {
            let yx = y[x];
            let diffusion = self.diffusion[x];
            let exact = diffusion > 0.0 && yx < EXACT_ZONE * diffusion * h;
            if yx <= 0.0 && !(exact && self.eta[x] > 0.0) {
                continue;
            }
            let mut delta = 0.0;
            if exact {
                // dY = eta dt + sqrt(2 beta b Y) dW over h, exactly; the drift
                // immigration eta h is added again below, so it is removed here.
                let scale = 0.5 * diffusion * h;
                let count = noise.poisson(yx / scale);
                let shape = count + 2.0 * self.eta[x] / diffusion;
                delta += noise.gamma(shape, scale) - yx - self.eta[x] * h;
            } else if diffusion > 0.0 {
                delta += (diffusion * yx * h).sqrt() * noise.normal();
            }
            for a in &self.atoms[x] {
                let mean = self.beta[x] * yx * a.rate * h;
                delta += noise.poisson(mean) * a.size - mean * a.size;
            }
            if delta == 0.0 {
                continue;
            }
            let floor = -yx - if exact { self.eta[x] * h } else { 0.0 };
            if delta < floor {
                delta = floor;
            }
            for k in 0..self.n {
                w[k] += grow[k] * self.phi[k][x] * delta;
            }
        }
        if self.immigrate {
            for k in 0..self.n {
                w[k] += grow[k] * self.eta_z[k] * h;
            }
            for (rate, nu_z) in &self.arrivals {
                let count = noise.poisson(rate * h);
                if count > 0.0 {
                    for k in 0..self.n {
                        w[k] += grow[k] * count * nu_z[k];
                    }
                }
            }
        }
    }

    /// Runs one replicate along `schedule`, returning the eigen-coordinates at
    /// every snapshot, flattened snapshot-major.
    pub fn run<N: NoiseSource>(&self, schedule: &Schedule, noise: &mut N) -> Result<Vec<f64>> {
        let mut w = self.start.clone();
        let mut y = vec![0.0; self.n];
        let mut grow = vec![0.0; self.n];
        let mut out = Vec::with_capacity(schedule.marks.len() * self.n);
        let fastest = self.rates.iter().fold(0.0f64, |a, l| a.max(l.abs()));
        // Reference time of the interaction form, moved forward before any
        // factor can leave the floating-point range.
        let mut t0 = 0.0;
        let mut t = 0.0;
        let mut mark = 0;
        let record = |w: &[f64], t0: f64, ts: f64, out: &mut Vec<f64>| {
            out.extend((0..self.n).map(|k| w[k] * (-self.rates[k] * (ts - t0)).exp()));
        };
        for (i, &h) in schedule.steps.iter().enumerate() {
            while mark < schedule.marks.len() && schedule.marks[mark] == i {
                t = schedule.snapshots[mark];
                record(&w, t0, t, &mut out);
                mark += 1;
            }
            if fastest * (t + h - t0) > REBASE_EXPONENT {
                for k in 0..self.n {
                    w[k] *= (-self.rates[k] * (t - t0)).exp();
                }
                t0 = t;
            }
            for k in 0..self.n {
                grow[k] = (self.rates[k] * (t + 0.5 * h - t0)).exp();
            }
            self.step(&mut w, h, &grow, &mut y, noise);
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "replicate state became non-finite after step {i}"
                )));
            }
            t += h;
        }
        while mark < schedule.marks.len() {
            record(&w, t0, schedule.snapshots[mark], &mut out);
            mark += 1;
        }
        Ok(out)
    }
}

/// Snapshot states of every replicate, in eigen-coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub mode: SimMode,
    pub snapshots: Vec<f64>,
    /// The seed the replicate streams were keyed with.
    pub stream_seed: u64,
    n: usize,
    m: Vec<f64>,
    phi: Vec<Vec<f64>>,
    /// `[replicate][snapshot][k]`, flattened; NaN for failed replicates.
    coords: Vec<f64>,
    failed: Vec<bool>,
}

impl PathEnsemble {
    pub fn replicates(&self) -> usize {
        self.failed.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn failures(&self) -> usize {
        self.failed.iter().filter(|f| **f).count()
    }

    pub fn is_valid(&self, rep: usize) -> bool {
        !self.failed[rep]
    }

    /// Index of snapshot time `t`, matched to within `1e-9`.
    pub fn snapshot_index(&self, t: f64) -> Option<usize> {
        self.snapshots
            .iter()
            .position(|s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    fn offset(&self, rep: usize, snap: usize) -> usize {
        (rep * self.snapshots.len() + snap) * self.n
    }

    /// `<phi_k, Y>` for one replicate and snapshot.
    pub fn coords(&self, rep: usize, snap: usize) -> &[f64] {
        let o = self.offset(rep, snap);
        &self.coords[o..o + self.n]
    }

    /// Site masses `Y_x`.
    pub fn state(&self, rep: usize, snap: usize) -> Vec<f64> {
        let z = self.coords(rep, snap);
        (0..self.n)
            .map(|x| {
                let v: f64 = z.iter().zip(&self.phi).map(|(zk, p)| zk * p[x]).sum();
                (self.m[x] * v).max(0.0)
            })
            .collect()
    }

    /// `<f, Y>` at one snapshot for every valid replicate, in index order.
    pub fn pairing(&self, f: &[f64], snap: usize) -> Vec<f64> {
        let c: Vec<f64> = self
            .phi
            .iter()
            .map(|p| p.iter().zip(f).zip(&self.m).map(|((a, b), w)| a * b * w).sum())
            .collect();
        (0..self.replicates())
            .filter(|&r| self.is_valid(r))
            .map(|r| dot(self.coords(r, snap), &c))
            .collect()
    }

    /// Replicate-wise sum of two ensembles over the same snapshots.
    pub fn sum(&self, other: &PathEnsemble) -> Result<PathEnsemble> {
        if self.snapshots != other.snapshots
            || self.replicates() != other.replicates()
            || self.n != other.n
        {
            return Err(Error::precondition("ensembles to be summed must share their layout"));
        }
        Ok(PathEnsemble {
            mode: SimMode::Full,
            snapshots: self.snapshots.clone(),
            stream_seed: self.stream_seed,
            n: self.n,
            m: self.m.clone(),
            phi: self.phi.clone(),
            coords: self.coords.iter().zip(&other.coords).map(|(a, b)| a + b).collect(),
            failed: self.failed.iter().zip(&other.failed).map(|(a, b)| *a || *b).collect(),
        })
    }
}

/// Simulates `config.replicates` independent paths. Replicate `r` uses
/// stream `r` of the mode's seed, so the result does not depend on the
/// number of worker threads.
pub fn simulate_ensemble(
    scenario: &Scenario,
    sys: &SpectralSystem,
    config: &SimConfig,
) -> Result<PathEnsemble> {
    scenario.check_dimensions()?;
    config.check()?;
    let stepper = Stepper::new(scenario, sys, config.mode);
    let schedule = Schedule::new(config.dt, &config.t_snapshots);
    let seed = mode_seed(config.master_seed, config.mode);
    let n = scenario.n();
    let width = n * config.t_snapshots.len();
    let runs: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| stepper.run(&schedule, &mut seed_stream(seed, r as u64)).ok())
        .collect();
    let mut coords = Vec::with_capacity(config.replicates * width);
    let mut failed = Vec::with_capacity(config.replicates);
    for run in runs {
        match run {
            Some(v) => {
                coords.extend(v);
                failed.push(false);
            }
            None => {
                coords.extend(std::iter::repeat(f64::NAN).take(width));
                failed.push(true);
            }
        }
    }
    Ok(PathEnsemble {
        mode: config.mode,
        snapshots: config.t_snapshots.clone(),
        stream_seed: seed,
        n,
        m: sys.weights().to_vec(),
        phi: sys.eigenfunctions().to_vec(),
        coords,
        failed,
    })
}

/// Independent native (from `mu`, no immigration) and immigration (from 0)
/// ensembles; their replicate-wise sum has the law of the full process.
pub fn decomposition_ensemble(
    scenario: &Scenario,
    sys: &SpectralSystem,
    config: &SimConfig,
) -> Result<(PathEnsemble, PathEnsemble)> {
    let native = SimConfig {
        mode: SimMode::NativeOnly,
        ..config.clone()
    };
    let immigration = SimConfig {
        mode: SimMode::ImmigrationOnly,
        ..config.clone()
    };
    Ok((
        simulate_ensemble(scenario, sys, &native)?,
        simulate_ensemble(scenario, sys, &immigration)?,
    ))
}

/// Runs `f` on a pool capped at `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Numeric(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Exact transition of the one-site branching diffusion with
/// `psi(l) = beta (-a l + b l^2)` over `dt`: a Poisson mixture of Gamma laws.
pub fn exact_single_site_step<R: Rng + ?Sized>(
    y: f64,
    dt: f64,
    beta: f64,
    a: f64,
    b: f64,
    rng: &mut R,
) -> f64 {
    let alpha = beta * a;
    let growth = (alpha * dt).exp();
    if y <= 0.0 {
        return 0.0;
    }
    let c = if alpha == 0.0 {
        beta * b * dt
    } else {
        beta * b * (alpha * dt).exp_m1() / alpha
    };
    if c <= 0.0 {
        return y * growth;
    }
    let mean = y * growth / c;
    let count: f64 = Poisson::new(mean).expect("finite positive mean").sample(rng);
    if count == 0.0 {
        0.0
    } else {
        Gamma::new(count, c).expect("positive shape").sample(rng)
    }
}
