//! Branching stable particle system with exact motion and exact-generator
//! branching.
//!
//! Each atom carries mass `1/n`. A global exponential clock with rate
//! `c_n · count` picks a uniformly random atom, which is replaced in place by
//! `L` copies with `L` drawn from [`OffspringLaw`]. Positions are advanced
//! lazily: an atom stores the time of its last update and receives an exact
//! stable increment when it branches or when a snapshot is taken.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::mechanism::MechanismParams;
use crate::offspring::OffspringLaw;
use crate::oracle::{gaussian_bump, GridFunction, GridSpec};
use crate::stable::{sample_stable_increment, Motion};

/// Finite atomic measure with equal atom masses.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub dim: usize,
    /// Flat coordinates, `dim` per atom.
    pub positions: Vec<f64>,
    pub atom_mass: f64,
    pub time: f64,
}

impl ParticleCloud {
    pub fn new(dim: usize, atom_mass: f64, time: f64) -> Self {
        Self { dim, positions: Vec::new(), atom_mass, time }
    }

    pub fn count(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn total_mass(&self) -> f64 {
        self.count() as f64 * self.atom_mass
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.positions.extend_from_slice(x);
    }

    /// `∫ φ dZ = atom_mass · Σ φ(x_i)`.
    pub fn integrate(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        self.positions.chunks_exact(self.dim).map(phi).sum::<f64>() * self.atom_mass
    }
}

/// One branching event.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchEvent {
    pub time: f64,
    pub position: Vec<f64>,
    pub offspring: u64,
}

/// Snapshots on `t_j = jΔ` and the branching-event log of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub dim: usize,
    /// Stability index of the motion.
    pub alpha: f64,
    /// Particles per unit mass.
    pub n: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<ParticleCloud>,
    pub events: Vec<BranchEvent>,
}

impl PathRecord {
    pub fn delta(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Checks that the atom count between consecutive snapshots changes by
    /// exactly `Σ (L - 1)` over the events in between.
    pub fn mass_bookkeeping_holds(&self) -> bool {
        let mut e = 0;
        for j in 1..self.snapshots.len() {
            let mut change: i64 = 0;
            while e < self.events.len() && self.events[e].time <= self.times[j] {
                change += self.events[e].offspring as i64 - 1;
                e += 1;
            }
            if self.snapshots[j].count() as i64 - self.snapshots[j - 1].count() as i64 != change {
                return false;
            }
        }
        e == self.events.len()
    }

    /// Every `stride`-th snapshot, keeping the full event log; a path on a
    /// coarser snapshot interval.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 || (self.snapshots.len() - 1) % stride != 0 {
            return domain(format!("stride {stride} does not divide {} snapshot intervals", self.snapshots.len() - 1));
        }
        Ok(Self {
            times: self.times.iter().step_by(stride).copied().collect(),
            snapshots: self.snapshots.iter().step_by(stride).cloned().collect(),
            events: self.events.clone(),
            ..*self
        })
    }

    /// Largest event mass `L/n`, or 0 without events.
    pub fn largest_event_mass(&self) -> f64 {
        self.events.iter().map(|e| e.offspring as f64 / self.n).fold(0.0, f64::max)
    }
}

/// Initial density `h` of `μ(dx) = h(x) dx`, normalised to unit mass; the
/// total mass is given separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    /// Uniform on `[lo, hi]^d`.
    UniformBox { lo: f64, hi: f64 },
    /// Centered `N(0, var·I)`.
    Gaussian { var: f64 },
    /// Density proportional to `(1 - |x|²/r²)_+`, sampled by rejection
    /// from the bounding box.
    Bump { radius: f64 },
}

impl InitialDensity {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialDensity::UniformBox { lo, hi } => lo.is_finite() && hi.is_finite() && hi > lo,
            InitialDensity::Gaussian { var } => var.is_finite() && var > 0.0,
            InitialDensity::Bump { radius } => radius.is_finite() && radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            config(format!("initial density {self:?} is not samplable"))
        }
    }

    /// Unit-mass density at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        match *self {
            InitialDensity::UniformBox { lo, hi } => {
                if x.iter().all(|&v| v >= lo && v <= hi) {
                    (hi - lo).powf(-d)
                } else {
                    0.0
                }
            }
            InitialDensity::Gaussian { var } => gaussian_bump(x, var),
            InitialDensity::Bump { radius } => {
                let r2: f64 = x.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
                if r2 >= 1.0 {
                    return 0.0;
                }
                // ∫ (1 - |y|²)_+ dy over the unit ball = 2|B_d|/(d+2)
                let norm = 2.0 * crate::special::ball_volume(x.len()) / (d + 2.0) * radius.powf(d);
                (1.0 - r2) / norm
            }
        }
    }

    /// `mass · h` sampled on a grid (cell-averaged for the discontinuous box).
    pub fn on_grid(&self, grid: GridSpec, mass: f64) -> GridFunction {
        if let InitialDensity::UniformBox { lo, hi } = *self {
            let (h, d) = (grid.h, grid.dim);
            let w = (hi - lo).powf(-(d as f64));
            return GridFunction::from_fn(grid, |x| {
                let frac: f64 = x.iter().map(|&c| ((c + h / 2.0).min(hi) - (c - h / 2.0).max(lo)).max(0.0) / h).product();
                mass * w * frac
            });
        }
        GridFunction::from_fn(grid, |x| mass * self.density(x))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            InitialDensity::UniformBox { lo, hi } => out.iter_mut().for_each(|v| *v = lo + (hi - lo) * rng.random::<f64>()),
            InitialDensity::Gaussian { var } => {
                let s = var.sqrt();
                out.iter_mut().for_each(|v| *v = s * rng.sample::<f64, _>(rand_distr::StandardNormal));
            }
            InitialDensity::Bump { radius } => loop {
                out.iter_mut().for_each(|v| *v = radius * (2.0 * rng.random::<f64>() - 1.0));
                let r2: f64 = out.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
                if r2 < 1.0 && rng.random::<f64>() < 1.0 - r2 {
                    break;
                }
            },
        }
    }
}

/// `⌊n μ(1)⌋` i.i.d. atoms with density `h`.
pub fn init_cloud<R: Rng + ?Sized>(h: &InitialDensity, dim: usize, mass: f64, n: f64, rng: &mut R) -> Result<ParticleCloud> {
    h.validate()?;
    if !(mass >= 0.0 && mass.is_finite()) || !(n >= 1.0) || dim == 0 {
        return config(format!("need mass >= 0, n >= 1 and d >= 1 (mass={mass}, n={n}, d={dim})"));
    }
    let count = (n * mass + 1e-9).floor() as usize;
    let mut cloud = ParticleCloud::new(dim, 1.0 / n, 0.0);
    cloud.positions = vec![0.0; count * dim];
    for x in cloud.positions.chunks_exact_mut(dim) {
        h.sample(rng, x);
    }
    Ok(cloud)
}

/// Switches for test hooks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimHooks {
    pub freeze_motion: bool,
    pub freeze_branching: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: MechanismParams,
    /// Particles per unit mass.
    pub n: f64,
    pub horizon: f64,
    /// Snapshot interval.
    pub delta: f64,
    pub replicates: usize,
    pub seed: u64,
    pub initial: InitialDensity,
    pub initial_mass: f64,
    #[serde(default = "default_cap")]
    pub population_cap: usize,
    #[serde(default)]
    pub hooks: SimHooks,
}

fn default_cap() -> usize {
    10_000_000
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n >= 1.0) {
            return config(format!("n must be >= 1, got {}", self.n));
        }
        if !(self.delta > 0.0) || !(self.horizon >= self.delta) {
            return config(format!("need delta > 0 and horizon >= delta (delta={}, T={})", self.delta, self.horizon));
        }
        let steps = self.horizon / self.delta;
        if (steps - steps.round()).abs() > 1e-9 * steps {
            return config("horizon must be a multiple of the snapshot interval");
        }
        self.initial.validate()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.delta).round() as usize
    }
}

/// Random stream of replicate `index`: the master seed keys the generator
/// and the index selects the stream, so adding replicates leaves earlier
/// ones unchanged.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Population {
    dim: usize,
    motion: Motion,
    positions: Vec<f64>,
    updated: Vec<f64>,
    frozen: bool,
}

impl Population {
    fn advance<R: Rng + ?Sized>(&mut self, i: usize, t: f64, rng: &mut R, scratch: &mut [f64]) {
        let dt = t - self.updated[i];
        if dt > 0.0 && !self.frozen {
            sample_stable_increment(self.motion, dt, rng, scratch).expect("positive time step");
            for (p, s) in self.positions[i * self.dim..(i + 1) * self.dim].iter_mut().zip(scratch.iter()) {
                *p += s;
            }
        }
        self.updated[i] = t;
    }

    fn count(&self) -> usize {
        self.updated.len()
    }
}

/// Simulates one path on `[0, T]` from the given initial cloud.
pub fn simulate_from<R: Rng + ?Sized>(cfg: &RunConfig, law: &OffspringLaw, init: ParticleCloud, rng: &mut R) -> Result<PathRecord> {
    cfg.validate()?;
    let dim = cfg.params.dim;
    if init.dim != dim {
        return domain("initial cloud dimension does not match the mechanism");
    }
    let steps = cfg.steps();
    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * cfg.delta).collect();
    let mut pop = Population {
        dim,
        motion: cfg.params.motion(),
        updated: vec![0.0; init.count()],
        positions: init.positions.clone(),
        frozen: cfg.hooks.freeze_motion,
    };
    let mut snapshots = vec![init];
    let mut events = Vec::new();
    let mut scratch = vec![0.0; dim];
    let mut now = 0.0;
    let mut next = 1;
    while next <= steps {
        let count = pop.count();
        let wait = if count == 0 || cfg.hooks.freeze_branching {
            f64::INFINITY
        } else {
            rng.sample::<f64, _>(Exp1) / (law.c_n * count as f64)
        };
        let ring = now + wait;
        while next <= steps && times[next] < ring {
            let ts = times[next];
            for i in 0..pop.count() {
                pop.advance(i, ts, rng, &mut scratch);
            }
            snapshots.push(ParticleCloud { dim, positions: pop.positions.clone(), atom_mass: 1.0 / cfg.n, time: ts });
            next += 1;
        }
        if next > steps {
            break;
        }
        now = ring;
        let i = rng.random_range(0..count);
        pop.advance(i, now, rng, &mut scratch);
        let offspring = law.sample(rng);
        events.push(BranchEvent { time: now, position: pop.positions[i * dim..(i + 1) * dim].to_vec(), offspring });
        if offspring == 0 {
            let last = count - 1;
            pop.updated.swap_remove(i);
            for a in 0..dim {
                pop.positions.swap(i * dim + a, last * dim + a);
            }
            pop.positions.truncate(last * dim);
        } else {
            if count as u64 + offspring - 1 > cfg.population_cap as u64 {
                return Err(Error::Aborted(format!(
                    "population would reach {} atoms at t={now:.4}, above the cap {}",
                    count as u64 + offspring - 1,
                    cfg.population_cap
                )));
            }
            scratch.copy_from_slice(&pop.positions[i * dim..(i + 1) * dim]);
            for _ in 1..offspring {
                pop.positions.extend_from_slice(&scratch);
                pop.updated.push(now);
            }
        }
    }
    Ok(PathRecord { dim, alpha: cfg.params.alpha, n: cfg.n, times, snapshots, events })
}

/// Initial cloud plus [`simulate_from`].
pub fn simulate_path<R: Rng + ?Sized>(cfg: &RunConfig, law: &OffspringLaw, rng: &mut R) -> Result<PathRecord> {
    let init = init_cloud(&cfg.initial, cfg.params.dim, cfg.initial_mass, cfg.n, rng)?;
    simulate_from(cfg, law, init, rng)
}

/// Runs all replicates (in parallel) and maps each path to a statistic
/// vector; replicate `r` uses [`replicate_rng`]`(seed, r)`.
pub fn run_replicates<T, F>(cfg: &RunConfig, stat: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&PathRecord) -> T + Sync,
{
    try_replicates(cfg, |_, p| Ok(stat(p)))
}

/// As [`run_replicates`] with a fallible statistic that also sees the
/// replicate index. Results come back in index order.
pub fn try_replicates<T, F>(cfg: &RunConfig, stat: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &PathRecord) -> Result<T> + Sync,
{
    use rayon::prelude::*;
    let law = OffspringLaw::new(cfg.params, cfg.n)?;
    (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed, r);
            stat(r, &simulate_path(cfg, &law, &mut rng)?)
        })
        .collect()
}

/// Sample mean, standard error and count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let count = xs.len();
        let n = count as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if count > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { f64::NAN };
        Self { mean, std_error: (var / n).sqrt(), count }
    }

    pub fn z_score(&self, reference: f64) -> f64 {
        (self.mean - reference) / self.std_error
    }
}

/// Monte Carlo estimate of `E[Y_t(φ)^order]` for `order ∈ {1, 2}`.
pub fn mc_moment(cfg: &RunConfig, phi: &(dyn Fn(&[f64]) -> f64 + Sync), t: f64, order: u32) -> Result<MeanEstimate> {
    if !(order == 1 || order == 2) {
        return domain(format!("order must be 1 or 2, got {order}"));
    }
    if order == 2 && !cfg.params.is_truncated() {
        return domain("second moment infinite for untruncated β<1 process");
    }
    let j = (t / cfg.delta).round() as usize;
    if j > cfg.steps() || ((j as f64) * cfg.delta - t).abs() > 1e-9 {
        return domain(format!("t={t} is not a snapshot time"));
    }
    let samples = run_replicates(cfg, |p| p.snapshots[j].integrate(phi).powi(order as i32))?;
    Ok(MeanEstimate::from_samples(&samples))
}

/// Empirical `P(τ_K <= T)` with a binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub k: f64,
    pub frequency: f64,
    pub std_error: f64,
    pub paths: usize,
}

/// Frequency of paths with an event of mass `L/n > K` before the horizon,
/// for each `K`, from an untruncated run.
pub fn jump_exceedance(cfg: &RunConfig, ks: &[f64]) -> Result<Vec<Exceedance>> {
    if cfg.params.is_truncated() {
        return domain("jump exceedance needs an untruncated run (K = infinity)");
    }
    let largest = run_replicates(cfg, |p| p.largest_event_mass())?;
    Ok(exceedance_from_maxima(&largest, ks))
}

/// [`Exceedance`] rows from per-path maximal event masses.
pub fn exceedance_from_maxima(largest: &[f64], ks: &[f64]) -> Vec<Exceedance> {
    let paths = largest.len();
    ks.iter()
        .map(|&k| {
            let hits = largest.iter().filter(|&&m| m > k).count();
            let frequency = hits as f64 / paths as f64;
            Exceedance { k, frequency, std_error: (frequency * (1.0 - frequency) / paths as f64).sqrt(), paths }
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"SPR1";

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

impl PathRecord {
    /// Little-endian `SPR1` dump; see `docs/formats.md`.
    pub fn write_spr1<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u64(&mut w, self.dim as u64)?;
        put_f64(&mut w, self.alpha)?;
        put_f64(&mut w, self.n)?;
        put_u64(&mut w, self.snapshots.len() as u64)?;
        put_u64(&mut w, self.events.len() as u64)?;
        let mut offset = 0u64;
        for (t, s) in self.times.iter().zip(&self.snapshots) {
            put_f64(&mut w, *t)?;
            put_u64(&mut w, offset)?;
            put_u64(&mut w, s.count() as u64)?;
            offset += s.count() as u64;
        }
        for s in &self.snapshots {
            for &v in &s.positions {
                put_f64(&mut w, v)?;
            }
        }
        for e in &self.events {
            put_f64(&mut w, e.time)?;
            for &v in &e.position {
                put_f64(&mut w, v)?;
            }
            put_u64(&mut w, e.offspring)?;
        }
        Ok(())
    }

    pub fn read_spr1<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an SPR1 file".into()));
        }
        let dim = get_u64(&mut r)? as usize;
        let alpha = get_f64(&mut r)?;
        let n = get_f64(&mut r)?;
        let snaps = get_u64(&mut r)? as usize;
        let nevents = get_u64(&mut r)? as usize;
        if dim == 0 || dim > 64 {
            return Err(Error::Format(format!("implausible dimension {dim}")));
        }
        let mut index = Vec::with_capacity(snaps.min(1 << 20));
        for _ in 0..snaps {
            index.push((get_f64(&mut r)?, get_u64(&mut r)?, get_u64(&mut r)? as usize));
        }
        let mut times = Vec::with_capacity(snaps);
        let mut snapshots = Vec::with_capacity(snaps);
        for &(t, _, count) in &index {
            let mut positions = Vec::with_capacity(count * dim);
            for _ in 0..count * dim {
                positions.push(get_f64(&mut r)?);
            }
            times.push(t);
            snapshots.push(ParticleCloud { dim, positions, atom_mass: 1.0 / n, time: t });
        }
        let mut events = Vec::with_capacity(nevents.min(1 << 24));
        for _ in 0..nevents {
            let time = get_f64(&mut r)?;
            let mut position = Vec::with_capacity(dim);
            for _ in 0..dim {
                position.push(get_f64(&mut r)?);
            }
            events.push(BranchEvent { time, position, offspring: get_u64(&mut r)? });
        }
        Ok(Self { dim, alpha, n, times, snapshots, events })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_spr1(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_spr1(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
