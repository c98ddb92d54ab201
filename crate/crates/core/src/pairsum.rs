//! Pairings `m_A m_B Σ_{a,b} k(|x_a - y_b|)` of particle clouds against radial
//! kernels.
//!
//! Small problems are summed directly. Large ones are binned onto a regular
//! grid with cloud-in-cell weights and paired through an FFT convolution with
//! the kernel sampled at grid offsets. Multilinear interpolation in both
//! arguments gives the per-pair error bound `d h² sup‖∇²k‖ / 4`, so every grid
//! result carries a certified absolute bound.

use std::f64::consts::PI;
use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{domain, Error, Result};
use crate::particles::ParticleCloud;
use crate::stable::{GreenTable, Motion, Profile};

/// Treatment of the `a = b` terms when a cloud is paired with itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SelfPairPolicy {
    Include,
    Exclude,
}

#[derive(Debug, Clone)]
enum Shape {
    /// `norm · exp(-r² · rate)`; the α = 2 density in closed form.
    Gaussian { norm: f64, rate: f64 },
    /// `p_ε(r) = s^{-d} p_1(r / s)` with `s = ε^{1/α}`.
    Scaled { profile: Profile, scale: f64, norm: f64 },
    Green(Arc<GreenTable>),
}

/// A radial kernel on R^d: a transition density `p_ε` or a Green function
/// `G^{λ,ε}`.
#[derive(Debug, Clone)]
pub struct RadialKernel {
    dim: usize,
    shape: Shape,
    length_scale: f64,
    /// `(r_k, sup_{s ≥ r_k} ‖∇²k‖(s))` on an increasing radial scan.
    envelope: Vec<(f64, f64)>,
}

impl RadialKernel {
    /// The transition density `p_ε`, ε > 0.
    pub fn density(motion: Motion, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return domain(format!("density kernel needs eps > 0, got {eps}"));
        }
        let scale = eps.powf(1.0 / motion.alpha);
        let norm = scale.powi(-(motion.dim as i32));
        let shape = if motion.is_gaussian() {
            Shape::Gaussian { norm: norm * (2.0 * PI).powf(-(motion.dim as f64) / 2.0), rate: 0.5 / (scale * scale) }
        } else {
            Shape::Scaled { profile: motion.profile()?, scale, norm }
        };
        Ok(Self::assemble(motion.dim, shape, scale))
    }

    /// The Green function `G^{λ,ε}`, built on the default table grid.
    pub fn green(motion: Motion, lambda: f64, eps: f64) -> Result<Self> {
        Ok(Self::from_table(Arc::new(GreenTable::build(motion, lambda, eps)?)))
    }

    pub fn from_table(table: Arc<GreenTable>) -> Self {
        let alpha = table.motion.alpha;
        let mut scale = f64::INFINITY;
        if table.eps > 0.0 {
            scale = scale.min(table.eps.powf(1.0 / alpha));
        }
        if table.lambda > 0.0 {
            scale = scale.min(table.lambda.powf(-1.0 / alpha));
        }
        if !scale.is_finite() {
            scale = 1.0;
        }
        Self::assemble(table.motion.dim, Shape::Green(table), scale)
    }

    fn assemble(dim: usize, shape: Shape, length_scale: f64) -> Self {
        let mut k = Self { dim, shape, length_scale, envelope: Vec::new() };
        k.envelope = k.scan_hessian();
        k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The shortest length on which the kernel varies.
    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// `k(0)`, or `None` when the kernel is singular at the origin.
    pub fn value_at_zero(&self) -> Option<f64> {
        match &self.shape {
            Shape::Gaussian { norm, .. } => Some(*norm),
            Shape::Scaled { profile, norm, .. } => Some(norm * profile.p1(0.0)),
            Shape::Green(t) => t.value_at_zero,
        }
    }

    /// Upper bound on the spectral norm of the Hessian of `x -> k(|x|)`;
    /// infinite when the kernel is not twice differentiable at the origin.
    pub fn hessian_bound(&self) -> f64 {
        self.envelope.first().map_or(f64::INFINITY, |e| e.1)
    }

    /// Upper bound on the Hessian norm over all radii `s ≥ r`.
    pub fn hessian_envelope(&self, r: f64) -> f64 {
        let k = self.envelope.partition_point(|e| e.0 <= r);
        if k == 0 {
            self.hessian_bound()
        } else {
            self.envelope[k - 1].1
        }
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        self.eval_sq(r * r)
    }

    /// Evaluation from the squared radius.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        match &self.shape {
            Shape::Gaussian { norm, rate } => norm * (-r2 * rate).exp(),
            Shape::Scaled { profile, scale, norm } => norm * profile.p1(r2.sqrt() / scale),
            Shape::Green(t) => {
                if r2 == 0.0 {
                    t.value_at_zero.unwrap_or(f64::INFINITY)
                } else {
                    t.eval(r2.sqrt())
                }
            }
        }
    }

    /// `(k, k', k'')` in the radial variable, `r > 0`.
    pub fn derivatives(&self, r: f64) -> (f64, f64, f64) {
        match &self.shape {
            Shape::Gaussian { norm, rate } => {
                let f = norm * (-r * r * rate).exp();
                (f, -2.0 * rate * r * f, (4.0 * rate * rate * r * r - 2.0 * rate) * f)
            }
            Shape::Scaled { profile, scale, norm } => {
                let (f, f1, f2) = profile.p1_derivatives(r / scale);
                (norm * f, norm * f1 / scale, norm * f2 / (scale * scale))
            }
            Shape::Green(t) => t.eval_derivatives(r),
        }
    }

    fn scan_hessian(&self) -> Vec<(f64, f64)> {
        let infinite = vec![(0.0, f64::INFINITY)];
        if self.value_at_zero().is_none() {
            return infinite;
        }
        if let Shape::Green(t) = &self.shape {
            if t.eps == 0.0 {
                // cusp at the origin
                return infinite;
            }
        }
        let steps = 1400;
        let mut scan = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let r = self.length_scale * 10f64.powf(-5.0 + 9.0 * i as f64 / steps as f64);
            let (_, d1, d2) = self.derivatives(r);
            let mut h = d2.abs();
            if self.dim > 1 {
                h = h.max((d1 / r).abs());
            }
            if !h.is_finite() {
                return infinite;
            }
            // margin for the discrete scan
            scan.push((r, 1.25 * h));
        }
        for i in (0..steps).rev() {
            scan[i].1 = scan[i].1.max(scan[i + 1].1);
        }
        // the first scan radius stands in for the origin
        scan[0].0 = 0.0;
        scan
    }
}

/// How a pairing was computed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum SumMethod {
    Exact,
    /// Cloud-in-cell binning with bin width `h`.
    Grid { h: f64 },
}

/// A pairing value with an absolute error bound (zero for exact sums).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PairSum {
    pub value: f64,
    pub bound: f64,
    pub method: SumMethod,
}

impl PairSum {
    pub fn relative_bound(&self) -> f64 {
        if self.bound == 0.0 {
            0.0
        } else {
            self.bound / self.value.abs()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Exact below `exact_pairs`, grid above.
    Auto,
    Exact,
    Grid,
}

#[derive(Debug, Clone, Copy)]
pub struct SumOptions {
    pub strategy: Strategy,
    /// Largest number of atom pairs summed directly in `Auto` mode.
    pub exact_pairs: f64,
    /// Target for the certified relative bound of grid results.
    pub rel_tol: f64,
    /// Largest padded grid.
    pub max_cells: usize,
    /// When the grid cannot reach `rel_tol` within `max_cells`, problems up
    /// to this many pairs are summed directly; larger ones keep the finest
    /// grid result and its bound.
    pub fallback_pairs: f64,
}

impl Default for SumOptions {
    fn default() -> Self {
        Self { strategy: Strategy::Auto, exact_pairs: 1e6, rel_tol: 1e-3, max_cells: 1 << 22, fallback_pairs: 1e9 }
    }
}

/// `m_A m_B Σ k(|x_a - y_b|)` with default options.
pub fn pairwise_kernel_sum(a: &ParticleCloud, b: &ParticleCloud, kernel: &RadialKernel, policy: SelfPairPolicy) -> Result<PairSum> {
    pairwise_kernel_sum_with(a, b, kernel, policy, &SumOptions::default())
}

/// As [`pairwise_kernel_sum`]. The `a = b` terms are the diagonal of a cloud
/// paired with itself (same object); `Exclude` drops them and always sums
/// directly.
pub fn pairwise_kernel_sum_with(
    a: &ParticleCloud,
    b: &ParticleCloud,
    kernel: &RadialKernel,
    policy: SelfPairPolicy,
    opts: &SumOptions,
) -> Result<PairSum> {
    if a.dim != kernel.dim || b.dim != kernel.dim {
        return domain(format!("kernel lives in R^{}, clouds in R^{} and R^{}", kernel.dim, a.dim, b.dim));
    }
    if policy == SelfPairPolicy::Include && kernel.value_at_zero().is_none() {
        return Err(Error::Singular("kernel is infinite at the origin; self pairs must be excluded".into()));
    }
    let exact = PairSum { value: 0.0, bound: 0.0, method: SumMethod::Exact };
    if a.count() == 0 || b.count() == 0 {
        return Ok(exact);
    }
    let same = std::ptr::eq(a, b);
    let pairs = a.count() as f64 * b.count() as f64;
    let grid_ok = kernel.hessian_bound().is_finite() && policy == SelfPairPolicy::Include;
    let use_grid = match opts.strategy {
        Strategy::Exact => false,
        Strategy::Grid => {
            if !grid_ok {
                return Err(Error::Config("grid summation needs a kernel that is smooth at the origin".into()));
            }
            true
        }
        Strategy::Auto => grid_ok && pairs > opts.exact_pairs,
    };
    if use_grid {
        match grid_single(a, b, kernel, opts)? {
            Refined::Done(r) => return Ok(r),
            Refined::Capped(Some(r)) if pairs > opts.fallback_pairs => {
                warn!("pairing grid capped at {} cells; relative bound {:.2e}", opts.max_cells, r.relative_bound());
                return Ok(r);
            }
            _ => debug!("pairing grid exceeds {} cells; summing {pairs:.3e} pairs directly", opts.max_cells),
        }
    }
    let skip_diag = same && policy == SelfPairPolicy::Exclude;
    let value = exact_sum(a, b, &[kernel], skip_diag)[0];
    if !value.is_finite() {
        return Err(Error::Singular("coincident atoms under a kernel that is infinite at the origin".into()));
    }
    Ok(PairSum { value: value * a.atom_mass * b.atom_mass, ..exact })
}

/// Unnormalized `Σ_{a,b} k(|x_a - y_b|)` for several kernels at once. Rows
/// are summed in parallel and combined in index order, so the result does
/// not depend on the thread count.
fn exact_sum(a: &ParticleCloud, b: &ParticleCloud, kernels: &[&RadialKernel], skip_diag: bool) -> Vec<f64> {
    let d = a.dim;
    let q = kernels.len();
    let rows: Vec<Vec<f64>> = (0..a.count())
        .into_par_iter()
        .map(|i| {
            let x = a.point(i);
            let mut acc = vec![0.0; q];
            for (j, y) in b.positions.chunks_exact(d).enumerate() {
                if skip_diag && i == j {
                    continue;
                }
                let r2: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
                for (s, k) in acc.iter_mut().zip(kernels) {
                    *s += k.eval_sq(r2);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; q];
    for r in rows {
        total.iter_mut().zip(r).for_each(|(t, v)| *t += v);
    }
    total
}

/// `d h² / 4`: per-pair interpolation error per unit Hessian norm.
fn pair_error(dim: usize, h: f64) -> f64 {
    dim as f64 * h * h / 4.0
}

/// Factor by which `h` must shrink for `ratio` (which scales as `h²`) to
/// reach `tol`, or `None` when it already has.
fn refinement(ratio: f64, tol: f64) -> Option<f64> {
    if !(ratio > tol) {
        return None;
    }
    if !ratio.is_finite() {
        return Some(0.5);
    }
    Some(0.95 * (tol / ratio).sqrt())
}

enum Refined<T> {
    Done(T),
    /// The grid cap stopped refinement; holds the finest result, if any.
    Capped(Option<T>),
}

fn grid_single(a: &ParticleCloud, b: &ParticleCloud, kernel: &RadialKernel, opts: &SumOptions) -> Result<Refined<PairSum>> {
    let mut h = kernel.length_scale() / 4.0;
    let mut best = None;
    let mut planner = FftPlanner::new();
    for _ in 0..12 {
        let Some(grid) = Binning::covering(&[a, b], h, opts.max_cells) else {
            return Ok(Refined::Capped(best));
        };
        let ks = grid.kernel_spectrum(kernel, &mut planner)?;
        let hs = grid.envelope_spectrum(kernel, &mut planner);
        let (fa, na) = grid.spectra(a, &mut planner);
        let (value, cells) = if std::ptr::eq(a, b) {
            (grid.pair(&ks, &fa, &fa), grid.pair(&hs, &na, &na))
        } else {
            let (fb, nb) = grid.spectra(b, &mut planner);
            (grid.pair(&ks, &fa, &fb), grid.pair(&hs, &na, &nb))
        };
        let bound = grid.certify(kernel, cells, a.total_mass() * b.total_mass());
        let r = PairSum { value, bound, method: SumMethod::Grid { h } };
        match refinement(r.relative_bound(), opts.rel_tol) {
            None => return Ok(Refined::Done(r)),
            Some(f) => h *= f,
        }
        best = Some(r);
    }
    Err(Error::Numerical("grid pairing did not reach its error target".into()))
}

/// Pairings of a sequence of snapshots against one kernel:
/// `lower[i] = Σ_{j<i} k(i, j)` and `diag[i] = k(i, i)` with self pairs
/// included, plus absolute error bounds.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SnapshotPairings {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub lower_bound: Vec<f64>,
    pub diag_bound: Vec<f64>,
    pub method: SumMethod,
}

impl SnapshotPairings {
    fn zeros(len: usize) -> Self {
        Self { lower: vec![0.0; len], diag: vec![0.0; len], lower_bound: vec![0.0; len], diag_bound: vec![0.0; len], method: SumMethod::Exact }
    }

    /// Largest of the aggregate relative bounds of the lower and diagonal parts.
    pub fn relative_bound(&self) -> f64 {
        let part = |v: &[f64], b: &[f64]| {
            let bs: f64 = b.iter().sum();
            if bs == 0.0 {
                0.0
            } else {
                bs / v.iter().sum::<f64>().abs()
            }
        };
        part(&self.lower, &self.lower_bound).max(part(&self.diag, &self.diag_bound))
    }
}

/// All `lower` and `diag` pairings of `snaps` for every kernel, sharing one
/// binning and one transform per snapshot across kernels.
pub fn snapshot_pairings(snaps: &[&ParticleCloud], kernels: &[&RadialKernel], opts: &SumOptions) -> Result<Vec<SnapshotPairings>> {
    let Some(first) = kernels.first() else {
        return Ok(Vec::new());
    };
    let dim = first.dim;
    if kernels.iter().any(|k| k.dim != dim) || snaps.iter().any(|s| s.dim != dim) {
        return domain("kernels and snapshots must share one dimension");
    }
    if kernels.iter().any(|k| k.value_at_zero().is_none()) {
        return Err(Error::Singular("snapshot pairings include self pairs; kernel is infinite at the origin".into()));
    }
    let smooth = kernels.iter().all(|k| k.hessian_bound().is_finite());
    let counts: Vec<f64> = snaps.iter().map(|s| s.count() as f64).collect();
    let mut before = 0.0;
    let mut pairs = 0.0;
    for c in &counts {
        before += c;
        pairs += c * before;
    }
    let use_grid = match opts.strategy {
        Strategy::Exact => false,
        Strategy::Grid if !smooth => return Err(Error::Config("grid summation needs kernels that are smooth at the origin".into())),
        Strategy::Grid => true,
        Strategy::Auto => smooth && pairs > opts.exact_pairs,
    };
    if use_grid {
        match grid_snapshots(snaps, kernels, opts)? {
            Refined::Done(r) => return Ok(r),
            Refined::Capped(Some(r)) if pairs > opts.fallback_pairs => {
                let worst = r.iter().map(SnapshotPairings::relative_bound).fold(0.0, f64::max);
                warn!("snapshot grid capped at {} cells; relative bound {worst:.2e}", opts.max_cells);
                return Ok(r);
            }
            _ => debug!("snapshot grid exceeds {} cells; summing {pairs:.3e} pairs directly", opts.max_cells),
        }
    }
    Ok(exact_snapshots(snaps, kernels))
}

fn exact_snapshots(snaps: &[&ParticleCloud], kernels: &[&RadialKernel]) -> Vec<SnapshotPairings> {
    let s = snaps.len();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..s)
        .into_par_iter()
        .map(|i| {
            let mut lower = vec![0.0; kernels.len()];
            for j in 0..i {
                let v = exact_sum(snaps[i], snaps[j], kernels, false);
                let w = snaps[i].atom_mass * snaps[j].atom_mass;
                lower.iter_mut().zip(v).for_each(|(l, x)| *l += w * x);
            }
            let w = snaps[i].atom_mass * snaps[i].atom_mass;
            let diag = exact_sum(snaps[i], snaps[i], kernels, false).into_iter().map(|x| w * x).collect();
            (lower, diag)
        })
        .collect();
    (0..kernels.len())
        .map(|q| {
            let mut out = SnapshotPairings::zeros(s);
            for (i, (l, d)) in rows.iter().enumerate() {
                out.lower[i] = l[q];
                out.diag[i] = d[q];
            }
            out
        })
        .collect()
}

fn grid_snapshots(snaps: &[&ParticleCloud], kernels: &[&RadialKernel], opts: &SumOptions) -> Result<Refined<Vec<SnapshotPairings>>> {
    let mut h = kernels.iter().map(|k| k.length_scale()).fold(f64::INFINITY, f64::min) / 4.0;
    let masses: Vec<f64> = snaps.iter().map(|s| s.total_mass()).collect();
    let mut best = None;
    let mut planner = FftPlanner::new();
    for _ in 0..12 {
        let Some(grid) = Binning::covering(snaps, h, opts.max_cells) else {
            return Ok(Refined::Capped(best));
        };
        let spectra = kernels.iter().map(|k| grid.kernel_spectrum(k, &mut planner)).collect::<Result<Vec<_>>>()?;
        let envelopes: Vec<Vec<f64>> = kernels.iter().map(|k| grid.envelope_spectrum(k, &mut planner)).collect();
        let mut out: Vec<SnapshotPairings> = kernels.iter().map(|_| SnapshotPairings::zeros(snaps.len())).collect();
        let zero = vec![Complex::new(0.0, 0.0); grid.len()];
        let (mut cumulative, mut cumulative_cells) = (zero.clone(), zero);
        let mut mass_before = 0.0;
        for (i, snap) in snaps.iter().enumerate() {
            let (f, n) = grid.spectra(snap, &mut planner);
            for (q, k) in kernels.iter().enumerate() {
                out[q].lower[i] = grid.pair(&spectra[q], &f, &cumulative);
                out[q].diag[i] = grid.pair(&spectra[q], &f, &f);
                out[q].lower_bound[i] = grid.certify(k, grid.pair(&envelopes[q], &n, &cumulative_cells), masses[i] * mass_before);
                out[q].diag_bound[i] = grid.certify(k, grid.pair(&envelopes[q], &n, &n), masses[i] * masses[i]);
            }
            cumulative.iter_mut().zip(&f).for_each(|(c, v)| *c += v);
            cumulative_cells.iter_mut().zip(&n).for_each(|(c, v)| *c += v);
            mass_before += masses[i];
        }
        out.iter_mut().for_each(|o| o.method = SumMethod::Grid { h });
        let worst = out.iter().map(SnapshotPairings::relative_bound).fold(0.0, f64::max);
        match refinement(worst, opts.rel_tol) {
            None => return Ok(Refined::Done(out)),
            Some(f) => h *= f,
        }
        best = Some(out);
    }
    Err(Error::Numerical("grid pairing did not reach its error target".into()))
}

/// Smallest `2^a 3^b 5^c` not below `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// A regular grid covering a set of clouds, padded for aperiodic convolution.
struct Binning {
    lo: Vec<f64>,
    h: f64,
    cells: Vec<usize>,
    padded: Vec<usize>,
}

impl Binning {
    fn covering(clouds: &[&ParticleCloud], h: f64, max_cells: usize) -> Option<Self> {
        let d = clouds.iter().find(|c| c.count() > 0).map(|c| c.dim)?;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for c in clouds {
            for x in c.positions.chunks_exact(d) {
                for a in 0..d {
                    lo[a] = lo[a].min(x[a]);
                    hi[a] = hi[a].max(x[a]);
                }
            }
        }
        let mut cells = Vec::with_capacity(d);
        let mut padded = Vec::with_capacity(d);
        let mut total = 1f64;
        for a in 0..d {
            lo[a] -= 0.5 * h;
            let m = ((hi[a] - lo[a]) / h).floor() + 2.0;
            let p = smooth_size(2 * m as usize);
            total *= p as f64;
            if !(total <= max_cells as f64) {
                return None;
            }
            cells.push(m as usize);
            padded.push(p);
        }
        Some(Self { lo, h, cells, padded })
    }

    fn len(&self) -> usize {
        self.padded.iter().product()
    }

    fn transform(&self, data: &mut [Complex<f64>], planner: &mut FftPlanner<f64>) {
        let d = self.padded.len();
        for axis in 0..d {
            let n = self.padded[axis];
            let fft = planner.plan_fft_forward(n);
            let stride: usize = self.padded[axis + 1..].iter().product();
            if stride == 1 {
                fft.process(data);
                continue;
            }
            let mut buf = vec![Complex::new(0.0, 0.0); n * stride];
            for block in data.chunks_exact_mut(n * stride) {
                for k in 0..n {
                    for s in 0..stride {
                        buf[s * n + k] = block[k * stride + s];
                    }
                }
                fft.process(&mut buf);
                for k in 0..n {
                    for s in 0..stride {
                        block[k * stride + s] = buf[s * n + k];
                    }
                }
            }
        }
    }

    /// Transforms of the cloud-in-cell deposit and of the per-cell masses.
    fn spectra(&self, cloud: &ParticleCloud, planner: &mut FftPlanner<f64>) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
        let d = self.padded.len();
        let mut cic = vec![Complex::new(0.0, 0.0); self.len()];
        let mut cells = cic.clone();
        let mut base = vec![0usize; d];
        let mut frac = vec![0f64; d];
        for x in cloud.positions.chunks_exact(d) {
            for a in 0..d {
                let u = (x[a] - self.lo[a]) / self.h;
                let i = (u.floor() as usize).min(self.cells[a] - 2);
                base[a] = i;
                frac[a] = u - i as f64;
            }
            let mut home = 0;
            for a in 0..d {
                home = home * self.padded[a] + base[a];
            }
            cells[home].re += cloud.atom_mass;
            for corner in 0..(1usize << d) {
                let mut idx = 0;
                let mut w = cloud.atom_mass;
                for a in 0..d {
                    let up = (corner >> a) & 1;
                    idx = idx * self.padded[a] + base[a] + up;
                    w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                cic[idx].re += w;
            }
        }
        self.transform(&mut cic, planner);
        self.transform(&mut cells, planner);
        (cic, cells)
    }

    /// Calls `f(flat, r²)` for every padded cell holding an offset `g - g'`,
    /// with `r²` in units of `h²`.
    fn for_offsets(&self, mut f: impl FnMut(usize, f64)) {
        let d = self.padded.len();
        let mut digits = vec![0usize; d];
        'cells: for flat in 0..self.len() {
            let mut rest = flat;
            for a in (0..d).rev() {
                digits[a] = rest % self.padded[a];
                rest /= self.padded[a];
            }
            let mut r2 = 0.0;
            for a in 0..d {
                let (i, p, m) = (digits[a], self.padded[a], self.cells[a]);
                let off = if i < m {
                    i as f64
                } else if i + m > p {
                    i as f64 - p as f64
                } else {
                    continue 'cells;
                };
                r2 += off * off;
            }
            f(flat, r2);
        }
    }

    /// Transform of the Hessian envelope at the smallest separation two atoms
    /// in cells `g - g'` apart can have, widened by the interpolation reach:
    /// `H*(h (|g - g'| - 3√d))`.
    fn envelope_spectrum(&self, kernel: &RadialKernel, planner: &mut FftPlanner<f64>) -> Vec<f64> {
        let reach = 3.0 * (self.padded.len() as f64).sqrt();
        let mut data = vec![Complex::new(0.0, 0.0); self.len()];
        self.for_offsets(|flat, r2| data[flat].re = kernel.hessian_envelope(self.h * (r2.sqrt() - reach).max(0.0)));
        self.transform(&mut data, planner);
        data.into_iter().map(|v| v.re).collect()
    }

    /// Absolute bound from the envelope pairing of cell masses, padded for
    /// transform rounding.
    fn certify(&self, kernel: &RadialKernel, cells: f64, mass_product: f64) -> f64 {
        let c = pair_error(self.padded.len(), self.h);
        c * (cells.max(0.0) * (1.0 + 1e-9) + 1e-12 * kernel.hessian_bound() * mass_product)
    }

    /// Real part of the transform of the kernel sampled at grid offsets
    /// (the samples are even, so the imaginary part is rounding noise).
    fn kernel_spectrum(&self, kernel: &RadialKernel, planner: &mut FftPlanner<f64>) -> Result<Vec<f64>> {
        let mut data = vec![Complex::new(0.0, 0.0); self.len()];
        let h2 = self.h * self.h;
        self.for_offsets(|flat, r2| data[flat].re = kernel.eval_sq(r2 * h2));
        if data.iter().any(|v| !v.re.is_finite()) {
            return Err(Error::Singular("kernel sampled at the origin is infinite".into()));
        }
        self.transform(&mut data, planner);
        Ok(data.into_iter().map(|v| v.re).collect())
    }

    /// `Σ_{g,g'} A_g k(g - g') B_{g'}` from spectra.
    fn pair(&self, kernel: &[f64], a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
        let s: f64 = kernel.iter().zip(a.iter().zip(b)).map(|(k, (x, y))| k * (x.re * y.re + x.im * y.im)).sum();
        s / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(31), 32);
        assert_eq!(smooth_size(121), 125);
        assert_eq!(smooth_size(1), 1);
    }

    #[test]
    fn refinement_factors() {
        assert_eq!(refinement(1e-4, 1e-3), None);
        assert_eq!(refinement(f64::INFINITY, 1e-3), Some(0.5));
        let f = refinement(4e-3, 1e-3).unwrap();
        assert!((f - 0.475).abs() < 1e-12);
    }
}
