//! Grid-Fourier evaluation of the (truncated) stable semigroup and of the
//! first and second moment formulas of the truncated superprocess.
//!
//! Initial measures are densities `h(x) dx` sampled on the same grid as the
//! test functions. Every moment has a `particle_*` companion giving the
//! exact `O(1/n)` correction for the particle system with `n` atoms per
//! unit mass started from `n μ(1)` i.i.d. points.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::mechanism::MechanismParams;
use crate::quad::{gauss_kronrod_pieces, simpson_weights, tanh_sinh_upper, Tolerance};
use crate::special::sphere_area;
use crate::stable::{motion_symbol, p1_at_origin, Motion};

/// Cubic grid `[lo, lo + n h)^d` with periodic wrap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// Points per axis.
    pub n: usize,
    pub h: f64,
    pub lo: f64,
    /// Width of the border that data are assumed to vanish in (or be
    /// constant across); bounds the evolution time before wrap-around.
    pub margin: f64,
}

impl GridSpec {
    /// Grid covering `[-half_width - margin, half_width + margin]^d`.
    pub fn centered(dim: usize, half_width: f64, h: f64, margin: f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return config(format!("grids are supported for 1 <= d <= 3, got {dim}"));
        }
        if !(h > 0.0 && half_width >= 0.0 && margin >= 0.0) {
            return config("grid needs h > 0 and non-negative extents");
        }
        let span = 2.0 * (half_width + margin);
        let mut n = (span / h).ceil() as usize;
        n += n % 2;
        let n = n.max(2);
        if n.pow(dim as u32) > 1 << 26 {
            return config(format!("grid with {n}^{dim} points is too large"));
        }
        Ok(Self { dim, n, h, lo: -(n as f64) * h / 2.0, margin })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Coordinates of the flat index `idx` (last axis fastest).
    pub fn point(&self, mut idx: usize, out: &mut [f64]) {
        for a in (0..self.dim).rev() {
            out[a] = self.lo + (idx % self.n) as f64 * self.h;
            idx /= self.n;
        }
    }

    /// `|z|` of the frequency at flat index `idx`.
    fn frequency_norm(&self, mut idx: usize) -> f64 {
        let base = 2.0 * std::f64::consts::PI / (self.n as f64 * self.h);
        let mut s = 0.0;
        for _ in 0..self.dim {
            let m = idx % self.n;
            let k = if m <= self.n / 2 { m as f64 } else { m as f64 - self.n as f64 };
            s += (k * base).powi(2);
            idx /= self.n;
        }
        s.sqrt()
    }
}

/// Real samples on a [`GridSpec`].
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim];
        let values = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut x);
                f(&x)
            })
            .collect();
        Self { grid, values }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `∫ f g dx`.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn product(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        GridFunction { grid: self.grid, values }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= c);
        self
    }

    /// Samples at the nearest grid point (no interpolation).
    pub fn at(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let mut idx = 0;
        for &xi in x {
            let i = (((xi - g.lo) / g.h).round() as isize).rem_euclid(g.n as isize) as usize;
            idx = idx * g.n + i;
        }
        self.values[idx]
    }

    /// Embeds into a grid with `extra` more points on each side of every
    /// axis, extending by the edge value.
    fn widened(&self, extra: usize) -> GridFunction {
        let g = self.grid;
        let n2 = g.n + 2 * extra;
        let grid = GridSpec { n: n2, lo: g.lo - extra as f64 * g.h, margin: g.margin + extra as f64 * g.h, ..g };
        let mut values = vec![0.0; grid.len()];
        for (i, v) in values.iter_mut().enumerate() {
            let mut rem = i;
            let mut src = 0;
            let mut stride = 1;
            for _ in 0..g.dim {
                let m = rem % n2;
                rem /= n2;
                let s = m.saturating_sub(extra).min(g.n - 1);
                src += s * stride;
                stride *= g.n;
            }
            *v = self.values[src];
        }
        GridFunction { grid, values }
    }

    fn cropped(&self, extra: usize) -> GridFunction {
        let big = self.grid;
        let n = big.n - 2 * extra;
        let grid = GridSpec { n, lo: big.lo + extra as f64 * big.h, margin: big.margin - extra as f64 * big.h, ..big };
        let mut values = vec![0.0; grid.len()];
        for (i, v) in values.iter_mut().enumerate() {
            let mut rem = i;
            let mut src = 0;
            let mut stride = 1;
            for _ in 0..grid.dim {
                src += (rem % n + extra) * stride;
                rem /= n;
                stride *= big.n;
            }
            *v = self.values[src];
        }
        GridFunction { grid, values }
    }

    pub fn spectrum(&self) -> Spectrum {
        let mut data: Vec<Complex<f64>> = self.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft_nd(&mut data, self.grid, false);
        Spectrum { grid: self.grid, data }
    }

    /// Applies the Fourier multiplier `m(|z|)`.
    pub fn apply_multiplier(&self, m: impl Fn(f64) -> f64) -> GridFunction {
        let mut s = self.spectrum();
        s.multiply(m);
        s.to_function()
    }
}

/// Discrete Fourier coefficients of a [`GridFunction`].
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub grid: GridSpec,
    data: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn multiply(&mut self, m: impl Fn(f64) -> f64) {
        for (i, c) in self.data.iter_mut().enumerate() {
            *c *= m(self.grid.frequency_norm(i));
        }
    }

    pub fn to_function(mut self) -> GridFunction {
        fft_nd(&mut self.data, self.grid, true);
        let scale = 1.0 / self.grid.len() as f64;
        GridFunction { grid: self.grid, values: self.data.iter().map(|c| c.re * scale).collect() }
    }

    /// `∫ f (m * g) dx` for real `f`, `g` from their spectra.
    pub fn pairing(&self, other: &Spectrum, m: impl Fn(f64) -> f64) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .enumerate()
            .map(|(i, (a, b))| (a.conj() * b).re * m(self.grid.frequency_norm(i)))
            .sum();
        s * self.grid.cell_volume() / self.grid.len() as f64
    }
}

fn fft_nd(data: &mut [Complex<f64>], grid: GridSpec, inverse: bool) {
    let n = grid.n;
    let mut planner = FftPlanner::new();
    let fft: Arc<dyn Fft<f64>> = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut line = vec![Complex::new(0.0, 0.0); n];
    let total = grid.len();
    // axis a has stride n^{dim-1-a}
    for a in 0..grid.dim {
        let stride = n.pow((grid.dim - 1 - a) as u32);
        for start in 0..total {
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[start + k * stride];
            }
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                data[start + k * stride] = *v;
            }
        }
    }
}

/// `S_t f`, or `S_t^K f = e^{-C_β(K) t} S_t f` when `truncated`.
///
/// When the grid margin is below `4 t^{1/α}` the function is extended by its
/// edge values onto a wider grid, evolved there and cropped back.
pub fn apply_semigroup(f: &GridFunction, t: f64, truncated: bool, params: &MechanismParams) -> Result<GridFunction> {
    if !(t >= 0.0) {
        return domain(format!("evolution time must be non-negative, got {t}"));
    }
    if params.dim != f.grid.dim {
        return config(format!("grid dimension {} does not match d={}", f.grid.dim, params.dim));
    }
    let damp = if truncated { (-params.c_beta_k() * t).exp() } else { 1.0 };
    if t == 0.0 {
        return Ok(f.clone().scaled(damp));
    }
    let alpha = params.alpha;
    let need = 4.0 * t.powf(1.0 / alpha);
    let evolve = |g: &GridFunction| g.apply_multiplier(|z| (-t * motion_symbol(alpha, z)).exp() * damp);
    if f.grid.margin >= need {
        return Ok(evolve(f));
    }
    let extra = ((need - f.grid.margin) / f.grid.h).ceil() as usize;
    log::warn!("grid margin {} below {need:.3}; widening by {extra} points per side", f.grid.margin);
    let wide = f.widened(extra);
    if wide.grid.len() > 1 << 26 {
        return Err(Error::Config("widened grid is too large".into()));
    }
    Ok(evolve(&wide).cropped(extra))
}

fn require_second_moments(params: &MechanismParams) -> Result<()> {
    if params.is_truncated() {
        Ok(())
    } else {
        domain("second moment infinite for untruncated β<1 process")
    }
}

/// `E_μ[Y_t^K(φ)] = μ(S_t^K φ)`.
pub fn first_moment(h: &GridFunction, phi: &GridFunction, t: f64, params: &MechanismParams) -> Result<f64> {
    Ok(h.inner(&apply_semigroup(phi, t, true, params)?))
}

/// `(μ(S_t^K φ))² + χ(2) μ(∫_0^t S_{t-s}^K((S_s^K φ)²) ds)` with composite
/// Simpson over `intervals` steps.
pub fn second_moment(h: &GridFunction, phi: &GridFunction, t: f64, params: &MechanismParams, intervals: usize) -> Result<f64> {
    cross_moment(h, phi, phi, t, t, params, intervals)
}

/// `E[Y_t(φ) Y_s(ψ)]` for `t >= s`:
/// `μ(S_t^K φ) μ(S_s^K ψ) + χ(2) μ(∫_0^s S_r^K(S_{t-r}^K φ · S_{s-r}^K ψ) dr)`.
pub fn cross_moment(
    h: &GridFunction,
    phi: &GridFunction,
    psi: &GridFunction,
    t: f64,
    s: f64,
    params: &MechanismParams,
    intervals: usize,
) -> Result<f64> {
    require_second_moments(params)?;
    if !(t >= s && s >= 0.0) {
        return domain(format!("cross moment needs t >= s >= 0, got t={t}, s={s}"));
    }
    let mean = first_moment(h, phi, t, params)? * first_moment(h, psi, s, params)?;
    if s == 0.0 {
        return Ok(mean);
    }
    let (nodes, weights) = simpson_weights(0.0, s, intervals)?;
    let mut acc = 0.0;
    for (r, w) in nodes.iter().zip(&weights) {
        let a = apply_semigroup(phi, t - r, true, params)?;
        let b = apply_semigroup(psi, s - r, true, params)?;
        // μ(S_r g) = ∫ (S_r h) g by symmetry of the kernel
        let hr = apply_semigroup(h, *r, true, params)?;
        acc += w * hr.inner(&a.product(&b));
    }
    Ok(mean + params.chi(2) * acc)
}

/// Finite-`n` correction to [`cross_moment`] for the particle system:
/// `(1/n)[μ(S_s^K(F ψ)) - μ(S_s^K F) μ(S_s^K ψ)/μ(1)]`, `F = S_{t-s}^K φ`.
pub fn particle_cross_correction(
    h: &GridFunction,
    phi: &GridFunction,
    psi: &GridFunction,
    t: f64,
    s: f64,
    params: &MechanismParams,
    n: f64,
) -> Result<f64> {
    if !(t >= s && s >= 0.0) {
        return domain(format!("cross moment needs t >= s >= 0, got t={t}, s={s}"));
    }
    let f = apply_semigroup(phi, t - s, true, params)?;
    let mass = h.integral();
    let joint = first_moment(h, &f.product(psi), s, params)?;
    let split = first_moment(h, &f, s, params)? * first_moment(h, psi, s, params)? / mass;
    Ok((joint - split) / n)
}

/// A radial kernel given through its Fourier transform as a function of the
/// motion symbol value `ψ = ψ(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// `p_ε`, transform `e^{-εψ}`.
    Density { eps: f64 },
    /// `G^{λ,ε}`, transform `e^{-ε(λ+ψ)}/(λ+ψ)`.
    Green { lambda: f64, eps: f64 },
}

impl KernelSpec {
    pub fn transform(&self, psi: f64) -> f64 {
        match *self {
            KernelSpec::Density { eps } => (-eps * psi).exp(),
            KernelSpec::Green { lambda, eps } => (-eps * (lambda + psi)).exp() / (lambda + psi),
        }
    }

    fn validate(&self, motion: Motion) -> Result<()> {
        let (d, alpha) = (motion.dim as f64, motion.alpha);
        let ok = match *self {
            KernelSpec::Density { eps } => eps > 0.0,
            // bounded at the origin needs ε > 0 or d < α; integrable needs λ > 0 or d > α
            KernelSpec::Green { lambda, eps } => lambda >= 0.0 && eps >= 0.0 && (eps > 0.0 || d < alpha) && (lambda > 0.0 || d > alpha),
        };
        if ok {
            Ok(())
        } else {
            domain(format!("kernel {self:?} is not bounded and integrable for alpha={alpha}, d={}", motion.dim))
        }
    }
}

/// Both terms of the kernel cross moment `E ∫∫ k(x-y) Y_t(dx) Y_s(dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMoment {
    /// `e^{-C(t+s)} ∫∫ k(z_1 - z_2) (S_t h)(z_1) (S_s h)(z_2)`
    pub independent: f64,
    /// `χ(2) e^{-C(t+s)} μ(1) ∫_0^s e^{Cr} (p_{t+s-2r} * k)(0) dr`
    pub common_ancestor: f64,
    /// `O(1/n)` particle-system correction (zero when `n` is infinite).
    pub particle: f64,
}

impl KernelMoment {
    pub fn total(&self) -> f64 {
        self.independent + self.common_ancestor + self.particle
    }
}

/// Precomputed spectrum of `h` for repeated kernel cross moments.
#[derive(Debug, Clone)]
pub struct KernelMomentOracle {
    pub params: MechanismParams,
    pub kernel: KernelSpec,
    spectrum: Spectrum,
    mass: f64,
}

impl KernelMomentOracle {
    pub fn new(h: &GridFunction, kernel: KernelSpec, params: MechanismParams) -> Result<Self> {
        require_second_moments(&params)?;
        kernel.validate(params.motion())?;
        if params.dim != h.grid.dim {
            return config("grid dimension does not match the mechanism");
        }
        Ok(Self { params, kernel, spectrum: h.spectrum(), mass: h.integral() })
    }

    /// `(p_a * k)(0) = (2π)^{-d} ∫ e^{-aψ(z)} k̂(z) dz`.
    pub fn kernel_at_origin(&self, a: f64) -> Result<f64> {
        let m = self.params.motion();
        if let KernelSpec::Density { eps } = self.kernel {
            return Ok((a + eps).powf(-(m.dim as f64) / m.alpha) * p1_at_origin(m.alpha, m.dim));
        }
        let d = m.dim;
        let f = |rho: f64| {
            let psi = motion_symbol(m.alpha, rho);
            // a = 0 would give 0·∞ at ρ = ∞
            let decay = if a > 0.0 { (-a * psi).exp() } else { 1.0 };
            rho.powi(d as i32 - 1) * decay * self.kernel.transform(psi)
        };
        let v = tanh_sinh_upper(f, 0.0, Tolerance::new(1e-300, 1e-12))?.value;
        Ok(sphere_area(d) * v / (2.0 * std::f64::consts::PI).powi(d as i32))
    }

    /// Kernel cross moment at `t >= s`; `n` particles per unit mass
    /// (`f64::INFINITY` for the superprocess itself).
    pub fn moment(&self, t: f64, s: f64, n: f64) -> Result<KernelMoment> {
        if !(t >= s && s >= 0.0) {
            return domain(format!("cross moment needs t >= s >= 0, got t={t}, s={s}"));
        }
        let c = self.params.c_beta_k();
        let alpha = self.params.alpha;
        let damp = (-c * (t + s)).exp();
        let kernel = self.kernel;
        let independent = damp * self.spectrum.pairing(&self.spectrum, |z| {
            let psi = motion_symbol(alpha, z);
            (-(t + s) * psi).exp() * kernel.transform(psi)
        });
        let common_ancestor = self.common_ancestor(t, s)?;
        let particle = if n.is_finite() {
            self.mass / n * (-c * t).exp() * self.kernel_at_origin(t - s)? - independent / (n * self.mass)
        } else {
            0.0
        };
        Ok(KernelMoment { independent, common_ancestor, particle })
    }

    /// `χ(2) e^{-C(t+s)} μ(1) ∫_0^s e^{Cr} (p_{t+s-2r} * k)(0) dr`.
    fn common_ancestor(&self, t: f64, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        let c = self.params.c_beta_k();
        let integrand = |r: f64| (c * r).exp() * self.kernel_at_origin(t + s - 2.0 * r).unwrap_or(f64::NAN);
        let est = gauss_kronrod_pieces(integrand, &[0.0, 0.5 * s, 0.9 * s, s], Tolerance::new(1e-300, 1e-10))?;
        Ok(self.params.chi(2) * (-c * (t + s)).exp() * self.mass * est.value)
    }

    /// Expectation of the time-discretized approximating SILT
    /// `Δ²[Σ_{j<i<J} k(ij) + ½ Σ_{j<J} k(jj)]` with `k(ij)` the kernel
    /// pairing of the snapshots at `iΔ` and `jΔ`.
    pub fn discrete_silt_mean(&self, delta: f64, steps: usize, n: f64) -> Result<f64> {
        if !(delta > 0.0) || steps == 0 {
            return domain(format!("need delta > 0 and at least one step, got delta={delta}, steps={steps}"));
        }
        // The independent term depends on (i, j) only through i + j, so its
        // weighted sum is one spectral pass with a polynomial in e^{-Δ(ψ+C)}.
        let mut weights = vec![0.0; 2 * steps - 1];
        for i in 0..steps {
            for j in 0..=i {
                weights[i + j] += if i == j { 0.5 } else { 1.0 };
            }
        }
        let (c, alpha, kernel) = (self.params.c_beta_k(), self.params.alpha, self.kernel);
        let independent = self.spectrum.pairing(&self.spectrum, |z| {
            let psi = motion_symbol(alpha, z);
            let q = (-delta * (psi + c)).exp();
            weights.iter().rev().fold(0.0, |acc, w| acc * q + w) * kernel.transform(psi)
        });
        let mut acc = if n.is_finite() { independent * (1.0 - 1.0 / (n * self.mass)) } else { independent };
        for i in 0..steps {
            for j in 0..=i {
                let w = if i == j { 0.5 } else { 1.0 };
                let (t, s) = (i as f64 * delta, j as f64 * delta);
                let mut rest = self.common_ancestor(t, s)?;
                if n.is_finite() {
                    rest += self.mass / n * (-c * t).exp() * self.kernel_at_origin(t - s)?;
                }
                acc += w * rest;
            }
        }
        Ok(delta * delta * acc)
    }
}

/// `kernel_cross_moment` as a one-shot call; see [`KernelMomentOracle`].
pub fn kernel_cross_moment(h: &GridFunction, kernel: KernelSpec, t: f64, s: f64, params: &MechanismParams) -> Result<KernelMoment> {
    KernelMomentOracle::new(h, kernel, *params)?.moment(t, s, f64::INFINITY)
}

/// Density of `N(0, var·I)` at `x`; handy test function and initial density.
pub fn gaussian_bump(x: &[f64], var: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (-0.5 * r2 / var).exp() / (2.0 * std::f64::consts::PI * var).powf(x.len() as f64 / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_silt_mean_matches_the_double_sum_of_moments() {
        let g = GridSpec::centered(1, 4.0, 0.1, 6.0).unwrap();
        let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.3));
        let p = MechanismParams::new(1.5, 1, 0.5, 2.0).unwrap();
        for kernel in [KernelSpec::Density { eps: 0.2 }, KernelSpec::Green { lambda: 1.0, eps: 0.1 }] {
            let o = KernelMomentOracle::new(&h, kernel, p).unwrap();
            let (delta, steps) = (0.125, 8);
            for n in [50.0, f64::INFINITY] {
                let mut direct = 0.0;
                for i in 0..steps {
                    for j in 0..=i {
                        let w = if i == j { 0.5 } else { 1.0 };
                        direct += w * o.moment(i as f64 * delta, j as f64 * delta, n).unwrap().total();
                    }
                }
                direct *= delta * delta;
                let fast = o.discrete_silt_mean(delta, steps, n).unwrap();
                assert!((fast / direct - 1.0).abs() < 1e-12, "{kernel:?} n={n}: {fast} vs {direct}");
            }
        }
        assert!(KernelMomentOracle::new(&h, KernelSpec::Density { eps: 0.2 }, p).unwrap().discrete_silt_mean(0.1, 0, 10.0).is_err());
    }

    #[test]
    fn widen_then_crop_is_identity() {
        let g = GridSpec::centered(2, 1.0, 0.25, 0.0).unwrap();
        let f = GridFunction::from_fn(g, |x| x[0] + 10.0 * x[1]);
        let back = f.widened(3).cropped(3);
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.values, f.values);
    }

    #[test]
    fn parseval_pairing_matches_inner_product() {
        let g = GridSpec::centered(2, 2.0, 0.1, 1.0).unwrap();
        let f = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.3));
        let k = GridFunction::from_fn(g, |x| gaussian_bump(&[x[0] - 0.2, x[1]], 0.5));
        let direct = f.inner(&k);
        let spectral = f.spectrum().pairing(&k.spectrum(), |_| 1.0);
        assert!((direct - spectral).abs() < 1e-12);
    }
}
