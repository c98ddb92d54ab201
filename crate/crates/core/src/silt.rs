//! Approximating and renormalized self-intersection local times of a
//! simulated path, and the terms of the regularized Tanaka decomposition.
//!
//! Time integrals use the snapshots `t_j = jΔ`, `j < J = T/Δ`: left-endpoint
//! rectangles off the diagonal of the simplex and weight ½ on it.
//!
//! With `k(i, j)` the pairing of snapshots `i` and `j`, `lower[i] = Σ_{j<i}
//! k(i, j)`, `diag[i] = k(i, i)` and `E = e^{λε}`:
//!
//! * `γ  = Δ² Σ_{i<J} (lower_p[i] + diag_p[i]/2)`
//! * `T1 = λ E Δ² Σ_{i<J} (lower_G[i] + diag_G[i]/2)`
//! * `T2 = -E Δ lower_G[J]`
//! * `T3 = E Δ Σ_{i<J} diag_G[i]`, and `γ̃ = γ - T3`
//! * `T4 = E Δ Σ_{i<J} ΔM_i`, the martingale increments of the integrand
//!   `Σ_{j≤i} Y_{t_j}(G(x - ·))` with the generator applied through
//!   `Δ_α G = λG - e^{-λε} p_ε`.
//!
//! Summation by parts gives `γ - Σ T = -(Δ²/2) Σ_{i<J} (diag_p[i] - λ E
//! diag_G[i])`, which is `O(Δ)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::pairsum::{snapshot_pairings, RadialKernel, SnapshotPairings, SumOptions};
use crate::particles::{ParticleCloud, PathRecord};
use crate::stable::Motion;

/// The kernels `p_ε` and `G^{λ,ε}` for a list of ε at one λ, built once and
/// shared read-only across paths.
#[derive(Debug, Clone)]
pub struct SiltKernels {
    pub motion: Motion,
    pub lambda: f64,
    pub eps: Vec<f64>,
    density: Vec<RadialKernel>,
    green: Vec<RadialKernel>,
}

impl SiltKernels {
    pub fn new(motion: Motion, eps: &[f64], lambda: f64) -> Result<Self> {
        if eps.is_empty() {
            return domain("need at least one eps");
        }
        if let Some(e) = eps.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return domain(format!("eps must be positive, got {e}"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return domain(format!("lambda must be positive, got {lambda}"));
        }
        let density = eps.iter().map(|&e| RadialKernel::density(motion, e)).collect::<Result<Vec<_>>>()?;
        let green = eps.par_iter().map(|&e| RadialKernel::green(motion, lambda, e)).collect::<Result<Vec<_>>>()?;
        Ok(Self { motion, lambda, eps: eps.to_vec(), density, green })
    }

    pub fn density(&self, i: usize) -> &RadialKernel {
        &self.density[i]
    }

    pub fn green(&self, i: usize) -> &RadialKernel {
        &self.green[i]
    }
}

/// One row of a [`SiltSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiltTerms {
    pub eps: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    /// Certified bound on the error of `gamma` from grid summation.
    pub gamma_bound: f64,
}

impl SiltTerms {
    /// `T1 + T2 + T3 + T4`, which reconstructs `γ` up to `O(Δ)`.
    pub fn tanaka_sum(&self) -> f64 {
        self.t1 + self.t2 + self.t3 + self.t4
    }

    /// `|γ - (T1 + T2 + T3 + T4)| / γ`.
    pub fn closure_gap(&self) -> f64 {
        (self.gamma - self.tanaka_sum()).abs() / self.gamma
    }
}

/// `γ`, `γ̃` and the Tanaka terms of one path for every ε at one λ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiltSeries {
    pub path_id: u64,
    pub horizon: f64,
    pub delta: f64,
    pub rows: Vec<SiltTerms>,
}

/// The Tanaka right-hand side for one `(ε, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TanakaTerms {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
}

/// Snapshots `0..=J` with `J = T/Δ`.
fn snapshots_to(path: &PathRecord, horizon: f64) -> Result<(Vec<&ParticleCloud>, f64)> {
    let delta = path.delta();
    let end = *path.times.last().unwrap_or(&0.0);
    if !(horizon > 0.0) || horizon > end * (1.0 + 1e-12) {
        return domain(format!("horizon {horizon} outside the recorded range (0, {end}]"));
    }
    let steps = horizon / delta;
    let j = steps.round();
    if (steps - j).abs() > 1e-9 * steps.max(1.0) || j < 1.0 {
        return domain(format!("horizon {horizon} is not a multiple of the snapshot interval {delta}"));
    }
    Ok((path.snapshots[..=j as usize].iter().collect(), delta))
}

fn assemble(eps: f64, lambda: f64, delta: f64, p: &SnapshotPairings, g: &SnapshotPairings) -> SiltTerms {
    let j = p.lower.len() - 1;
    let e = (lambda * eps).exp();
    let simplex = |v: &SnapshotPairings| (0..j).map(|i| v.lower[i] + 0.5 * v.diag[i]).sum::<f64>();
    let gamma = delta * delta * simplex(p);
    let gamma_bound = delta * delta * (0..j).map(|i| p.lower_bound[i] + 0.5 * p.diag_bound[i]).sum::<f64>();
    let t1 = lambda * e * delta * delta * simplex(g);
    let t2 = -e * delta * g.lower[j];
    let t3 = e * delta * g.diag[..j].iter().sum::<f64>();
    let damp = (-lambda * eps).exp();
    let increments: f64 = (0..j)
        .map(|i| {
            let drift = lambda * (g.lower[i] + g.diag[i]) - damp * (p.lower[i] + p.diag[i]);
            g.lower[i + 1] - g.lower[i] - g.diag[i] - delta * drift
        })
        .sum();
    let t4 = e * delta * increments;
    SiltTerms { eps, lambda, gamma, gamma_tilde: gamma - t3, t1, t2, t3, t4, gamma_bound }
}

/// All rows for one path. Every kernel shares a single pass over the
/// snapshots.
pub fn silt_series(path: &PathRecord, path_id: u64, kernels: &SiltKernels, horizon: f64, opts: &SumOptions) -> Result<SiltSeries> {
    if path.dim != kernels.motion.dim {
        return domain(format!("path lives in R^{}, kernels in R^{}", path.dim, kernels.motion.dim));
    }
    let (snaps, delta) = snapshots_to(path, horizon)?;
    let all: Vec<&RadialKernel> = kernels.density.iter().chain(&kernels.green).collect();
    let pairings = snapshot_pairings(&snaps, &all, opts)?;
    let (p, g) = pairings.split_at(kernels.eps.len());
    let rows = kernels.eps.iter().enumerate().map(|(i, &e)| assemble(e, kernels.lambda, delta, &p[i], &g[i])).collect();
    Ok(SiltSeries { path_id, horizon, delta, rows })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return domain(format!("eps must be positive, got {eps}"));
    }
    Ok(())
}

/// `γ_{X,ε}(T) = Δ² [Σ_{j<i<J} k_ε(i, j) + ½ Σ_{j<J} k_ε(j, j)]`.
pub fn approx_silt(path: &PathRecord, eps: f64, horizon: f64) -> Result<f64> {
    check_eps(eps)?;
    let motion = Motion::new(path.alpha, path.dim)?;
    let (snaps, delta) = snapshots_to(path, horizon)?;
    let k = RadialKernel::density(motion, eps)?;
    let p = &snapshot_pairings(&snaps[..snaps.len() - 1], &[&k], &SumOptions::default())?[0];
    Ok(delta * delta * p.lower.iter().zip(&p.diag).map(|(l, d)| l + 0.5 * d).sum::<f64>())
}

/// `γ̃_{X,ε}(T) = γ_{X,ε}(T) - e^{λε} Δ Σ_{j<J} k_{G^{λ,ε}}(j, j)`.
pub fn renormalized_silt(path: &PathRecord, eps: f64, lambda: f64, horizon: f64) -> Result<f64> {
    Ok(full_row(path, eps, lambda, horizon)?.gamma_tilde)
}

/// `(T1, T2, T3, T4)` of the regularized Tanaka decomposition.
pub fn tanaka_terms(path: &PathRecord, eps: f64, lambda: f64, horizon: f64) -> Result<TanakaTerms> {
    let r = full_row(path, eps, lambda, horizon)?;
    Ok(TanakaTerms { t1: r.t1, t2: r.t2, t3: r.t3, t4: r.t4 })
}

fn full_row(path: &PathRecord, eps: f64, lambda: f64, horizon: f64) -> Result<SiltTerms> {
    check_eps(eps)?;
    let motion = Motion::new(path.alpha, path.dim)?;
    let kernels = SiltKernels::new(motion, &[eps], lambda)?;
    Ok(silt_series(path, 0, &kernels, horizon, &SumOptions::default())?.rows[0])
}
