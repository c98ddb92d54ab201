//! Numerical certificates for kernel tables: resolvent identity in Fourier
//! variables, Riesz composition exponent and the density envelope.

use std::f64::consts::PI;

use super::{motion_symbol, GreenTable, Motion};
use crate::error::{config, domain, Result};
use crate::quad::{gauss_legendre, tanh_sinh, tanh_sinh_estimate, tanh_sinh_upper, Tolerance};
use crate::special::{bessel_j0, sphere_area};

/// Radial Fourier transform `∫ G(|x|) e^{iz·x} dx` of a tabulated profile.
pub fn radial_transform(g: &GreenTable, z: f64) -> Result<f64> {
    let dim = g.motion.dim;
    let kernel = |r: f64| -> f64 {
        let zr = z * r;
        match dim {
            1 => 2.0 * zr.cos(),
            2 => 2.0 * PI * r * bessel_j0(zr),
            _ => {
                let sinc = if zr.abs() < 1e-4 { 1.0 - zr * zr / 6.0 } else { zr.sin() / zr };
                4.0 * PI * r * r * sinc
            }
        }
    };
    if dim > 3 {
        return config(format!("radial transform implemented for d <= 3, got d={dim}"));
    }
    let mut total = 0.0;
    // Core [0, r_min]: substitute r = r_min s² so a cusp |r|^{α-d} is smooth in s.
    let (xs, ws) = gauss_legendre(24);
    let r0 = g.r_min();
    for (x, w) in xs.iter().zip(&ws) {
        let s = 0.5 * (x + 1.0);
        let r = r0 * s * s;
        let val = if r == 0.0 { 0.0 } else { g.eval(r) };
        total += 0.5 * w * val * kernel(r) * 2.0 * r0 * s;
    }
    let mut cache: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; 256];
    for win in g.radii.windows(2) {
        let (a, b) = (win[0], win[1]);
        let n = (12.0 + z * (b - a) * 1.5).ceil() as usize;
        let n = n.min(255);
        let (xs, ws) = cache[n].get_or_insert_with(|| gauss_legendre(n));
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, w) in xs.iter().zip(ws.iter()) {
            let r = mid + half * x;
            total += w * half * g.eval(r) * kernel(r);
        }
    }
    if z == 0.0 {
        let rn = g.r_max();
        let k = g.tail_exponent;
        let d = dim as f64;
        total += sphere_area(dim) * g.eval(rn) * rn.powf(d) / (k - d);
    }
    Ok(total)
}

/// `max_z |(λ + ψ(z)) Ĝ^{λ,ε}(z) - e^{-ε(λ + ψ(z))}|` where `Ĝ` is the
/// radial transform of the tabulated Green function and `ψ` the motion
/// symbol. A small residual certifies the table against the resolvent
/// identity.
pub fn fourier_resolvent_residual(motion: Motion, lambda: f64, eps: f64, zgrid: &[f64]) -> Result<f64> {
    if !(lambda > 0.0) {
        return domain(format!("resolvent residual needs lambda > 0, got {lambda}"));
    }
    let g = GreenTable::build(motion, lambda, eps)?;
    let mut worst: f64 = 0.0;
    for &z in zgrid {
        let sym = lambda + motion_symbol(motion.alpha, z);
        let ghat = radial_transform(&g, z)?;
        worst = worst.max((sym * ghat - (-eps * sym).exp()).abs());
    }
    Ok(worst)
}

/// `∫_{R^d} |z|^{a-d} |z - s e_1|^{b-d} dz` by nested tanh–sinh quadrature.
pub fn riesz_integral(a: f64, b: f64, dim: usize, s: f64) -> Result<f64> {
    let d = dim as f64;
    if !(a > 0.0 && b > 0.0 && a + b < d) {
        return domain(format!("Riesz composition needs a, b > 0 and a + b < d (a={a}, b={b}, d={dim})"));
    }
    if !(s > 0.0) {
        return domain("separation must be positive");
    }
    let tol = Tolerance::rel(1e-10);
    if dim == 1 {
        // u ranges over distances from the nearer singular point
        let outer = |p: f64, q: f64| -> Result<f64> {
            let near = tanh_sinh(|_, u, _| u.powf(p - 1.0) * (u + s).powf(q - 1.0), 0.0, s, tol)?;
            let far = tanh_sinh_upper(|u| u.powf(p - 1.0) * (u + s).powf(q - 1.0), s, tol)?;
            Ok(near.value + far.value)
        };
        let left = outer(a, b)?;
        let right = outer(b, a)?;
        let mid = tanh_sinh(|_, da, db| da.powf(a - 1.0) * db.powf(b - 1.0), 0.0, s, tol)?;
        return Ok(left + mid.value + right);
    }
    // Polar coordinates about 0 with θ the angle to e_1:
    // |z - s e_1|² = (ρ - s)² + 4ρs sin²(θ/2), surface factor sin^{d-2} θ.
    let inner_tol = Tolerance::rel(1e-12);
    let angular = |rho: f64, gap: f64| -> f64 {
        let e = (b - d) / 2.0;
        // nodes with gap below this carry negligible outer weight
        let gap = gap.max(1e-100 * s);
        tanh_sinh_estimate(
            |theta, from0, from_pi| {
                let half = (0.5 * from0).sin();
                let sin_t = if theta < PI / 2.0 { from0.sin() } else { from_pi.sin() };
                (gap * gap + 4.0 * rho * s * half * half).powf(e) * sin_t.powi(dim as i32 - 2)
            },
            0.0,
            PI,
            inner_tol,
        )
        .map(|v| v.value)
        .unwrap_or(f64::NAN)
    };
    let radial = |rho: f64, gap: f64| rho.powf(a - 1.0) * angular(rho, gap);
    let p1 = tanh_sinh(|rho, _, to_s| radial(rho, to_s), 0.0, s, tol)?;
    let p2 = tanh_sinh(|rho, from_s, _| radial(rho, from_s), s, 2.0 * s, tol)?;
    let p3 = tanh_sinh_upper(|rho| radial(rho, rho - s), 2.0 * s, tol)?;
    let total = sphere_area(dim - 1) * (p1.value + p2.value + p3.value);
    if !total.is_finite() {
        return Err(crate::error::Error::Numerical("Riesz quadrature failed".into()));
    }
    Ok(total)
}

/// Log-log least-squares slope of the Riesz composition integral over the
/// given separations; homogeneity predicts `a + b - d`.
pub fn riesz_exponent_check(a: f64, b: f64, dim: usize, separations: &[f64]) -> Result<f64> {
    if separations.len() < 2 {
        return domain("need at least two separations");
    }
    let pts = separations
        .iter()
        .map(|&s| riesz_integral(a, b, dim, s).map(|v| (s.ln(), v.ln())))
        .collect::<Result<Vec<_>>>()?;
    Ok(least_squares_slope(&pts))
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Outcome of [`density_envelope_check`].
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeReport {
    pub pass: bool,
    /// Smallest `c` that bounds the ratio over the fitting samples.
    pub fitted_c: f64,
    /// Largest ratio over the test samples.
    pub test_max: f64,
    /// Supremum of the ratio over all `(t, x)`, from a scan in `u = |x| t^{-1/α}`.
    pub sup: f64,
}

/// Checks `p_t(x) <= c t^{δ-1} |x|^{α-d-αδ}`.
///
/// The ratio equals `p_1(u) u^{d-α+αδ}` with `u = |x| t^{-1/α}`, so it is
/// bounded iff that one-variable function is. `fit` and `test` are `(t, |x|)`
/// samples; the check passes when the test ratios stay below the scanned
/// supremum and the supremum is finite.
pub fn density_envelope_check(motion: Motion, delta: f64, fit: &[(f64, f64)], test: &[(f64, f64)]) -> Result<EnvelopeReport> {
    let d = motion.dim as f64;
    let alpha = motion.alpha;
    if !(alpha < d) {
        return domain(format!("density envelope is only claimed for d > alpha (alpha={alpha}, d={})", motion.dim));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    let profile = motion.profile()?;
    let ratio = |t: f64, r: f64| profile.pt(t, r) / (t.powf(delta - 1.0) * r.powf(alpha - d - alpha * delta));
    let power = d - alpha + alpha * delta;
    let in_u = |u: f64| profile.p1(u) * u.powf(power);
    let mut best = (0.0, 0.0);
    let n = 4000;
    for i in 0..=n {
        let u = (1e-6f64.ln() + (1e12f64.ln()) * i as f64 / n as f64).exp();
        let v = in_u(u);
        if v > best.1 {
            best = (u, v);
        }
    }
    // golden-section refinement around the best scan point
    let (mut lo, mut hi) = ((best.0 * 0.98).ln(), (best.0 * 1.02).ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if in_u(x1.exp()) > in_u(x2.exp()) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let sup = best.1.max(in_u((0.5 * (lo + hi)).exp()));
    let fitted_c = fit.iter().map(|&(t, r)| ratio(t, r)).fold(0.0, f64::max);
    let test_max = test.iter().map(|&(t, r)| ratio(t, r)).fold(0.0, f64::max);
    let pass = sup.is_finite() && test_max.is_finite() && test_max <= sup * (1.0 + 1e-6);
    Ok(EnvelopeReport { pass, fitted_c, test_max, sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::gamma;

    /// Closed-form Riesz composition constant (independent of the quadrature).
    fn riesz_exact(a: f64, b: f64, dim: usize, s: f64) -> f64 {
        let d = dim as f64;
        PI.powf(d / 2.0) * gamma(a / 2.0) * gamma(b / 2.0) * gamma((d - a - b) / 2.0)
            / (gamma((d - a) / 2.0) * gamma((d - b) / 2.0) * gamma((a + b) / 2.0))
            * s.powf(a + b - d)
    }

    #[test]
    fn riesz_integral_matches_closed_form() {
        for (a, b, d) in [(1.0, 1.0, 3), (0.5, 0.5, 2), (0.3, 0.4, 1), (0.7, 1.6, 3)] {
            for s in [0.5, 2.0] {
                let got = riesz_integral(a, b, d, s).unwrap_or_else(|e| panic!("({a},{b},{d}) s={s}: {e}"));
                let want = riesz_exact(a, b, d, s);
                assert!((got / want - 1.0).abs() < 1e-7, "({a},{b},{d}) s={s}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn riesz_rejects_bad_exponents() {
        assert!(riesz_integral(1.5, 1.6, 3, 1.0).is_err());
    }
}
