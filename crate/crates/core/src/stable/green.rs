//! Green functions `G^{λ,ε}(x) = ∫_ε^∞ e^{-λt} p_t(x) dt`.

use std::f64::consts::PI;

use super::table::{log_grid, Spline, GRID_LEN, GRID_R_MAX, GRID_R_MIN};
use super::{Motion, Profile};
use crate::error::{domain, Error, Result};
use crate::quad::{gauss_kronrod_pieces, Tolerance};
use crate::special::gamma;

/// `c(α, d) = Γ((d-α)/2) / (2^{α/2} π^{d/2} Γ(α/2))`, the constant of the
/// closed-form Green function `G(x) = c(α,d)|x|^{α-d}`.
pub fn green_constant(alpha: f64, dim: usize) -> Result<f64> {
    let d = dim as f64;
    if !(d > alpha) {
        return domain(format!("Green closed form requires d > alpha (alpha={alpha}, d={dim})"));
    }
    Ok(gamma((d - alpha) / 2.0) / (2f64.powf(alpha / 2.0) * PI.powf(d / 2.0) * gamma(alpha / 2.0)))
}

/// Tabulated radial profile of `G^{λ,ε}`.
#[derive(Debug, Clone)]
pub struct GreenTable {
    pub motion: Motion,
    pub lambda: f64,
    pub eps: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// True iff λ = ε = 0 and d > α; evaluation then uses `c(α,d)|x|^{α-d}`.
    pub closed_form_flag: bool,
    /// `G^{λ,ε}(0)` when finite.
    pub value_at_zero: Option<f64>,
    pub tail_exponent: f64,
    head_exponent: f64,
    spline: Spline,
}

impl GreenTable {
    /// Builds the table on the default grid; the motion's kernel table must be
    /// registered unless α ∈ {1, 2}.
    pub fn build(motion: Motion, lambda: f64, eps: f64) -> Result<Self> {
        Self::build_with(motion, lambda, eps, false)
    }

    /// As [`GreenTable::build`], but always integrates numerically, even when
    /// the closed form applies. Used to cross-check the closed form.
    pub fn build_by_quadrature(motion: Motion, lambda: f64, eps: f64) -> Result<Self> {
        Self::build_with(motion, lambda, eps, true)
    }

    fn build_with(motion: Motion, lambda: f64, eps: f64, force_quadrature: bool) -> Result<Self> {
        if !(lambda >= 0.0) || !(eps >= 0.0) || !lambda.is_finite() || !eps.is_finite() {
            return domain(format!("need lambda >= 0 and eps >= 0, got {lambda}, {eps}"));
        }
        let d = motion.dim as f64;
        let alpha = motion.alpha;
        if lambda == 0.0 && d <= alpha {
            return domain(format!("G^(0,eps) is infinite for d <= alpha (alpha={alpha}, d={})", motion.dim));
        }
        let closed = lambda == 0.0 && eps == 0.0 && d > alpha;
        let radii = log_grid(GRID_R_MIN, GRID_R_MAX, GRID_LEN);
        if closed && !force_quadrature {
            let c = green_constant(alpha, motion.dim)?;
            let values = radii.iter().map(|r| c * r.powf(alpha - d)).collect();
            return Self::assemble(motion, lambda, eps, radii, values, true, None);
        }
        let profile = motion.profile()?;
        let values = radii
            .iter()
            .map(|&r| green_quadrature(&profile, lambda, eps, r))
            .collect::<Result<Vec<_>>>()?;
        let zero = if eps > 0.0 || d < alpha { Some(green_quadrature(&profile, lambda, eps, 0.0)?) } else { None };
        // Exponentially decaying profiles (α = 2) underflow on the outer grid.
        let keep = values.iter().position(|v| *v < 1e-280).unwrap_or(values.len()).max(4);
        let (radii, values) = (radii[..keep].to_vec(), values[..keep].to_vec());
        Self::assemble(motion, lambda, eps, radii, values, closed, zero)
    }

    fn assemble(
        motion: Motion,
        lambda: f64,
        eps: f64,
        radii: Vec<f64>,
        values: Vec<f64>,
        closed_form_flag: bool,
        value_at_zero: Option<f64>,
    ) -> Result<Self> {
        if values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Numerical("Green table has non-positive values".into()));
        }
        let n = radii.len();
        let slope = |i: usize, j: usize| -(values[j] / values[i]).ln() / (radii[j] / radii[i]).ln();
        let tail_exponent = slope(n - 2, n - 1);
        let head_exponent = match value_at_zero {
            // G(0) - G(r) ~ r^s: s = 2 for smooth kernels, α - d for the cusp at ε = 0
            Some(_) if eps > 0.0 => 2.0,
            Some(_) => motion.alpha - motion.dim as f64,
            None => slope(0, 1),
        };
        let spline = Spline::new(radii.iter().map(|r| r.ln()).collect(), values.iter().map(|v| v.ln()).collect());
        Ok(Self {
            motion,
            lambda,
            eps,
            radii,
            values,
            closed_form_flag,
            value_at_zero,
            tail_exponent,
            head_exponent,
            spline,
        })
    }

    pub fn r_min(&self) -> f64 {
        self.radii[0]
    }

    pub fn r_max(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }

    /// Radial evaluation; `r = 0` is only defined when `value_at_zero` is.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        if self.closed_form_flag {
            return self.values[0] * (r / self.radii[0]).powf(self.motion.alpha - self.motion.dim as f64);
        }
        let r0 = self.radii[0];
        if r < r0 {
            return match self.value_at_zero {
                Some(g0) => g0 + (self.values[0] - g0) * (r / r0).powf(self.head_exponent),
                None => self.values[0] * (r / r0).powf(-self.head_exponent),
            };
        }
        let n = self.radii.len();
        if r > self.radii[n - 1] {
            return self.values[n - 1] * (r / self.radii[n - 1]).powf(-self.tail_exponent);
        }
        self.spline.eval(r.ln()).exp()
    }

    /// `(G, G', G'')` at `r > 0`.
    pub fn eval_derivatives(&self, r: f64) -> (f64, f64, f64) {
        let r0 = self.radii[0];
        let n = self.radii.len();
        let power = |amp: f64, k: f64| (amp, -k * amp / r, k * (k + 1.0) * amp / (r * r));
        if self.closed_form_flag {
            return power(self.eval(r), self.motion.dim as f64 - self.motion.alpha);
        }
        if r < r0 {
            return match self.value_at_zero {
                Some(g0) => {
                    let s = self.head_exponent;
                    let c = (self.values[0] - g0) / r0.powf(s);
                    (g0 + c * r.powf(s), c * s * r.powf(s - 1.0), c * s * (s - 1.0) * r.powf(s - 2.0))
                }
                None => power(self.eval(r), self.head_exponent),
            };
        }
        if r > self.radii[n - 1] {
            return power(self.eval(r), self.tail_exponent);
        }
        let (y, y1, y2) = self.spline.eval3(r.ln());
        let g = y.exp();
        (g, g * y1 / r, g * (y2 + y1 * y1 - y1) / (r * r))
    }
}

/// Evaluates `G^{λ,ε}` at a point.
///
/// Returns [`Error::Singular`] at `x = 0` when the kernel is infinite there.
pub fn green_value(table: &GreenTable, x: &[f64]) -> Result<f64> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return table
            .value_at_zero
            .ok_or_else(|| Error::Singular(format!("G^({},{}) is infinite at the origin", table.lambda, table.eps)));
    }
    Ok(table.eval(r))
}

/// `∫_ε^∞ e^{-λt} t^{-d/α} p_1(t^{-1/α} r) dt`, integrated in `y = ln t`.
pub(crate) fn green_quadrature(profile: &Profile, lambda: f64, eps: f64, r: f64) -> Result<f64> {
    let m = profile.motion();
    let alpha = m.alpha;
    let expo = 1.0 - m.dim as f64 / alpha;
    let integrand = |y: f64| {
        let t = y.exp();
        let kill = if lambda > 0.0 { (-lambda * t).exp() } else { 1.0 };
        kill * (y * expo).exp() * profile.p1((-y / alpha).exp() * r)
    };
    let centre = if r > 0.0 { alpha * r.ln() } else { 0.0 };
    let mut lo = if eps > 0.0 { eps.ln() } else { centre - 25.0 };
    let mut head = 0.0;
    if r == 0.0 && eps == 0.0 {
        // ∫_{-∞}^{lo} e^{y(1-d/α)} p_1(0) dy with the killing factor ≈ 1
        lo = -40.0;
        head = profile.p1(0.0) * (lo * expo).exp() / expo;
    }
    let (hi, tail) = if lambda > 0.0 {
        ((745.0 / lambda).ln(), 0.0)
    } else {
        let hi = centre.max(lo) + 40.0;
        (hi, profile.p1(0.0) * (hi * expo).exp() / -expo)
    };
    if hi <= lo {
        return Ok(0.0);
    }
    let mut breaks = vec![lo];
    for b in [centre - 5.0, centre, centre + 5.0] {
        if b > lo && b < hi {
            breaks.push(b);
        }
    }
    breaks.push(hi);
    let body = gauss_kronrod_pieces(integrand, &breaks, Tolerance::new(1e-300, 1e-11))?;
    Ok(head + body.value + tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_match_gamma_ratios() {
        // Γ(1)/(√2 π^{3/2} Γ(1/2)) = 1/(√2 π²) ≈ 0.07165
        assert!((green_constant(1.0, 3).unwrap() - 1.0 / (2f64.sqrt() * PI * PI)).abs() < 1e-15);
        assert!((green_constant(1.0, 3).unwrap() - 0.071_65).abs() < 1e-5);
        assert!((green_constant(1.0, 2).unwrap() - 1.0 / (2f64.sqrt() * PI)).abs() < 1e-14);
        assert!((green_constant(2.0, 3).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!(matches!(green_constant(2.0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn brownian_resolvent_in_one_dimension() {
        // G^{λ,0}(r) = exp(-sqrt(2λ) r) / sqrt(2λ) for generator Δ/2
        let g = GreenTable::build(Motion::new(2.0, 1).unwrap(), 1.0, 0.0).unwrap();
        let s = 2f64.sqrt();
        for r in [0.0, 1e-3, 0.3, 1.0, 5.0] {
            let want = (-s * r).exp() / s;
            let got = green_value(&g, &[r]).unwrap();
            assert!((got / want - 1.0).abs() < 1e-8, "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn closed_form_is_singular_at_origin() {
        let g = GreenTable::build(Motion::new(2.0, 3).unwrap(), 0.0, 0.0).unwrap();
        assert!(g.closed_form_flag);
        assert!(matches!(green_value(&g, &[0.0, 0.0, 0.0]), Err(Error::Singular(_))));
        let v = green_value(&g, &[0.0, 2.0, 0.0]).unwrap();
        assert!((v - 1.0 / (2.0 * PI) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn quadrature_reproduces_newtonian_potential() {
        let m = Motion::new(2.0, 3).unwrap();
        let q = GreenTable::build_by_quadrature(m, 0.0, 0.0).unwrap();
        let c = GreenTable::build(m, 0.0, 0.0).unwrap();
        for r in [0.01, 0.5, 3.0, 50.0] {
            assert!((q.eval(r) / c.eval(r) - 1.0).abs() < 1e-8, "r={r}");
        }
    }
}
