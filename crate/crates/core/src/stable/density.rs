//! Direct evaluation of the radial profile of `p_1`.
//!
//! For α < 2 the motion is Brownian motion run at an independent positive
//! (α/2)-stable time `S` with `E exp(-θS) = exp(-θ^{α/2})`, so
//! `p_1(r) = E[(4πS)^{-d/2} exp(-r²/4S)]`. Kanter's representation
//! `S = (A(θ)/W)^{(1-a)/a}` with `θ ~ U(0,π)`, `W ~ Exp(1)`, `a = α/2` turns
//! this into a double integral whose inner part is smooth in `log W`.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{domain, Error, Result};
use crate::quad::{gauss_kronrod, Tolerance};
use crate::special::{gamma, ln_gamma};

/// Standard Gaussian density (covariance `I`) at radius `r` in R^d.
pub fn gaussian_density(dim: usize, r: f64) -> f64 {
    (2.0 * PI).powf(-(dim as f64) / 2.0) * (-0.5 * r * r).exp()
}

/// Radial profile of `p_1` for α = 1.
pub fn cauchy_density(dim: usize, r: f64) -> f64 {
    let h = (dim as f64 + 1.0) / 2.0;
    gamma(h) * PI.powf(-h) * (1.0 + r * r).powf(-h)
}

/// `p_1(0)`, from integrating the characteristic function radially.
pub fn p1_at_origin(alpha: f64, dim: usize) -> f64 {
    let d = dim as f64;
    if alpha == 2.0 {
        return (2.0 * PI).powf(-d / 2.0);
    }
    gamma(d / alpha) / (alpha * 2f64.powf(d - 1.0) * PI.powf(d / 2.0) * gamma(d / 2.0))
}

/// Coefficient `c_k` of `r^{-kα-d}` in the large-r expansion of `p_1` (α < 2).
pub fn p1_tail_coefficient(alpha: f64, dim: usize, k: u32) -> f64 {
    let d = dim as f64;
    let kf = k as f64;
    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
    sign * PI.powf(-d / 2.0 - 1.0) * 2f64.powf(kf * alpha) * (ln_gamma(kf * alpha / 2.0 + 1.0) + ln_gamma((kf * alpha + d) / 2.0) - ln_gamma(kf + 1.0)).exp()
        * (kf * PI * alpha / 2.0).sin()
}

/// `ln ∫_0^∞ w^m exp(-w - c w^q) dw` by the trapezoid rule in `v = ln w`
/// centred on the maximum of the integrand; the integrand is doubly
/// exponentially decaying in `v` on both sides, so the rule converges
/// geometrically.
fn ln_inner(m: f64, q: f64, c: f64) -> f64 {
    let f = |v: f64| (m + 1.0) * v - v.exp() - c * (q * v).exp();
    let mut v = if c > 0.0 {
        (m + 1.0).ln().min(((m + 1.0) / (c * q)).ln() / q)
    } else {
        (m + 1.0).ln()
    };
    for _ in 0..200 {
        let e1 = v.exp();
        let eq = c * (q * v).exp();
        let g1 = (m + 1.0) - e1 - q * eq;
        let g2 = -e1 - q * q * eq;
        let dv = (-g1 / g2).clamp(-5.0, 5.0);
        v += dv;
        if dv.abs() < 1e-13 {
            break;
        }
    }
    let curvature = v.exp() + q * q * c * (q * v).exp();
    let h = 1.0 / (6.0 * curvature.sqrt());
    let f0 = f(v);
    let mut total = 1.0;
    for sign in [1.0, -1.0] {
        let mut k = 1.0;
        loop {
            let term = (f(v + sign * k * h) - f0).exp();
            total += term;
            if term < 1e-18 && k > 10.0 {
                break;
            }
            k += 1.0;
        }
    }
    (total * h).ln() + f0
}

/// `ln A(θ)` for Kanter's function, given `θ` and `π - θ` separately so that
/// the blow-up at θ → π is evaluated without cancellation.
fn ln_kanter(theta: f64, theta_c: f64, a: f64) -> f64 {
    let sin_theta = if theta <= FRAC_PI_2 { theta.sin() } else { theta_c.sin() };
    (a / (1.0 - a)) * (a * theta).sin().ln() + ((1.0 - a) * theta).sin().ln() - sin_theta.ln() / (1.0 - a)
}

/// `p_1(r)` for α < 2 evaluated from the subordination integral; for α = 2
/// the Gaussian closed form. Used to build kernel tables.
pub fn p1_radial(alpha: f64, dim: usize, r: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return domain(format!("stability index must lie in (0, 2], got {alpha}"));
    }
    if alpha == 2.0 {
        return Ok(gaussian_density(dim, r));
    }
    let a = alpha / 2.0;
    let q = (1.0 - a) / a;
    let d = dim as f64;
    let m = q * d / 2.0;
    let base = -(d / 2.0) * (4.0 * PI).ln();
    let integrand = |theta: f64, theta_c: f64| -> f64 {
        let ln_a = ln_kanter(theta, theta_c, a);
        let c = r * r / 4.0 * (-q * ln_a).exp();
        (base - m * ln_a + ln_inner(m, q, c)).exp()
    };
    let tol = Tolerance::rel(1e-12);
    let head = gauss_kronrod(|th| integrand(th, PI - th), 0.0, FRAC_PI_2, tol)?;
    // θ = π - (π/2) e^{-y} resolves the neighbourhood of π on a log scale.
    let tail = gauss_kronrod(
        |y| {
            let phi = FRAC_PI_2 * (-y).exp();
            integrand(PI - phi, phi) * phi
        },
        0.0,
        60.0,
        tol,
    )?;
    let value = (head.value + tail.value) / PI;
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Numerical(format!("p_1({r}) evaluated to {value} for alpha={alpha}, d={dim}")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_matches_subordination_integral() {
        for dim in 1..=3 {
            for r in [0.0, 0.5, 1.0, 3.0, 10.0, 100.0, 1000.0] {
                let v = p1_radial(1.0, dim, r).unwrap();
                let exact = cauchy_density(dim, r);
                assert!((v / exact - 1.0).abs() < 1e-10, "d={dim} r={r}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn origin_value_matches_integral() {
        for alpha in [0.5, 1.2, 1.5, 1.9] {
            for dim in 1..=3 {
                let v = p1_radial(alpha, dim, 0.0).unwrap();
                let exact = p1_at_origin(alpha, dim);
                assert!((v / exact - 1.0).abs() < 1e-10, "alpha={alpha} d={dim}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn tail_expansion_matches_far_field() {
        for alpha in [0.8, 1.5] {
            for dim in [1, 3] {
                let r = 200.0f64;
                let v = p1_radial(alpha, dim, r).unwrap();
                let series: f64 = (1..=4)
                    .map(|k| p1_tail_coefficient(alpha, dim, k) * r.powf(-(k as f64) * alpha - dim as f64))
                    .sum();
                assert!((v / series - 1.0).abs() < 1e-7, "alpha={alpha} d={dim}: {v} vs {series}");
            }
        }
    }

    #[test]
    fn one_dimensional_values_match_fourier_inversion() {
        // (1/π) ∫_0^∞ cos(rz) exp(-z^α) dz, computed independently with mpmath.
        let cases = [
            (1.5, 0.7, 0.240_784_198_496_686_83),
            (1.5, 2.0, 0.084_539_623_126_444_23),
            (0.5, 2.0, 0.039_142_858_043_966_99),
        ];
        for (alpha, r, want) in cases {
            let got = p1_radial(alpha, 1, r).unwrap();
            assert!((got / want - 1.0).abs() < 1e-9, "alpha={alpha} r={r}: {got} vs {want}");
        }
    }
}
