//! Branching-mechanism constants and functions for the truncated
//! (1+β)-stable mechanism `ψ^K(v) = C_β(K) v + Φ^K(v)`.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad::{gauss_kronrod, gauss_kronrod_pieces, Tolerance};
use crate::special::gamma;
use crate::stable::Motion;

/// The tuple `(α, d, β, K)`; `k = f64::INFINITY` is the untruncated mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub alpha: f64,
    pub dim: usize,
    pub beta: f64,
    #[serde(with = "serde_k")]
    pub k: f64,
}

/// JSON has no infinity; `null` encodes K = ∞.
mod serde_k {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &f64, s: S) -> Result<S::Ok, S::Error> {
        if k.is_finite() {
            s.serialize_f64(*k)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl MechanismParams {
    pub fn new(alpha: f64, dim: usize, beta: f64, k: f64) -> Result<Self> {
        Motion::new(alpha, dim)?;
        if !(beta > 0.0 && beta < 1.0) {
            return domain(format!("beta must lie in (0, 1), got {beta}"));
        }
        if !(k > 0.0) {
            return domain(format!("truncation level K must be positive, got {k}"));
        }
        Ok(Self { alpha, dim, beta, k })
    }

    pub fn motion(&self) -> Motion {
        Motion { alpha: self.alpha, dim: self.dim }
    }

    pub fn is_truncated(&self) -> bool {
        self.k.is_finite()
    }

    /// `η = β(β+1)/Γ(1-β)`.
    pub fn eta(&self) -> f64 {
        self.beta * (self.beta + 1.0) / gamma(1.0 - self.beta)
    }

    /// `C_β(K) = η/(β K^β)`, zero for K = ∞.
    pub fn c_beta_k(&self) -> f64 {
        if self.is_truncated() {
            self.eta() / (self.beta * self.k.powf(self.beta))
        } else {
            0.0
        }
    }

    /// `χ(m) = η K^{m-1-β}/(m-1-β)` for `m >= 2`; infinite when K = ∞.
    pub fn chi(&self, m: u32) -> f64 {
        assert!(m >= 2, "chi(m) is defined for m >= 2");
        if !self.is_truncated() {
            return f64::INFINITY;
        }
        let e = m as f64 - 1.0 - self.beta;
        self.eta() * self.k.powf(e) / e
    }

    fn require_truncated(&self) -> Result<()> {
        if self.is_truncated() {
            Ok(())
        } else {
            domain("K = infinity: use full_mechanism for the untruncated process")
        }
    }

    /// `Φ^K(x) = η ∫_0^K (e^{-ux} - 1 + ux) u^{-β-2} du` by adaptive quadrature.
    pub fn phi_k_integral(&self, x: f64) -> Result<f64> {
        self.require_truncated()?;
        if !(x >= 0.0) {
            return domain(format!("Phi^K needs x >= 0, got {x}"));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        let (b, k) = (self.beta, self.k);
        // u = K s^{1/(1-β)} absorbs the u^{-β} behaviour at 0:
        // u^{-β-2} du = K^{-1-β}/(1-β) · s^{-2/(1-β)} ds.
        let p = 1.0 / (1.0 - b);
        let integrand = |s: f64| {
            if s == 0.0 {
                return 0.5 * (k * x) * (k * x) * k.powf(-1.0 - b) * p;
            }
            let u = k * s.powf(p);
            em1(u * x) * s.powf(-2.0 * p) * k.powf(-1.0 - b) * p
        };
        // the integrand varies on the scale u ~ 1/x, i.e. s ~ (xK)^{-(1-β)}
        let knee = (k * x).powf(-(1.0 - b)).min(1.0);
        let mut breaks = vec![0.0];
        for f in [0.01, 0.1, 1.0, 10.0] {
            let v = knee * f;
            if v < 1.0 {
                breaks.push(v);
            }
        }
        breaks.push(1.0);
        let est = gauss_kronrod_pieces(integrand, &breaks, Tolerance::new(1e-300, 1e-14))?;
        Ok(self.eta() * est.value)
    }

    /// `Φ^K(x) = Σ_{m≥2} (-1)^m χ(m) x^m / m!`, summed in exact fixed-point
    /// arithmetic so the alternating cancellation at large `xK` is harmless.
    /// Returns the sum and a bound on the truncation error (the first omitted
    /// term).
    pub fn phi_k_series(&self, x: f64, tol: f64) -> Result<(f64, f64)> {
        self.require_truncated()?;
        if !(x >= 0.0) {
            return domain(format!("Phi^K needs x >= 0, got {x}"));
        }
        if x == 0.0 {
            return Ok((0.0, 0.0));
        }
        let y = self.k * x;
        let scale = self.eta() * self.k.powf(-1.0 - self.beta);
        let (s, err) = alternating_series(y, self.beta, tol / scale.max(f64::MIN_POSITIVE))?;
        Ok((scale * s, scale * err))
    }

    /// `v^{1+β}`.
    pub fn full_mechanism(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return domain(format!("mechanism needs v >= 0, got {v}"));
        }
        Ok(v.powf(1.0 + self.beta))
    }

    /// `ψ^K(v) = C_β(K) v + Φ^K(v)`, or `v^{1+β}` when K = ∞.
    pub fn psi_k(&self, v: f64) -> Result<f64> {
        if self.is_truncated() {
            Ok(self.c_beta_k() * v + self.phi_k_integral(v)?)
        } else {
            self.full_mechanism(v)
        }
    }
}

/// `e^{-a} - 1 + a` without cancellation for small `a`.
fn em1(a: f64) -> f64 {
    if a < 0.5 {
        let mut term = a * a / 2.0;
        let mut sum = term;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs() && term != 0.0 {
            k += 1.0;
            term *= -a / k;
            sum += term;
        }
        sum
    } else {
        (-a).exp() - 1.0 + a
    }
}

/// Exact dyadic decomposition `v = mantissa · 2^exp`.
fn dyadic(v: f64) -> (BigInt, i64) {
    assert!(v.is_finite() && v >= 0.0);
    if v == 0.0 {
        return (BigInt::zero(), 0);
    }
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (BigInt::from(frac), -1074)
    } else {
        (BigInt::from(frac | (1u64 << 52)), exp - 1075)
    }
}

fn shift(v: BigInt, by: i64) -> BigInt {
    if by >= 0 {
        v << by as usize
    } else {
        v >> (-by) as usize
    }
}

/// `S(y) = Σ_{m≥2} (-1)^m y^m / (m! (m-1-β))` in fixed point with enough
/// fractional bits to absorb the largest term `~ e^y`.
fn alternating_series(y: f64, beta: f64, tol: f64) -> Result<(f64, f64)> {
    let frac_bits = 80 + (y * std::f64::consts::LOG2_E).ceil().max(0.0) as i64 + (-(tol.max(1e-300)).log2()).ceil().max(0.0) as i64;
    let (ym, ye) = dyadic(y);
    let (bm, be) = dyadic(beta);
    // β = bm · 2^be with be < 0, so (m-1-β) = ((m-1)·2^{-be} - bm) / 2^{-be}
    let bshift = (-be).max(0) as usize;
    let one = BigInt::from(1) << frac_bits as usize;
    // term_m without the 1/(m-1-β) factor: y^m / m!
    let mut power = one.clone();
    power = shift(power * &ym, ye); // y^1 / 1!
    let mut sum = BigInt::zero();
    let mut last = f64::INFINITY;
    let to_f64 = |v: &BigInt| -> f64 {
        let bits = v.bits() as i64;
        let drop = (bits - 60).max(0);
        let top = (v >> drop as usize).to_f64().unwrap_or(f64::NAN);
        top * 2f64.powi((drop - frac_bits) as i32)
    };
    for m in 2..200_000u64 {
        power = shift(power * &ym, ye) / BigInt::from(m);
        let denom = (BigInt::from(m - 1) << bshift) - &bm;
        let term = (&power << bshift) / denom;
        let mag = to_f64(&term.abs());
        if m % 2 == 0 {
            sum += &term;
        } else {
            sum -= &term;
        }
        last = mag;
        if (m as f64) > y + 1.0 && mag < tol {
            let total = to_f64(&sum);
            return Ok((total, mag));
        }
    }
    Err(Error::Numerical(format!("Phi^K series did not converge at y={y} (last term {last:e})")))
}

/// Existence verdict of Theorem-1 type for `(α, d, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    None,
    #[serde(rename = "RENORMALIZED_SILT")]
    RenormalizedSilt,
    #[serde(rename = "SILT")]
    Silt,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Silt => "SILT",
            Regime::RenormalizedSilt => "RENORMALIZED_SILT",
            Regime::None => "NONE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    pub regime: Regime,
    /// `d/2`
    pub silt_threshold: f64,
    /// `d/(2 + 1/(1+β))`
    pub renormalized_threshold: f64,
}

/// SILT iff `d/2 < α`; renormalized SILT iff `d/(2+(1+β)^{-1}) < α <= d/2`.
pub fn existence_regime(alpha: f64, dim: usize, beta: f64) -> Result<RegimeVerdict> {
    MechanismParams::new(alpha, dim, beta, f64::INFINITY)?;
    let d = dim as f64;
    let silt_threshold = d / 2.0;
    let renormalized_threshold = d / (2.0 + 1.0 / (1.0 + beta));
    let regime = if silt_threshold < alpha {
        Regime::Silt
    } else if renormalized_threshold < alpha {
        Regime::RenormalizedSilt
    } else {
        Regime::None
    };
    Ok(RegimeVerdict { regime, silt_threshold, renormalized_threshold })
}

/// `η_p = (p-1)/Γ(2-p)`.
pub fn eta_p(p: f64) -> f64 {
    (p - 1.0) / gamma(2.0 - p)
}

/// Residuals of `z^{p-1} = η_p ∫_0^∞ (1-e^{-λz}) λ^{-p} dλ` and
/// `z^p = p η_p ∫_0^∞ (e^{-λz}-1+λz) λ^{-p-1} dλ`.
///
/// Each integral is split at `1/z` and `50/z`: termwise-integrated power
/// series below, adaptive quadrature in between, analytic tail above.
pub fn frac_identity_residuals(p: f64, z: f64) -> Result<(f64, f64)> {
    if !(p > 1.0 && p < 2.0) {
        return domain(format!("p must lie in (1, 2), got {p}"));
    }
    if !(z > 0.0) {
        return domain(format!("z must be positive, got {z}"));
    }
    let a = 1.0 / z;
    let b = 50.0 / z;
    let tol = Tolerance::new(1e-300, 1e-14);
    // ∫_0^a (1-e^{-λz}) λ^{-p} dλ = Σ_{k≥1} (-1)^{k+1} z^k a^{k+1-p} / (k! (k+1-p))
    let mut first_head = 0.0;
    // ∫_0^a (e^{-λz}-1+λz) λ^{-p-1} dλ = Σ_{k≥2} (-1)^k z^k a^{k-p} / (k! (k-p))
    let mut second_head = 0.0;
    let mut zk_over_fact = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        zk_over_fact *= z / kf;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        first_head += sign * zk_over_fact * a.powf(kf + 1.0 - p) / (kf + 1.0 - p);
        if k >= 2 {
            second_head += -sign * zk_over_fact * a.powf(kf - p) / (kf - p);
        }
    }
    let first_mid = gauss_kronrod(|l| -(-l * z).exp_m1() * l.powf(-p), a, b, tol)?.value;
    let second_mid = gauss_kronrod(|l| em1(l * z) * l.powf(-p - 1.0), a, b, tol)?.value;
    // beyond b the exponential is below e^{-50}; integrate the rest exactly
    let e_tail = |s: f64| -> Result<f64> { Ok(gauss_kronrod(|l| (-l * z).exp() * l.powf(-s), b, b + 60.0 / z, tol)?.value) };
    let first_tail = b.powf(1.0 - p) / (p - 1.0) - e_tail(p)?;
    let second_tail = z * b.powf(1.0 - p) / (p - 1.0) - b.powf(-p) / p + e_tail(p + 1.0)?;
    let ep = eta_p(p);
    let first = ep * (first_head + first_mid + first_tail);
    let second = p * ep * (second_head + second_mid + second_tail);
    Ok(((first - z.powf(p - 1.0)).abs(), (second - z.powf(p)).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_is_exact() {
        for v in [0.5, 0.3, 1e-3, 123.456] {
            let (m, e) = dyadic(v);
            assert_eq!(m.to_f64().unwrap() * 2f64.powi(e as i32), v);
        }
    }

    #[test]
    fn em1_is_continuous() {
        // Both branches at the switch point, net of the slope 1 - e^{-a}.
        let (d, slope) = (1e-12, 1.0 - (-0.5f64).exp());
        assert!((em1(0.5 - d) - em1(0.5 + d) + 2.0 * d * slope).abs() < 1e-15);
        let a: f64 = 1e-5;
        assert!((em1(a) / (a * a / 2.0 - a.powi(3) / 6.0 + a.powi(4) / 24.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn series_small_argument_matches_leading_terms() {
        let (s, _) = alternating_series(1e-3, 0.5, 1e-30).unwrap();
        let y: f64 = 1e-3;
        let want = y * y / (2.0 * 0.5) - y.powi(3) / (6.0 * 1.5) + y.powi(4) / (24.0 * 2.5) - y.powi(5) / (120.0 * 3.5);
        assert!((s / want - 1.0).abs() < 1e-12);
    }
}
