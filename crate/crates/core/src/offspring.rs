//! Offspring law of the particle system whose generator reproduces the
//! truncated mechanism exactly.
//!
//! With `n` particles per unit mass and per-particle branching rate `c_n`,
//! the pgf `f_n(s) = s + ψ^K(n(1-s))/(n c_n)` satisfies
//! `n c_n (f_n(1 - v/n) - (1 - v/n)) = ψ^K(v)`. Expanding `Φ^K` shows that
//! `f_n` is a mixture: with probability `p_0` no offspring, otherwise a
//! Poisson(`w`) count conditioned on being at least 2, where `w` has density
//! proportional to `w^{-2-β}(1 - e^{-w}(1+w))` on `(0, nK]`.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::mechanism::MechanismParams;
use crate::quad::{gauss_kronrod, tanh_sinh, Tolerance};
use crate::special::{gamma, gamma_lr, ln_gamma};

#[derive(Debug, Clone)]
pub struct OffspringLaw {
    pub params: MechanismParams,
    /// Particles per unit mass.
    pub n: f64,
    /// Per-particle branching rate.
    pub c_n: f64,
    pub p0: f64,
    /// `η n^β / c_n`, the weight in front of every `k >= 2` term.
    scale: f64,
    /// Upper end `nK` of the mixing variable.
    w_max: f64,
    env_low: f64,
    env_high: f64,
}

/// `(1 - e^{-w}(1 + w)) / w²`, accurate for small `w`.
fn at_least_two_ratio(w: f64) -> f64 {
    if w < 0.5 {
        // Σ_{k≥2} (-1)^k (k-1) w^{k-2} / k!
        let mut term = 0.5;
        let mut sum = term;
        let mut k = 2.0;
        loop {
            let next = -term * w * k / ((k + 1.0) * (k - 1.0));
            if next.abs() <= 1e-18 * sum {
                break sum;
            }
            sum += next;
            term = next;
            k += 1.0;
        }
    } else {
        (-(-w).exp_m1() - w * (-w).exp()) / (w * w)
    }
}

/// `1 - e^{-w}(1 + w)`.
fn at_least_two(w: f64) -> f64 {
    at_least_two_ratio(w) * w * w
}

impl OffspringLaw {
    pub fn new(params: MechanismParams, n: f64) -> Result<Self> {
        if !(n >= 1.0) || !n.is_finite() {
            return Err(Error::Domain(format!("particles per unit mass must be >= 1, got {n}")));
        }
        let beta = params.beta;
        let eta = params.eta();
        let w_max = n * params.k;
        let c_n = if params.is_truncated() {
            let lower = gamma(1.0 - beta) * gamma_lr(1.0 - beta, w_max);
            params.c_beta_k() + eta * n.powf(beta) * (lower + w_max.powf(-beta) * (-w_max).exp_m1()) / beta
        } else {
            eta * n.powf(beta) * gamma(1.0 - beta) / beta
        };
        let p0 = params.psi_k(n)? / (n * c_n);
        let scale = eta * n.powf(beta) / c_n;
        let low_end = w_max.min(1.0);
        let env_low = low_end.powf(1.0 - beta) / (2.0 * (1.0 - beta));
        let env_high = if w_max > 1.0 { (1.0 - w_max.powf(-1.0 - beta)) / (1.0 + beta) } else { 0.0 };
        let law = Self { params, n, c_n, p0, scale, w_max, env_low, env_high };
        let total = law.p0 + law.scale * law.mixing_mass()?;
        if !(p0 >= 0.0) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::Numerical(format!("offspring law does not normalize: p0={p0}, total={total}")));
        }
        Ok(law)
    }

    /// `∫_0^{nK} w^{-2-β}(1 - e^{-w}(1+w)) dw`.
    fn mixing_mass(&self) -> Result<f64> {
        let b = self.params.beta;
        let g = |w: f64| w.powf(-b) * at_least_two_ratio(w);
        let tol = Tolerance::new(1e-300, 1e-14);
        let a = self.w_max.min(1.0);
        let mut total = tanh_sinh(|w, _, _| g(w), 0.0, a, tol)?.value;
        if self.w_max > 1.0 {
            let mid = self.w_max.min(80.0);
            total += gauss_kronrod(g, 1.0, mid, tol)?.value;
            if self.w_max > mid {
                // e^{-w}(1+w) is below 1e-33 here
                let tail = if self.w_max.is_finite() { mid.powf(-1.0 - b) - self.w_max.powf(-1.0 - b) } else { mid.powf(-1.0 - b) };
                total += tail / (1.0 + b);
            }
        }
        Ok(total)
    }

    /// Probability of `k` offspring.
    pub fn pmf(&self, k: u64) -> f64 {
        match k {
            0 => self.p0,
            1 => 0.0,
            _ => {
                let b = self.params.beta;
                let a = k as f64 - 1.0 - b;
                let reg = if self.w_max.is_finite() { gamma_lr(a, self.w_max) } else { 1.0 };
                if reg <= 0.0 {
                    return 0.0;
                }
                self.scale * (ln_gamma(a) - ln_gamma(k as f64 + 1.0) + reg.ln()).exp()
            }
        }
    }

    /// Mean offspring number `1 - C_β(K)/c_n`.
    pub fn mean(&self) -> f64 {
        1.0 - self.params.c_beta_k() / self.c_n
    }

    /// `f_n(s) = Σ p_k s^k` for `s ∈ [0, 1]`, computed from the law itself:
    /// by direct summation when K is finite, from the mixture integral
    /// otherwise.
    pub fn pgf(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("pgf argument must lie in [0, 1], got {s}")));
        }
        if self.w_max.is_finite() {
            let spread = self.w_max + 10.0 * self.w_max.sqrt() + 50.0;
            let mut sum = 0.0;
            let mut k = 2u64;
            loop {
                let term = self.pmf(k) * s.powi(k as i32);
                sum += term;
                if (k as f64 > spread && term < 1e-22) || k > 50_000_000 {
                    break;
                }
                k += 1;
            }
            return Ok(self.p0 + sum);
        }
        let b = self.params.beta;
        // Σ_{k≥2} e^{-w} (ws)^k / k! = e^{-w}(e^{ws} - 1 - ws)
        let g = |w: f64| {
            // w^{-2} e^{-w}(e^{ws} - 1 - ws)
            let q = if w * s < 0.5 {
                let mut term = s * s / 2.0;
                let mut sum = term;
                let mut j = 2.0;
                while term > 1e-18 * sum {
                    j += 1.0;
                    term *= w * s / j;
                    sum += term;
                }
                (-w).exp() * sum
            } else {
                ((-w * (1.0 - s)).exp() - (-w).exp() * (1.0 + w * s)) / (w * w)
            };
            w.powf(-b) * q
        };
        let tol = Tolerance::new(1e-300, 1e-13);
        let head = tanh_sinh(|w, _, _| g(w), 0.0, 1.0, tol)?.value;
        let body = if s < 1.0 {
            let cut = 1.0 + 80.0 / (1.0 - s);
            gauss_kronrod(g, 1.0, cut, tol)?.value
        } else {
            gauss_kronrod(g, 1.0, 80.0, tol)?.value + 80f64.powf(-1.0 - b) / (1.0 + b)
        };
        Ok(self.p0 + self.scale * (head + body))
    }

    /// `n c_n (f_n(1 - v/n) - (1 - v/n)) - ψ^K(v)`.
    pub fn generator_residual(&self, v: f64) -> Result<f64> {
        let s = 1.0 - v / self.n;
        Ok(self.n * self.c_n * (self.pgf(s)? - s) - self.params.psi_k(v)?)
    }

    /// Exact draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if rng.random::<f64>() < self.p0 {
            return 0;
        }
        let w = self.sample_mixing(rng);
        poisson_at_least_two(w, rng)
    }

    fn sample_mixing<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let b = self.params.beta;
        let total = self.env_low + self.env_high;
        loop {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            if u * total < self.env_low {
                let w = self.w_max.min(1.0) * rng.random::<f64>().powf(1.0 / (1.0 - b));
                if w > 0.0 && v <= 2.0 * at_least_two_ratio(w) {
                    return w;
                }
            } else {
                let tail = if self.w_max.is_finite() { self.w_max.powf(-1.0 - b) } else { 0.0 };
                let q: f64 = rng.random();
                let w = (1.0 - q * (1.0 - tail)).powf(-1.0 / (1.0 + b));
                if v <= at_least_two(w) {
                    return w;
                }
            }
        }
    }
}

/// Poisson(`w`) conditioned on being at least 2.
fn poisson_at_least_two<R: Rng + ?Sized>(w: f64, rng: &mut R) -> u64 {
    if w < 5.0 {
        let z = at_least_two(w);
        let mut u = rng.random::<f64>() * z;
        let mut k = 2u64;
        let mut p = (-w).exp() * w * w / 2.0;
        loop {
            if u < p || p == 0.0 {
                return k;
            }
            u -= p;
            k += 1;
            p *= w / k as f64;
        }
    }
    if w > 1e15 {
        let z: f64 = rng.sample(StandardNormal);
        return (w + w.sqrt() * z).round().max(2.0) as u64;
    }
    let dist = Poisson::new(w).expect("finite positive Poisson mean");
    loop {
        let k = dist.sample(rng) as u64;
        if k >= 2 {
            return k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_least_two_branches_agree() {
        // Net of the slope w e^{-w} across the switch point.
        let d = 1e-13;
        let (a, b) = (at_least_two(0.5 - d), at_least_two(0.5 + d));
        assert!((b - a - 2.0 * d * 0.5 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((at_least_two(1e-4) / 5e-9 - 1.0).abs() < 1e-3);
        assert_eq!(at_least_two_ratio(0.0), 0.5);
    }

    #[test]
    fn conditioned_poisson_small_mean_is_mostly_two() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<u64> = (0..1000).map(|_| poisson_at_least_two(1e-3, &mut rng)).collect();
        assert!(draws.iter().all(|&k| k >= 2));
        assert!(draws.iter().filter(|&&k| k == 2).count() > 990);
    }
}
