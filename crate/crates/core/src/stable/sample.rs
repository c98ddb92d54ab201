use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::Motion;
use crate::error::{domain, Result};

/// Positive (α/2)-stable variable with `E exp(-θS) = exp(-θ^{α/2})`.
///
/// Kanter's form of the Chambers–Mallows–Stuck construction:
/// `S = (A(U)/W)^{(1-a)/a}` with `U ~ U(0,π)`, `W ~ Exp(1)`, `a = α/2` and
/// `A(u) = sin(au)^{a/(1-a)} sin((1-a)u) / sin(u)^{1/(1-a)}`.
fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u: f64 = loop {
        let u = rng.random::<f64>() * PI;
        if u > 0.0 {
            break u;
        }
    };
    let w: f64 = rng.sample(Exp1);
    let ln_a = (a / (1.0 - a)) * (a * u).sin().ln() + ((1.0 - a) * u).sin().ln() - u.sin().ln() / (1.0 - a);
    (((1.0 - a) / a) * (ln_a - w.ln())).exp()
}

/// Draws an increment of the motion over time `t`, writing it into `out`.
///
/// For α = 2 this is `N(0, t·I)`. For α < 2 it is `sqrt(2 S t^{2/α}) · N(0, I)`
/// with `S` as in [`positive_stable`]; conditionally on `S` the characteristic
/// function is `exp(-S t^{2/α}|z|²)`, and averaging over `S` gives
/// `exp(-t|z|^α)`.
pub fn sample_stable_increment<R: Rng + ?Sized>(motion: Motion, t: f64, rng: &mut R, out: &mut [f64]) -> Result<()> {
    if !(t > 0.0) {
        return domain(format!("time must be positive, got {t}"));
    }
    let scale = if motion.alpha == 2.0 {
        t.sqrt()
    } else {
        let s = positive_stable(motion.alpha / 2.0, rng);
        (2.0 * s).sqrt() * t.powf(1.0 / motion.alpha)
    };
    for v in out.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = scale * n;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positive_stable_laplace_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = 0.75;
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| (-positive_stable(a, &mut rng)).exp()).sum::<f64>() / n as f64;
        // E exp(-S) = exp(-1)
        assert!((mean - (-1f64).exp()).abs() < 4e-3, "{mean}");
    }
}
