//! Special functions: thin wrappers over `statrs` plus a Bessel J0.

use std::f64::consts::PI;

pub use statrs::function::gamma::{gamma, gamma_lr, ln_gamma};

/// Surface area of the unit sphere in R^d.
pub fn sphere_area(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Volume of the unit ball in R^d.
pub fn ball_volume(dim: usize) -> f64 {
    sphere_area(dim) / dim as f64
}

/// Bessel function of the first kind, order zero.
///
/// Small arguments use the trapezoid rule on the periodic integral
/// `(1/pi) int_0^pi cos(x sin t) dt`, which converges geometrically once the
/// node count exceeds `x`; large arguments use the Hankel expansion.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < 40.0 {
        let n = (x as usize) + 32;
        let h = PI / n as f64;
        // both endpoints contribute cos(0) = 1 with weight 1/2
        let mut s = 1.0;
        for k in 1..n {
            s += (x * (k as f64 * h).sin()).cos();
        }
        s * h / PI
    } else {
        // term_k = a_k / x^k with a_k = prod_j (-(2j-1)^2) / (k! 8^k)
        let mut p = 1.0;
        let mut q = 0.0;
        let mut term = 1.0;
        for k in 1..40 {
            let odd = (2 * k - 1) as f64;
            let next = term * (-odd * odd) / (k as f64 * 8.0 * x);
            if next.abs() > term.abs() {
                break;
            }
            term = next;
            let sign = if ((k - k % 2) / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if k % 2 == 1 {
                q += sign * term;
            } else {
                p += sign * term;
            }
            if term.abs() < 1e-18 {
                break;
            }
        }
        let chi = x - 0.25 * PI;
        (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_reference_values() {
        // reference values from an independent library
        let cases = [
            (0.0, 1.0),
            (1.0, 0.765_197_686_557_966_6),
            (2.404_825_557_695_773, 0.0),
            (10.0, -0.245_935_764_451_348_3),
            (39.0, 0.111_357_697_954_866_95),
            (41.0, -0.100_745_789_124_480_01),
            (100.0, 0.019_985_850_304_223_33),
        ];
        for (x, want) in cases {
            let got = bessel_j0(x);
            assert!((got - want).abs() < 1e-13, "J0({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn j0_is_continuous_across_method_switch() {
        let a = bessel_j0(40.0 - 1e-9);
        let b = bessel_j0(40.0 + 1e-9);
        assert!((a - 0.007_366_890_710_274_83).abs() < 1e-13, "{a}");
        assert!((b - 0.007_366_890_458_199_069).abs() < 1e-13, "{b}");
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-14);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
    }
}
