use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siltlab_core::mechanism::{existence_regime, frac_identity_residuals, MechanismParams, Regime};
use siltlab_core::offspring::OffspringLaw;
use siltlab_core::quad::{gauss_kronrod, tanh_sinh, Tolerance};
use siltlab_core::special::gamma;
use siltlab_core::Error;

fn params(beta: f64, k: f64) -> MechanismParams {
    MechanismParams::new(2.0, 1, beta, k).unwrap()
}

#[test]
fn derived_constants() {
    let p = params(0.5, 2.0);
    let eta = 0.75 / std::f64::consts::PI.sqrt();
    assert!((p.eta() - eta).abs() < 1e-15);
    assert!((p.eta() - 0.4231).abs() < 1e-4);
    assert!((p.c_beta_k() - 0.5984).abs() < 1e-4);
    assert!((p.chi(2) - 1.1968).abs() < 1e-4);
    assert_eq!(params(0.5, f64::INFINITY).c_beta_k(), 0.0);
    assert!(params(0.5, f64::INFINITY).chi(2).is_infinite());
}

#[test]
fn rejects_bad_parameters() {
    assert!(matches!(MechanismParams::new(2.0, 1, 1.0, 1.0), Err(Error::Domain(_))));
    assert!(matches!(MechanismParams::new(2.5, 1, 0.5, 1.0), Err(Error::Domain(_))));
    assert!(matches!(MechanismParams::new(1.0, 1, 0.5, 0.0), Err(Error::Domain(_))));
    let full = params(0.5, f64::INFINITY);
    assert!(matches!(full.phi_k_integral(1.0), Err(Error::Domain(_))));
    assert!(matches!(full.phi_k_series(1.0, 1e-12), Err(Error::Domain(_))));
}

#[test]
fn params_round_trip_through_json() {
    for k in [2.0, f64::INFINITY] {
        let p = params(0.5, k);
        let s = serde_json::to_string(&p).unwrap();
        let back: MechanismParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}

#[test]
fn phi_vanishes_at_zero() {
    let p = params(0.5, 2.0);
    assert_eq!(p.phi_k_integral(0.0).unwrap(), 0.0);
    assert_eq!(p.phi_k_series(0.0, 1e-12).unwrap().0, 0.0);
}

#[test]
fn series_matches_integral_at_spec_points() {
    for (b, k, x) in [(0.5, 2.0, 1.0), (0.3, 0.5, 4.0)] {
        let p = params(b, k);
        let i = p.phi_k_integral(x).unwrap();
        let (s, err) = p.phi_k_series(x, 1e-16).unwrap();
        assert!(err <= 1e-16);
        assert!((i - s).abs() <= 1e-10 * s, "beta={b} K={k} x={x}: {i} vs {s}");
    }
}

#[test]
fn series_and_integral_agree_on_the_full_sweep() {
    for b in [0.3, 0.5, 0.8] {
        for k in [0.5, 2.0, 10.0] {
            let p = params(b, k);
            for i in 0..=40 {
                let x = 0.25 * i as f64;
                let q = p.phi_k_integral(x).unwrap();
                let (s, _) = p.phi_k_series(x, 1e-14 * q.max(1e-300)).unwrap();
                assert!((q - s).abs() <= 1e-10 * s.abs(), "beta={b} K={k} x={x}: {q} vs {s}");
                assert!(q <= 0.5 * p.chi(2) * x * x * (1.0 + 1e-14));
            }
        }
    }
}

#[test]
fn full_mechanism_values_and_large_truncation_limit() {
    let p = params(0.5, 1e3);
    assert_eq!(p.full_mechanism(1.0).unwrap(), 1.0);
    assert!((p.full_mechanism(4.0).unwrap() - 8.0).abs() < 1e-14);
    assert!((p.psi_k(1.0).unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn fractional_identities() {
    for p in [1.5, 1.9] {
        for z in [0.5, 1.0, 2.0] {
            let (r1, r2) = frac_identity_residuals(p, z).unwrap();
            assert!(r1 < 1e-6 && r2 < 1e-6, "p={p} z={z}: {r1:e} {r2:e}");
        }
    }
    assert!(frac_identity_residuals(2.0, 1.0).is_err());
}

#[test]
fn regime_examples() {
    let v = |a, d, b| existence_regime(a, d, b).unwrap().regime;
    assert_eq!(v(2.0, 3, 0.5), Regime::Silt);
    assert_eq!(v(1.8, 5, 0.9), Regime::None);
    assert_eq!(v(1.8, 4, 0.9), Regime::RenormalizedSilt);
    assert_eq!(v(1.5, 3, 0.5), Regime::RenormalizedSilt);
    // α = d/2 exactly falls under the weak inequality
    assert_eq!(v(1.0, 2, 0.5), Regime::RenormalizedSilt);
    let t = existence_regime(1.5, 3, 0.5).unwrap();
    assert!((t.renormalized_threshold - 1.125).abs() < 1e-15);
}

#[test]
fn untruncated_rate_matches_closed_form() {
    for n in [1.0, 10.0, 100.0, 2000.0] {
        let law = OffspringLaw::new(params(0.5, f64::INFINITY), n).unwrap();
        let want = 1.5 * f64::sqrt(n);
        assert!((law.c_n - want).abs() < 1e-9 * want.max(1.0), "n={n}: {} vs {want}", law.c_n);
    }
}

#[test]
fn truncated_rate_matches_its_defining_integral() {
    for (b, k, n) in [(0.5, 2.0, 10.0), (0.3, 0.5, 100.0), (0.8, 10.0, 5.0)] {
        let p = params(b, k);
        let law = OffspringLaw::new(p, n).unwrap();
        let tol = Tolerance::new(1e-300, 1e-13);
        let integral = tanh_sinh(|u, _, _| u.powf(-b) * if u > 0.0 { -(-u * n).exp_m1() / u } else { n }, 0.0, k, tol).unwrap().value;
        let want = p.c_beta_k() + p.eta() * integral;
        assert!((law.c_n / want - 1.0).abs() < 1e-11);
    }
}

#[test]
fn untruncated_law_matches_binomial_series() {
    // f(s) = s + (1-s)^{1+β}/(1+β): p_k = (-1)^k C(1+β, k)/(1+β) for k >= 2
    let b = 0.5;
    let law = OffspringLaw::new(params(b, f64::INFINITY), 50.0).unwrap();
    assert!((law.pmf(0) - 1.0 / (1.0 + b)).abs() < 1e-12);
    assert_eq!(law.pmf(1), 0.0);
    let mut binom = 1.0; // C(1+β, 0)
    for k in 1..60u64 {
        binom *= (1.0 + b - (k - 1) as f64) / k as f64;
        if k >= 2 {
            let want = if k % 2 == 0 { binom } else { -binom } / (1.0 + b);
            assert!((law.pmf(k) / want - 1.0).abs() < 1e-11, "k={k}");
        }
    }
    assert_eq!(law.mean(), 1.0);
}

#[test]
fn generator_identity() {
    for k in [2.0, 0.5, f64::INFINITY] {
        for n in [10.0, 100.0] {
            let law = OffspringLaw::new(params(0.5, k), n).unwrap();
            for v in [0.1, 1.0, 5.0] {
                let r = law.generator_residual(v).unwrap();
                assert!(r.abs() < 1e-9, "K={k} n={n} v={v}: residual {r:e}");
            }
        }
    }
}

#[test]
fn truncated_law_sums_to_one_with_subcritical_mean() {
    for (b, k, n) in [(0.5, 2.0, 100.0), (0.3, 10.0, 20.0), (0.8, 0.5, 7.0)] {
        let p = params(b, k);
        let law = OffspringLaw::new(p, n).unwrap();
        let (mut mass, mut mean) = (0.0, 0.0);
        for j in 0..20_000u64 {
            let q = law.pmf(j);
            assert!(q >= 0.0);
            mass += q;
            mean += j as f64 * q;
        }
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
        assert!((mean - (1.0 - p.c_beta_k() / law.c_n)).abs() < 1e-10, "mean {mean}");
        assert!(law.mean() < 1.0);
    }
}

#[test]
fn sampler_matches_pmf() {
    let law = OffspringLaw::new(params(0.5, 2.0), 20.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 400_000;
    let mut counts = vec![0u64; 8];
    let mut total = 0.0;
    for _ in 0..draws {
        let k = law.sample(&mut rng);
        total += k as f64;
        if (k as usize) < counts.len() {
            counts[k as usize] += 1;
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        let p = law.pmf(k as u64);
        let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-9);
        assert!(((c as f64 / draws as f64) - p).abs() < 4.0 * se, "k={k}: {} vs {p}", c as f64 / draws as f64);
    }
    let var: f64 = (0..5000u64).map(|k| (k as f64 - law.mean()).powi(2) * law.pmf(k)).sum();
    let mean = total / draws as f64;
    assert!((mean - law.mean()).abs() < 4.0 * (var / draws as f64).sqrt());
}

#[test]
fn untruncated_sampler_has_heavy_tail() {
    // P(L > m) ~ m^{-1-β} for the critical law
    let law = OffspringLaw::new(params(0.5, f64::INFINITY), 10.0).unwrap();
    let tail_exact = |m: u64| 1.0 - (0..=m).map(|k| law.pmf(k)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 200_000;
    let big = (0..draws).filter(|_| law.sample(&mut rng) > 30).count() as f64 / draws as f64;
    let p = tail_exact(30);
    assert!((big - p).abs() < 4.0 * (p / draws as f64).sqrt(), "{big} vs {p}");
}

#[test]
fn offspring_rejects_small_n() {
    assert!(OffspringLaw::new(params(0.5, 2.0), 0.5).is_err());
    assert!(OffspringLaw::new(params(0.5, 2.0), 1.0).is_ok());
}

#[test]
fn mixing_integral_has_closed_form_when_untruncated() {
    // ∫_0^∞ w^{-2-β}(1 - e^{-w}(1+w)) dw = Γ(1-β)/(1+β), integrating by parts once
    let b = 0.4;
    let tol = Tolerance::new(1e-300, 1e-13);
    let g = |w: f64| w.powf(-2.0 - b) * (-(-w).exp_m1() - w * (-w).exp());
    let head = tanh_sinh(|w, _, _| g(w), 1e-6, 1.0, tol).unwrap().value + (1e-6f64).powf(1.0 - b) / (2.0 * (1.0 - b));
    let body = gauss_kronrod(g, 1.0, 100.0, tol).unwrap().value + 100f64.powf(-1.0 - b) / (1.0 + b);
    let want = gamma(1.0 - b) / (1.0 + b);
    assert!(((head + body) / want - 1.0).abs() < 1e-6);
    // and the law's p0 is consistent with it: 1 - p0 = (η n^β / c_n) · want
    let p = params(b, f64::INFINITY);
    let law = OffspringLaw::new(p, 3.0).unwrap();
    let w = p.eta() * 3f64.powf(b) / law.c_n * want;
    assert!((1.0 - law.p0 - w).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn series_integral_duality(b in 0.05f64..0.95, k in 0.2f64..12.0, x in 0.0f64..10.0) {
        let p = params(b, k);
        let q = p.phi_k_integral(x).unwrap();
        let (s, _) = p.phi_k_series(x, 1e-14 * q.max(1e-300)).unwrap();
        prop_assert!((q - s).abs() <= 1e-10 * s.abs().max(1e-300));
    }

    #[test]
    fn phi_is_convex_nonnegative_and_below_quadratic(b in 0.05f64..0.95, k in 0.2f64..12.0, x in 0.01f64..10.0) {
        let p = params(b, k);
        let h = 1e-2 * x;
        let (lo, mid, hi) = (p.phi_k_integral(x - h).unwrap(), p.phi_k_integral(x).unwrap(), p.phi_k_integral(x + h).unwrap());
        prop_assert!(mid >= 0.0);
        prop_assert!(lo + hi - 2.0 * mid >= -1e-12 * mid);
        prop_assert!(mid <= 0.5 * p.chi(2) * x * x * (1.0 + 1e-12));
    }

    #[test]
    fn truncation_monotonicity(b in 0.05f64..0.95, k in 0.2f64..12.0, dk in 0.01f64..5.0, x in 0.0f64..10.0) {
        let (p, q) = (params(b, k), params(b, k + dk));
        prop_assert!(q.phi_k_integral(x).unwrap() >= p.phi_k_integral(x).unwrap() * (1.0 - 1e-13));
        prop_assert!(q.c_beta_k() < p.c_beta_k());
    }

    #[test]
    fn regime_is_monotone_in_alpha(a in 0.05f64..2.0, da in 0.0f64..1.0, d in 1usize..8, b in 0.05f64..0.95) {
        let hi = (a + da).min(2.0);
        prop_assert!(existence_regime(hi, d, b).unwrap().regime >= existence_regime(a, d, b).unwrap().regime);
    }

    #[test]
    fn offspring_law_is_a_distribution(b in 0.1f64..0.9, k in 0.3f64..5.0, n in 1.0f64..50.0) {
        let law = OffspringLaw::new(params(b, k), n).unwrap();
        let mass: f64 = (0..5000u64).map(|j| law.pmf(j)).sum();
        prop_assert!((mass - 1.0).abs() < 1e-10);
        prop_assert!(law.mean() < 1.0 && law.mean() > 0.0);
    }
}
