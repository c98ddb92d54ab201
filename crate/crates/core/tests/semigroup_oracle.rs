use std::f64::consts::PI;

use proptest::prelude::*;
use siltlab_core::mechanism::MechanismParams;
use siltlab_core::oracle::{
    apply_semigroup, cross_moment, first_moment, gaussian_bump, kernel_cross_moment, second_moment, GridFunction, GridSpec, KernelMomentOracle,
    KernelSpec,
};
use siltlab_core::Error;

fn params(alpha: f64, dim: usize, k: f64) -> MechanismParams {
    MechanismParams::new(alpha, dim, 0.5, k).unwrap()
}

fn line(h: f64) -> GridSpec {
    GridSpec::centered(1, 6.0, h, 8.0).unwrap()
}

fn max_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `e^{-2Ct} + χ e^{-C(t+s)} (e^{Cs} - 1)/C`, the constant-function oracle.
fn constant_cross(p: &MechanismParams, t: f64, s: f64) -> f64 {
    let c = p.c_beta_k();
    (-c * (t + s)).exp() * (1.0 + p.chi(2) * ((c * s).exp() - 1.0) / c)
}

#[test]
fn zero_time_is_identity() {
    let g = line(0.05);
    let f = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.3));
    let p = params(1.5, 1, 2.0);
    assert_eq!(apply_semigroup(&f, 0.0, false, &p).unwrap().values, f.values);
}

#[test]
fn truncated_semigroup_damps_constants() {
    let p = params(1.5, 1, 2.0);
    let one = GridFunction::constant(line(0.1), 1.0);
    let out = apply_semigroup(&one, 1.0, true, &p).unwrap();
    let want = (-p.c_beta_k()).exp();
    assert!(out.values.iter().all(|v| (v - want).abs() < 1e-12));
}

#[test]
fn brownian_semigroup_convolves_gaussians() {
    // generator Δ/2: S_t N(0, v) = N(0, v + t)
    for dim in [1, 2] {
        let g = GridSpec::centered(dim, 5.0, 0.05, 7.0).unwrap();
        let p = params(2.0, dim, 2.0);
        let f = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.2));
        let out = apply_semigroup(&f, 0.7, false, &p).unwrap();
        let want = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.9));
        assert!(max_diff(&out, &want) < 1e-8, "d={dim}: {}", max_diff(&out, &want));
    }
}

#[test]
fn cauchy_semigroup_matches_closed_form_density() {
    // S_t δ-approximation: S_t N(0, v) → p_t as v → 0; compare S_t p_s = p_{s+t}
    let g = GridSpec::centered(1, 200.0, 0.02, 200.0).unwrap();
    let p = params(1.0, 1, 2.0);
    let cauchy = |t: f64| move |x: &[f64]| t / (PI * (t * t + x[0] * x[0]));
    let f = GridFunction::from_fn(g, cauchy(0.5));
    let out = apply_semigroup(&f, 0.3, false, &p).unwrap();
    let want = GridFunction::from_fn(g, cauchy(0.8));
    // the truncated heavy tail costs O(1/L) in mass; compare near the centre
    for x in [-1.0, 0.0, 0.5, 2.0] {
        assert!((out.at(&[x]) - want.at(&[x])).abs() < 2e-5, "x={x}");
    }
}

#[test]
fn semigroup_property_and_mass() {
    let g = line(0.02);
    let p = params(1.5, 1, 2.0);
    let f = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.1));
    let a = apply_semigroup(&apply_semigroup(&f, 0.3, false, &p).unwrap(), 0.4, false, &p).unwrap();
    let b = apply_semigroup(&f, 0.7, false, &p).unwrap();
    assert!(max_diff(&a, &b) < 1e-12);
    assert!((b.integral() - f.integral()).abs() < 1e-8);
    let k = apply_semigroup(&f, 0.7, true, &p).unwrap();
    assert!((k.integral() - (-0.7 * p.c_beta_k()).exp() * f.integral()).abs() < 1e-8);
}

#[test]
fn narrow_margin_is_widened() {
    let p = params(2.0, 1, 2.0);
    let tight = GridSpec::centered(1, 2.0, 0.05, 0.5).unwrap();
    let f = GridFunction::from_fn(tight, |x| gaussian_bump(x, 0.1));
    let out = apply_semigroup(&f, 1.0, false, &p).unwrap();
    assert_eq!(out.grid, tight);
    for x in [-1.0, 0.0, 1.5] {
        assert!((out.at(&[x]) - gaussian_bump(&[x], 1.1)).abs() < 1e-6, "x={x}");
    }
}

#[test]
fn first_moment_examples() {
    let g = line(0.05);
    let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.25));
    let one = GridFunction::constant(g, 1.0);
    let p = params(1.5, 1, 2.0);
    let m = first_moment(&h, &one, 1.0, &p).unwrap();
    assert!((m - 0.5497).abs() < 1e-4, "{m}");
    assert!((m - (-p.c_beta_k()).exp()).abs() < 1e-10);
    let phi = GridFunction::from_fn(g, |x| (-x[0] * x[0]).exp());
    assert!((first_moment(&h, &phi, 0.0, &p).unwrap() - h.inner(&phi)).abs() < 1e-14);
    let full = params(1.5, 1, f64::INFINITY);
    assert!((first_moment(&h, &one, 3.0, &full).unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn second_moment_of_total_mass() {
    let g = line(0.1);
    let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.25));
    let one = GridFunction::constant(g, 1.0);
    let p = params(1.5, 1, 2.0);
    let m2 = second_moment(&h, &one, 1.0, &p, 64).unwrap();
    assert!((m2 - constant_cross(&p, 1.0, 1.0)).abs() < 1e-8, "{m2}");
    assert!((m2 - 0.7973).abs() < 1e-4);
    assert!((second_moment(&h, &one, 0.0, &p, 64).unwrap() - 1.0).abs() < 1e-8);
    let full = params(1.5, 1, f64::INFINITY);
    match second_moment(&h, &one, 1.0, &full, 64) {
        Err(Error::Domain(msg)) => assert!(msg.contains("second moment infinite")),
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn cross_moment_constant_functions_and_consistency() {
    let g = line(0.05);
    let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.25));
    let one = GridFunction::constant(g, 1.0);
    let p = params(1.5, 1, 2.0);
    let c = cross_moment(&h, &one, &one, 1.0, 0.5, &p, 64).unwrap();
    assert!((c - constant_cross(&p, 1.0, 0.5)).abs() < 1e-8);

    let phi = GridFunction::from_fn(g, |x| (-x[0] * x[0]).exp());
    let psi = GridFunction::from_fn(g, |x| (-(x[0] - 0.5).powi(2) / 0.5).exp());
    let same = cross_moment(&h, &phi, &phi, 0.8, 0.8, &p, 64).unwrap();
    let second = second_moment(&h, &phi, 0.8, &p, 64).unwrap();
    assert_eq!(same, second);
    let cross = cross_moment(&h, &phi, &psi, 1.0, 0.5, &p, 64).unwrap();
    let product = first_moment(&h, &phi, 1.0, &p).unwrap() * first_moment(&h, &psi, 0.5, &p).unwrap();
    assert!(cross > product);
    assert!(matches!(cross_moment(&h, &phi, &psi, 0.5, 1.0, &p, 64), Err(Error::Domain(_))));
}

#[test]
fn cross_moment_is_stable_under_grid_refinement() {
    let p = params(1.5, 1, 2.0);
    let value = |h: f64, nodes: usize| {
        let g = line(h);
        let mu = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.25));
        let phi = GridFunction::from_fn(g, |x| (-x[0] * x[0]).exp());
        let psi = GridFunction::from_fn(g, |x| (-(x[0] - 0.5).powi(2) / 0.5).exp());
        cross_moment(&mu, &phi, &psi, 1.0, 0.5, &p, nodes).unwrap()
    };
    let coarse = value(0.05, 32);
    let fine = value(0.025, 64);
    assert!((coarse - fine).abs() < 1e-7 * fine, "{coarse} vs {fine}");
}

#[test]
fn kernel_independent_term_for_gaussians() {
    // ∫∫ p_ε(z1 - z2) N(v+t)(z1) N(v+s)(z2) = N(0, 2v+t+s+ε)(0)
    let g = line(0.05);
    let v = 0.25;
    let h = GridFunction::from_fn(g, |x| 2.0 * gaussian_bump(x, v));
    let p = params(2.0, 1, 2.0);
    let (t, s, eps) = (1.0, 0.4, 0.2);
    let m = kernel_cross_moment(&h, KernelSpec::Density { eps }, t, s, &p).unwrap();
    let want = 4.0 * (-p.c_beta_k() * (t + s)).exp() / (2.0 * PI * (2.0 * v + t + s + eps)).sqrt();
    assert!((m.independent / want - 1.0).abs() < 1e-10);
    assert_eq!(m.particle, 0.0);
}

#[test]
fn common_ancestor_term_on_the_diagonal() {
    // at s = t the integrand is e^{Cr} p_{2(t-r)+ε}(0) = e^{Cr} (2(t-r)+ε)^{-1/2} / sqrt(2π)
    let g = line(0.05);
    let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.25));
    let p = params(2.0, 1, 2.0);
    let (t, eps) = (0.8, 0.1);
    let m = kernel_cross_moment(&h, KernelSpec::Density { eps }, t, t, &p).unwrap();
    let c = p.c_beta_k();
    let steps = 200_000;
    let dr = t / steps as f64;
    let mut integral = 0.0;
    for i in 0..steps {
        let r = (i as f64 + 0.5) * dr;
        integral += (c * r).exp() / (2.0 * PI * (2.0 * (t - r) + eps)).sqrt() * dr;
    }
    let want = p.chi(2) * (-2.0 * c * t).exp() * integral;
    assert!((m.common_ancestor / want - 1.0).abs() < 1e-8, "{} vs {want}", m.common_ancestor);
}

#[test]
fn green_kernel_at_origin_matches_time_integral() {
    // (p_a * G^{λ,ε})(0) = ∫_ε^∞ e^{-λu} p_{a+u}(0) du, Brownian d = 1
    let g = line(0.05);
    let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.25));
    let p = params(2.0, 1, 2.0);
    let (lambda, eps, a) = (1.5, 0.2, 0.3);
    let o = KernelMomentOracle::new(&h, KernelSpec::Green { lambda, eps }, p).unwrap();
    let got = o.kernel_at_origin(a).unwrap();
    let steps = 400_000;
    let top = 40.0;
    let du = (top - eps) / steps as f64;
    let mut want = 0.0;
    for i in 0..steps {
        let u = eps + (i as f64 + 0.5) * du;
        want += (-lambda * u).exp() / (2.0 * PI * (a + u)).sqrt() * du;
    }
    assert!((got / want - 1.0).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn kernel_moment_is_symmetric_on_the_diagonal() {
    let g = GridSpec::centered(2, 3.0, 0.1, 5.0).unwrap();
    let h = GridFunction::from_fn(g, |x| gaussian_bump(&[x[0] - 0.5, x[1]], 0.3));
    let p = params(1.5, 2, 2.0);
    let o = KernelMomentOracle::new(&h, KernelSpec::Density { eps: 0.3 }, p).unwrap();
    let a = o.moment(0.6, 0.6, 100.0).unwrap();
    let b = o.moment(0.6, 0.6, 100.0).unwrap();
    assert_eq!(a, b);
    assert!(a.independent > 0.0 && a.common_ancestor > 0.0);
}

#[test]
fn kernel_moment_bounded_by_density_sup_times_mass() {
    // K = ∞ independent term ≤ ‖h‖_∞ μ(1)
    let g = line(0.05);
    let mass = 1.5;
    let h = GridFunction::from_fn(g, |x| if x[0].abs() <= 1.0 { mass / 2.0 } else { 0.0 });
    let p = params(1.5, 1, 2.0);
    let o = KernelMomentOracle::new(&h, KernelSpec::Density { eps: 0.05 }, p).unwrap();
    let m = o.moment(0.5, 0.5, f64::INFINITY).unwrap();
    let sup = h.values.iter().cloned().fold(0.0, f64::max);
    assert!(m.independent <= sup * h.integral());
}

#[test]
fn kernel_moment_rejects_unbounded_kernels() {
    let g = line(0.1);
    let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.25));
    let p3 = MechanismParams::new(1.5, 1, 0.5, 2.0).unwrap();
    assert!(KernelMomentOracle::new(&h, KernelSpec::Green { lambda: 0.0, eps: 0.1 }, p3).is_err());
    assert!(KernelMomentOracle::new(&h, KernelSpec::Density { eps: 0.0 }, p3).is_err());
    assert!(KernelMomentOracle::new(&h, KernelSpec::Green { lambda: 1.0, eps: 0.0 }, p3).is_ok());
    let full = params(1.5, 1, f64::INFINITY);
    assert!(KernelMomentOracle::new(&h, KernelSpec::Density { eps: 0.1 }, full).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn semigroup_composes(alpha in 0.6f64..2.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let g = GridSpec::centered(1, 4.0, 0.05, 12.0).unwrap();
        let p = params(alpha, 1, 2.0);
        let f = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.2));
        let a = apply_semigroup(&apply_semigroup(&f, s, true, &p).unwrap(), t, true, &p).unwrap();
        let b = apply_semigroup(&f, s + t, true, &p).unwrap();
        prop_assert!(max_diff(&a, &b) < 1e-8);
        let untruncated = apply_semigroup(&f, s + t, false, &p).unwrap();
        let damp = (-p.c_beta_k() * (s + t)).exp();
        for (x, y) in b.values.iter().zip(&untruncated.values) {
            prop_assert!((x - damp * y).abs() <= 1e-14);
        }
        prop_assert!((untruncated.integral() - f.integral()).abs() < 1e-8);
    }

    #[test]
    fn oracle_cross_moment_dominates_product(t in 0.1f64..1.0, frac in 0.1f64..1.0, k in 0.5f64..4.0) {
        let g = GridSpec::centered(1, 4.0, 0.1, 6.0).unwrap();
        let p = params(1.5, 1, k);
        let h = GridFunction::from_fn(g, |x| gaussian_bump(x, 0.3));
        let phi = GridFunction::from_fn(g, |x| (-x[0] * x[0]).exp());
        let s = frac * t;
        let c = cross_moment(&h, &phi, &phi, t, s, &p, 16).unwrap();
        let prod = first_moment(&h, &phi, t, &p).unwrap() * first_moment(&h, &phi, s, &p).unwrap();
        prop_assert!(c >= prod);
    }
}
