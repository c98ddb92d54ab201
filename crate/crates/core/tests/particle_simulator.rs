use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siltlab_core::mechanism::MechanismParams;
use siltlab_core::offspring::OffspringLaw;
use siltlab_core::particles::{
    init_cloud, jump_exceedance, mc_moment, replicate_rng, run_replicates, simulate_from, simulate_path, InitialDensity, MeanEstimate,
    PathRecord, RunConfig, SimHooks,
};
use siltlab_core::Error;
use statrs::distribution::{ContinuousCDF, Normal};

fn config(alpha: f64, dim: usize, k: f64, n: f64, replicates: usize) -> RunConfig {
    RunConfig {
        params: MechanismParams::new(alpha, dim, 0.5, k).unwrap(),
        n,
        horizon: 1.0,
        delta: 0.25,
        replicates,
        seed: 7,
        initial: InitialDensity::Gaussian { var: 0.25 },
        initial_mass: 1.0,
        population_cap: 10_000_000,
        hooks: SimHooks::default(),
    }
}

#[test]
fn uniform_initial_cloud() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = init_cloud(&InitialDensity::UniformBox { lo: 0.0, hi: 1.0 }, 2, 1.0, 1000.0, &mut rng).unwrap();
    assert_eq!(cloud.count(), 1000);
    assert!((cloud.total_mass() - 1.0).abs() < 1e-12);
    for a in 0..2 {
        let xs: Vec<f64> = (0..cloud.count()).map(|i| cloud.point(i)[a]).collect();
        let m = MeanEstimate::from_samples(&xs);
        assert!((m.mean - 0.5).abs() < 3.0 * m.std_error);
    }
    let two = init_cloud(&InitialDensity::Gaussian { var: 1.0 }, 1, 2.0, 500.0, &mut rng).unwrap();
    assert_eq!(two.count(), 1000);
}

#[test]
fn gaussian_initial_marginal_passes_ks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = init_cloud(&InitialDensity::Gaussian { var: 0.5 }, 3, 1.0, 4000.0, &mut rng).unwrap();
    let normal = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    for a in 0..3 {
        let mut xs: Vec<f64> = (0..cloud.count()).map(|i| cloud.point(i)[a]).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(d < 1.628 / n.sqrt(), "axis {a}: D={d}");
    }
}

#[test]
fn bump_density_is_normalised_and_sampled_inside() {
    let h = InitialDensity::Bump { radius: 2.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cloud = init_cloud(&h, 2, 1.0, 2000.0, &mut rng).unwrap();
    assert!((0..cloud.count()).all(|i| cloud.point(i).iter().map(|v| v * v).sum::<f64>() < 4.0));
    // midpoint rule on [-2, 2]²
    let m = 400;
    let step = 4.0 / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            total += h.density(&[-2.0 + (i as f64 + 0.5) * step, -2.0 + (j as f64 + 0.5) * step]) * step * step;
        }
    }
    assert!((total - 1.0).abs() < 1e-4);
}

#[test]
fn rejects_unsamplable_densities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bad = InitialDensity::UniformBox { lo: 0.0, hi: f64::INFINITY };
    assert!(matches!(init_cloud(&bad, 1, 1.0, 10.0, &mut rng), Err(Error::Config(_))));
    assert!(matches!(init_cloud(&InitialDensity::Gaussian { var: -1.0 }, 1, 1.0, 10.0, &mut rng), Err(Error::Config(_))));
}

#[test]
fn bookkeeping_and_determinism() {
    let cfg = config(1.5, 2, 2.0, 200.0, 1);
    let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
    let a = simulate_path(&cfg, &law, &mut replicate_rng(cfg.seed, 3)).unwrap();
    let b = simulate_path(&cfg, &law, &mut replicate_rng(cfg.seed, 3)).unwrap();
    assert_eq!(a, b);
    assert!(a.mass_bookkeeping_holds());
    assert!(!a.events.is_empty());
    assert!(a.times.windows(2).all(|w| w[1] > w[0]));
    assert!(a.events.windows(2).all(|w| w[1].time >= w[0].time));
    assert_eq!(a.snapshots.len(), 5);
    let mut buf = Vec::new();
    a.write_spr1(&mut buf).unwrap();
    let mut again = Vec::new();
    b.write_spr1(&mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn spr1_round_trip() {
    let cfg = config(2.0, 3, 1.0, 50.0, 1);
    let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
    let p = simulate_path(&cfg, &law, &mut replicate_rng(1, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.spr1");
    p.save(&file).unwrap();
    let back = PathRecord::load(&file).unwrap();
    assert_eq!(back, p);
    let bytes = std::fs::read(&file).unwrap();
    assert_eq!(&bytes[..4], b"SPR1");
    assert!(matches!(PathRecord::read_spr1(&b"SPR0xxxxxxxx"[..]), Err(Error::Format(_))));
}

#[test]
fn frozen_motion_keeps_the_spatial_law() {
    let mut cfg = config(1.5, 1, 2.0, 300.0, 1);
    cfg.hooks.freeze_motion = true;
    let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
    let mut rng = replicate_rng(5, 0);
    let init = init_cloud(&cfg.initial, 1, 1.0, cfg.n, &mut rng).unwrap();
    let original = init.positions.clone();
    let p = simulate_from(&cfg, &law, init, &mut rng).unwrap();
    // every atom sits on an initial atom's position
    let last = p.snapshots.last().unwrap();
    assert!(last.positions.iter().all(|x| original.contains(x)));
}

#[test]
fn frozen_branching_keeps_count() {
    let mut cfg = config(1.5, 1, 2.0, 300.0, 1);
    cfg.hooks.freeze_branching = true;
    let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
    let p = simulate_path(&cfg, &law, &mut replicate_rng(5, 0)).unwrap();
    assert!(p.events.is_empty());
    assert!(p.snapshots.iter().all(|s| s.count() == 300));
}

#[test]
fn brownian_motion_variance_without_branching() {
    let mut cfg = config(2.0, 1, 2.0, 20_000.0, 1);
    cfg.hooks.freeze_branching = true;
    let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
    let p = simulate_path(&cfg, &law, &mut replicate_rng(9, 0)).unwrap();
    let last = p.snapshots.last().unwrap();
    let var = last.integrate(|x| x[0] * x[0]) / last.total_mass();
    // initial var 0.25 plus time 1
    assert!((var - 1.25).abs() < 4.0 * 1.25 * (2.0 / 20_000f64).sqrt(), "{var}");
}

#[test]
fn subcritical_mean_mass_decays() {
    let cfg = config(1.5, 1, 2.0, 200.0, 400);
    let est = mc_moment(&cfg, &|_| 1.0, 1.0, 1).unwrap();
    let want = (-cfg.params.c_beta_k()).exp();
    assert!(est.z_score(want).abs() < 3.0, "{est:?} vs {want}");
}

#[test]
fn critical_mean_mass_is_constant() {
    let mut cfg = config(1.5, 1, f64::INFINITY, 100.0, 400);
    cfg.horizon = 0.5;
    let samples = run_replicates(&cfg, |p| p.snapshots.iter().map(|s| s.total_mass()).collect::<Vec<_>>()).unwrap();
    for j in 1..samples[0].len() {
        let xs: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let m = MeanEstimate::from_samples(&xs);
        assert!(m.z_score(1.0).abs() < 3.0, "t={}: {m:?}", j as f64 * cfg.delta);
    }
}

#[test]
fn second_moment_requires_truncation() {
    let cfg = config(1.5, 1, f64::INFINITY, 10.0, 2);
    assert!(matches!(mc_moment(&cfg, &|_| 1.0, 1.0, 2), Err(Error::Domain(_))));
    assert!(matches!(mc_moment(&cfg, &|_| 1.0, 0.3, 1), Err(Error::Domain(_))));
}

#[test]
fn population_cap_aborts() {
    let mut cfg = config(1.5, 1, f64::INFINITY, 100.0, 1);
    cfg.population_cap = 101;
    let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
    let mut aborted = false;
    for r in 0..20 {
        if let Err(Error::Aborted(_)) = simulate_path(&cfg, &law, &mut replicate_rng(2, r)) {
            aborted = true;
        }
    }
    assert!(aborted);
}

#[test]
fn extinction_leaves_empty_snapshots() {
    let mut cfg = config(1.5, 1, 0.5, 1.0, 1);
    cfg.horizon = 4.0;
    let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
    let mut found = false;
    for r in 0..50 {
        let p = simulate_path(&cfg, &law, &mut replicate_rng(3, r)).unwrap();
        assert!(p.mass_bookkeeping_holds());
        if let Some(j) = p.snapshots.iter().position(|s| s.count() == 0) {
            assert!(p.snapshots[j..].iter().all(|s| s.count() == 0));
            found = true;
        }
    }
    assert!(found);
}

#[test]
fn exceedance_is_monotone_and_vanishes_above_largest_event() {
    let mut cfg = config(1.5, 1, f64::INFINITY, 50.0, 200);
    cfg.delta = 1.0;
    let ks = [0.01, 0.05, 0.1, 0.5, 1e6];
    let rows = jump_exceedance(&cfg, &ks).unwrap();
    assert!(rows.windows(2).all(|w| w[1].frequency <= w[0].frequency));
    assert_eq!(rows.last().unwrap().frequency, 0.0);
    assert!(jump_exceedance(&config(1.5, 1, 2.0, 50.0, 2), &ks).is_err());
}

#[test]
fn replicate_streams_are_independent_of_count() {
    let mut cfg = config(2.0, 1, 2.0, 50.0, 3);
    let a = run_replicates(&cfg, |p| p.snapshots[4].total_mass()).unwrap();
    cfg.replicates = 6;
    let b = run_replicates(&cfg, |p| p.snapshots[4].total_mass()).unwrap();
    assert_eq!(a[..], b[..3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bookkeeping_is_exact(seed in 0u64..1000, k in 0.3f64..4.0, n in 5.0f64..80.0, alpha in 0.5f64..2.0) {
        let mut cfg = config(alpha, 2, k, n, 1);
        cfg.seed = seed;
        let law = OffspringLaw::new(cfg.params, cfg.n).unwrap();
        let p = simulate_path(&cfg, &law, &mut replicate_rng(seed, 0)).unwrap();
        prop_assert!(p.mass_bookkeeping_holds());
        prop_assert!(p.snapshots.iter().all(|s| s.atom_mass == 1.0 / n));
    }
}
