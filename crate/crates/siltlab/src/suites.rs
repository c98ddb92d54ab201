//! One suite per experiment kind. Suites compute and return their tables;
//! the caller writes files.

use std::sync::mpsc::SyncSender;

use serde::Serialize;
use siltlab_core::mechanism::{existence_regime, MechanismParams, Regime};
use siltlab_core::oracle::{
    cross_moment, first_moment, particle_cross_correction, second_moment, GridFunction, GridSpec, KernelMomentOracle, KernelSpec,
};
use siltlab_core::pairsum::SumOptions;
use siltlab_core::particles::{exceedance_from_maxima, try_replicates, MeanEstimate, PathRecord, RunConfig};
use siltlab_core::silt::{silt_series, SiltKernels, SiltSeries};
use siltlab_core::stable::{fourier_resolvent_residual, kernel_table, p1_radial, stable_density, GreenTable, Motion};

use crate::config::{ExperimentConfig, ExperimentKind, TestFunction};
use crate::convergence::{emit_convergence_table, strictly_decreasing};
use crate::estimates::{to_csv, Assertion, EstimateRow, EstimateTable};
use crate::HarnessError;

pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const SILT_SERIES_FILE: &str = "silt_series.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const TANAKA_FILE: &str = "tanaka.csv";
pub const REGIME_FILE: &str = "regime.csv";
pub const JUMPS_FILE: &str = "jumps.csv";

/// Everything a suite produced.
#[derive(Debug, Default)]
pub struct SuiteOutput {
    pub estimates: EstimateTable,
    /// Checks beyond the per-row verdicts of `estimates`.
    pub assertions: Vec<Assertion>,
    /// Extra CSV files as `(name, bytes)`.
    pub tables: Vec<(String, Vec<u8>)>,
    pub series: Vec<SiltSeries>,
}

impl SuiteOutput {
    pub fn all_assertions(&self) -> Vec<Assertion> {
        let mut all = self.estimates.assertions();
        all.extend(self.assertions.iter().cloned());
        all
    }
}

/// Worker-side handle for path dumps; a single writer thread receives the
/// encoded paths.
#[derive(Default)]
pub struct Context {
    pub dump: Option<SyncSender<(u64, Vec<u8>)>>,
}

impl Context {
    fn observe(&self, index: u64, path: &PathRecord) -> siltlab_core::Result<()> {
        if let Some(tx) = &self.dump {
            let mut bytes = Vec::new();
            path.write_spr1(&mut bytes)?;
            tx.send((index, bytes)).map_err(|_| siltlab_core::Error::Aborted("path writer stopped".into()))?;
        }
        Ok(())
    }
}

pub fn run_suite(cfg: &ExperimentConfig, ctx: &Context) -> Result<SuiteOutput, HarnessError> {
    match cfg.kind {
        ExperimentKind::Kernels => kernels(cfg),
        ExperimentKind::Moments => moments(cfg, ctx),
        ExperimentKind::Silt => silt(cfg, ctx),
        ExperimentKind::Tanaka => tanaka(cfg, ctx),
        ExperimentKind::Regime => regime(cfg),
        ExperimentKind::Jumps => jumps(cfg, ctx),
    }
}

/// Builds the shared `p_1` table when the motion has no closed form.
fn ensure_table(m: Motion) -> siltlab_core::Result<()> {
    if !m.is_gaussian() && !m.is_cauchy() {
        kernel_table(m.alpha, m.dim)?;
    }
    Ok(())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn kernels(cfg: &ExperimentConfig) -> Result<SuiteOutput, HarnessError> {
    let tol = cfg.tolerances;
    let m = cfg.run.params.motion();
    ensure_table(m)?;
    let mut est = EstimateTable::default();
    let radii = [0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0];

    let cauchy = kernel_table(1.0, 1)?;
    let worst = radii.iter().map(|&r| rel_err(cauchy.eval(r), 1.0 / (std::f64::consts::PI * (1.0 + r * r)))).fold(0.0, f64::max);
    est.push(EstimateRow::checked("cauchy_table_max_rel_err", "alpha=1,d=1", worst, 0.0, tol.kernel));

    let g = Motion::new(2.0, m.dim)?;
    let mut worst: f64 = 0.0;
    for t in [0.25, 1.0, 3.0] {
        for &r in &radii[..6] {
            let mut x = vec![0.0; m.dim];
            x[0] = r;
            let exact = (2.0 * std::f64::consts::PI * t).powf(-(m.dim as f64) / 2.0) * (-r * r / (2.0 * t)).exp();
            worst = worst.max(rel_err(stable_density(g, t, &x)?, exact));
        }
    }
    est.push(EstimateRow::checked("gaussian_density_max_rel_err", format!("alpha=2,d={}", m.dim), worst, 0.0, tol.kernel));

    // Interpolated p_t against direct quadrature of p_1 at the rescaled radius.
    let mut worst: f64 = 0.0;
    for t in [0.1f64, 1.0, 4.0] {
        for &r in &radii[..7] {
            let mut x = vec![0.0; m.dim];
            x[0] = r;
            let s = t.powf(-1.0 / m.alpha);
            let direct = s.powi(m.dim as i32) * p1_radial(m.alpha, m.dim, r * s)?;
            worst = worst.max(rel_err(stable_density(m, t, &x)?, direct));
        }
    }
    let here = format!("alpha={},d={}", m.alpha, m.dim);
    est.push(EstimateRow::checked("scaling_law_max_rel_err", here.clone(), worst, 0.0, tol.kernel));

    if !m.is_gaussian() {
        let table = kernel_table(m.alpha, m.dim)?;
        est.push(EstimateRow::checked("radial_normalization", here.clone(), table.normalization(), 1.0, tol.kernel));
    }

    let lambda = 1.0;
    let green = GreenTable::build(Motion::new(2.0, 1)?, lambda, 0.0)?;
    let k = (2.0 * lambda).sqrt();
    let worst = [0.01, 0.1, 0.5, 1.0, 2.0, 4.0].iter().map(|&r| rel_err(green.eval(r), (-k * r).exp() / k)).fold(0.0, f64::max);
    est.push(EstimateRow::checked("gaussian_green_max_rel_err", "alpha=2,d=1,lambda=1,eps=0", worst, 0.0, tol.kernel));

    let zgrid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
    let r = fourier_resolvent_residual(Motion::new(2.0, 1)?, 1.0, 0.0, &zgrid)?;
    est.push(EstimateRow::checked("resolvent_residual", "alpha=2,d=1,lambda=1,eps=0", r, 0.0, 1e-8));
    for &eps in &cfg.eps {
        let r = fourier_resolvent_residual(m, cfg.lambda, eps, &zgrid)?;
        est.push(EstimateRow::checked("resolvent_residual", format!("{here},lambda={},eps={eps}", cfg.lambda), r, 0.0, tol.resolvent));
    }
    Ok(SuiteOutput { estimates: est, ..Default::default() })
}

fn grid_of(cfg: &ExperimentConfig) -> siltlab_core::Result<GridSpec> {
    GridSpec::centered(cfg.run.params.dim, cfg.grid.half_width, cfg.grid.h, cfg.grid.margin)
}

fn on_grid(grid: GridSpec, f: TestFunction) -> GridFunction {
    match f {
        TestFunction::Constant { value } => GridFunction::constant(grid, value),
        f => GridFunction::from_fn(grid, |x| f.eval(x)),
    }
}

fn snapshot_index(run: &RunConfig, t: f64) -> usize {
    (t / run.delta).round() as usize
}

fn describe(p: &MechanismParams) -> String {
    format!("alpha={},d={},beta={},K={}", p.alpha, p.dim, p.beta, p.k)
}

fn moments(cfg: &ExperimentConfig, ctx: &Context) -> Result<SuiteOutput, HarnessError> {
    let run = &cfg.run;
    let p = run.params;
    let m = &cfg.moments;
    let z_max = cfg.tolerances.z_max;
    let grid = grid_of(cfg)?;
    let h = run.initial.on_grid(grid, run.initial_mass);
    let phi = on_grid(grid, m.phi);

    let idx: Vec<usize> = m.times.iter().map(|&t| snapshot_index(run, t)).collect();
    let cross = m.cross.map(|c| (snapshot_index(run, c.t), snapshot_index(run, c.s), c));
    let samples = try_replicates(run, |r, path| {
        ctx.observe(r, path)?;
        let mut v: Vec<f64> = idx.iter().map(|&j| path.snapshots[j].integrate(|x| m.phi.eval(x))).collect();
        if let Some((jt, js, c)) = cross {
            v.push(path.snapshots[jt].integrate(|x| c.phi.eval(x)) * path.snapshots[js].integrate(|x| c.psi.eval(x)));
        }
        Ok(v)
    })?;
    let column = |k: usize, pow: i32| -> MeanEstimate { MeanEstimate::from_samples(&samples.iter().map(|v| v[k].powi(pow)).collect::<Vec<_>>()) };

    let mut est = EstimateTable::default();
    let base = format!("{},n={},R={}", describe(&p), run.n, run.replicates);
    for (k, &t) in m.times.iter().enumerate() {
        let here = format!("{base},t={t}");
        let first = first_moment(&h, &phi, t, &p)?;
        est.push(EstimateRow::scored("first_moment", here.clone(), &column(k, 1), first, z_max));
        if m.second {
            let exact = second_moment(&h, &phi, t, &p, m.intervals)? + particle_cross_correction(&h, &phi, &phi, t, t, &p, run.n)?;
            est.push(EstimateRow::scored("second_moment", here, &column(k, 2), exact, z_max));
        }
    }
    if let Some(c) = m.cross {
        let (a, b) = (on_grid(grid, c.phi), on_grid(grid, c.psi));
        let exact = cross_moment(&h, &a, &b, c.t, c.s, &p, m.intervals)? + particle_cross_correction(&h, &a, &b, c.t, c.s, &p, run.n)?;
        let here = format!("{base},t={},s={}", c.t, c.s);
        est.push(EstimateRow::scored("cross_moment", here, &column(m.times.len(), 1), exact, z_max));
    }
    Ok(SuiteOutput { estimates: est, ..Default::default() })
}

/// One `(path, ε)` row of the SILT series file.
#[derive(Debug, Clone, Copy, Serialize)]
struct SeriesRow {
    path_id: u64,
    eps: f64,
    lambda: f64,
    gamma: f64,
    gamma_tilde: f64,
    t1: f64,
    t2: f64,
    t3: f64,
    t4: f64,
}

fn series_csv(series: &[SiltSeries]) -> Vec<u8> {
    let rows: Vec<SeriesRow> = series
        .iter()
        .flat_map(|s| {
            s.rows.iter().map(move |r| SeriesRow {
                path_id: s.path_id,
                eps: r.eps,
                lambda: r.lambda,
                gamma: r.gamma,
                gamma_tilde: r.gamma_tilde,
                t1: r.t1,
                t2: r.t2,
                t3: r.t3,
                t4: r.t4,
            })
        })
        .collect();
    to_csv(&rows)
}

fn silt(cfg: &ExperimentConfig, ctx: &Context) -> Result<SuiteOutput, HarnessError> {
    let run = &cfg.run;
    let p = run.params;
    ensure_table(p.motion())?;
    let kernels = SiltKernels::new(p.motion(), &cfg.eps, cfg.lambda)?;
    let opts = SumOptions::default();
    let series = try_replicates(run, |r, path| {
        ctx.observe(r, path)?;
        silt_series(path, r, &kernels, run.horizon, &opts)
    })?;

    let mut out = SuiteOutput::default();
    let base = format!("{},n={},R={},delta={}", describe(&p), run.n, run.replicates, run.delta);
    let h = if cfg.silt.oracle { Some(run.initial.on_grid(grid_of(cfg)?, run.initial_mass)) } else { None };
    for (k, &eps) in cfg.eps.iter().enumerate() {
        let here = format!("{base},eps={eps}");
        let gamma = MeanEstimate::from_samples(&series.iter().map(|s| s.rows[k].gamma).collect::<Vec<_>>());
        match &h {
            Some(h) => {
                let oracle = KernelMomentOracle::new(h, KernelSpec::Density { eps }, p)?;
                let exact = oracle.discrete_silt_mean(run.delta, run.steps(), run.n)?;
                out.estimates.push(EstimateRow::scored("silt_mean", here.clone(), &gamma, exact, cfg.tolerances.z_max));
            }
            None => out.estimates.push(EstimateRow {
                std_error: Some(gamma.std_error),
                count: Some(gamma.count),
                ..EstimateRow::value("silt_mean", here.clone(), gamma.mean)
            }),
        }
        let tilde = MeanEstimate::from_samples(&series.iter().map(|s| s.rows[k].gamma_tilde).collect::<Vec<_>>());
        out.estimates.push(EstimateRow {
            std_error: Some(tilde.std_error),
            count: Some(tilde.count),
            ..EstimateRow::value("renormalized_silt_mean", format!("{here},lambda={}", cfg.lambda), tilde.mean)
        });
    }

    if cfg.eps.len() >= 2 && series.len() >= crate::convergence::MIN_PATHS {
        let table = emit_convergence_table(&series)?;
        let regime = match cfg.silt.regime {
            Some(r) => r,
            None => existence_regime(p.alpha, p.dim, p.beta)?.regime,
        };
        let (g, gt) = (table.gamma_diffs(), table.gamma_tilde_diffs());
        let detail = |v: &[f64]| format!("median successive differences {v:?} ({})", regime.label());
        match regime {
            Regime::Silt => out.assertions.push(Assertion::new("gamma_cauchy_trend", strictly_decreasing(&g), detail(&g))),
            Regime::RenormalizedSilt => {
                out.assertions.push(Assertion::new("gamma_tilde_cauchy_trend", strictly_decreasing(&gt), detail(&gt)));
                out.assertions.push(Assertion::new("gamma_trend_breaks_without_renormalization", !strictly_decreasing(&g), detail(&g)));
            }
            Regime::None => log::info!("no existence regime for {}; trend reported only", describe(&p)),
        }
        out.tables.push((CONVERGENCE_FILE.into(), table.to_csv()));
    } else {
        log::info!("convergence table skipped: needs >= 2 eps and >= {} paths", crate::convergence::MIN_PATHS);
    }
    out.tables.push((SILT_SERIES_FILE.into(), series_csv(&series)));
    out.series = series;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TanakaRow {
    path_id: u64,
    delta: f64,
    lambda: f64,
    eps: f64,
    gamma: f64,
    t1: f64,
    t2: f64,
    t3: f64,
    t4: f64,
    reconstruction: f64,
    relative_gap: f64,
}

fn median(xs: Vec<f64>) -> f64 {
    use statrs::statistics::{Data, Median};
    Data::new(xs).median()
}

fn tanaka(cfg: &ExperimentConfig, ctx: &Context) -> Result<SuiteOutput, HarnessError> {
    let run = &cfg.run;
    let p = run.params;
    ensure_table(p.motion())?;
    let kernels = cfg.lambdas.iter().map(|&l| SiltKernels::new(p.motion(), &cfg.eps, l)).collect::<siltlab_core::Result<Vec<_>>>()?;
    let strides = &cfg.tanaka.strides;
    let opts = SumOptions::default();
    // Per path: rows ordered by (stride, λ, ε).
    let per_path = try_replicates(run, |r, path| {
        ctx.observe(r, path)?;
        let mut rows = Vec::new();
        for &stride in strides {
            let sub = path.subsample(stride)?;
            for k in &kernels {
                for t in silt_series(&sub, r, k, run.horizon, &opts)?.rows {
                    rows.push(TanakaRow {
                        path_id: r,
                        delta: sub.delta(),
                        lambda: t.lambda,
                        eps: t.eps,
                        gamma: t.gamma,
                        t1: t.t1,
                        t2: t.t2,
                        t3: t.t3,
                        t4: t.t4,
                        reconstruction: t.tanaka_sum(),
                        relative_gap: t.closure_gap(),
                    });
                }
            }
        }
        Ok(rows)
    })?;

    let (nl, ne) = (cfg.lambdas.len(), cfg.eps.len());
    let at = |rows: &[TanakaRow], s: usize, l: usize, e: usize| rows[(s * nl + l) * ne + e];
    let mut out = SuiteOutput::default();
    let base = format!("{},n={},R={}", describe(&p), run.n, run.replicates);
    for (l, &lambda) in cfg.lambdas.iter().enumerate() {
        for (e, &eps) in cfg.eps.iter().enumerate() {
            let medians: Vec<f64> = (0..strides.len()).map(|s| median(per_path.iter().map(|rows| at(rows, s, l, e).relative_gap).collect())).collect();
            for (s, &gap) in medians.iter().enumerate() {
                let delta = at(&per_path[0], s, l, e).delta;
                out.estimates.push(EstimateRow {
                    count: Some(per_path.len()),
                    ..EstimateRow::value("tanaka_median_relative_gap", format!("{base},delta={delta},lambda={lambda},eps={eps}"), gap)
                });
            }
            let name = format!("tanaka_gap_shrinks [lambda={lambda},eps={eps}]");
            out.assertions.push(Assertion::new(name, strictly_decreasing(&medians), format!("median relative gaps {medians:?} for strides {strides:?}")));
        }
    }
    if nl >= 2 {
        for (e, &eps) in cfg.eps.iter().enumerate() {
            let mut checked = 0usize;
            let mut held = 0usize;
            for rows in &per_path {
                for s in 0..strides.len() {
                    let cases: Vec<TanakaRow> = (0..nl).map(|l| at(rows, s, l, e)).collect();
                    let gap = cases.iter().map(|c| (c.gamma - c.reconstruction).abs()).fold(0.0, f64::max);
                    for a in &cases {
                        for b in &cases {
                            checked += 1;
                            held += usize::from((a.reconstruction - b.reconstruction).abs() <= gap * (1.0 + 1e-12));
                        }
                    }
                }
            }
            let name = format!("tanaka_lambda_independence [eps={eps}]");
            out.assertions.push(Assertion::new(name, held == checked, format!("{held} of {checked} pairs within the closure gap for lambda in {:?}", cfg.lambdas)));
        }
    }
    let rows: Vec<TanakaRow> = per_path.into_iter().flatten().collect();
    out.tables.push((TANAKA_FILE.into(), to_csv(&rows)));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct RegimeRow {
    alpha: f64,
    dim: usize,
    beta: f64,
    regime: &'static str,
    silt_threshold: f64,
    renormalized_threshold: f64,
    expected: Option<&'static str>,
    pass: Option<bool>,
}

fn regime(cfg: &ExperimentConfig) -> Result<SuiteOutput, HarnessError> {
    let mut out = SuiteOutput::default();
    let mut rows = Vec::new();
    for p in &cfg.regime.points {
        let v = existence_regime(p.alpha, p.dim, p.beta)?;
        let pass = p.expected.map(|e| e == v.regime);
        if let Some(e) = p.expected {
            let name = format!("regime [alpha={},d={},beta={}]", p.alpha, p.dim, p.beta);
            out.assertions.push(Assertion::new(name, e == v.regime, format!("got {}, expected {}", v.regime.label(), e.label())));
        }
        rows.push(RegimeRow {
            alpha: p.alpha,
            dim: p.dim,
            beta: p.beta,
            regime: v.regime.label(),
            silt_threshold: v.silt_threshold,
            renormalized_threshold: v.renormalized_threshold,
            expected: p.expected.map(|e| e.label()),
            pass,
        });
    }
    out.tables.push((REGIME_FILE.into(), to_csv(&rows)));
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x` over points with `y > 0`,
/// or `None` with fewer than two such points.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, y)| **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn jumps(cfg: &ExperimentConfig, ctx: &Context) -> Result<SuiteOutput, HarnessError> {
    let run = &cfg.run;
    let largest = try_replicates(run, |r, path| {
        ctx.observe(r, path)?;
        Ok(path.largest_event_mass())
    })?;
    let levels = &cfg.jumps.levels;
    let rows = exceedance_from_maxima(&largest, levels);
    let mut out = SuiteOutput::default();
    let here = format!("{},n={},R={},T={}", describe(&run.params), run.n, run.replicates, run.horizon);
    let freqs: Vec<f64> = rows.iter().map(|r| r.frequency).collect();
    let slope = log_log_slope(levels, &freqs).unwrap_or(f64::NAN);
    out.estimates.push(match cfg.jumps.expected_slope {
        Some(s) => EstimateRow::checked("exceedance_slope", here.clone(), slope, s, cfg.tolerances.slope),
        None => EstimateRow::value("exceedance_slope", here.clone(), slope),
    });
    // Large jumps arrive at rate ∝ K^{-(1+β)}, which fixes the small-probability slope.
    out.estimates.push(EstimateRow { reference: Some(-(1.0 + run.params.beta)), ..EstimateRow::value("exceedance_slope_vs_jump_rate", here, slope) });
    out.tables.push((JUMPS_FILE.into(), to_csv(&rows)));
    Ok(out)
}
