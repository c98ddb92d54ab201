//! Versioned JSON experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use siltlab_core::mechanism::{MechanismParams, Regime};
use siltlab_core::particles::{InitialDensity, RunConfig, SimHooks};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Stable densities, Green functions and the resolvent identity.
    Kernels,
    /// Monte Carlo moments of the particle system against semigroup formulas.
    Moments,
    /// Approximating and renormalized self-intersection local times and their ε-trend.
    Silt,
    /// Closure of the regularized Tanaka decomposition as the time step shrinks.
    Tanaka,
    /// Existence regime of the self-intersection local time for (α, d, β).
    Regime,
    /// Frequency of large branching jumps in the untruncated system.
    Jumps,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [Self::Kernels, Self::Moments, Self::Silt, Self::Tanaka, Self::Regime, Self::Jumps];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Kernels => "kernels",
            Self::Moments => "moments",
            Self::Silt => "silt",
            Self::Tanaka => "tanaka",
            Self::Regime => "regime",
            Self::Jumps => "jumps",
        }
    }

    /// The result each kind checks.
    pub fn anchor(&self) -> &'static str {
        match self {
            Self::Kernels => "scaling law of the stable density and the resolvent identity for the Green function",
            Self::Moments => "first and second moment formulas and the spatial cross-moment formula",
            Self::Silt => "existence theorem for the (renormalized) self-intersection local time, as an ε-Cauchy trend",
            Self::Tanaka => "Tanaka-type decomposition of the approximating local time",
            Self::Regime => "existence thresholds d/2 < α and d/(2 + 1/(1+β)) < α",
            Self::Jumps => "vanishing probability of a jump above level K before the horizon",
        }
    }

    /// Whether the kind simulates paths.
    pub fn holds_paths(&self) -> bool {
        matches!(self, Self::Moments | Self::Silt | Self::Tanaka | Self::Jumps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub h: f64,
    /// Zero-padding width around the support; bounds wrap-around.
    pub margin: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_width: 6.0, h: 0.05, margin: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Largest admissible |z| of a Monte Carlo estimate against its oracle.
    pub z_max: f64,
    /// Absolute tolerance for closed-form kernel comparisons.
    pub kernel: f64,
    /// Bound on the Fourier resolvent residual.
    pub resolvent: f64,
    /// Allowed distance of the fitted exceedance slope from its expected value.
    pub slope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { z_max: 3.0, kernel: 1e-6, resolvent: 1e-6, slope: 0.2 }
    }
}

/// Test functions `φ` for the moment suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Constant { value: f64 },
    /// `N(0, var·I)` density.
    Gaussian { var: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::Gaussian { var } => siltlab_core::oracle::gaussian_bump(x, var),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            TestFunction::Constant { value } => value.is_finite(),
            TestFunction::Gaussian { var } => var > 0.0 && var.is_finite(),
        }
    }
}

/// `E[Y_t(φ) Y_s(ψ)]` with `t >= s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSpec {
    pub t: f64,
    pub s: f64,
    pub phi: TestFunction,
    pub psi: TestFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub times: Vec<f64>,
    pub phi: TestFunction,
    /// Whether to also check `E[Y_t(φ)²]`.
    pub second: bool,
    pub cross: Option<CrossSpec>,
    /// Simpson intervals of the time integral in the second-moment oracle.
    pub intervals: usize,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            times: vec![1.0],
            phi: TestFunction::Constant { value: 1.0 },
            second: true,
            cross: Some(CrossSpec {
                t: 1.0,
                s: 0.5,
                phi: TestFunction::Gaussian { var: 0.5 },
                psi: TestFunction::Gaussian { var: 1.0 },
            }),
            intervals: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiltConfig {
    /// Compare the mean of `γ_ε` with its moment oracle (needs finite K).
    pub oracle: bool,
    /// Regime to test the ε-trend against; computed from (α, d, β) when absent.
    pub regime: Option<Regime>,
}

impl Default for SiltConfig {
    fn default() -> Self {
        Self { oracle: true, regime: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TanakaConfig {
    /// Subsampling strides of the recorded snapshots, coarsest first.
    pub strides: Vec<usize>,
}

impl Default for TanakaConfig {
    fn default() -> Self {
        Self { strides: vec![4, 2, 1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimePoint {
    pub alpha: f64,
    pub dim: usize,
    pub beta: f64,
    #[serde(default)]
    pub expected: Option<Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    pub points: Vec<RegimePoint>,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        let p = |alpha, dim, beta, expected| RegimePoint { alpha, dim, beta, expected: Some(expected) };
        Self {
            points: vec![
                p(1.8, 3, 0.9, Regime::Silt),
                p(1.8, 4, 0.9, Regime::RenormalizedSilt),
                p(1.8, 5, 0.9, Regime::None),
                p(2.0, 3, 0.5, Regime::Silt),
                p(1.5, 3, 0.5, Regime::RenormalizedSilt),
                p(2.0, 1, 0.5, Regime::Silt),
                p(2.0, 4, 0.5, Regime::RenormalizedSilt),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpsConfig {
    pub levels: Vec<f64>,
    /// Reference slope of `log P(τ_K <= T)` against `log K`; only reported when absent.
    pub expected_slope: Option<f64>,
}

impl Default for JumpsConfig {
    fn default() -> Self {
        Self { levels: vec![1.0, 2.0, 5.0, 10.0], expected_slope: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default = "desk_run")]
    pub run: RunConfig,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "one")]
    pub lambda: f64,
    /// Values of λ compared by the Tanaka suite.
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub moments: MomentsConfig,
    #[serde(default)]
    pub silt: SiltConfig,
    #[serde(default)]
    pub tanaka: TanakaConfig,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default)]
    pub jumps: JumpsConfig,
}

fn one() -> f64 {
    1.0
}

fn default_eps() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05, 0.025]
}

fn default_lambdas() -> Vec<f64> {
    vec![1.0, 4.0]
}

/// Desk-scale profile: n = 2000, R = 500, T = 1, Δ = 2^-7.
pub fn desk_run() -> RunConfig {
    RunConfig {
        params: MechanismParams { alpha: 1.5, dim: 1, beta: 0.5, k: 2.0 },
        n: 2000.0,
        horizon: 1.0,
        delta: 1.0 / 128.0,
        replicates: 500,
        seed: 20240101,
        initial: InitialDensity::Gaussian { var: 0.25 },
        initial_mass: 1.0,
        population_cap: 10_000_000,
        hooks: SimHooks::default(),
    }
}

/// A configuration rejected before any work starts.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad<T>(field: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { field: field.into(), message: message.into() })
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(field, format!("must be positive and finite, got {v}"))
    }
}

fn positive_list(field: &str, vs: &[f64]) -> Result<(), ConfigError> {
    if vs.is_empty() {
        return bad(field, "must not be empty");
    }
    for (i, &v) in vs.iter().enumerate() {
        positive(&format!("{field}[{i}]"), v)?;
    }
    Ok(())
}

fn snapshot_time(field: &str, t: f64, run: &RunConfig) -> Result<(), ConfigError> {
    let j = t / run.delta;
    if !(t >= 0.0) || t > run.horizon * (1.0 + 1e-12) || (j - j.round()).abs() > 1e-9 * j.max(1.0) {
        return bad(field, format!("{t} is not a snapshot time in [0, {}] with step {}", run.horizon, run.delta));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Desk-profile defaults for `kind`.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut run = desk_run();
        let mut eps = default_eps();
        let mut lambda = 1.0;
        match kind {
            ExperimentKind::Kernels => {
                run.params = MechanismParams { alpha: 1.5, dim: 2, beta: 0.5, k: 2.0 };
                lambda = 2.0;
                eps = vec![0.1];
            }
            ExperimentKind::Silt => run.params = MechanismParams { alpha: 2.0, dim: 1, beta: 0.5, k: 2.0 },
            ExperimentKind::Tanaka => {
                run.params = MechanismParams { alpha: 2.0, dim: 1, beta: 0.5, k: 2.0 };
                run.delta = 1.0 / 256.0;
                run.replicates = 50;
                eps = vec![0.1];
            }
            ExperimentKind::Jumps => {
                run.params.k = f64::INFINITY;
                run.n = 200.0;
                run.replicates = 2000;
                run.delta = 0.25;
            }
            _ => {}
        }
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            run,
            eps,
            lambda,
            lambdas: default_lambdas(),
            grid: GridConfig::default(),
            tolerances: Tolerances::default(),
            output_dir: None,
            moments: MomentsConfig::default(),
            silt: SiltConfig::default(),
            tanaka: TanakaConfig::default(),
            regime: RegimeConfig::default(),
            jumps: JumpsConfig::default(),
        }
    }

    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError { field: "<document>".into(), message: e.to_string() })
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        let t = &self.tolerances;
        positive("tolerances.z_max", t.z_max)?;
        positive("tolerances.kernel", t.kernel)?;
        positive("tolerances.resolvent", t.resolvent)?;
        positive("tolerances.slope", t.slope)?;
        positive("lambda", self.lambda)?;
        positive("grid.h", self.grid.h)?;
        positive("grid.half_width", self.grid.half_width)?;
        if !(self.grid.margin >= 0.0) {
            return bad("grid.margin", format!("must be non-negative, got {}", self.grid.margin));
        }
        match self.kind {
            ExperimentKind::Regime => return self.validate_regime(),
            ExperimentKind::Kernels => return positive_list("eps", &self.eps),
            _ => {}
        }
        self.validate_run()?;
        match self.kind {
            ExperimentKind::Moments => self.validate_moments(),
            ExperimentKind::Silt => {
                positive_list("eps", &self.eps)?;
                if self.silt.oracle && !self.run.params.is_truncated() {
                    return bad("silt.oracle", "the moment oracle needs a finite truncation level run.params.k");
                }
                Ok(())
            }
            ExperimentKind::Tanaka => {
                positive_list("eps", &self.eps)?;
                positive_list("lambdas", &self.lambdas)?;
                if self.tanaka.strides.is_empty() {
                    return bad("tanaka.strides", "must not be empty");
                }
                for (i, &s) in self.tanaka.strides.iter().enumerate() {
                    if s == 0 || self.run.steps() % s != 0 {
                        return bad(&format!("tanaka.strides[{i}]"), format!("{s} must be positive and divide the {} recorded steps", self.run.steps()));
                    }
                }
                if self.tanaka.strides.windows(2).any(|w| w[0] <= w[1]) {
                    return bad("tanaka.strides", "must be strictly decreasing (coarsest first)");
                }
                Ok(())
            }
            ExperimentKind::Jumps => {
                positive_list("jumps.levels", &self.jumps.levels)?;
                if self.run.params.is_truncated() {
                    return bad("run.params.k", "jump exceedance needs an untruncated run (k = null)");
                }
                Ok(())
            }
            ExperimentKind::Kernels | ExperimentKind::Regime => unreachable!(),
        }
    }

    fn validate_run(&self) -> Result<(), ConfigError> {
        let p = self.run.params;
        MechanismParams::new(p.alpha, p.dim, p.beta, p.k).map_err(|e| ConfigError { field: "run.params".into(), message: e.to_string() })?;
        self.run.validate().map_err(|e| ConfigError { field: "run".into(), message: e.to_string() })?;
        if self.run.replicates == 0 {
            return bad("run.replicates", "must be at least 1");
        }
        if self.run.initial_mass <= 0.0 {
            return bad("run.initial_mass", "must be positive");
        }
        Ok(())
    }

    fn validate_moments(&self) -> Result<(), ConfigError> {
        let m = &self.moments;
        if m.times.is_empty() {
            return bad("moments.times", "must not be empty");
        }
        for (i, &t) in m.times.iter().enumerate() {
            snapshot_time(&format!("moments.times[{i}]"), t, &self.run)?;
        }
        if !m.phi.is_valid() {
            return bad("moments.phi", format!("{:?} is not a valid test function", m.phi));
        }
        if m.intervals < 2 || m.intervals % 2 != 0 {
            return bad("moments.intervals", format!("must be even and at least 2, got {}", m.intervals));
        }
        if (m.second || m.cross.is_some()) && !self.run.params.is_truncated() {
            return bad("run.params.k", "second moments need a finite truncation level");
        }
        if let Some(c) = m.cross {
            snapshot_time("moments.cross.t", c.t, &self.run)?;
            snapshot_time("moments.cross.s", c.s, &self.run)?;
            if c.s > c.t {
                return bad("moments.cross", format!("needs t >= s, got t={}, s={}", c.t, c.s));
            }
            if !c.phi.is_valid() || !c.psi.is_valid() {
                return bad("moments.cross", "test functions must be valid");
            }
        }
        Ok(())
    }

    fn validate_regime(&self) -> Result<(), ConfigError> {
        if self.regime.points.is_empty() {
            return bad("regime.points", "must not be empty");
        }
        for (i, p) in self.regime.points.iter().enumerate() {
            MechanismParams::new(p.alpha, p.dim, p.beta, f64::INFINITY)
                .map_err(|e| ConfigError { field: format!("regime.points[{i}]"), message: e.to_string() })?;
        }
        Ok(())
    }
}
