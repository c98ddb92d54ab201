//! Isotropic α-stable transition densities, Green functions and sampling.
//!
//! Normalization: for α < 2 the motion has characteristic function
//! `exp(-t|z|^α)`; for α = 2 it is Brownian motion with covariance `t·I`,
//! i.e. symbol `|z|²/2`. [`motion_symbol`] is the single definition used by
//! the semigroup, the Fourier checks and the sampler.

mod checks;
mod density;
mod green;
mod sample;
mod table;

pub use checks::{density_envelope_check, fourier_resolvent_residual, radial_transform, riesz_exponent_check, riesz_integral, EnvelopeReport};
pub use density::{cauchy_density, gaussian_density, p1_at_origin, p1_radial, p1_tail_coefficient};
pub use green::{green_constant, green_value, GreenTable};
pub use sample::sample_stable_increment;
pub use table::{kernel_table, register_table, registered_table, KernelTable, GRID_LEN, GRID_R_MAX, GRID_R_MIN};

use std::sync::Arc;

use crate::error::{domain, Result};

/// The spatial part of a mechanism: stability index and dimension.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Motion {
    pub alpha: f64,
    pub dim: usize,
}

impl Motion {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return domain(format!("stability index must lie in (0, 2], got {alpha}"));
        }
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        Ok(Self { alpha, dim })
    }

    pub fn is_gaussian(&self) -> bool {
        self.alpha == 2.0
    }

    /// Cauchy case, where `p_1` has a closed form in every dimension.
    pub fn is_cauchy(&self) -> bool {
        self.alpha == 1.0
    }

    pub fn symbol(&self, z: f64) -> f64 {
        motion_symbol(self.alpha, z)
    }

    /// Radial profile of `p_1`. Uses closed forms when available and the
    /// registered table otherwise.
    pub fn profile(&self) -> Result<Profile> {
        if self.is_gaussian() || self.is_cauchy() {
            Ok(Profile::Closed(*self))
        } else {
            Ok(Profile::Table(registered_table(self.alpha, self.dim)?))
        }
    }
}

/// Fourier multiplier of the motion generator (with a minus sign).
pub fn motion_symbol(alpha: f64, z: f64) -> f64 {
    if alpha == 2.0 {
        0.5 * z * z
    } else {
        z.abs().powf(alpha)
    }
}

/// A ready-to-evaluate radial profile `r -> p_1(r)`.
#[derive(Debug, Clone)]
pub enum Profile {
    Closed(Motion),
    Table(Arc<KernelTable>),
}

impl Profile {
    pub fn motion(&self) -> Motion {
        match self {
            Profile::Closed(m) => *m,
            Profile::Table(t) => Motion { alpha: t.alpha, dim: t.dim },
        }
    }

    #[inline]
    pub fn p1(&self, r: f64) -> f64 {
        match self {
            Profile::Closed(m) if m.alpha == 2.0 => gaussian_density(m.dim, r),
            Profile::Closed(m) => cauchy_density(m.dim, r),
            Profile::Table(t) => t.eval(r),
        }
    }

    /// `(p_1, p_1', p_1'')` in the radial variable.
    pub fn p1_derivatives(&self, r: f64) -> (f64, f64, f64) {
        match self {
            Profile::Closed(m) if m.alpha == 2.0 => {
                let f = gaussian_density(m.dim, r);
                (f, -r * f, (r * r - 1.0) * f)
            }
            Profile::Closed(m) => {
                let f = cauchy_density(m.dim, r);
                let k = m.dim as f64 + 1.0;
                let g = 1.0 / (1.0 + r * r);
                (f, -k * r * g * f, -k * g * f * (1.0 - (k + 2.0) * r * r * g))
            }
            Profile::Table(t) => t.eval_derivatives(r),
        }
    }

    /// `p_t(r) = t^{-d/α} p_1(t^{-1/α} r)`.
    #[inline]
    pub fn pt(&self, t: f64, r: f64) -> f64 {
        let m = self.motion();
        let scale = t.powf(1.0 / m.alpha);
        self.p1(r / scale) / scale.powi(m.dim as i32)
    }
}

/// Transition density `p_t(x)` of the motion.
///
/// Fails with a configuration error when `(α, d)` needs a table that has not
/// been built (see [`kernel_table`]) and with a domain error for `t <= 0`.
pub fn stable_density(motion: Motion, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("time must be positive, got {t}"));
    }
    if x.len() != motion.dim {
        return domain(format!("point has {} coordinates, expected {}", x.len(), motion.dim));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(motion.profile()?.pt(t, r))
}
