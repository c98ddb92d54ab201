//! Tabulated radial profile of `p_1` with log-log spline interpolation.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use super::density::{p1_at_origin, p1_radial};
use crate::error::{config, domain, Error, Result};
use crate::special::sphere_area;

pub const GRID_LEN: usize = 512;
pub const GRID_R_MIN: f64 = 1e-4;
pub const GRID_R_MAX: f64 = 1e3;

const MAGIC: &[u8; 4] = b"SKT1";

/// Natural cubic spline through `(x_i, y_i)`.
#[derive(Debug, Clone)]
pub(crate) struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    pub(crate) fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 3 && y.len() == n);
        // Tridiagonal system for the second derivatives, natural ends.
        let mut m = vec![0.0; n];
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let a = h0 / 6.0;
            let b = (h0 + h1) / 3.0;
            let c = h1 / 6.0;
            let rhs = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
            let denom = b - a * c_prime[i - 1];
            c_prime[i] = c / denom;
            d_prime[i] = (rhs - a * d_prime[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d_prime[i] - c_prime[i] * m[i + 1];
        }
        Self { x, y, m }
    }

    #[inline]
    fn segment(&self, t: f64) -> usize {
        let i = self.x.partition_point(|&v| v <= t);
        i.clamp(1, self.x.len() - 1) - 1
    }

    /// Value, first and second derivative at `t` (inside the knot range).
    #[inline]
    pub(crate) fn eval3(&self, t: f64) -> (f64, f64, f64) {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (self.y[i + 1] - self.y[i]) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }

    #[inline]
    pub(crate) fn eval(&self, t: f64) -> f64 {
        self.eval3(t).0
    }
}

/// Tabulated `p_1(|x|)` for one `(α, d)`.
///
/// Interpolation is a natural cubic spline in `(ln r, ln p)`. Below the first
/// radius the profile is continued quadratically from the exact `p_1(0)`.
/// Beyond the last radius it follows `A r^{-d-α} + B r^{-d-2α}`, the first two
/// orders of the stable tail, with `A, B` fitted at the last two grid points
/// (`tail_exponent = d + α`).
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub alpha: f64,
    pub dim: usize,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub tail_exponent: f64,
    origin: f64,
    tail: [f64; 2],
    spline: Spline,
}

impl KernelTable {
    /// Evaluates `p_1` on the default log-spaced grid.
    pub fn build(alpha: f64, dim: usize) -> Result<Self> {
        Self::build_on(alpha, dim, log_grid(GRID_R_MIN, GRID_R_MAX, GRID_LEN))
    }

    pub fn build_on(alpha: f64, dim: usize, radii: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) || dim == 0 {
            return domain(format!("no stable kernel for alpha={alpha}, d={dim}"));
        }
        let values = radii
            .par_iter()
            .map(|&r| p1_radial(alpha, dim, r))
            .collect::<Result<Vec<_>>>()?;
        // The Gaussian profile underflows on the outer grid; keep the radii
        // where it is representable (α = 2 evaluation never uses the table).
        let keep = values.iter().take_while(|v| **v > 1e-300).count();
        let (radii, values) = (radii[..keep].to_vec(), values[..keep].to_vec());
        Self::from_parts(alpha, dim, radii, values)
    }

    /// Assembles a table from samples, validating the grid.
    pub fn from_parts(alpha: f64, dim: usize, radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.len() != values.len() || radii.len() < 4 {
            return Err(Error::Format(format!("table needs matching grids of length >= 4, got {} and {}", radii.len(), values.len())));
        }
        if radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("radii must be positive and strictly increasing".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Format("table values must be positive and finite".into()));
        }
        let n = radii.len();
        let d = dim as f64;
        let tail_exponent = d + alpha;
        // Solve A r^{-p} + B r^{-p-α} = v at the last two radii (scaled by r_n).
        let r1 = radii[n - 2] / radii[n - 1];
        let (v1, v2) = (values[n - 2], values[n - 1]);
        let (a11, a12) = (r1.powf(-tail_exponent), r1.powf(-tail_exponent - alpha));
        let det = a11 - a12;
        let tail = if alpha < 2.0 && det.abs() > 1e-12 {
            [(v1 - a12 * v2) / det, (a11 * v2 - v1) / det]
        } else {
            // Gaussian tables are never evaluated through the tail
            [v2, 0.0]
        };
        let spline = Spline::new(radii.iter().map(|r| r.ln()).collect(), values.iter().map(|v| v.ln()).collect());
        Ok(Self {
            alpha,
            dim,
            origin: p1_at_origin(alpha, dim),
            tail,
            radii,
            values,
            tail_exponent,
            spline,
        })
    }

    pub fn r_min(&self) -> f64 {
        self.radii[0]
    }

    pub fn r_max(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }

    pub fn origin_value(&self) -> f64 {
        self.origin
    }

    /// Interpolated `p_1(r)`.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        let r0 = self.radii[0];
        if r < r0 {
            let s = r / r0;
            return self.origin + (self.values[0] - self.origin) * s * s;
        }
        let n = self.radii.len();
        if r > self.radii[n - 1] {
            let s = r / self.radii[n - 1];
            return self.tail[0] * s.powf(-self.tail_exponent) + self.tail[1] * s.powf(-self.tail_exponent - self.alpha);
        }
        self.spline.eval(r.ln()).exp()
    }

    /// `(p, p', p'')` at radius `r`.
    pub fn eval_derivatives(&self, r: f64) -> (f64, f64, f64) {
        let r0 = self.radii[0];
        if r < r0 {
            let c = (self.values[0] - self.origin) / (r0 * r0);
            return (self.origin + c * r * r, 2.0 * c * r, 2.0 * c);
        }
        let n = self.radii.len();
        if r > self.radii[n - 1] {
            let s = r / self.radii[n - 1];
            let mut out = (0.0, 0.0, 0.0);
            for (amp, k) in [(self.tail[0], self.tail_exponent), (self.tail[1], self.tail_exponent + self.alpha)] {
                let p = amp * s.powf(-k);
                out.0 += p;
                out.1 += -k * p / r;
                out.2 += k * (k + 1.0) * p / (r * r);
            }
            return out;
        }
        let (y, y1, y2) = self.spline.eval3(r.ln());
        let p = y.exp();
        (p, p * y1 / r, p * (y2 + y1 * y1 - y1) / (r * r))
    }

    /// `∫_{R^d} p_1(x) dx` from the interpolant, the power-law tail and the
    /// core below the first radius.
    pub fn normalization(&self) -> f64 {
        let d = self.dim as f64;
        let area = sphere_area(self.dim);
        let (nodes, weights) = crate::quad::gauss_legendre(6);
        let mut total = 0.0;
        for w in self.radii.windows(2) {
            let (u0, u1) = (w[0].ln(), w[1].ln());
            let (mid, half) = (0.5 * (u0 + u1), 0.5 * (u1 - u0));
            for (x, wt) in nodes.iter().zip(&weights) {
                let u = mid + half * x;
                let r = u.exp();
                total += wt * half * self.eval(r) * r.powf(d);
            }
        }
        let r0 = self.radii[0];
        let core = self.origin * r0.powf(d) / d + (self.values[0] - self.origin) * r0.powf(d) / (d + 2.0);
        let rn = self.r_max();
        let k = self.tail_exponent;
        let tail = rn.powf(d) * (self.tail[0] / (k - d) + self.tail[1] / (k + self.alpha - d));
        area * (total + core + tail)
    }

    /// Serializes in the `SKT1` layout.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&(self.dim as f64).to_le_bytes())?;
        w.write_all(&(self.radii.len() as u64).to_le_bytes())?;
        for v in self.radii.iter().chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad kernel table magic {magic:?}")));
        }
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let alpha = f64::from_le_bytes(next(&mut r)?);
        let dim_f = f64::from_le_bytes(next(&mut r)?);
        let len = u64::from_le_bytes(next(&mut r)?) as usize;
        if dim_f < 1.0 || dim_f.fract() != 0.0 {
            return Err(Error::Format(format!("bad dimension {dim_f}")));
        }
        if len > 1 << 24 {
            return Err(Error::Format(format!("implausible grid length {len}")));
        }
        let mut read_vec = |r: &mut R| -> Result<Vec<f64>> {
            (0..len).map(|_| next(r).map(f64::from_le_bytes)).collect()
        };
        let radii = read_vec(&mut r)?;
        let values = read_vec(&mut r)?;
        Self::from_parts(alpha, dim_f as usize, radii, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub(crate) fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

type Key = (u64, usize);

fn registry() -> &'static Mutex<HashMap<Key, Arc<KernelTable>>> {
    static REG: OnceLock<Mutex<HashMap<Key, Arc<KernelTable>>>> = OnceLock::new();
    REG.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Returns the shared table for `(α, d)`, building and registering it on
/// first use.
pub fn kernel_table(alpha: f64, dim: usize) -> Result<Arc<KernelTable>> {
    let key = (alpha.to_bits(), dim);
    if let Some(t) = registry().lock().expect("registry poisoned").get(&key) {
        return Ok(t.clone());
    }
    // Built outside the lock; a concurrent duplicate build is harmless.
    let table = Arc::new(KernelTable::build(alpha, dim)?);
    let mut reg = registry().lock().expect("registry poisoned");
    Ok(reg.entry(key).or_insert(table).clone())
}

/// Registers an externally built or loaded table.
pub fn register_table(table: KernelTable) -> Arc<KernelTable> {
    let key = (table.alpha.to_bits(), table.dim);
    let t = Arc::new(table);
    registry().lock().expect("registry poisoned").insert(key, t.clone());
    t
}

/// The registered table for `(α, d)`, or a configuration error when none has
/// been built.
pub fn registered_table(alpha: f64, dim: usize) -> Result<Arc<KernelTable>> {
    match registry().lock().expect("registry poisoned").get(&(alpha.to_bits(), dim)) {
        Some(t) => Ok(t.clone()),
        None => config(format!("no kernel table built for alpha={alpha}, d={dim}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_cubic_interior() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = Spline::new(x, y);
        for t in [0.55, 1.23, 3.3] {
            assert!((s.eval(t) - f64::sin(t)).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_non_monotone_grid() {
        let r = vec![1.0, 2.0, 2.0, 3.0];
        assert!(KernelTable::from_parts(1.5, 1, r, vec![1.0; 4]).is_err());
    }

    #[test]
    fn missing_table_is_configuration_error() {
        let err = registered_table(1.234, 7).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
