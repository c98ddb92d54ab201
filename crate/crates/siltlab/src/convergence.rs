//! Per-ε summaries of a collection of [`SiltSeries`] and the ε-Cauchy trend.

use serde::Serialize;
use siltlab_core::silt::SiltSeries;
use statrs::statistics::{Data, Median, OrderStatistics};

/// Minimum number of paths for a convergence table.
pub const MIN_PATHS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConvergenceError {
    #[error("need at least 2 eps values, got {0}")]
    TooFewEps(usize),
    #[error("need at least {MIN_PATHS} paths, got {0}")]
    InsufficientPaths(usize),
    #[error("series disagree on the eps list or lambda")]
    Mismatched,
}

/// Summary at one ε. The successive differences compare with the next
/// smaller ε and are absent for the smallest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub lambda: f64,
    pub paths: usize,
    pub gamma_median: f64,
    pub gamma_iqr: f64,
    pub gamma_diff_median: Option<f64>,
    pub gamma_tilde_median: f64,
    pub gamma_tilde_iqr: f64,
    pub gamma_tilde_diff_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

fn median(xs: Vec<f64>) -> f64 {
    Data::new(xs).median()
}

fn iqr(xs: Vec<f64>) -> f64 {
    Data::new(xs).interquartile_range()
}

/// Strictly decreasing, with every entry finite.
pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[1] < w[0])
}

impl ConvergenceTable {
    pub fn gamma_diffs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.gamma_diff_median).collect()
    }

    pub fn gamma_tilde_diffs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.gamma_tilde_diff_median).collect()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        crate::estimates::to_csv(&self.rows)
    }
}

/// Per-ε median, interquartile range and median successive difference of
/// `γ` and `γ̃`, ordered by decreasing ε.
pub fn emit_convergence_table(series: &[SiltSeries]) -> Result<ConvergenceTable, ConvergenceError> {
    let first = series.first().ok_or(ConvergenceError::InsufficientPaths(0))?;
    let key: Vec<(f64, f64)> = first.rows.iter().map(|r| (r.eps, r.lambda)).collect();
    if key.len() < 2 {
        return Err(ConvergenceError::TooFewEps(key.len()));
    }
    if series.len() < MIN_PATHS {
        return Err(ConvergenceError::InsufficientPaths(series.len()));
    }
    if series.iter().any(|s| s.rows.iter().map(|r| (r.eps, r.lambda)).ne(key.iter().copied())) {
        return Err(ConvergenceError::Mismatched);
    }
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&a, &b| key[b].0.total_cmp(&key[a].0));
    let column = |k: usize, tilde: bool| -> Vec<f64> {
        series.iter().map(|s| if tilde { s.rows[k].gamma_tilde } else { s.rows[k].gamma }).collect()
    };
    let diffs = |a: usize, b: usize, tilde: bool| -> f64 {
        let (x, y) = (column(a, tilde), column(b, tilde));
        median(x.iter().zip(&y).map(|(u, v)| (u - v).abs()).collect())
    };
    let rows = order
        .iter()
        .enumerate()
        .map(|(pos, &k)| {
            let next = order.get(pos + 1).copied();
            ConvergenceRow {
                eps: key[k].0,
                lambda: key[k].1,
                paths: series.len(),
                gamma_median: median(column(k, false)),
                gamma_iqr: iqr(column(k, false)),
                gamma_diff_median: next.map(|n| diffs(k, n, false)),
                gamma_tilde_median: median(column(k, true)),
                gamma_tilde_iqr: iqr(column(k, true)),
                gamma_tilde_diff_median: next.map(|n| diffs(k, n, true)),
            }
        })
        .collect();
    Ok(ConvergenceTable { rows })
}
