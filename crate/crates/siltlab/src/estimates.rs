//! Estimate rows, acceptance assertions and CSV encoding.

use serde::Serialize;
use siltlab_core::particles::MeanEstimate;

/// One estimated or computed quantity with its optional reference value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub quantity: String,
    /// Free-form `key=value` list identifying the case.
    pub params: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub count: Option<usize>,
    pub reference: Option<f64>,
    pub z: Option<f64>,
    pub pass: Option<bool>,
}

impl EstimateRow {
    pub fn value(quantity: impl Into<String>, params: impl Into<String>, value: f64) -> Self {
        Self { quantity: quantity.into(), params: params.into(), value, std_error: None, count: None, reference: None, z: None, pass: None }
    }

    /// A deterministic value checked against `reference` to absolute `tol`.
    pub fn checked(quantity: impl Into<String>, params: impl Into<String>, value: f64, reference: f64, tol: f64) -> Self {
        let pass = (value - reference).abs() <= tol;
        Self { reference: Some(reference), pass: Some(pass), ..Self::value(quantity, params, value) }
    }

    /// A Monte Carlo mean scored against an oracle.
    pub fn scored(quantity: impl Into<String>, params: impl Into<String>, est: &MeanEstimate, reference: f64, z_max: f64) -> Self {
        let z = est.z_score(reference);
        Self {
            std_error: Some(est.std_error),
            count: Some(est.count),
            reference: Some(reference),
            z: Some(z),
            pass: Some(z.abs() < z_max),
            ..Self::value(quantity, params, est.mean)
        }
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }
}

/// A named pass/fail check whose failure makes the run exit nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstimateTable {
    pub rows: Vec<EstimateRow>,
}

impl EstimateTable {
    pub fn push(&mut self, row: EstimateRow) {
        self.rows.push(row);
    }

    pub fn find(&self, quantity: &str) -> Option<&EstimateRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    /// One assertion per row that carries a verdict.
    pub fn assertions(&self) -> Vec<Assertion> {
        self.rows
            .iter()
            .filter_map(|r| {
                let pass = r.pass?;
                let name = if r.params.is_empty() { r.quantity.clone() } else { format!("{} [{}]", r.quantity, r.params) };
                let detail = match (r.reference, r.z) {
                    (Some(reference), Some(z)) => format!("value {:.6e} vs {reference:.6e}, z = {z:.3}", r.value),
                    (Some(reference), None) => format!("value {:.6e} vs {reference:.6e}", r.value),
                    _ => format!("value {:.6e}", r.value),
                };
                Some(Assertion::new(name, pass, detail))
            })
            .collect()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        to_csv(&self.rows)
    }
}

/// Serializes rows with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}
