//! Age discrepancy: the residual of each predicted age from the least-squares
//! line of predicted on chronological age, normalized to mean 0 and sd 1.
//!
//! Residuals are taken to the fitted line rather than to `y = x`, which
//! removes the regression-to-the-mean tilt of the predictor.

use std::collections::HashMap;

use thiserror::Error;

use crate::predictor::PredictionTable;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DiscrepancyError {
    #[error("length mismatch: {ages} ages, {preds} predictions")]
    LengthMismatch { ages: usize, preds: usize },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("chronological ages have zero variance")]
    DegenerateX,
    #[error("residuals have zero spread (sd = {0:e})")]
    DegenerateResiduals(f64),
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn predict(&self, age: f64) -> f64 {
        self.intercept + self.slope * age
    }
}

/// Standard-deviation convention for the normalization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n − 1.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyRow {
    pub patient_id: String,
    pub predicted_age: f64,
    pub chronological_age: f64,
    pub raw_residual: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyVector {
    pub fit: OlsFit,
    pub rows: Vec<DiscrepancyRow>,
}

pub const DISCREPANCY_COLUMNS: [&str; 5] = [
    "patient_id",
    "predicted_age",
    "chronological_age",
    "raw_residual",
    "ai_age_discrepancy",
];

impl DiscrepancyVector {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.discrepancy).collect()
    }

    pub fn lookup(&self) -> HashMap<&str, f64> {
        self.rows
            .iter()
            .map(|r| (r.patient_id.as_str(), r.discrepancy))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = DISCREPANCY_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.patient_id, r.predicted_age, r.chronological_age, r.raw_residual, r.discrepancy
            ));
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares line of `preds` on `ages`.
pub fn fit_ols(ages: &[f64], preds: &[f64]) -> Result<OlsFit, DiscrepancyError> {
    if ages.len() != preds.len() {
        return Err(DiscrepancyError::LengthMismatch {
            ages: ages.len(),
            preds: preds.len(),
        });
    }
    if ages.len() < 2 {
        return Err(DiscrepancyError::TooFewPoints(ages.len()));
    }
    if ages.iter().chain(preds).any(|v| !v.is_finite()) {
        return Err(DiscrepancyError::NonFinite);
    }
    let mx = mean(ages);
    let my = mean(preds);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&x, &y) in ages.iter().zip(preds) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * ages.len() as f64 {
        return Err(DiscrepancyError::DegenerateX);
    }
    let slope = sxy / sxx;
    Ok(OlsFit {
        slope,
        intercept: my - slope * mx,
        n: ages.len(),
    })
}

pub fn compute_discrepancy(table: &PredictionTable) -> Result<DiscrepancyVector, DiscrepancyError> {
    compute_discrepancy_with(table, SdConvention::Population)
}

pub fn compute_discrepancy_with(
    table: &PredictionTable,
    sd: SdConvention,
) -> Result<DiscrepancyVector, DiscrepancyError> {
    let ages: Vec<f64> = table.rows.iter().map(|r| r.chronological_age).collect();
    let preds: Vec<f64> = table.rows.iter().map(|r| r.predicted_age).collect();
    let fit = fit_ols(&ages, &preds)?;
    let raw: Vec<f64> = ages
        .iter()
        .zip(&preds)
        .map(|(&a, &p)| p - fit.predict(a))
        .collect();
    let z = normalize(&raw, sd, preds.iter().fold(0.0f64, |m, p| m.max(p.abs())))?;
    let rows = table
        .rows
        .iter()
        .zip(raw.iter().zip(z))
        .map(|(r, (&raw_residual, discrepancy))| DiscrepancyRow {
            patient_id: r.patient_id.clone(),
            predicted_age: r.predicted_age,
            chronological_age: r.chronological_age,
            raw_residual,
            discrepancy,
        })
        .collect();
    Ok(DiscrepancyVector { fit, rows })
}

/// Z-score `raw`. `scale` is the magnitude of the quantities the residuals
/// were computed from, used to recognize a spread that is pure rounding.
fn normalize(raw: &[f64], sd: SdConvention, scale: f64) -> Result<Vec<f64>, DiscrepancyError> {
    let n = raw.len() as f64;
    let m = mean(raw);
    let centered: Vec<f64> = raw.iter().map(|r| r - m).collect();
    let ss: f64 = centered.iter().map(|c| c * c).sum();
    let denom = match sd {
        SdConvention::Population => n,
        SdConvention::Sample => n - 1.0,
    };
    let s = (ss / denom).sqrt();
    if !(s >= 1e-12 * (1.0 + scale)) {
        return Err(DiscrepancyError::DegenerateResiduals(s));
    }
    let mut z: Vec<f64> = centered.iter().map(|c| c / s).collect();
    // One refinement pass removes the last-ulp drift of the mean and sd.
    let zm = mean(&z);
    let zs = (z.iter().map(|v| (v - zm) * (v - zm)).sum::<f64>() / denom).sqrt();
    for v in &mut z {
        *v = (*v - zm) / zs;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictionRow;

    fn table(ages: &[f64], preds: &[f64]) -> PredictionTable {
        PredictionTable::new(
            ages.iter()
                .zip(preds)
                .enumerate()
                .map(|(i, (&a, &p))| PredictionRow {
                    patient_id: format!("p{i}"),
                    predicted_age: p,
                    chronological_age: a,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_line() {
        let ages = [30.0, 41.0, 55.0, 70.0];
        let preds: Vec<f64> = ages.iter().map(|a| 2.0 * a + 1.0).collect();
        let fit = fit_ols(&ages, &preds).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_example() {
        let fit = fit_ols(&[40.0, 50.0, 60.0], &[45.0, 55.0, 50.0]).unwrap();
        assert!((fit.slope - 0.25).abs() < 1e-12);
        assert!((fit.intercept - 37.5).abs() < 1e-12);

        let d = compute_discrepancy(&table(&[40.0, 50.0, 60.0], &[45.0, 55.0, 50.0])).unwrap();
        let raw: Vec<f64> = d.rows.iter().map(|r| r.raw_residual).collect();
        for (r, e) in raw.iter().zip([-2.5, 5.0, -2.5]) {
            assert!((r - e).abs() < 1e-12);
        }
        let s = 12.5f64.sqrt();
        for (z, e) in d.values().iter().zip([-2.5 / s, 5.0 / s, -2.5 / s]) {
            assert!((z - e).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            fit_ols(&[55.0; 4], &[50.0, 51.0, 52.0, 53.0]),
            Err(DiscrepancyError::DegenerateX)
        );
        assert!(matches!(
            fit_ols(&[1.0, 2.0], &[1.0]),
            Err(DiscrepancyError::LengthMismatch { .. })
        ));
        let ages = [33.0, 47.5, 52.0, 68.25, 80.0];
        let preds: Vec<f64> = ages.iter().map(|a| 0.6 * a + 21.7).collect();
        assert!(matches!(
            compute_discrepancy(&table(&ages, &preds)),
            Err(DiscrepancyError::DegenerateResiduals(_))
        ));
    }

    #[test]
    fn shift_invariance() {
        let ages = [40.0, 50.0, 60.0, 45.0];
        let preds = [45.0, 55.0, 50.0, 49.0];
        let shifted: Vec<f64> = preds.iter().map(|p| p + 7.25).collect();
        let a = compute_discrepancy(&table(&ages, &preds)).unwrap().values();
        let b = compute_discrepancy(&table(&ages, &shifted)).unwrap().values();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_convention() {
        let d = compute_discrepancy_with(
            &table(&[40.0, 50.0, 60.0], &[45.0, 55.0, 50.0]),
            SdConvention::Sample,
        )
        .unwrap();
        let v = d.values();
        let ss: f64 = v.iter().map(|z| z * z).sum();
        assert!((ss / 2.0 - 1.0).abs() < 1e-12);
    }
}
