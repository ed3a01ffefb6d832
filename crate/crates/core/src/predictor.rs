//! Age predictors.
//!
//! [`AgePredictor`] is the plug-in point: fit on training cases, then predict
//! one age per case. [`BaselinePredictor`] is a ridge regression over
//! handcrafted view features; externally produced predictions (for example
//! from a CNN) enter through [`load_external_predictions`].

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, SeedPart};
use crate::views::{aggregate_predictions, sample_views, View, ViewError, ViewSet};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PredictorError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("feature matrix has {rows} rows but {ages} ages")]
    ShapeMismatch { rows: usize, ages: usize },
    #[error("normal equations are not positive definite")]
    IllConditioned,
    #[error("duplicate patient {0}")]
    DuplicatePatient(String),
    #[error("non-numeric {column} {value:?} for patient {patient_id}")]
    NonNumericField {
        patient_id: String,
        column: String,
        value: String,
    },
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("invalid age {value} for patient {patient_id}")]
    InvalidAge { patient_id: String, value: f64 },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error("{0}")]
    Plugin(String),
}

pub const FEATURE_NAMES: [&str; 8] = [
    "mean_hu_all",
    "mean_hu_kidney",
    "mean_hu_tumor",
    "tumor_area_fraction",
    "kidney_area_fraction",
    "hu_p10",
    "hu_p50",
    "hu_p90",
];

/// Handcrafted per-view summary used by the baseline model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_hu_all: f64,
    pub mean_hu_kidney: f64,
    pub mean_hu_tumor: f64,
    pub tumor_area_fraction: f64,
    pub kidney_area_fraction: f64,
    pub hu_p10: f64,
    pub hu_p50: f64,
    pub hu_p90: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.mean_hu_all,
            self.mean_hu_kidney,
            self.mean_hu_tumor,
            self.tumor_area_fraction,
            self.kidney_area_fraction,
            self.hu_p10,
            self.hu_p50,
            self.hu_p90,
        ]
    }
}

/// Linear-interpolated percentile of already sorted values, `q` in [0, 1].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn masked_mean(hu: &[f64], mask: &[u8]) -> (f64, usize) {
    let (sum, count) = hu
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == 1)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

pub fn compute_view_features(view: &View) -> FeatureVector {
    let n = view.hu.len();
    if n == 0 {
        return FeatureVector::default();
    }
    let mean_hu_all = view.hu.iter().sum::<f64>() / n as f64;
    let (mean_hu_kidney, kidney_count) = masked_mean(&view.hu, &view.kidney);
    let (mean_hu_tumor, tumor_count) = masked_mean(&view.hu, &view.tumor);
    let mut sorted = view.hu.clone();
    sorted.sort_by(f64::total_cmp);
    FeatureVector {
        mean_hu_all,
        mean_hu_kidney,
        mean_hu_tumor,
        tumor_area_fraction: tumor_count as f64 / n as f64,
        kidney_area_fraction: kidney_count as f64 / n as f64,
        hu_p10: percentile_sorted(&sorted, 0.10),
        hu_p50: percentile_sorted(&sorted, 0.50),
        hu_p90: percentile_sorted(&sorted, 0.90),
    }
}

/// Ridge regression on standardized features with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub feature_names: Vec<String>,
    /// Per input column: `Some((mean, sd))` if used, `None` if dropped as constant.
    pub standardization: Vec<Option<(f64, f64)>>,
    /// One weight per retained column, in standardized units.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub ridge_lambda: f64,
}

impl BaselineModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut acc = self.intercept;
        let mut w = self.weights.iter();
        for (x, std) in row.iter().zip(&self.standardization) {
            if let Some((mean, sd)) = std {
                acc += w.next().unwrap() * (x - mean) / sd;
            }
        }
        acc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        serde_json::from_str(text).map_err(|e| PredictorError::Plugin(e.to_string()))
    }
}

/// Standardized design: retained columns, centered and scaled to unit sd.
pub(crate) fn standardize(
    rows: &[Vec<f64>],
) -> (DMatrix<f64>, Vec<Option<(f64, f64)>>) {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    let mut params = Vec::with_capacity(p);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..p {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            params.push(None);
        } else {
            params.push(Some((mean, sd)));
            cols.push(rows.iter().map(|r| (r[j] - mean) / sd).collect());
        }
    }
    let z = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    (z, params)
}

/// Minimize ‖y − b − Zw‖² + λ‖w‖² over standardized features `Z`.
pub fn fit_baseline(
    features: &[Vec<f64>],
    ages: &[f64],
    ridge_lambda: f64,
) -> Result<BaselineModel, PredictorError> {
    if features.len() != ages.len() {
        return Err(PredictorError::ShapeMismatch {
            rows: features.len(),
            ages: ages.len(),
        });
    }
    if ages.len() < 2 {
        return Err(PredictorError::TooFewSamples(ages.len()));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(PredictorError::NonFiniteInput(format!(
            "ridge_lambda = {ridge_lambda}"
        )));
    }
    let p = features[0].len();
    for (i, row) in features.iter().enumerate() {
        if row.len() != p {
            return Err(PredictorError::ShapeMismatch {
                rows: features.len(),
                ages: ages.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(PredictorError::NonFiniteInput(format!("feature row {i}")));
        }
    }
    if let Some(i) = ages.iter().position(|a| !a.is_finite()) {
        return Err(PredictorError::NonFiniteInput(format!("age {i}")));
    }

    let n = ages.len() as f64;
    let y_mean = ages.iter().sum::<f64>() / n;
    let (z, standardization) = standardize(features);
    let yc = DVector::from_iterator(ages.len(), ages.iter().map(|a| a - y_mean));

    let k = z.ncols();
    let weights = if k == 0 {
        Vec::new()
    } else {
        let mut gram = z.transpose() * &z;
        for d in 0..k {
            gram[(d, d)] += ridge_lambda;
        }
        let rhs = z.transpose() * yc;
        let chol = gram.cholesky().ok_or(PredictorError::IllConditioned)?;
        chol.solve(&rhs).iter().copied().collect()
    };

    Ok(BaselineModel {
        feature_names: if p == FEATURE_NAMES.len() {
            FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..p).map(|j| format!("x{j}")).collect()
        },
        standardization,
        weights,
        intercept: y_mean,
        ridge_lambda,
    })
}

/// Weighted average of per-view predictions over all views of the case.
pub fn predict_age(model: &BaselineModel, set: &ViewSet) -> Result<f64, PredictorError> {
    let preds: Vec<f64> = set
        .views
        .iter()
        .map(|v| model.predict_row(&compute_view_features(v).to_array()))
        .collect();
    Ok(aggregate_predictions(&preds, &set.weights)?)
}

/// A case as seen by a predictor plug-in.
#[derive(Debug, Clone)]
pub struct Case {
    pub patient_id: String,
    pub chronological_age: f64,
    pub views: ViewSet,
}

/// Where in the cross-validation a fit happens; plug-ins use it to derive
/// their own random streams.
#[derive(Debug, Clone, Copy)]
pub struct FitContext {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
}

pub trait FittedPredictor: Send + Sync {
    fn predict(&self, case: &Case) -> Result<f64, PredictorError>;
}

pub trait AgePredictor: Send + Sync {
    fn fit(
        &self,
        train: &[&Case],
        ctx: &FitContext,
    ) -> Result<Box<dyn FittedPredictor>, PredictorError>;
}

/// Ridge regression over per-view features.
///
/// Training draws `views_per_scan` views per case with tumor-fraction
/// probabilities; each sampled view is one training row labeled with the
/// case's age.
#[derive(Debug, Clone)]
pub struct BaselinePredictor {
    pub views_per_scan: usize,
    pub ridge_lambda: f64,
}

impl Default for BaselinePredictor {
    fn default() -> Self {
        BaselinePredictor {
            views_per_scan: 12,
            ridge_lambda: 1.0,
        }
    }
}

impl BaselinePredictor {
    pub fn training_rows(
        &self,
        train: &[&Case],
        ctx: &FitContext,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>), PredictorError> {
        let mut rows = Vec::with_capacity(train.len() * self.views_per_scan);
        let mut ages = Vec::with_capacity(rows.capacity());
        for case in train {
            let seed = derive_seed(
                ctx.seed,
                &[
                    SeedPart::Tag("views"),
                    SeedPart::Tag(&case.patient_id),
                    SeedPart::Index(ctx.repeat as u64),
                ],
            );
            for i in sample_views(&case.views, self.views_per_scan, seed)? {
                rows.push(compute_view_features(&case.views.views[i]).to_array().to_vec());
                ages.push(case.chronological_age);
            }
        }
        Ok((rows, ages))
    }
}

impl FittedPredictor for BaselineModel {
    fn predict(&self, case: &Case) -> Result<f64, PredictorError> {
        predict_age(self, &case.views)
    }
}

impl AgePredictor for BaselinePredictor {
    fn fit(
        &self,
        train: &[&Case],
        ctx: &FitContext,
    ) -> Result<Box<dyn FittedPredictor>, PredictorError> {
        let (rows, ages) = self.training_rows(train, ctx)?;
        Ok(Box::new(fit_baseline(&rows, &ages, self.ridge_lambda)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub patient_id: String,
    pub predicted_age: f64,
    pub chronological_age: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTable {
    pub rows: Vec<PredictionRow>,
}

pub const PREDICTION_COLUMNS: [&str; 3] = ["patient_id", "predicted_age", "chronological_age"];

impl PredictionTable {
    pub fn new(rows: Vec<PredictionRow>) -> Result<Self, PredictorError> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row.patient_id.as_str()) {
                return Err(PredictorError::DuplicatePatient(row.patient_id.clone()));
            }
            for value in [row.predicted_age, row.chronological_age] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(PredictorError::InvalidAge {
                        patient_id: row.patient_id.clone(),
                        value,
                    });
                }
            }
        }
        Ok(PredictionTable { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, patient_id: &str) -> Option<&PredictionRow> {
        self.rows.iter().find(|r| r.patient_id == patient_id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = PREDICTION_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.patient_id, r.predicted_age, r.chronological_age
            ));
        }
        out
    }
}

/// Parse `patient_id,predicted_age,chronological_age` rows.
pub fn load_external_predictions(csv_text: &str) -> Result<PredictionTable, PredictorError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| PredictorError::Csv(e.to_string()))?
        .clone();
    let mut positions = [0usize; 3];
    for (slot, name) in positions.iter_mut().zip(PREDICTION_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PredictorError::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PredictorError::Csv(e.to_string()))?;
        let field = |i: usize| record.get(positions[i]).unwrap_or("");
        let patient_id = field(0).to_string();
        let number = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| PredictorError::NonNumericField {
                    patient_id: patient_id.clone(),
                    column: PREDICTION_COLUMNS[i].to_string(),
                    value: field(i).to_string(),
                })
        };
        rows.push(PredictionRow {
            predicted_age: number(1)?,
            chronological_age: number(2)?,
            patient_id: patient_id.clone(),
        });
    }
    PredictionTable::new(rows)
}
