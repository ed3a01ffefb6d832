//! Repeated k-fold cross-validation.
//!
//! Each repeat shuffles the patients with its own derived seed and deals them
//! round-robin into `k` folds. Every patient is predicted once per repeat by
//! a model that never saw it; the final prediction is the mean over repeats.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::predictor::{AgePredictor, Case, FitContext, PredictionRow, PredictionTable, PredictorError};
use crate::seed::{derive_seed, rng_from_seed, SeedPart};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CvError {
    #[error("need at least k = {k} patients, got {n}")]
    TooFewPatients { n: usize, k: usize },
    #[error("duplicate patient id {0}")]
    DuplicateIds(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("missing case for patient {patient_id}: {detail}")]
    MissingCase { patient_id: String, detail: String },
    #[error("predictor failed (repeat {repeat}, fold {fold}, patient {patient_id}): {source}")]
    PredictorFailure {
        repeat: usize,
        fold: usize,
        patient_id: String,
        source: PredictorError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub repeats: usize,
    pub master_seed: u64,
    /// Patient order as given to [`make_folds`].
    pub patient_ids: Vec<String>,
    /// Per repeat: patient id → fold index.
    pub assignments: Vec<BTreeMap<String, usize>>,
}

impl FoldPlan {
    pub fn fold_members(&self, repeat: usize, fold: usize) -> Vec<&str> {
        self.patient_ids
            .iter()
            .filter(|id| self.assignments[repeat][id.as_str()] == fold)
            .map(String::as_str)
            .collect()
    }
}

pub fn repeat_seed(master_seed: u64, repeat: usize) -> u64 {
    derive_seed(
        master_seed,
        &[SeedPart::Tag("cv-repeat"), SeedPart::Index(repeat as u64)],
    )
}

pub fn make_folds(
    patient_ids: &[String],
    k: usize,
    repeats: usize,
    master_seed: u64,
) -> Result<FoldPlan, CvError> {
    if k < 2 {
        return Err(CvError::InvalidPlan(format!("k = {k}, need k >= 2")));
    }
    if repeats < 1 {
        return Err(CvError::InvalidPlan("repeats must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    for id in patient_ids {
        if !seen.insert(id.as_str()) {
            return Err(CvError::DuplicateIds(id.clone()));
        }
    }
    if patient_ids.len() < k {
        return Err(CvError::TooFewPatients {
            n: patient_ids.len(),
            k,
        });
    }

    let assignments = (0..repeats)
        .map(|r| {
            let mut order: Vec<usize> = (0..patient_ids.len()).collect();
            order.shuffle(&mut rng_from_seed(repeat_seed(master_seed, r)));
            order
                .into_iter()
                .enumerate()
                .map(|(pos, i)| (patient_ids[i].clone(), pos % k))
                .collect()
        })
        .collect();

    Ok(FoldPlan {
        k,
        repeats,
        master_seed,
        patient_ids: patient_ids.to_vec(),
        assignments,
    })
}

/// Per-patient test-set predictions, one per repeat, before averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPredictions {
    /// patient id → predictions indexed by repeat.
    pub per_repeat: BTreeMap<String, Vec<f64>>,
}

/// Run the plan and return the raw per-repeat predictions.
pub fn run_cv_detailed(
    cases: &[Case],
    predictor: &dyn AgePredictor,
    plan: &FoldPlan,
) -> Result<CvPredictions, CvError> {
    let by_id: BTreeMap<&str, &Case> = cases.iter().map(|c| (c.patient_id.as_str(), c)).collect();
    for id in &plan.patient_ids {
        if !by_id.contains_key(id.as_str()) {
            return Err(CvError::MissingCase {
                patient_id: id.clone(),
                detail: "not in the loaded cohort".into(),
            });
        }
    }

    let jobs: Vec<(usize, usize)> = (0..plan.repeats)
        .flat_map(|r| (0..plan.k).map(move |f| (r, f)))
        .collect();

    // Each job returns (repeat, [(patient, prediction)]); assembly below is
    // keyed, so completion order is irrelevant.
    let results: Vec<Result<(usize, Vec<(String, f64)>), CvError>> = jobs
        .par_iter()
        .map(|&(repeat, fold)| {
            let assignment = &plan.assignments[repeat];
            let mut train = Vec::new();
            let mut test = Vec::new();
            for id in &plan.patient_ids {
                let case = by_id[id.as_str()];
                if assignment[id.as_str()] == fold {
                    test.push(case);
                } else {
                    train.push(case);
                }
            }
            let ctx = FitContext {
                repeat,
                fold,
                seed: repeat_seed(plan.master_seed, repeat),
            };
            let wrap = |patient_id: &str, source| CvError::PredictorFailure {
                repeat,
                fold,
                patient_id: patient_id.to_string(),
                source,
            };
            let fitted = predictor
                .fit(&train, &ctx)
                .map_err(|e| wrap("<training>", e))?;
            let mut out = Vec::with_capacity(test.len());
            for case in test {
                let age = fitted
                    .predict(case)
                    .map_err(|e| wrap(&case.patient_id, e))?;
                if !age.is_finite() {
                    return Err(wrap(
                        &case.patient_id,
                        PredictorError::NonFiniteInput(format!("prediction {age}")),
                    ));
                }
                out.push((case.patient_id.clone(), age));
            }
            Ok((repeat, out))
        })
        .collect();

    let mut per_repeat: BTreeMap<String, Vec<f64>> = plan
        .patient_ids
        .iter()
        .map(|id| (id.clone(), vec![f64::NAN; plan.repeats]))
        .collect();
    for result in results {
        let (repeat, preds) = result?;
        for (id, age) in preds {
            per_repeat.get_mut(&id).unwrap()[repeat] = age;
        }
    }
    Ok(CvPredictions { per_repeat })
}

/// Run the plan and average each patient's test-set predictions over repeats.
/// Rows are ordered by patient id.
pub fn run_cv(
    cases: &[Case],
    predictor: &dyn AgePredictor,
    plan: &FoldPlan,
) -> Result<PredictionTable, CvError> {
    let detailed = run_cv_detailed(cases, predictor, plan)?;
    let chronological: BTreeMap<&str, f64> = cases
        .iter()
        .map(|c| (c.patient_id.as_str(), c.chronological_age))
        .collect();
    let rows = detailed
        .per_repeat
        .iter()
        .map(|(id, preds)| {
            let mean = preds.iter().sum::<f64>() / preds.len() as f64;
            let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            PredictionRow {
                patient_id: id.clone(),
                predicted_age: mean.clamp(lo, hi),
                chronological_age: chronological[id.as_str()],
            }
        })
        .collect();
    PredictionTable::new(rows).map_err(|e| CvError::PredictorFailure {
        repeat: 0,
        fold: 0,
        patient_id: "<assembly>".into(),
        source: e,
    })
}

/// Read and slice every case under `data_dir`, in input order.
pub fn load_cases(
    data_dir: &std::path::Path,
    patients: &[(String, f64)],
) -> Result<Vec<Case>, CvError> {
    patients
        .par_iter()
        .map(|(patient_id, age)| {
            let missing = |detail: String| CvError::MissingCase {
                patient_id: patient_id.clone(),
                detail,
            };
            let (image, seg) = crate::volume_io::read_case(data_dir, patient_id)
                .map_err(|e| missing(e.to_string()))?;
            let views = crate::views::extract_views(patient_id, &image, &seg)
                .map_err(|e| missing(e.to_string()))?;
            Ok(Case {
                patient_id: patient_id.clone(),
                chronological_age: *age,
                views,
            })
        })
        .collect()
}
