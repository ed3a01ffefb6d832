mod common;

use std::collections::BTreeSet;
use std::sync::Mutex;

use frailty_metrics::cv::{load_cases, make_folds, run_cv, run_cv_detailed, CvError};
use frailty_metrics::predictor::{
    AgePredictor, BaselinePredictor, Case, FitContext, FittedPredictor, PredictorError,
};

struct Constant(f64);

impl FittedPredictor for Constant {
    fn predict(&self, _: &Case) -> Result<f64, PredictorError> {
        Ok(self.0)
    }
}

struct ConstantPlugin(f64);

impl AgePredictor for ConstantPlugin {
    fn fit(&self, _: &[&Case], _: &FitContext) -> Result<Box<dyn FittedPredictor>, PredictorError> {
        Ok(Box::new(Constant(self.0)))
    }
}

struct Identity;

impl FittedPredictor for Identity {
    fn predict(&self, case: &Case) -> Result<f64, PredictorError> {
        Ok(case.chronological_age)
    }
}

struct IdentityPlugin;

impl AgePredictor for IdentityPlugin {
    fn fit(&self, _: &[&Case], _: &FitContext) -> Result<Box<dyn FittedPredictor>, PredictorError> {
        Ok(Box::new(Identity))
    }
}

/// Records every (repeat, fold, patient) seen in training and at test time.
#[derive(Default)]
struct Recorder {
    train: Mutex<BTreeSet<(usize, usize, String)>>,
    test: std::sync::Arc<Mutex<Vec<(usize, usize, String)>>>,
}

struct RecordingModel {
    repeat: usize,
    fold: usize,
    test: std::sync::Arc<Mutex<Vec<(usize, usize, String)>>>,
}

impl FittedPredictor for RecordingModel {
    fn predict(&self, case: &Case) -> Result<f64, PredictorError> {
        self.test
            .lock()
            .unwrap()
            .push((self.repeat, self.fold, case.patient_id.clone()));
        Ok(self.repeat as f64)
    }
}

impl AgePredictor for Recorder {
    fn fit(&self, train: &[&Case], ctx: &FitContext) -> Result<Box<dyn FittedPredictor>, PredictorError> {
        let mut seen = self.train.lock().unwrap();
        for c in train {
            seen.insert((ctx.repeat, ctx.fold, c.patient_id.clone()));
        }
        Ok(Box::new(RecordingModel {
            repeat: ctx.repeat,
            fold: ctx.fold,
            test: self.test.clone(),
        }))
    }
}

fn ids(cases: &[Case]) -> Vec<String> {
    cases.iter().map(|c| c.patient_id.clone()).collect()
}

#[test]
fn identity_plugin_returns_ages() {
    let cases = common::small_cases(10);
    let plan = make_folds(&ids(&cases), 5, 3, 1).unwrap();
    let table = run_cv(&cases, &IdentityPlugin, &plan).unwrap();
    for (row, case) in table.rows.iter().zip(&cases) {
        assert_eq!(row.patient_id, case.patient_id);
        assert_eq!(row.predicted_age, case.chronological_age);
    }
}

#[test]
fn constant_plugin_averages_exactly() {
    let cases = common::small_cases(11);
    let plan = make_folds(&ids(&cases), 5, 3, 2).unwrap();
    let table = run_cv(&cases, &ConstantPlugin(62.0), &plan).unwrap();
    assert!(table.rows.iter().all(|r| r.predicted_age == 62.0));
}

#[test]
fn every_patient_tested_once_per_repeat_and_never_trained_on() {
    let cases = common::small_cases(13);
    let plan = make_folds(&ids(&cases), 4, 3, 3).unwrap();
    let recorder = Recorder::default();
    let detailed = run_cv_detailed(&cases, &recorder, &plan).unwrap();

    let test = recorder.test.lock().unwrap().clone();
    let train = recorder.train.lock().unwrap();
    assert_eq!(test.len(), 13 * 3);
    for id in ids(&cases) {
        let mine: Vec<_> = test.iter().filter(|t| t.2 == id).collect();
        let repeats: BTreeSet<usize> = mine.iter().map(|t| t.0).collect();
        assert_eq!(repeats.len(), 3, "{id}");
        for (r, f, _) in mine {
            assert!(!train.contains(&(*r, *f, id.clone())), "{id} trained on in repeat {r} fold {f}");
        }
        assert_eq!(detailed.per_repeat[&id], vec![0.0, 1.0, 2.0]);
    }
    drop(train);
    // The mean of 0, 1, 2 lies within the per-repeat range.
    let table = run_cv(&cases, &recorder, &plan).unwrap();
    assert!(table.rows.iter().all(|r| r.predicted_age == 1.0));
}

#[test]
fn baseline_cv_is_deterministic() {
    let cases = common::small_cases(12);
    let plan = make_folds(&ids(&cases), 3, 2, 9).unwrap();
    let predictor = BaselinePredictor::default();
    let a = run_cv(&cases, &predictor, &plan).unwrap().to_csv();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| run_cv(&cases, &predictor, &plan).unwrap().to_csv());
    assert_eq!(a, b);
}

#[test]
fn plugin_errors_carry_patient_context() {
    struct Failing;
    impl FittedPredictor for Failing {
        fn predict(&self, case: &Case) -> Result<f64, PredictorError> {
            Err(PredictorError::Plugin(format!("cannot score {}", case.patient_id)))
        }
    }
    struct FailingPlugin;
    impl AgePredictor for FailingPlugin {
        fn fit(&self, _: &[&Case], _: &FitContext) -> Result<Box<dyn FittedPredictor>, PredictorError> {
            Ok(Box::new(Failing))
        }
    }
    let cases = common::small_cases(6);
    let plan = make_folds(&ids(&cases), 2, 1, 0).unwrap();
    match run_cv(&cases, &FailingPlugin, &plan) {
        Err(CvError::PredictorFailure { patient_id, .. }) => assert!(patient_id.starts_with('p')),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_volume_names_the_patient() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_cases(dir.path(), &[("ghost".to_string(), 50.0)]).unwrap_err();
    match err {
        CvError::MissingCase { patient_id, .. } => assert_eq!(patient_id, "ghost"),
        other => panic!("{other:?}"),
    }
    let cases = common::small_cases(5);
    let mut plan_ids = ids(&cases);
    plan_ids.push("absent".into());
    let plan = make_folds(&plan_ids, 2, 1, 0).unwrap();
    assert!(matches!(
        run_cv(&cases, &IdentityPlugin, &plan),
        Err(CvError::MissingCase { patient_id, .. }) if patient_id == "absent"
    ));
}
