//! End-to-end run: cohort → predicted ages → discrepancy → Cox models →
//! reports.
//!
//! All outputs are computed in memory first and only then written, each
//! through a temporary file and an atomic rename, so a failed run leaves no
//! partial files behind. `manifest.json` lists every output with its
//! SHA-256 and contains nothing that depends on paths, clocks or thread
//! counts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort_io::{
    apply_exclusions, build_design_matrix, parse_clinical_csv, CohortError,
    DesignMatrix, Endpoint, Exclusion, PatientRecord,
};
use crate::cv::{load_cases, make_folds, run_cv, CvError};
use crate::discrepancy::{compute_discrepancy, DiscrepancyError, DiscrepancyVector};
use crate::predictor::{
    load_external_predictions, BaselinePredictor, PredictionRow, PredictionTable, PredictorError,
};
use crate::report::{forest_rows, render_forest_plot, render_hr_table, render_scatter, ReportError};
use crate::survival::{fit_cox, CoxError, CoxFitResult, CoxOptions, SurvivalData, Ties};
use crate::synth::SynthError;
use crate::volume_io::VolumeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    #[default]
    Baseline,
    External,
}

fn default_k() -> usize {
    5
}
fn default_repeats() -> usize {
    3
}
fn default_seed() -> u64 {
    20230
}
fn default_views_per_scan() -> usize {
    12
}
fn default_ties() -> String {
    "efron".into()
}
fn default_ridge_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data_dir: PathBuf,
    pub cohort_csv: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_views_per_scan")]
    pub views_per_scan: usize,
    #[serde(default = "default_ties")]
    pub ties: String,
    #[serde(default)]
    pub predictor: PredictorKind,
    #[serde(default)]
    pub predictions_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "default_ridge_lambda")]
    pub ridge_lambda: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(cohort_csv: impl Into<PathBuf>, data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            data_dir: data_dir.into(),
            cohort_csv: cohort_csv.into(),
            k: default_k(),
            repeats: default_repeats(),
            master_seed: default_seed(),
            views_per_scan: default_views_per_scan(),
            ties: default_ties(),
            predictor: PredictorKind::Baseline,
            predictions_csv: None,
            out_dir: out_dir.into(),
            ridge_lambda: default_ridge_lambda(),
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::config(format!("config: {e}")))
    }

    pub fn ties(&self) -> Result<Ties, PipelineError> {
        Ties::parse(&self.ties)
            .ok_or_else(|| PipelineError::config(format!("ties must be efron or breslow, got {:?}", self.ties)))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::config(m.to_string()));
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1");
        }
        if self.views_per_scan < 1 {
            return bad("views_per_scan must be at least 1");
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return bad("ridge_lambda must be a nonnegative number");
        }
        if self.cohort_csv.as_os_str().is_empty() {
            return bad("cohort_csv is empty");
        }
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir is empty");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        self.ties()?;
        match self.predictor {
            PredictorKind::Baseline if self.data_dir.as_os_str().is_empty() => {
                bad("data_dir is required for the baseline predictor")
            }
            PredictorKind::External
                if self.predictions_csv.as_ref().map_or(true, |p| p.as_os_str().is_empty()) =>
            {
                bad("predictions_csv is required for the external predictor")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

/// A failed stage, with enough context for a one-line error record.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub class: ErrorClass,
    /// Short snake_case error kind, e.g. `monotone_likelihood`.
    pub code: String,
    pub stage: String,
    pub detail: String,
}

impl PipelineError {
    pub fn new(class: ErrorClass, code: &str, stage: &str, detail: impl Into<String>) -> Self {
        PipelineError {
            class,
            code: code.to_string(),
            stage: stage.to_string(),
            detail: detail.into(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Self::new(ErrorClass::Config, "config", "config", detail)
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }

    /// `ERROR <code> <stage> <detail>` on a single line.
    pub fn record(&self) -> String {
        let detail = self.detail.replace(['\n', '\r'], " ");
        format!("ERROR {} {} {}", self.code, self.stage, detail)
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.record())
    }
}

impl std::error::Error for PipelineError {}

fn io_error(stage: &str, path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::new(ErrorClass::Data, "io", stage, format!("{}: {e}", path.display()))
}

fn data(stage: &str, code: &str, e: impl fmt::Display) -> PipelineError {
    PipelineError::new(ErrorClass::Data, code, stage, e.to_string())
}

pub fn cohort_error(e: CohortError) -> PipelineError {
    let code = match &e {
        CohortError::MissingColumn(_) => "missing_column",
        CohortError::BadEnumValue { .. } => "bad_enum_value",
        CohortError::NonPositiveTime { .. } => "non_positive_time",
        CohortError::InvalidField { .. } => "invalid_field",
        CohortError::DuplicatePatient(_) => "duplicate_patient",
        CohortError::EmptyCohortAfterExclusion => "empty_cohort",
        CohortError::MissingDiscrepancy(_) => "missing_discrepancy",
        CohortError::MissingGrade(_) => "missing_grade",
        CohortError::Csv(_) => "csv",
    };
    data("ingest", code, e)
}

pub fn cv_error(e: CvError) -> PipelineError {
    let (class, code) = match &e {
        CvError::MissingCase { .. } => (ErrorClass::Data, "missing_case"),
        CvError::TooFewPatients { .. } => (ErrorClass::Data, "too_few_patients"),
        CvError::DuplicateIds(_) => (ErrorClass::Data, "duplicate_ids"),
        CvError::InvalidPlan(_) => (ErrorClass::Config, "invalid_plan"),
        CvError::PredictorFailure { source, .. } => match source {
            PredictorError::IllConditioned | PredictorError::NonFiniteInput(_) => {
                (ErrorClass::Numeric, "predictor_failure")
            }
            _ => (ErrorClass::Data, "predictor_failure"),
        },
    };
    PipelineError::new(class, code, "cv", e.to_string())
}

pub fn predictor_error(e: PredictorError) -> PipelineError {
    let code = match &e {
        PredictorError::DuplicatePatient(_) => "duplicate_patient",
        PredictorError::NonNumericField { .. } => "non_numeric_field",
        PredictorError::MissingColumn(_) => "missing_column",
        PredictorError::InvalidAge { .. } => "invalid_age",
        _ => "predictor",
    };
    data("predictions", code, e)
}

pub fn discrepancy_error(e: DiscrepancyError) -> PipelineError {
    let code = match &e {
        DiscrepancyError::DegenerateX => "degenerate_x",
        DiscrepancyError::DegenerateResiduals(_) => "degenerate_residuals",
        DiscrepancyError::LengthMismatch { .. } => "length_mismatch",
        DiscrepancyError::TooFewPoints(_) => "too_few_points",
        DiscrepancyError::NonFinite => "non_finite",
    };
    PipelineError::new(ErrorClass::Numeric, code, "discrepancy", e.to_string())
}

pub fn cox_error(stage: &str, e: CoxError) -> PipelineError {
    let (class, code) = match &e {
        CoxError::SingularInformation(_) => (ErrorClass::Numeric, "singular_information"),
        CoxError::MonotoneLikelihood { .. } => (ErrorClass::Numeric, "monotone_likelihood"),
        CoxError::NotConverged(_) => (ErrorClass::Numeric, "not_converged"),
        CoxError::NonFiniteZ => (ErrorClass::Numeric, "non_finite_z"),
        CoxError::NoEvents => (ErrorClass::Data, "no_events"),
        CoxError::TooFewSubjects { .. } => (ErrorClass::Data, "too_few_subjects"),
        CoxError::NonFinite(_) => (ErrorClass::Data, "non_finite"),
        CoxError::NonPositiveTime(_) => (ErrorClass::Data, "non_positive_time"),
        CoxError::DimensionMismatch(_) => (ErrorClass::Data, "dimension_mismatch"),
    };
    PipelineError::new(class, code, stage, e.to_string())
}

pub fn report_error(e: ReportError) -> PipelineError {
    PipelineError::new(ErrorClass::Numeric, "report", "report", e.to_string())
}

pub fn volume_error(case: &str, e: VolumeError) -> PipelineError {
    data("views", "volume", format!("{case}: {e}"))
}

pub fn synth_error(e: SynthError) -> PipelineError {
    match e {
        SynthError::InvalidSpec(m) => PipelineError::new(ErrorClass::Config, "invalid_spec", "synth", m),
        other => data("synth", "io", other),
    }
}

pub fn read_text(stage: &str, path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| io_error(stage, path, e))
}

/// Parse and filter the cohort table.
pub fn ingest(path: &Path) -> Result<(Vec<PatientRecord>, Vec<Exclusion>), PipelineError> {
    let text = read_text("ingest", path)?;
    let records = parse_clinical_csv(&text).map_err(cohort_error)?;
    apply_exclusions(records).map_err(cohort_error)
}

/// Cross-validated baseline predictions for `records`.
pub fn baseline_predictions(
    records: &[PatientRecord],
    config: &RunConfig,
) -> Result<PredictionTable, PipelineError> {
    let patients: Vec<(String, f64)> = records
        .iter()
        .map(|r| (r.patient_id.clone(), r.age_years))
        .collect();
    let cases = load_cases(&config.data_dir, &patients).map_err(cv_error)?;
    let ids: Vec<String> = patients.into_iter().map(|(id, _)| id).collect();
    let plan = make_folds(&ids, config.k, config.repeats, config.master_seed).map_err(cv_error)?;
    let predictor = BaselinePredictor {
        views_per_scan: config.views_per_scan,
        ridge_lambda: config.ridge_lambda,
    };
    run_cv(&cases, &predictor, &plan).map_err(cv_error)
}

/// External predictions restricted to (and required for) `records`, in
/// patient-id order.
pub fn external_predictions(
    records: &[PatientRecord],
    path: &Path,
) -> Result<PredictionTable, PipelineError> {
    let text = read_text("predictions", path)?;
    let table = load_external_predictions(&text).map_err(predictor_error)?;
    let mut rows: Vec<PredictionRow> = Vec::with_capacity(records.len());
    for r in records {
        let row = table.get(&r.patient_id).ok_or_else(|| {
            data("predictions", "missing_prediction", format!("no prediction for patient {}", r.patient_id))
        })?;
        rows.push(row.clone());
    }
    rows.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    PredictionTable::new(rows).map_err(predictor_error)
}

pub fn fit_endpoint(
    design: &DesignMatrix,
    ties: Ties,
) -> Result<CoxFitResult, PipelineError> {
    let stage = match design.endpoint {
        Endpoint::Los => "coxfit_los",
        Endpoint::Os => "coxfit_os",
    };
    let data = SurvivalData::new(&design.rows, &design.time, &design.event, ties)
        .map_err(|e| cox_error(stage, e))?;
    fit_cox(&data, &CoxOptions::default())
        .and_then(CoxFitResult::require_converged)
        .map_err(|e| cox_error(stage, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn file_names(&self) -> Vec<&str> {
        self.files.iter().map(|f| f.file.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything a run produces, keyed by output file name.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub files: Vec<(String, String)>,
    pub predictions: PredictionTable,
    pub discrepancy: DiscrepancyVector,
    pub los: CoxFitResult,
    pub os: CoxFitResult,
    pub exclusions: Vec<Exclusion>,
}

/// Compute every output without touching the output directory.
pub fn compute_outputs(config: &RunConfig) -> Result<RunOutputs, PipelineError> {
    config.validate()?;
    let ties = config.ties()?;
    let (records, exclusions) = ingest(&config.cohort_csv)?;

    let predictions = match config.predictor {
        PredictorKind::Baseline => baseline_predictions(&records, config)?,
        PredictorKind::External => {
            external_predictions(&records, config.predictions_csv.as_deref().unwrap())?
        }
    };
    let discrepancy = compute_discrepancy(&predictions).map_err(discrepancy_error)?;

    let los_design = build_design_matrix(&records, Endpoint::Los, &discrepancy).map_err(cohort_error)?;
    let os_design = build_design_matrix(&records, Endpoint::Os, &discrepancy).map_err(cohort_error)?;
    let los = fit_endpoint(&los_design, ties)?;
    let os = fit_endpoint(&os_design, ties)?;

    let los_labels = Endpoint::Los.labels();
    let os_labels = Endpoint::Os.labels();
    let los_table = render_hr_table(&los, &los_labels).map_err(report_error)?;
    let os_table = render_hr_table(&os, &os_labels).map_err(report_error)?;
    let los_forest = render_forest_plot(
        &forest_rows(&los, &los_labels).map_err(report_error)?,
        "Length of stay",
    )
    .map_err(report_error)?;
    let os_forest = render_forest_plot(
        &forest_rows(&os, &os_labels).map_err(report_error)?,
        "Overall survival",
    )
    .map_err(report_error)?;
    let scatter = render_scatter(&predictions, &discrepancy.fit).map_err(report_error)?;

    let files = vec![
        ("predictions.csv".to_string(), predictions.to_csv()),
        ("discrepancy.csv".to_string(), discrepancy.to_csv()),
        ("los_table.csv".to_string(), los_table.to_csv()),
        ("os_table.csv".to_string(), os_table.to_csv()),
        ("los_forest.svg".to_string(), los_forest),
        ("os_forest.svg".to_string(), os_forest),
        ("age_scatter.svg".to_string(), scatter),
    ];
    Ok(RunOutputs {
        files,
        predictions,
        discrepancy,
        los,
        os,
        exclusions,
    })
}

/// Write `contents` to `dir/name` via a temporary file and rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<(), PipelineError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| io_error("write", &tmp, e))?;
    fs::rename(&tmp, &target).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_error("write", &target, e)
    })
}

/// Write a set of files, then the manifest; on failure remove anything this
/// call already placed.
pub fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_error("write", dir, e))?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    let result = (|| {
        for (name, contents) in files {
            write_atomic(dir, name, contents.as_bytes())?;
            written.push(dir.join(name));
            entries.push(ManifestEntry {
                file: name.clone(),
                sha256: sha256_hex(contents.as_bytes()),
                bytes: contents.len(),
            });
        }
        let manifest = Manifest { files: entries.clone() };
        write_atomic(dir, "manifest.json", manifest.to_json().as_bytes())?;
        Ok(manifest)
    })();
    if result.is_err() {
        for path in written {
            let _ = fs::remove_file(path);
        }
    }
    result
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, PipelineError> + Send,
) -> Result<T, PipelineError> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PipelineError::config(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Run the full pipeline and write its outputs to `config.out_dir`.
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest, PipelineError> {
    config.validate()?;
    let outputs = with_threads(config.threads, || compute_outputs(config))?;
    write_outputs(&config.out_dir, &outputs.files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = RunConfig::from_json(r#"{"cohort_csv":"c.csv","data_dir":"d","out_dir":"o"}"#).unwrap();
        assert_eq!((c.k, c.repeats, c.master_seed, c.views_per_scan), (5, 3, 20230, 12));
        assert_eq!(c.ties().unwrap(), Ties::Efron);
        assert!(c.validate().is_ok());

        let ext = RunConfig::from_json(r#"{"cohort_csv":"c.csv","out_dir":"o","predictor":"external"}"#)
            .unwrap();
        let err = ext.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let mut bad = c.clone();
        bad.k = 1;
        assert_eq!(bad.validate().unwrap_err().class, ErrorClass::Config);
        bad.k = 5;
        bad.ties = "exact".into();
        assert!(bad.validate().is_err());
        assert!(RunConfig::from_json(r#"{"cohort_csv":"c","out_dir":"o","bogus":1}"#).is_err());
    }

    #[test]
    fn error_record_is_one_line() {
        let e = PipelineError::new(ErrorClass::Numeric, "monotone_likelihood", "coxfit_os", "a\nb");
        assert_eq!(e.record(), "ERROR monotone_likelihood coxfit_os a b");
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn atomic_writes_leave_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = vec![("a.csv".to_string(), "x\n".to_string())];
        let m = write_outputs(dir.path(), &files).unwrap();
        assert_eq!(m.file_names(), vec!["a.csv"]);
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, vec!["a.csv", "manifest.json"]);
    }
}
