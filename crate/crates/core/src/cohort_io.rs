//! Clinical cohort table: parsing, exclusions and design matrices for the
//! length-of-stay (LOS) and overall-survival (OS) models.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::discrepancy::DiscrepancyVector;

pub const COHORT_COLUMNS: [&str; 14] = [
    "patient_id",
    "age_years",
    "los_days",
    "los_event",
    "os_months",
    "os_event",
    "approach",
    "nephron_sparing",
    "cci",
    "tumor_size_cm",
    "t_stage",
    "lymph_node_involvement",
    "metastasis",
    "isup_grade",
];

/// Minimum age kept in the analysis cohort.
pub const MIN_AGE_YEARS: f64 = 18.0;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CohortError {
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("patient {patient_id}: bad value {value:?} for {column}")]
    BadEnumValue {
        patient_id: String,
        column: String,
        value: String,
    },
    #[error("patient {patient_id}: non-positive time {value} in {column}")]
    NonPositiveTime {
        patient_id: String,
        column: String,
        value: f64,
    },
    #[error("patient {patient_id}: invalid {column} {value:?}")]
    InvalidField {
        patient_id: String,
        column: String,
        value: String,
    },
    #[error("duplicate patient {0}")]
    DuplicatePatient(String),
    #[error("no patients left after exclusions")]
    EmptyCohortAfterExclusion,
    #[error("no discrepancy value for patient {0}")]
    MissingDiscrepancy(String),
    #[error("patient {0} has no ISUP grade (required for OS)")]
    MissingGrade(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    Open,
    Laparoscopic,
    Robotic,
}

impl Approach {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(Approach::Open),
            "laparoscopic" => Some(Approach::Laparoscopic),
            "robotic" => Some(Approach::Robotic),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Open => "open",
            Approach::Laparoscopic => "laparoscopic",
            Approach::Robotic => "robotic",
        }
    }

    pub fn minimally_invasive(self) -> bool {
        !matches!(self, Approach::Open)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age_years: f64,
    pub los_days: f64,
    /// true = discharged (event observed).
    pub los_event: bool,
    pub os_months: f64,
    /// true = death observed.
    pub os_event: bool,
    pub approach: Approach,
    pub nephron_sparing: bool,
    pub cci: u32,
    pub tumor_size_cm: f64,
    pub t_stage: u8,
    pub lymph_node_involvement: bool,
    pub metastasis: bool,
    pub isup_grade: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Los,
    Os,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::Los => "LOS",
            Endpoint::Os => "OS",
        })
    }
}

pub const LOS_COLUMNS: [&str; 6] = [
    "ai_age_discrepancy",
    "tumor_size_cm",
    "minimally_invasive",
    "nephron_sparing",
    "cci",
    "age_years",
];

pub const OS_EXTRA_COLUMNS: [&str; 4] = [
    "t_stage_ge3",
    "lymph_node_involvement",
    "metastasis",
    "isup_grade",
];

impl Endpoint {
    pub fn columns(self) -> Vec<&'static str> {
        let mut cols = LOS_COLUMNS.to_vec();
        if self == Endpoint::Os {
            cols.extend(OS_EXTRA_COLUMNS);
        }
        cols
    }

    /// Row labels in report style.
    pub fn labels(self) -> Vec<&'static str> {
        let mut labels = vec![
            "AI Age Discrepancy",
            "Tumor Size",
            "Minimally Invasive Surgery",
            "Nephron Sparing Procedure",
            "Charlson Comorbidity Index",
            "Chronological Age",
        ];
        if self == Endpoint::Os {
            labels.extend([
                "T stage >= 3",
                "Lymph Node Involvement",
                "Metastasis",
                "Tumor ISUP Grade",
            ]);
        }
        labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub endpoint: Endpoint,
    pub columns: Vec<&'static str>,
    pub patient_ids: Vec<String>,
    /// Row-major, `patient_ids.len()` rows by `columns.len()` columns.
    pub rows: Vec<Vec<f64>>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    positions: &'a [usize; 14],
    patient_id: String,
}

impl Row<'_> {
    fn raw(&self, col: usize) -> &str {
        self.record.get(self.positions[col]).unwrap_or("")
    }

    fn invalid(&self, col: usize) -> CohortError {
        CohortError::InvalidField {
            patient_id: self.patient_id.clone(),
            column: COHORT_COLUMNS[col].to_string(),
            value: self.raw(col).to_string(),
        }
    }

    fn real(&self, col: usize) -> Result<f64, CohortError> {
        self.raw(col)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.invalid(col))
    }

    fn time(&self, col: usize) -> Result<f64, CohortError> {
        let v = self.real(col)?;
        if v <= 0.0 {
            return Err(CohortError::NonPositiveTime {
                patient_id: self.patient_id.clone(),
                column: COHORT_COLUMNS[col].to_string(),
                value: v,
            });
        }
        Ok(v)
    }

    fn flag(&self, col: usize) -> Result<bool, CohortError> {
        match self.raw(col) {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(self.invalid(col)),
        }
    }

    fn int_in(&self, col: usize, lo: u32, hi: u32) -> Result<u32, CohortError> {
        self.raw(col)
            .parse::<u32>()
            .ok()
            .filter(|v| (lo..=hi).contains(v))
            .ok_or_else(|| self.invalid(col))
    }
}

pub fn parse_clinical_csv(text: &str) -> Result<Vec<PatientRecord>, CohortError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CohortError::Csv(e.to_string()))?
        .clone();
    let mut positions = [0usize; 14];
    for (slot, name) in positions.iter_mut().zip(COHORT_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CohortError::MissingColumn(name.to_string()))?;
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CohortError::Csv(e.to_string()))?;
        let row = Row {
            record: &record,
            positions: &positions,
            patient_id: record.get(positions[0]).unwrap_or("").to_string(),
        };
        if row.patient_id.is_empty() {
            return Err(row.invalid(0));
        }
        if !seen.insert(row.patient_id.clone()) {
            return Err(CohortError::DuplicatePatient(row.patient_id));
        }
        let age_years = row.real(1)?;
        if age_years <= 0.0 {
            return Err(row.invalid(1));
        }
        let approach = Approach::parse(row.raw(6)).ok_or_else(|| CohortError::BadEnumValue {
            patient_id: row.patient_id.clone(),
            column: "approach".into(),
            value: row.raw(6).to_string(),
        })?;
        let tumor_size_cm = row.real(9)?;
        if tumor_size_cm <= 0.0 {
            return Err(row.invalid(9));
        }
        let isup_grade = match row.raw(13) {
            "" => None,
            _ => Some(row.int_in(13, 1, 4)? as u8),
        };
        out.push(PatientRecord {
            age_years,
            los_days: row.time(2)?,
            los_event: row.flag(3)?,
            os_months: row.time(4)?,
            os_event: row.flag(5)?,
            approach,
            nephron_sparing: row.flag(7)?,
            cci: row.int_in(8, 0, u32::MAX)?,
            tumor_size_cm,
            t_stage: row.int_in(10, 1, 4)? as u8,
            lymph_node_involvement: row.flag(11)?,
            metastasis: row.flag(12)?,
            isup_grade,
            patient_id: row.patient_id,
        });
    }
    Ok(out)
}

pub fn write_clinical_csv(records: &[PatientRecord]) -> String {
    let flag = |b: bool| if b { "1" } else { "0" };
    let mut out = COHORT_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.patient_id,
            r.age_years,
            r.los_days,
            flag(r.los_event),
            r.os_months,
            flag(r.os_event),
            r.approach.as_str(),
            flag(r.nephron_sparing),
            r.cci,
            r.tumor_size_cm,
            r.t_stage,
            flag(r.lymph_node_involvement),
            flag(r.metastasis),
            r.isup_grade.map(|g| g.to_string()).unwrap_or_default(),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub patient_id: String,
    pub reason: String,
}

pub fn exclusions_csv(log: &[Exclusion]) -> String {
    let mut out = String::from("patient_id,reason\n");
    for e in log {
        out.push_str(&format!("{},{}\n", e.patient_id, e.reason));
    }
    out
}

/// Drop patients younger than 18 years.
pub fn apply_exclusions(
    records: Vec<PatientRecord>,
) -> Result<(Vec<PatientRecord>, Vec<Exclusion>), CohortError> {
    let (kept, dropped): (Vec<_>, Vec<_>) = records
        .into_iter()
        .partition(|r| r.age_years >= MIN_AGE_YEARS);
    if kept.is_empty() {
        return Err(CohortError::EmptyCohortAfterExclusion);
    }
    let log = dropped
        .into_iter()
        .map(|r| Exclusion {
            reason: format!("age {} < 18", r.age_years),
            patient_id: r.patient_id,
        })
        .collect();
    Ok((kept, log))
}

pub fn build_design_matrix(
    records: &[PatientRecord],
    endpoint: Endpoint,
    discrepancy: &DiscrepancyVector,
) -> Result<DesignMatrix, CohortError> {
    let lookup = discrepancy.lookup();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut rows = Vec::with_capacity(records.len());
    let mut time = Vec::with_capacity(records.len());
    let mut event = Vec::with_capacity(records.len());
    for r in records {
        let d = *lookup
            .get(r.patient_id.as_str())
            .ok_or_else(|| CohortError::MissingDiscrepancy(r.patient_id.clone()))?;
        let mut row = vec![
            d,
            r.tumor_size_cm,
            flag(r.approach.minimally_invasive()),
            flag(r.nephron_sparing),
            r.cci as f64,
            r.age_years,
        ];
        match endpoint {
            Endpoint::Los => {
                time.push(r.los_days);
                event.push(r.los_event);
            }
            Endpoint::Os => {
                let grade = r
                    .isup_grade
                    .ok_or_else(|| CohortError::MissingGrade(r.patient_id.clone()))?;
                row.extend([
                    flag(r.t_stage >= 3),
                    flag(r.lymph_node_involvement),
                    flag(r.metastasis),
                    grade as f64,
                ]);
                time.push(r.os_months);
                event.push(r.os_event);
            }
        }
        rows.push(row);
    }
    Ok(DesignMatrix {
        endpoint,
        columns: endpoint.columns(),
        patient_ids: records.iter().map(|r| r.patient_id.clone()).collect(),
        rows,
        time,
        event,
    })
}
