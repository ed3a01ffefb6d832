//! Synthetic cohorts with known ground truth.
//!
//! Event times follow an exponential proportional-hazards model
//! `T = −ln U / (h₀ · exp(x·β))` with standard-normal latent covariates.
//! Censoring times are uniform on `[0, c_max]`, with `c_max` solved so that
//! the expected censored fraction over the drawn covariates equals the
//! requested rate.
//!
//! The first latent covariate doubles as a frailty signal: each patient's
//! *biological age* is `age + FRAILTY_YEARS · x₀`, and the kidney's HU
//! texture in the generated CT volume decreases with biological age, so an
//! image-based predictor can recover part of it.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort_io::{write_clinical_csv, Approach, PatientRecord};
use crate::seed::{derive_seed, rng_from_seed, SeedPart};
use crate::volume_io::{write_case, Volume, VolumeError, LABEL_KIDNEY, LABEL_TUMOR};

/// Years of biological age per unit of the first latent covariate.
pub const FRAILTY_YEARS: f64 = 6.0;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("i/o failure on {path}: {message}")]
    IoFailure { path: PathBuf, message: String },
}

impl From<VolumeError> for SynthError {
    fn from(e: VolumeError) -> Self {
        match e {
            VolumeError::Io { path, message } => SynthError::IoFailure { path, message },
            other => SynthError::IoFailure {
                path: PathBuf::new(),
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub true_beta: Vec<f64>,
    #[serde(default = "default_baseline_hazard")]
    pub baseline_hazard: f64,
    #[serde(default)]
    pub censor_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dims")]
    pub volume_dims: [usize; 3],
}

fn default_baseline_hazard() -> f64 {
    0.02
}

fn default_dims() -> [usize; 3] {
    [24, 24, 16]
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.true_beta.is_empty() || self.true_beta.iter().any(|b| !b.is_finite()) {
            return bad("true_beta must be a nonempty finite vector".into());
        }
        if !(self.baseline_hazard.is_finite() && self.baseline_hazard > 0.0) {
            return bad(format!("baseline_hazard = {}", self.baseline_hazard));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return bad(format!("censor_rate = {} not in [0, 1)", self.censor_rate));
        }
        if self.volume_dims.iter().any(|&d| !(2..=512).contains(&d)) {
            return bad(format!("volume_dims {:?}: each must be in 2..=512", self.volume_dims));
        }
        Ok(())
    }
}

/// Draws from the proportional-hazards model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSurvival {
    /// n rows of p latent covariates.
    pub x: Vec<Vec<f64>>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
    /// Upper end of the uniform censoring distribution (∞ when uncensored).
    pub censor_max: f64,
}

impl SimulatedSurvival {
    pub fn censored_fraction(&self) -> f64 {
        self.event.iter().filter(|e| !**e).count() as f64 / self.event.len() as f64
    }
}

/// Expected censored fraction under `C ~ U(0, c)` for exponential event
/// rates `rates`: mean of `(1 − e^{−λc}) / (λc)`.
fn expected_censoring(rates: &[f64], c: f64) -> f64 {
    rates
        .iter()
        .map(|&l| {
            let a = l * c;
            if a < 1e-8 {
                1.0 - a / 2.0
            } else {
                -(-a).exp_m1() / a
            }
        })
        .sum::<f64>()
        / rates.len() as f64
}

fn solve_censor_max(rates: &[f64], target: f64) -> f64 {
    // expected_censoring decreases from 1 (c → 0) to 0 (c → ∞).
    let mut lo = 0.0f64;
    let mut hi = 1.0 / rates.iter().copied().fold(f64::INFINITY, f64::min);
    while expected_censoring(rates, hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_censoring(rates, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sample `n` subjects with standard-normal covariates.
pub fn simulate_survival(
    n: usize,
    true_beta: &[f64],
    baseline_hazard: f64,
    censor_rate: f64,
    seed: u64,
) -> SimulatedSurvival {
    let mut rng = rng_from_seed(derive_seed(seed, &[SeedPart::Tag("survival")]));
    let p = true_beta.len();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let rates: Vec<f64> = x
        .iter()
        .map(|row| {
            let eta: f64 = row.iter().zip(true_beta).map(|(a, b)| a * b).sum();
            baseline_hazard * eta.exp()
        })
        .collect();
    let event_times: Vec<f64> = rates
        .iter()
        .map(|&rate| {
            let u: f64 = rng.random::<f64>();
            // 1 − u lies in (0, 1], so the log is finite.
            (-(1.0 - u).ln() / rate).max(f64::MIN_POSITIVE)
        })
        .collect();

    if censor_rate <= 0.0 {
        return SimulatedSurvival {
            x,
            time: event_times,
            event: vec![true; n],
            censor_max: f64::INFINITY,
        };
    }
    let censor_max = solve_censor_max(&rates, censor_rate);
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    for t in event_times {
        let c = (rng.random::<f64>() * censor_max).max(f64::MIN_POSITIVE);
        if c < t {
            time.push(c);
            event.push(false);
        } else {
            time.push(t);
            event.push(true);
        }
    }
    SimulatedSurvival {
        x,
        time,
        event,
        censor_max,
    }
}

/// In-memory synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub spec: SynthSpec,
    pub records: Vec<PatientRecord>,
    /// The latent covariates and OS draws behind `records`.
    pub survival: SimulatedSurvival,
    pub biological_age: Vec<f64>,
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:05}")
}

/// Round to `d` decimals; the text form then round-trips through the CSV.
fn round_to(v: f64, d: i32) -> f64 {
    let f = 10f64.powi(d);
    (v * f).round() / f
}

pub fn build_cohort(spec: &SynthSpec) -> Result<SynthCohort, SynthError> {
    spec.validate()?;
    let survival = simulate_survival(
        spec.n_patients,
        &spec.true_beta,
        spec.baseline_hazard,
        spec.censor_rate,
        spec.seed,
    );
    let mut records = Vec::with_capacity(spec.n_patients);
    let mut biological_age = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let mut rng = rng_from_seed(derive_seed(
            spec.seed,
            &[SeedPart::Tag("clinical"), SeedPart::Index(i as u64)],
        ));
        let frailty = survival.x[i][0];
        let age = round_to(rng.random_range(25.0..85.0), 1);
        biological_age.push(age + FRAILTY_YEARS * frailty);

        let approach = match rng.random_range(0..3) {
            0 => Approach::Open,
            1 => Approach::Laparoscopic,
            _ => Approach::Robotic,
        };
        let cci = rng.random_range(0..7u32);
        // Discharge rate: faster after minimally invasive surgery, slower
        // with comorbidity and frailty.
        let los_rate = 0.25
            * (if approach.minimally_invasive() { 0.8f64 } else { 0.0 }
                - 0.08 * cci as f64
                - 0.25 * frailty)
                .exp();
        let u: f64 = rng.random();
        let los_days = round_to((-(1.0 - u).ln() / los_rate).max(0.5), 2).max(0.01);

        // OS times scaled so the default hazard reads as months.
        let os_months = round_to(survival.time[i], 4).max(1e-4);
        let t_stage = rng.random_range(1..=4u8);
        records.push(PatientRecord {
            patient_id: case_id(i),
            age_years: age,
            los_days,
            los_event: true,
            os_months,
            os_event: survival.event[i],
            approach,
            nephron_sparing: rng.random_bool(0.5),
            cci,
            tumor_size_cm: round_to(rng.random_range(1.0..12.0), 1),
            t_stage,
            lymph_node_involvement: rng.random_bool(0.2),
            metastasis: rng.random_bool(0.2),
            isup_grade: Some(rng.random_range(1..=4u8)),
        });
    }
    Ok(SynthCohort {
        spec: spec.clone(),
        records,
        survival,
        biological_age,
    })
}

/// Synthetic CT volume: soft-tissue body, an ellipsoidal kidney whose mean HU
/// falls with biological age, and a tumor inside the kidney.
pub fn synth_volume(dims: [usize; 3], biological_age: f64, seed: u64) -> (Volume, Vec<u8>) {
    let mut rng = rng_from_seed(seed);
    let [dx, dy, dz] = dims;
    let f = |d: usize| d as f64;
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| rng.random_range(-scale..scale);

    let kc = [
        f(dx) * (0.4 + jitter(&mut rng, 0.05)),
        f(dy) * (0.5 + jitter(&mut rng, 0.05)),
        f(dz) * (0.5 + jitter(&mut rng, 0.05)),
    ];
    let kr = [f(dx) * 0.22, f(dy) * 0.3, f(dz) * 0.35];
    let tr_scale = rng.random_range(0.35..0.55);
    let tc = [
        kc[0] + kr[0] * jitter(&mut rng, 0.4),
        kc[1] + kr[1] * jitter(&mut rng, 0.4),
        kc[2] + kr[2] * jitter(&mut rng, 0.4),
    ];
    let tr = [kr[0] * tr_scale, kr[1] * tr_scale, kr[2] * tr_scale];

    let kidney_hu = 200.0 - 1.5 * biological_age;
    let mut voxels = Vec::with_capacity(dx * dy * dz);
    let mut labels = Vec::with_capacity(dx * dy * dz);
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let p = [f(x) + 0.5, f(y) + 0.5, f(z) + 0.5];
                let inside = |c: &[f64; 3], r: &[f64; 3]| {
                    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
                };
                let noise: f64 = StandardNormal.sample(&mut rng);
                let (label, hu) = if inside(&tc, &tr) {
                    (LABEL_TUMOR, 60.0 + 12.0 * noise)
                } else if inside(&kc, &kr) {
                    (LABEL_KIDNEY, kidney_hu + 10.0 * noise)
                } else {
                    (0, 35.0 + 0.3 * biological_age + 15.0 * noise)
                };
                voxels.push(hu.round());
                labels.push(label);
            }
        }
    }
    // The tumor ellipsoid always contains at least its center voxel unless
    // it is degenerate; guarantee one tumor voxel regardless.
    if !labels.contains(&LABEL_TUMOR) {
        let at = tc[0] as usize + dx * (tc[1] as usize + dy * tc[2] as usize);
        let last = labels.len() - 1;
        labels[at.min(last)] = LABEL_TUMOR;
    }
    (Volume::new(dims, voxels), labels)
}

/// Write `<out>/cohort.csv` and one case folder per patient.
pub fn write_cohort(cohort: &SynthCohort, out: &Path) -> Result<(), SynthError> {
    let io = |path: &Path, e: std::io::Error| SynthError::IoFailure {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let cohort_path = out.join("cohort.csv");
    fs::write(&cohort_path, write_clinical_csv(&cohort.records)).map_err(|e| io(&cohort_path, e))?;
    let spec = &cohort.spec;
    cohort
        .records
        .par_iter()
        .enumerate()
        .try_for_each(|(i, record)| {
            let seed = derive_seed(spec.seed, &[SeedPart::Tag("volume"), SeedPart::Index(i as u64)]);
            let (volume, labels) = synth_volume(spec.volume_dims, cohort.biological_age[i], seed);
            write_case(out, &record.patient_id, &volume, -1024.0, &labels)?;
            Ok(())
        })
}

/// Build a cohort from `spec` and write it under `out`.
pub fn generate_cohort(spec: &SynthSpec, out: &Path) -> Result<SynthCohort, SynthError> {
    let cohort = build_cohort(spec)?;
    write_cohort(&cohort, out)?;
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::views::extract_views;
    use crate::volume_io::validate_segmentation;

    fn spec(n: usize) -> SynthSpec {
        SynthSpec {
            n_patients: n,
            true_beta: vec![0.5],
            baseline_hazard: 0.02,
            censor_rate: 0.3,
            seed: 9,
            volume_dims: [16, 16, 10],
        }
    }

    #[test]
    fn no_censoring_means_all_events() {
        let s = simulate_survival(200, &[0.3, -0.2], 0.1, 0.0, 1);
        assert!(s.event.iter().all(|&e| e));
        assert!(s.time.iter().all(|&t| t > 0.0 && t.is_finite()));
    }

    #[test]
    fn censoring_rate_is_calibrated() {
        let s = simulate_survival(4000, &[0.7], 0.05, 0.2, 3);
        assert!((s.censored_fraction() - 0.2).abs() < 0.05);
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(5);
        s.censor_rate = 1.0;
        assert!(s.validate().is_err());
        let mut s = spec(5);
        s.volume_dims = [1, 16, 16];
        assert!(s.validate().is_err());
        assert!(spec(5).validate().is_ok());
    }

    #[test]
    fn cohort_is_deterministic() {
        assert_eq!(build_cohort(&spec(30)).unwrap(), build_cohort(&spec(30)).unwrap());
    }

    #[test]
    fn volumes_have_tumor_and_kidney() {
        let (v, labels) = synth_volume([16, 16, 10], 60.0, 4);
        let lv = Volume::new(v.dims, labels.iter().map(|&l| l as f64).collect());
        let seg = validate_segmentation(&lv, &v).unwrap();
        assert!(seg.kidney_voxels() > 0);
        assert!(seg.tumor_voxels() > 0);
        assert!(extract_views("c", &v, &seg).is_ok());
    }

    #[test]
    fn tiny_volumes_still_have_a_tumor() {
        for dims in [[2, 2, 2], [2, 3, 5], [3, 2, 2]] {
            let (v, labels) = synth_volume(dims, 50.0, 1);
            assert!(labels.contains(&LABEL_TUMOR), "{dims:?}");
            assert_eq!(v.voxels.len(), labels.len());
        }
    }
}
