mod common;

use std::fs;

use frailty_metrics::cohort_io::parse_clinical_csv;
use frailty_metrics::survival::{fit_cox, CoxOptions, SurvivalData, Ties};
use frailty_metrics::synth::{build_cohort, generate_cohort, simulate_survival, SynthSpec};
use frailty_metrics::volume_io::read_case;

fn spec(n: usize, censor_rate: f64) -> SynthSpec {
    SynthSpec {
        n_patients: n,
        true_beta: vec![0.4],
        baseline_hazard: 0.05,
        censor_rate,
        seed: 31,
        volume_dims: [10, 10, 8],
    }
}

#[test]
fn generated_cohort_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate_cohort(&spec(6, 0.3), dir.path()).unwrap();
    let parsed = parse_clinical_csv(&fs::read_to_string(dir.path().join("cohort.csv")).unwrap()).unwrap();
    assert_eq!(parsed, cohort.records);
    for r in &parsed {
        let (image, seg) = read_case(dir.path(), &r.patient_id).unwrap();
        assert_eq!(image.dims, [10, 10, 8]);
        assert!(seg.tumor_voxels() > 0);
    }
}

#[test]
fn same_spec_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_cohort(&spec(4, 0.2), a.path()).unwrap();
    generate_cohort(&spec(4, 0.2), b.path()).unwrap();
    for rel in ["cohort.csv", "case_00002/imaging.nii", "case_00003/segmentation.nii"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn zero_censoring_gives_all_events() {
    let cohort = build_cohort(&spec(200, 0.0)).unwrap();
    assert!(cohort.records.iter().all(|r| r.os_event));
}

#[test]
fn censoring_fraction_tracks_the_target() {
    for (k, rate) in [0.1, 0.35, 0.6].into_iter().enumerate() {
        let s = simulate_survival(2000, &[0.8, -0.3], 0.05, rate, 40 + k as u64);
        assert!((s.censored_fraction() - rate).abs() < 0.05, "{rate}: {}", s.censored_fraction());
    }
}

#[test]
fn large_cohort_recovers_the_coefficient() {
    let s = simulate_survival(5000, &[2f64.ln()], 0.02, 0.3, 8);
    let data = SurvivalData::new(&s.x, &s.time, &s.event, Ties::Efron).unwrap();
    let fit = fit_cox(&data, &CoxOptions::default()).unwrap();
    assert!((fit.beta[0] - 2f64.ln()).abs() < 3.0 * fit.se[0]);
}
