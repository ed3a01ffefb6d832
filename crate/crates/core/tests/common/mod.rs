#![allow(dead_code)]

use std::path::Path;

use frailty_metrics::pipeline::RunConfig;
use frailty_metrics::synth::{generate_cohort, SynthCohort, SynthSpec};

/// The 40-patient fixture used by the end-to-end tests.
pub fn fixture_spec() -> SynthSpec {
    SynthSpec {
        n_patients: 40,
        true_beta: vec![0.5, -0.3],
        baseline_hazard: 0.02,
        censor_rate: 0.25,
        seed: 7,
        volume_dims: [16, 16, 12],
    }
}

pub fn write_fixture(dir: &Path) -> SynthCohort {
    generate_cohort(&fixture_spec(), dir).expect("fixture generation")
}

pub fn fixture_config(data: &Path, out: &Path) -> RunConfig {
    RunConfig::new(data.join("cohort.csv"), data, out)
}

/// In-memory cases on small synthetic volumes.
pub fn small_cases(n: usize) -> Vec<frailty_metrics::predictor::Case> {
    use frailty_metrics::views::extract_views;
    use frailty_metrics::volume_io::{validate_segmentation, Volume};
    (0..n)
        .map(|i| {
            let age = 30.0 + 2.5 * i as f64;
            let (image, labels) = frailty_metrics::synth::synth_volume([8, 8, 6], age, i as u64);
            let lv = Volume::new(image.dims, labels.iter().map(|&l| l as f64).collect());
            let seg = validate_segmentation(&lv, &image).unwrap();
            let id = format!("p{i:03}");
            frailty_metrics::predictor::Case {
                views: extract_views(&id, &image, &seg).unwrap(),
                patient_id: id,
                chronological_age: age,
            }
        })
        .collect()
}

pub mod cox_oracle;
