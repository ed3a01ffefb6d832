use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use frailty_metrics::cohort_io::{build_design_matrix, exclusions_csv, write_clinical_csv, Endpoint};
use frailty_metrics::discrepancy::compute_discrepancy;
use frailty_metrics::pipeline::{
    baseline_predictions, cohort_error, discrepancy_error, external_predictions, fit_endpoint,
    ingest, predictor_error, read_text, report_error, run_pipeline, synth_error, volume_error,
    write_atomic, ErrorClass, PipelineError, PredictorKind, RunConfig,
};
use frailty_metrics::predictor::load_external_predictions;
use frailty_metrics::report::{forest_rows, render_forest_plot, render_hr_table, render_scatter};
use frailty_metrics::survival::{CoxFitResult, Ties};
use frailty_metrics::synth::{generate_cohort, SynthSpec};
use frailty_metrics::views::extract_views;
use frailty_metrics::volume_io::read_case;

#[derive(Parser)]
#[command(name = "frailty-metrics", version, about = "CT age discrepancy and outcome models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EndpointArg {
    Los,
    Os,
}

impl From<EndpointArg> for Endpoint {
    fn from(e: EndpointArg) -> Self {
        match e {
            EndpointArg::Los => Endpoint::Los,
            EndpointArg::Os => Endpoint::Os,
        }
    }
}

impl EndpointArg {
    fn stem(self) -> &'static str {
        match self {
            EndpointArg::Los => "los",
            EndpointArg::Os => "os",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TiesArg {
    Efron,
    Breslow,
}

impl TiesArg {
    fn name(self) -> &'static str {
        match self {
            TiesArg::Efron => "efron",
            TiesArg::Breslow => "breslow",
        }
    }
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `ties`.
    #[arg(long, value_enum)]
    ties: Option<TiesArg>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `threads`.
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| {
            PipelineError::config(format!("{}: {e}", self.config.display()))
        })?;
        let mut config = RunConfig::from_json(&text)?;
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        }
        if let Some(ties) = self.ties {
            config.ties = ties.name().to_string();
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if self.threads.is_some() {
            config.threads = self.threads;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse the cohort table and apply exclusions.
    Ingest {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the weighted three-plane views of one case.
    Views {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        case: String,
        /// Write `<case>_views.bin` and a JSON sidecar here.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Cross-validated predicted ages.
    Cv(ConfigArgs),
    /// Normalized residuals from a predictions table.
    Discrepancy {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the Cox model for one endpoint.
    Coxfit {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum)]
        endpoint: EndpointArg,
        #[arg(long, value_enum, default_value = "efron")]
        ties: TiesArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hazard-ratio table and forest plot from a saved fit.
    Report {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, value_enum)]
        endpoint: EndpointArg,
        /// Also render the predicted-vs-chronological scatter.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// The whole pipeline.
    Run(ConfigArgs),
    /// Generate a synthetic cohort.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        PipelineError::new(
            ErrorClass::Data,
            "io",
            "write",
            format!("{}: {e}", dir.display()),
        )
    })
}

fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), PipelineError> {
    create_dir(dir)?;
    for (name, bytes) in files {
        write_atomic(dir, name, bytes)?;
    }
    Ok(())
}

fn views(data_dir: &Path, case: &str, dump: Option<&Path>) -> Result<(), PipelineError> {
    let (image, seg) = read_case(data_dir, case).map_err(|e| volume_error(case, e))?;
    let set = extract_views(case, &image, &seg)
        .map_err(|e| PipelineError::new(ErrorClass::Data, "views", "views", format!("{case}: {e}")))?;

    // Layout per view: HU as f32 LE, then tumor and kidney masks as u8.
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(set.views.len());
    for (view, weight) in set.views.iter().zip(&set.weights) {
        let offset = blob.len();
        for &v in &view.hu {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        blob.extend_from_slice(&view.tumor);
        blob.extend_from_slice(&view.kidney);
        entries.push(serde_json::json!({
            "plane": view.plane.name(),
            "index": view.index,
            "shape": [view.shape.0, view.shape.1],
            "tumor_voxels": view.tumor_voxels,
            "weight": weight,
            "offset": offset,
        }));
    }
    let sidecar = serde_json::json!({
        "case_id": case,
        "dims": image.dims,
        "layout": "per view: hu f32 little-endian, tumor u8, kidney u8; fast axis first",
        "views": entries,
    });
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    match dump {
        Some(dir) => write_all(
            dir,
            &[
                (format!("{case}_views.bin"), blob),
                (format!("{case}_views.json"), text.into_bytes()),
            ],
        ),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest { cohort, out } => {
            let (records, exclusions) = ingest(&cohort)?;
            write_all(
                &out,
                &[
                    ("cohort_included.csv".into(), write_clinical_csv(&records).into_bytes()),
                    ("exclusions.csv".into(), exclusions_csv(&exclusions).into_bytes()),
                ],
            )
        }
        Command::Views { data_dir, case, dump } => views(&data_dir, &case, dump.as_deref()),
        Command::Cv(args) => {
            let config = args.load()?;
            let (records, _) = ingest(&config.cohort_csv)?;
            let table = match config.predictor {
                PredictorKind::Baseline => baseline_predictions(&records, &config)?,
                PredictorKind::External => {
                    external_predictions(&records, config.predictions_csv.as_deref().unwrap())?
                }
            };
            write_all(&config.out_dir, &[("predictions.csv".into(), table.to_csv().into_bytes())])
        }
        Command::Discrepancy { predictions, out } => {
            let table = load_external_predictions(&read_text("discrepancy", &predictions)?)
                .map_err(predictor_error)?;
            let d = compute_discrepancy(&table).map_err(discrepancy_error)?;
            write_all(&out, &[("discrepancy.csv".into(), d.to_csv().into_bytes())])
        }
        Command::Coxfit { cohort, predictions, endpoint, ties, out } => {
            let (records, _) = ingest(&cohort)?;
            let table = external_predictions(&records, &predictions)?;
            let d = compute_discrepancy(&table).map_err(discrepancy_error)?;
            let design = build_design_matrix(&records, endpoint.into(), &d)
                .map_err(cohort_error)?;
            let ties = Ties::parse(ties.name()).expect("known tie method");
            let fit = fit_endpoint(&design, ties)?;
            let json = serde_json::to_string_pretty(&fit).expect("fit serializes");
            write_all(&out, &[(format!("{}_fit.json", endpoint.stem()), json.into_bytes())])
        }
        Command::Report { fit, endpoint, predictions, out } => {
            let text = read_text("report", &fit)?;
            let fit: CoxFitResult = serde_json::from_str(&text)
                .map_err(|e| PipelineError::config(format!("fit json: {e}")))?;
            let labels = Endpoint::from(endpoint).labels();
            let table = render_hr_table(&fit, &labels).map_err(report_error)?;
            let title = match endpoint {
                EndpointArg::Los => "Length of stay",
                EndpointArg::Os => "Overall survival",
            };
            let svg = render_forest_plot(&forest_rows(&fit, &labels).map_err(report_error)?, title)
                .map_err(report_error)?;
            let stem = endpoint.stem();
            let mut files = vec![
                (format!("{stem}_table.csv"), table.to_csv().into_bytes()),
                (format!("{stem}_forest.svg"), svg.into_bytes()),
            ];
            if let Some(path) = predictions {
                let preds = load_external_predictions(&read_text("report", &path)?)
                    .map_err(predictor_error)?;
                let d = compute_discrepancy(&preds).map_err(discrepancy_error)?;
                let scatter = render_scatter(&preds, &d.fit).map_err(report_error)?;
                files.push(("age_scatter.svg".into(), scatter.into_bytes()));
            }
            print!("{}", table.to_text());
            write_all(&out, &files)
        }
        Command::Run(args) => {
            let config = args.load()?;
            let manifest = run_pipeline(&config)?;
            print!("{}", manifest.to_json());
            Ok(())
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| PipelineError::config(format!("{}: {e}", spec.display())))?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .map_err(|e| PipelineError::config(format!("synth spec: {e}")))?;
            let cohort = generate_cohort(&spec, &out).map_err(synth_error)?;
            println!("wrote {} cases to {}", cohort.records.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
