//! `osln`: run the detection pipeline end to end or one step at a time.

mod commands;
mod params;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use params::ParamArgs;

#[derive(Parser, Debug)]
#[command(name = "osln", version, about = "Two-stage lymph node detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resample, clamp CT and normalize PET for every manifest patient.
    Preprocess {
        #[command(flatten)]
        params: ParamArgs,
        /// Cohort manifest JSON.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the preprocessed volumes and pet_stats.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Signed distance to the tumor boundary and the proximal/distal split.
    Distmap {
        #[command(flatten)]
        params: ParamArgs,
        /// Tumor mask VVOL.
        #[arg(long)]
        tumor: PathBuf,
        /// Signed distance VVOL (mm; negative inside the tumor).
        #[arg(long)]
        out: PathBuf,
        /// Optional proximal region mask output.
        #[arg(long)]
        proximal: Option<PathBuf>,
        /// Optional distal region mask output.
        #[arg(long)]
        distal: Option<PathBuf>,
    },
    /// Late fusion of the four stream probability volumes.
    Fuse {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        ct_proximal: PathBuf,
        #[arg(long)]
        ef_proximal: PathBuf,
        #[arg(long)]
        ct_distal: PathBuf,
        #[arg(long)]
        ef_distal: PathBuf,
        /// Proximal region mask written by `distmap`.
        #[arg(long)]
        proximal: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold and label a probability volume into candidates, then rescore.
    Extract {
        #[command(flatten)]
        params: ParamArgs,
        /// Fused probability VVOL.
        #[arg(long)]
        prob: PathBuf,
        /// Tumor mask: excluded from extraction and used for the distance feature.
        #[arg(long)]
        tumor: Option<PathBuf>,
        /// Preprocessed CT, required by every scorer except first-stage.
        #[arg(long)]
        ct: Option<PathBuf>,
        /// Normalized PET, required by every scorer except first-stage.
        #[arg(long)]
        pet: Option<PathBuf>,
        #[arg(long, default_value = "p0000")]
        patient_id: String,
        /// Patient position in the cohort; seeds bbox jitter.
        #[arg(long, default_value_t = 0)]
        patient_index: usize,
        /// Candidate CSV output.
        #[arg(long)]
        out_csv: PathBuf,
        /// Label-map VVOL output holding candidate ids.
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// Match one patient's candidates against its ground-truth mask.
    Match {
        #[command(flatten)]
        params: ParamArgs,
        /// Candidate CSV written by `extract`.
        #[arg(long)]
        candidates: PathBuf,
        /// Label map written by `extract`.
        #[arg(long)]
        labels: PathBuf,
        /// Lymph node mask VVOL.
        #[arg(long)]
        gt: PathBuf,
        /// Labelled candidate CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth CSV output.
        #[arg(long)]
        gt_out: Option<PathBuf>,
        /// Patient id for the ground-truth rows when there are no candidates.
        #[arg(long)]
        patient_id: Option<String>,
    },
    /// Cohort metrics from labelled candidate CSVs and ground-truth CSVs.
    Froc {
        #[command(flatten)]
        params: ParamArgs,
        /// Labelled candidate CSVs (repeatable).
        #[arg(long, required = true, num_args = 1..)]
        candidates: Vec<PathBuf>,
        /// Ground-truth CSVs (repeatable).
        #[arg(long, required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        /// Metrics JSON output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort with oracle stream predictions.
    Phantom {
        #[arg(long)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cohort and oracle settings JSON; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage over a cohort and write CSV, JSON and SVG outputs.
    Pipeline {
        #[command(flatten)]
        params: ParamArgs,
        /// Cohort manifest JSON (overrides the configured source).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Synthetic cohort size (overrides the configured source).
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
