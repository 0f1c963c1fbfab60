use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use osln::instancer::Connectivity;
use osln::pipeline::PipelineConfig;
use osln::stage2::{BaselineWeights, ScorerKind};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerArg {
    FirstStage,
    Baseline,
    External,
}

/// Parameters shared by every step. Unset flags fall back to the config
/// file, then to the built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ParamArgs {
    /// Pipeline configuration JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tumor-distance split in mm [default: 70, published setting].
    #[arg(long)]
    pub d_mm: Option<f64>,
    /// Binarization threshold, p >= tau is foreground [default: 0.5, toolkit choice].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Labeling connectivity: 6, 18 or 26 [default: 26, toolkit choice].
    #[arg(long)]
    pub connectivity: Option<u8>,
    /// Smallest kept component in voxels [default: 8, toolkit choice].
    #[arg(long)]
    pub min_voxels: Option<usize>,
    /// CT clamp window in HU [default: -200 300, published setting].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub hu_window: Option<Vec<f32>>,
    /// Resampling target in mm [default: 1 1 2.5, published setting].
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"])]
    pub target_spacing: Option<Vec<f64>>,
    /// FROC budgets in false positives per patient [default: 2 3 4 6, published setting].
    #[arg(long, num_args = 1..)]
    pub froc_budgets: Option<Vec<f64>>,
    /// Precision for the operating point [default: 0.15, published setting].
    #[arg(long)]
    pub operating_precision: Option<f64>,
    /// Hit radius ratio bounds [default: 0.5 1.5, published setting].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub radius_factor: Option<Vec<f64>>,
    /// Master seed for synthesis and jitter [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Second-stage scorer [default: baseline, toolkit choice].
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    /// Executable for the external scorer.
    #[arg(long)]
    pub scorer_program: Option<PathBuf>,
    /// Worker threads, 0 for all cores [default: 0].
    #[arg(long)]
    pub workers: Option<usize>,
}

impl ParamArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_json_file(p)
                .with_context(|| format!("reading config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.d_mm {
            c.d_mm = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.connectivity {
            c.connectivity = Connectivity::try_from(v)?;
        }
        if let Some(v) = self.min_voxels {
            c.min_voxels = v;
        }
        if let Some(v) = &self.hu_window {
            c.hu_window = [v[0], v[1]];
        }
        if let Some(v) = &self.target_spacing {
            c.target_spacing = [v[0], v[1], v[2]];
        }
        if let Some(v) = &self.froc_budgets {
            c.froc_budgets = v.clone();
        }
        if let Some(v) = self.operating_precision {
            c.operating_precision = v;
        }
        if let Some(v) = &self.radius_factor {
            c.match_criterion.radius_factor = [v[0], v[1]];
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        match (self.scorer, &self.scorer_program) {
            (Some(ScorerArg::FirstStage), _) => c.scorer = ScorerKind::FirstStage,
            (Some(ScorerArg::Baseline), _) => {
                c.scorer = ScorerKind::Baseline {
                    weights: BaselineWeights::default(),
                }
            }
            (Some(ScorerArg::External), Some(p)) | (None, Some(p)) => {
                c.scorer = ScorerKind::External {
                    program: p.clone(),
                    args: Vec::new(),
                }
            }
            (Some(ScorerArg::External), None) => bail!("--scorer external needs --scorer-program"),
            (None, None) => {}
        }
        Ok(c)
    }
}
