use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use graphda::pipeline::{ExperimentConfig, SynthConfig};

#[derive(Parser, Debug)]
#[command(name = "graphda", version, about = "Pre-train, enhance the adjacency, re-train and evaluate a graph recommender")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter and split the interaction log into `split.tsv`.
    Prepare(ExperimentArgs),
    /// Pre-train on the observed graph (`pretrain.ckpt`).
    Pretrain(ExperimentArgs),
    /// Build the enhanced adjacency from the pre-trained embeddings.
    Enhance(ExperimentArgs),
    /// Re-train from scratch on the enhanced adjacency.
    Retrain(ExperimentArgs),
    /// Evaluate the variant's model, or a given checkpoint.
    Evaluate(EvaluateArgs),
    /// Run every stage for the configured variant and report.
    Run(ExperimentArgs),
    /// Grid search over the enhancement parameters.
    Sweep(ExperimentArgs),
    /// Write a planted-block synthetic interaction log.
    Synth(SynthArgs),
}

/// Mirrors the configuration file keys. Values given here override the file.
#[derive(Args, Debug, Default)]
pub struct ExperimentArgs {
    /// `key=value` configuration file; `#` starts a comment.
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Raw `user item timestamp` interaction file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `tsv` or `csv`; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Existing split manifest to use instead of `--input`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(short, long = "output-dir")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub k_core: Option<usize>,
    /// `baseline`, `enhanced_ui` or `graphda`.
    #[arg(long)]
    pub variant: Option<String>,

    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Layer combination: `mean` or `last`.
    #[arg(long)]
    pub combine: Option<String>,
    /// NDCG cutoff used for early stopping and sweep selection.
    #[arg(long)]
    pub select_cutoff: Option<usize>,

    #[arg(long)]
    pub retrain_lr: Option<f64>,
    #[arg(long)]
    pub retrain_l2: Option<f64>,
    #[arg(long)]
    pub retrain_epochs: Option<usize>,
    #[arg(long)]
    pub retrain_patience: Option<usize>,

    /// Items selected per user (U_k).
    #[arg(long)]
    pub uk: Option<usize>,
    /// Users selected per item (I_k).
    #[arg(long)]
    pub ik: Option<usize>,
    /// Correlated users per user (UU_k).
    #[arg(long)]
    pub uuk: Option<usize>,
    /// Correlated items per item (II_k).
    #[arg(long)]
    pub iik: Option<usize>,

    /// Comma-separated sweep values.
    #[arg(long)]
    pub uk_grid: Option<String>,
    #[arg(long)]
    pub ik_grid: Option<String>,
    #[arg(long)]
    pub uuk_grid: Option<String>,
    #[arg(long)]
    pub iik_grid: Option<String>,

    /// Comma-separated metric cutoffs.
    #[arg(long)]
    pub cutoffs: Option<String>,
    /// Comma-separated train-count boundaries of the user groups.
    #[arg(long)]
    pub group_boundaries: Option<String>,

    /// Recompute stages whose artifacts already exist.
    #[arg(long)]
    pub force: bool,
}

impl ExperimentArgs {
    pub fn to_config(&self) -> graphda::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let overrides: [(&str, Option<String>); 32] = [
            ("input", path(&self.input)),
            ("format", self.format.clone()),
            ("split", path(&self.split)),
            ("output_dir", path(&self.output_dir)),
            ("k_core", show(&self.k_core)),
            ("variant", self.variant.clone()),
            ("dim", show(&self.dim)),
            ("lr", show(&self.lr)),
            ("l2", show(&self.l2)),
            ("layers", show(&self.layers)),
            ("epochs", show(&self.epochs)),
            ("patience", show(&self.patience)),
            ("batch_size", show(&self.batch_size)),
            ("seed", show(&self.seed)),
            ("init_std", show(&self.init_std)),
            ("combine", self.combine.clone()),
            ("select_cutoff", show(&self.select_cutoff)),
            ("retrain_lr", show(&self.retrain_lr)),
            ("retrain_l2", show(&self.retrain_l2)),
            ("retrain_epochs", show(&self.retrain_epochs)),
            ("retrain_patience", show(&self.retrain_patience)),
            ("uk", show(&self.uk)),
            ("ik", show(&self.ik)),
            ("uuk", show(&self.uuk)),
            ("iik", show(&self.iik)),
            ("uk_grid", self.uk_grid.clone()),
            ("ik_grid", self.ik_grid.clone()),
            ("uuk_grid", self.uuk_grid.clone()),
            ("iik_grid", self.iik_grid.clone()),
            ("cutoffs", self.cutoffs.clone()),
            ("group_boundaries", self.group_boundaries.clone()),
            ("force", self.force.then(|| "true".to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn show<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Evaluate this checkpoint instead of the variant's model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write the metrics CSV here instead of `report_<variant>.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Destination file; `-` writes to stdout.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().n_users)]
    pub n_users: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_items)]
    pub n_items: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_blocks)]
    pub n_blocks: usize,
    #[arg(long, default_value_t = SynthConfig::default().noise_rate)]
    pub noise_rate: f64,
    /// Mean number of distinct items per user.
    #[arg(long, default_value_t = SynthConfig::default().interactions_per_user)]
    pub interactions_per_user: f64,
    /// Activity floor; use the k-core threshold of the later run.
    #[arg(long, default_value_t = SynthConfig::default().min_interactions)]
    pub min_interactions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            n_users: self.n_users,
            n_items: self.n_items,
            n_blocks: self.n_blocks,
            noise_rate: self.noise_rate,
            interactions_per_user: self.interactions_per_user,
            min_interactions: self.min_interactions,
            seed: self.seed,
        }
    }
}
