//! `curvgcl` — batch front-end for continual graph representation learning
//! in adaptive constant-curvature spaces.
//!
//! Four commands cover the workflow end to end:
//!
//! - `synth` writes a synthetic multi-task dataset plus manifest to disk;
//! - `run` trains a task sequence per seed and writes checkpoints, loss
//!   curves, accuracy matrices, distortion tables and a summary report;
//! - `eval` re-scores a saved checkpoint against a manifest;
//! - `curvature` prints the combinatorial (and optionally learned) curvature
//!   of graph files.
//!
//! Exit status: 0 on success, 2 for configuration problems (bad or unknown
//! config keys, invalid manifests, edgeless graphs), 1 for runtime failures
//! (corrupt checkpoints, I/O errors, numeric faults).

mod config;
mod curvature_cmd;
mod eval_cmd;
mod run_cmd;
mod synth_cmd;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use curvgcl::Error;

use config::{CurvatureModeCfg, DenominatorModeCfg, Overrides, RunConfig, SimilarityModeCfg};

#[derive(Parser)]
#[command(
    name = "curvgcl",
    version,
    about = "Self-supervised continual graph learning in adaptive constant-curvature spaces",
    subcommand_required = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a task sequence per seed; write checkpoints, loss curves,
    /// accuracy/distortion tables and a report into the output directory.
    Run(Box<RunArgs>),
    /// Load a checkpoint and score every task in a manifest (accuracy where
    /// labels exist, distortion always).
    Eval(EvalArgs),
    /// Print per-graph curvature summaries: the combinatorial estimate, plus
    /// the learned estimate when a checkpoint is given.
    Curvature(CurvatureArgs),
    /// Generate a synthetic dataset on disk, ready for `run --manifest`.
    Synth(SynthArgs),
}

/// Every `run` flag mirrors a config-file key of the same name (kebab-case
/// here, snake_case in TOML); flags override file values. The one exception
/// is the `[[synth]]` table array, which has no flag form — use a config
/// file or `curvgcl synth`.
#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task-sequence manifest (TOML listing per-task graph files).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Encoder widths d_in,hidden…,d_out — e.g. 8,16,16.
    #[arg(long, value_delimiter = ',')]
    layer_dims: Option<Vec<usize>>,
    /// Hidden width of the curvature network [default: 16].
    #[arg(long)]
    curvnet_hidden: Option<usize>,
    /// Curvature range bound: estimates land in [-s, s] [default: 2].
    #[arg(long)]
    kappa_scale: Option<f64>,
    /// Weight of the teacher-student loss term [default: 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Contrastive temperature [default: 1].
    #[arg(long)]
    tau: Option<f64>,
    /// Adam learning rate [default: 0.01].
    #[arg(long)]
    lr: Option<f64>,
    /// Hard epoch cap per session [default: 500].
    #[arg(long)]
    epochs_max: Option<usize>,
    /// Consecutive near-flat epochs before early stop [default: 20].
    #[arg(long)]
    patience: Option<usize>,
    /// Comma-separated seed list; one full run per seed [default: 0].
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Where the session curvature comes from [default: curvnet].
    #[arg(long, value_enum)]
    curvature_mode: Option<CurvatureModeCfg>,
    /// Pinned curvature; required by and only legal with --curvature-mode fixed.
    #[arg(long, allow_hyphen_values = true)]
    fixed_kappa: Option<f64>,
    /// Cross-manifold similarity bridge [default: glp].
    #[arg(long, value_enum)]
    similarity_mode: Option<SimilarityModeCfg>,
    /// Contrastive denominator convention [default: negatives_only].
    #[arg(long, value_enum)]
    denominator_mode: Option<DenominatorModeCfg>,
    /// Output directory for checkpoints, CSVs and the report.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run seeds concurrently instead of sequentially. Scheduling only:
    /// outputs are bit-identical either way.
    #[arg(long)]
    parallel_seeds: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `run` (seed_<s>/task_<t>.ckpt).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task-sequence manifest naming the graphs to score.
    #[arg(long)]
    manifest: PathBuf,
    /// How to resolve κ per graph; match the training run [default: curvnet].
    #[arg(long, value_enum, default_value_t = CurvatureModeCfg::Curvnet)]
    curvature_mode: CurvatureModeCfg,
    /// Pinned curvature; required by and only legal with --curvature-mode fixed.
    #[arg(long, allow_hyphen_values = true)]
    fixed_kappa: Option<f64>,
}

#[derive(Args)]
struct CurvatureArgs {
    /// Edge-list files, one graph each.
    #[arg(required = true)]
    graphs: Vec<PathBuf>,
    /// Also print this checkpoint's learned curvature estimate per graph.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with [[task]] tables describing the synthetic graphs.
    #[arg(long)]
    spec: PathBuf,
    /// Directory to write the task files and manifest into.
    #[arg(long)]
    out: PathBuf,
}

/// Configuration problems exit 2; runtime failures exit 1.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid { .. } | Error::ManifestInvalid { .. } | Error::EdgelessGraph { .. } => 2,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> curvgcl::Result<()> {
    match cli.cmd {
        Cmd::Run(args) => {
            let file = match &args.config {
                Some(path) => Some(RunConfig::from_toml(&std::fs::read_to_string(path)?)?),
                None => None,
            };
            let ov = Overrides {
                manifest: args.manifest,
                layer_dims: args.layer_dims,
                curvnet_hidden: args.curvnet_hidden,
                kappa_scale: args.kappa_scale,
                lambda: args.lambda,
                tau: args.tau,
                lr: args.lr,
                epochs_max: args.epochs_max,
                patience: args.patience,
                seeds: args.seeds,
                curvature_mode: args.curvature_mode,
                fixed_kappa: args.fixed_kappa,
                similarity_mode: args.similarity_mode,
                denominator_mode: args.denominator_mode,
                out_dir: args.out_dir,
            };
            let cfg = RunConfig::resolve(file, &ov)?;
            run_cmd::cmd_run(&cfg, args.parallel_seeds)
        }
        Cmd::Eval(args) => eval_cmd::cmd_eval(
            &args.checkpoint,
            &args.manifest,
            args.curvature_mode,
            args.fixed_kappa,
        ),
        Cmd::Curvature(args) => {
            curvature_cmd::cmd_curvature(&args.graphs, args.checkpoint.as_deref())
        }
        Cmd::Synth(args) => synth_cmd::cmd_synth(&args.spec, &args.out),
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
