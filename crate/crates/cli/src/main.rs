use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deform_gnn_cli::commands::{
    analyze_command, eval_command, gradcheck_command, import_command, print_json, synth_command, train_command,
    DataSource,
};
use deform_gnn_cli::config::{resolve, Settings, SEED_ENV};
use deform_gnn_cli::{CliError, Result};
use deform_gnn_core::tensor::OpKind;

/// Deformable graph convolutional networks for node classification.
#[derive(Parser)]
#[command(name = "deform-gnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over splits, seeds and a hyperparameter grid.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Export attention, homophilic-weight and receptive-field tables.
    Analyze(AnalyzeArgs),
    /// Check every parameter gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Convert raw WebKB / citation files into a dataset directory.
    Import(ImportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory (nodes.tsv, edges.tsv, splits/).
    #[arg(long)]
    dataset: Option<String>,
    /// Synthetic dataset, e.g. `n=800,c=5,h=0.1,d=64,degree=5,noise=1,seed=0`.
    #[arg(long)]
    synthetic: Option<String>,
}

/// Training flags. Every value may be a comma-separated grid list and
/// overrides the config file and the seed environment variable.
#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Number of splits to run (default: all stored, or one drawn).
    #[arg(long)]
    splits: Option<String>,
    /// Seeds per split, counting up from `--seed`.
    #[arg(long)]
    seeds: Option<String>,
    /// Seed for drawing splits when the dataset stores none.
    #[arg(long)]
    split_seed: Option<String>,
    /// deformable, gcn or mlp.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden_dim: Option<String>,
    /// Number of smoothed latent graphs.
    #[arg(long)]
    num_smoothings: Option<String>,
    #[arg(long)]
    num_kernels: Option<String>,
    #[arg(long)]
    knn: Option<String>,
    #[arg(long)]
    pos_dim: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    /// Hidden width of the deformation network, or `auto`.
    #[arg(long)]
    deform_hidden: Option<String>,
    /// `false` freezes the deformation vectors at zero.
    #[arg(long)]
    deform: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Separating regularizer strength.
    #[arg(long)]
    alpha: Option<String>,
    /// Focusing regularizer strength.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Maximum concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl TrainArgs {
    fn flags(&self) -> Settings {
        let pairs = [
            ("dataset", &self.data.dataset),
            ("synthetic", &self.data.synthetic),
            ("splits", &self.splits),
            ("seeds", &self.seeds),
            ("split_seed", &self.split_seed),
            ("model", &self.model),
            ("hidden_dim", &self.hidden_dim),
            ("num_smoothings", &self.num_smoothings),
            ("num_kernels", &self.num_kernels),
            ("knn", &self.knn),
            ("pos_dim", &self.pos_dim),
            ("dropout", &self.dropout),
            ("deform_hidden", &self.deform_hidden),
            ("deform", &self.deform),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("epochs", &self.epochs),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("seed", &self.seed),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    split: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Directory for the CSV tables.
    #[arg(long)]
    out: PathBuf,
    /// Receptive-field targets, e.g. `3,7` (default: every node).
    #[arg(long, value_delimiter = ',')]
    target_nodes: Option<Vec<usize>>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Largest relative error accepted per parameter group.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Dropout rate; anything but zero is refused.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Corrupt the adjoint of one op kind (negative control).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator settings, e.g. `n=800,c=5,h=0.1,d=64,degree=5,noise=1,seed=0`.
    #[arg(long, default_value = "")]
    spec: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory with out1_node_feature_label.txt and out1_graph_edges.txt.
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Splits to draw when the raw directory has no .npz split files.
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

fn source(data: &DataArgs) -> Result<DataSource> {
    DataSource::new(data.dataset.as_deref(), data.synthetic.as_deref())
}

/// Returns whether every check passed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train(args) => {
            let settings = resolve(args.config.as_deref(), std::env::var(SEED_ENV).ok(), args.flags())?;
            let summary = train_command(&settings, &args.out, args.jobs)?;
            let best = summary.best();
            println!(
                "selected grid point {}: val {:.4} test {:.4} ± {:.4} over {} runs",
                best.index,
                best.val.mean,
                best.test.mean,
                best.test.ci95.unwrap_or(0.0),
                best.test.runs
            );
            Ok(true)
        }
        Command::Eval(args) => {
            print_json(&eval_command(&args.checkpoint, &source(&args.data)?, args.split, args.split_seed)?)?;
            Ok(true)
        }
        Command::Analyze(args) => {
            let report = analyze_command(&args.checkpoint, &source(&args.data)?, &args.out, args.target_nodes.as_deref())?;
            for row in &report.attention {
                println!("level {}: average fusion score {:.4}", row.level, row.avg_score);
            }
            Ok(true)
        }
        Command::Gradcheck(args) => {
            let fault = match args.inject_fault.as_deref() {
                None => None,
                Some(name) => {
                    Some(OpKind::parse(name).ok_or_else(|| CliError::Config(format!("unknown op kind {name:?}")))?)
                }
            };
            let reports = gradcheck_command(args.epsilon, args.dropout, fault)?;
            let mut ok = true;
            for r in &reports {
                let pass = r.max_relative_error < args.tolerance;
                ok &= pass;
                println!(
                    "{:<16} max rel err {:.3e}  max abs err {:.3e}  ({} coords)  {}",
                    r.group,
                    r.max_relative_error,
                    r.max_abs_error,
                    r.coordinates,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Ok(ok)
        }
        Command::Synth(args) => {
            let spec = args.spec.parse()?;
            print_json(&synth_command(&spec, &args.out, args.splits, args.split_seed)?)?;
            Ok(true)
        }
        Command::Import(args) => {
            print_json(&import_command(&args.raw, &args.out, args.splits, args.split_seed)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
