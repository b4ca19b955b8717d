mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{BackendKind, ExecKind, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "cop",
    version,
    about = "Probe, score and select chain-of-thought answers"
)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Args)]
struct Flags {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    traces: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Toy model description (JSON).
    #[arg(long, global = true)]
    toy_model: Option<PathBuf>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Judge label file (JSONL).
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// Few-shot prompt template.
    #[arg(long, global = true)]
    template: Option<PathBuf>,
    /// Tree file for `tree eval|classify` and `resample`.
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    max_samples: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Dataset name used in reports.
    #[arg(long, global = true)]
    name: Option<String>,
    #[arg(long, global = true, value_enum)]
    exec: Option<ExecKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run chain-of-thought decoding with per-step probes.
    Probe {
        #[command(subcommand)]
        cmd: ProbeCmd,
    },
    /// Trace statistics.
    Analyze {
        #[command(subcommand)]
        cmd: AnalyzeCmd,
    },
    /// CoP score per trace.
    Score,
    /// Greedy, majority-vote and CoP-score answer selection.
    Select {
        #[command(subcommand)]
        cmd: SelectCmd,
    },
    /// Train, evaluate and apply the reasoning classifier.
    Tree {
        #[command(subcommand)]
        cmd: TreeCmd,
    },
    /// Resample each question until the tree accepts a response.
    Resample,
    /// Plot-ready series.
    Plot {
        #[command(subcommand)]
        cmd: PlotCmd,
    },
    /// Backend self-tests.
    Backend {
        #[command(subcommand)]
        cmd: BackendCmd,
    },
}

#[derive(Debug, Subcommand)]
enum ProbeCmd {
    /// Dataset to trace file.
    Run,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCmd {
    /// Early answering ratio.
    Ear,
    /// Accuracy of early-answering vs other traces.
    Split,
    /// Per-trace effect of reasoning on the answer.
    Effect,
    /// Share of correct answers with flawed reasoning (needs --labels).
    Tafcr,
}

#[derive(Debug, Subcommand)]
enum SelectCmd {
    Gs,
    Maj,
    Cops,
}

#[derive(Debug, Subcommand)]
enum TreeCmd {
    Train,
    Eval,
    Classify,
}

#[derive(Debug, Subcommand)]
enum PlotCmd {
    Trajectories,
    Deciles,
    EarCurve,
}

#[derive(Debug, Subcommand)]
enum BackendCmd {
    /// Probe non-interference and row extraction on one prompt.
    Check,
}

impl Flags {
    fn apply(self, s: &mut Settings) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    s.$field = v.into();
                }
            )*};
        }
        set!(seed, backend, k, max_samples, sigma, name, exec);
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    s.$field = self.$field;
                }
            )*};
        }
        set_opt!(out, dataset, traces, script, toy_model, endpoint, labels, template, tree);
    }
}

type Handler = fn(&Settings, &mut manifest::RunRecord) -> Result<()>;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut settings = Settings::load(cli.flags.config.as_deref())?;
    if let Some(c) = &cli.flags.config {
        log::info!("settings from {}", c.display());
    }
    cli.flags.apply(&mut settings);
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    use commands as c;
    let (name, run): (&str, Handler) = match cli.command {
        Command::Probe { cmd: ProbeCmd::Run } => ("probe run", c::probe_run),
        Command::Analyze { cmd } => match cmd {
            AnalyzeCmd::Ear => ("analyze ear", c::analyze_ear),
            AnalyzeCmd::Split => ("analyze split", c::analyze_split),
            AnalyzeCmd::Effect => ("analyze effect", c::analyze_effect),
            AnalyzeCmd::Tafcr => ("analyze tafcr", c::analyze_tafcr),
        },
        Command::Score => ("score", c::score),
        Command::Select { cmd } => match cmd {
            SelectCmd::Gs => ("select gs", c::select_gs),
            SelectCmd::Maj => ("select maj", c::select_maj),
            SelectCmd::Cops => ("select cops", c::select_cops),
        },
        Command::Tree { cmd } => match cmd {
            TreeCmd::Train => ("tree train", c::tree_train),
            TreeCmd::Eval => ("tree eval", c::tree_eval),
            TreeCmd::Classify => ("tree classify", c::tree_classify),
        },
        Command::Resample => ("resample", c::resample),
        Command::Plot { cmd } => match cmd {
            PlotCmd::Trajectories => ("plot trajectories", c::plot_trajectories),
            PlotCmd::Deciles => ("plot deciles", c::plot_deciles),
            PlotCmd::EarCurve => ("plot ear-curve", c::plot_ear_curve),
        },
        Command::Backend {
            cmd: BackendCmd::Check,
        } => ("backend check", c::backend_check),
    };
    let mut record = manifest::RunRecord::new(out, name);
    record.seed("master", settings.seed);
    run(&settings, &mut record)?;
    let path = record.finish(&settings)?;
    println!("{name}: manifest {}", path.display());
    Ok(())
}
