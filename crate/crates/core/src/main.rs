use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nodec::expcli::{
    cmd_compare, cmd_evaluate, cmd_gen_graph, cmd_train, load_config, long_running_warning, CliError, ConfigSource,
    CHECKPOINT_FILE, GRAPH_FILE, PRESETS,
};

#[derive(Parser)]
#[command(name = "nodec", version = nodec::expcli::VERSION, about = "Train and evaluate neural ODE controllers on networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (key = value lines).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: kuramoto-desk, kuramoto-full, sir-desk or sir-full.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` override; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the neural controller.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate the neural controller and the baselines.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint from `train`; defaults to <out>/checkpoint.bin when present.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Ordering claim on medians, e.g. "peak:NODEC<RND<F".
        #[arg(long = "assert")]
        assertion: Option<String>,
    },
    /// Merge the metrics of several evaluation runs.
    Compare {
        /// Run directories.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Merged CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "assert")]
        assertion: Option<String>,
    },
    /// Write the experiment graph as an edge list.
    GenGraph {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file, or directory for graph.txt.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn source(a: &ConfigArgs) -> Result<ConfigSource, CliError> {
    match (&a.config, &a.preset) {
        (Some(p), _) => Ok(ConfigSource::File(p.clone())),
        (None, Some(name)) => Ok(ConfigSource::Preset(name.clone())),
        (None, None) => Err(CliError::Config("either --config or --preset is required".into())),
    }
}

fn warn_if_long(src: &ConfigSource) {
    let text = match src {
        ConfigSource::File(p) => std::fs::read_to_string(p).unwrap_or_default(),
        ConfigSource::Preset(n) => PRESETS.iter().find(|(k, _)| k == n).map(|(_, t)| t.to_string()).unwrap_or_default(),
        ConfigSource::Text(t) => t.clone(),
    };
    if let Some(w) = long_running_warning(&text) {
        eprintln!("{w}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { cfg, out } => {
            let src = source(&cfg)?;
            let config = load_config(&src, cfg.seed, &cfg.overrides)?;
            warn_if_long(&src);
            let rec = cmd_train(&config, &out)?;
            print!("{}", rec.render());
        }
        Command::Evaluate {
            cfg,
            checkpoint,
            out,
            assertion,
        } => {
            let src = source(&cfg)?;
            let config = load_config(&src, cfg.seed, &cfg.overrides)?;
            warn_if_long(&src);
            let checkpoint = checkpoint.or_else(|| {
                let p = out.join(CHECKPOINT_FILE);
                p.exists().then_some(p)
            });
            let rec = cmd_evaluate(&config, checkpoint.as_deref(), &out, assertion.as_deref())?;
            print!("{}", rec.render());
            if let Ok(s) = std::fs::read_to_string(out.join(nodec::expcli::SUMMARY_FILE)) {
                print!("{s}");
            }
        }
        Command::Compare { runs, out, assertion } => {
            let c = cmd_compare(&runs, out.as_deref(), assertion.as_deref())?;
            print!("{}", c.table);
        }
        Command::GenGraph { cfg, out } => {
            let config = load_config(&source(&cfg)?, cfg.seed, &cfg.overrides)?;
            let path = if out.extension().is_none() { out.join(GRAPH_FILE) } else { out };
            let p = cmd_gen_graph(&config, &path)?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
