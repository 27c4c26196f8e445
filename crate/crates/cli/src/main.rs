use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use t2i::config::describe_keys;
use t2i::{dispatch, CliError, Command, Invocation};

#[derive(Parser)]
#[command(name = "t2i", version, about = "Tabular rows to images, training and attribution")]
struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Set any config key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct DataArg {
    /// CSV path or openml:<id>.
    #[arg(long)]
    data: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the model and write a snapshot, metrics and a run report.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        variant: Option<String>,
        /// Keep one image per class for the whole run.
        #[arg(long)]
        single_mapping: bool,
    },
    /// Explain test rows of a trained model.
    Explain {
        #[arg(long)]
        snapshot: Option<String>,
        /// Comma-separated test-split row indices.
        #[arg(long)]
        samples: Option<String>,
    },
    /// Write the per-feature VIF table.
    VifReport {
        #[command(flatten)]
        data: DataArg,
    },
    /// Render generated images of test rows as PGM files.
    Visualize {
        #[arg(long)]
        snapshot: Option<String>,
    },
    /// Train every variant on every dataset of a suite.
    Benchmark {
        #[arg(long)]
        suite: Option<String>,
    },
    /// Spread of attributions across explanation seeds.
    Stability {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        runs: Option<String>,
    },
    /// List every config key with its default.
    Keys,
}

fn invocation(cli: Cli) -> Result<Option<Invocation>, CliError> {
    let mut flags = Vec::new();
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    flag("out", cli.out);
    let command = match cli.command {
        Cmd::Train { data, variant, single_mapping } => {
            flag("data", data.data);
            flag("variant", variant);
            flag("mapping", single_mapping.then(|| "single".to_string()));
            Command::Train
        }
        Cmd::Explain { snapshot, samples } => {
            flag("snapshot", snapshot);
            flag("samples", samples);
            Command::Explain
        }
        Cmd::VifReport { data } => {
            flag("data", data.data);
            Command::VifReport
        }
        Cmd::Visualize { snapshot } => {
            flag("snapshot", snapshot);
            Command::Visualize
        }
        Cmd::Benchmark { suite } => {
            flag("suite", suite);
            Command::Benchmark
        }
        Cmd::Stability { data, runs } => {
            flag("data", data.data);
            flag("runs", runs);
            Command::Stability
        }
        Cmd::Keys => {
            print!("{}", describe_keys());
            return Ok(None);
        }
    };
    Ok(Some(Invocation { command, config_file: cli.config, flags }))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let inv = match invocation(cli) {
        Ok(Some(inv)) => inv,
        Ok(None) => return,
        Err(e) => fail("t2i", None, e),
    };
    if let Err(e) = dispatch(&inv) {
        let out = t2i::commands::resolve(&inv).ok().map(|cfg| cfg.out_dir());
        fail(inv.command.name(), out, e);
    }
}

/// Prints the error record as JSON on stderr, also writing it to
/// `<out>/error.json` when the output directory is known, and exits.
fn fail(command: &str, out: Option<PathBuf>, e: CliError) -> ! {
    let record = serde_json::to_string(&e.record(command)).expect("record serialises");
    eprintln!("{record}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(&dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{record}\n"));
        }
    }
    std::process::exit(e.exit_code());
}
