use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semfield::Result;
use semfield_cli::{
    cmd_bench, cmd_eval, cmd_query, cmd_synth, cmd_train, cmd_transfer, exit_code, CameraRef, Mode, QueryArgs,
    QueryText, Run, RunConfig,
};

/// Language-embedded radiance fields and splats on synthetic scenes.
///
/// Logging is controlled by SEMFIELD_LOG (e.g. `SEMFIELD_LOG=debug`).
#[derive(Parser)]
#[command(name = "semfield", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.iterations=300`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scene and render its training views.
    Synth,
    /// Train a field on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Convert a trained field to optimized splats.
    Transfer {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a query against a field or splat cloud.
    Query {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// `object:<label>` or comma-separated embedding values.
        #[arg(long)]
        text: QueryText,
        /// `<index>` of a training view or `eval:<index>` of a held-out view.
        #[arg(long)]
        camera: Option<CameraRef>,
    },
    /// Score a field and/or splat cloud against ground truth.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Full pipeline over the configured seeds with both loss modes.
    Bench,
    /// Print the resolved configuration and its hash.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    let run = Run::new(cfg);
    match cli.cmd {
        Cmd::Synth => {
            println!("{}", cmd_synth(&run)?.display());
        }
        Cmd::Train { dataset } => {
            println!("{}", cmd_train(&run, &dataset)?.display());
        }
        Cmd::Transfer { field, dataset } => {
            println!("{}", cmd_transfer(&run, &field, &dataset)?.display());
        }
        Cmd::Query {
            mode,
            dataset,
            field,
            cloud,
            text,
            camera,
        } => {
            let args = QueryArgs {
                mode,
                dataset,
                field,
                cloud,
                text,
                camera,
            };
            for p in cmd_query(&run, &args)? {
                println!("{}", p.display());
            }
        }
        Cmd::Eval { dataset, field, cloud } => {
            let r = cmd_eval(&run, &dataset, field.as_deref(), cloud.as_deref())?;
            print!("{}", r.summary());
        }
        Cmd::Bench => {
            let r = cmd_bench(&run)?;
            print!("{}", r.summary());
        }
        Cmd::Config => {
            println!("# config_hash={}", run.hash);
            print!("{}", run.cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEMFIELD_LOG", "info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
