use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unlearnlab::plots::emit_plots;
use unlearnlab::{epoch_sweep, load_report, run_experiment, ExperimentConfig, LabError, Preset, RunOptions, Until};

#[derive(Parser)]
#[command(name = "unlearnlab", version, about = "Unlearning, relearning attacks and weight-space diagnostics")]
struct Cli {
    /// Experiment config, TOML or JSON. Defaults to the preset's built-in config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and retrain from scratch.
    Pretrain,
    /// Also run every configured unlearning method.
    Unlearn,
    /// Also run relearning, quantization and membership attacks.
    Attack,
    /// Also compute distances, interpolation curves and correlations.
    Diagnose,
    /// Everything, including the epoch sweep and plots.
    Run,
    /// Unlearning-epoch sweep only.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        epochs: Option<Vec<usize>>,
    },
    /// Re-render plots from an existing report.
    Plot,
    /// Print the resolved config as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(cli.preset.unwrap_or_default()),
    };
    if let Some(p) = cli.preset {
        cfg.preset = p;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), LabError> {
    let cfg = load_config(&cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{:?}-seed{}", cfg.preset, cfg.seed).to_lowercase()));
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let until = match &cli.command {
        Command::Pretrain => Until::Pretrain,
        Command::Unlearn => Until::Unlearn,
        Command::Attack => Until::Attack,
        Command::Diagnose => Until::Diagnose,
        Command::Run => Until::Full,
        Command::Sweep { methods, epochs } => {
            let default = cfg.sweep.clone();
            let methods = match methods {
                Some(ms) => ms
                    .iter()
                    .map(|m| m.parse().map_err(|e| LabError::Config(format!("{e}"))))
                    .collect::<Result<Vec<_>, _>>()?,
                None => default.as_ref().map(|s| s.methods.clone()).unwrap_or_default(),
            };
            let epochs = epochs
                .clone()
                .or_else(|| default.map(|s| s.epochs))
                .unwrap_or_default();
            if methods.is_empty() || epochs.is_empty() {
                return Err(LabError::Config("sweep needs methods and epochs".into()));
            }
            for r in epoch_sweep(&cfg, &out, &methods, &epochs, threads)? {
                println!(
                    "{} epochs={} test={:.3} forget_pre={:.3} forget_post={:.3}",
                    r.method, r.epochs, r.test_acc, r.forget_ho_pre, r.forget_ho_post
                );
            }
            return Ok(());
        }
        Command::Plot => {
            let report = load_report(&out)?;
            let dir = out.join("report/plots");
            std::fs::create_dir_all(&dir)?;
            for (name, svg) in emit_plots(&report)? {
                std::fs::write(dir.join(format!("{name}.svg")), svg)?;
            }
            println!("plots written to {}", dir.display());
            return Ok(());
        }
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
    };
    let manifest = run_experiment(&cfg, &out, RunOptions { threads, until })?;
    println!(
        "{} stages complete in {} (config {})",
        manifest.stages.len(),
        out.display(),
        &manifest.config_hash[..12]
    );
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
