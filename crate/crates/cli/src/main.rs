use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use judgerl::data::{Split, TaskKind};
use judgerl::rewards::VerdictForm;
use judgerl_cli::commands::{self, TrainOptions};
use judgerl_cli::error::{EXIT_OK, EXIT_USAGE};
use judgerl_cli::{report, CliError, CliResult, ExperimentConfig, Mode, Workspace};

#[derive(Parser)]
#[command(
    name = "judgerl",
    version,
    about = "Train and evaluate judge policies on synthetic verifiable tasks"
)]
struct Cli {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Artifact root; overrides the configured `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Continue an interrupted run from its saved state.
    #[arg(long, global = true)]
    resume: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Base,
    SftSingle,
    SftUnified,
    RlSingle,
    MtRl,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Base => Mode::Base,
            ModeArg::SftSingle => Mode::SftSingle,
            ModeArg::SftUnified => Mode::SftUnified,
            ModeArg::RlSingle => Mode::RlSingle,
            ModeArg::MtRl => Mode::MtRl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Rl,
    Sft,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset (a no-op when an identical one exists).
    GenData,
    /// Train one run; the dataset and the primed base policy are created on demand.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Training task for single-task modes (e.g. safety_point).
        #[arg(long)]
        task: Option<String>,
        #[arg(long, hide = true)]
        halt_after_step: Option<usize>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Output form to score; inferred from the checkpoint's run when omitted.
        #[arg(long, value_enum)]
        form: Option<FormArg>,
    },
    /// Compare runs on pointwise and held-out pairwise tasks; write learning curves.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory (default: `<out>/reports/<id>`).
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    GradCheck {
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Print the effective configuration and its hash.
    ShowConfig,
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn workspace(cli: &Cli, config: &ExperimentConfig) -> Workspace {
    let root = cli
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    Workspace::new(root)
}

fn parse_task(name: &str) -> CliResult<TaskKind> {
    TaskKind::parse(name).map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli)?;
    let ws = workspace(cli, &config);
    match &cli.command {
        Command::GenData => {
            let out = commands::gen_data(&config, &ws)?;
            if out.reused {
                println!("no-op: dataset already present at {}", out.dir.display());
            } else {
                println!("wrote dataset to {}", out.dir.display());
            }
            for e in &out.manifest.entries {
                println!("  {:<16} {:<6} {}", e.task.slug(), e.split, e.count);
            }
            println!("manifest {}", out.manifest.hash());
        }
        Command::Train {
            mode,
            task,
            halt_after_step,
        } => {
            let task = task.as_deref().map(parse_task).transpose()?;
            let options = TrainOptions {
                resume: cli.resume,
                halt_after_step: *halt_after_step,
            };
            let r = commands::train(&config, &ws, (*mode).into(), task, &options)?;
            let s = &r.summary;
            if r.reused {
                println!("no-op: run already complete at {}", r.dir.display());
            } else if s.completed {
                println!(
                    "finished {} steps in {:.1}s at {}",
                    s.steps,
                    r.seconds,
                    r.dir.display()
                );
            } else {
                println!(
                    "stopped at step {} of {}; resume with --resume",
                    s.steps, s.max_steps
                );
            }
            if let (Some(step), Some(score)) = (s.best_step, s.best_score) {
                println!("best validation score {score:.4} at step {step}");
            }
        }
        Command::Eval {
            checkpoint,
            split,
            form,
        } => {
            let split = Split::parse(split).map_err(|e| CliError::Usage(e.to_string()))?;
            let form = form.map(|f| match f {
                FormArg::Rl => VerdictForm::Rl,
                FormArg::Sft => VerdictForm::Sft,
            });
            let out = commands::eval(&config, &ws, checkpoint, split, form)?;
            print!("{}", out.report.to_table());
            println!("wrote {}", out.dir.display());
        }
        Command::Report { runs, dest } => {
            let out = report::report(runs, dest.as_deref())?;
            print!("{}", out.comparison.to_table());
            println!("wrote {}", out.dir.display());
        }
        Command::GradCheck { corrupt } => {
            let r = commands::grad_check(&config, *corrupt)?;
            println!(
                "gradient check passed: log-prob {:.3e}, sft loss {:.3e}",
                r.log_prob.max_relative_error, r.sft_loss.max_relative_error
            );
        }
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&config)?);
            eprintln!("hash {}", config.hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
