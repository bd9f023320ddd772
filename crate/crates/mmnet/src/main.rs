use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmnet::runner::{self, EVAL_FILE};
use mmnet::{RunConfig, RunError};

#[derive(Parser)]
#[command(
    name = "mmnet",
    version,
    about = "Few-shot segmentation with a meta-class memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the base classes of the configured fold.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on the held-out fold.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Omit to evaluate the randomly initialised model.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        shots: usize,
        #[arg(long)]
        episodes: Option<u64>,
        /// Directory for eval.csv (default: the checkpoint's directory, else the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic dataset to disk.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write one PGM per meta-class activation channel of an image.
    DumpAct {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Central-difference checks of every differentiable stage.
    Gradcheck,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, RunError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    Ok(RunConfig::parse(&text)?)
}

fn run(cli: Cli) -> Result<(), RunError> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let outcome = runner::train(&cfg, &out, &mut std::io::stderr())?;
            println!("checkpoint written to {}", outcome.checkpoint.display());
        }
        Command::Eval {
            config,
            ckpt,
            shots,
            episodes,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let model = runner::load_model(&cfg, ckpt.as_deref())?;
            let report =
                runner::evaluate_model(&cfg, &model, shots, episodes.unwrap_or(cfg.eval_episodes))?;
            let dir = out
                .or_else(|| {
                    ckpt.as_deref()
                        .and_then(Path::parent)
                        .map(Path::to_path_buf)
                })
                .unwrap_or_default();
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
            }
            runner::write_eval_csv(&report, &dir.join(EVAL_FILE))?;
            runner::print_report(&report, &mut stdout)
                .map_err(|e| RunError::io(Path::new("<stdout>"), e))?;
        }
        Command::GenData { spec, out, seed } => {
            let cfg = load_config(spec.as_deref())?;
            let n = runner::gen_data(&cfg, seed, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::DumpAct {
            config,
            ckpt,
            image,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let model = runner::load_model(&cfg, ckpt.as_deref())?;
            let files = runner::dump_activations(&model, &image, &out)?;
            println!("wrote {} activation maps to {}", files.len(), out.display());
        }
        Command::Gradcheck => {
            runner::gradcheck(&mut stdout)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
