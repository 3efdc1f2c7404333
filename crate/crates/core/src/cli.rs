//! Command-line front end. [`run`] returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::{attention_image, save_model, Checkpoint};
use crate::config::RunConfig;
use crate::data::write_dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_scenes, EvalReport};
use crate::imageio::{read_rgb, write_gray};
use crate::metrics::impro;
use crate::model::Sample;
use crate::prompt::{OpacityLabel, PromptFile, PromptKind};
use crate::train::{train_loop, SceneSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const THREADS_ENV: &str = "PROMPTMATTE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "promptmatte", version, about = "Prompt-conditioned matting at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PromptArg {
    Point,
    Box,
    Mask,
    All,
}

impl PromptArg {
    fn kinds(self) -> Vec<PromptKind> {
        match self {
            PromptArg::Point => vec![PromptKind::Point],
            PromptArg::Box => vec![PromptKind::Box],
            PromptArg::Mask => vec![PromptKind::Mask],
            PromptArg::All => PromptKind::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run configuration; its `data` section sets scene size and sampling.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model on a dataset and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write report files.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        prompt: PromptArg,
        /// Earlier report (CSV) to compute improvements against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Output directory, the checkpoint directory by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict an alpha matte for one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
        opacity: Option<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the final cross-attention map as a gray image.
    VizAttn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
        opacity: Option<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average relative improvement (percent) of comma-separated metrics over a baseline.
    Impro {
        #[arg(long, allow_hyphen_values = true)]
        baseline: String,
        #[arg(long, allow_hyphen_values = true)]
        method: String,
    },
    /// Print the parameter count of a configuration.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Argument(format!("not a number: {t:?}"))))
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<(RunConfig, String)> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let cfg = RunConfig::default();
            let text = cfg.to_json();
            Ok((cfg, text))
        }
    }
}

fn read_sample(image: &Path, prompt: &Path, opacity: Option<u8>) -> Result<Sample> {
    let image = read_rgb(image)?;
    let pf = PromptFile::load(prompt)?;
    let opacity = match opacity {
        Some(v) => OpacityLabel::from_value(v)?,
        None => pf.opacity,
    };
    Ok(Sample { image, prompt: pf.prompt, opacity })
}

fn dir_name(p: &Path) -> String {
    p.canonicalize()
        .ok()
        .and_then(|c| c.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| p.display().to_string())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { out, count, seed, config } => {
            let (cfg, _) = load_config(config.as_deref())?;
            let m = write_dataset(&out, count, seed, &cfg.data)?;
            println!("wrote {} scene(s) to {}", m.count, out.display());
        }
        Command::Train { config, data, out } => {
            let (cfg, text) = RunConfig::load(&config)?;
            let (records, skipped) = load_scenes(&data)?;
            if !skipped.is_empty() {
                log::warn!("{} unreadable scene(s) left out of training", skipped.len());
            }
            if records.is_empty() {
                return Err(Error::Argument(format!("no usable scenes under {}", data.display())));
            }
            let init = cfg.model.init_params(cfg.train.seed)?;
            let run = train_loop(&init, &cfg.model, &cfg.train, &SceneSource::Stored(records))?;
            save_model(&out, &run.params, &text, &run.losses, run.diverged.clone())?;
            if let Some(msg) = run.diverged {
                return Err(Error::Training(format!("{msg}; last good checkpoint kept in {}", out.display())));
            }
            let last = run.losses.last().map_or(f64::NAN, |r| r.loss);
            println!("trained {} step(s), final loss {last:.6}, checkpoint in {}", run.losses.len(), out.display());
        }
        Command::Eval { ckpt, data, prompt, baseline, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let mut report = evaluate(&ck, &dir_name(&ckpt), &data, &prompt.kinds(), &ck.config.metrics)?;
            if let Some(b) = baseline {
                report.compare_to(&EvalReport::load(&b)?)?;
            }
            let out = out.unwrap_or(ckpt);
            std::fs::create_dir_all(&out)?;
            let stem = format!("eval_{}", format!("{prompt:?}").to_lowercase());
            report.save(&out.join(format!("{stem}.csv")))?;
            let table = report.to_table();
            std::fs::write(out.join(format!("{stem}.txt")), &table)?;
            print!("{table}");
        }
        Command::Infer { ckpt, image, prompt, opacity, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let sample = read_sample(&image, &prompt, opacity)?;
            let alpha = ck.predict(std::slice::from_ref(&sample))?.remove(0);
            write_gray(&out, &alpha)?;
        }
        Command::VizAttn { ckpt, image, prompt, opacity, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let sample = read_sample(&image, &prompt, opacity)?;
            let (h, w) = (sample.image.shape()[1], sample.image.shape()[2]);
            let (_, map) = ck.predict_with_attention(&sample)?;
            if map.degenerate {
                log::warn!("attention map is constant");
            }
            write_gray(&out, &attention_image(&map, h, w))?;
        }
        Command::Impro { baseline, method } => {
            let v = impro(&parse_list(&baseline)?, &parse_list(&method)?)?;
            println!("{v:.2}");
        }
        Command::Params { config } => {
            let (cfg, _) = load_config(config.as_deref())?;
            println!("{}", cfg.model.init_params(0)?.param_count());
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Argument(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool that already exists (repeated calls in one process) is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_argument_error() { EXIT_USAGE } else { EXIT_RUNTIME }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
