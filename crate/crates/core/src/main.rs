use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tgfield::cli::{self, ExperimentConfig, RunOptions};
use tgfield::{Error, Result};

#[derive(Parser)]
#[command(name = "tgfield", version, about = "Sparse-view CBCT reconstruction with radiative Gaussians")]
struct Args {
    /// Experiment config (JSON). Defaults to the static 64³ phantom.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Defaults to `io.out_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads; 1 by default in deterministic mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom, ground-truth volumes and projections.
    Simulate,
    /// CGLS, ASD-POCS and Gaussian initialization.
    Init {
        #[arg(long)]
        proj: PathBuf,
        #[arg(long, num_args = 1..)]
        truth: Option<Vec<PathBuf>>,
    },
    /// Optimizes Gaussians and, after warm-up, the deformation field.
    Train {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        proj: PathBuf,
        #[arg(long, num_args = 1..)]
        truth: Option<Vec<PathBuf>>,
    },
    /// PSNR and SSIM of reconstructions against ground truth.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        recon: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        truth: Vec<PathBuf>,
    },
    /// Projection images from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Projection file whose geometry is used.
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        views: Vec<usize>,
        /// Extra angles in degrees.
        #[arg(long, num_args = 1.., value_delimiter = ',', allow_hyphen_values = true)]
        angles: Vec<f64>,
        #[arg(long)]
        phase: Option<usize>,
    },
    /// Samples a checkpoint onto its volume grid.
    Voxelize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        phase: Option<usize>,
    },
    /// Prints the JSON schema of the experiment config.
    Schema,
}

fn config(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => cli::load_config(p)?,
        None => ExperimentConfig::static_phantom(),
    };
    cfg.apply(&RunOptions {
        seed: args.seed,
        deterministic: args.deterministic,
    });
    Ok(cfg)
}

fn out_dir(args: &Args, cfg: Option<&ExperimentConfig>) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.map(|c| c.io.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(args: &Args) -> Result<()> {
    let threads = args.threads.or(args.deterministic.then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Argument("--threads must be positive".into()));
        }
        // Fails only if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &args.command {
        Command::Simulate => {
            let cfg = config(args)?;
            let out = cli::cmd_simulate(&cfg, &out_dir(args, Some(&cfg)))?;
            println!("{}", out.projections.display());
        }
        Command::Init { proj, truth } => {
            let cfg = config(args)?;
            let out = cli::cmd_init(&cfg, proj, &out_dir(args, Some(&cfg)), truth.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&out.report)?);
        }
        Command::Train { init, proj, truth } => {
            let cfg = config(args)?;
            let out = cli::cmd_train(&cfg, init, proj, &out_dir(args, Some(&cfg)), truth.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&out.summary)?);
        }
        Command::Eval { recon, truth } => {
            let dir = args.out.as_deref();
            let report = cli::cmd_eval(recon, truth, dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Render {
            checkpoint,
            geometry,
            views,
            angles,
            phase,
        } => {
            let radians: Vec<f64> = angles.iter().map(|a| a.to_radians()).collect();
            let dir = out_dir(args, None);
            for img in cli::cmd_render(checkpoint, geometry, views, &radians, *phase, &dir)? {
                println!("{}", img.png.display());
            }
        }
        Command::Voxelize { checkpoint, phase } => {
            let path = cli::cmd_voxelize(checkpoint, *phase, None, &out_dir(args, None))?;
            println!("{}", path.display());
        }
        Command::Schema => {
            let schema = serde_json::to_string_pretty(&cli::config_schema())?;
            match &args.out {
                Some(p) => write_text(p, &schema)?,
                None => println!("{schema}"),
            }
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
