//! Command-line driver for the geometry kernels: scene generation, direct
//! optimization, evaluation, flow rendering and gradient audits.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/config error,
//! 3 I/O error.

mod cmd_eval;
mod cmd_gen;
mod cmd_gradcheck;
mod cmd_optimize;
mod cmd_viz;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use warpflow_core::Error;

/// Environment variable consulted when --out is omitted.
pub const OUT_ENV: &str = "WARPFLOW_OUT";

#[derive(Parser)]
#[command(name = "warpflow", version, about = "Differentiable multi-view geometry toolkit")]
struct Cli {
    /// Worker threads for internal loops. The current implementation is
    /// sequential and deterministic for every value; the flag is accepted
    /// for interface stability.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Force bit-reproducible execution (deterministic reduction order).
    /// Sequential evaluation already guarantees this; the flag documents
    /// intent in scripts.
    #[arg(long, global = true)]
    reproducible: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output directory (falls back to $WARPFLOW_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn resolve(&self) -> Result<PathBuf, Error> {
        match &self.out {
            Some(p) => Ok(p.clone()),
            None => std::env::var_os(OUT_ENV).map(PathBuf::from).ok_or_else(|| {
                Error::InvalidConfig(format!("--out not given and {OUT_ENV} is unset"))
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory from a TOML spec.
    GenScene {
        /// Scene spec file.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Skip the generator self-check.
        #[arg(long)]
        no_self_check: bool,
    },
    /// Recover depth, pose and residual flow from a scene directory.
    Optimize {
        /// Scene directory produced by gen-scene.
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Optimizer config file (TOML, [optimize] section).
        #[arg(long)]
        config: Option<PathBuf>,
        /// rigid | residual | both.
        #[arg(long)]
        stage: Option<String>,
        /// Iterations per coarse-to-fine level.
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Coarse-to-fine levels.
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Ablation: disable the adaptive consistency mask (all-ones).
        #[arg(long)]
        naive_consistency: bool,
        /// Ablation: override the geometric-consistency weight.
        #[arg(long)]
        lambda_gc: Option<f64>,
        /// Test hook: stop after N coarse-to-fine level boundaries, leaving
        /// the checkpoint behind for --resume.
        #[arg(long, hide = true)]
        halt_after_levels: Option<usize>,
    },
    /// Depth error metrics between two PFM maps.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Optional validity mask (PGM, nonzero = valid).
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Depth cap in scene units.
        #[arg(long, default_value_t = 50.0)]
        cap: f64,
        /// Disable median scaling of the prediction.
        #[arg(long)]
        no_median_scale: bool,
        /// Also write the metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// End-point error between two .flo files (All and, with an occlusion
    /// mask, Noc regions).
    EvalFlow {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Occlusion mask (PGM, nonzero = occluded).
        #[arg(long)]
        occlusion: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Scale-aligned absolute trajectory error over snippets.
    EvalPose {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Snippet length in frames.
        #[arg(long, default_value_t = 5)]
        snippet: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render a .flo file with the Middlebury color wheel.
    VizFlow {
        /// Input flow file.
        flow: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Absolute normalization magnitude (default: 99th percentile).
        #[arg(long)]
        max_flow: Option<f64>,
    },
    /// Finite-difference audit of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 4242)]
        seed: u64,
        /// Audit a single operation.
        #[arg(long)]
        op: Option<String>,
        /// Test hook: corrupt the named op's gradient; the audit must fail.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::Parse { .. } => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScene {
            config,
            out,
            no_self_check,
        } => out
            .resolve()
            .map_err(CmdError::from)
            .and_then(|dir| cmd_gen::run(&config, &dir, !no_self_check)),
        Command::Optimize {
            scene,
            out,
            config,
            stage,
            max_iters,
            lr,
            levels,
            seed,
            resume,
            naive_consistency,
            lambda_gc,
            halt_after_levels,
        } => out.resolve().map_err(CmdError::from).and_then(|dir| {
            cmd_optimize::run(cmd_optimize::Request {
                scene_dir: scene,
                out_dir: dir,
                config_path: config,
                stage_override: stage,
                max_iters_override: max_iters,
                lr_override: lr,
                levels_override: levels,
                seed_override: seed,
                resume,
                naive_consistency,
                lambda_gc_override: lambda_gc,
                halt_after_levels,
            })
        }),
        Command::EvalDepth {
            pred,
            gt,
            valid,
            cap,
            no_median_scale,
            csv,
        } => cmd_eval::depth(&pred, &gt, valid.as_deref(), cap, !no_median_scale, csv.as_deref()),
        Command::EvalFlow {
            pred,
            gt,
            occlusion,
            csv,
        } => cmd_eval::flow(&pred, &gt, occlusion.as_deref(), csv.as_deref()),
        Command::EvalPose {
            pred,
            gt,
            snippet,
            csv,
        } => cmd_eval::pose(&pred, &gt, snippet, csv.as_deref()),
        Command::VizFlow { flow, out, max_flow } => out
            .resolve()
            .map_err(CmdError::from)
            .and_then(|dir| cmd_viz::run(&flow, &dir, max_flow)),
        Command::Gradcheck {
            trials,
            seed,
            op,
            corrupt,
        } => cmd_gradcheck::run(trials, seed, op.as_deref(), corrupt.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::VerificationFailed(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Command outcome: core errors map to exit codes by kind; verification
/// failures (a check that ran and said "no") always exit 1.
pub enum CmdError {
    Core(Error),
    VerificationFailed(String),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Core(e)
    }
}

pub type CmdResult = Result<(), CmdError>;
