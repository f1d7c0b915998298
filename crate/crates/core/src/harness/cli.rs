use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::pipeline;
use crate::config::LabConfig;
use crate::error::Result;

#[derive(Parser, Debug)]
#[command(name = "tactile-mpc", version, about = "Tactile marble manipulation lab: data, models, MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key=value lab config; omitted keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed of the command's config section.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Models {
    /// Autoencoder checkpoint.
    #[arg(long = "ae", value_name = "PATH", default_value = "models/ae.ckpt")]
    ae: PathBuf,
    /// Dynamics checkpoint.
    #[arg(long = "dyn", value_name = "PATH", default_value = "models/dyn.ckpt")]
    dynamics: PathBuf,
    /// Evaluate planner particles on all cores.
    #[arg(long)]
    parallel: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect random-command episodes (default out: data).
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Train the keypoint autoencoder (default out: models).
    TrainAe {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `collect`.
        #[arg(long, value_name = "DIR", default_value = "data")]
        data: PathBuf,
    },
    /// Train the dynamics model on encoded transitions (default out: models).
    TrainDyn {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR", default_value = "data")]
        data: PathBuf,
        #[arg(long = "ae", value_name = "PATH", default_value = "models/ae.ckpt")]
        ae: PathBuf,
    },
    /// Write the active keypoint of every frame to keypoints.csv (default out: encoded).
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR", default_value = "data")]
        data: PathBuf,
        #[arg(long = "ae", value_name = "PATH", default_value = "models/ae.ckpt")]
        ae: PathBuf,
    },
    /// Paired MPC / P-controller manipulation trials (default out: eval).
    EvalMpc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
    },
    /// Time keypoint-space against pixel-space planning (default out: bench).
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
    },
}

fn load_config(common: &Common) -> Result<LabConfig> {
    match &common.config {
        Some(p) => LabConfig::from_file(p),
        None => Ok(LabConfig::default()),
    }
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Collect { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "data");
            let m = pipeline::collect(&cfg, common.seed, &out)?;
            println!(
                "collected {} episodes ({} train, {} val, {} dropped, {} failed) into {}",
                m.episodes,
                m.train.len(),
                m.val.len(),
                m.dropped,
                m.failed.len(),
                out.display()
            );
        }
        Command::TrainAe { common, data } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "models");
            let (net, r) = pipeline::train_ae(&cfg, common.seed, &data, &out)?;
            println!(
                "autoencoder: {} params, median tracking error {:.2} px, active consistency {:.3}, intensity-depth r {:.3}",
                net.num_params(),
                r.median_error_px,
                r.active_consistency,
                r.intensity_depth_corr
            );
        }
        Command::TrainDyn { common, data, ae } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "models");
            let (p, r) = pipeline::train_dyn(&cfg, common.seed, &data, &ae, &out)?;
            println!(
                "dynamics: {} params, one-step rmse {:.2} px (no-change {:.2} px), zero-action drift {:.3}",
                p.num_params(),
                r.one_step_rmse_px,
                r.persistence_rmse_px,
                r.zero_action_drift
            );
        }
        Command::Encode { common, data, ae } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "encoded");
            let n = pipeline::encode(&cfg, &data, &ae, &out)?;
            println!("encoded {n} frames into {}", out.join("keypoints.csv").display());
        }
        Command::EvalMpc { common, models } => {
            let mut cfg = load_config(&common)?;
            cfg.cem.parallel |= models.parallel;
            let out = out_dir(&common, "eval");
            let r = pipeline::eval(&cfg, common.seed, &models.ae, &models.dynamics, &out)?;
            let s = &r.summary;
            println!(
                "MPC median distance {:.1} -> {:.1} px, P {:.1} -> {:.1} px; drop rate MPC {:.2}, P {:.2}",
                s.mpc.initial_median_px,
                s.mpc.final_median_px,
                s.p.initial_median_px,
                s.p.final_median_px,
                s.mpc.drop_rate,
                s.p.drop_rate
            );
        }
        Command::Bench { common, models } => {
            let mut cfg = load_config(&common)?;
            cfg.bench.parallel |= models.parallel;
            let out = out_dir(&common, "bench");
            let r = pipeline::bench(&cfg, common.seed, &models.ae, &models.dynamics, &out)?;
            println!(
                "keypoint MPC step {:.3e} s, pixel MPC step {:.3e} s, speedup {:.1}x ({} forward passes); params {}",
                r.keypoint_mpc_step_s, r.pixel_mpc_step_s, r.speedup, r.forward_passes_per_step, r.total_params
            );
        }
    }
    Ok(())
}

/// Parses `argv` and runs the command. Returns 0 on success, 1 on a usage
/// error and 2 on a runtime failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
