use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use masklet4d::config::Config;
use masklet4d::io;
use masklet4d::protocol::SemiPrompt;
use masklet4d::synth::SynthParams;
use masklet4d_cli::commands::{self, EvalArgs, OracleKind, ProtocolMode};
use masklet4d_cli::server::{self, AppState};
use masklet4d_cli::CliError;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "masklet4d", version, about = "Cross-modal 4D masklet annotation pipeline")]
struct Cli {
    /// TOML config; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set fusion.eps=0.4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Sequence manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Cache and artifact directory.
    #[arg(long, default_value = "work")]
    work: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration (defaults, file, overrides).
    Config,
    /// Write the synthetic fixture sequence.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        frames: usize,
    },
    /// Manifest → voxel grids.
    Reconstruct(Common),
    /// Voxel grids → pixel-voxel tables.
    Raycast(Common),
    /// Masklets + tables → voxel/point masklets and scores.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Also copy the fusion artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset report over one or more sequences.
    Stats {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value = "work")]
        work: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interactive-segmentation protocol run against fused annotations.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        protocol: Mode,
        #[arg(long, value_enum, default_value = "noisy")]
        oracle: Oracle,
        /// Semi-supervised prompt type.
        #[arg(long, value_enum, default_value = "click")]
        prompt: Prompt,
        /// Clicks for semi-supervised click prompts.
        #[arg(long, default_value_t = 1)]
        clicks: usize,
        #[arg(long)]
        iou_threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frame_budget: Option<usize>,
        #[arg(long)]
        camera: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP review service.
    Serve {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value = "work")]
        work: PathBuf,
        /// Overrides serve.address.
        #[arg(long)]
        address: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Offline,
    Online,
    Semi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Perfect,
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prompt {
    Click,
    Box,
    Mask,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let bytes = io::to_pretty(value);
    match out {
        Some(p) => io::write_file(p, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides;
    let mut set = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push(format!("{key}={v}"));
        }
    };
    match &cli.command {
        Command::Reconstruct(c) | Command::Raycast(c) | Command::Fuse { common: c, .. } => {
            set("recon.threads", c.threads.map(|t| t.to_string()));
        }
        Command::Eval { common, iou_threshold, seed, frame_budget, camera, .. } => {
            set("recon.threads", common.threads.map(|t| t.to_string()));
            set("protocol.iou_threshold", iou_threshold.map(|x| x.to_string()));
            set("protocol.seed", seed.map(|x| x.to_string()));
            set("protocol.frame_budget", frame_budget.map(|x| x.to_string()));
            set("protocol.camera", camera.map(|x| x.to_string()));
        }
        Command::Serve { address, .. } => set("serve.address", address.as_ref().map(|a| format!("{a:?}"))),
        Command::Config | Command::Synth { .. } | Command::Stats { .. } => {}
    }
    let cfg = Config::load(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Synth { out, seed, frames } => {
            let manifest = commands::synth(&out, &SynthParams { seed, frames, ..Default::default() })?;
            println!("{}", manifest.display());
        }
        Command::Reconstruct(c) => emit(&commands::reconstruct(&cfg, &c.work, &c.manifest)?, None)?,
        Command::Raycast(c) => emit(&commands::raycast(&cfg, &c.work, &c.manifest)?, None)?,
        Command::Fuse { common, out } => emit(&commands::fuse(&cfg, &common.work, &common.manifest, out.as_deref())?, None)?,
        Command::Stats { manifests, work, out } => emit(&commands::stats(&cfg, &work, &manifests)?, out.as_deref())?,
        Command::Eval { common, protocol, oracle, prompt, clicks, out, .. } => {
            let args = EvalArgs {
                mode: match protocol {
                    Mode::Offline => ProtocolMode::Offline,
                    Mode::Online => ProtocolMode::Online,
                    Mode::Semi => ProtocolMode::Semi,
                },
                prompt: match prompt {
                    Prompt::Click => SemiPrompt::Click { n: clicks },
                    Prompt::Box => SemiPrompt::Box,
                    Prompt::Mask => SemiPrompt::Mask,
                },
                oracle: match oracle {
                    Oracle::Perfect => OracleKind::Perfect,
                    Oracle::Noisy => OracleKind::Noisy,
                },
            };
            emit(&commands::eval(&cfg, &common.work, &common.manifest, args)?, out.as_deref())?;
        }
        Command::Serve { manifests, work, .. } => {
            let address = cfg.serve.address.clone();
            let state = AppState::load(cfg, &work, &manifests)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Serve(e.to_string()))?;
            rt.block_on(server::serve(state, &address))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
