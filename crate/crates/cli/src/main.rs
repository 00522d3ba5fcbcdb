mod commands;
mod failure;
mod frames;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{ArgGroup, Parser, Subcommand};

use commands::Perturbation;
use failure::{Classify, Failure};
use frames::write_json;

#[derive(Parser)]
#[command(
    name = "recalib",
    version,
    about = "LiDAR-camera extrinsic recalibration toolkit"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed; overrides any seed in a config file. Commands without
    /// randomness accept and ignore it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic frames from a scene spec.
    Synth { spec: PathBuf, out_dir: PathBuf },
    /// Corrupt the calibration or cloud of every frame.
    #[command(group(ArgGroup::new("corruption").required(true).args(["sigma", "translate", "rotate"])))]
    Perturb {
        in_dir: PathBuf,
        out_dir: PathBuf,
        /// Gaussian noise on the 12 extrinsic entries.
        #[arg(long)]
        sigma: Option<f64>,
        /// Cloud shift `a,b,c` in meters.
        #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
        translate: Option<[f64; 3]>,
        /// LiDAR mount yaw in degrees.
        #[arg(long, allow_hyphen_values = true)]
        rotate: Option<f64>,
    },
    /// Write alignment and calibration feature tensors.
    ExportFeatures {
        in_dir: PathBuf,
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        classes: Vec<u16>,
        /// Re-read every tensor and compare.
        #[arg(long)]
        verify: bool,
    },
    /// Estimate a corrected calibration for every frame.
    Recalibrate {
        in_dir: PathBuf,
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Summarize a report, or score estimated calibrations against labels.
    Evaluate {
        /// A `report.json`, or a directory of estimated calibrations.
        input: PathBuf,
        /// Label directory when `input` is a directory.
        labels: Option<PathBuf>,
        /// Write the JSON result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected a,b,c, got {s:?}"));
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|e| format!("{p:?}: {e}"))?;
        if !slot.is_finite() {
            return Err(format!("{p:?} is not finite"));
        }
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Config(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .internal()?;
    }
    match cli.command {
        Command::Synth { spec, out_dir } => commands::synth(&spec, &out_dir, cli.seed),
        Command::Perturb {
            in_dir,
            out_dir,
            sigma,
            translate,
            rotate,
        } => {
            let corruption = match (sigma, translate, rotate) {
                (Some(s), None, None) => Perturbation::Sigma(s),
                (None, Some(t), None) => Perturbation::Translate(t),
                (None, None, Some(r)) => Perturbation::Rotate(r),
                _ => {
                    return Err(Failure::Config(anyhow!(
                        "give exactly one of --sigma, --translate, --rotate"
                    )))
                }
            };
            commands::perturb(&in_dir, &out_dir, corruption, cli.seed.unwrap_or(0))
        }
        Command::ExportFeatures {
            in_dir,
            out_dir,
            classes,
            verify,
        } => commands::export_features(&in_dir, &out_dir, &classes, verify),
        Command::Recalibrate {
            in_dir,
            config,
            out,
            dry_run,
        } => {
            let cfg = commands::resolve_recalib_config(config.as_deref(), cli.seed)?;
            if dry_run {
                println!("{}", serde_json::to_string_pretty(&cfg).internal()?);
                return Ok(());
            }
            let out =
                out.ok_or_else(|| Failure::Config(anyhow!("--out is required unless --dry-run is given")))?;
            commands::recalibrate(&in_dir, &cfg, &out)
        }
        Command::Evaluate { input, labels, out } => match labels {
            Some(labels) => {
                let (cmp, table) = commands::compare_dirs(&input, &labels)?;
                print!("{table}");
                match out {
                    Some(path) => write_json(&path, &cmp).data(),
                    None => Ok(()),
                }
            }
            None => {
                let (report, table) = commands::resummarize(&input)?;
                print!("{table}");
                match out {
                    Some(path) => frames::write(&path, report.to_json() + "\n").data(),
                    None => Ok(()),
                }
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RECALIB_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("recalib: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
