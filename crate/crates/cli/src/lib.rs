//! Command-line front end: training, refinement, deformation, evaluation,
//! experiments and the editing service.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod mapio;

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use deformkit::net::Ljn;

use commands::generate::GenerateOptions;
use commands::refine::InitSource;
use commands::train::TrainMode;
use config::RunConfig;
use manifest::{Manifest, Pair, Split};

#[derive(Debug, Parser)]
#[command(name = "deformkit", version, about = "Jacobian-field mesh deformation and map refinement")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a pair manifest.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        #[arg(long)]
        manifest: PathBuf,
        /// Resume from (or, for unsupervised runs, start from) a checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Refine an initial map with a trained network.
    Refine {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        pair: PairArgs,
        /// Initial pointwise map file.
        #[arg(long, conflicts_with = "init_fmap", required_unless_present = "init_fmap")]
        init: Option<PathBuf>,
        /// Initial functional map file.
        #[arg(long)]
        init_fmap: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Deform a source toward a target.
    Deform {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        pair: PairArgs,
        /// Pointwise map; without one the pair must share connectivity.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate maps: one JSON row per pair plus an aggregate row.
    Eval {
        /// Manifest whose records carry `map` (and optionally `gt_map`).
        #[arg(long, conflicts_with_all = ["source", "target", "map"])]
        manifest: Option<PathBuf>,
        #[arg(long, requires_all = ["target", "map"])]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Also write `eval.jsonl` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the editing service.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Mesh to open as the first session.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 7430)]
        port: u16,
    },
    /// Input-signal well-posedness on a same-connectivity pair.
    Diagnose {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        k: Option<usize>,
        /// Reference vertex the distances are measured from.
        #[arg(long, default_value_t = 0)]
        vertex: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Robustness of deformation to the source tessellation.
    Tessellation {
        /// Trained network; a fresh one otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic dataset and its manifest.
    Generate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = GenerateOptions::default().pairs)]
        pairs: usize,
        #[arg(long, default_value_t = GenerateOptions::default().around)]
        around: usize,
        #[arg(long, default_value_t = GenerateOptions::default().along)]
        along: usize,
        #[arg(long, default_value_t = GenerateOptions::default().max_angle)]
        max_angle: f64,
        #[arg(long, default_value_t = GenerateOptions::default().test_fraction)]
        test_fraction: f64,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
}

fn load_net(path: &Path) -> Result<Ljn> {
    Ok(commands::load_checkpoint(path)?.net)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Train {
            mode,
            manifest,
            checkpoint,
            out_dir,
        } => {
            let m = Manifest::load(&manifest)?;
            commands::train::run(&cfg, &m, mode, checkpoint.as_deref(), &out_dir)
        }
        Command::Refine {
            checkpoint,
            pair,
            init,
            init_fmap,
            gt,
            k,
            out_dir,
        } => {
            cfg.k = k.unwrap_or(cfg.k);
            let init = match (&init, &init_fmap) {
                (Some(p), None) => InitSource::PointToPoint(p),
                (None, Some(p)) => InitSource::Functional(p),
                _ => bail!("give exactly one of --init and --init-fmap"),
            };
            let net = load_net(&checkpoint)?;
            let reports =
                commands::refine::run_refine(&cfg, &net, &pair.source, &pair.target, init, gt.as_deref(), &out_dir)?;
            print!("{}", commands::json_lines(&reports));
            Ok(())
        }
        Command::Deform {
            checkpoint,
            pair,
            map,
            k,
            out_dir,
        } => {
            cfg.k = k.unwrap_or(cfg.k);
            let net = load_net(&checkpoint)?;
            commands::refine::run_deform(&cfg, &net, &pair.source, &pair.target, map.as_deref(), &out_dir)
        }
        Command::Eval {
            manifest,
            source,
            target,
            map,
            gt,
            out_dir,
        } => {
            let pairs = match (manifest, source, target, map) {
                (Some(m), ..) => Manifest::load(&m)?.pairs,
                (None, Some(source), Some(target), Some(map)) => vec![Pair {
                    name: "pair".into(),
                    source,
                    target,
                    split: Split::Test,
                    gt_map: gt,
                    map: Some(map),
                }],
                _ => bail!("give --manifest, or --source, --target and --map"),
            };
            let mut rows = commands::eval::evaluate_all(&pairs)?;
            rows.push(commands::eval::aggregate(&rows));
            let text = commands::json_lines(&rows);
            if let Some(dir) = out_dir {
                commands::ensure_dir(&dir)?;
                commands::write_file(&dir.join("eval.jsonl"), &text)?;
            }
            print!("{text}");
            Ok(())
        }
        Command::Serve {
            checkpoint,
            mesh,
            host,
            port,
        } => {
            let net = checkpoint.as_deref().map(load_net).transpose()?;
            commands::serve::run(&cfg, net, mesh.as_deref(), host, port)
        }
        Command::Diagnose { pair, k, vertex, out_dir } => {
            let d = commands::experiments::diagnose(&pair.source, &pair.target, k.unwrap_or(cfg.k), vertex, &out_dir)?;
            println!("pearson {:.4}, spearman {:.4}", d.pearson, d.spearman);
            Ok(())
        }
        Command::Tessellation { checkpoint, out_dir } => {
            let net = match checkpoint {
                Some(p) => load_net(&p)?,
                None => Ljn::new(cfg.network.clone())?,
            };
            let rows = commands::experiments::tessellation(&cfg, &net, &out_dir)?;
            print!("{}", commands::json_lines(&rows));
            Ok(())
        }
        Command::Generate {
            out_dir,
            pairs,
            around,
            along,
            max_angle,
            test_fraction,
        } => {
            let opts = GenerateOptions {
                pairs,
                around,
                along,
                max_angle,
                test_fraction,
                seed: cfg.seed,
            };
            commands::generate::run(&opts, &out_dir)
        }
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}
