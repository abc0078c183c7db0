use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frecas::commands::{self, AblateParam, BENCH_RUNS};
use frecas::dump::save_bank;
use frecas::{CliError, Result, RunConfig};
use frecas_core::codec::LatentCodec;

#[derive(Parser)]
#[command(
    name = "frecas",
    version,
    about = "Frequency-aware cascaded sampling experiments"
)]
struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named stage plan (see `presets`)
    #[arg(long, global = true)]
    preset: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Check invariants while running
    #[arg(long, global = true)]
    verify: bool,

    /// Run independent work items concurrently (capped by FRECAS_THREADS)
    #[arg(long, global = true)]
    parallel: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one cascade and write the image, raw dumps and manifest
    Sample {
        /// Also dump every stage's first and last latent
        #[arg(long)]
        dump_stages: bool,
        /// Keep only the first K stages of the plan
        #[arg(long)]
        stages: Option<usize>,
        #[arg(long)]
        condition: Option<u32>,
        /// identity or haar1
        #[arg(long)]
        codec: Option<String>,
    },
    /// Bank-averaged PSD curves of forward-diffused latents
    Psd {
        #[arg(long, value_delimiter = ',', default_value = "900,600,300,0")]
        timesteps: Vec<f64>,
        /// Radial bins between DC and Nyquist (default: bank side / 2)
        #[arg(long)]
        bins: Option<usize>,
        /// Use a white Gaussian bank instead of the procedural one
        #[arg(long)]
        white_noise: bool,
    },
    /// Sweep one plan parameter with a fixed seed
    Ablate {
        /// w_h, w_l, w_c, N or L
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Time repeated runs and report the cost proxy
    Bench {
        #[arg(long, default_value_t = BENCH_RUNS)]
        runs: usize,
    },
    /// List the shipped stage plans
    Presets {
        #[arg(long, default_value_t = frecas_core::cascade::DEFAULT_BASE_SIDE)]
        base_side: usize,
    },
    /// Write the configured bank to a directory
    ExportBank {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.preset = Some(p.clone());
        cfg.plan = None;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.verify |= cli.verify;
    Ok(cfg)
}

fn parse_codec(s: &str) -> Result<LatentCodec> {
    match s {
        "identity" => Ok(LatentCodec::Identity),
        "haar1" => Ok(LatentCodec::Haar1),
        _ => Err(CliError::Usage(format!(
            "unknown codec {s:?} (expected identity or haar1)"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Sample {
            dump_stages,
            stages,
            condition,
            codec,
        } => {
            if stages.is_some() {
                cfg.stages = stages;
            }
            if let Some(c) = condition {
                cfg.condition = c;
            }
            if let Some(c) = codec {
                cfg.codec = parse_codec(&c)?;
            }
            let m = commands::sample(&cfg, dump_stages)?;
            println!("cost_units {}", m.cost_units);
            println!(
                "proxy_speedup {:.4} (direct {})",
                m.proxy_speedup, m.direct_cost_units
            );
            println!("wrote {}", cfg.out.display());
        }
        Command::Psd {
            timesteps,
            bins,
            white_noise,
        } => {
            cfg.bank.white_noise |= white_noise;
            for row in commands::psd(&cfg, &timesteps, bins, cli.parallel)? {
                println!(
                    "t {} low_band_signal_fraction {:.6} high_band_signal_fraction {:.6}",
                    row.t, row.low_band_signal_fraction, row.high_band_signal_fraction
                );
            }
        }
        Command::Ablate { param, values } => {
            let param: AblateParam = param.parse()?;
            for row in commands::ablate(&cfg, param, &values, cli.parallel)? {
                println!(
                    "{}={} cost_units {} bank_psd_distance {:.6}",
                    param.name(),
                    row.value,
                    row.cost_units,
                    row.bank_psd_distance
                );
            }
        }
        Command::Bench { runs } => {
            let r = commands::bench(&cfg, runs)?;
            println!("cost_units {}", r.cost_units[0]);
            println!("direct_cost_units {}", r.direct_cost_units);
            println!("proxy_speedup {:.4}", r.proxy_speedup());
            println!("mean_seconds_last3 {:.6}", r.mean_last_three());
        }
        Command::Presets { base_side } => print!("{}", commands::presets_table(base_side)?),
        Command::ExportBank { dir } => {
            let bank = cfg.load_bank(&cfg.resolve_plan()?)?;
            save_bank(&dir, &bank)?;
            println!("wrote {} items to {}", bank.len(), dir.display());
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
