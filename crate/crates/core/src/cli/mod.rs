//! The `melsub` command line: scene simulation, separation, metrics and
//! cost reports driven by a TOML config plus flag overrides.

mod commands;
mod config;
mod png;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_cost, cmd_metrics, cmd_separate, cmd_simulate, load_bundle, output_file,
    render_from_config, target_file, Bundle, CostSummary, MetricReport, SceneManifest,
    SeparationReport, ZoneReport, MANIFEST,
};
pub use config::{ConfigError, RunConfig, Snr};
pub use png::{render_spectrogram, write_spectrogram_png, DYNAMIC_RANGE_DB};

use crate::beamformer::Mode;
use crate::error::Error;

/// Overrides the default output root (`./melsub-out`).
pub const OUT_DIR_ENV: &str = "MELSUB_OUT_DIR";
const DEFAULT_OUT_ROOT: &str = "melsub-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "melsub",
    version,
    about = "Mel-subband beamforming for in-car speech separation"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a cabin scene and write a bundle of wavs plus a manifest.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        /// Target SNR in dB, or `inf` for no noise.
        #[arg(long)]
        snr: Option<Snr>,
        /// Add a loudspeaker echo.
        #[arg(long)]
        echo: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Separate a scene bundle into one signal per zone.
    Separate {
        /// Bundle directory written by `simulate`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        bands: Option<usize>,
        /// Seed of the default band filters and stub parameters.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write spectrogram images.
        #[arg(long)]
        png: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare estimator compute costs across processing modes.
    Cost {
        /// Subband counts to include (repeatable).
        #[arg(long)]
        bands: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an estimate against a reference wav.
    Metrics {
        #[arg(long = "est")]
        estimate: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 0)]
        est_channel: usize,
        #[arg(long, default_value_t = 0)]
        ref_channel: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(Error::Config(_) | Error::Geometry(_)) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Separate { .. } => "separate",
            Command::Cost { .. } => "cost",
            Command::Metrics { .. } => "metrics",
        }
    }
}

/// `--out`, else `[output] dir`, else `$MELSUB_OUT_DIR/<command>`, else
/// `./melsub-out/<command>`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &RunConfig, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output.dir {
        return p.clone();
    }
    let root = std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    root.join(command)
}

/// Run one parsed invocation, returning what should be printed.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let name = cli.command.name();
    match &cli.command {
        Command::Simulate {
            seed,
            snr,
            echo,
            out,
        } => {
            if let Some(s) = seed {
                cfg.scene.seed = *s;
            }
            if let Some(s) = snr {
                cfg.render.snr_db = *s;
            }
            cfg.scene.echo |= *echo;
            cfg.validate_scene()?;
            let dir = resolve_out_dir(out.as_deref(), &cfg, name);
            let m = cmd_simulate(&cfg, &dir)?;
            let snr = m
                .realized_snr_db
                .map_or("inf".to_string(), |v| format!("{v:.2} dB"));
            Ok(format!(
                "wrote {} ({} zones, {} active, snr {snr})\n",
                dir.display(),
                m.zones,
                m.active.iter().filter(|a| **a).count()
            ))
        }
        Command::Separate {
            input,
            mode,
            bands,
            seed,
            png,
            out,
        } => {
            if let Some(m) = mode {
                cfg.separate.mode = *m;
            }
            if let Some(k) = bands {
                cfg.separate.bands = *k;
            }
            if let Some(s) = seed {
                cfg.separate.filter_seed = *s;
                cfg.separate.stub.weight_seed = *s;
            }
            cfg.output.png |= *png;
            if let Some(i) = input {
                cfg.input.bundle = Some(i.clone());
            }
            cfg.validate_separate()?;
            let bundle = cfg.input.bundle.clone().ok_or_else(|| ConfigError {
                path: cli.config.clone(),
                line: None,
                message: "no input bundle: pass --input or set [input] bundle".into(),
            })?;
            let dir = resolve_out_dir(out.as_deref(), &cfg, name);
            let report = cmd_separate(&cfg, &bundle, &dir)?;
            let mut text = format!("mode {} -> {}\n", report.mode, dir.display());
            for z in &report.zones {
                match (z.si_snr, z.si_snr_improvement) {
                    (Some(s), Some(d)) => {
                        text.push_str(&format!("zone {}: si-snr {s:.2} dB ({d:+.2} dB)\n", z.zone))
                    }
                    _ => text.push_str(&format!(
                        "zone {}: silent, output {:.1} dB below loudest zone\n",
                        z.zone, -z.relative_power_db
                    )),
                }
            }
            Ok(text)
        }
        Command::Cost { bands, out } => {
            if !bands.is_empty() {
                cfg.cost.bands = bands.clone();
            }
            cfg.validate_cost()?;
            let dir = resolve_out_dir(out.as_deref(), &cfg, name);
            let (_, table) = cmd_cost(&cfg, &dir)?;
            Ok(table)
        }
        Command::Metrics {
            estimate,
            reference,
            est_channel,
            ref_channel,
            out,
        } => {
            let report = cmd_metrics(estimate, reference, *est_channel, *ref_channel)?;
            if let Some(dir) = out {
                commands::write_metric_report(&report, dir)?;
            }
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let run = || execute(&cli);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: cannot start {n} threads: {e}");
                return EXIT_CONFIG;
            }
        },
        None => run(),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
