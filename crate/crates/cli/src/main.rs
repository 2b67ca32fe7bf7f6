use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geoeval_cli::config::{Overrides, RunConfig, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
use geoeval_cli::report::{load_model, load_report, run_id, write_json};
use geoeval_cli::{logging, pipeline, plots, CliError};
use geoeval_core::data::{save_dataset, ColumnSchema};
use geoeval_core::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "geoeval", version, about = "Spatially robust evaluation of geospatial regression models")]
struct Cli {
    /// Log filter when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: block, split, diagnose, select, fit, calibrate, evaluate, conformal, report, plots.
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip SVG figures.
        #[arg(long)]
        no_plots: bool,
    },
    /// Write a synthetic dataset (data.csv) and its ground truth (truth.json).
    Synth {
        /// Config whose [synth] table is used; built-in defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
        output: PathBuf,
    },
    /// Blocking, fold plan, KS/AD and nearest-neighbour diagnostics (diagnostics.json).
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
    /// Two-stage feature selection per target (selection.json).
    Select {
        #[command(flatten)]
        common: Common,
    },
    /// Score a saved model.json on a labeled CSV (evaluation.json).
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
        output: PathBuf,
    },
    /// Blocked against random fold OOF metrics with identical models (compare_cv.json).
    CompareCv {
        #[command(flatten)]
        common: Common,
    },
    /// Render figures from an existing report.json into <output>/plots.
    Plots {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` (mandatory, in the file or here).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`; falls back to $GEOEVAL_OUTPUT_DIR, then ./geoeval-out.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `k` (default 5).
    #[arg(long)]
    k: Option<usize>,
    /// Overrides `block_km` (default 100).
    #[arg(long)]
    block_km: Option<f64>,
    /// Overrides `alpha` (default 0.10).
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides `test_fraction` (default 0.2; 0 disables the test hold-out).
    #[arg(long)]
    test_fraction: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            output_dir: self.output.clone(),
            k: self.k,
            block_km: self.block_km,
            alpha: self.alpha,
            test_fraction: self.test_fraction,
        });
        cfg.validate()?;
        logging::set_run_id(&run_id(&pipeline::effective_config(&cfg)));
        Ok(cfg)
    }
}

fn create(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Pipeline(format!("{}: {e}", dir.display())))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { common, no_plots } => {
            let cfg = common.load()?;
            let dir = cfg.resolve_output_dir();
            let out = pipeline::run(&cfg)?;
            pipeline::write_run(&out, &dir)?;
            let echo = toml::to_string(&out.report.config).map_err(|e| CliError::Pipeline(e.to_string()))?;
            std::fs::write(dir.join("config.echo.toml"), echo)?;
            if !no_plots {
                plots::emit_plots(&out.report, &dir.join("plots"))?;
            }
            log::info!("wrote {}", dir.display());
        }
        Command::Synth { config, seed, n_samples, output } => {
            let mut synth = match config {
                Some(p) => RunConfig::load(&p)?.synth.unwrap_or_default(),
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                synth.seed = s;
            }
            if let Some(n) = n_samples {
                synth.n_samples = n;
            }
            let out = generate(&synth)?;
            create(&output)?;
            save_dataset(&out.dataset, output.join("data.csv"))?;
            write_json(&out.truth, &output.join("truth.json"))?;
            log::info!("wrote {} samples to {}", out.dataset.len(), output.display());
        }
        Command::Diagnose { common } => {
            let cfg = common.load()?;
            let dir = cfg.resolve_output_dir();
            let report = pipeline::diagnose(&cfg)?;
            create(&dir)?;
            write_json(&report, &dir.join("diagnostics.json"))?;
        }
        Command::Select { common } => {
            let cfg = common.load()?;
            let dir = cfg.resolve_output_dir();
            let report = pipeline::select(&cfg)?;
            create(&dir)?;
            write_json(&report, &dir.join("selection.json"))?;
        }
        Command::Evaluate { model, data, output } => {
            let bundle = load_model(&model)?;
            logging::set_run_id(&bundle.run_id);
            let report = pipeline::evaluate(&bundle, &data, &ColumnSchema::default())?;
            create(&output)?;
            write_json(&report, &output.join("evaluation.json"))?;
        }
        Command::CompareCv { common } => {
            let cfg = common.load()?;
            let dir = cfg.resolve_output_dir();
            let report = pipeline::compare_cv_modes(&cfg)?;
            create(&dir)?;
            write_json(&report, &dir.join("compare_cv.json"))?;
        }
        Command::Plots { report, output } => {
            let report = load_report(&report)?;
            logging::set_run_id(&report.run_id);
            plots::emit_plots(&report, &output.join("plots"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(&cli.log_level);
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
