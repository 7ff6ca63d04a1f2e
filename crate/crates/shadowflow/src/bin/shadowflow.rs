use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shadowflow::config::{Preset, RunConfig, ToyConfig, PRESET_NAMES};
use shadowflow::runner;

#[derive(Parser)]
#[command(
    name = "shadowflow",
    about = "Simulate concentration dynamics of interacting bubble configurations on a flat torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SourceArgs {
    /// Scenario preset name (see `list-presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dimension used when generating a preset config.
    #[arg(long, default_value_t = 6)]
    n: usize,
    /// Seed for the initial-data jitter (0 disables it).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the integration horizon.
    #[arg(long)]
    t_max: Option<f64>,
}

impl SourceArgs {
    fn materialize(&self) -> shadowflow::Result<(RunConfig, Option<&'static str>)> {
        let (mut cfg, preset_name) = match (&self.preset, &self.config) {
            (Some(name), None) => {
                let preset = Preset::parse(name)?;
                let cfg = runner::config_from_preset(preset, self.n, self.seed.unwrap_or(0))?;
                (cfg, Some(preset.name()))
            }
            (None, Some(path)) => (RunConfig::load(path)?, None),
            _ => {
                return Err(shadowflow::ShadowError::Config(
                    "provide exactly one of --preset or --config".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t_max) = self.t_max {
            cfg.integrator.t_max = t_max;
        }
        Ok((cfg, preset_name))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write trajectory + summary files.
    Run {
        #[command(flatten)]
        source: SourceArgs,
        /// Output directory (a per-run subdirectory is created inside).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the full cutoff report per sample.
        #[arg(long)]
        dump_cutoffs: bool,
    },
    /// Run a set of config files (or directories of them) and aggregate a CSV.
    Batch {
        /// Config files and/or directories containing *.toml configs.
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summarize completed runs under a directory.
    Report {
        #[arg(default_value = "out")]
        dir: PathBuf,
    },
    /// List the available presets.
    ListPresets,
    /// Validate a config or preset without running it.
    Validate {
        #[command(flatten)]
        source: SourceArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(runner::exit_code(&e) as u8)
        }
    }
}

fn dispatch(cli: Cli) -> shadowflow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            source,
            out,
            dump_cutoffs,
        } => {
            if source.preset.as_deref() == Some("toy") {
                let summary = runner::execute_toy(&ToyConfig::default(), "toy", &out)?;
                println!(
                    "toy: index {} | max closed-form deviation {:.3e} | energy decreasing: {}",
                    summary.index_at_infinity,
                    summary.max_closed_form_deviation,
                    summary.energy_strictly_decreasing
                );
                return Ok(ExitCode::SUCCESS);
            }
            let (cfg, preset_name) = source.materialize()?;
            let id = cfg
                .run_id
                .clone()
                .unwrap_or_else(|| preset_name.unwrap_or("run").to_string());
            let summary = runner::execute_run(&cfg, &id, preset_name, &out, dump_cutoffs)?;
            println!(
                "{}: {} at t = {:.3} | index {} | checks {}",
                summary.run_id,
                summary.outcome,
                summary.t_end,
                summary
                    .end
                    .index_at_infinity
                    .map(|i| i.to_string())
                    .unwrap_or_else(|| "-".into()),
                if summary.checks.all_ok() { "ok" } else { "FAIL" }
            );
            println!("wrote {}", out.join(&summary.run_id).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Batch { configs, out, jobs } => {
            let outcome = runner::batch(&configs, jobs, &out)?;
            println!(
                "{} runs -> {}",
                outcome.rows.len(),
                outcome.csv_path.display()
            );
            Ok(ExitCode::from(outcome.exit_code as u8))
        }
        Command::Report { dir } => {
            let r = runner::report(&dir)?;
            print!("{}", r.text);
            std::fs::write(dir.join("report.txt"), &r.text).ok();
            Ok(ExitCode::from(r.exit_code as u8))
        }
        Command::ListPresets => {
            for (name, preset) in PRESET_NAMES {
                println!("{name:<26} {}", preset.describe());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { source } => {
            if source.preset.as_deref() == Some("toy") {
                println!("toy scenario: closed-form landscape, nothing to validate");
                return Ok(ExitCode::SUCCESS);
            }
            let (cfg, _) = source.materialize()?;
            match cfg.resolve() {
                Ok(resolved) => {
                    println!(
                        "valid: q = {}, {} critical points ({} with negative Laplacian)",
                        cfg.q,
                        resolved.crits.len(),
                        resolved
                            .crits
                            .iter()
                            .filter(|c| c.laplacian < 0.0)
                            .count()
                    );
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("invalid: {e}");
                    Ok(ExitCode::from(2))
                }
            }
        }
    }
}
