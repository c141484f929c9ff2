use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conclab_core::pipeline::{run_suite, verdict_table, write_outputs};
use conclab_core::report::to_json_string;
use conclab_core::scenario::{ScenarioConfig, BUILTIN_SCENARIOS};

/// The only environment override: where outputs go.
const OUTPUT_DIR_ENV: &str = "CONCLAB_OUTPUT_DIR";

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_PIPELINE_ERROR: u8 = 2;
const EXIT_CONFIG_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "conclab", version, about = "Profile decomposition laboratory on manifolds of bounded geometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report, verdicts, curves and grids.
    Run {
        /// Scenario file, or the name of a built-in scenario.
        config: String,
        /// Output directory (overrides the config and the environment).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Chart lattice spacing.
        #[arg(long = "h")]
        spacing: Option<f64>,
        /// Drop scheduled k above this value.
        #[arg(long)]
        kmax: Option<u32>,
        /// Suppress the verdict table.
        #[arg(long)]
        quiet: bool,
    },
    /// Load and check a scenario, printing it with defaults filled in.
    Validate { config: String },
    /// List the built-in scenarios.
    ListScenarios,
}

fn load(arg: &str) -> conclab_core::Result<ScenarioConfig> {
    let path = Path::new(arg);
    if !path.exists() && BUILTIN_SCENARIOS.iter().any(|(n, _)| *n == arg) {
        return ScenarioConfig::builtin(arg);
    }
    ScenarioConfig::load(path)
}

fn configure(arg: &str, spacing: Option<f64>, kmax: Option<u32>) -> conclab_core::Result<ScenarioConfig> {
    let mut cfg = load(arg)?;
    if let Some(h) = spacing {
        cfg.spacing = Some(h);
        cfg.resolve()?;
    }
    if let Some(k) = kmax {
        cfg.truncate_schedule(k)?;
    }
    Ok(cfg)
}

fn run(config: &str, out: Option<PathBuf>, spacing: Option<f64>, kmax: Option<u32>, quiet: bool) -> ExitCode {
    let cfg = match configure(config, spacing, kmax) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    let dir = out
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let outcome = match run_suite(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("pipeline error in {e}");
            return ExitCode::from(EXIT_PIPELINE_ERROR);
        }
    };
    if let Err(e) = write_outputs(&dir, &outcome) {
        eprintln!("pipeline error in stage output: {e}");
        return ExitCode::from(EXIT_PIPELINE_ERROR);
    }
    if !quiet {
        println!("scenario {} -> {}", cfg.name, dir.display());
        print!("{}", verdict_table(&outcome.verdicts));
    }
    if outcome.has_failures() {
        ExitCode::from(EXIT_CHECK_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            spacing,
            kmax,
            quiet,
        } => run(&config, out, spacing, kmax, quiet),
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                print!("{}", to_json_string(&cfg));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(EXIT_CONFIG_ERROR)
            }
        },
        Command::ListScenarios => {
            for (name, _) in BUILTIN_SCENARIOS {
                match ScenarioConfig::builtin(name) {
                    Ok(c) => println!("{name:<24} {}", c.description),
                    Err(e) => println!("{name:<24} (invalid: {e})"),
                }
            }
            ExitCode::SUCCESS
        }
    }
}
