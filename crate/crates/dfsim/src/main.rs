// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};

use dfsim::dfsim_core::scenario::{preset, ScenarioConfig, PRESETS};
use dfsim::dfsim_core::Error as CoreError;
use dfsim::{emit_results, file::parse_algorithm, run_parallel, write_results, Format, ScenarioFile};

/// Exit codes.
const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

/// Simulate DF selection for one scenario and write one row per run.
#[derive(Debug, Parser)]
#[command(name = "dfsim", version)]
#[command(group(ArgGroup::new("input").required(true).args(["scenario", "preset"])))]
struct Cli {
    /// TOML scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in scenario (exp1 or exp2).
    #[arg(long)]
    preset: Option<String>,
    /// service_carving, handshake or sdn; overrides the scenario.
    #[arg(long)]
    algo: Option<String>,
    /// Runs per sweep point; overrides the scenario.
    #[arg(long)]
    runs: Option<u32>,
    /// Base seed; run k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Run the scenario and the invariant checks without writing results.
    #[arg(long)]
    check: bool,
    /// Print the resolved scenario as TOML and exit.
    #[arg(long, conflicts_with = "check")]
    print_scenario: bool,
}

fn load(cli: &Cli) -> Result<ScenarioConfig, dfsim::Error> {
    let mut config = match (&cli.scenario, &cli.preset) {
        (Some(path), _) => ScenarioFile::load(path)?.into_config()?,
        (None, Some(name)) => preset(name)?,
        (None, None) => unreachable!("clap requires an input"),
    };
    if let Some(a) = &cli.algo {
        config.algorithm = parse_algorithm(a)?;
    }
    if let Some(r) = cli.runs {
        config.runs = r;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("dfsim: {e}");
            if let dfsim::Error::Core(CoreError::UnknownPreset(_)) = e {
                eprintln!("dfsim: available presets: {}", PRESETS.join(", "));
            }
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if cli.print_scenario {
        print!("{}", ScenarioFile::from_config(&config).to_toml());
        return ExitCode::SUCCESS;
    }
    let outcomes = match run_parallel(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("dfsim: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };

    let mut failed = 0;
    for o in &outcomes {
        if o.violations.is_empty() {
            continue;
        }
        failed += 1;
        for v in &o.violations {
            eprintln!(
                "dfsim: run {} delay {} ms rate {} Mb/s: {v}",
                o.point.run,
                o.point.inter_pe_delay.as_millis_f64(),
                o.point.bum_rate_bps as f64 / 1e6
            );
        }
    }

    if cli.check {
        eprintln!(
            "dfsim: {} runs of {}, {} with invariant violations",
            outcomes.len(),
            config.algorithm,
            failed
        );
    } else {
        let rows: Vec<_> = outcomes.iter().map(|o| o.row.clone()).collect();
        let written = match &cli.out {
            Some(path) => emit_results(&rows, path, cli.format),
            None => {
                let stdout = std::io::stdout().lock();
                let mut buf = std::io::BufWriter::new(stdout);
                write_results(&rows, cli.format, &mut buf).and_then(|()| {
                    buf.flush().map_err(|source| dfsim::Error::Io {
                        path: "<stdout>".into(),
                        source,
                    })
                })
            }
        };
        if let Err(e) = written {
            eprintln!("dfsim: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }

    if failed > 0 {
        ExitCode::from(EXIT_INVARIANT)
    } else {
        ExitCode::SUCCESS
    }
}
