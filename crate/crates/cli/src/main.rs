use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use rbsde_lab::config::ScenarioConfig;
use rbsde_lab::convergence::{convergence_study, study_csv};
use rbsde_lab::scenario::{report_json, run_scenario_from_path};
use rbsde_lab::suite::{property_suite, Mutation, SuiteParams};
use rbsde_lab::{CliError, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "rbsde-lab",
    about = "Reflected BSDEs on path lattices: solve scenarios, run grid-refinement studies, and verify the structural properties on seeded instances",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario config; writes the node CSV and report JSON named
    /// in its outputs section (report goes to stdout when no path is set).
    Solve { config: PathBuf },
    /// Solve the scenario over a ladder of grid sizes and print the
    /// (N, Y0, |Y0 - reference|) table as CSV.
    Converge {
        config: PathBuf,
        /// Comma-separated step counts, e.g. 10,20,40,80.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<usize>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the seeded property suite and print its JSON report.
    Props {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Use the single-mark Poisson lattice (depth capped at 3).
        #[arg(long, default_value_t = false)]
        jump_mode: bool,
        /// Fraction of non-terminal nodes given a strict right jump.
        #[arg(long, default_value_t = 0.3)]
        right_jump_fraction: f64,
        /// Guarantee at least one strict right jump per instance.
        #[arg(long, default_value_t = false)]
        force_right_jumps: bool,
        /// Testing hook: corrupt every solution before checking
        /// (bias_root | drop_right_jumps). Off by default.
        #[arg(long)]
        mutate: Option<String>,
        /// Worker cap; RBSDE_LAB_THREADS applies when unset.
        #[arg(long)]
        threads: Option<usize>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Solve { config } => {
            let started = Instant::now();
            match run_scenario_from_path(&config) {
                Ok(outcome) => {
                    let text = std::fs::read_to_string(&config).unwrap_or_default();
                    let parsed = ScenarioConfig::from_json(&text).ok();
                    let to_stdout = parsed.is_none_or(|c| c.outputs.report_json.is_none());
                    if to_stdout {
                        print!("{}", report_json(&outcome.report));
                    }
                    eprintln!(
                        "solved: Y0 = {:.12}, risk = {:.12}, {} Picard iteration(s), {:.1} ms",
                        outcome.report.y0,
                        outcome.report.risk,
                        outcome.report.picard.iterations,
                        started.elapsed().as_secs_f64() * 1e3
                    );
                    0
                }
                Err(e) => {
                    eprintln!("{e}");
                    e.exit_code()
                }
            }
        }
        Command::Converge { config, grid, output } => {
            let started = Instant::now();
            let result = std::fs::read_to_string(&config)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))
                .and_then(|text| ScenarioConfig::from_json(&text))
                .and_then(|cfg| convergence_study(&cfg, &grid));
            match result {
                Ok(study) => {
                    let csv = study_csv(&study);
                    if let Some(path) = output {
                        if let Err(e) = std::fs::write(&path, &csv) {
                            eprintln!("cannot write {}: {e}", path.display());
                            return EXIT_VALIDATION;
                        }
                    } else {
                        print!("{csv}");
                    }
                    eprintln!(
                        "reference = {:.12} ({}), {:.1} ms",
                        study.reference,
                        study.reference_kind,
                        started.elapsed().as_secs_f64() * 1e3
                    );
                    0
                }
                Err(e) => {
                    eprintln!("{e}");
                    e.exit_code()
                }
            }
        }
        Command::Props {
            seed,
            count,
            depth,
            jump_mode,
            right_jump_fraction,
            force_right_jumps,
            mutate,
            threads,
            output,
        } => {
            let started = Instant::now();
            let mutation = match mutate {
                Some(id) => match Mutation::from_id(&id) {
                    Some(m) => Some(m),
                    None => {
                        eprintln!(
                            "unknown mutation {id:?} (expected bias_root | drop_right_jumps)"
                        );
                        return EXIT_VALIDATION;
                    }
                },
                None => None,
            };
            if depth > 6 {
                eprintln!("depth {depth} exceeds the solver-property cap of 6");
                return EXIT_VALIDATION;
            }
            let params = SuiteParams {
                seed,
                count,
                depth,
                jump_mode,
                right_jump_fraction,
                force_right_jumps,
                mutation,
                threads,
            };
            let report = property_suite(&params);
            let json = report.to_json();
            if let Some(path) = output {
                if let Err(e) = std::fs::write(&path, &json) {
                    eprintln!("cannot write {}: {e}", path.display());
                    return EXIT_VALIDATION;
                }
            } else {
                print!("{json}");
            }
            eprintln!(
                "{} checks, {} failure(s), {:.1} ms",
                report.total_checks,
                report.total_failures,
                started.elapsed().as_secs_f64() * 1e3
            );
            if report.total_failures == 0 {
                0
            } else {
                1
            }
        }
    }
}
