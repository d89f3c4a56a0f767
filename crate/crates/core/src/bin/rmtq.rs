use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rmtq::gapref;
use rmtq::harness::checks::run_checks;
use rmtq::harness::config::ExperimentConfig;
use rmtq::harness::experiments::{format_schedule, prepare, run_experiment, write_outputs, RunOptions};

#[derive(Parser)]
#[command(name = "rmtq", version, about = "Quenched and annealed random-matrix gap statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; `<out>.meta.json` is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "RMTQ_THREADS", default_value_t = 1)]
        threads: usize,
        /// Restore the full-size figure protocols.
        #[arg(long)]
        paper_scale: bool,
        /// Validate the config and print the schedule without sampling.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print a Gaudin-Mehta reference table (s,p,cdf,provenance).
    Ref {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        beta: u8,
        #[arg(long, value_enum, default_value_t = Source::Painleve)]
        source: Source,
        #[arg(long, default_value_t = gapref::DEFAULT_S_MAX)]
        s_max: f64,
        #[arg(long, default_value_t = gapref::DEFAULT_POINTS)]
        points: usize,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite; exits nonzero if any check fails.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Painleve,
    Fredholm,
    Surmise,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("rmtq: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> rmtq::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
            paper_scale,
            dry_run,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let opts = RunOptions {
                seed,
                threads,
                paper_scale,
            };
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.kind.as_str())));
            if dry_run {
                let (resolved, seed) = prepare(&cfg, &opts)?;
                print!("{}", format_schedule(&resolved, seed));
                println!("  output {}", out.display());
                return Ok(ExitCode::SUCCESS);
            }
            let result = run_experiment(&cfg, &opts)?;
            write_outputs(&result, &out)?;
            let rows = &result.meta.rows;
            eprintln!(
                "wrote {} ({} rows, {} skipped of {} scheduled)",
                out.display(),
                rows.emitted,
                rows.skipped,
                rows.scheduled
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Ref {
            beta,
            source,
            s_max,
            points,
            out,
        } => {
            let table = match source {
                Source::Painleve => gapref::painleve_reference(beta, s_max, points)?,
                Source::Fredholm => {
                    if beta != 2 {
                        return Err(rmtq::Error::InvalidInput(
                            "the determinant oracle covers beta = 2 only".into(),
                        ));
                    }
                    gapref::fredholm_p2_oracle(&gapref::uniform_grid(s_max, points), 60)?
                }
                Source::Surmise => gapref::wigner_surmise(beta, &gapref::uniform_grid(s_max, points))?,
            };
            match out {
                Some(path) => table.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    table.write_csv(&mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let results = run_checks()?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {} failed", results.len(), failed);
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
