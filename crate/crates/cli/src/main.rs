use std::path::PathBuf;
use std::process::ExitCode;

use bpgo::harness::{self, ExperimentConfig, TableFormat, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK};
use clap::{Parser, Subcommand, ValueEnum};

/// Prior-guided group-relative policy optimization experiments.
#[derive(Debug, Parser)]
#[command(name = "bpgo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configuration into a fresh run directory.
    Run {
        config: PathBuf,
        /// `dotted.path=value` overrides applied on top of the config file.
        overrides: Vec<String>,
    },
    /// Train the cross product of the config's `sweep` values and seeds.
    Sweep {
        config: PathBuf,
        overrides: Vec<String>,
    },
    /// Tabulate summary metrics and quality curves of finished runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Write `metrics.<ext>` and `curves.<ext>` here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the on/off and alpha ablation over several seeds and write a CSV table.
    Ablate {
        config: PathBuf,
        overrides: Vec<String>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fully resolved default configuration.
    DefaultConfig,
}

fn fail(err: &bpgo::Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(harness::exit_code(err))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => match harness::run(&config, &overrides, None) {
            Ok((dir, summary)) => {
                println!("{}", dir.display());
                eprintln!(
                    "final true quality {:.4}, auc {:.3}",
                    summary.final_true_quality, summary.auc
                );
                ExitCode::from(EXIT_OK)
            }
            Err(e) => fail(&e),
        },
        Command::Sweep { config, overrides } => match harness::sweep(&config, &overrides, None) {
            Ok(outcome) => {
                println!("{}", outcome.dir.join("sweep.csv").display());
                for row in outcome.rows.iter().filter(|r| r.exit_code != EXIT_OK) {
                    eprintln!("cell {} seed {} exited with {}", row.value, row.seed, row.exit_code);
                }
                ExitCode::from(outcome.exit_code)
            }
            Err(e) => fail(&e),
        },
        Command::Compare { runs, format, out } => {
            let cmp = match harness::compare(&runs) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            let format = TableFormat::from(format);
            let (metrics, curves) = (cmp.render_metrics(format), cmp.render_curves(format));
            match out {
                None => {
                    print!("{metrics}\n{curves}");
                    ExitCode::from(EXIT_OK)
                }
                Some(dir) => {
                    let ext = match format {
                        TableFormat::Csv => "csv",
                        TableFormat::Markdown => "md",
                    };
                    let written = std::fs::create_dir_all(&dir)
                        .and_then(|_| std::fs::write(dir.join(format!("metrics.{ext}")), metrics))
                        .and_then(|_| std::fs::write(dir.join(format!("curves.{ext}")), curves));
                    match written {
                        Ok(()) => ExitCode::from(EXIT_OK),
                        Err(e) => {
                            eprintln!("error: {}: {e}", dir.display());
                            ExitCode::from(EXIT_FAILURE)
                        }
                    }
                }
            }
        }
        Command::Ablate {
            config,
            overrides,
            seeds,
            out,
        } => {
            let cfg = match harness::load_config(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if seeds == 0 {
                eprintln!("error: --seeds must be at least 1");
                return ExitCode::from(EXIT_CONFIG);
            }
            let seed_list: Vec<u64> = (0..seeds).collect();
            let rows = match harness::ablation_suite(&cfg, &seed_list) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            let path = out.unwrap_or_else(|| harness::output_root(&cfg, None).join("ablation.csv"));
            if let Some(parent) = path.parent() {
                if let Err(e) = std::fs::create_dir_all(parent) {
                    eprintln!("error: {}: {e}", parent.display());
                    return ExitCode::from(EXIT_FAILURE);
                }
            }
            match harness::write_csv(&path, &rows) {
                Ok(()) => {
                    println!("{}", path.display());
                    ExitCode::from(EXIT_OK)
                }
                Err(e) => fail(&e),
            }
        }
        Command::DefaultConfig => {
            let text = serde_json_pretty(&ExperimentConfig::default());
            println!("{text}");
            ExitCode::from(EXIT_OK)
        }
    }
}

fn serde_json_pretty(config: &ExperimentConfig) -> String {
    let value = config.to_value();
    format!("{value:#}")
}
