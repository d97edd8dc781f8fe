use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coda_pcor::error::{Error, ErrorKind};
use coda_pcor::report::{analyze, render_json, render_text, write_csv, AnalysisConfig, OutputFormat};
use coda_pcor::selfcheck::{run_selfcheck, SelfCheckConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_INGESTION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_SELFCHECK: u8 = 5;

/// Reference-free partial variances and partial correlations for
/// compositional data.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyse a CSV of compositions (one sample per row, header of labels).
    Analyze(AnalyzeArgs),
    /// Run the numerical identities on seeded synthetic data.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV file.
    input: Option<PathBuf>,
    /// Flat `key = value` file with any of the options below; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated column labels to analyse (default: all columns).
    #[arg(long)]
    columns: Option<String>,
    /// Reference part label for the alr columns of the part table.
    #[arg(long = "ref")]
    reference: Option<String>,
    /// Number of randomizations.
    #[arg(long)]
    permutations: Option<String>,
    /// Seed of the permutation generator.
    #[arg(long)]
    seed: Option<String>,
    /// Step of the cutoff grid.
    #[arg(long)]
    step: Option<String>,
    /// Shrinkage intensity in [0, 1] applied to the alr covariance.
    #[arg(long)]
    shrinkage: Option<String>,
    /// R² formula for the clr coordinates: uncorrected or corrected.
    #[arg(long = "r2-variant")]
    r2_variant: Option<String>,
    /// What the randomizations shuffle: columns or residuals.
    #[arg(long = "permute-mode")]
    permute_mode: Option<String>,
    /// Output format: text, csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Number of pairs in the partial-correlation table.
    #[arg(long = "top-k")]
    top_k: Option<String>,
    /// Covariance divisor: n-1 or n.
    #[arg(long)]
    divisor: Option<String>,
    /// Replace zero cells by this value instead of rejecting them.
    #[arg(long)]
    pseudocount: Option<String>,
    /// Average weight column: arithmetic or geometric.
    #[arg(long)]
    average: Option<String>,
    /// Output file (text, json) or file prefix (csv).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    parts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Perturb the clr covariance so that the symmetry check fails.
    #[arg(long)]
    corrupt: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Ingestion => EXIT_INGESTION,
        ErrorKind::Numerical => EXIT_NUMERICAL,
        ErrorKind::Config => EXIT_CONFIG,
    }
}

fn build_config(args: AnalyzeArgs) -> Result<AnalysisConfig, Error> {
    let mut config = AnalysisConfig::new(PathBuf::new());
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        config.apply_config_text(&text)?;
    }
    let flags = [
        ("columns", args.columns),
        ("ref", args.reference),
        ("permutations", args.permutations),
        ("seed", args.seed),
        ("step", args.step),
        ("shrinkage", args.shrinkage),
        ("r2-variant", args.r2_variant),
        ("permute-mode", args.permute_mode),
        ("format", args.format),
        ("top-k", args.top_k),
        ("divisor", args.divisor),
        ("pseudocount", args.pseudocount),
        ("average", args.average),
    ];
    for (key, value) in flags {
        if let Some(value) = value {
            config
                .set(key, &value)
                .map_err(|e| e.context(format!("--{key}")))?;
        }
    }
    if let Some(input) = args.input {
        config.input = input;
    }
    if let Some(output) = args.output {
        config.output = Some(output);
    }
    if config.input.as_os_str().is_empty() {
        return Err(Error::InvalidConfig(
            "no input file given (positional argument or `input` in the config file)".into(),
        ));
    }
    Ok(config)
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let config = build_config(args)?;
    let report = analyze(&config)?;
    for w in &report.metadata.warnings {
        eprintln!("warning: {w}");
    }
    let emit = |text: String| -> Result<(), Error> {
        match &config.output {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| Error::from(e).context(format!("writing {}", path.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    };
    match config.format {
        OutputFormat::Text => emit(render_text(&report)),
        OutputFormat::Json => emit(render_json(&report) + "\n"),
        OutputFormat::Csv => {
            let prefix = config.output.clone().unwrap_or_else(|| PathBuf::from("report"));
            let (a, b) = write_csv(&report, &prefix)?;
            println!("{}\n{}", a.display(), b.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze(args) => match run_analyze(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
        Command::Selfcheck(args) => {
            let config = SelfCheckConfig {
                n_samples: args.samples,
                n_parts: args.parts,
                seed: args.seed,
                corrupt_gamma: args.corrupt,
            };
            match run_selfcheck(config) {
                Ok(report) => {
                    if args.json {
                        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
                    } else {
                        print!("{}", report.render_text());
                    }
                    if report.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_SELFCHECK)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
    }
}
