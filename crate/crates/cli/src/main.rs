use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use evalkit::backends::Mode;
use evalkit::fixtures::{self, FixtureOptions};
use evalkit::pipeline::{Overrides, PipelineError, Run, Subcommand};

#[derive(Parser)]
#[command(name = "evalkit", version, about = "Evaluate text-to-image models on quality, realism, coverage and fairness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Backend mode, overriding the config and environment.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Keep only the first N images by sorted image id.
    #[arg(long)]
    limit: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Generate (or replay) the images every stage uses.
    Generate(RunArgs),
    /// Aesthetic score summary.
    Aesthetics(RunArgs),
    /// Face and component defect rates.
    Realism(RunArgs),
    /// Concept coverage and Spearman validation.
    Coverage(RunArgs),
    /// Attribute entropy, bias detection and VQA audit.
    Fairness(RunArgs),
    /// Merge the partial reports in the output directory.
    Report(RunArgs),
    /// Write replay fixtures reproducing the published tables.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        /// Images per coverage concept and fairness prompt.
        #[arg(long, default_value_t = 1000)]
        images: usize,
        /// Models to write (default: all four).
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Coverage concepts to record (default: all 30).
        #[arg(long, value_delimiter = ',')]
        concepts: Vec<String>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: evalkit::backends::BackendError| e.to_string())
}

fn run(command: Command) -> Result<Vec<PathBuf>, PipelineError> {
    let (sub, args) = match command {
        Command::Generate(a) => (Subcommand::Generate, a),
        Command::Aesthetics(a) => (Subcommand::Aesthetics, a),
        Command::Realism(a) => (Subcommand::Realism, a),
        Command::Coverage(a) => (Subcommand::Coverage, a),
        Command::Fairness(a) => (Subcommand::Fairness, a),
        Command::Report(a) => (Subcommand::Report, a),
        Command::Fixtures { out, images, models, concepts } => {
            let mut opts = FixtureOptions { images_per_prompt: images, concepts, ..Default::default() };
            if !models.is_empty() {
                opts.models = models;
            }
            return fixtures::write_reference_fixtures(&out, &opts);
        }
    };
    let overrides = Overrides { mode: args.mode, limit: args.limit, out_dir: args.out };
    let run = Run::from_file(&args.config, |k| std::env::var(k).ok(), &overrides)?;
    run.execute(sub)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
