//! `scoregen` command line: corpus tools and config-driven pipeline stages.

mod artifacts;
mod config;
mod corpus;
mod error;
mod stages;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{load_run_config, Stage};
use error::CliError;

#[derive(Parser)]
#[command(name = "scoregen", version, about = "Symbolic music generation pipeline")]
struct Cli {
    /// Log level filter, e.g. info or debug. RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config file.
    config: PathBuf,
    /// Override a key, e.g. `--set dpo.beta=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AugmentStage {
    Pretrain,
    Finetune,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print one diagnostic per line.
    Validate(ConfigArgs),
    /// Run the stage named by the config's `stage` key.
    Run(ConfigArgs),
    /// Pretrain or fine-tune (stage defaults to finetune).
    Train(ConfigArgs),
    /// Sample pieces for every prompt in the manifest.
    Generate(ConfigArgs),
    /// Iterative generate, score and preference-optimise rounds.
    Dpo(ConfigArgs),
    /// Score generations against the ground-truth prompt profiles.
    Eval(ConfigArgs),
    /// Write the two-prompt, two-style toy corpus with a manifest.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        pieces_per_prompt: usize,
        #[arg(long, default_value_t = 0.75)]
        purity: f64,
        /// Put every n-th piece in the test split; 0 for none.
        #[arg(long, default_value_t = 5)]
        test_every: usize,
    },
    /// Parse and clean raw sheets.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interleave voices, strip rest measures, label bars.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave out the prompt line.
        #[arg(long)]
        no_prompt: bool,
        /// Transpose each piece to a key drawn for this stage.
        #[arg(long, value_enum)]
        transpose: Option<AugmentStage>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the patch dump of one text file.
    Tokenize {
        input: PathBuf,
        #[arg(long, default_value_t = scoregen::patching::DEFAULT_PATCH_SIZE)]
        patch_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate metric files or run directories by iteration.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
    /// Standard MIDI file to an 8-id-per-event token stream.
    MidiEncode {
        input: PathBuf,
        /// Token file to write; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Period prompt id (0-2), framed ahead of the events.
        #[arg(long)]
        period: Option<u8>,
        /// Composer prompt id (0-35).
        #[arg(long)]
        composer: Option<u8>,
    },
    /// Token stream to one decoded event per line.
    MidiDecode { input: PathBuf },
}

fn staged(args: &ConfigArgs, allowed: Option<&[Stage]>) -> Result<(), CliError> {
    let (cfg, mut diags) = load_run_config(&args.config, &args.sets, allowed)?;
    diags.extend(cfg.validate());
    if !diags.is_empty() {
        return Err(CliError::ConfigInvalid(diags));
    }
    log::info!("stage {} -> {}", cfg.stage.name(), cfg.output.display());
    match cfg.stage {
        Stage::Pretrain | Stage::Finetune => stages::run_train(&cfg),
        Stage::Generate => stages::run_generate(&cfg),
        Stage::Dpo => stages::run_dpo(&cfg),
        Stage::Eval => stages::run_eval(&cfg),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(a) => {
            let (cfg, mut diags) = load_run_config(&a.config, &a.sets, None)?;
            diags.extend(cfg.validate());
            for d in &diags {
                println!("{d}");
            }
            if diags.is_empty() {
                Ok(())
            } else {
                Err(CliError::ConfigInvalid(diags))
            }
        }
        Command::Run(a) => staged(&a, None),
        Command::Train(a) => staged(&a, Some(&[Stage::Finetune, Stage::Pretrain])),
        Command::Generate(a) => staged(&a, Some(&[Stage::Generate])),
        Command::Dpo(a) => staged(&a, Some(&[Stage::Dpo])),
        Command::Eval(a) => staged(&a, Some(&[Stage::Eval])),
        Command::SynthCorpus {
            out,
            seed,
            pieces_per_prompt,
            purity,
            test_every,
        } => tools::synth_corpus(&tools::SynthArgs {
            out,
            seed,
            pieces_per_prompt,
            purity,
            test_every,
        }),
        Command::Ingest { manifest, out } => tools::ingest(&manifest, &out),
        Command::Preprocess {
            manifest,
            out,
            no_prompt,
            transpose,
            seed,
        } => tools::preprocess(&tools::PreprocessArgs {
            manifest,
            out,
            prompt: !no_prompt,
            transpose: transpose.map(|t| match t {
                AugmentStage::Pretrain => scoregen::preprocess::Stage::Pretrain,
                AugmentStage::Finetune => scoregen::preprocess::Stage::Finetune,
            }),
            seed,
        }),
        Command::Tokenize { input, patch_size, out } => tools::tokenize_file(&input, patch_size, out.as_deref()),
        Command::Report { inputs, csv } => {
            print!("{}", tools::report(&inputs, csv)?);
            Ok(())
        }
        Command::MidiEncode {
            input,
            out,
            period,
            composer,
        } => tools::midi_encode(&input, out.as_deref(), period, composer),
        Command::MidiDecode { input } => {
            print!("{}", tools::midi_decode(&input)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
