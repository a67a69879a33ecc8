use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leakaudit::config::{AuditConfig, Overrides};
use leakaudit::pipeline::{cmd_attack, cmd_report, cmd_synth, cmd_train, AttackName, TrainTarget};
use leakaudit::scorer::{serve, ScorerHandle, ToyScorer};
use leakaudit::{Error, Result};

#[derive(Parser)]
#[command(name = "leakaudit", version, about = "Name/condition leakage audits for masked language models")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `toy` or `remote:<url>`.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus variants, patient table, labels and statistics.
    Synth,
    /// Train toy models and/or static embeddings on the corpus variants.
    Train {
        /// toy, embeddings or all
        #[arg(default_value = "all")]
        target: String,
    },
    /// Run one attack: fib, prior, probe, per-condition, name-probe, cosine,
    /// name-part, generate, or all.
    Attack { name: String },
    /// Consolidate the per-attack reports.
    Report,
    /// Serve a trained toy model over the HTTP scoring protocol.
    Serve {
        /// Toy model artifact.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Serve { model, addr, threads } = &cli.command {
        let toy = ToyScorer::load(model)?;
        let bridge = serve(ScorerHandle::new(toy), addr, *threads)?;
        println!("serving on {}", bridge.url());
        bridge.join();
        return Ok(());
    }
    let config = AuditConfig::resolve(
        cli.config.as_deref(),
        &Overrides {
            seed: cli.seed,
            out: cli.out.clone(),
            scorer: cli.scorer.clone(),
        },
    )?;
    match cli.command {
        Command::Synth => {
            let stats = cmd_synth(&config)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train { target } => {
            let manifest = cmd_train(&config, target.parse::<TrainTarget>()?)?;
            for (name, sum) in manifest {
                println!("{sum}  {name}");
            }
        }
        Command::Attack { name } => {
            let attack: AttackName = name.parse()?;
            for report in cmd_attack(&config, attack)? {
                print!("{}", report.to_csv());
            }
        }
        Command::Report => {
            print!("{}", cmd_report(&config)?.to_csv());
        }
        Command::Serve { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
