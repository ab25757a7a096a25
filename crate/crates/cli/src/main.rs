//! `daglattice`: score, infer, decode and benchmark lattice files.
//!
//! Every command prints one JSON object to stdout; diagnostics go to stderr.
//! Vertex indices in the output are 1-based.

mod commands;
mod inputs;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use daglattice::LengthSelect;

use crate::report::Failure;

#[derive(Parser)]
#[command(
    name = "daglattice",
    version,
    about = "Dynamic programming over directed-acyclic token lattices"
)]
struct Cli {
    /// Pretty-print the JSON report.
    #[arg(long, global = true)]
    pretty: bool,

    /// Leave timing fields out of the report so runs compare byte for byte.
    #[arg(long, global = true)]
    no_timing: bool,

    /// Accept lattices that fail validation.
    #[arg(long, global = true)]
    skip_validation: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct LatticeTarget {
    /// Lattice file (`.json`, otherwise binary).
    #[arg(long)]
    pub lattice: PathBuf,
    /// JSON array of token ids.
    #[arg(long)]
    pub target: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Strategy {
    Lookahead,
    Viterbi,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LengthRule {
    Raw,
    Normalized,
}

impl From<LengthRule> for LengthSelect {
    fn from(rule: LengthRule) -> Self {
        match rule {
            LengthRule::Raw => LengthSelect::Raw,
            LengthRule::Normalized => LengthSelect::Normalized,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OracleMode {
    Logprob,
    Posterior,
    Argmax,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StateSource {
    /// Posterior-weighted hidden states.
    Expected,
    /// Hidden states along the best path.
    Best,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FileFormat {
    Json,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Check lattice invariants.
    Validate {
        #[arg(long)]
        lattice: PathBuf,
    },
    /// Write a random valid lattice (and optionally a random target).
    Generate {
        #[arg(long)]
        graph_size: usize,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0)]
        hidden_dim: usize,
        #[arg(long, env = "DAGLATTICE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output file extension.
        #[arg(long, value_enum)]
        format: Option<FileFormat>,
        #[arg(long, requires = "target_out")]
        target_len: Option<usize>,
        #[arg(long, requires = "target_len")]
        target_out: Option<PathBuf>,
    },
    /// Negative log-likelihood of the target.
    Score(LatticeTarget),
    /// Vertex posteriors given the target.
    Posterior {
        #[command(flatten)]
        io: LatticeTarget,
        /// Also emit pairwise edge posteriors.
        #[arg(long)]
        pairwise: bool,
    },
    /// Posterior-weighted hidden states.
    Expect(LatticeTarget),
    /// Most probable path for the target.
    Bestpath(LatticeTarget),
    /// Best-path alignment with a random revealed subset.
    Glance {
        #[command(flatten)]
        io: LatticeTarget,
        #[arg(long)]
        tau: f64,
        #[arg(long, env = "DAGLATTICE_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Unmasking ratio at a training step under linear annealing.
    TauSchedule {
        #[arg(long)]
        step: u64,
        #[arg(long)]
        total_steps: u64,
        #[arg(long, default_value_t = 0.5)]
        tau_start: f64,
        #[arg(long, default_value_t = 0.1)]
        tau_end: f64,
    },
    /// Decode a path and tokens without a target.
    Decode {
        #[arg(long)]
        lattice: PathBuf,
        #[arg(long, value_enum)]
        strategy: Strategy,
        #[arg(long, value_enum, default_value = "normalized")]
        length_select: LengthRule,
        /// Lookahead step limit (defaults to the graph size).
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Expand token states to frames and compute the combined loss.
    Pipeline {
        #[command(flatten)]
        io: LatticeTarget,
        /// JSON array of frames per target token.
        #[arg(long)]
        durations: PathBuf,
        #[arg(long, value_enum, default_value = "expected")]
        states: StateSource,
        /// Predicted and ground-truth acoustic features.
        #[arg(long)]
        tts: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        mu: f64,
    },
    /// Compare the analytic NLL gradient with central finite differences.
    Gradcheck {
        #[command(flatten)]
        io: LatticeTarget,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Exhaustive path enumeration for small lattices.
    Oracle {
        #[arg(long)]
        lattice: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: OracleMode,
        /// Path length for greedy-token argmax when no target is given.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value_t = daglattice::oracle::DEFAULT_CAP)]
        cap: usize,
    },
    /// Forward-pass runtime across graph sizes.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        target_len: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 32)]
        vocab_size: usize,
        #[arg(long, env = "DAGLATTICE_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: &Cli) -> Result<report::RunReport, Failure> {
    let skip = cli.skip_validation;
    match &cli.command {
        Command::Validate { lattice } => commands::validate(lattice),
        Command::Generate {
            graph_size,
            vocab_size,
            hidden_dim,
            seed,
            out,
            format,
            target_len,
            target_out,
        } => commands::generate(
            *graph_size,
            *vocab_size,
            *hidden_dim,
            *seed,
            out,
            *format,
            target_len.zip(target_out.as_deref()),
        ),
        Command::Score(io) => commands::score(io, skip),
        Command::Posterior { io, pairwise } => commands::posterior(io, *pairwise, skip),
        Command::Expect(io) => commands::expect(io, skip),
        Command::Bestpath(io) => commands::bestpath(io, skip),
        Command::Glance { io, tau, seed } => commands::glance(io, *tau, *seed, skip),
        Command::TauSchedule {
            step,
            total_steps,
            tau_start,
            tau_end,
        } => commands::tau_schedule(*step, *total_steps, *tau_start, *tau_end),
        Command::Decode {
            lattice,
            strategy,
            length_select,
            max_steps,
        } => commands::decode(lattice, *strategy, (*length_select).into(), *max_steps, skip),
        Command::Pipeline {
            io,
            durations,
            states,
            tts,
            mu,
        } => commands::pipeline(io, durations, *states, tts.as_deref(), *mu, skip),
        Command::Gradcheck { io, step, tolerance } => commands::gradcheck(io, *step, *tolerance, skip),
        Command::Oracle {
            lattice,
            target,
            mode,
            length,
            cap,
        } => commands::oracle(lattice, target.as_deref(), *mode, *length, *cap, skip),
        Command::Bench {
            sizes,
            target_len,
            repeats,
            vocab_size,
            seed,
        } => commands::bench(sizes, *target_len, *repeats, *vocab_size, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let finish = |mut report: report::RunReport| {
        if !cli.no_timing {
            report.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        }
        println!("{}", report.render(cli.pretty));
    };
    match run(&cli) {
        Ok(report) => {
            finish(report);
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            if let Some(report) = failure.report {
                finish(*report);
            }
            ExitCode::from(failure.code)
        }
    }
}
