//! `rtvc`: offline conversion, enrollment, streaming self-test, latency
//! benchmark, noise sweep, vocoder probes and the streaming server.
//!
//! Exit codes: 0 ok, 1 internal error, 2 bad input or usage, 3 missed
//! real-time deadline, 4 streaming/offline mismatch.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rtvc", version, about = "Real-time articulatory voice conversion")]
struct Cli {
    /// Pipeline config (JSON). Defaults apply when absent.
    #[arg(long, global = true, env = "RTVC_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Default, Args)]
struct SpeakerArgs {
    /// SPKE file, or a speaker id when --catalog is given.
    #[arg(long)]
    speaker: Option<String>,
    /// Speaker catalog (JSON) to resolve --speaker ids against.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Target median f0 in Hz for SPKE files (default: the config's default median).
    #[arg(long, value_parser = positive_f64)]
    target_median: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a WAV file offline.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        speaker: SpeakerArgs,
    },
    /// Enroll a speaker from a WAV file of at least one second.
    Enroll {
        #[arg(long = "in")]
        input: PathBuf,
        /// Where to write the SPKE embedding.
        #[arg(long)]
        out: PathBuf,
        /// Speaker id (default: the output file stem).
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        name: Option<String>,
        /// Add the speaker to this catalog, creating it if needed.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Compare chunked streaming against offline conversion.
    StreamSim {
        /// Input WAV; random audio when absent.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0, value_parser = positive_f64)]
        random_seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "15,30,45", value_parser = clap::value_parser!(u32).range(1..))]
        chunk_ms: Vec<u32>,
        #[arg(long, default_value_t = 1e-4, value_parser = positive_f64)]
        tolerance: f64,
        #[command(flatten)]
        speaker: SpeakerArgs,
        /// Negative control: perturb the streaming state mid-run.
        #[arg(long, hide = true)]
        corrupt_ring_buffer: bool,
    },
    /// Measure per-chunk processing time and end-to-end latency.
    Bench {
        /// Seconds of audio to stream through the pipeline.
        #[arg(long, default_value_t = 10.0, value_parser = positive_f64)]
        seconds: f64,
        /// Replace the pipeline with a stub that takes this long per chunk.
        #[arg(long, value_parser = non_negative_f64)]
        mock_processing_ms: Option<f64>,
        /// Exit 3 unless mean processing is faster than real time.
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sweep coloured noise over SNRs and write metric rows as CSV.
    NoiseEval {
        /// Directory of 16 kHz mono WAV files.
        #[arg(long)]
        dir: PathBuf,
        /// SNRs in dB; `inf` is the clean condition.
        #[arg(long, value_delimiter = ',', default_value = "inf,20,10,0", allow_hyphen_values = true)]
        snr: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "white,pink,brown")]
        colors: Vec<rtvc_core::eval::NoiseColor>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        speaker: SpeakerArgs,
    },
    /// Write a synthetic vocoder test signal.
    SynthProbe {
        #[arg(long, value_enum)]
        kind: ProbeKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200.0, value_parser = positive_f64)]
        f0: f64,
        /// Harmonic number carrying all energy (harmonic probe).
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=60))]
        harmonic: u32,
        #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
        seconds: f64,
        /// Bands passed by the low-pass noise probe, out of 65.
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..65))]
        passband: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the WebSocket conversion server.
    Serve {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
        ttl_s: u64,
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
        max_connections: u64,
        /// Enable POST /enroll.
        #[arg(long)]
        admin: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProbeKind {
    Harmonic,
    NoiseFlat,
    NoiseLowpass,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s}")),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s}")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rtvc: {e}");
            ExitCode::from(e.code())
        }
    }
}
