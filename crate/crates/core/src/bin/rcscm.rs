use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rcscm::bench::{with_threads, BenchConfig};
use rcscm::commands::{cmd_bench, cmd_extract, cmd_synth, cmd_verify};
use rcscm::config::{Overrides, RunConfig};
use rcscm::io::WavFormat;
use rcscm::solver::Backend;
use rcscm::verify::VerifyConfig;
use rcscm::Error;

/// Directional speech extraction with a rank-constrained spatial covariance model.
///
/// Exit status: 0 success, 1 verification failure, 2 invalid input, 3 numerical failure.
#[derive(Parser)]
#[command(name = "rcscm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<Backend>,
    /// Zero-based ILRMA output to treat as the target.
    #[arg(long, global = true)]
    target_index: Option<usize>,
    /// EM iterations.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    ilrma_iters: Option<usize>,
    /// NMF bases per source.
    #[arg(long, global = true)]
    bases: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// pcm16 or float32.
    #[arg(long, global = true, value_parser = parse_format)]
    wav_format: Option<WavFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scenario to WAV.
    Synth {
        /// Scenario TOML; the built-in default scenario when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Extract the directional target from a mixture.
    Extract {
        /// Multichannel mixture WAV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Ground-truth target image WAV for SI-SDR.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Resume from a saved ILRMA stage.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check that all backends follow the same trajectory.
    Verify {
        /// Two-microphone grid only.
        #[arg(long)]
        minimal: bool,
        /// Iterations per instance.
        #[arg(long, default_value_t = 50)]
        verify_iters: usize,
        #[arg(long, hide = true)]
        gamma_fault: Option<f64>,
    },
    /// Time the backends.
    Bench {
        /// Measured samples per backend and shape.
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Microphone counts of the sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        mics: Option<Vec<usize>>,
    },
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<WavFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn run(cli: Cli) -> rcscm::Result<bool> {
    let c = &cli.common;
    let mut overrides = Overrides {
        out: c.out.clone(),
        ilrma_iters: c.ilrma_iters,
        rcscm_iters: c.iters,
        bases: c.bases,
        alpha: c.alpha,
        beta: c.beta,
        backend: c.backend,
        target_index: c.target_index,
        seed: c.seed,
        threads: c.threads,
        wav_format: c.wav_format,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Synth { scenario } => overrides.scenario = scenario.clone(),
        Command::Extract { input, reference, checkpoint } => {
            overrides.input = input.clone();
            overrides.reference = reference.clone();
            overrides.checkpoint = checkpoint.clone();
        }
        _ => {}
    }
    let config = RunConfig::resolve(c.config.as_deref(), &overrides)?;
    let seed_flag = c.seed;
    with_threads(config.threads, move || match cli.command {
        Command::Synth { .. } => {
            let m = cmd_synth(&config, seed_flag)?;
            println!(
                "wrote {} channels x {} samples to {}",
                m.mixture.num_channels(),
                m.mixture.len(),
                config.out.display()
            );
            Ok(true)
        }
        Command::Extract { .. } => {
            let m = cmd_extract(&config)?;
            println!("target output {}, {} iterations of {}", m.target_index, m.rcscm_iters, m.backend);
            if let (Some(a), Some(b)) = (m.objective_initial, m.objective_final) {
                println!("objective {a:.6e} -> {b:.6e}");
            }
            if let Some(q) = &m.quality {
                println!(
                    "SI-SDR mixture {:.2} dB, extracted {:.2} dB, improvement {:.2} dB",
                    q.mixture_si_sdr, q.extracted_si_sdr, q.improvement_db
                );
            }
            if let Some(b) = m.baseline_si_sdr {
                println!("SI-SDR at the initial parameters {b:.2} dB");
            }
            println!("outputs in {}", config.out.display());
            Ok(true)
        }
        Command::Verify { minimal, verify_iters, gamma_fault } => {
            let base = if minimal { VerifyConfig::minimal() } else { VerifyConfig::default() };
            let report = cmd_verify(&config, &VerifyConfig { iters: verify_iters, gamma_fault, ..base })?;
            print!("{}", report.table());
            println!(
                "{}: max relative divergence {:.2e} over {} instances (tolerance {:.0e})",
                if report.passed { "PASS" } else { "FAIL" },
                report.max_rel(),
                report.instances.len(),
                report.tol
            );
            Ok(report.passed)
        }
        Command::Bench { samples, warmup, mics } => {
            let bench = BenchConfig { samples, warmup, ..BenchConfig::default() };
            let summary = cmd_bench(&config, &bench, mics.as_deref())?;
            print!("{}", summary.report.table());
            if let Some(r) = summary.reference_shape_speedup {
                println!("reference shape speedup naive/accel2: {r:.1}x");
            }
            Ok(true)
        }
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
