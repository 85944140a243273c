use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use geoar_cli::{compare_files, load_config, run, write_artifacts, Transport};
use geoar_core::eval::{replay_fixture, DEFAULT_SCENARIO_TOML};
use geoar_relay::live::{run_live, LiveOptions};

/// Drive/pause evaluation of overlay tracking accuracy.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run a scenario and write report.txt, samples.csv, summary.csv and overlay.csv.
    Run {
        /// Scenario file (TOML). The built-in default scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Send positions through a running relay instead of in-process.
        #[arg(long, conflicts_with = "via_relay")]
        relay: Option<SocketAddr>,
        /// Start a loopback relay for this run and send positions through it.
        #[arg(long)]
        via_relay: bool,
        /// Pacing for relay runs, relative to real time.
        #[arg(long, default_value_t = 1.0)]
        speedup: f64,
    },
    /// Print the report of the embedded field-trial values.
    Fixture,
    /// Compare two samples CSV files; exits 1 when they differ.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Print the built-in default scenario file.
    DefaultConfig,
    /// Run a live vehicle and display against a relay, driven by console
    /// commands, until interrupted.
    Live {
        #[arg(long)]
        relay: SocketAddr,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[tokio::main]
async fn main() -> Result<ExitCode> {
    geoar_cli::init_logging();
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            seed,
            out,
            relay,
            via_relay,
            speedup,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let transport = match (relay, via_relay) {
                (Some(addr), _) => Transport::Relay { addr, speedup },
                (None, true) => Transport::LocalRelay { speedup },
                (None, false) => Transport::InProcess,
            };
            let output = run(&cfg, &transport).await?;
            print!("{}", output.report);
            for p in write_artifacts(&out, &output)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Cmd::Fixture => print!("{}", replay_fixture()),
        Cmd::Compare { a, b } => {
            let report = compare_files(&a, &b)?;
            print!("{report}");
            if !report.is_identical() {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::DefaultConfig => print!("{DEFAULT_SCENARIO_TOML}"),
        Cmd::Live { relay, config, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let summary = run_live(&cfg, relay, &LiveOptions::real_time(&cfg), async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
            eprintln!("live: {} steps, {} samples", summary.steps, summary.samples.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}
