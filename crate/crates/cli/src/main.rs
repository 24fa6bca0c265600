use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use flexsim_core::goose::MulticastConfig;
use flexsim_core::harness::{goose_dump, run_scenario, verify_ledger, RunConfig};

#[derive(Parser)]
#[command(name = "flexsim", version, about = "Residential flexibility co-simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write steps.csv and metrics.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a ledger log block by block.
    VerifyLedger { file: PathBuf },
    /// Print every GOOSE frame seen on a multicast group.
    GooseDump {
        #[arg(long, default_value = "239.61.8.50")]
        group: Ipv4Addr,
        #[arg(long, default_value_t = 10285)]
        port: u16,
        /// Seconds to listen.
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value = "127.0.0.1")]
        interface: Ipv4Addr,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(1))
}

fn run(config: PathBuf, out: PathBuf) -> ExitCode {
    let result = RunConfig::load(&config).and_then(|cfg| run_scenario(&cfg, Some(&out)));
    match result {
        Ok(outcome) => {
            let m = &outcome.metrics;
            println!(
                "{} steps, energy error {:.6} kWh, injected {:.6} kWh, absorbed {:.6} kWh, switch on {} s",
                m.steps, m.energy_error_kwh, m.injected_kwh, m.absorbed_kwh, m.switch_on_seconds
            );
            println!("results in {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            code(e.exit_code())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => run(config, out),
        Command::VerifyLedger { file } => {
            let mut stdout = io::stdout().lock();
            match verify_ledger(&file, &mut stdout) {
                Ok(status) => code(status.exit_code()),
                Err(e) => {
                    eprintln!("error: {e}");
                    code(2)
                }
            }
        }
        Command::GooseDump {
            group,
            port,
            duration,
            interface,
        } => {
            if !(duration >= 0.0 && duration.is_finite()) {
                eprintln!("error: --duration must be a non-negative number of seconds");
                return code(2);
            }
            let cfg = MulticastConfig { group, port, interface };
            let mut stdout = io::stdout().lock();
            match goose_dump(&cfg, Duration::from_secs_f64(duration), &mut stdout) {
                Ok(s) => {
                    let _ = stdout.flush();
                    eprintln!("{} frames, {} undecodable", s.frames, s.decode_errors);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(1)
                }
            }
        }
    }
}
