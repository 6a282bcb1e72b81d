use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use instructmpc::config::{load_config, ConfigError};
use instructmpc::verify::{verify_suite, VerifyOptions};
use instructmpc::{adapter_test, experiment, session};
use instructmpc_core::control::DARE_TOL;

#[derive(Parser, Debug)]
#[command(name = "instructmpc", version, about = "Context-driven disturbance prediction for MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every configured variant and seed; write traces and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed index.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Instruction log (JSON lines) replayed over the scripted contexts.
        #[arg(long)]
        instructions: Option<PathBuf>,
    },
    /// Repeat the experiment over values of one config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `KEY=a..b` (inclusive integers) or `KEY=v1,v2,...`; dotted keys
        /// reach into sections, e.g. `learner.diameter=1,2,4`.
        #[arg(long)]
        param: String,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks and print one verdict per line.
    Verify {
        /// Check id (e.g. A7) or part of a check name.
        #[arg(long)]
        filter: Option<String>,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Riccati stopping tolerance for the DARE check.
        #[arg(long, default_value_t = DARE_TOL, hide = true)]
        dare_tol: f64,
    },
    /// Host live sessions over WebSocket.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Check an external predictor against the golden transcripts.
    AdapterTest {
        /// Shell command that starts the predictor.
        #[arg(long)]
        cmd: String,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
}

fn exit_for(err: &anyhow::Error) -> ExitCode {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out, instructions } => {
            let mut cfg = load_config(&config)?;
            if let Some(p) = instructions {
                cfg.instructions = Some(p);
                cfg.validate()?;
            }
            let out = out.unwrap_or_else(|| cfg.out.clone());
            let summary = experiment::run_experiment(&cfg, seed, &out)?;
            for (name, v) in &summary.variants {
                println!("{name:<8} mean cost {:.4} (variance {:.4}, {} seeds)", v.mean, v.variance, v.costs.len());
            }
            for r in &summary.regret {
                println!("seed {:<3} regret {:.4} bound {:.4}", r.seed, r.regret, r.theorem1_rhs);
            }
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, param, seeds, out } => {
            let cfg = load_config(&config)?;
            let out = out.unwrap_or_else(|| cfg.out.join("sweep"));
            let summary = experiment::sweep(&cfg, &param, seeds, &out)?;
            for p in &summary.points {
                let means: Vec<String> = p.means.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                println!("{} {}", p.dir, means.join(" "));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { filter, report, dare_tol } => {
            let result = verify_suite(&VerifyOptions { filter, dare_tol });
            for r in &result.results {
                println!("{}", r.line());
            }
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")?;
            }
            Ok(if result.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Serve { config, port } => {
            let cfg = load_config(&config)?;
            let port = port
                .or(cfg.port)
                .ok_or_else(|| ConfigError::new("port", "give --port or set `port` in the config"))?;
            session::serve(&cfg, port)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::AdapterTest { cmd, timeout_ms } => {
            let results = adapter_test::run_golden(&cmd, Duration::from_millis(timeout_ms));
            for r in &results {
                println!("{} {}", if r.passed { "PASS" } else { "FAIL" }, r.name);
                for f in &r.failures {
                    println!("  {f}");
                }
            }
            Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_for(&e)
        }
    }
}
