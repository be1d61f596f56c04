use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use irs_crb::crb::BaselineValue;
use irs_crb::experiment::check::run_checks;
use irs_crb::experiment::plan::{run_plan, run_schemes, ExperimentPlan, Scheme};
use irs_crb::experiment::ScenarioFile;
use irs_crb::{Error, Network};

#[derive(Parser)]
#[command(name = "irs-crb", version, about = "CRB-optimal beamforming for IRS-aided target localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and print a JSON report.
    Solve {
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "two-stage")]
        scheme: Scheme,
        /// Also evaluate the other schemes and attach them as baselines.
        #[arg(long)]
        baselines: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep plan and write its CSV table.
    Sweep {
        plan: PathBuf,
        /// Overrides the plan's first seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the plan's scheme list; may be repeated.
        #[arg(long)]
        scheme: Vec<Scheme>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Solve a scenario and run the oracle and invariant checks on it.
    Check {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "two-stage")]
        scheme: Scheme,
        /// Write the check results as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Configuration problems exit with 2, everything else that fails with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidScenario(_) | Error::GenerationRejected(_)) => 2,
        _ => 1,
    }
}

fn load_network(path: &PathBuf, seed: Option<u64>) -> anyhow::Result<Network> {
    let file = ScenarioFile::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })?;
    Ok(Network::new(file.build(seed)?)?)
}

fn write_output(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Solve { scenario, seed, scheme, baselines, out } => {
            let network = load_network(&scenario, seed)?;
            let schemes: Vec<Scheme> = if baselines {
                std::iter::once(scheme).chain(Scheme::ALL.into_iter().filter(|&s| s != scheme)).collect()
            } else {
                vec![scheme]
            };
            let mut results = run_schemes(&network, &schemes).into_iter();
            let (_, main, _) = results.next().expect("one scheme requested");
            let mut report = main.map_err(|e| anyhow::anyhow!("{scheme} failed: {e}"))?;
            for (s, r, _) in results {
                match r {
                    Ok(r) => report.baselines.push(BaselineValue { scheme: s.to_string(), worst_crb: r.worst_crb }),
                    Err(e) => log::warn!("baseline {s} failed: {e}"),
                }
            }
            write_output(out.as_ref(), &serde_json::to_string_pretty(&report)?)?;
            Ok(0)
        }
        Command::Sweep { plan, seed, out, scheme, trials } => {
            let text = std::fs::read_to_string(&plan)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", plan.display())))?;
            let mut plan = ExperimentPlan::from_toml(&text)?;
            if let Some(s) = seed {
                plan.first_seed = s;
            }
            if let Some(o) = out {
                plan.out = o;
            }
            if !scheme.is_empty() {
                plan.schemes = scheme;
            }
            if let Some(t) = trials {
                plan.trials = t;
            }
            plan.validate()?;
            let summary = run_plan(&plan)?;
            eprintln!("wrote {} rows to {} ({} failed)", summary.rows, plan.out.display(), summary.failures);
            Ok(if summary.failures > 0 { 1 } else { 0 })
        }
        Command::Check { scenario, seed, scheme, out } => {
            let network = load_network(&scenario, seed)?;
            let (_, report, _) = run_schemes(&network, &[scheme]).remove(0);
            let report = report.map_err(|e| anyhow::anyhow!("{scheme} failed: {e}"))?;
            let checks = run_checks(&network, &report);
            for c in &checks {
                eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(p) = out {
                write_output(Some(&p), &serde_json::to_string_pretty(&checks)?)?;
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
