use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::rngs::OsRng;
use serde_json::json;

use d2dauth::crypto::Seed;
use d2dauth::harness::{run_scenario, run_suite, Scenario, SuiteConfig};
use d2dauth::protocol::{DeviceId, GatewayState, Registry, SessionConfig};
use d2dauth::vectors::golden_vectors_text;

const EXIT_UNEXPECTED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "d2dauth",
    version,
    about = "Edge/gateway continuous-authentication simulator and attack harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print a JSON summary.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Write the JSON-lines transcript here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run every attack listed in a suite config.
    AttackSuite {
        #[arg(long)]
        config: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write the golden test vectors to DIR/vectors.json.
    Vectors {
        #[arg(long)]
        emit: PathBuf,
    },
    /// Add an edge device to a gateway registry file.
    Enroll {
        #[arg(long)]
        registry: PathBuf,
        /// Raw edge identifier, hex.
        #[arg(long)]
        edge_id: String,
        /// 32-byte enrollment seed, hex. Random if omitted.
        #[arg(long)]
        seed: Option<String>,
    },
}

enum Failure {
    Unexpected(String),
    Config(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, transcript } => simulate(scenario, transcript),
        Command::AttackSuite { config, report } => attack_suite(config, report),
        Command::Vectors { emit } => vectors(emit),
        Command::Enroll {
            registry,
            edge_id,
            seed,
        } => enroll(registry, &edge_id, seed.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unexpected(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_UNEXPECTED)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn simulate(path: PathBuf, transcript: Option<PathBuf>) -> Result<(), Failure> {
    let scenario = Scenario::load(&path).map_err(Failure::config)?;
    let run = run_scenario(&scenario).map_err(Failure::config)?;
    if let Some(out) = transcript {
        run.transcript()
            .write_to(&out)
            .map_err(|e| Failure::config(format!("cannot write {}: {e}", out.display())))?;
    }
    let summary = json!({
        "scenario_seed": scenario.scenario_seed,
        "stats": run.report.stats,
        "expiries": run.report.expiries,
        "events": run.transcript().len(),
        "verdict": run.verdict,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));

    if let Some(v) = &run.verdict {
        eprintln!("{}", v.summary_line());
        if v.unexpected() {
            return Err(Failure::Unexpected(format!("attack {} succeeded", v.attack.name())));
        }
    }
    if let Some(expected) = scenario.ca_rounds_expected {
        let got = run.report.stats.ca_rounds;
        if got != expected {
            return Err(Failure::Unexpected(format!(
                "expected {expected} CA rounds, observed {got}"
            )));
        }
    }
    Ok(())
}

fn attack_suite(path: PathBuf, report_path: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = SuiteConfig::load(&path).map_err(Failure::config)?;
    let report = run_suite(&cfg).map_err(Failure::config)?;
    for v in &report.verdicts {
        println!("{}", v.summary_line());
        for note in &v.notes {
            println!("    {note}");
        }
    }
    println!(
        "scenarios={} rejected={} residual_risk={} unexpected={} prediction_mismatches={}",
        report.scenarios_executed, report.rejected, report.residual, report.unexpected, report.prediction_mismatches
    );
    if let Some(out) = report_path {
        let text = serde_json::to_string_pretty(&report).expect("json");
        fs::write(&out, text).map_err(|e| Failure::config(format!("cannot write {}: {e}", out.display())))?;
    }
    if report.any_unexpected() {
        return Err(Failure::Unexpected(format!(
            "{} attack(s) unexpectedly succeeded",
            report.unexpected
        )));
    }
    Ok(())
}

fn vectors(dir: PathBuf) -> Result<(), Failure> {
    fs::create_dir_all(&dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    let out = dir.join("vectors.json");
    fs::write(&out, golden_vectors_text())
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", out.display())))?;
    println!("{}", out.display());
    Ok(())
}

fn enroll(path: PathBuf, edge_id: &str, seed: Option<&str>) -> Result<(), Failure> {
    let raw = hex::decode(edge_id).map_err(|e| Failure::config(format!("--edge-id: {e}")))?;
    if raw.is_empty() {
        return Err(Failure::config("--edge-id must not be empty"));
    }
    let seed = match seed {
        Some(s) => {
            let bytes = hex::decode(s).map_err(|e| Failure::config(format!("--seed: {e}")))?;
            let arr: [u8; 32] = bytes
                .try_into()
                .map_err(|_| Failure::config("--seed must be 32 bytes of hex"))?;
            Seed::new(arr)
        }
        None => Seed::random(&mut OsRng),
    };
    let registry = Registry::load(&path).map_err(Failure::config)?;
    // The gateway's own identity plays no part in enrollment.
    let mut gw = GatewayState::with_registry(DeviceId::new(Vec::new()), SessionConfig::default(), registry);
    let edge = DeviceId::new(raw);
    let entry = gw.enroll_record(&edge, seed).map_err(Failure::config)?;
    gw.registry().save(&path).map_err(Failure::config)?;
    let out = json!({
        "edge_id_hash": edge.id_hash().to_hex(),
        "e_init": entry.e_init.to_hex(),
        "seed": hex::encode(entry.seed.bytes()),
        "draw_index": entry.seed.draw_index(),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}
