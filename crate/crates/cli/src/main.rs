//! `commons`: validate and run scenarios, run named attacks, replay event
//! logs, diff reports and summarize a soul's credentials.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Data goes to
//! stdout, diagnostics to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use commons_core::canonical::hex_digest;
use commons_core::governance::GovernanceMode;
use commons_core::merkle::verify_proof;
use commons_core::reputation::Category;
use commons_core::{Commons, EventLog, SoulId};
use commons_sim::{
    bundled, compare, load_scenario, run, run_attack_flashloan, FlashLoanParams, RunOptions, Scenario, SimError,
    SimReport,
};

#[derive(Parser)]
#[command(name = "commons", version, about = "Scholarly commons simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or `bundled:NAME`) and write its report.
    Run {
        scenario: String,
        #[arg(long, env = "COMMONS_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Replace the scenario's governance mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Check a scenario and print every problem found.
    Validate { scenario: String },
    /// Run a named attack against a fresh ARC.
    Attack {
        name: String,
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        timelock: Switch,
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        snapshot: Switch,
        #[arg(long, default_value_t = commons_sim::scenario::DEFAULT_LOAN)]
        loan: u64,
        #[arg(long, env = "COMMONS_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild state from an event log and print its hash.
    Replay { log: PathBuf },
    /// Compare two reports of the same scenario.
    Diff { a: PathBuf, b: PathBuf },
    /// Summarize a soul's credentials from an event log.
    Report {
        log: PathBuf,
        /// Soul id, as `7` or `soul#7`.
        #[arg(long)]
        soul: String,
        /// Emit a disclosure proof, as `CATEGORY:K`. Repeatable.
        #[arg(long)]
        prove: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bicameral,
    #[value(alias = "token_only")]
    TokenOnly,
}

impl From<Mode> for GovernanceMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Bicameral => GovernanceMode::Bicameral,
            Mode::TokenOnly => GovernanceMode::TokenOnly,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

enum Failure {
    Domain(String),
    Usage(String),
}

type Outcome = Result<(), Failure>;

fn domain(e: impl ToString) -> Failure {
    Failure::Domain(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            format,
            mode,
        } => cmd_run(&scenario, seed, &out, format, mode),
        Cmd::Validate { scenario } => cmd_validate(&scenario),
        Cmd::Attack {
            name,
            timelock,
            snapshot,
            loan,
            seed,
        } => cmd_attack(&name, timelock, snapshot, loan, seed),
        Cmd::Replay { log } => cmd_replay(&log),
        Cmd::Diff { a, b } => cmd_diff(&a, &b),
        Cmd::Report { log, soul, prove } => cmd_report(&log, &soul, &prove),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Domain(format!("cannot read {}: {e}", path.display())))
}

/// Loads `bundled:NAME` or a file path.
fn load(spec: &str) -> Result<Scenario, Failure> {
    let bytes = match spec.strip_prefix("bundled:") {
        Some(name) => bundled::source(name)
            .ok_or_else(|| {
                let known: Vec<&str> = bundled::names().collect();
                Failure::Domain(format!("no bundled scenario {name:?} (known: {})", known.join(", ")))
            })?
            .as_bytes()
            .to_vec(),
        None => read(Path::new(spec))?,
    };
    load_scenario(&bytes).map_err(|e| Failure::Domain(format!("{spec} is invalid:\n{e}")))
}

fn write(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Domain(format!("cannot write {}: {e}", path.display())))
}

fn cmd_run(spec: &str, seed: Option<u64>, out: &Path, format: Format, mode: Option<Mode>) -> Outcome {
    let scenario = load(spec)?;
    let opts = RunOptions {
        seed,
        mode: mode.map(Into::into),
    };
    let result = run(&scenario, &opts).map_err(|e| match e {
        SimError::Load(l) => Failure::Domain(format!("{spec} is invalid:\n{l}")),
        other => domain(other),
    })?;
    fs::create_dir_all(out).map_err(|e| Failure::Domain(format!("cannot create {}: {e}", out.display())))?;
    let r = &result.report;
    let (ext, body) = match format {
        Format::Json => ("json", r.to_json() + "\n"),
        Format::Csv => ("csv", r.to_csv()),
    };
    let report_path = out.join(format!("{}.{ext}", r.scenario));
    let log_path = out.join(format!("{}.events.jsonl", r.scenario));
    write(&report_path, &body)?;
    write(&log_path, &result.commons.log().to_jsonl())?;

    let mut line = format!(
        "scenario={} seed={} mode={} epochs={} events={} proposals={} captures={} failures={}",
        r.scenario,
        r.seed,
        mode_name(r.mode),
        r.series.len(),
        result.commons.log().len(),
        r.proposals.len(),
        r.captures.len(),
        r.failures.len(),
    );
    if let Some(a) = &r.attack {
        line += &format!(" attack={}", a.outcome);
    }
    println!(
        "{line} content_hash={} report={}",
        r.content_hash,
        report_path.display()
    );
    Ok(())
}

fn mode_name(m: GovernanceMode) -> &'static str {
    match m {
        GovernanceMode::Bicameral => "bicameral",
        GovernanceMode::TokenOnly => "token-only",
    }
}

fn cmd_validate(spec: &str) -> Outcome {
    let s = load(spec)?;
    println!(
        "OK {} ({} agents, {} steps, last epoch {})",
        s.name,
        s.agents.len(),
        s.script.len(),
        s.last_epoch()
    );
    Ok(())
}

fn cmd_attack(name: &str, timelock: Switch, snapshot: Switch, loan: u64, seed: u64) -> Outcome {
    if name != "flashloan" {
        return Err(Failure::Usage(format!("unknown attack {name:?} (known: flashloan)")));
    }
    let r = run_attack_flashloan(&FlashLoanParams {
        loan_amount: loan,
        treasury: commons_sim::scenario::DEFAULT_LOAN,
        timelock: timelock == Switch::On,
        snapshot: snapshot == Switch::On,
        seed,
    });
    println!("attack=flashloan result={}", r.outcome);
    println!(
        "loan={} treasury_before={} treasury_after={} treasury_delta={} repaid={} vetoed={}",
        r.loan_amount, r.treasury_before, r.treasury_after, r.treasury_delta, r.repaid, r.vetoed
    );
    Ok(())
}

fn replay(path: &Path) -> Result<Commons, Failure> {
    let bytes = read(path)?;
    let records = EventLog::parse_jsonl(&bytes).map_err(domain)?;
    Commons::replay(&records).map_err(domain)
}

fn cmd_replay(path: &Path) -> Outcome {
    let c = replay(path)?;
    println!(
        "state_hash={} events={} epoch={}",
        hex_digest(&c.state_hash()),
        c.log().len(),
        c.now()
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<SimReport, Failure> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::Domain(format!("{} is not UTF-8", path.display())))?;
    SimReport::from_json(&text).map_err(|e| Failure::Domain(format!("{} is not a report: {e}", path.display())))
}

fn cmd_diff(a: &Path, b: &Path) -> Outcome {
    let d = compare(&read_report(a)?, &read_report(b)?).map_err(domain)?;
    print!("{d}");
    Ok(())
}

fn parse_soul(s: &str) -> Result<SoulId, Failure> {
    s.strip_prefix("soul#")
        .unwrap_or(s)
        .parse()
        .map(SoulId)
        .map_err(|_| Failure::Usage(format!("bad soul id {s:?}")))
}

fn parse_claim(s: &str) -> Result<(Category, usize), Failure> {
    let bad = || Failure::Usage(format!("bad proof request {s:?}, expected CATEGORY:K"));
    let (cat, k) = s.split_once(':').ok_or_else(bad)?;
    let cat = Category::ALL
        .into_iter()
        .find(|c| c.as_str().eq_ignore_ascii_case(cat))
        .ok_or_else(bad)?;
    Ok((cat, k.parse().map_err(|_| bad())?))
}

fn cmd_report(log: &Path, soul: &str, prove: &[String]) -> Outcome {
    let id = parse_soul(soul)?;
    let claims = prove.iter().map(|p| parse_claim(p)).collect::<Result<Vec<_>, _>>()?;
    let c = replay(log)?;
    let s = c.soul(id).map_err(domain)?;
    println!("soul={id} balance={} free={}", s.balance, s.free());
    println!("reputation={}", c.reputation_score(id).map_err(domain)?);
    println!(
        "commitment_root={}",
        hex_digest(&c.commit_metadata(id).map_err(domain)?)
    );
    let sbts: Vec<_> = c.sbts_of(id).collect();
    println!("credentials={}", sbts.len());
    for cat in Category::ALL {
        let n = sbts.iter().filter(|x| x.category == cat && x.status.counts()).count();
        if n > 0 {
            println!("  {cat}: {n}");
        }
    }
    for x in &sbts {
        println!(
            "  {} {} {:?} issued={} issuer={} commitment={}",
            x.id,
            x.category,
            x.status,
            x.issued_epoch,
            x.issuer,
            hex_digest(&x.commitment)
        );
    }
    for (cat, k) in claims {
        let proof = c.prove_count_at_least(id, cat, k).map_err(domain)?;
        let root = c.commit_metadata(id).map_err(domain)?;
        println!("proof {cat}>={k} verified={}", verify_proof(&root, &proof));
        println!("{}", proof.to_json());
    }
    Ok(())
}
