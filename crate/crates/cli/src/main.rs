//! `uavopt`: run scheme sweeps, emit plot data, lint scenario files.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | a run failed for a reason other than infeasibility |
//! | 2 | bad command line |
//! | 3 | file system error (missing scenario, unreadable or unwritable output) |
//! | 4 | invalid or infeasible scenario |
//! | 5 | a finished run violates a constraint in the hard re-check |

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use uavopt_core::cluster::estimate_capacity;
use uavopt_core::io::{write_plotdata, IoError, JobStatus, SweepSpec};
use uavopt_core::orchestrator::SchemeId;
use uavopt_core::scenario::{load_scenario, substream, watts_to_dbm, ScenarioError, Stream};

const EXIT_RUN: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_VIOLATION: u8 = 5;

#[derive(Parser)]
#[command(name = "uavopt", version, about = "Mobility-aware UAV trajectory and resource allocation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every scheme × seed (× power × serving budget) combination.
    Run(RunArgs),
    /// Write tidy CSV tables for the figures from finished runs.
    Plotdata(PlotArgs),
    /// Check a scenario file and print its derived capacity plan.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated scheme names.
    #[arg(long, value_delimiter = ',', default_value = "proposed")]
    schemes: Vec<SchemeId>,
    /// Inclusive range `a..b` or a comma-separated list.
    #[arg(long, default_value = "1..10", value_parser = parse_seeds)]
    seeds: SeedList,
    /// Power budgets in dBm, applied to both the total and per-user limit.
    #[arg(long, value_delimiter = ',')]
    powers: Vec<f64>,
    /// Per-cluster serving budgets in slots; `auto` keeps the planned time.
    #[arg(long = "serve-slots", value_delimiter = ',', value_parser = parse_slots)]
    serve_slots: Vec<Option<u32>>,
    /// Replay the proposed scheme's clusters and serving times for the others.
    #[arg(long)]
    paired: bool,
    /// Output root.
    #[arg(long, env = "UAVOPT_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directory or sweep root.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to `<input>/plotdata`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range start in '{s}'"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range end in '{s}'"))?;
        if b < a {
            return Err(format!("empty seed range '{s}'"));
        }
        return Ok(SeedList((a..=b).collect()));
    }
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|_| format!("bad seed '{x}'")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SeedList(v))
}

fn parse_slots(s: &str) -> Result<Option<u32>, String> {
    match s.trim() {
        "auto" => Ok(None),
        x => match x.parse::<u32>() {
            Ok(0) | Err(_) => Err(format!("serving budget must be a positive integer or 'auto', got '{x}'")),
            Ok(n) => Ok(Some(n)),
        },
    }
}

fn scenario_exit(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Io { .. } => EXIT_IO,
        _ => EXIT_INFEASIBLE,
    }
}

fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn cmd_run(a: RunArgs) -> u8 {
    let cfg = match load_scenario(&a.scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return scenario_exit(&e);
        }
    };
    if a.schemes.is_empty() || a.seeds.0.is_empty() {
        eprintln!("error: need at least one scheme and one seed");
        return EXIT_USAGE;
    }
    if a.paired && !a.schemes.contains(&SchemeId::Proposed) {
        eprintln!("error: --paired needs the proposed scheme in --schemes");
        return EXIT_USAGE;
    }
    let spec = SweepSpec {
        cfg,
        scenario_path: a.scenario.display().to_string(),
        schemes: a.schemes,
        seeds: a.seeds.0,
        powers_dbm: a.powers,
        serve_slots: a.serve_slots,
        paired: a.paired,
    };
    let outcomes = match spec.execute(&a.out, now_unix()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    let mut code = 0;
    let mut bump = |c: u8| {
        // I/O failures dominate, then infeasibility, then violations.
        let rank = |c: u8| match c {
            EXIT_IO => 4,
            EXIT_INFEASIBLE => 3,
            EXIT_VIOLATION => 2,
            EXIT_RUN => 1,
            _ => 0,
        };
        if rank(c) > rank(code) {
            code = c;
        }
    };
    let mut done = 0;
    for o in &outcomes {
        let tag = format!(
            "{} seed {} p{} dBm slots {}",
            o.scheme,
            o.seed,
            o.power_dbm,
            uavopt_core::io::slots_label(o.serve_slots)
        );
        match &o.status {
            JobStatus::Completed { violations: 0 } => done += 1,
            JobStatus::Completed { violations } => {
                eprintln!("error: {tag}: {violations} constraint violations, see {}", o.dir.join("metrics.json").display());
                bump(EXIT_VIOLATION);
            }
            JobStatus::RunFailed { message, infeasible } => {
                eprintln!("error: {tag}: {message}");
                bump(if *infeasible { EXIT_INFEASIBLE } else { EXIT_RUN });
            }
            JobStatus::WriteFailed { message } => {
                eprintln!("error: {tag}: {message}");
                bump(EXIT_IO);
            }
        }
    }
    println!("{done}/{} runs written to {}", outcomes.len(), a.out.display());
    code
}

fn cmd_plotdata(a: PlotArgs) -> u8 {
    let out = a.out.unwrap_or_else(|| a.input.join("plotdata"));
    match write_plotdata(&a.input, &out) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                IoError::Io { .. } | IoError::Missing { .. } => EXIT_IO,
                _ => EXIT_INFEASIBLE,
            }
        }
    }
}

#[derive(Serialize)]
struct ValidateReport<'a> {
    scenario: &'a Path,
    n_users: usize,
    n_slots: usize,
    power_dbm: f64,
    r_max: f64,
    tau: u32,
    c_max: usize,
    n_clusters: usize,
}

fn cmd_validate(a: ValidateArgs) -> u8 {
    let cfg = match load_scenario(&a.scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return scenario_exit(&e);
        }
    };
    let n_slots = match cfg.n_slots() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INFEASIBLE;
        }
    };
    let cap = match estimate_capacity(&cfg, cfg.capacity_mc_samples, &mut substream(cfg.rng_seed, Stream::Capacity)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", a.scenario.display());
            return EXIT_INFEASIBLE;
        }
    };
    let report = ValidateReport {
        scenario: &a.scenario,
        n_users: cfg.n_users,
        n_slots,
        power_dbm: watts_to_dbm(cfg.p_total_max),
        r_max: cap.r_max,
        tau: cap.tau,
        c_max: cap.c_max,
        n_clusters: cap.n_clusters,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
    0
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Plotdata(a) => cmd_plotdata(a),
        Cmd::Validate(a) => cmd_validate(a),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_are_inclusive() {
        assert_eq!(parse_seeds("1..10").unwrap().0, (1..=10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("7..7").unwrap().0, vec![7]);
        assert_eq!(parse_seeds("3..=5").unwrap().0, vec![3, 4, 5]);
        assert_eq!(parse_seeds("4,2,9").unwrap().0, vec![4, 2, 9]);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("a..2").is_err());
        assert!(parse_seeds("1,x").is_err());
    }

    #[test]
    fn serve_slot_values() {
        assert_eq!(parse_slots("auto").unwrap(), None);
        assert_eq!(parse_slots("6").unwrap(), Some(6));
        assert!(parse_slots("0").is_err());
        assert!(parse_slots("-1").is_err());
    }

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from([
            "uavopt",
            "run",
            "--scenario",
            "s.toml",
            "--schemes",
            "proposed,time_dividend",
            "--seeds",
            "1..3",
            "--serve-slots",
            "auto,5",
            "--out",
            "o",
        ])
        .unwrap();
        let Cmd::Run(a) = cli.cmd else { panic!("expected run") };
        assert_eq!(a.schemes, vec![SchemeId::Proposed, SchemeId::TimeDividend]);
        assert_eq!(a.seeds.0, vec![1, 2, 3]);
        assert_eq!(a.serve_slots, vec![None, Some(5)]);
        assert!(Cli::try_parse_from(["uavopt", "run", "--scenario", "s", "--schemes", "bogus"]).is_err());
    }
}
