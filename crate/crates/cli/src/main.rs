// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Batch experiment runner for the dagbft simulator.
//!
//! Exit codes: 0 when every oracle passes, 1 on an oracle violation,
//! 2 on a configuration or output error.

mod overrides;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dagbft::metrics::{aggregate, decompose, write_csv};
use dagbft::oracles::{check_oracles, fast_skip};
use dagbft::scenario::safety_scenario;
use dagbft::{run, ConfigError, RunTrace, Scenario};
use rayon::prelude::*;

use crate::overrides::{apply, parse_axis, parse_seeds, points};
use crate::report::{table, write_summary_csv, RunReport};

#[derive(Parser)]
#[command(name = "dagbft", version, about = "Run seeded DAG consensus simulations and check safety oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over a range of seeds, optionally sweeping parameters.
    Run(Box<RunArgs>),
    /// Run the randomized safety suite.
    Suite(SuiteArgs),
    /// Exhaustively search small executions for fast commits of skipped anchors.
    FastSkip(FastSkipArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML scenario file; flags override its values.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// bullshark, shoal or shoalpp.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    f: Option<String>,
    /// Parallel DAG instances.
    #[arg(long)]
    k: Option<String>,
    /// Instance start spacing in md.
    #[arg(long)]
    offset: Option<String>,
    /// D, fixed:D or uniform:LO:HI (md).
    #[arg(long)]
    delay: Option<String>,
    /// Per-message drop probability.
    #[arg(long)]
    drop: Option<String>,
    /// Replica whose egress drops; repeatable, default all.
    #[arg(long = "drop-from", value_name = "R")]
    drop_from: Vec<String>,
    /// R or R@T; repeatable.
    #[arg(long, value_name = "R[@T]")]
    crash: Vec<String>,
    /// Equivocating replica; repeatable.
    #[arg(long, value_name = "R")]
    equivocate: Vec<String>,
    #[arg(long)]
    gst: Option<String>,
    #[arg(long = "round-timeout")]
    round_timeout: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    /// Transactions per md per correct replica.
    #[arg(long)]
    rate: Option<String>,
    #[arg(long)]
    drain: Option<String>,
    /// per-round or per-segment.
    #[arg(long)]
    interleave: Option<String>,
    #[arg(long = "fast-threshold")]
    fast_threshold: Option<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive range A..B.
    #[arg(long)]
    seeds: Option<String>,
    /// key=v1,v2,...; repeat for a cartesian product.
    #[arg(long, value_name = "KEY=VALUES")]
    sweep: Vec<String>,
    /// Output directory for CSV files.
    #[arg(long, env = "DAGBFT_OUT_DIR", default_value = "dagbft-out")]
    out: PathBuf,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let single = [
            ("protocol", &self.protocol),
            ("n", &self.n),
            ("f", &self.f),
            ("k", &self.k),
            ("offset", &self.offset),
            ("delay", &self.delay),
            ("drop", &self.drop),
            ("gst", &self.gst),
            ("round-timeout", &self.round_timeout),
            ("rounds", &self.rounds),
            ("rate", &self.rate),
            ("drain", &self.drain),
            ("interleave", &self.interleave),
            ("fast-threshold", &self.fast_threshold),
        ];
        let lists =
            [("drop-from", &self.drop_from), ("crash", &self.crash), ("equivocate", &self.equivocate)];
        single
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .chain(lists.into_iter().filter(|(_, v)| !v.is_empty()).map(|(k, v)| (k, v.join("+"))))
            .collect()
    }
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long, default_value_t = 1000)]
    runs: u64,
    /// Index of the first scenario.
    #[arg(long, default_value_t = 0)]
    start: u64,
}

#[derive(Args)]
struct FastSkipArgs {
    /// Weak votes needed by the fast rule; defaults to 2f+1 = 3.
    #[arg(long, default_value_t = 3)]
    threshold: usize,
}

enum Failure {
    Config(String),
    Violation,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run_cmd(&args),
        Command::Suite(args) => suite_cmd(&args),
        Command::FastSkip(args) => fast_skip_cmd(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configs(args: &RunArgs) -> Result<Vec<(String, Scenario)>, Failure> {
    let mut base = match &args.scenario {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => Scenario::default(),
    };
    for (k, v) in args.overrides() {
        apply(&mut base, k, &v)?;
    }
    let axes = args.sweep.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>, _>>()?;
    points(&axes)
        .into_iter()
        .map(|point| {
            let mut s = base.clone();
            for (k, v) in &point {
                apply(&mut s, k, v)?;
            }
            s.validate()?;
            let label = if point.is_empty() {
                s.protocol.to_string()
            } else {
                point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
            };
            Ok((label, s))
        })
        .collect()
}

fn run_cmd(args: &RunArgs) -> Result<(), Failure> {
    let configs = configs(args)?;
    let seeds: Vec<u64> = match (&args.seeds, args.seed) {
        (Some(r), _) => parse_seeds(r)?.collect(),
        (None, Some(s)) => vec![s],
        (None, None) => vec![configs.first().map(|c| c.1.seed).unwrap_or(0)],
    };
    let io_err = |p: &Path, e: std::io::Error| Failure::Config(format!("{}: {e}", p.display()));
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    let latency_path = args.out.join("latency.csv");
    let latency = fs::File::create(&latency_path).map_err(|e| io_err(&latency_path, e))?;
    let mut csv_out = csv::Writer::from_writer(std::io::BufWriter::new(latency));

    let mut reports = Vec::new();
    for (i, (label, scenario)) in configs.iter().enumerate() {
        let traces: Vec<RunTrace> = seeds
            .par_iter()
            .map(|seed| run(&Scenario { seed: *seed, ..scenario.clone() }).expect("validated scenario"))
            .collect();
        // Replaying the first seed exercises the determinism oracle.
        let replay = run(&traces[0].scenario).expect("validated scenario");
        let failure = traces.iter().enumerate().find_map(|(j, t)| {
            let set = if j == 0 { vec![t.clone(), replay.clone()] } else { vec![t.clone()] };
            let report = check_oracles(&set);
            (!report.passed()).then_some((t.scenario.seed, report))
        });
        let mut timelines = Vec::new();
        let mut uncommitted = 0;
        for (j, t) in traces.iter().enumerate() {
            let d = decompose(t);
            let run_id = format!("c{i}-s{}", t.scenario.seed);
            let header = i == 0 && j == 0;
            write_csv(
                &mut csv_out,
                &run_id,
                t.scenario.protocol.name(),
                t.scenario.seed,
                &d.timelines,
                header,
            )
            .map_err(|e| Failure::Config(format!("{}: {e}", latency_path.display())))?;
            uncommitted += d.uncommitted.len();
            timelines.extend(d.timelines);
        }
        let echo = args.out.join(format!("scenario-c{i}.toml"));
        fs::write(&echo, format!("# {label}\n{}", scenario.to_toml())).map_err(|e| io_err(&echo, e))?;
        reports.push(RunReport {
            label: label.clone(),
            scenario: scenario.clone(),
            seeds: seeds.clone(),
            aggregate: aggregate(&timelines),
            uncommitted,
            anchor_mix: RunReport::anchor_mix_of(&traces),
            failure,
        });
    }

    let summary_path = args.out.join("summary.csv");
    let summary = fs::File::create(&summary_path).map_err(|e| io_err(&summary_path, e))?;
    write_summary_csv(summary, &reports)
        .map_err(|e| Failure::Config(format!("{}: {e}", summary_path.display())))?;

    print!("{}", table(&reports));
    println!("wrote {} and {}", latency_path.display(), summary_path.display());
    let mut violated = false;
    for r in &reports {
        if let Some((seed, report)) = &r.failure {
            violated = true;
            eprintln!("oracle violation in {} (smallest failing seed {seed}):\n{report}", r.label);
        }
    }
    if violated {
        Err(Failure::Violation)
    } else {
        Ok(())
    }
}

fn suite_cmd(args: &SuiteArgs) -> Result<(), Failure> {
    let range = args.start..args.start + args.runs;
    let mut failures: Vec<(u64, Scenario, String)> = range
        .clone()
        .into_par_iter()
        .filter_map(|i| {
            let s = safety_scenario(i);
            let t = run(&s).expect("suite scenarios are valid");
            let report = check_oracles(&[t.clone(), run(&s).expect("valid")]);
            (!report.passed()).then(|| (i, s, report.to_string()))
        })
        .collect();
    failures.sort_by_key(|f| f.0);
    println!("{} scenarios, {} with oracle violations", args.runs, failures.len());
    match failures.first() {
        None => Ok(()),
        Some((i, s, report)) => {
            eprintln!("smallest failing scenario {i} (seed {}):\n{report}{}", s.seed, s.to_toml());
            Err(Failure::Violation)
        }
    }
}

fn fast_skip_cmd(args: &FastSkipArgs) -> Result<(), Failure> {
    let r = fast_skip::enumerate(args.threshold);
    println!(
        "threshold {}: {} cases, fast rule fired in {}, anchor skipped in {}, violations {}",
        r.threshold,
        r.cases,
        r.fast_cases,
        r.skip_cases,
        r.violations.len()
    );
    match r.violations.first() {
        None => Ok(()),
        Some(case) => {
            eprintln!("first counterexample: {case:?}");
            Err(Failure::Violation)
        }
    }
}
