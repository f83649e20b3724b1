use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ptdisorder::risk::{evaluate_policy, simulate_outcomes, summarize, write_outcomes_csv};
use ptdisorder::scenario::{sample_batch, write_jsonl};
use ptdisorder::validate::run_suite;
use ptdisorder::{BeliefPoint, Detector, Error, Event, Policy, RunConfig, ValueTable};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_CENSORED: u8 = 4;
const DEFAULT_EPSILON: f64 = 0.05;
const DEFAULT_HORIZON: f64 = 50.0;
const TRAJECTORY_POINTS: usize = 1001;

#[derive(Parser)]
#[command(name = "ptdisorder", version, about = "Quickest detection of a Poisson rate change with a phase-type prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Rule {
    Hitting,
    Sequential,
    StopAtZero,
}

impl Rule {
    fn label(self) -> &'static str {
        match self {
            Rule::Hitting => "hitting",
            Rule::Sequential => "sequential",
            Rule::StopAtZero => "stop-at-zero",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run value iteration and write the table, surface, boundary and report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Keep every iterate in the table (needed by the sequential rule).
        #[arg(long)]
        store_iterates: bool,
        /// Also solve at twice the resolution and report the difference.
        #[arg(long)]
        refine: bool,
    },
    /// Sample scenarios and write them as JSON lines, with the first trajectory as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Stream arrival times through a detector and print the alarm.
    Detect {
        #[arg(long)]
        table: PathBuf,
        /// File with one arrival time per line, or "-" for stdin.
        #[arg(long)]
        events: String,
        #[arg(long, value_enum, default_value = "hitting")]
        rule: Rule,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Supplies the initial belief and defaults for ε and the horizon.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Observation ends here when no alarm was raised.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Estimate the Bayes risk of a rule by simulation.
    Evaluate {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "hitting")]
        rule: Rule,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Directory for risk.json and outcomes.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite and list failures.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) | Error::DegenerateBelief(_) | Error::Contract(_) | Error::Internal(_) => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: EXIT_INPUT, message: e.to_string() }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INPUT, message: message.into() }
}

type CliResult<T> = Result<T, Failure>;

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> CliResult<()> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| input_error(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    RunConfig::load(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn load_table(path: &Path) -> CliResult<ValueTable> {
    let file = File::open(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    ValueTable::read_json(BufReader::new(file)).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn build_policy(rule: Rule, table: Option<ValueTable>, epsilon: f64) -> CliResult<Policy> {
    if rule == Rule::StopAtZero {
        return Ok(Policy::StopAtZero);
    }
    let table = table.ok_or_else(|| input_error(format!("rule {} needs --table", rule.label())))?;
    Ok(match rule {
        Rule::Hitting => Policy::hitting(table, epsilon)?,
        _ => Policy::sequential(table, epsilon)?,
    })
}

fn solve(
    config: &Path,
    out: &Path,
    epsilon: Option<f64>,
    resolution: Option<usize>,
    store_iterates: bool,
    refine: bool,
) -> CliResult<()> {
    let mut cfg = load_config(config)?;
    if let Some(e) = epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(input_error(format!("--epsilon: must be positive, got {e}")));
        }
        cfg.epsilon = e;
    }
    if let Some(r) = resolution {
        if r == 0 {
            return Err(input_error("--resolution: must be at least 1"));
        }
        cfg.resolution = r;
    }
    cfg.store_iterates |= store_iterates;
    cfg.refinement_check |= refine;
    fs::create_dir_all(out)?;

    let started = Instant::now();
    let table = cfg.solve()?;
    let refinement_delta = if cfg.refinement_check {
        let mut fine_cfg = cfg.clone();
        fine_cfg.store_iterates = false;
        let fine = fine_cfg.solve_at(2 * cfg.resolution)?;
        Some(fine.sup_distance(&table))
    } else {
        None
    };
    let wall = started.elapsed().as_secs_f64();

    let mut t = create(out, "value_table.json")?;
    table.write_json(&mut t)?;
    t.flush()?;
    let mut s = create(out, "surface.csv")?;
    table.write_surface_csv(cfg.epsilon, &mut s)?;
    s.flush()?;
    if cfg.model.n() == 2 {
        let mut b = create(out, "boundary.csv")?;
        table.region(cfg.epsilon).write_boundary_csv(2, &mut b)?;
        b.flush()?;
    }
    let report = json!({
        "mode": table.mode,
        "m": table.m,
        "planned_iterations": cfg.plan()?.iterations,
        "certified_bound": table.certified_bound,
        "residual": table.residual,
        "delta": table.delta,
        "horizon": table.horizon,
        "max_clip": table.max_clip,
        "resolution": cfg.resolution,
        "node_count": table.grid.node_count(),
        "value_at_initial_belief": table.value_at(cfg.initial_belief.as_slice()),
        "refinement_delta": refinement_delta,
        "wall_time_seconds": wall,
        "model_hash": table.model_hash,
    });
    write_json(out, "report.json", &report)?;
    println!("{}", serde_json::to_string(&report).map_err(|e| input_error(e.to_string()))?);
    Ok(())
}

fn simulate(config: &Path, out: &Path, samples: Option<usize>, seed: Option<u64>, horizon: Option<f64>) -> CliResult<()> {
    let cfg = load_config(config)?;
    let count = samples.unwrap_or(cfg.samples);
    let seed = seed.unwrap_or(cfg.seed);
    let horizon = horizon.unwrap_or(cfg.horizon);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(input_error(format!("--horizon: must be positive, got {horizon}")));
    }
    fs::create_dir_all(out)?;
    let scenarios = sample_batch(&cfg.model, &cfg.initial_belief, horizon, count, seed)?;
    let mut s = create(out, "scenarios.jsonl")?;
    write_jsonl(&scenarios, &mut s)?;
    s.flush()?;
    if let Some(first) = scenarios.first() {
        let queries: Vec<f64> =
            (0..TRAJECTORY_POINTS).map(|i| horizon * i as f64 / (TRAJECTORY_POINTS - 1) as f64).collect();
        let path = ptdisorder::Trajectory::build(&cfg.model, &cfg.initial_belief, &first.arrivals)?;
        let mut t = create(out, "trajectory.csv")?;
        path.write_csv(&cfg.model, &queries, &mut t)?;
        t.flush()?;
    }
    println!("{}", json!({ "scenarios": scenarios.len(), "seed": seed, "horizon": horizon }));
    Ok(())
}

/// Arrival times from an event source; `#` lines are comments, and a
/// `# model_hash: <hex>` line must match the table.
fn read_events(source: &str, model_hash: &str) -> CliResult<Vec<f64>> {
    let reader: Box<dyn BufRead> = if source == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(File::open(source).map_err(|e| input_error(format!("{source}: {e}")))?))
    };
    let mut times = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(hash) = comment.trim().strip_prefix("model_hash:") {
                if hash.trim() != model_hash {
                    return Err(input_error(format!(
                        "events line {}: model hash {} does not match table {model_hash}",
                        i + 1,
                        hash.trim()
                    )));
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let t: f64 = line.parse().map_err(|_| input_error(format!("events line {}: not a number: {line}", i + 1)))?;
        times.push(t);
    }
    Ok(times)
}

fn detect(
    table: &Path,
    events: &str,
    rule: Rule,
    epsilon: Option<f64>,
    config: Option<&Path>,
    horizon: Option<f64>,
) -> CliResult<bool> {
    let table = load_table(table)?;
    let cfg = config.map(load_config).transpose()?;
    if let Some(cfg) = &cfg {
        if cfg.model.hash() != table.model_hash {
            return Err(input_error("config model does not match the table"));
        }
    }
    let epsilon = epsilon.or(cfg.as_ref().map(|c| c.epsilon)).unwrap_or(DEFAULT_EPSILON);
    let horizon = horizon.or(cfg.as_ref().map(|c| c.horizon)).unwrap_or(DEFAULT_HORIZON);
    let pi0 = cfg
        .as_ref()
        .map(|c| c.initial_belief.clone())
        .unwrap_or_else(|| BeliefPoint::transient_vertex(table.model.n(), 0));
    let model = table.model.clone();
    let times = read_events(events, &table.model_hash)?;
    let policy = build_policy(rule, Some(table), epsilon)?;
    let mut detector = Detector::new(&policy, &model, &pi0)?;
    for &t in &times {
        if detector.step(Event::Arrival(t))?.is_some() {
            break;
        }
    }
    let last = times.last().copied().unwrap_or(0.0);
    if detector.alarm().is_none() && horizon >= last {
        detector.step(Event::Quiet(horizon))?;
    }
    let record = match detector.alarm() {
        Some(alarm) => json!({ "alarm_time": alarm.time, "belief": alarm.belief.as_slice(), "rule": rule.label() }),
        None => json!({
            "alarm_time": null,
            "belief": detector.belief().as_slice(),
            "rule": rule.label(),
            "censored_at": horizon.max(last),
        }),
    };
    println!("{record}");
    Ok(detector.alarm().is_some())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    table: Option<&Path>,
    config: &Path,
    rule: Rule,
    epsilon: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
    horizon: Option<f64>,
    out: Option<&Path>,
) -> CliResult<()> {
    let cfg = load_config(config)?;
    let table = table.map(load_table).transpose()?;
    if let Some(t) = &table {
        if t.model_hash != cfg.model.hash() {
            return Err(input_error("config model does not match the table"));
        }
    }
    let policy = build_policy(rule, table, epsilon.unwrap_or(cfg.epsilon))?;
    let count = samples.unwrap_or(cfg.samples);
    let seed = seed.unwrap_or(cfg.seed);
    let horizon = horizon.unwrap_or(cfg.horizon);
    let estimate = match out {
        None => evaluate_policy(&cfg.model, &cfg.initial_belief, &policy, count, horizon, seed)?,
        Some(dir) => {
            if count == 0 {
                return Err(input_error("--samples: must be at least 1"));
            }
            let outcomes = simulate_outcomes(&cfg.model, &cfg.initial_belief, &policy, count, horizon, seed)?;
            fs::create_dir_all(dir)?;
            let mut w = create(dir, "outcomes.csv")?;
            write_outcomes_csv(&outcomes, &mut w)?;
            w.flush()?;
            let estimate = summarize(cfg.model.c, horizon, &outcomes, seed);
            write_json(dir, "risk.json", &json!(estimate))?;
            estimate
        }
    };
    println!("{}", json!(estimate));
    Ok(())
}

fn validate(config: &Path, resolution: Option<usize>, samples: Option<usize>, out: Option<&Path>) -> CliResult<bool> {
    let mut cfg = load_config(config)?;
    if let Some(r) = resolution {
        cfg.resolution = r.max(1);
    }
    if let Some(s) = samples {
        cfg.samples = s.max(2);
    }
    let (report, _) = run_suite(&cfg)?;
    for check in &report.checks {
        println!("{:<24} {:<4} {}", check.name, if check.passed { "ok" } else { "FAIL" }, check.detail);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(dir, "validation.json", &json!(report))?;
    }
    let failures: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    if !failures.is_empty() {
        eprintln!("failed checks: {}", failures.join(", "));
    }
    Ok(failures.is_empty())
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Solve { config, out, epsilon, resolution, store_iterates, refine } => {
            solve(&config, &out, epsilon, resolution, store_iterates, refine)?
        }
        Command::Simulate { config, out, samples, seed, horizon } => simulate(&config, &out, samples, seed, horizon)?,
        Command::Detect { table, events, rule, epsilon, config, horizon } => {
            if !detect(&table, &events, rule, epsilon, config.as_deref(), horizon)? {
                return Ok(ExitCode::from(EXIT_CENSORED));
            }
        }
        Command::Evaluate { table, config, rule, epsilon, samples, seed, horizon, out } => {
            evaluate(table.as_deref(), &config, rule, epsilon, samples, seed, horizon, out.as_deref())?
        }
        Command::Validate { config, resolution, samples, out } => {
            if !validate(&config, resolution, samples, out.as_deref())? {
                return Ok(ExitCode::from(EXIT_NUMERIC));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
