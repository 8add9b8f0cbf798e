//! Command-line front door: evaluate submeasures, inspect schedules,
//! build conjugacy witnesses and convergence tables, and run the
//! self-check suites. Machine output is deterministic JSON; rationals
//! cross the boundary only as "p/q" strings.
//!
//! Exit codes: 0 success, 2 parse/config error, 3 precondition
//! violation, 4 pattern too large, 5 cutoff/search horizon exhausted.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num::rational::BigRational;

use permideal::conjugacy::{
    build_witness, choose_parameters_with_horizon, convergence_table, dense_approx_with_horizon,
    ConjugacyError,
};
use permideal::ratio::{approx_decimal, parse_ratio, ratio_to_string};
use permideal::selfcheck::{run_selfcheck, SelfCheckConfig};
use permideal::submeasure::{
    tail_phi, validate_weights, CanonicalIdealSet, SubmeasureError, DEFAULT_CUTOFF_HORIZON,
};
use permideal::{
    BlockSchedule, ConjugacyWitness, FinitePermutation, GenericTuple, ScheduleError, Submeasure,
    TargetTuple,
};

const EXIT_PARSE: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_PATTERN_TOO_LARGE: u8 = 4;
const EXIT_HORIZON: u8 = 5;

#[derive(Parser)]
#[command(name = "permideal", version, about = "exact computations in permutation groups over weighted ideals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct IdealOpts {
    /// Weight family: counting | summable | a path to a JSON table file
    #[arg(long, default_value = "summable")]
    ideal: String,
    /// Canonical base set: squares | powers-of-two
    #[arg(long, default_value = "squares")]
    base: String,
}

#[derive(Args, Clone)]
struct ScheduleOpts {
    /// Tuple arity minus one; derived from the targets when omitted
    #[arg(long)]
    n: Option<usize>,
    /// Largest realized pattern-block size
    #[arg(long, default_value_t = 3)]
    max_block_size: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Exact phi of a finite set
    EvalPhi {
        #[command(flatten)]
        ideal: IdealOpts,
        /// Comma-separated naturals; empty string means the empty set
        #[arg(long, default_value = "")]
        set: String,
        #[arg(long)]
        pretty: bool,
    },
    /// Exact tail bound phi(base \ [0, m])
    Tail {
        #[command(flatten)]
        ideal: IdealOpts,
        #[arg(long)]
        m: i64,
        #[arg(long)]
        pretty: bool,
    },
    /// First blocks of the schedule as JSON
    ScheduleShow {
        #[command(flatten)]
        ideal: IdealOpts,
        #[command(flatten)]
        schedule: ScheduleOpts,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Stage witness for a target tuple
    Witness {
        #[command(flatten)]
        ideal: IdealOpts,
        #[command(flatten)]
        schedule: ScheduleOpts,
        /// Neighborhood radius as p/q
        #[arg(long)]
        eps: String,
        /// Path to a JSON file with n+1 permutations
        #[arg(long)]
        targets: String,
        /// Stage; must be an invariant cutoff past m0 and the targets
        #[arg(long)]
        m: u64,
    },
    /// Convergence table over a stage grid
    Converge {
        #[command(flatten)]
        ideal: IdealOpts,
        #[command(flatten)]
        schedule: ScheduleOpts,
        #[arg(long)]
        eps: String,
        #[arg(long)]
        targets: String,
        /// Comma-separated stages, or auto:K for the first K boundaries
        /// past the parameters and targets
        #[arg(long)]
        grid: String,
    },
    /// Dense-orbit approximation within delta
    DenseApprox {
        #[command(flatten)]
        ideal: IdealOpts,
        #[command(flatten)]
        schedule: ScheduleOpts,
        #[arg(long)]
        delta: String,
        #[arg(long)]
        targets: String,
    },
    /// Run the built-in invariant suites
    Selfcheck {
        #[arg(long, default_value_t = 200)]
        cases: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also validate a deliberately broken weight family
        #[arg(long)]
        inject_bad_weights: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => err.report(),
    }
}

struct CliError {
    exit: u8,
    message: String,
}

impl CliError {
    fn parse(message: impl Into<String>) -> Self {
        CliError {
            exit: EXIT_PARSE,
            message: message.into(),
        }
    }

    fn report(self) -> ExitCode {
        eprintln!("error: {}", self.message);
        ExitCode::from(self.exit)
    }
}

impl From<ConjugacyError> for CliError {
    fn from(err: ConjugacyError) -> Self {
        let exit = match &err {
            ConjugacyError::PreconditionViolation(_) => EXIT_PRECONDITION,
            ConjugacyError::Schedule(ScheduleError::PatternTooLarge { .. }) => {
                EXIT_PATTERN_TOO_LARGE
            }
            ConjugacyError::Schedule(ScheduleError::SearchHorizonExceeded(_)) => EXIT_HORIZON,
            ConjugacyError::Schedule(_) => EXIT_PARSE,
            ConjugacyError::Submeasure(SubmeasureError::NoCutoffFound { .. }) => EXIT_HORIZON,
            ConjugacyError::Submeasure(_) => EXIT_PARSE,
            ConjugacyError::Internal(_) => EXIT_PRECONDITION,
        };
        CliError {
            exit,
            message: err.to_string(),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(err: ScheduleError) -> Self {
        CliError::from(ConjugacyError::Schedule(err))
    }
}

impl From<SubmeasureError> for CliError {
    fn from(err: SubmeasureError) -> Self {
        CliError::from(ConjugacyError::Submeasure(err))
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::EvalPhi { ideal, set, pretty } => {
            let sub = parse_ideal(&ideal.ideal)?;
            let points = parse_set(&set)?;
            let phi = sub.phi(points);
            if pretty {
                println!("{} ({})", ratio_to_string(&phi), approx_decimal(&phi, 6));
            } else {
                println!("{}", ratio_to_string(&phi));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Tail { ideal, m, pretty } => {
            let sub = parse_ideal(&ideal.ideal)?;
            let base = parse_base(&ideal.base)?;
            let tail = tail_phi(&sub, &base, m)?;
            if pretty {
                println!("{} ({})", ratio_to_string(&tail), approx_decimal(&tail, 9));
            } else {
                println!("{}", ratio_to_string(&tail));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ScheduleShow {
            ideal,
            schedule,
            count,
        } => {
            let base = parse_base(&ideal.base)?;
            let n = schedule.n.unwrap_or(0);
            let sched = BlockSchedule::build(n, base, schedule.max_block_size)?;
            println!("{}", serde_json::to_string(&sched.export_blocks(count)).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        Command::Witness {
            ideal,
            schedule,
            eps,
            targets,
            m,
        } => {
            let (sub, t, fs) = load_run(&ideal, &schedule, &targets)?;
            let eps = parse_positive_ratio(&eps)?;
            let params = choose_parameters_with_horizon(&sub, &t, &eps, stage_horizon())?;
            let witness = build_witness(&sub, &params, &t, &fs, m)?;
            println!("{}", serde_json::to_string(&witness.to_json()).unwrap());
            Ok(witness_exit(&witness))
        }
        Command::Converge {
            ideal,
            schedule,
            eps,
            targets,
            grid,
        } => {
            let (sub, t, fs) = load_run(&ideal, &schedule, &targets)?;
            let eps = parse_positive_ratio(&eps)?;
            let params = choose_parameters_with_horizon(&sub, &t, &eps, stage_horizon())?;
            let stages = parse_grid(&grid, &t, params.m0.max(fs.m1()))?;
            let rows = convergence_table(&sub, &params, &t, &fs, &stages)?;
            for row in &rows {
                println!("{}", serde_json::to_string(&row.to_json()).unwrap());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DenseApprox {
            ideal,
            schedule,
            delta,
            targets,
        } => {
            let (sub, t, fs) = load_run(&ideal, &schedule, &targets)?;
            let delta = parse_positive_ratio(&delta)?;
            let witness = dense_approx_with_horizon(&sub, &t, &fs, &delta, stage_horizon())?;
            println!("{}", serde_json::to_string(&witness.to_json()).unwrap());
            Ok(witness_exit(&witness))
        }
        Command::Selfcheck {
            cases,
            seed,
            inject_bad_weights,
        } => {
            let cfg = SelfCheckConfig {
                seed,
                cases,
                inject_bad_weights,
                cutoff_horizon: cutoff_horizon(),
            };
            let outcomes = run_selfcheck(&cfg);
            let mut any_failed = false;
            for o in &outcomes {
                let status = if o.failed == 0 { "PASS" } else { "FAIL" };
                println!(
                    "[{status}] {} passed={} failed={} {}",
                    o.name, o.passed, o.failed, o.detail
                );
                any_failed |= o.failed > 0;
            }
            if any_failed {
                Ok(ExitCode::FAILURE)
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}

fn witness_exit(witness: &ConjugacyWitness) -> ExitCode {
    if witness.all_certs_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn stage_horizon() -> u64 {
    std::env::var("PERMIDEAL_STAGE_HORIZON")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(permideal::conjugacy::DEFAULT_STAGE_HORIZON)
}

fn cutoff_horizon() -> u64 {
    std::env::var("PERMIDEAL_CUTOFF_HORIZON")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_CUTOFF_HORIZON)
}

fn parse_ideal(spec: &str) -> Result<Submeasure, CliError> {
    match spec {
        "counting" => Ok(Submeasure::counting()),
        "summable" => Ok(Submeasure::summable()),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::parse(format!("cannot read ideal file {path}: {e}")))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::parse(format!("bad JSON in {path}: {e}")))?;
            let sub = Submeasure::from_json(&value).map_err(CliError::parse)?;
            let report = validate_weights(&sub, 64, 8);
            if !report.all_passed() {
                return Err(CliError::parse(format!(
                    "weight family in {path} violates the submeasure axioms"
                )));
            }
            Ok(sub)
        }
    }
}

fn parse_base(spec: &str) -> Result<CanonicalIdealSet, CliError> {
    match spec {
        "squares" => Ok(CanonicalIdealSet::SquaresShifted),
        "powers-of-two" | "pow2" => Ok(CanonicalIdealSet::PowersOfTwo),
        other => Err(CliError::parse(format!(
            "unknown base {other:?}; expected squares or powers-of-two"
        ))),
    }
}

fn parse_set(spec: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for tok in spec.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        out.push(
            tok.parse::<u64>()
                .map_err(|e| CliError::parse(format!("bad set element {tok:?}: {e}")))?,
        );
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn parse_positive_ratio(spec: &str) -> Result<BigRational, CliError> {
    let q = parse_ratio(spec).map_err(CliError::parse)?;
    if q <= num::Zero::zero() {
        return Err(CliError::parse(format!("{spec:?} must be positive")));
    }
    Ok(q)
}

fn load_run(
    ideal: &IdealOpts,
    schedule: &ScheduleOpts,
    targets_path: &str,
) -> Result<(Submeasure, GenericTuple, TargetTuple), CliError> {
    let sub = parse_ideal(&ideal.ideal)?;
    let base = parse_base(&ideal.base)?;
    let fs = load_targets(targets_path)?;
    let n = fs.arity().checked_sub(1).ok_or_else(|| {
        CliError::parse(format!("targets file {targets_path} holds no permutations"))
    })?;
    if let Some(explicit) = schedule.n {
        if explicit != n {
            return Err(CliError::parse(format!(
                "--n {explicit} conflicts with {} permutations in {targets_path}",
                fs.arity()
            )));
        }
    }
    let sched = BlockSchedule::build(n, base, schedule.max_block_size)?;
    Ok((sub, GenericTuple::new(sched), fs))
}

fn load_targets(path: &str) -> Result<TargetTuple, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::parse(format!("cannot read targets file {path}: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::parse(format!("bad JSON in {path}: {e}")))?;
    let items = value
        .as_array()
        .ok_or_else(|| CliError::parse("targets file must hold a JSON array of permutations"))?;
    let mut fs = Vec::with_capacity(items.len());
    for item in items {
        fs.push(FinitePermutation::from_json(item).map_err(CliError::parse)?);
    }
    Ok(TargetTuple::new(fs))
}

fn parse_grid(spec: &str, t: &GenericTuple, floor: i64) -> Result<Vec<u64>, CliError> {
    if let Some(count) = spec.strip_prefix("auto:") {
        let count: usize = count
            .parse()
            .map_err(|e| CliError::parse(format!("bad auto grid size {count:?}: {e}")))?;
        let mut stages = Vec::with_capacity(count);
        let mut cursor = floor.max(0) as u64 + 1;
        for _ in 0..count {
            let b = t
                .schedule()
                .boundary_at_or_after(cursor)
                .ok_or_else(|| CliError::parse("auto grid ran past the representable range"))?;
            stages.push(b);
            cursor = b + 1;
        }
        return Ok(stages);
    }
    let mut stages = Vec::new();
    for tok in spec.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        stages.push(
            tok.parse::<u64>()
                .map_err(|e| CliError::parse(format!("bad stage {tok:?}: {e}")))?,
        );
    }
    if stages.is_empty() {
        return Err(CliError::parse("grid must hold at least one stage"));
    }
    if stages.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::parse("grid must be strictly increasing"));
    }
    Ok(stages)
}
