//! `trajattr`: run the trajectory attribution pipeline, inspect runs, and
//! render per-state explanations.
//!
//! Exit codes: 0 ok, 1 user error, 2 pipeline failure, 3 validation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use trajattr_core::error::Error;
use trajattr_core::gridworld::GridAction;
use trajattr_core::pipeline::{run_pipeline, LoadedRun, RunConfig, Stage};
use trajattr_core::render::{render_ascii, render_svg};
use trajattr_core::validate::validate_run;

const EXIT_USER: u8 = 1;
const EXIT_PIPELINE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "trajattr", version, about = "Attribute offline-RL decisions to clusters of training trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Flat key=value config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for stage artifacts.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Replace every stage seed with values derived from this one.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Svg,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the full pipeline: gen-data through report.
    Run(StageArgs),
    /// Generate the offline trajectory dataset.
    GenData(StageArgs),
    /// Train the recurrent sequence encoder.
    TrainEncoder(StageArgs),
    /// Emit per-trajectory embeddings.
    Encode(StageArgs),
    /// Cluster the trajectory embeddings with X-means.
    Cluster(StageArgs),
    /// Compute original and complementary data embeddings.
    Embed(StageArgs),
    /// Train the original and explanation policies.
    TrainPolicies(StageArgs),
    /// Attribute every eval state to a cluster.
    Attribute(StageArgs),
    /// Write the metrics table (runs everything it needs).
    Report(StageArgs),
    /// Render the attribution for one state of a completed run.
    Explain {
        /// Run directory produced by `run`.
        run_dir: PathBuf,
        /// Query state as "(row,col)" or "row,col".
        state: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Re-check every artifact invariant of a completed run.
    Validate {
        run_dir: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Stage { .. } => EXIT_PIPELINE,
        Error::Validation(_) => EXIT_VALIDATION,
        _ => EXIT_USER,
    }
}

fn load_config(args: &StageArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed_override {
        cfg.override_seeds(seed);
    }
    Ok(cfg)
}

fn run_stage(args: &StageArgs, upto: Stage) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let out = run_pipeline(&cfg, &args.out, upto)?;
    for s in &out.stages {
        println!("{:<16} {}", s.name, if s.cached { "cached" } else { "computed" });
    }
    if let Some(n) = out.n_clusters {
        println!("clusters: {n}");
    }
    if upto == Stage::Report {
        println!("attributions: {}", args.out.join("attributions.json").display());
        println!("metrics: {}", args.out.join("metrics.csv").display());
        print!("{}", std::fs::read_to_string(args.out.join("metrics.csv"))?);
    }
    Ok(())
}

fn parse_state(raw: &str) -> Result<(usize, usize), Error> {
    let trimmed = raw.trim().trim_start_matches('(').trim_end_matches(')');
    let (r, c) = trimmed
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("bad state {raw:?}, expected \"(row,col)\"")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad state {raw:?}, expected \"(row,col)\"")))
    };
    Ok((parse(r)?, parse(c)?))
}

fn explain(run_dir: &Path, state_raw: &str, format: Format) -> Result<(), Error> {
    let (row, col) = parse_state(state_raw)?;
    let run = LoadedRun::open(run_dir)?;
    let state = run.layout.state_at(row, col)?;
    if state.terminal {
        return Err(Error::Config(format!(
            "state ({row}, {col}) is terminal; explanations apply to decision states"
        )));
    }
    let result = run.attributor().attribute(&state)?;
    let action = GridAction::from_id(result.a_orig)?;

    match format {
        Format::Json => {
            println!("{}", serde_json_string(&result)?);
        }
        Format::Csv => {
            println!("cluster_id,action_distance,data_distance");
            for &(c, d) in &result.distances {
                let w = result
                    .data_distances
                    .iter()
                    .find(|&&(k, _)| k == c)
                    .map(|&(_, w)| w.to_string())
                    .unwrap_or_else(|| "-".into());
                println!("{c},{d},{w}");
            }
        }
        Format::Text => {
            println!("state ({row}, {col}): original action {action:?} ({})", action.arrow());
            match result.c_final {
                Some(c) => println!("attributed cluster: {c}"),
                None => println!("attributed cluster: none (no explanation policy deviates)"),
            }
            println!("candidates: {:?}", result.candidates);
            for &id in &result.exemplars {
                println!("\ntrajectory {id}:");
                print!(
                    "{}",
                    render_ascii(&run.layout, &run.dataset.trajectories[id], &state)
                );
            }
        }
        Format::Svg => {
            if result.exemplars.is_empty() {
                println!("no exemplar trajectories to render");
            }
            for &id in &result.exemplars {
                let svg = render_svg(&run.layout, &run.dataset.trajectories[id], &state);
                let path = run_dir.join(format!("explain_r{row}c{col}_traj{id}.svg"));
                std::fs::write(&path, svg)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn validate(run_dir: &Path) -> Result<(), Error> {
    let report = validate_run(run_dir)?;
    for check in &report.checks {
        let status = if check.passed { "ok  " } else { "FAIL" };
        println!("{status} {:<26} {}", check.name, check.detail);
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{} of {} checks failed",
            report.checks.iter().filter(|c| !c.passed).count(),
            report.checks.len()
        )))
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Run(a) | Command::Report(a) => run_stage(a, Stage::Report),
        Command::GenData(a) => run_stage(a, Stage::GenData),
        Command::TrainEncoder(a) => run_stage(a, Stage::TrainEncoder),
        Command::Encode(a) => run_stage(a, Stage::Encode),
        Command::Cluster(a) => run_stage(a, Stage::Cluster),
        Command::Embed(a) => run_stage(a, Stage::Embed),
        Command::TrainPolicies(a) => run_stage(a, Stage::TrainPolicies),
        Command::Attribute(a) => run_stage(a, Stage::Attribute),
        Command::Explain { run_dir, state, format } => explain(run_dir, state, *format),
        Command::Validate { run_dir } => validate(run_dir),
    }
}

fn main() -> ExitCode {
    // die quietly instead of panicking when stdout is a closed pipe
    // (e.g. `trajattr explain ... | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USER);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
