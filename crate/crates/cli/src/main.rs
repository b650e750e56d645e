//! `strider` — command-line front end for the push-recovery planning stack.
//!
//! The pipeline is staged through files so the expensive feasibility table is
//! reused across runs:
//!
//! ```text
//! strider feastable --config stack.ini --out table.csv
//! strider synth     --config stack.ini --table table.csv --out strategy.json
//! strider simulate  --config stack.ini --table table.csv --strategy strategy.json \
//!                   --push-phase 1 --push-vx 0.13 --push-vy 0.31 --out trace.jsonl
//! strider sweep     --config stack.ini --table table.csv --strategy strategy.json \
//!                   --mode envelope --directions 12 --phases 0,30,60,90 --out grid.csv
//! ```
//!
//! Exit codes: 0 success; 2 configuration error; 3 I/O error; 4 synthesis
//! unrealizable; 5 artifact mismatch; 6 invalid scenario flags. Diagnostics
//! go to stderr; data goes to files.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;
use strider_core::config::StackConfig;
use strider_core::simulator::{
    sweep_envelope, sweep_success_rate, PerturbationEvent, SimEngine,
};
use strider_core::synthesis::{build_game, synthesize, verify_strategy, GameStructure, Strategy};
use strider_core::traj_opt::{
    build_feasibility_table, content_digest, FeasibilityTable, TableMeta,
};
use strider_core::util::write_atomic;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_UNREALIZABLE: u8 = 4;
const EXIT_MISMATCH: u8 = 5;
const EXIT_SCENARIO: u8 = 6;

#[derive(Parser)]
#[command(
    name = "strider",
    version,
    about = "Push-recovery planning stack for reduced-order bipedal walking"
)]
struct Cli {
    /// Worker threads for table building and sweeps (also via STRIDER_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default configuration file with documented defaults.
    Config(ConfigCmd),
    /// Build the feasibility table of verified keyframe transitions.
    Feastable(FeastableCmd),
    /// Synthesize and verify the keyframe decision strategy.
    Synth(SynthCmd),
    /// Run one closed-loop episode and write its trace.
    Simulate(SimulateCmd),
    /// Run a success-rate or maximum-disturbance sweep.
    Sweep(SweepCmd),
}

#[derive(Args)]
struct ConfigCmd {
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeastableCmd {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path; a JSON metadata sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    table: PathBuf,
    /// Output strategy JSON; the verification report is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateCmd {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    strategy: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Push time: step index plus phase fraction (1.3 = phase 0.3 of step 1).
    #[arg(long)]
    push_phase: Option<f64>,
    /// Push velocity change along the walking direction (m/s).
    #[arg(long)]
    push_vx: Option<f64>,
    /// Push velocity change to the left (m/s).
    #[arg(long)]
    push_vy: Option<f64>,
    /// Push direction in degrees (0 = forward, 90 = left).
    #[arg(long)]
    push_direction: Option<f64>,
    /// Push magnitude (m/s).
    #[arg(long)]
    push_magnitude: Option<f64>,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    strategy: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `rate` (success per direction × magnitude × phase cell) or `envelope`
    /// (maximum recoverable magnitude per direction × phase cell).
    #[arg(long)]
    mode: String,
    /// Direction count (a bare integer: N evenly spaced) or an explicit
    /// list of degrees (comma-separated, or a single value with a decimal
    /// point).
    #[arg(long, default_value = "45.0")]
    directions: String,
    /// Comma list of push magnitudes for rate mode (m/s).
    #[arg(long, default_value = "0.1,0.2,0.3")]
    magnitudes: String,
    /// Phase step for rate mode (fraction of one step).
    #[arg(long, default_value_t = 0.01)]
    phase_step: f64,
    /// Comma list of phases for envelope mode, in percent of one step.
    #[arg(long, default_value = "0,30,60,90")]
    phases: String,
    /// Envelope bisection resolution (m/s).
    #[arg(long, default_value_t = 0.005)]
    resolution: f64,
    /// Envelope search ceiling (m/s).
    #[arg(long, default_value_t = 1.2)]
    max_magnitude: f64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: String,
    config_hash: &'a str,
    inputs: Vec<String>,
    outputs: Vec<String>,
    tool_version: &'a str,
    wall_time_s: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .or_else(|| {
            std::env::var("STRIDER_JOBS")
                .ok()
                .and_then(|v| v.parse().ok())
        });
    if let Some(n) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let started = Instant::now();
    let code = match &cli.command {
        Command::Config(cmd) => run_config(cmd),
        Command::Feastable(cmd) => run_feastable(cmd, started),
        Command::Synth(cmd) => run_synth(cmd, started),
        Command::Simulate(cmd) => run_simulate(cmd, started),
        Command::Sweep(cmd) => run_sweep(cmd, started),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("strider: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CmdError {
    code: u8,
    message: String,
}

fn err(code: u8, message: impl Into<String>) -> CmdError {
    CmdError {
        code,
        message: message.into(),
    }
}

fn load_config(path: &Path) -> Result<StackConfig, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(EXIT_IO, format!("reading {}: {e}", path.display())))?;
    StackConfig::parse(&text).map_err(|e| err(EXIT_CONFIG, e.to_string()))
}

fn write_output(path: &Path, contents: &str) -> Result<(), CmdError> {
    write_atomic(path, contents)
        .map_err(|e| err(EXIT_IO, format!("writing {}: {e}", path.display())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(
    out: &Path,
    config_hash: &str,
    inputs: &[&Path],
    outputs: &[&Path],
    started: Instant,
) -> Result<(), CmdError> {
    let manifest = RunManifest {
        command: std::env::args().collect::<Vec<_>>().join(" "),
        config_hash,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    write_output(&manifest_path(out), &text)
}

fn run_config(cmd: &ConfigCmd) -> Result<(), CmdError> {
    let text = StackConfig::default_ini();
    match &cmd.out {
        Some(path) => write_output(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_feastable(cmd: &FeastableCmd, started: Instant) -> Result<(), CmdError> {
    let config = load_config(&cmd.config)?;
    let hash = config.config_hash();
    let table = build_feasibility_table(&config.model, &config.pipm, &config.planner);
    let csv = table.to_csv();
    let meta = table.meta(&hash, &config.model);
    let meta_path = cmd.out.with_extension("meta.json");
    write_output(&cmd.out, &csv)?;
    write_output(
        &meta_path,
        &serde_json::to_string_pretty(&meta).expect("meta serialization"),
    )?;
    eprintln!(
        "feasibility table: {} rows ({} crossed candidates), {} feasible",
        meta.total_rows, meta.crossed_rows, meta.feasible_rows
    );
    write_manifest(
        &cmd.out,
        &hash,
        &[&cmd.config],
        &[&cmd.out, &meta_path],
        started,
    )
}

fn load_table(path: &Path, config_hash: &str) -> Result<(FeasibilityTable, TableMeta), CmdError> {
    let csv = std::fs::read_to_string(path)
        .map_err(|e| err(EXIT_IO, format!("reading {}: {e}", path.display())))?;
    let meta_path = path.with_extension("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| err(EXIT_IO, format!("reading {}: {e}", meta_path.display())))?;
    let meta: TableMeta = serde_json::from_str(&meta_text)
        .map_err(|e| err(EXIT_IO, format!("parsing {}: {e}", meta_path.display())))?;
    if meta.config_hash != config_hash {
        return Err(err(
            EXIT_MISMATCH,
            format!(
                "table was built for config {} but the current config hashes to {}",
                &meta.config_hash[..12.min(meta.config_hash.len())],
                &config_hash[..12]
            ),
        ));
    }
    if meta.content_digest != content_digest(&csv) {
        return Err(err(
            EXIT_MISMATCH,
            "table content does not match its recorded digest (file edited after build)",
        ));
    }
    let table = FeasibilityTable::from_csv(&csv).map_err(|e| err(EXIT_IO, e.to_string()))?;
    Ok((table, meta))
}

fn run_synth(cmd: &SynthCmd, started: Instant) -> Result<(), CmdError> {
    let config = load_config(&cmd.config)?;
    let hash = config.config_hash();
    let (table, _meta) = load_table(&cmd.table, &hash)?;
    let game = build_game(
        &table,
        config.planner.env_quiet_moves as u8,
        config.planner.descent_rule_lateral,
        &hash,
    )
    .map_err(|e| err(EXIT_UNREALIZABLE, format!("game construction: {e}")))?;
    let strategy = match synthesize(&game) {
        Ok(s) => s,
        Err(unreal) => {
            return Err(err(
                EXIT_UNREALIZABLE,
                format!("{}\n{}", unreal, unreal.counterplay),
            ))
        }
    };
    let report = verify_strategy(&strategy, &game);
    let report_path = cmd.out.with_extension("verify.txt");
    write_output(&cmd.out, &strategy.to_json())?;
    write_output(&report_path, &report.to_string())?;
    eprintln!(
        "strategy: {} entries, {} admissible perturbation targets",
        strategy.entries.len(),
        strategy.admissible_targets.len()
    );
    eprint!("{report}");
    if !report.clean() {
        return Err(err(
            EXIT_UNREALIZABLE,
            "strategy verification reported violations",
        ));
    }
    write_manifest(
        &cmd.out,
        &hash,
        &[&cmd.config, &cmd.table],
        &[&cmd.out, &report_path],
        started,
    )
}

fn load_artifacts(
    config: &StackConfig,
    table_path: &Path,
    strategy_path: &Path,
) -> Result<SimEngine, CmdError> {
    let hash = config.config_hash();
    let (table, _meta) = load_table(table_path, &hash)?;
    let strategy_text = std::fs::read_to_string(strategy_path)
        .map_err(|e| err(EXIT_IO, format!("reading {}: {e}", strategy_path.display())))?;
    let strategy =
        Strategy::from_json(&strategy_text).map_err(|e| err(EXIT_IO, e.to_string()))?;
    let game: GameStructure = build_game(
        &table,
        config.planner.env_quiet_moves as u8,
        config.planner.descent_rule_lateral,
        &hash,
    )
    .map_err(|e| err(EXIT_MISMATCH, format!("game construction: {e}")))?;
    SimEngine::new(
        config.clone(),
        Arc::new(table),
        Arc::new(game),
        Arc::new(strategy),
    )
    .map_err(|e| err(EXIT_MISMATCH, e.to_string()))
}

fn push_events(cmd: &SimulateCmd) -> Result<Vec<PerturbationEvent>, CmdError> {
    let Some(phase) = cmd.push_phase else {
        if cmd.push_vx.is_some()
            || cmd.push_vy.is_some()
            || cmd.push_direction.is_some()
            || cmd.push_magnitude.is_some()
        {
            return Err(err(EXIT_SCENARIO, "--push-phase is required with push flags"));
        }
        return Ok(Vec::new());
    };
    if phase < 0.0 || !phase.is_finite() {
        return Err(err(EXIT_SCENARIO, "--push-phase must be a finite value >= 0"));
    }
    let event = match (cmd.push_vx, cmd.push_vy, cmd.push_direction, cmd.push_magnitude) {
        (vx, vy, None, None) if vx.is_some() || vy.is_some() => {
            let (vx, vy) = (vx.unwrap_or(0.0), vy.unwrap_or(0.0));
            PerturbationEvent {
                phase,
                direction_deg: vy.atan2(vx).to_degrees(),
                magnitude: (vx * vx + vy * vy).sqrt(),
            }
        }
        (None, None, Some(direction), Some(magnitude)) => {
            if magnitude < 0.0 {
                return Err(err(EXIT_SCENARIO, "--push-magnitude must be >= 0"));
            }
            PerturbationEvent {
                phase,
                direction_deg: direction,
                magnitude,
            }
        }
        _ => {
            return Err(err(
                EXIT_SCENARIO,
                "specify either --push-vx/--push-vy or --push-direction with --push-magnitude",
            ))
        }
    };
    Ok(vec![event])
}

fn run_simulate(cmd: &SimulateCmd, started: Instant) -> Result<(), CmdError> {
    let config = load_config(&cmd.config)?;
    let hash = config.config_hash();
    let events = push_events(cmd)?;
    let engine = load_artifacts(&config, &cmd.table, &cmd.strategy)?;
    let result = engine.run(&events, true);
    write_output(&cmd.out, &result.trace_jsonl())?;
    eprintln!(
        "episode: {:?}{}{}",
        result.outcome,
        result
            .cause
            .map(|c| format!(" ({c})"))
            .unwrap_or_default(),
        result
            .steps_to_recovery
            .map(|s| format!(", recovered in {s} steps"))
            .unwrap_or_default(),
    );
    write_manifest(
        &cmd.out,
        &hash,
        &[&cmd.config, &cmd.table, &cmd.strategy],
        &[&cmd.out],
        started,
    )
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CmdError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| err(EXIT_SCENARIO, format!("bad {what} `{s}`: {e}")))
        })
        .collect()
}

fn parse_directions(text: &str) -> Result<Vec<f64>, CmdError> {
    // A bare integer is a count of evenly spaced directions; anything with a
    // comma or a decimal point is an explicit list of degrees.
    if !text.contains(',') && !text.contains('.') {
        if let Ok(n) = text.trim().parse::<u32>() {
            if n == 0 {
                return Err(err(EXIT_SCENARIO, "--directions count must be positive"));
            }
            return Ok((0..n).map(|i| 360.0 * i as f64 / n as f64).collect());
        }
    }
    parse_list(text, "direction")
}

fn run_sweep(cmd: &SweepCmd, started: Instant) -> Result<(), CmdError> {
    let config = load_config(&cmd.config)?;
    let hash = config.config_hash();
    let directions = parse_directions(&cmd.directions)?;
    let engine = load_artifacts(&config, &cmd.table, &cmd.strategy)?;
    let csv = match cmd.mode.as_str() {
        "rate" => {
            if cmd.phase_step <= 0.0 || cmd.phase_step >= 1.0 {
                return Err(err(EXIT_SCENARIO, "--phase-step must be in (0, 1)"));
            }
            let magnitudes = parse_list(&cmd.magnitudes, "magnitude")?;
            let mut phases = Vec::new();
            let mut p = 0.0;
            while p < 1.0 - 1e-12 {
                phases.push(p);
                p += cmd.phase_step;
            }
            let grid = sweep_success_rate(&engine, &directions, &magnitudes, &phases);
            eprintln!(
                "rate sweep: {} cells, {} recovered",
                grid.rate_cells.len(),
                grid.rate_cells.iter().filter(|c| c.recovered).count()
            );
            grid.rate_csv()
        }
        "envelope" => {
            let phases: Vec<f64> = parse_list(&cmd.phases, "phase")?
                .into_iter()
                .map(|p| p / 100.0)
                .collect();
            if phases.iter().any(|p| !(0.0..1.0).contains(p)) {
                return Err(err(EXIT_SCENARIO, "--phases must be percentages in [0, 100)"));
            }
            if cmd.resolution <= 0.0 {
                return Err(err(EXIT_SCENARIO, "--resolution must be positive"));
            }
            let grid = sweep_envelope(
                &engine,
                &directions,
                &phases,
                cmd.resolution,
                cmd.max_magnitude,
            );
            eprintln!("envelope sweep: {} cells", grid.envelope_cells.len());
            grid.envelope_csv()
        }
        other => {
            return Err(err(
                EXIT_SCENARIO,
                format!("unknown sweep mode `{other}` (use rate or envelope)"),
            ))
        }
    };
    write_output(&cmd.out, &csv)?;
    write_manifest(
        &cmd.out,
        &hash,
        &[&cmd.config, &cmd.table, &cmd.strategy],
        &[&cmd.out],
        started,
    )
}
