use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jamrelay::exec::{map_slice, Execution};
use jamrelay::oracle::{audit_run, AuditLimits};
use jamrelay::scenario::{apply_preset, load_scenario_file, ScenarioConfig, ScenarioError, PRESET_NAMES};
use jamrelay::sim::{
    compute_metrics, export, read_log_csv, run_episode, Metrics, RotorBounds, SimError, SimLog,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "jamrelay", version, about = "Jamming-resilient relay episodes: run, score and audit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode and export its logs.
    Run(RunArgs),
    /// Recompute metrics from an exported log.
    Metrics(MetricsArgs),
    /// Run several presets side by side, one output directory each.
    Sweep(SweepArgs),
    /// Check an exported log against the closed-loop invariants.
    Audit(AuditArgs),
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "JAMRELAY_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Preset applied on top of the scenario.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Episode length (s).
    #[arg(long)]
    duration: Option<f64>,
    /// Log to compare positions against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Outage threshold on the end-to-end capacity.
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated preset names, or `all`.
    #[arg(long, value_delimiter = ',', required = true)]
    presets: Vec<String>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    log: PathBuf,
    /// Take rotor bounds from this scenario instead of the defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::Scenario(s) => scenario_code(s),
            e if e.is_solver_failure() => EXIT_SOLVER,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure { code: scenario_code(&e), message: e.to_string() }
    }
}

fn scenario_code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Io { .. } => EXIT_FAILURE,
        _ => EXIT_VALIDATION,
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_FAILURE, message: format!("{}: {e}", path.display()) }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn build_config(
    scenario: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
    duration: Option<f64>,
) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match scenario {
        Some(p) => load_scenario_file(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(name) = preset {
        cfg = apply_preset(&cfg, name)?;
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run, export and summarise one episode. An aborted run still exports its
/// partial log before the solver failure is reported.
fn run_and_export(cfg: &ScenarioConfig, baseline: Option<&SimLog>, out: &Path) -> Result<(SimLog, Metrics), Failure> {
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let toml_path = out.join("scenario.toml");
    std::fs::write(&toml_path, cfg.to_toml_string()).map_err(|e| io_failure(&toml_path, e))?;
    let bounds = RotorBounds::from_config(cfg);
    let threshold = cfg.sim.outage_threshold;
    match run_episode(cfg) {
        Ok(log) => {
            let metrics = compute_metrics(&log, baseline, threshold, &bounds)?;
            export(&log, &metrics, baseline, cfg.ocp.alignment_floor, out)?;
            Ok((log, metrics))
        }
        Err(SimError::Aborted { time, reason, partial }) => {
            if !partial.is_empty() {
                let metrics = compute_metrics(&partial, None, threshold, &bounds)?;
                export(&partial, &metrics, None, cfg.ocp.alignment_floor, out)?;
            }
            Err(SimError::Aborted { time, reason, partial }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn print_metrics(m: &Metrics) {
    println!("min_capacity       {:.6e}", m.min_capacity);
    println!("mean_capacity      {:.6e}", m.mean_capacity);
    println!("mean_eff_21        {:.6e}", m.mean_eff_21);
    println!("mean_eff_10        {:.6e}", m.mean_eff_10);
    println!("outage_count       {}", m.outage_count);
    for o in &m.outages {
        println!("  outage {:8.3} .. {:8.3} s ({} rows)", o.start, o.end, o.rows);
    }
    println!("max_bound_violation {:.3e}", m.max_bound_violation);
    if let Some(d) = m.max_position_deviation_vs_baseline {
        println!("max_position_deviation_vs_baseline {d:.6e}");
    }
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let cfg = build_config(a.scenario.as_deref(), a.preset.as_deref(), a.seed, a.duration)?;
    let baseline = a.baseline.as_deref().map(read_log_csv).transpose()?;
    let (log, metrics) = run_and_export(&cfg, baseline.as_ref(), &a.out.out)?;
    println!("rows               {}", log.len());
    print_metrics(&metrics);
    if let Some(t) = log.median_solve_time() {
        println!("median solve time  {:.3} ms", t * 1e3);
    }
    println!("output             {}", a.out.out.display());
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<(), Failure> {
    let log = read_log_csv(&a.log)?;
    let baseline = a.baseline.as_deref().map(read_log_csv).transpose()?;
    let m = compute_metrics(&log, baseline.as_ref(), a.threshold, &RotorBounds::default())?;
    print_metrics(&m);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let names: Vec<String> = if a.presets.iter().any(|p| p == "all") {
        PRESET_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.presets.clone()
    };
    let configs = names
        .iter()
        .map(|n| build_config(None, Some(n), None, a.duration))
        .collect::<Result<Vec<_>, _>>()?;
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let jobs: Vec<(&String, &ScenarioConfig)> = names.iter().zip(&configs).collect();
    let results = map_slice(exec, &jobs, |(name, cfg)| run_and_export(cfg, None, &a.out.out.join(name)));
    let mut worst: Option<Failure> = None;
    println!("{:<36} {:>12} {:>12} {:>8}", "preset", "min_C", "mean_C", "outages");
    for (name, r) in names.iter().zip(results) {
        match r {
            Ok((_, m)) => println!(
                "{name:<36} {:>12.4e} {:>12.4e} {:>8}",
                m.min_capacity, m.mean_capacity, m.outage_count
            ),
            Err(f) => {
                println!("{name:<36} failed: {}", f.message);
                if worst.as_ref().map_or(true, |w| f.code > w.code) {
                    worst = Some(f);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn cmd_audit(a: AuditArgs) -> Result<(), Failure> {
    let log = read_log_csv(&a.log)?;
    let limits = match &a.scenario {
        Some(p) => AuditLimits::from_config(&load_scenario_file(p)?),
        None => AuditLimits::default(),
    };
    let violations = audit_run(&log, &limits);
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!("audit clean: {} rows", log.len());
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILURE,
            message: format!("{} violation(s)", violations.len()),
        })
    }
}
