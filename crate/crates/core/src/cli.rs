//! Command-line surface: `simulate`, `sweep` and `verify`.
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage or configuration
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{evaluate, parameter_sweep, summarize_sweep, ScenarioSet};
use crate::config::{parse_config, ConfigError, OutputFormat, ScenarioConfig, ScenarioSelector};
use crate::error::{Error, Result};
use crate::market::MarketTrajectory;
use crate::output::{self, verdict_map, ManifestEntry, RunReport, TimelineRecord, ENGINE_VERSION};
use crate::verify::run_suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "epibubble",
    version,
    about = "Epidemic-driven asset price booms and busts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario (or all) and write trajectories, timeline and report.
    Simulate(RunArgs),
    /// Evaluate a parameter grid and write a summary table plus per-point rows.
    Sweep(RunArgs),
    /// Run the acceptance suite; exits 1 if any criterion fails.
    Verify(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Configuration file (key = value lines or a JSON object).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// myopic | depression | rational | all
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Time step.
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    dt: Option<f64>,
    /// Simulation horizon.
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    horizon: Option<f64>,
    /// csv | json | csv,json
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
    /// Worker threads for sweeps (defaults to the available cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_config(&text)?
            }
            None => ScenarioConfig::default(),
        };
        let invalid = |key: &str, message: String| {
            Error::from(ConfigError::InvalidValue {
                key: key.to_string(),
                message,
            })
        };
        if let Some(name) = &self.scenario {
            cfg.scenario = ScenarioSelector::parse(name)
                .ok_or_else(|| invalid("scenario", format!("unknown scenario `{name}`")))?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(h) = self.horizon {
            cfg.t_end = h;
        }
        if let Some(f) = &self.format {
            let mut formats = f
                .split(',')
                .map(|s| {
                    OutputFormat::parse(s.trim())
                        .ok_or_else(|| invalid("format", format!("unknown format `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            formats.sort();
            formats.dedup();
            cfg.formats = formats;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn workers(&self) -> usize {
        self.workers
            .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
            .unwrap_or(1)
            .max(1)
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
        Command::Verify(args) => verify(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn write_trajectory(
    traj: &MarketTrajectory,
    cfg: &ScenarioConfig,
    manifest: &mut Vec<ManifestEntry>,
) -> Result<()> {
    let stem = traj.scenario.name();
    for format in &cfg.formats {
        let path = cfg.out_dir.join(format!("{stem}.{}", format.extension()));
        manifest.push(output::write_timeseries(traj, *format, &path)?);
    }
    manifest.push(output::write_dat(
        traj,
        &cfg.out_dir.join(format!("{stem}.dat")),
    )?);
    Ok(())
}

fn finish(
    command: &str,
    cfg: ScenarioConfig,
    timeline: Option<TimelineRecord>,
    verdicts: std::collections::BTreeMap<String, crate::analysis::Verdict>,
    manifest: Vec<ManifestEntry>,
    started: Instant,
) -> Result<()> {
    let path = cfg.out_dir.join("report.json");
    let report = RunReport {
        command: command.to_string(),
        config: cfg,
        timeline,
        verdicts,
        manifest,
        engine_version: ENGINE_VERSION.to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest = report.write(&path)?;
    log::info!("wrote {} files", manifest.len());
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => log::warn!("cannot print summary: {e}"),
    }
}

fn simulate(args: &RunArgs) -> Result<i32> {
    let started = Instant::now();
    let cfg = args.load()?;
    let set = cfg.scenario.scenario_set();
    let ev = evaluate(&cfg.params, &cfg.curve, &cfg.grid()?, set)?;
    let mut manifest = Vec::new();
    let chosen = [
        (set.myopic, &ev.myopic),
        (set.rational, &ev.rational),
        (set.depression, &ev.depression),
    ];
    for (wanted, traj) in chosen {
        match traj {
            Some(t) if wanted => write_trajectory(t, &cfg, &mut manifest)?,
            None if wanted => log::warn!("no outbreak, rational scenario has no plateau to solve"),
            _ => {}
        }
    }
    let primary = match cfg.scenario {
        ScenarioSelector::Depression => ev.depression_timeline,
        _ => ev.timeline,
    };
    let timeline = primary.map(|tl| TimelineRecord::new(&tl, &ev.report));
    if let Some(tl) = &timeline {
        manifest.push(output::write_json(
            tl,
            "timeline/json",
            &cfg.out_dir.join("timeline.json"),
        )?);
        print_json(tl);
    }
    if cfg.scenario == ScenarioSelector::All {
        if let Some(tl) = ev.depression_timeline {
            let rec = TimelineRecord::new(&tl, &ev.report);
            let path = cfg.out_dir.join("timeline_depression.json");
            manifest.push(output::write_json(&rec, "timeline/json", &path)?);
        }
    }
    finish(
        "simulate",
        cfg,
        timeline,
        verdict_map(&ev.report),
        manifest,
        started,
    )?;
    Ok(EXIT_OK)
}

fn sweep(args: &RunArgs) -> Result<i32> {
    let started = Instant::now();
    let cfg = args.load()?;
    let spec = if cfg.sweep.is_empty() {
        crate::analysis::SweepSpec::default_grid()
    } else {
        cfg.sweep.clone()
    };
    // The comparison claims need the rational run, so narrowing to myopic
    // still sweeps both boom scenarios.
    let set = match cfg.scenario {
        ScenarioSelector::Depression => cfg.scenario.scenario_set(),
        ScenarioSelector::All => ScenarioSet::ALL,
        _ => ScenarioSet::BOOM,
    };
    let rows = parameter_sweep(
        &cfg.params,
        &cfg.curve,
        &cfg.grid()?,
        &spec,
        set,
        args.workers(),
    )?;
    let summary = summarize_sweep(&rows);
    let mut manifest = vec![output::write_sweep_table(
        &rows,
        &cfg.out_dir.join("sweep_summary.csv"),
    )?];
    manifest.push(output::write_json(
        &summary,
        "sweep/summary",
        &cfg.out_dir.join("sweep_summary.json"),
    )?);
    for row in &rows {
        let path = cfg
            .out_dir
            .join("points")
            .join(format!("point_{:03}.json", row.index));
        manifest.push(output::write_json(row, "sweep/point", &path)?);
    }
    print_json(&summary);
    finish("sweep", cfg, None, Default::default(), manifest, started)?;
    Ok(EXIT_OK)
}

fn verify(args: &RunArgs) -> Result<i32> {
    let started = Instant::now();
    let cfg = args.load()?;
    let outcome = run_suite(&cfg, args.workers(), &cfg.out_dir)?;
    for c in &outcome.criteria {
        println!("{}", c.line());
    }
    let passed = outcome.all_pass();
    let verdicts = outcome
        .criteria
        .iter()
        .map(|c| {
            let v = if c.pass {
                crate::analysis::Verdict::Pass
            } else {
                crate::analysis::Verdict::Fail
            };
            (
                format!("criterion_{:02}_{}", c.id, c.name.replace([' ', '-'], "_")),
                v,
            )
        })
        .collect();
    finish(
        "verify",
        cfg,
        outcome.timeline,
        verdicts,
        outcome.manifest,
        started,
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}
