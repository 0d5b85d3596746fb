//! Command-line front end: scenario validation, single runs, the surface
//! contact comparison, and mode-versus-mode tables.

pub mod fig2;
pub mod output;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vicopt_core::runtime::{compare_baselines, compute_metrics, run_episode, ControllerMode, ModeReport};
use vicopt_core::Scenario;

#[derive(Debug, Parser)]
#[command(name = "vicopt", version, about = "Online impedance-gain optimization with a safety filter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Overrides {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated solve latency in seconds.
    #[arg(long)]
    pub latency: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write trajectory.csv, updates.csv and metrics.txt.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Surface contact with tuned and manual gains; writes fig2.csv and fig2_summary.txt.
    Fig2 {
        /// Use this scenario instead of the bundled one.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run each scenario once per mode and tabulate the metrics.
    Compare {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Comma-separated modes: safe_ongo_vic, constant_gain.
        #[arg(long, value_delimiter = ',', default_value = "constant_gain,safe_ongo_vic")]
        modes: Vec<String>,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Parse and validate a scenario, then print it with defaults filled in.
    Validate { scenario: PathBuf },
}

pub fn load(path: &Path, opts: &Overrides) -> Result<Scenario> {
    let mut s = Scenario::load(path).with_context(|| format!("scenario {}", path.display()))?;
    if let Some(seed) = opts.seed {
        s = s.with_seed(seed);
    }
    if let Some(latency) = opts.latency {
        s = s.with_latency(latency)?;
    }
    Ok(s)
}

fn out_dir(opts: &Overrides, scenario: &Scenario) -> Result<PathBuf> {
    let dir = opts
        .out
        .clone()
        .or_else(|| scenario.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

pub fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, opts } => cmd_run(&load(&scenario, &opts)?, &opts),
        Command::Fig2 { scenario, opts } => {
            let mut s = match scenario {
                Some(p) => load(&p, &opts)?,
                None => fig2::bundled_scenario()?,
            };
            if let Some(seed) = opts.seed {
                s = s.with_seed(seed);
            }
            cmd_fig2(&s, &opts)
        }
        Command::Compare { scenarios, modes, opts } => {
            let modes = parse_modes(&modes)?;
            let loaded = scenarios.iter().map(|p| load(p, &opts)).collect::<Result<Vec<_>>>()?;
            cmd_compare(&loaded, &modes, &opts)
        }
        Command::Validate { scenario } => {
            let s = Scenario::load(&scenario)?;
            println!("{}", s.resolved_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

pub fn parse_modes(names: &[String]) -> Result<Vec<ControllerMode>> {
    let modes = names
        .iter()
        .map(|n| ControllerMode::parse(n.trim()).with_context(|| format!("unknown mode '{n}'")))
        .collect::<Result<Vec<_>>>()?;
    if modes.len() < 2 {
        bail!("compare needs at least two modes, got {}", modes.len());
    }
    Ok(modes)
}

pub fn cmd_run(scenario: &Scenario, opts: &Overrides) -> Result<ExitCode> {
    let dir = out_dir(opts, scenario)?;
    let log = run_episode(scenario)?;
    let metrics = compute_metrics(&log, &scenario.metrics);
    output::write(&dir, "trajectory.csv", &output::trajectory_csv(scenario, &log))?;
    output::write(&dir, "updates.csv", &output::updates_csv(scenario, &log))?;
    let text = output::metrics_text(scenario, &log, &metrics, &scenario.metrics);
    output::write(&dir, "metrics.txt", &text)?;
    print!("{text}");
    if log.terminal.is_some() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_fig2(scenario: &Scenario, opts: &Overrides) -> Result<ExitCode> {
    let dir = out_dir(opts, scenario)?;
    let runs = fig2::run(scenario)?;
    output::write(&dir, "fig2.csv", &fig2::csv(scenario, &runs))?;
    let summary = fig2::summary(&runs);
    output::write(&dir, "fig2_summary.txt", &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

/// One row per scenario and mode.
pub struct ComparisonRow {
    pub scenario: String,
    pub report: ModeReport,
}

pub fn compare(scenarios: &[Scenario], modes: &[ControllerMode]) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for s in scenarios {
        for report in compare_baselines(s, modes)? {
            rows.push(ComparisonRow { scenario: s.name.clone(), report });
        }
    }
    Ok(rows)
}

const TABLE_COLUMNS: [&str; 7] = [
    "scenario",
    "mode",
    "approaching_time_s",
    "settling_time_s",
    "steady_force_variance_N2",
    "min_barrier_m",
    "fitave_total",
];

fn row_cells(r: &ComparisonRow) -> [String; 7] {
    let m = &r.report.metrics;
    [
        r.scenario.clone(),
        r.report.mode.to_string(),
        m.approaching_time.to_string(),
        m.settling_time.to_string(),
        m.steady_force_variance.to_string(),
        m.min_barrier.to_string(),
        format!("{:.6e}", m.fitave_total),
    ]
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = TABLE_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&row_cells(r).join(","));
        s.push('\n');
    }
    s
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let cells: Vec<[String; 7]> = rows.iter().map(row_cells).collect();
    let width: Vec<usize> =
        (0..7).map(|c| cells.iter().map(|r| r[c].len()).chain([TABLE_COLUMNS[c].len()]).max().unwrap_or(0)).collect();
    let mut s = String::new();
    let line = |s: &mut String, row: &[&str]| {
        let padded: Vec<String> = row.iter().zip(&width).map(|(v, w)| format!("{v:<w$}")).collect();
        writeln!(s, "{}", padded.join("  ").trim_end()).unwrap();
    };
    line(&mut s, &TABLE_COLUMNS);
    for r in &cells {
        line(&mut s, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    s
}

pub fn cmd_compare(scenarios: &[Scenario], modes: &[ControllerMode], opts: &Overrides) -> Result<ExitCode> {
    let first = scenarios.first().context("no scenario given")?;
    let dir = match &opts.out {
        Some(_) => out_dir(opts, first)?,
        None => {
            let d = PathBuf::from("out").join("compare");
            fs::create_dir_all(&d).with_context(|| format!("cannot create {}", d.display()))?;
            d
        }
    };
    let rows = compare(scenarios, modes)?;
    output::write(&dir, "comparison.csv", &comparison_csv(&rows))?;
    let table = comparison_table(&rows);
    output::write(&dir, "comparison.txt", &table)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}
