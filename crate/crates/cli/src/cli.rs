//! Command-line entry point.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hydrozone::benchmark::{report_markdown, BenchmarkReport, Comparison};
use hydrozone::calibration::{CalibrationConfig, MeasurementSet};
use hydrozone::engine::Fidelity;
use hydrozone::series::Table;
use hydrozone::topology::validate_topology;
use hydrozone::weather::WeatherSeries;

use crate::jobs::{default_data_dir, JobStore};
use crate::server::{serve, AppState};
use crate::workflows::{
    bench_to_dir, calibrate_to_dir, model_summary, one_line, parse_instant, read_topology, scaling_to_dir,
    simulate_to_dir, write_synthetic, CalibrateJob, RunConfig, SimulateJob, Synthetic, REPORT_JSON, REPORT_MD,
};

#[derive(Parser, Debug)]
#[command(name = "hydrozone", version, about = "Multi-zone building and floor-heating simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FidelityArg {
    Lofi,
    Hifi,
}

impl From<FidelityArg> for Fidelity {
    fn from(f: FidelityArg) -> Self {
        match f {
            FidelityArg::Lofi => Fidelity::LoFi,
            FidelityArg::Hifi => Fidelity::HiFi,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a parameter table.
    Validate {
        #[arg(long)]
        table: PathBuf,
    },
    /// Summarize the compiled model of a table, or write synthetic inputs.
    Generate {
        #[arg(long, required_unless_present = "synthetic")]
        table: Option<PathBuf>,
        /// random, row:N, typology:X or calibration[:days]
        #[arg(long, conflicts_with = "table")]
        synthetic: Option<Synthetic>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a building over a time window.
    Simulate {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        /// Gains, supply temperatures and flows (CSV).
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "lofi")]
        fidelity: FidelityArg,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Run settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit slab parameters to measured temperatures.
    Calibrate {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        meas: PathBuf,
        /// Calibration settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run settings (TOML).
        #[arg(long)]
        run_config: Option<PathBuf>,
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark scenario or the runtime-scaling table.
    Bench {
        /// Scenario file (TOML).
        #[arg(long, required_unless_present = "scaling")]
        config: Option<PathBuf>,
        /// Zone counts for the runtime table, e.g. 4,6,7,16.
        #[arg(long, value_delimiter = ',', conflicts_with = "config")]
        scaling: Option<Vec<usize>>,
        #[arg(long, default_value_t = 7.0)]
        days: f64,
        #[arg(long, default_value_t = 1.0)]
        hifi_days: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the Markdown report of a calibration or benchmark output.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the local HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 2)]
        max_jobs: usize,
        /// Job store; defaults to JANUS_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::from_toml(&read_text(p)?))
}

fn calibration_markdown(report: &serde_json::Value) -> String {
    let mut s = String::from("# Calibration\n\n| | value |\n|---|---|\n");
    for key in ["iterations", "converged", "J_initial", "J_final"] {
        s += &format!("| {key} | {} |\n", report[key]);
    }
    for (key, label) in [("median_rmse_before", "before"), ("median_rmse_after", "after")] {
        s += &format!(
            "| median RMSE {label} (zone / return, K) | {} / {} |\n",
            report[key]["zone"], report[key]["ret"]
        );
    }
    if let Some(phi) = report.get("Phi_final") {
        s += &format!("\nFinal parameters: `{phi}`\n");
    }
    if let Some(w) = report["warnings"].as_array().filter(|w| !w.is_empty()) {
        s += "\nWarnings:\n\n";
        for line in w {
            s += &format!("- {}\n", line.as_str().unwrap_or_default());
        }
    }
    s
}

/// Markdown for a `report.json` written by `calibrate` or `bench`.
pub fn render_report(out: &Path) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(&read_text(&out.join(REPORT_JSON))?)?;
    if value["kind"] == "benchmark" {
        let report: BenchmarkReport = serde_json::from_value(value["report"].clone())?;
        let comparison: Option<Comparison> = serde_json::from_value(value["comparison"].clone())?;
        Ok(report_markdown(&report, comparison.as_ref()))
    } else {
        Ok(calibration_markdown(&value))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { table } => {
            let report = validate_topology(&read_topology(&table)?);
            if !report.is_valid() {
                bail!("{} violations: {}", report.violations.len(), one_line(&report));
            }
            println!("OK 0 violations");
        }
        Command::Generate {
            table,
            synthetic,
            seed,
            config,
            out,
        } => {
            let path = match synthetic {
                Some(kind) => write_synthetic(&kind, seed, &out)?,
                None => table.expect("clap requires --table"),
            };
            let summary = model_summary(&read_topology(&path)?, &run_config(config.as_deref())?)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("model.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            println!("{summary}");
        }
        Command::Simulate {
            table,
            weather,
            inputs,
            fidelity,
            from,
            to,
            config,
            out,
        } => {
            let config = run_config(config.as_deref())?;
            let weather = WeatherSeries::read(fs::File::open(&weather)?, &config.site)
                .with_context(|| format!("reading {}", weather.display()))?;
            let inputs = inputs.as_deref().map(Table::from_path).transpose()?;
            let (year, t0) = parse_instant(&from, None)?;
            let (_, t1) = parse_instant(&to, Some(year))?;
            let job = SimulateJob {
                topology: read_topology(&table)?,
                weather,
                inputs,
                fidelity: fidelity.into(),
                from: t0,
                to: t1,
                year,
                config,
            };
            println!("{}", simulate_to_dir(&job, &out)?);
        }
        Command::Calibrate {
            table,
            meas,
            config,
            run_config: run_path,
            resume,
            out,
        } => {
            let run = run_config(run_path.as_deref())?;
            let meas = MeasurementSet::read(fs::File::open(&meas)?, &run.site)
                .with_context(|| format!("reading {}", meas.display()))?;
            let config = match config {
                Some(p) => CalibrationConfig::from_toml(&read_text(&p)?)?,
                None => CalibrationConfig::default(),
            };
            let job = CalibrateJob {
                topology: read_topology(&table)?,
                meas,
                config,
                run,
                resume,
            };
            println!("{}", calibrate_to_dir(&job, &out)?);
        }
        Command::Bench {
            config,
            scaling,
            days,
            hifi_days,
            out,
        } => match (config, scaling) {
            (_, Some(zones)) => print!("{}", scaling_to_dir(&zones, days, hifi_days, &out)?),
            (Some(scenario), None) => {
                bench_to_dir(&scenario, None, &out)?;
                print!("{}", read_text(&out.join(REPORT_MD))?);
            }
            (None, None) => bail!("bench needs --config or --scaling"),
        },
        Command::Report { out } => {
            let md = render_report(&out)?;
            fs::write(out.join(REPORT_MD), &md)?;
            print!("{md}");
        }
        Command::Serve {
            bind,
            max_jobs,
            data_dir,
        } => {
            let store = JobStore::open(data_dir.unwrap_or_else(default_data_dir))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(bind, AppState::new(store, max_jobs)))?;
        }
    }
    Ok(())
}

/// Runs the command and maps the outcome to an exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}
