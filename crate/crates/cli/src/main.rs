use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aoi_core::error::{ConfigError, HarnessError};
use aoi_core::harness::{self, PresetOutput};
use aoi_core::ipra::SearchBudget;
use aoi_core::sim::{self, Scenario};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aoi", version, about = "Age-of-information scheduling experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Horizon in slots (overrides the config).
    #[arg(long, global = true)]
    horizon: Option<u64>,
    /// Warmup in slots (overrides the config).
    #[arg(long, global = true)]
    warmup: Option<u64>,
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Output CSV path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replications and solvers.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Also write a per-slot trace of one replication.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a named experiment preset with key=value overrides.
    Preset {
        name: String,
        overrides: Vec<String>,
    },
    /// Tabulate index values over a state grid.
    IndexTable {
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 20)]
        a_max: u64,
        #[arg(long, default_value_t = 40)]
        d_max: u64,
    },
    /// Check a config file and list problems.
    Validate { config: PathBuf },
    /// Tune IPRA's transmission probability and index threshold.
    OptimizeIpra {
        config: PathBuf,
        #[arg(long)]
        p_min: Option<f64>,
        #[arg(long)]
        p_max: Option<f64>,
        #[arg(long)]
        threshold_min: Option<f64>,
        #[arg(long)]
        threshold_max: Option<f64>,
        /// Frames simulated per evaluation.
        #[arg(long, default_value_t = 100_000)]
        search_horizon: u64,
    },
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load(path: &Path, common: &Common) -> Result<Scenario, HarnessError> {
    let mut s = harness::load_config(path)?;
    if let Some(v) = common.seed {
        s.seed = v;
    }
    if let Some(v) = common.horizon {
        s.horizon = v;
    }
    if let Some(v) = common.warmup {
        s.warmup = Some(v);
    }
    if let Some(v) = common.replications {
        s.replications = v;
    }
    s.validate().map_err(|e| match e {
        aoi_core::SimError::Invalid(f) => HarnessError::Config(ConfigError::Invalid(f)),
        other => HarnessError::Sim(other),
    })?;
    Ok(s)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    let common = &cli.common;
    match cli.command {
        Command::Run { config, trace } => {
            let scenario = load(&config, common)?;
            if let Some(path) = trace {
                sim::run_traced(&scenario, BufWriter::new(File::create(path)?))?;
            }
            let report = sim::run_replications(&scenario)?;
            eprintln!(
                "{}: mean AoI {:.6}{}",
                report.policy,
                report.mean_aoi,
                report.std_error.map(|s| format!(" ± {s:.6}")).unwrap_or_default()
            );
            harness::write_run_csv(&scenario, &report, open_out(common.out.as_deref())?)?;
        }
        Command::Preset { name, mut overrides } => {
            let flags = [
                ("seed", common.seed.map(|v| v.to_string())),
                ("horizon", common.horizon.map(|v| v.to_string())),
                ("warmup", common.warmup.map(|v| v.to_string())),
                ("replications", common.replications.map(|v| v.to_string())),
            ];
            for (key, value) in flags {
                if let Some(v) = value {
                    overrides.push(format!("{key}={v}"));
                }
            }
            let preset = harness::resolve_preset(&name, &overrides)?;
            let output = harness::run_preset_rows(&preset)?;
            harness::write_preset_csv(&preset, &output, open_out(common.out.as_deref())?)?;
            let kind = match output {
                PresetOutput::Results(_) => "result",
                PresetOutput::Index(_) => "index",
            };
            eprintln!("{name}: {} {kind} rows", output.len());
        }
        Command::IndexTable { lambda, a_max, d_max } => {
            let rows = harness::index_table(lambda, a_max, d_max)?;
            harness::write_index_rows(&rows, open_out(common.out.as_deref())?)?;
        }
        Command::Validate { config } => {
            let scenario = load(&config, common)?;
            eprintln!(
                "{}: ok ({} terminals, policy {}, horizon {})",
                config.display(),
                scenario.n_terminals(),
                scenario.policy,
                scenario.horizon
            );
        }
        Command::OptimizeIpra {
            config,
            p_min,
            p_max,
            threshold_min,
            threshold_max,
            search_horizon,
        } => {
            let scenario = load(&config, common)?;
            let ((p_lo, p_hi), (t_lo, t_hi)) = harness::ipra_search_ranges(&scenario.lambdas)?;
            let budget = SearchBudget {
                horizon: search_horizon,
                warmup: sim::default_warmup(search_horizon),
                seed: scenario.seed,
                ..SearchBudget::default()
            };
            let best = aoi_core::ipra::optimize_params(
                &scenario.lambdas,
                &scenario.ipra,
                (p_min.unwrap_or(p_lo), p_max.unwrap_or(p_hi)),
                (threshold_min.unwrap_or(t_lo), threshold_max.unwrap_or(t_hi)),
                &budget,
            )?;
            if best.fallback {
                eprintln!("profile not unimodal; result from lattice search");
            }
            let mut out = open_out(common.out.as_deref())?;
            writeln!(out, "p,index_threshold,mean_aoi,std_error,evaluations,fallback")?;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                best.params.p, best.params.index_threshold, best.mean_aoi, best.std_error, best.evaluations, best.fallback
            )?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let HarnessError::Config(c) = &e {
                for line in c.diagnostics() {
                    eprintln!("error: {line}");
                }
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
