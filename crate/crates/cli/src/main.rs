//! `superclt`: exact reports, simulation and limit-theorem tests for
//! finite-state superprocesses with immigration.
//!
//! Exit codes: 0 pass, 1 test failure or refusal, 2 usage or configuration error.

mod battery;
mod commands;
mod functions;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use superclt::analyze::LlnHorizons;
use superclt::simulate::{with_threads, SimMode};

use crate::commands::{
    clt_run, constants_document, ensemble_csv, laplace_csv, lln_run, martingale_run, moments_csv,
    sim_config, simulate, spectral_lines, CltRequest, CltSelection, Loaded, TestRun,
};
use crate::functions::{parse_list, FunctionSpec};
use crate::output::{to_json, verdict_document, OutputDir};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input, unwritable output.
    Usage(String),
    /// A test or computation declined its input, or failed numerically.
    Refused(String),
}

impl CliError {
    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Refused(m) => m.clone(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Refused(_) => 1,
        }
    }
}

impl From<superclt::Error> for CliError {
    fn from(e: superclt::Error) -> Self {
        use superclt::Error as E;
        match e {
            E::Io { .. } | E::Parse { .. } | E::Dimension { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Refused(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "superclt", version, about = "Finite-state superprocesses with immigration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArg {
    /// Scenario file (TOML).
    #[arg(value_name = "SCENARIO", required_unless_present = "scenario")]
    path: Option<PathBuf>,
    #[arg(long = "scenario", value_name = "PATH", conflicts_with = "path")]
    scenario: Option<PathBuf>,
}

impl ScenarioArg {
    fn get(&self) -> PathBuf {
        self.scenario.clone().or_else(|| self.path.clone()).expect("clap enforces one")
    }
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Directory for output files and the run manifest; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing output files whose content differs.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check every scenario invariant and report derived constants.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Eigenvalue clusters as JSON lines.
    Spectral {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Exact Laplace functional E exp(-theta <f, Y_t>) as CSV.
    Laplace {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value = "one")]
        f: String,
        #[arg(long, default_value = "0.25,1,4")]
        theta: String,
        #[arg(long, default_value = "0.5,1,2")]
        times: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exact first and second moments of <f, Y_t> as CSV.
    Moments {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Repeatable; defaults to `one` and every eigenfunction.
        #[arg(long)]
        f: Vec<String>,
        #[arg(long, default_value = "0.5,1,2")]
        times: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Limit constants of the central limit theorem as JSON.
    CltConstants {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        h: Option<String>,
        #[arg(long)]
        g: Option<String>,
    },
    /// Simulate an ensemble; one CSV row per replicate and snapshot.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "1")]
        snapshots: String,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// full, native_only or immigration_only.
        #[arg(long, default_value = "full")]
        mode: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Constant-mean test of H_t^{k,j}.
    MartingaleTest {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "1,2,4,8")]
        snapshots: String,
        #[arg(long, default_value_t = 100_000)]
        replicates: usize,
        /// Eigenvalue cluster, from 1.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Member of the cluster, from 1.
        #[arg(long, default_value_t = 1)]
        j: usize,
        /// Flip the sign of the immigration correction; the test should fail.
        #[arg(long)]
        negative_control: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Law of large numbers for e^{lambda t} <f, Y_t>.
    LlnTest {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "phi1")]
        f: String,
        /// The two test horizons t1,t2.
        #[arg(long, default_value = "4,8")]
        snapshots: String,
        /// Limit proxy horizon is t2 + lookahead; defaults to t2.
        #[arg(long)]
        lookahead: Option<f64>,
        #[arg(long, default_value_t = 20_000)]
        replicates: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Joint central limit theorem at horizon t.
    CltTest {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        h: Option<String>,
        #[arg(long)]
        g: Option<String>,
        #[arg(long, default_value_t = 12.0)]
        t: f64,
        /// Defaults to t.
        #[arg(long)]
        lookahead: Option<f64>,
        #[arg(long, default_value_t = 50_000)]
        replicates: usize,
        /// Multiply the reference sigma_f^2; values other than 1 are negative controls.
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Every cross-check and test on each scenario of a directory.
    FullBattery {
        #[arg(long, default_value = "scenarios")]
        scenarios: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50_000)]
        replicates: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value = "battery-out")]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let threads = match std::env::var("SUPERCLT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => {
                eprintln!("error: SUPERCLT_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        },
        Err(_) => None,
    };
    let result = match threads {
        Some(n) => with_threads(n, || run(cli.command)).unwrap_or_else(|e| Err(e.into())),
        None => run(cli.command),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn list(s: &str) -> Result<Vec<f64>, CliError> {
    parse_list(s).map_err(CliError::Usage)
}

fn function(s: &str) -> Result<FunctionSpec, CliError> {
    FunctionSpec::parse(s).map_err(CliError::Usage)
}

fn optional_function(s: &Option<String>) -> Result<Option<FunctionSpec>, CliError> {
    s.as_deref().map(function).transpose()
}

/// Prints `content` or writes it as `{subcommand}-{hash8}-{seed}.{ext}`.
fn emit_single(
    ctx: &Loaded,
    out: &OutArgs,
    subcommand: &str,
    seed: Option<u64>,
    ext: &str,
    content: &str,
) -> Result<(), CliError> {
    match &out.out {
        None => print!("{content}"),
        Some(dir) => {
            let mut od = OutputDir::create(dir, out.overwrite, subcommand, Some(ctx.hash.clone()), seed)?;
            let stem = format!("{subcommand}-{}-{}", ctx.hash8(), seed.unwrap_or(0));
            let path = od.write(&format!("{stem}.{ext}"), content)?;
            od.finish(&format!("{stem}.manifest.json"))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Prints the verdict document; with `--out`, also writes it and the CSV.
fn emit_test(ctx: &Loaded, out: &OutArgs, subcommand: &str, seed: u64, run: TestRun) -> Result<bool, CliError> {
    let doc = to_json(&verdict_document(&run.verdict, run.inputs));
    print!("{doc}");
    if let Some(dir) = &out.out {
        let mut od = OutputDir::create(dir, out.overwrite, subcommand, Some(ctx.hash.clone()), Some(seed))?;
        let stem = format!("{subcommand}-{}-{seed}", ctx.hash8());
        od.write(&format!("{stem}.json"), &doc)?;
        od.write(&format!("{stem}.csv"), &run.csv)?;
        od.finish(&format!("{stem}.manifest.json"))?;
    }
    for c in run.verdict.failed_checks() {
        eprintln!("failed: {} = {} not in [{}, {}]", c.name, c.value, c.lower, c.upper);
    }
    Ok(run.verdict.pass)
}

fn run(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Validate { scenario } => {
            let s = superclt::load_scenario(scenario.get())?;
            let report = superclt::validate(&s)?;
            println!("{report}");
            Ok(report.passed())
        }
        Command::Spectral { scenario } => {
            let ctx = Loaded::open(&scenario.get())?;
            print!("{}", spectral_lines(&ctx));
            Ok(true)
        }
        Command::Laplace {
            scenario,
            f,
            theta,
            times,
            out,
        } => {
            let ctx = Loaded::open(&scenario.get())?;
            let csv = laplace_csv(&ctx, &function(&f)?, &list(&theta)?, &list(&times)?)?;
            emit_single(&ctx, &out, "laplace", None, "csv", &csv)?;
            Ok(true)
        }
        Command::Moments {
            scenario,
            f,
            times,
            out,
        } => {
            let ctx = Loaded::open(&scenario.get())?;
            let specs = if f.is_empty() {
                commands::all_functions(&ctx)
            } else {
                f.iter().map(|s| function(s)).collect::<Result<_, _>>()?
            };
            let csv = moments_csv(&ctx, &specs, &list(&times)?)?;
            emit_single(&ctx, &out, "moments", None, "csv", &csv)?;
            Ok(true)
        }
        Command::CltConstants { scenario, f, h, g } => {
            let ctx = Loaded::open(&scenario.get())?;
            let (f, h, g) = (optional_function(&f)?, optional_function(&h)?, optional_function(&g)?);
            let selection = CltSelection::resolve(&ctx, f.as_ref(), h.as_ref(), g.as_ref())?;
            print!("{}", to_json(&constants_document(&selection.constants(&ctx)?)));
            Ok(true)
        }
        Command::Simulate {
            scenario,
            sim,
            snapshots,
            replicates,
            mode,
            out,
        } => {
            let ctx = Loaded::open(&scenario.get())?;
            let mode = SimMode::parse(&mode)
                .ok_or_else(|| CliError::Usage(format!("unknown mode `{mode}`")))?;
            let config = sim_config(sim.dt, list(&snapshots)?, replicates, sim.seed, mode);
            config.check().map_err(|e| CliError::Usage(e.to_string()))?;
            let ensemble = simulate(&ctx, &config)?;
            if ensemble.failures() > 0 {
                eprintln!("warning: {} replicates failed", ensemble.failures());
            }
            emit_single(&ctx, &out, "simulate", Some(sim.seed), "csv", &ensemble_csv(&ensemble))?;
            Ok(true)
        }
        Command::MartingaleTest {
            scenario,
            sim,
            snapshots,
            replicates,
            k,
            j,
            negative_control,
            out,
        } => {
            let ctx = Loaded::open(&scenario.get())?;
            let times = list(&snapshots)?;
            let config = sim_config(sim.dt, times.clone(), replicates, sim.seed, SimMode::Full);
            config.check().map_err(|e| CliError::Usage(e.to_string()))?;
            let ensemble = simulate(&ctx, &config)?;
            let run = martingale_run(&ctx, &ensemble, k, j, &times, negative_control)?;
            emit_test(&ctx, &out, "martingale-test", sim.seed, run)
        }
        Command::LlnTest {
            scenario,
            sim,
            f,
            snapshots,
            lookahead,
            replicates,
            out,
        } => {
            let ctx = Loaded::open(&scenario.get())?;
            let times = list(&snapshots)?;
            let [t1, t2] = times[..] else {
                return Err(CliError::Usage("--snapshots takes exactly two horizons t1,t2".into()));
            };
            let horizons = LlnHorizons {
                t1,
                t2,
                t_prime: t2 + lookahead.unwrap_or(t2),
            };
            let config = sim_config(sim.dt, vec![t1, t2, horizons.t_prime], replicates, sim.seed, SimMode::Full);
            config.check().map_err(|e| CliError::Usage(e.to_string()))?;
            let ensemble = simulate(&ctx, &config)?;
            let run = lln_run(&ctx, &ensemble, &function(&f)?, horizons)?;
            emit_test(&ctx, &out, "lln-test", sim.seed, run)
        }
        Command::CltTest {
            scenario,
            sim,
            f,
            h,
            g,
            t,
            lookahead,
            replicates,
            sigma_scale,
            out,
        } => {
            let ctx = Loaded::open(&scenario.get())?;
            let (f, h, g) = (optional_function(&f)?, optional_function(&h)?, optional_function(&g)?);
            if f.is_none() && h.is_none() && g.is_none() {
                return Err(CliError::Usage("give at least one of --f, --h, --g".into()));
            }
            let lookahead = lookahead.unwrap_or(t);
            let mut snapshots = vec![t];
            if g.is_some() && lookahead > 0.0 {
                snapshots.push(t + lookahead);
            }
            let config = sim_config(sim.dt, snapshots, replicates, sim.seed, SimMode::Full);
            config.check().map_err(|e| CliError::Usage(e.to_string()))?;
            let selection = CltSelection::resolve(&ctx, f.as_ref(), h.as_ref(), g.as_ref())?;
            // Fail on bad constants before spending time on the simulation.
            selection.constants(&ctx)?;
            let ensemble = simulate(&ctx, &config)?;
            let request = CltRequest {
                names: [f, h, g].map(|s| s.as_ref().map(FunctionSpec::name)),
                selection: &selection,
                t,
                lookahead,
                sigma_scale,
            };
            let run = clt_run(&ctx, &ensemble, &request)?;
            emit_test(&ctx, &out, "clt-test", sim.seed, run)
        }
        Command::FullBattery {
            scenarios,
            seed,
            replicates,
            dt,
            out,
            overwrite,
        } => {
            let opts = battery::BatteryOptions {
                scenarios,
                seed,
                replicates,
                dt,
                out,
                overwrite,
            };
            let records = battery::run(&opts)?;
            for r in &records {
                let detail = if r.detail.is_empty() { String::new() } else { format!(" ({})", r.detail) };
                println!("{:<10} {:<18} {}{detail}", r.scenario, r.test, r.outcome);
            }
            let bad: Vec<String> = records
                .iter()
                .filter(|r| !r.ok())
                .map(|r| format!("{}/{}", r.scenario, r.test))
                .collect();
            if !bad.is_empty() {
                eprintln!("battery failed: {}", bad.join(", "));
            }
            Ok(bad.is_empty())
        }
    }
}
