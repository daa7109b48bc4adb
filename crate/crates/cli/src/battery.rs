//! The full battery: exact cross-checks and every statistical test on each
//! scenario of a directory, with one shared ensemble per scenario.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use superclt::analyze::{LlnHorizons, Verdict};
use superclt::simulate::SimMode;
use superclt::spectral::SpaceClass;

use crate::commands::{
    all_functions, clt_run, first_of_class, laplace_check, lln_run, martingale_run, moment_check,
    sim_config, simulate, CltRequest, CltSelection, Loaded, TestRun,
};
use crate::functions::FunctionSpec;
use crate::output::{to_json, verdict_document, OutputDir, SCHEMA_VERSION};
use crate::CliError;

const MOMENT_TIMES: [f64; 3] = [0.5, 1.0, 2.0];
const MARTINGALE_TIMES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
const LLN: LlnHorizons = LlnHorizons {
    t1: 4.0,
    t2: 8.0,
    t_prime: 16.0,
};
/// The CLT horizon is `24 / |lambda_1|`, so the mean mass has grown by `e^24`
/// before the statistics are formed. Replicates whose limit `W` is tiny make
/// `U_g` heavy-tailed, and this growth keeps them negligible; much more loses
/// `U_g` to rounding. The lookahead equals the horizon.
const CLT_GROWTH: f64 = 24.0;
const CRITICAL_T: f64 = 40.0;

pub struct BatteryOptions {
    pub scenarios: PathBuf,
    pub seed: u64,
    pub replicates: usize,
    pub dt: f64,
    pub out: PathBuf,
    pub overwrite: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub scenario: String,
    pub test: String,
    /// `pass`, `fail`, `refused` or `skipped`.
    pub outcome: String,
    pub detail: String,
}

impl Record {
    fn new(scenario: &str, test: &str, outcome: &str, detail: impl Into<String>) -> Record {
        Record {
            scenario: scenario.into(),
            test: test.into(),
            outcome: outcome.into(),
            detail: detail.into(),
        }
    }

    pub fn ok(&self) -> bool {
        self.outcome == "pass" || self.outcome == "skipped"
    }
}

pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read scenario directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .toml scenarios in {}", dir.display())));
    }
    Ok(files)
}

/// Runs the battery and returns every record. Output files and the manifest
/// are written even when tests fail.
pub fn run(opts: &BatteryOptions) -> Result<Vec<Record>, CliError> {
    let files = scenario_files(&opts.scenarios)?;
    let mut out = OutputDir::create(&opts.out, opts.overwrite, "full-battery", None, Some(opts.seed))?;
    let mut records = Vec::new();
    let mut result = Ok(());
    for path in &files {
        if let Err(e) = run_scenario(path, opts, &mut out, &mut records) {
            // Only output-directory errors abort the battery.
            result = Err(e);
            break;
        }
    }
    let summary = json!({
        "schema": SCHEMA_VERSION,
        "seed": opts.seed,
        "replicates": opts.replicates,
        "dt": opts.dt,
        "scenarios": files.iter().map(|p| stem(p)).collect::<Vec<_>>(),
        "records": records,
        "pass": records.iter().all(Record::ok),
    });
    let written = result.and_then(|_| out.write(&format!("full-battery-{}.json", opts.seed), &to_json(&summary)));
    out.finish(&format!("full-battery-{}.manifest.json", opts.seed))?;
    written?;
    Ok(records)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run_scenario(
    path: &Path,
    opts: &BatteryOptions,
    out: &mut OutputDir,
    records: &mut Vec<Record>,
) -> Result<(), CliError> {
    let name = stem(path);
    let scenario = match superclt::load_scenario(path) {
        Ok(s) => s,
        Err(e) => {
            records.push(Record::new(&name, "validate", "refused", e.to_string()));
            return Ok(());
        }
    };
    let report = match superclt::validate(&scenario) {
        Ok(r) => r,
        Err(e) => {
            records.push(Record::new(&name, "validate", "refused", e.to_string()));
            return Ok(());
        }
    };
    if !report.passed() {
        records.push(Record::new(&name, "validate", "fail", report.violations.join("; ")));
        return Ok(());
    }
    records.push(Record::new(&name, "validate", "pass", ""));
    let ctx = match Loaded::open(path) {
        Ok(c) => c,
        Err(e) => {
            records.push(Record::new(&name, "spectral", "refused", e.message()));
            return Ok(());
        }
    };
    let file = |test: &str, ext: &str| format!("{test}-{}-{}.{ext}", ctx.hash8(), opts.seed);
    let specs = all_functions(&ctx);

    for (test, verdict) in [
        ("moment-check", moment_check(&ctx, &specs, &MOMENT_TIMES)),
        ("laplace-check", laplace_check(&ctx, &specs, &MOMENT_TIMES)),
    ] {
        match verdict {
            Ok(v) => {
                let doc = verdict_document(&v, json!({ "scenario_hash": ctx.hash, "times": MOMENT_TIMES }));
                out.write(&file(test, "json"), &to_json(&doc))?;
                records.push(outcome(&name, test, &v));
            }
            Err(e) => records.push(Record::new(&name, test, "refused", e.message())),
        }
    }

    if !(ctx.sys.lambda1() < 0.0) {
        for test in ["martingale-test", "lln-test", "clt-test"] {
            records.push(Record::new(&name, test, "skipped", "scenario is not supercritical"));
        }
        return Ok(());
    }

    let critical = first_of_class(&ctx, SpaceClass::Critical);
    let clt_t = CLT_GROWTH / ctx.sys.lambda1().abs();
    let mut snapshots: Vec<f64> = MARTINGALE_TIMES.to_vec();
    snapshots.extend([LLN.t_prime, clt_t, 2.0 * clt_t]);
    if critical.is_some() {
        snapshots.push(CRITICAL_T);
    }
    snapshots.sort_by(f64::total_cmp);
    snapshots.dedup();
    let config = sim_config(opts.dt, snapshots, opts.replicates, opts.seed, SimMode::Full);
    let ensemble = match simulate(&ctx, &config) {
        Ok(e) => e,
        Err(e) => {
            records.push(Record::new(&name, "simulate", "refused", e.message()));
            return Ok(());
        }
    };
    let failures = ensemble.failures();
    records.push(Record::new(
        &name,
        "simulate",
        if failures == 0 { "pass" } else { "fail" },
        format!("{failures} of {} replicates failed", ensemble.replicates()),
    ));

    let mut emit = |test: &str, run: Result<TestRun, CliError>| -> Result<(), CliError> {
        match run {
            Ok(r) => {
                let doc = verdict_document(&r.verdict, r.inputs);
                out.write(&file(test, "json"), &to_json(&doc))?;
                out.write(&file(test, "csv"), &r.csv)?;
                records.push(outcome(&name, test, &r.verdict));
            }
            Err(e) => records.push(Record::new(&name, test, "refused", e.message())),
        }
        Ok(())
    };

    emit(
        "martingale-test",
        martingale_run(&ctx, &ensemble, 1, 1, &MARTINGALE_TIMES, false),
    )?;
    emit("lln-test", lln_run(&ctx, &ensemble, &FunctionSpec::Phi(1), LLN))?;

    let f = first_of_class(&ctx, SpaceClass::Small);
    let g = FunctionSpec::Phi(1);
    let selection = CltSelection::resolve(&ctx, f.as_ref(), None, Some(&g))?;
    let request = CltRequest {
        names: [f.as_ref().map(FunctionSpec::name), None, Some(g.name())],
        selection: &selection,
        t: clt_t,
        lookahead: clt_t,
        sigma_scale: 1.0,
    };
    emit("clt-test", clt_run(&ctx, &ensemble, &request))?;

    if let Some(h) = critical {
        let selection = CltSelection::resolve(&ctx, None, Some(&h), None)?;
        let request = CltRequest {
            names: [None, Some(h.name()), None],
            selection: &selection,
            t: CRITICAL_T,
            lookahead: 0.0,
            sigma_scale: 1.0,
        };
        emit("clt-test-critical", clt_run(&ctx, &ensemble, &request))?;
    }
    Ok(())
}

fn outcome(scenario: &str, test: &str, v: &Verdict) -> Record {
    if v.pass {
        Record::new(scenario, test, "pass", "")
    } else {
        let failed: Vec<String> = v.failed_checks().map(|c| c.name.clone()).collect();
        Record::new(scenario, test, "fail", format!("failed checks: {}", failed.join(", ")))
    }
}
