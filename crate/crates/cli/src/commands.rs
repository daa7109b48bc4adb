//! Subcommand bodies. Each returns its primary document and optional CSV so
//! the single-test subcommands and the battery share one implementation.

use std::path::Path;

use serde_json::{json, Value};
use superclt::analyze::{
    clt_test, lln_test, martingale_test, Check, CltProfiles, LlnHorizons, Verdict,
};
use superclt::cumulant::{laplace_moments, log_laplace_y_signed};
use superclt::moments::{
    clt_constants, martingale_constants, mean_y_quadrature, second_moment_y,
    second_moment_y_quadrature, CltConstants, MomentPlan,
};
use superclt::simulate::{simulate_ensemble, PathEnsemble, SimConfig, SimMode};
use superclt::spectral::SpaceClass;
use superclt::{load_scenario, FunctionProfile, Scenario, SpectralSystem};

use crate::functions::FunctionSpec;
use crate::output::{num, scenario_hash, Csv, SCHEMA_VERSION};
use crate::CliError;

/// A loaded scenario with its eigensystem and content hash.
pub struct Loaded {
    pub scenario: Scenario,
    pub sys: SpectralSystem,
    pub hash: String,
}

impl Loaded {
    pub fn open(path: &Path) -> Result<Loaded, CliError> {
        let scenario = load_scenario(path)?;
        let sys = SpectralSystem::build(&scenario)?;
        let hash = scenario_hash(&scenario);
        Ok(Loaded {
            scenario,
            sys,
            hash,
        })
    }

    pub fn hash8(&self) -> &str {
        &self.hash[..8]
    }

    pub fn function(&self, spec: &FunctionSpec) -> Result<Vec<f64>, CliError> {
        spec.resolve(&self.sys).map_err(CliError::Usage)
    }

    pub fn immigration_present(&self) -> bool {
        let im = &self.scenario.immigration;
        im.eta.iter().any(|&e| e != 0.0) || !im.h_atoms.is_empty()
    }
}

/// One JSON line per eigenvalue cluster.
pub fn spectral_lines(ctx: &Loaded) -> String {
    let sys = &ctx.sys;
    let phi1 = sys.phi1();
    let min = phi1.iter().copied().fold(f64::INFINITY, f64::min);
    let max = phi1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::new();
    for (k, cluster) in sys.clusters().iter().enumerate() {
        let functions: Vec<&Vec<f64>> = cluster
            .members
            .clone()
            .map(|i| &sys.eigenfunctions()[i])
            .collect();
        let class = sys.profile(functions[0]).class;
        let line = json!({
            "schema": SCHEMA_VERSION,
            "k": k + 1,
            "lambda": cluster.lambda,
            "multiplicity": cluster.multiplicity(),
            "margin": 2.0 * cluster.lambda - sys.lambda1(),
            "class": class.label(),
            "phi1_min": min,
            "phi1_max": max,
            "eigenfunctions": functions,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn laplace_csv(
    ctx: &Loaded,
    spec: &FunctionSpec,
    thetas: &[f64],
    times: &[f64],
) -> Result<String, CliError> {
    let f = ctx.function(spec)?;
    let mut csv = Csv::new(&["t".into(), "theta".into(), "exact_laplace".into()]);
    for &t in times {
        for &theta in thetas {
            let ell = log_laplace_y_signed(&ctx.scenario, &ctx.sys, &f, theta, t, &ctx.scenario.mu0)?;
            csv.row(&[num(t), num(theta), num((-ell).exp())]);
        }
    }
    Ok(csv.into_string())
}

pub fn moments_csv(ctx: &Loaded, specs: &[FunctionSpec], times: &[f64]) -> Result<String, CliError> {
    let header: Vec<String> = [
        "t", "f_name", "mean", "second", "variance", "term1", "term2", "term3", "term4",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut csv = Csv::new(&header);
    for spec in specs {
        let f = ctx.function(spec)?;
        let plan = MomentPlan::new(&ctx.scenario, &ctx.sys, &f, &ctx.scenario.mu0)?;
        for &t in times {
            let v = plan.values(t)?;
            csv.row(&[
                num(t),
                spec.name(),
                num(v.mean),
                num(v.second),
                num(v.variance),
                num(v.mean * v.mean),
                num(v.var_initial),
                num(v.var_immigration),
                num(v.var_arrivals),
            ]);
        }
    }
    Ok(csv.into_string())
}

pub struct CltSelection {
    pub f: Option<FunctionProfile>,
    pub h: Option<FunctionProfile>,
    pub g: Option<FunctionProfile>,
}

impl CltSelection {
    pub fn resolve(
        ctx: &Loaded,
        f: Option<&FunctionSpec>,
        h: Option<&FunctionSpec>,
        g: Option<&FunctionSpec>,
    ) -> Result<CltSelection, CliError> {
        let profile = |s: Option<&FunctionSpec>| -> Result<Option<FunctionProfile>, CliError> {
            s.map(|s| Ok(ctx.sys.profile(&ctx.function(s)?))).transpose()
        };
        Ok(CltSelection {
            f: profile(f)?,
            h: profile(h)?,
            g: profile(g)?,
        })
    }

    pub fn profiles(&self) -> CltProfiles<'_> {
        CltProfiles {
            f: self.f.as_ref(),
            h: self.h.as_ref(),
            g: self.g.as_ref(),
        }
    }

    pub fn constants(&self, ctx: &Loaded) -> Result<CltConstants, CliError> {
        Ok(clt_constants(
            &ctx.scenario,
            &ctx.sys,
            self.f.as_ref(),
            self.h.as_ref(),
            self.g.as_ref(),
        )?)
    }
}

pub fn constants_document(c: &CltConstants) -> Value {
    json!({
        "schema": SCHEMA_VERSION,
        "sigma2": c.sigma2_f,
        "rho2": c.rho2_h,
        "beta2": c.beta2_g,
        "mean_W": c.mean_wtilde,
        "var_W": c.var_wtilde,
        "gamma_phi1": c.gamma_phi,
    })
}

pub fn simulate(ctx: &Loaded, config: &SimConfig) -> Result<PathEnsemble, CliError> {
    Ok(simulate_ensemble(&ctx.scenario, &ctx.sys, config)?)
}

/// One row per (replicate, snapshot): site masses and eigen-coordinates.
pub fn ensemble_csv(ensemble: &PathEnsemble) -> String {
    let n = ensemble.n();
    let mut header = vec!["replicate".to_string(), "t".into(), "valid".into()];
    header.extend((1..=n).map(|i| format!("y_{i}")));
    header.extend((1..=n).map(|k| format!("z_{k}")));
    let mut csv = Csv::new(&header);
    for r in 0..ensemble.replicates() {
        for (s, &t) in ensemble.snapshots.iter().enumerate() {
            let mut row = vec![r.to_string(), num(t), u8::from(ensemble.is_valid(r)).to_string()];
            if ensemble.is_valid(r) {
                row.extend(ensemble.state(r, s).into_iter().map(num));
                row.extend(ensemble.coords(r, s).iter().map(|&z| num(z)));
            } else {
                row.extend(std::iter::repeat("nan".to_string()).take(2 * n));
            }
            csv.row(&row);
        }
    }
    csv.into_string()
}

/// A verdict with its JSON inputs and per-replicate statistics.
pub struct TestRun {
    pub verdict: Verdict,
    pub inputs: Value,
    pub csv: String,
}

/// `k`, `j` are 1-based here.
pub fn martingale_run(
    ctx: &Loaded,
    ensemble: &PathEnsemble,
    k: usize,
    j: usize,
    times: &[f64],
    negative_control: bool,
) -> Result<TestRun, CliError> {
    if k == 0 || j == 0 {
        return Err(CliError::Usage("--k and --j count from 1".into()));
    }
    let mut constants = martingale_constants(&ctx.scenario, &ctx.sys, k - 1, j - 1, &ctx.scenario.mu0)?;
    if negative_control {
        constants.gamma = -constants.gamma;
    }
    let verdict = martingale_test(ensemble, &ctx.sys, k - 1, j - 1, &constants, times)?;

    let phi = ctx.sys.eigenfunction(k - 1, j - 1).expect("checked by the test");
    let lambda = constants.lambda;
    let columns: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            let s = ensemble.snapshot_index(t).expect("checked by the test");
            let drift = if lambda == 0.0 { t } else { (lambda * t).exp_m1() / lambda } * constants.gamma;
            ensemble
                .pairing(phi, s)
                .into_iter()
                .map(|v| (lambda * t).exp() * v - drift)
                .collect()
        })
        .collect();
    let mut header = vec!["replicate".to_string()];
    header.extend(times.iter().map(|t| format!("H_t={}", num(*t))));
    let mut csv = Csv::new(&header);
    let valid: Vec<usize> = (0..ensemble.replicates()).filter(|&r| ensemble.is_valid(r)).collect();
    for (i, r) in valid.iter().enumerate() {
        let mut row = vec![r.to_string()];
        row.extend(columns.iter().map(|c| num(c[i])));
        csv.row(&row);
    }
    Ok(TestRun {
        verdict,
        inputs: json!({
            "scenario_hash": ctx.hash,
            "k": k,
            "j": j,
            "snapshots": times,
            "replicates": ensemble.replicates(),
            "failures": ensemble.failures(),
            "expected_H": constants.expected_h,
            "gamma_phi": constants.gamma,
            "lambda_k": lambda,
            "negative_control": negative_control,
        }),
        csv: csv.into_string(),
    })
}

pub fn lln_run(
    ctx: &Loaded,
    ensemble: &PathEnsemble,
    f: &FunctionSpec,
    horizons: LlnHorizons,
) -> Result<TestRun, CliError> {
    let profile = ctx.sys.profile(&ctx.function(f)?);
    let verdict = lln_test(ensemble, &ctx.sys, &profile, horizons)?;
    let gamma = profile.gamma.expect("checked by the test");
    let lambda = ctx.sys.clusters()[gamma].lambda;
    let scaled = |t: f64, g: &[f64]| -> Vec<f64> {
        let s = ensemble.snapshot_index(t).expect("checked by the test");
        ensemble.pairing(g, s).into_iter().map(|v| (lambda * t).exp() * v).collect()
    };
    let a = scaled(horizons.t1, &profile.f);
    let b = scaled(horizons.t2, &profile.f);
    let w = scaled(horizons.t_prime, &profile.leading);
    let mut csv = Csv::new(&[
        "replicate".into(),
        format!("scaled_t={}", num(horizons.t1)),
        format!("scaled_t={}", num(horizons.t2)),
        format!("limit_proxy_t={}", num(horizons.t_prime)),
    ]);
    let valid: Vec<usize> = (0..ensemble.replicates()).filter(|&r| ensemble.is_valid(r)).collect();
    for (i, r) in valid.iter().enumerate() {
        csv.row(&[r.to_string(), num(a[i]), num(b[i]), num(w[i])]);
    }
    Ok(TestRun {
        verdict,
        inputs: json!({
            "scenario_hash": ctx.hash,
            "f": f.name(),
            "class": profile.class.label(),
            "t1": horizons.t1,
            "t2": horizons.t2,
            "t_prime": horizons.t_prime,
            "replicates": ensemble.replicates(),
            "failures": ensemble.failures(),
        }),
        csv: csv.into_string(),
    })
}

pub struct CltRequest<'a> {
    pub names: [Option<String>; 3],
    pub selection: &'a CltSelection,
    pub t: f64,
    pub lookahead: f64,
    /// Multiplies the reference `sigma_f^2`; anything but 1 is a negative control.
    pub sigma_scale: f64,
}

pub fn clt_run(ctx: &Loaded, ensemble: &PathEnsemble, req: &CltRequest<'_>) -> Result<TestRun, CliError> {
    let mut constants = req.selection.constants(ctx)?;
    constants.sigma2_f = constants.sigma2_f.map(|s| s * req.sigma_scale);
    let report = clt_test(
        ensemble,
        &ctx.sys,
        req.selection.profiles(),
        &constants,
        req.t,
        req.lookahead,
        ctx.immigration_present(),
    )?;
    let s = &report.sample;
    let columns: Vec<(&str, &Vec<f64>)> = [("u_f", &s.u_f), ("u_g", &s.u_g), ("u_h", &s.u_h)]
        .into_iter()
        .filter_map(|(name, c)| c.as_ref().map(|c| (name, c)))
        .collect();
    let mut header = vec!["w_hat".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    let mut csv = Csv::new(&header);
    for i in 0..s.w_surviving.len() {
        let mut row = vec![num(s.w_surviving[i])];
        row.extend(columns.iter().map(|(_, c)| num(c[i])));
        csv.row(&row);
    }
    let [f, h, g] = &req.names;
    Ok(TestRun {
        verdict: report.verdict,
        inputs: json!({
            "scenario_hash": ctx.hash,
            "f": f,
            "h": h,
            "g": g,
            "t": req.t,
            "lookahead": req.lookahead,
            "replicates": ensemble.replicates(),
            "failures": ensemble.failures(),
            "excluded": s.excluded,
            "sigma_scale": req.sigma_scale,
            "constants": constants_document(&constants),
        }),
        csv: csv.into_string(),
    })
}

/// Closed-form moments against their quadrature forms.
pub fn moment_check(ctx: &Loaded, specs: &[FunctionSpec], times: &[f64]) -> Result<Verdict, CliError> {
    let (s, sys, mu) = (&ctx.scenario, &ctx.sys, &ctx.scenario.mu0);
    let mut checks = Vec::new();
    for spec in specs {
        let f = ctx.function(spec)?;
        for &t in times {
            let exact = second_moment_y(s, sys, &f, t, mu)?;
            let qm = mean_y_quadrature(s, sys, &f, t, mu)?;
            let qs = second_moment_y_quadrature(s, sys, &f, t, mu)?;
            let tag = format!("{}(t={})", spec.name(), num(t));
            checks.push(Check::within(
                format!("mean_rel_err_{tag}"),
                relative(qm, exact.mean),
                0.0,
                1e-8,
            ));
            checks.push(Check::within(
                format!("second_rel_err_{tag}"),
                relative(qs.second, exact.second),
                0.0,
                1e-6,
            ));
        }
    }
    Ok(Verdict::new("moment-check", checks))
}

/// Finite differences of the exact Laplace functional against the closed forms.
pub fn laplace_check(ctx: &Loaded, specs: &[FunctionSpec], times: &[f64]) -> Result<Verdict, CliError> {
    let (s, sys, mu) = (&ctx.scenario, &ctx.sys, &ctx.scenario.mu0);
    let mut checks = Vec::new();
    for spec in specs {
        let f = ctx.function(spec)?;
        let plan = MomentPlan::new(s, sys, &f, mu)?;
        for &t in times {
            let exact = plan.values(t)?;
            let (mean, second) = laplace_moments(s, sys, &f, t, mu)?;
            let tag = format!("{}(t={})", spec.name(), num(t));
            checks.push(Check::within(
                format!("mean_rel_err_{tag}"),
                relative(mean, exact.mean),
                0.0,
                1e-4,
            ));
            checks.push(Check::within(
                format!("second_rel_err_{tag}"),
                relative(second, exact.second),
                0.0,
                1e-3,
            ));
        }
    }
    Ok(Verdict::new("laplace-check", checks))
}

/// Relative error, falling back to absolute error near zero.
fn relative(x: f64, reference: f64) -> f64 {
    (x - reference).abs() / reference.abs().max(1e-12)
}

/// The default test functions for a scenario: `one` and every eigenfunction.
pub fn all_functions(ctx: &Loaded) -> Vec<FunctionSpec> {
    let mut specs = vec![FunctionSpec::One];
    specs.extend((1..=ctx.sys.n()).map(FunctionSpec::Phi));
    specs
}

/// First eigenfunction of the given class, as `phiK`.
pub fn first_of_class(ctx: &Loaded, class: SpaceClass) -> Option<FunctionSpec> {
    ctx.sys
        .eigenfunctions()
        .iter()
        .position(|p| ctx.sys.profile(p).class == class)
        .map(|i| FunctionSpec::Phi(i + 1))
}

pub fn sim_config(dt: f64, snapshots: Vec<f64>, replicates: usize, seed: u64, mode: SimMode) -> SimConfig {
    SimConfig {
        dt,
        t_snapshots: snapshots,
        replicates,
        master_seed: seed,
        mode,
    }
}
