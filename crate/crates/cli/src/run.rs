//! Command dispatch and artifact emission.

use crate::config::{ConfigError, ScenarioConfig};
use crate::output::{flow_csv, fmt_g17, json_f64, json_opt, paths_csv, table_csv, write_atomic, SCHEMA_VERSION};
use crate::verify;
use hjbflow_core::flows::random_bump_pair;
use hjbflow_core::fnspace::NormKind;
use hjbflow_core::hjb::{duhamel_residual, feedback_control, solve_mild, HjbProblem, MildOptions};
use hjbflow_core::mfg::{equilibrium_residual, solve_mfg, MfgOptions, MfgProblem};
use hjbflow_core::sensitivity::{
    feedback_regularity, lipschitz_report, relative_discrepancy, w_alpha_derivative, w_alpha_table, AlphaPairEntry,
    FlowPair,
};
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numerical(hjbflow_core::Error),
    Io(String),
    /// Artifacts were written but at least one criterion failed.
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Acceptance(e) => write!(f, "acceptance failure: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<hjbflow_core::Error> for CliError {
    fn from(e: hjbflow_core::Error) -> Self {
        CliError::Numerical(e)
    }
}

/// In-memory artifact: file name and contents.
pub type Artifact = (String, String);

/// Artifacts of a run and, for `verify`, the failed criteria.
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<String>,
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Computes every artifact of the configured command without touching disk.
pub fn produce(cfg: &ScenarioConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let artifacts = match cfg.run.command.as_str() {
        "solve-hjb" => solve_hjb(cfg)?,
        "sensitivity" => sensitivity(cfg)?,
        "mfg" => mfg(cfg)?,
        "verify" => {
            let report = verify::run_suite(&cfg.run.suite, cfg.run.seed);
            let failures = report.iter().filter(|c| !c.pass()).map(|c| format!("{} {}", c.id, c.name)).collect();
            return Ok(Outcome { artifacts: verify::artifacts(&report), failures });
        }
        other => unreachable!("validated command {other}"),
    };
    Ok(Outcome { artifacts, failures: Vec::new() })
}

/// Runs the scenario and writes its artifacts plus `manifest.json` to `out`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut outcome = produce(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut names: Vec<&str> = outcome.artifacts.iter().map(|(n, _)| n.as_str()).collect();
    names.push("manifest.json");
    names.sort();
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "library": { "name": "hjbflow-core", "version": env!("CARGO_PKG_VERSION") },
        "command": cfg.run.command,
        "config": cfg,
        "artifacts": names,
    });
    outcome.artifacts.push(("manifest.json".into(), json_text(&manifest)));
    for (name, text) in &outcome.artifacts {
        let path = out.join(name);
        write_atomic(&path, text.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if !outcome.failures.is_empty() {
        return Err(CliError::Acceptance(outcome.failures.join("; ")));
    }
    Ok(outcome)
}

fn mild_options(cfg: &ScenarioConfig) -> MildOptions {
    MildOptions { tol: cfg.run.tol, max_iters: cfg.run.max_iters, max_split_depth: cfg.run.max_split_depth }
}

fn hjb_problem(cfg: &ScenarioConfig) -> Result<HjbProblem, CliError> {
    Ok(HjbProblem::new(
        Arc::new(cfg.generator()?),
        Arc::new(cfg.hamiltonian()?),
        Arc::new(cfg.terminal()?),
        cfg.flow(1)?,
        cfg.time.substeps,
        cfg.scheme()?,
    )?)
}

fn solve_hjb(cfg: &ScenarioConfig) -> Result<Vec<Artifact>, CliError> {
    let problem = hjb_problem(cfg)?;
    let sol = solve_mild(&problem, mild_options(cfg))?;
    let control = feedback_control(&problem, &sol.value)?;
    let d = &sol.diagnostics;
    let record = json!({
        "schema_version": SCHEMA_VERSION,
        "iterations": d.iterations,
        "diffs": d.diffs.iter().map(|&x| json_f64(x)).collect::<Vec<_>>(),
        "contraction_factor": json_opt(d.contraction_factor),
        "splits": d.splits,
        "segments": d.segments,
        "duhamel_residual": json_f64(duhamel_residual(&problem, &sol.value)?),
        "value_sup_c1": json_f64(sol.value.sup_norm(NormKind::C1)),
        "uncoupled": problem.is_uncoupled(),
    });
    Ok(vec![
        ("value.csv".into(), paths_csv(&[("value", &sol.value)])),
        ("control.csv".into(), paths_csv(&[("control", &control)])),
        ("hjb.json".into(), json_text(&record)),
    ])
}

fn pair_rows(table: &[AlphaPairEntry]) -> Vec<Vec<String>> {
    table
        .iter()
        .map(|e| vec![fmt_g17(e.alpha_i), fmt_g17(e.alpha_j), fmt_g17(e.diff), fmt_g17(e.ratio)])
        .collect()
}

fn sensitivity(cfg: &ScenarioConfig) -> Result<Vec<Artifact>, CliError> {
    let problem = hjb_problem(cfg)?;
    let pair = FlowPair::new(cfg.flow(1)?, cfg.flow(2)?, cfg.flows.alpha_grid.clone())?;
    let opts = mild_options(cfg);
    let report = lipschitz_report(&problem, &pair, opts)?;
    let (w_table, w_spread) = w_alpha_table(&problem, &pair)?;
    let deriv = w_alpha_derivative(&problem, &pair, 0.5)?;
    let mut record = json!({
        "schema_version": SCHEMA_VERSION,
        "flow_distance": json_f64(report.flow_distance),
        "flow_distance_surrogate": json_f64(report.flow_distance_surrogate),
        "lipschitz_v": json_opt(report.lipschitz_v),
        "lipschitz_grad_v": json_opt(report.lipschitz_grad_v),
        "k1_feedback": json_opt(report.k1_feedback),
        "alpha_spread": json_opt(report.alpha_spread),
        "w_alpha_spread": json_opt(w_spread),
        "derivative": {
            "alpha": 0.5,
            "relative_discrepancy": json_f64(relative_discrepancy(&deriv.representation, &deriv.fd_check)),
            "one_sided": deriv.one_sided,
            "richardson": deriv.richardson,
        },
        "solves": report.alphas.iter().zip(&report.diagnostics).map(|(a, d)| json!({
            "alpha": a,
            "iterations": d.iterations,
            "contraction_factor": json_opt(d.contraction_factor),
        })).collect::<Vec<_>>(),
    });
    if cfg.flows.random_pairs > 0 {
        let grid = cfg.grid()?;
        let time = cfg.time_grid()?;
        let pairs = (0..cfg.flows.random_pairs as u64)
            .map(|i| {
                let (a, b) = random_bump_pair(cfg.run.seed.wrapping_add(i));
                FlowPair::with_default_grid(a.build(grid, &time)?, b.build(grid, &time)?)
            })
            .collect::<hjbflow_core::Result<Vec<_>>>()?;
        let fb = feedback_regularity(&problem, &pairs, opts)?;
        record["feedback"] = json!({
            "k1": json_f64(fb.k1),
            "skipped": fb.skipped,
            "pairs": fb.pairs.iter().map(|p| json!({
                "control_diff": json_f64(p.control_diff),
                "grad_diff": json_f64(p.grad_diff),
                "distance": json_f64(p.distance),
                "k1": json_opt(p.k1),
                "lipschitz_grad_v": json_opt(p.lipschitz_grad_v),
            })).collect::<Vec<_>>(),
        });
    }
    let header = ["alpha_i", "alpha_j", "diff_c1", "ratio"];
    Ok(vec![
        ("value_alpha_pairs.csv".into(), table_csv(&header, &pair_rows(&report.pair_table))),
        ("w_alpha_pairs.csv".into(), table_csv(&header, &pair_rows(&w_table))),
        (
            "derivative.csv".into(),
            paths_csv(&[("representation", &deriv.representation), ("finite_difference", &deriv.fd_check)]),
        ),
        ("sensitivity.json".into(), json_text(&record)),
    ])
}

pub fn mfg_problem(cfg: &ScenarioConfig) -> Result<MfgProblem, CliError> {
    Ok(MfgProblem {
        generator: Arc::new(cfg.generator()?),
        hamiltonian: Arc::new(cfg.hamiltonian()?),
        terminal: Arc::new(cfg.terminal()?),
        time: cfg.time_grid()?,
        substeps: cfg.time.substeps,
        scheme: cfg.scheme()?,
    })
}

fn mfg(cfg: &ScenarioConfig) -> Result<Vec<Artifact>, CliError> {
    let problem = mfg_problem(cfg)?;
    let mu0 = cfg.flow(1)?.density(0).clone();
    let opts = MfgOptions { damping: cfg.run.damping, tol: cfg.run.mfg_tol, max_iters: cfg.run.mfg_max_iters };
    let sol = solve_mfg(&problem, &mu0, opts)?;
    let record = json!({
        "schema_version": SCHEMA_VERSION,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "damping": opts.damping,
        "tol": opts.tol,
        "residual_history": sol.residual_history.iter().map(|&x| json_f64(x)).collect::<Vec<_>>(),
        "lp_residual": json_f64(sol.lp_residual),
        "equilibrium_residual": json_f64(equilibrium_residual(&sol, &problem)?),
        "positivity_defect": json_f64(sol.positivity_defect),
    });
    Ok(vec![
        ("flow.csv".into(), flow_csv(&sol.equilibrium_flow)),
        ("value_control.csv".into(), paths_csv(&[("value", &sol.value), ("control", &sol.control)])),
        ("mfg.json".into(), json_text(&record)),
    ])
}
