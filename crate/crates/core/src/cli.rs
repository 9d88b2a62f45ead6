//! Batch commands behind the `fractv` binary.
//!
//! Exit status: 0 success, 2 configuration or input error, 3 solver
//! failure, 4 invariant violation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Setup};
use crate::diagnostics::{
    check_energy_chain, check_nested, check_sup_bound, contraction_check, holder_quotient,
    refinement_study, time_derivative_norm, EnergyLedger, RefinementStudy, INTERIOR_SAMPLES,
};
use crate::energy::{Field, StepData};
use crate::error::{Error, Result};
use crate::grid::{assemble_kernel, build_grid, GridSpec, KernelWeights, TailMode};
use crate::io::{
    fmt_f64, read_field_csv, write_field_csv, write_json, write_ledger_csv, write_sign_field_csv,
    write_table_csv,
};
use crate::rothe::{run_rothe, steklov_average, SourceSpec, StepReport, TimeGrid, Trajectory};
use crate::step::{soft_threshold_oracle, solve_step_primal_dual_from, SignField};

/// Tolerance of the in-run checks, relative to the ledger scale.
pub const CHECK_TOL: f64 = 1e-6;

pub const MANIFEST: &str = "manifest.json";
pub const LEDGER: &str = "ledger.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SIGN_DIR: &str = "sign_fields";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ConfigError,
    SolverFailure,
    InvariantViolation,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::ConfigError => 2,
            Outcome::SolverFailure => 3,
            Outcome::InvariantViolation => 4,
        }
    }

    fn of_run_error(e: &Error) -> Self {
        match e {
            Error::CertificateViolation { .. } => Outcome::InvariantViolation,
            Error::StepFailed { .. }
            | Error::PrimalDualNotConverged { .. }
            | Error::InnerNotConverged { .. } => Outcome::SolverFailure,
            _ => Outcome::ConfigError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub status: String,
    pub exit_code: u8,
    pub error: Option<String>,
    pub wall_time_seconds: f64,
    pub config: Option<RunConfig>,
    pub steps: Vec<StepReport>,
    pub margins: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
}

impl RunManifest {
    fn new(command: &str, config: Option<RunConfig>) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "running".into(),
            exit_code: 0,
            error: None,
            wall_time_seconds: 0.0,
            config,
            steps: Vec::new(),
            margins: BTreeMap::new(),
            checks: BTreeMap::new(),
        }
    }

    /// Sets the exit status from the checks and writes the manifest.
    fn finish(
        mut self,
        dir: &Path,
        started: Instant,
        failure: Option<(Outcome, String)>,
    ) -> Outcome {
        let outcome = match failure {
            Some((outcome, msg)) => {
                error!("{msg}");
                self.error = Some(msg);
                outcome
            }
            None => {
                let failed: Vec<&str> = self
                    .checks
                    .iter()
                    .filter(|(_, ok)| !**ok)
                    .map(|(name, _)| name.as_str())
                    .collect();
                if failed.is_empty() {
                    Outcome::Success
                } else {
                    let msg = format!("failed checks: {}", failed.join(", "));
                    error!("{msg}");
                    self.error = Some(msg);
                    Outcome::InvariantViolation
                }
            }
        };
        self.exit_code = outcome.code();
        self.status = if outcome == Outcome::Success {
            "passed"
        } else {
            "failed"
        }
        .into();
        self.wall_time_seconds = started.elapsed().as_secs_f64();
        if let Err(e) = write_json(&dir.join(MANIFEST), &self) {
            error!("cannot write manifest: {e}");
        }
        outcome
    }
}

/// A relative `output_dir` is taken from the config's directory; `output`
/// (from the command line) from the working directory.
fn load_config(path: &Path, output: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(path)?;
    match output {
        Some(dir) => cfg.output_dir = dir.to_path_buf(),
        None if cfg.output_dir.is_relative() => {
            cfg.output_dir = config_base(path).join(&cfg.output_dir)
        }
        None => {}
    }
    Ok(cfg)
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Margins and pass flags shared by `solve` and `verify`.
pub fn trajectory_checks(
    traj: &Trajectory,
    kernel: &KernelWeights,
    source: &SourceSpec,
    residual_tol: f64,
) -> Result<(BTreeMap<String, f64>, BTreeMap<String, bool>)> {
    let ledger = &traj.ledger;
    let scale = ledger.scale();
    let w = time_derivative_norm(traj);
    let samples = traj.steps() * (INTERIOR_SAMPLES + 1) + 1;
    let q = holder_quotient(traj, samples)?;
    let sup = check_sup_bound(traj, kernel)?;
    let worst_residual = traj
        .steps
        .iter()
        .map(|s| s.weak_residual)
        .fold(0.0, f64::max);

    let mut margins = BTreeMap::new();
    margins.insert("ledger_scale".into(), scale);
    margins.insert("min_margin_seminorm".into(), ledger.min_margin_seminorm());
    margins.insert("min_margin_l2".into(), ledger.min_margin_l2());
    margins.insert(
        "cumulative_margin_seminorm".into(),
        ledger.cumulative_margin(),
    );
    margins.insert("time_derivative_norm".into(), w);
    margins.insert("holder_quotient_squared".into(), q * q);
    margins.insert("sup_bound".into(), sup);
    margins.insert("max_weak_residual".into(), worst_residual);

    let mut checks = BTreeMap::new();
    checks.insert("energy_margins".into(), ledger.passes(CHECK_TOL));
    checks.insert("holder".into(), q * q <= w + CHECK_TOL * scale);
    checks.insert("weak_residuals".into(), worst_residual <= residual_tol);
    if matches!(source, SourceSpec::Zero) {
        checks.insert(
            "seminorm_nonincreasing".into(),
            ledger.seminorm_nonincreasing(CHECK_TOL * scale),
        );
    }
    Ok((margins, checks))
}

fn write_trajectory(dir: &Path, cfg: &RunConfig, setup: &Setup, traj: &Trajectory) -> Result<()> {
    for (k, u) in traj.snapshots.iter().enumerate() {
        write_field_csv(&snapshot_path(dir, k), &setup.grid, u)?;
    }
    write_ledger_csv(&dir.join(LEDGER), &traj.ledger)?;
    for &k in &cfg.z_steps {
        let z = &traj.sign_fields[k];
        let base = dir.join(SIGN_DIR);
        write_sign_field_csv(
            &base.join(format!("z_{k:04}.csv")),
            &base.join(format!("zeta_{k:04}.csv")),
            &setup.kernel,
            z,
        )?;
    }
    Ok(())
}

pub fn snapshot_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("u_{k:04}.csv"))
}

/// `solve <config>`
pub fn cmd_solve(config_path: &Path, output: Option<&Path>) -> Outcome {
    let started = Instant::now();
    let cfg = match load_config(config_path, output) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{e}");
            return Outcome::ConfigError;
        }
    };
    let dir = cfg.output_dir.clone();
    let mut manifest = RunManifest::new("solve", Some(cfg.clone()));
    let prepared = cfg
        .time_grid()
        .and_then(|tg| Ok((tg, cfg.setup(&config_base(config_path))?)));
    let (tg, setup) = match prepared {
        Ok(x) => x,
        Err(e) => {
            return manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string())))
        }
    };
    let traj = match run_rothe(
        &setup.initial,
        &cfg.source,
        &tg,
        &setup.grid,
        &setup.kernel,
        &cfg.solver,
    ) {
        Ok(t) => t,
        Err(e) => {
            let outcome = Outcome::of_run_error(&e);
            return manifest.finish(&dir, started, Some((outcome, e.to_string())));
        }
    };
    manifest.steps = traj.steps.clone();
    if let Err(e) = write_trajectory(&dir, &cfg, &setup, &traj) {
        return manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string())));
    }
    match trajectory_checks(&traj, &setup.kernel, &cfg.source, cfg.solver.residual_tol) {
        Ok((margins, checks)) => {
            manifest.margins = margins;
            manifest.checks = checks;
            info!(
                "wrote {} snapshots to {}",
                traj.snapshots.len(),
                dir.display()
            );
            manifest.finish(&dir, started, None)
        }
        Err(e) => manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string()))),
    }
}

/// Report of `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub status: String,
    pub exit_code: u8,
    pub error: Option<String>,
    /// `‖u_k - u*_k‖_∞` against a fresh solve from the stored `u_{k-1}`.
    pub step_distances: Vec<f64>,
    pub margins: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
}

pub const VERIFICATION: &str = "verification.json";

/// `verify <run_dir>`: recomputes every step from the stored snapshots and
/// re-runs the diagnostics.
pub fn cmd_verify(dir: &Path) -> Outcome {
    let mut report = Verification {
        status: "failed".into(),
        exit_code: 0,
        error: None,
        step_distances: Vec::new(),
        margins: BTreeMap::new(),
        checks: BTreeMap::new(),
    };
    let outcome = match verify_run(dir, &mut report) {
        Ok(()) => {
            let failed: Vec<&str> = report
                .checks
                .iter()
                .filter(|(_, ok)| !**ok)
                .map(|(n, _)| n.as_str())
                .collect();
            if failed.is_empty() {
                Outcome::Success
            } else {
                let msg = format!("failed checks: {}", failed.join(", "));
                error!("{msg}");
                report.error = Some(msg);
                Outcome::InvariantViolation
            }
        }
        Err((outcome, e)) => {
            error!("{e}");
            report.error = Some(e.to_string());
            outcome
        }
    };
    report.exit_code = outcome.code();
    if outcome == Outcome::Success {
        report.status = "passed".into();
    }
    if dir.join(MANIFEST).is_file() {
        if let Err(e) = write_json(&dir.join(VERIFICATION), &report) {
            warn!("cannot write verification report: {e}");
        }
    }
    outcome
}

fn verify_run(dir: &Path, report: &mut Verification) -> std::result::Result<(), (Outcome, Error)> {
    let input = |e: Error| (Outcome::ConfigError, e);
    let manifest_path = dir.join(MANIFEST);
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| input(Error::io(&manifest_path, e)))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| {
        input(Error::Malformed {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })
    })?;
    let incomplete = |detail: &str| {
        input(Error::Malformed {
            path: manifest_path.clone(),
            detail: detail.into(),
        })
    };
    if manifest.command != "solve" || manifest.status != "passed" {
        return Err(incomplete("not a completed solve run"));
    }
    let cfg = manifest
        .config
        .ok_or_else(|| incomplete("no configuration recorded"))?;
    let tg = cfg.time_grid().map_err(input)?;
    let grid = build_grid(&cfg.grid).map_err(input)?;
    let kernel = assemble_kernel(&grid, cfg.s, &cfg.grid).map_err(input)?;
    let snapshots = (0..=tg.steps)
        .map(|k| read_field_csv(&snapshot_path(dir, k), grid.len()))
        .collect::<Result<Vec<_>>>()
        .map_err(input)?;

    let h = tg.h();
    let mut sources = Vec::with_capacity(tg.steps);
    let mut source_energy = Vec::with_capacity(tg.steps);
    let mut steps = Vec::with_capacity(tg.steps);
    let mut sign_fields = vec![SignField::zeros(&kernel)];
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 1..=tg.steps {
        let t = tg.time(k - 1);
        let f = steklov_average(&cfg.source, h, t, &grid).map_err(input)?;
        source_energy.push(cfg.source.energy(h, t, &grid).map_err(input)?);
        let step = StepData::new(snapshots[k - 1].clone(), f.clone(), h).map_err(input)?;
        let warm = (k > 1).then(|| &sign_fields[k - 1]);
        let sol = solve_step_primal_dual_from(&step, &kernel, &cfg.solver, warm).map_err(|e| {
            (
                Outcome::SolverFailure,
                Error::StepFailed {
                    step: k,
                    source: Box::new(e),
                },
            )
        })?;
        let distance = sol.u.max_distance(&snapshots[k]);
        worst_excess = worst_excess.max(distance - 2.0 * cfg.solver.pd_tol * step.value_scale());
        report.step_distances.push(distance);
        steps.push(StepReport {
            k,
            iterations: sol.iterations,
            objective: sol.objective,
            weak_residual: sol.weak_residual,
            error_bound: sol.error_bound,
            cross_check: None,
        });
        sources.push(f);
        sign_fields.push(sol.z);
    }
    let mut traj = Trajectory {
        time_grid: tg,
        volume: kernel.volume(),
        snapshots,
        sign_fields,
        sources,
        source_energy,
        steps,
        ledger: EnergyLedger::default(),
    };
    traj.ledger = check_energy_chain(&traj, &kernel).map_err(input)?;
    let (margins, mut checks) =
        trajectory_checks(&traj, &kernel, &cfg.source, cfg.solver.residual_tol).map_err(input)?;
    report.margins = margins;
    report
        .margins
        .insert("max_step_distance_excess".into(), worst_excess);
    checks.insert("snapshots_are_step_minimisers".into(), worst_excess <= 0.0);
    report.checks = checks;
    Ok(())
}

/// `refine <config>`
pub fn cmd_refine(config_path: &Path, output: Option<&Path>) -> Outcome {
    let started = Instant::now();
    let cfg = match load_config(config_path, output) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{e}");
            return Outcome::ConfigError;
        }
    };
    let dir = cfg.output_dir.clone();
    let mut manifest = RunManifest::new("refine", Some(cfg.clone()));
    let prepared = cfg.m_list().and_then(|list| {
        check_nested(list)?;
        cfg.setup(&config_base(config_path))
    });
    let setup = match prepared {
        Ok(s) => s,
        Err(e) => {
            return manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string())))
        }
    };
    let study = match refinement_study(
        &setup.initial,
        &cfg.source,
        cfg.horizon,
        cfg.m_list().expect("checked"),
        &setup.grid,
        &setup.kernel,
        &cfg.solver,
    ) {
        Ok(s) => s,
        Err(e) => {
            let outcome = Outcome::of_run_error(&e);
            return manifest.finish(&dir, started, Some((outcome, e.to_string())));
        }
    };
    if let Err(e) = write_refinement(&dir, &study) {
        return manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string())));
    }
    let d = study.differences();
    let slack = CHECK_TOL * setup.initial.l2_norm(setup.grid.volume()).max(1.0);
    manifest.checks.insert(
        "differences_nonincreasing".into(),
        d.windows(2).all(|w| w[1] <= w[0] + slack),
    );
    manifest.margins.insert(
        "sup_energy_spread".into(),
        RefinementStudy::spread(study.rows.iter().map(|r| r.sup_energy)),
    );
    manifest.margins.insert(
        "time_derivative_spread".into(),
        RefinementStudy::spread(study.rows.iter().map(|r| r.time_derivative)),
    );
    manifest.finish(&dir, started, None)
}

fn write_refinement(dir: &Path, study: &RefinementStudy) -> Result<()> {
    write_json(&dir.join("refinement.json"), study)?;
    let rows: Vec<Vec<f64>> = study
        .rows
        .iter()
        .flat_map(|r| r.profile.iter().map(move |(t, d)| vec![r.m as f64, *t, *d]))
        .collect();
    write_table_csv(
        &dir.join("refinement.csv"),
        &["m", "t", "difference"],
        &rows,
    )
}

/// `contract <config>`: runs `initial` and `initial_b` against the same source.
pub fn cmd_contract(config_path: &Path, output: Option<&Path>) -> Outcome {
    let started = Instant::now();
    let cfg = match load_config(config_path, output) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{e}");
            return Outcome::ConfigError;
        }
    };
    let dir = cfg.output_dir.clone();
    let mut manifest = RunManifest::new("contract", Some(cfg.clone()));
    let base = config_base(config_path);
    let prepared = (|| -> Result<(TimeGrid, Setup, Field)> {
        let tg = cfg.time_grid()?;
        let setup = cfg.setup(&base)?;
        let second = cfg
            .initial_b
            .as_ref()
            .ok_or_else(|| Error::Config("missing field `initial_b`".into()))?
            .build(&setup.grid, cfg.seed.wrapping_add(1), &base)?;
        Ok((tg, setup, second))
    })();
    let (tg, setup, second) = match prepared {
        Ok(x) => x,
        Err(e) => {
            return manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string())))
        }
    };
    let run = |u0: &Field| {
        run_rothe(
            u0,
            &cfg.source,
            &tg,
            &setup.grid,
            &setup.kernel,
            &cfg.solver,
        )
    };
    let (a, b) = rayon::join(|| run(&setup.initial), || run(&second));
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            let outcome = Outcome::of_run_error(&e);
            return manifest.finish(&dir, started, Some((outcome, e.to_string())));
        }
    };
    let report = match contraction_check(&a, &b) {
        Ok(r) => r,
        Err(e) => {
            return manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string())))
        }
    };
    let rows: Vec<Vec<f64>> = report
        .gaps
        .iter()
        .enumerate()
        .map(|(k, g)| vec![k as f64, tg.time(k), *g])
        .collect();
    let written = write_json(&dir.join("contraction.json"), &report)
        .and_then(|_| write_table_csv(&dir.join("contraction.csv"), &["k", "t", "gap"], &rows));
    if let Err(e) = written {
        return manifest.finish(&dir, started, Some((Outcome::ConfigError, e.to_string())));
    }
    let v = setup.grid.volume();
    let scale = setup.initial.l2_norm(v).max(second.l2_norm(v)).max(1.0);
    manifest
        .margins
        .insert("max_growth".into(), report.max_growth);
    manifest
        .margins
        .insert("max_step_increase".into(), report.max_step_increase);
    manifest.checks.insert(
        "nonexpansive".into(),
        report.max_growth <= CHECK_TOL * scale,
    );
    manifest.finish(&dir, started, None)
}

/// Parameters of the single-cell shrinkage table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub s: f64,
    pub spacing: f64,
    pub exterior_radius: f64,
    pub h: f64,
    pub u0: f64,
    pub steps: Option<usize>,
}

/// `(k, t, u_k)`
pub type OracleRow = (usize, f64, f64);

/// Iterated soft thresholding `u_k = sgn(u_{k-1}) max(|u_{k-1}| - τ, 0)`,
/// `τ = 2bh/v`, on one cell. Runs two steps past extinction by default.
pub fn oracle_table(p: &OracleParams) -> Result<(f64, Vec<OracleRow>)> {
    let spec = GridSpec::new_1d(1, p.spacing, p.exterior_radius, TailMode::Analytic);
    let grid = build_grid(&spec)?;
    let kernel = assemble_kernel(&grid, p.s, &spec)?;
    let (b, v) = (kernel.exterior_weights()[0], kernel.volume());
    let tau = 2.0 * b * p.h / v;
    let steps = p
        .steps
        .unwrap_or_else(|| (p.u0.abs() / tau).ceil() as usize + 2);
    let mut u = p.u0;
    let mut rows = vec![(0, 0.0, u)];
    for k in 1..=steps {
        u = soft_threshold_oracle(u, b, p.h, v)?;
        rows.push((k, k as f64 * p.h, u));
    }
    Ok((tau, rows))
}

/// `oracle`: prints `k,t,u` for the single-cell shrinkage run.
pub fn cmd_oracle(p: &OracleParams) -> Outcome {
    match oracle_table(p) {
        Ok((tau, rows)) => {
            info!("threshold tau = {tau:e}");
            let mut out = std::io::stdout().lock();
            let mut text = String::from("k,t,u\n");
            for (k, t, u) in rows {
                text.push_str(&format!("{k},{},{}\n", fmt_f64(t), fmt_f64(u)));
            }
            // a closed pipe (e.g. `| head`) is not an error
            let _ = out.write_all(text.as_bytes());
            Outcome::Success
        }
        Err(e) => {
            error!("{e}");
            Outcome::ConfigError
        }
    }
}
