use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manufactured::Manufactured;
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    attach_exact, compute_report, sobolev_injection_ratio, ubound_ratio, EstimatorReport, HelmholtzFilter, History,
    ReportParams,
};
use crate::fespace::{rotate, FeField};
use crate::mesh::{MeshDump, PeriodicMesh};
use crate::solver::{Discretization, DmpSummary, RunOutput, SimulationState, Snapshot};
use crate::stabilizers::{StabilizerKind, StabilizerSpec};

/// Worker pool sized by `VORTEX_THREADS` (rayon's default when unset).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("VORTEX_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("VORTEX_THREADS must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| invalid(e.to_string()))
}

/// A configured discretization with its initial state.
pub struct Setup {
    pub disc: Discretization,
    pub state: SimulationState,
    pub case: Manufactured,
    /// `|| omega0 - omega_h(0) ||`.
    pub r0: f64,
}

fn initial_error(case: &Manufactured, omega: &FeField) -> f64 {
    if case.nodal_initial(omega.space().mesh()).is_some() {
        0.0
    } else {
        omega.l2_error(|p| case.omega0(p).unwrap_or(0.0))
    }
}

pub fn setup(config: &RunConfig) -> Result<Setup> {
    let mesh = Arc::new(PeriodicMesh::build_periodic(config.n_per_side)?);
    let case = Manufactured::new(&config.initial_condition, config.nu, config.seed)?;
    let mut disc = Discretization::new(mesh.clone(), config.l, config.nu, config.stabilizer.clone())?;
    let state = match case.nodal_initial(&mesh) {
        Some(c) => disc.initial_state_from_coeffs(c)?,
        None => disc.initial_state(|p| case.omega0(p).unwrap_or(0.0))?,
    };
    let r0 = initial_error(&case, &state.omega);
    Ok(Setup { disc, state, case, r0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub case: String,
    pub validity_note: String,
    pub n_per_side: usize,
    pub h: f64,
    pub l: usize,
    pub nu: f64,
    pub t_final: f64,
    pub u0: f64,
    /// `U0 h / nu`; absent for `nu = 0`.
    pub reynolds_h: Option<f64>,
    pub steps: usize,
    pub mean_drift: f64,
    pub dmp: DmpSummary,
    pub ubound_ratio: f64,
    pub sobolev_ratio: f64,
    pub omega_l2_error: Option<f64>,
    pub velocity_l2_error: Option<f64>,
    pub report: EstimatorReport,
    /// `delta = 1` report carrying the velocity bound.
    pub velocity_report: EstimatorReport,
}

pub struct Execution {
    pub config: RunConfig,
    pub setup: Setup,
    pub output: RunOutput,
    pub summary: RunSummary,
}

fn report_params(config: &RunConfig, disc: &Discretization, r0: f64) -> ReportParams {
    ReportParams {
        h: disc.mesh().h(),
        nu: config.nu,
        u0: disc.u0(),
        lumped: config.mass.is_lumped(),
        c0: config.estimator.c0,
        c1: config.estimator.c1,
        r0,
    }
}

/// Reports for `deltas` from a history; the true filtered error is attached
/// when the case has a closed form.
fn reports(
    config: &RunConfig,
    history: &History,
    params: &ReportParams,
    case: &Manufactured,
    final_omega: &FeField,
    final_psi: &FeField,
    deltas: &[f64],
) -> Result<Vec<EstimatorReport>> {
    let filter = match case.exact() {
        Some(_) => Some(HelmholtzFilter::refined(config.n_per_side, config.estimator.filter_refine)?),
        None => None,
    };
    let t = history.diagnostics.last().map_or(0.0, |r| r.t);
    let velocity = rotate(final_psi);
    deltas
        .iter()
        .map(|&delta| {
            let mut r = compute_report(history, params, delta)?;
            if let (Some(exact), Some(f)) = (case.exact(), filter.as_ref()) {
                attach_exact(&mut r, exact, final_omega, &velocity, t, f)?;
            }
            Ok(r)
        })
        .collect()
}

/// initialize -> run -> compute_report, without touching the file system.
pub fn execute(config: &RunConfig) -> Result<Execution> {
    config.validate()?;
    let hash = config.hash();
    let mut setup = setup(config)?;
    let lumped = config.mass.is_lumped();
    let mean0 = setup.disc.mean(&setup.state.omega, lumped);
    let output = setup.disc.run(
        &mut setup.state,
        &config.stepper,
        lumped,
        config.t_final,
        config.outputs.snapshot_every,
        &hash,
    )?;
    let disc = &setup.disc;
    let state = &setup.state;
    let params = report_params(config, disc, setup.r0);
    let history = History {
        ledger: output.ledger.clone(),
        diagnostics: output.diagnostics.clone(),
    };
    let h = disc.mesh().h();
    let delta = config.delta_policy.delta(h);
    let mut rs = reports(config, &history, &params, &setup.case, &state.omega, &state.psi, &[delta, 1.0])?;
    let velocity_report = rs.pop().expect("two reports");
    let report = rs.pop().expect("two reports");
    let last_diag = output.diagnostics.last().expect("initial row");
    let last_row = output.ledger.last().expect("initial row");
    let (omega_l2_error, velocity_l2_error) = match setup.case.exact() {
        Some(e) => (
            Some(state.omega.l2_error(|p| e.omega(p, state.t))),
            Some(state.velocity.l2_error(|p| e.velocity(p, state.t))),
        ),
        None => (None, None),
    };
    let summary = RunSummary {
        config_hash: hash,
        case: setup.case.name().to_string(),
        validity_note: setup.case.validity_note().to_string(),
        n_per_side: config.n_per_side,
        h,
        l: config.l,
        nu: config.nu,
        t_final: state.t,
        u0: disc.u0(),
        reynolds_h: (config.nu > 0.0).then(|| disc.u0() * h / config.nu),
        steps: state.step,
        mean_drift: (disc.mean(&state.omega, lumped) - mean0).abs(),
        dmp: output.dmp,
        ubound_ratio: ubound_ratio(&state.velocity, &state.omega),
        sobolev_ratio: sobolev_injection_ratio(
            last_diag.omega_linf,
            last_diag.omega_l2,
            last_row.stab_energy,
            h,
            config.stabilizer.kind,
            config.stabilizer.mu,
        ),
        omega_l2_error,
        velocity_l2_error,
        report,
        velocity_report,
    };
    Ok(Execution {
        config: config.clone(),
        setup,
        output,
        summary,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes `ledger.csv`, `diagnostics.csv`, `snapshots/*.json` and `report.json`.
pub fn write_outputs(exec: &Execution, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("ledger.csv"), &exec.output.ledger)?;
    write_csv(&dir.join("diagnostics.csv"), &exec.output.diagnostics)?;
    if exec.config.outputs.write_snapshots {
        let sdir = dir.join("snapshots");
        if sdir.exists() {
            fs::remove_dir_all(&sdir)?;
        }
        fs::create_dir_all(&sdir)?;
        for (k, s) in exec.output.snapshots.iter().enumerate() {
            write_json(&sdir.join(format!("snapshot_{k:05}.json")), s)?;
        }
    }
    write_json(&dir.join("report.json"), &exec.summary)
}

/// `run` subcommand: executes the configuration and writes all outputs.
pub fn cli_run(config: &RunConfig, out: Option<&Path>) -> Result<RunSummary> {
    let exec = execute(config)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.outputs.dir.clone());
    write_outputs(&exec, &dir)?;
    Ok(exec.summary)
}

fn read_snapshots(dir: &Path) -> Result<Vec<Snapshot>> {
    let sdir = dir.join("snapshots");
    let mut paths: Vec<PathBuf> = fs::read_dir(&sdir)
        .map_err(|e| invalid(format!("cannot read snapshots in {}: {e}", sdir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_reader(fs::File::open(p)?)?))
        .collect()
}

/// `estimate` subcommand: recomputes reports for `deltas` from the outputs
/// of a previous `run` in `dir`, writing `estimate.json`.
pub fn cli_estimate(config: &RunConfig, dir: &Path, deltas: &[f64]) -> Result<Vec<EstimatorReport>> {
    config.validate()?;
    if deltas.is_empty() {
        return Err(invalid("at least one filter width is required"));
    }
    let history = History::from_csv(
        fs::File::open(dir.join("ledger.csv"))?,
        fs::File::open(dir.join("diagnostics.csv"))?,
    )?;
    let snaps = read_snapshots(dir)?;
    let (first, last) = match (snaps.first(), snaps.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(invalid("estimate needs the initial and final snapshots")),
    };
    let hash = config.hash();
    if snaps.iter().any(|s| s.config_hash != hash) {
        return Err(invalid("snapshots were produced by a different configuration"));
    }
    let mesh = Arc::new(PeriodicMesh::build_periodic(config.n_per_side)?);
    let case = Manufactured::new(&config.initial_condition, config.nu, config.seed)?;
    let mut disc = Discretization::new(mesh, config.l, config.nu, config.stabilizer.clone())?;
    let initial = disc.initial_state_from_coeffs(first.omega_coeffs.clone())?;
    let r0 = initial_error(&case, &initial.omega);
    let omega = FeField::try_new(disc.omega_space().clone(), last.omega_coeffs.clone())?;
    let psi = FeField::try_new(disc.psi_space().clone(), last.psi_coeffs.clone())?;
    let params = report_params(config, &disc, r0);
    let out = reports(config, &history, &params, &case, &omega, &psi, deltas)?;
    write_json(&dir.join("estimate.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub config_hash: String,
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub delta: f64,
    pub omega_l2_error: Option<f64>,
    pub velocity_l2_error: Option<f64>,
    pub triple_norm_error: Option<f64>,
    pub residual_sum: f64,
    pub total_bound: f64,
    pub effectivity: Option<f64>,
}

/// Observed orders between consecutive rows; `None` where either error is
/// at solver precision (saturated) or unavailable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub omega_l2: Option<f64>,
    pub velocity_l2: Option<f64>,
    pub triple_norm: Option<f64>,
    pub residual_sum: Option<f64>,
    pub total_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub config_hash: String,
    pub rows: Vec<ConvergenceRow>,
    pub rates: Vec<RateRow>,
    pub complete: bool,
    pub failure: Option<String>,
}

/// Errors below this are treated as solver noise when computing rates.
pub const SATURATION_LEVEL: f64 = 1e-12;

/// `log(e_c / e_f) / log(h_c / h_f)`.
pub fn observed_rate(h_coarse: f64, e_coarse: f64, h_fine: f64, e_fine: f64) -> Option<f64> {
    if e_coarse <= SATURATION_LEVEL || e_fine <= SATURATION_LEVEL {
        return None;
    }
    Some((e_coarse / e_fine).ln() / (h_coarse / h_fine).ln())
}

fn check_n_list(n_list: &[usize]) -> Result<()> {
    let Some(&n0) = n_list.first() else {
        return Err(Error::Config("n list must be nonempty".into()));
    };
    for w in n_list.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config(format!("n list must be strictly increasing: {n_list:?}")));
        }
    }
    for &n in n_list {
        if n % n0 != 0 || !(n / n0).is_power_of_two() {
            return Err(Error::Config(format!("{n} is not a power-of-two multiple of {n0}")));
        }
    }
    Ok(())
}

/// Runs `base` at every `n` with `dt = dt_coefficient * h^{3/2}`, in parallel.
/// A failed run truncates the table at the last consecutive success and
/// marks it incomplete.
pub fn converge(base: &RunConfig, n_list: &[usize], dt_coefficient: f64) -> Result<ConvergenceTable> {
    base.validate()?;
    check_n_list(n_list)?;
    if !(dt_coefficient > 0.0) {
        return Err(Error::Config(format!("dt coefficient must be positive, got {dt_coefficient}")));
    }
    let hash = base.hash();
    let pool = worker_pool()?;
    let results: Vec<Result<ConvergenceRow>> = pool.install(|| {
        n_list
            .par_iter()
            .map(|&n| {
                let mut cfg = base.clone();
                cfg.n_per_side = n;
                let h = cfg.h();
                cfg.stepper.dt = Some(dt_coefficient * h.powf(1.5));
                cfg.stepper.cfl_number = None;
                cfg.outputs.write_snapshots = false;
                let exec = execute(&cfg)?;
                let s = exec.summary;
                Ok(ConvergenceRow {
                    config_hash: hash.clone(),
                    n,
                    h,
                    dt: cfg.stepper.dt.unwrap_or_default(),
                    delta: s.report.delta,
                    omega_l2_error: s.omega_l2_error,
                    velocity_l2_error: s.velocity_l2_error,
                    triple_norm_error: s.report.triple_norm_error,
                    residual_sum: s.report.residual_sum,
                    total_bound: s.report.total_bound,
                    effectivity: s.report.effectivity,
                })
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(row) if failure.is_none() => rows.push(row),
            Ok(_) => {}
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e.to_string());
                }
            }
        }
    }
    let rate = |a: Option<f64>, b: Option<f64>, ha: f64, hb: f64| match (a, b) {
        (Some(a), Some(b)) => observed_rate(ha, a, hb, b),
        _ => None,
    };
    let rates = rows
        .windows(2)
        .map(|w| {
            let (c, f) = (&w[0], &w[1]);
            RateRow {
                n_coarse: c.n,
                n_fine: f.n,
                omega_l2: rate(c.omega_l2_error, f.omega_l2_error, c.h, f.h),
                velocity_l2: rate(c.velocity_l2_error, f.velocity_l2_error, c.h, f.h),
                triple_norm: rate(c.triple_norm_error, f.triple_norm_error, c.h, f.h),
                residual_sum: observed_rate(c.h, c.residual_sum, f.h, f.residual_sum),
                total_bound: observed_rate(c.h, c.total_bound, f.h, f.total_bound),
            }
        })
        .collect();
    Ok(ConvergenceTable {
        config_hash: hash,
        rows,
        rates,
        complete: failure.is_none(),
        failure,
    })
}

/// Appends the rows to `convergence.csv` (header written once) and writes
/// `convergence_rates.json`.
pub fn write_convergence(table: &ConvergenceTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join("convergence.csv");
    let fresh = fs::metadata(&path).map_or(true, |m| m.len() == 0);
    let file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in &table.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&dir.join("convergence_rates.json"), table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationStep {
    pub gamma: f64,
    pub relative_overshoot: f64,
    pub worst_offdiag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmpCheckReport {
    pub config_hash: String,
    pub kind: StabilizerKind,
    pub tolerance: f64,
    pub calibration: Vec<CalibrationStep>,
    pub gamma_used: f64,
    pub dmp: DmpSummary,
    pub relative_overshoot: f64,
    /// Same data and stepper without stabilization (observational).
    pub unstabilized_relative_overshoot: f64,
    pub pass: bool,
}

/// Relative overshoot allowed by the DMP check.
pub const DMP_TOLERANCE: f64 = 1e-10;

const MAX_CALIBRATION_DOUBLINGS: usize = 16;

fn simulate(config: &RunConfig) -> Result<RunOutput> {
    let mut s = setup(config)?;
    s.disc.run(
        &mut s.state,
        &config.stepper,
        config.mass.is_lumped(),
        config.t_final,
        None,
        &config.hash(),
    )
}

/// `dmp-check` subcommand: runs the configured rough-data case, doubling the
/// monotone stabilizer's strength until the nodal range is preserved.
pub fn dmp_check(config: &RunConfig) -> Result<DmpCheckReport> {
    config.validate()?;
    if !config.mass.is_lumped() {
        return Err(invalid("the discrete maximum principle check requires lumped mass"));
    }
    let kind = config.stabilizer.kind;
    if !matches!(kind, StabilizerKind::AvMonotone | StabilizerKind::NonlinearMonotone) {
        return Err(invalid(format!("dmp-check needs a monotone stabilizer, got {kind:?}")));
    }
    let gamma_of = |s: &StabilizerSpec| match kind {
        StabilizerKind::NonlinearMonotone => s.gamma2,
        _ => s.gamma(),
    };
    let mut cfg = config.clone();
    let mut calibration = Vec::new();
    let dmp = loop {
        let out = simulate(&cfg)?;
        let rel = out.dmp.relative_overshoot();
        calibration.push(CalibrationStep {
            gamma: gamma_of(&cfg.stabilizer),
            relative_overshoot: rel,
            worst_offdiag: out.dmp.worst_offdiag,
        });
        if rel <= DMP_TOLERANCE || calibration.len() > MAX_CALIBRATION_DOUBLINGS {
            break out.dmp;
        }
        let g = gamma_of(&cfg.stabilizer) * 2.0;
        match kind {
            StabilizerKind::NonlinearMonotone => cfg.stabilizer.gamma2 = g,
            _ => cfg.stabilizer.gamma = Some(g),
        }
    };
    let mut plain = config.clone();
    plain.stabilizer = StabilizerSpec::default();
    let unstabilized = simulate(&plain)?.dmp.relative_overshoot();
    let relative_overshoot = dmp.relative_overshoot();
    Ok(DmpCheckReport {
        config_hash: config.hash(),
        kind,
        tolerance: DMP_TOLERANCE,
        gamma_used: gamma_of(&cfg.stabilizer),
        calibration,
        dmp,
        relative_overshoot,
        unstabilized_relative_overshoot: unstabilized,
        pass: relative_overshoot <= DMP_TOLERANCE,
    })
}

pub fn write_dmp_report(report: &DmpCheckReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("dmp_check.json"), report)
}

/// `mesh-dump` subcommand.
pub fn mesh_dump(n: usize) -> Result<MeshDump> {
    Ok(PeriodicMesh::build_periodic(n)?.to_dump())
}
