//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vortex::estimators::HelmholtzFilter;
use vortex::fespace::{rotate, FeField, FeSpace, L2Projector, PoissonSolver};
use vortex::harness::{self, DeltaPolicy, EstimatorOptions, InitialCondition, MassKind, Outputs, RunConfig};
use vortex::mesh::PeriodicMesh;
use vortex::solver::{TimeScheme, TimeStepperSpec};
use vortex::stabilizers::{check_stab_bound1_with, StabilizerKind, StabilizerSpec};

fn config(n: usize, nu: f64, t: f64, stab: StabilizerSpec, scheme: TimeScheme, dt: f64, ic: InitialCondition) -> RunConfig {
    RunConfig {
        n_per_side: n,
        l: 1,
        nu,
        t_final: t,
        stabilizer: stab,
        mass: MassKind::Consistent,
        stepper: TimeStepperSpec::fixed(scheme, dt),
        delta_policy: DeltaPolicy::Fixed(0.25),
        initial_condition: ic,
        outputs: Outputs {
            write_snapshots: false,
            ..Outputs::default()
        },
        seed: 2024,
        estimator: EstimatorOptions::default(),
    }
}

fn rough(cells: usize, amplitude: f64) -> InitialCondition {
    InitialCondition::RoughRandom { cells, amplitude }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, String> {
    Ok(Outcome { pass, detail })
}

fn rate(h: (f64, f64), e: (f64, f64)) -> f64 {
    (e.0 / e.1).ln() / (h.0 / h.1).ln()
}

/// Enstrophy nonincrease, second-order energy-identity defect, mean conservation.
fn conservation() -> Result<Outcome, String> {
    let nu = 1e-3;
    let mut drifts = Vec::new();
    let mut worst_increase = f64::NEG_INFINITY;
    let mut worst_mean = 0.0f64;
    let mut tol = 0.0;
    for dt in [4e-3, 2e-3, 1e-3] {
        let cfg = config(32, nu, 0.5, StabilizerSpec::new(StabilizerKind::SdJump), TimeScheme::CrankNicolson, dt, rough(0, 1.0));
        tol = cfg.stepper.nonlinear_tol;
        let run = harness::execute(&cfg).map_err(|e| e.to_string())?;
        let l = &run.output.ledger;
        for w in l.windows(2) {
            worst_increase = worst_increase.max(2.0 * (w[1].enstrophy - w[0].enstrophy));
        }
        // ||u(T)||^2 - ||u(0)||^2 + 2 nu int ||omega||^2 dt, trapezoid in time
        let dissipated: f64 = l.windows(2).map(|w| 0.5 * (w[1].t - w[0].t) * 2.0 * (w[0].enstrophy + w[1].enstrophy)).sum();
        let e = l.last().unwrap().energy * 2.0 - l[0].energy * 2.0 + 2.0 * nu * dissipated;
        drifts.push(e.abs());
        worst_mean = worst_mean.max(run.summary.mean_drift);
    }
    let r1 = rate((4e-3, 2e-3), (drifts[0], drifts[1]));
    let r2 = rate((2e-3, 1e-3), (drifts[1], drifts[2]));
    let pass = worst_increase <= 10.0 * tol && (r1 - 2.0).abs() <= 0.3 && (r2 - 2.0).abs() <= 0.3 && worst_mean <= 1e-12;
    outcome(
        pass,
        format!(
            "max enstrophy increase {worst_increase:.3e} (limit {:.1e}); energy defects {:.3e}, {:.3e}, {:.3e}; orders {r1:.3}, {r2:.3}; mean drift {worst_mean:.2e}",
            10.0 * tol,
            drifts[0],
            drifts[1],
            drifts[2]
        ),
    )
}

/// Energy conservation of the streamline jump penalty at zero viscosity.
fn energy_consistency() -> Result<Outcome, String> {
    let cfg = config(32, 0.0, 0.25, StabilizerSpec::new(StabilizerKind::SdJump), TimeScheme::CrankNicolson, 5e-4, rough(0, 1.0));
    let run = harness::execute(&cfg).map_err(|e| e.to_string())?;
    let l = &run.output.ledger;
    let rel = (l.last().unwrap().energy - l[0].energy).abs() / l[0].energy;
    outcome(rel <= 1e-6, format!("relative energy change {rel:.3e} (limit 1e-6) over {} steps", l.len() - 1))
}

fn taylor_green_base() -> RunConfig {
    let mut stab = StabilizerSpec::new(StabilizerKind::CdJump);
    stab.mu = 2;
    let mut cfg = config(16, 1e-2, 0.1, stab, TimeScheme::CrankNicolson, 1e-3, InitialCondition::TaylorGreen);
    cfg.l = 2;
    cfg
}

/// Smooth-solution convergence (also feeds the effectivity check).
fn smooth_convergence(table: &harness::ConvergenceTable) -> Result<Outcome, String> {
    if !table.complete {
        return outcome(false, format!("sweep incomplete: {:?}", table.failure));
    }
    let w: Vec<f64> = table.rates.iter().map(|r| r.omega_l2.unwrap_or(f64::NAN)).collect();
    let u: Vec<f64> = table.rates.iter().map(|r| r.velocity_l2.unwrap_or(f64::NAN)).collect();
    let pass = w.iter().all(|&r| r >= 1.4) && u.iter().all(|&r| r >= 1.8);
    let errs: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("n={} |w|={:.3e} |u|={:.3e}", r.n, r.omega_l2_error.unwrap_or(f64::NAN), r.velocity_l2_error.unwrap_or(f64::NAN)))
        .collect();
    outcome(pass, format!("{}; vorticity rates {w:.3?} (>= 1.4); velocity rates {u:.3?} (>= 1.8)", errs.join(", ")))
}

/// Maximum principle with calibrated monotone stabilizers.
fn maximum_principle() -> Result<Outcome, String> {
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in [StabilizerKind::AvMonotone, StabilizerKind::NonlinearMonotone] {
        for amplitude in [1.0, 20.0] {
            let mut cfg = config(16, 0.0, 0.2, StabilizerSpec::new(kind), TimeScheme::ImplicitEuler, 0.01, rough(0, amplitude));
            cfg.mass = MassKind::Lumped;
            let start = Instant::now();
            let r = harness::dmp_check(&cfg).map_err(|e| e.to_string())?;
            let secs = start.elapsed().as_secs_f64();
            pass &= r.pass && secs <= 60.0;
            parts.push(format!(
                "{kind:?} amplitude {amplitude}: overshoot {:.2e} at gamma {} (unstabilized {:.2e}), {secs:.1}s",
                r.relative_overshoot, r.gamma_used, r.unstabilized_relative_overshoot
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

/// Filter and triple-norm closed forms, order-2 refinement, discrete identity.
fn filter_oracle() -> Result<Outcome, String> {
    let e = |p: [f64; 2]| (2.0 * PI * p[0]).sin();
    let mut pass = true;
    let mut parts = Vec::new();
    for delta in [0.1, 0.25, 1.0] {
        let damp = 1.0 / (1.0 + 4.0 * PI * PI * delta * delta);
        let mut field_err = Vec::new();
        let mut norm_err = Vec::new();
        let mut identity = 0.0f64;
        let ns = [16usize, 32, 64];
        for &n in &ns {
            let f = HelmholtzFilter::new(n).map_err(|e| e.to_string())?;
            let fe = f.filter(e, delta, "sin").map_err(|e| e.to_string())?;
            field_err.push(fe.field.l2_error(|p| e(p) * damp));
            let tn = f.triple_norm(&fe);
            norm_err.push((tn * tn - 0.5 * damp).abs());
            identity = identity.max((tn * tn - fe.source_pairing).abs());
        }
        let rf: Vec<f64> = (0..2).map(|k| rate((1.0, 0.5), (field_err[k], field_err[k + 1]))).collect();
        let rn: Vec<f64> = (0..2).map(|k| rate((1.0, 0.5), (norm_err[k], norm_err[k + 1]))).collect();
        let ok = rf.iter().chain(&rn).all(|r| (r - 2.0).abs() <= 0.3) && identity <= 1e-10;
        pass &= ok;
        parts.push(format!("delta {delta}: field orders {rf:.2?}, norm orders {rn:.2?}, identity {identity:.1e}"));
    }
    outcome(pass, parts.join("; "))
}

/// Effectivity on the smooth sweep plus the structural zeros of R2, R4, R5.
fn estimator_sanity(table: &harness::ConvergenceTable) -> Result<Outcome, String> {
    let eff: Vec<f64> = table.rows.iter().map(|r| r.effectivity.unwrap_or(f64::NAN)).collect();
    let mut pass = table.complete && eff.len() == 3 && eff.iter().all(|&e| e >= 1.0);
    let base = config(16, 0.0, 0.05, StabilizerSpec::new(StabilizerKind::SdJump), TimeScheme::CrankNicolson, 0.01, rough(0, 1.0));
    let inviscid = harness::execute(&base).map_err(|e| e.to_string())?.summary.report;
    let mut viscous = base.clone();
    viscous.nu = 1e-2;
    let consistent = harness::execute(&viscous).map_err(|e| e.to_string())?.summary.report;
    let mut plain = viscous.clone();
    plain.stabilizer = StabilizerSpec::default();
    let unstabilized = harness::execute(&plain).map_err(|e| e.to_string())?.summary.report;
    let mut lumped = viscous.clone();
    lumped.mass = MassKind::Lumped;
    let lumped = harness::execute(&lumped).map_err(|e| e.to_string())?.summary.report;
    pass &= inviscid.r2 == 0.0 && consistent.r4 == 0.0 && unstabilized.r5 == 0.0;
    pass &= consistent.r2 > 0.0 && lumped.r4 > 0.0 && consistent.r5 > 0.0;
    outcome(
        pass,
        format!(
            "effectivity {eff:.2?} (>= 1); R2(nu=0) = {}, R4(consistent) = {}, R5(none) = {}; controls R2 = {:.2e}, R4(lumped) = {:.2e}, R5 = {:.2e}",
            inviscid.r2, consistent.r4, unstabilized.r5, consistent.r2, lumped.r4, consistent.r5
        ),
    )
}

/// Residual sum bounded across meshes for rough data; total bound decays.
fn robust_scaling() -> Result<Outcome, String> {
    let mut stab = StabilizerSpec::new(StabilizerKind::CdJump);
    stab.mu = 2;
    let cfg = config(16, 1e-3, 0.1, stab, TimeScheme::CrankNicolson, 1e-3, rough(64, 1.0));
    let table = harness::converge(&cfg, &[16, 32, 64], 0.25).map_err(|e| e.to_string())?;
    if !table.complete {
        return outcome(false, format!("sweep incomplete: {:?}", table.failure));
    }
    let sums: Vec<f64> = table.rows.iter().map(|r| r.residual_sum).collect();
    let bounds: Vec<f64> = table.rows.iter().map(|r| r.total_bound).collect();
    let spread = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let rates: Vec<f64> = table.rates.iter().map(|r| r.total_bound.unwrap_or(f64::NAN)).collect();
    let pass = spread <= 3.0 && rates.iter().all(|&r| r >= 0.4);
    outcome(
        pass,
        format!("sum R_i {sums:.3?} (max/min {spread:.3} <= 3); total bound {bounds:.3?}, orders {rates:.3?} (>= 0.4)"),
    )
}

/// `mid <= upper` always and `lhs <= C mid` with `C <= 10` on random states.
fn stabilization_contract() -> Result<Outcome, String> {
    let mesh = Arc::new(PeriodicMesh::build_periodic(16).map_err(|e| e.to_string())?);
    let space = Arc::new(FeSpace::new(mesh.clone(), 1).map_err(|e| e.to_string())?);
    let poisson = PoissonSolver::new(space.clone(), space.clone()).map_err(|e| e.to_string())?;
    let projector = L2Projector::new(space.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cd = StabilizerSpec::new(StabilizerKind::CdJump).with_u0(1.0);
    cd.mu = 2;
    let specs = [StabilizerSpec::new(StabilizerKind::SdJump).with_u0(1.0), cd];
    let mut worst = [0.0f64; 2];
    let mut ordered = true;
    for _ in 0..100 {
        let sample = |rng: &mut ChaCha8Rng| {
            let mut c: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let m = c.iter().sum::<f64>() / c.len() as f64;
            c.iter_mut().for_each(|v| *v -= m);
            FeField::new(space.clone(), c)
        };
        let stream_source = sample(&mut rng);
        let omega = sample(&mut rng);
        let psi = poisson.solve(&stream_source, None).map_err(|e| e.to_string())?;
        let u = rotate(&psi);
        let scale = u.max_norm();
        let u = u.combine(1.0 / scale, &u, 0.0);
        for (k, spec) in specs.iter().enumerate() {
            let b = check_stab_bound1_with(spec, &u, &omega, &projector).map_err(|e| e.to_string())?;
            ordered &= b.mid <= b.upper;
            worst[k] = worst[k].max(b.lhs / b.mid);
        }
    }
    outcome(
        ordered && worst.iter().all(|&c| c <= 10.0),
        format!("mid <= upper on all states: {ordered}; worst C sd_jump {:.3}, cd_jump {:.3} (<= 10)", worst[0], worst[1]),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let sweep_start = Instant::now();
    let sweep = harness::converge(&taylor_green_base(), &[16, 32, 64], 0.25);
    let sweep_secs = sweep_start.elapsed().as_secs_f64();
    let criteria: Vec<(&str, Box<dyn Fn() -> Result<Outcome, String>>)> = vec![
        ("conservation", Box::new(conservation)),
        ("energy consistency", Box::new(energy_consistency)),
        (
            "smooth convergence",
            Box::new(|| match &sweep {
                Ok(t) => smooth_convergence(t).map(|mut o| {
                    o.pass &= sweep_secs <= 600.0;
                    o.detail.push_str(&format!("; sweep {sweep_secs:.1}s"));
                    o
                }),
                Err(e) => Err(e.to_string()),
            }),
        ),
        ("maximum principle", Box::new(maximum_principle)),
        ("filter oracle", Box::new(filter_oracle)),
        (
            "estimator sanity",
            Box::new(|| match &sweep {
                Ok(t) => estimator_sanity(t),
                Err(e) => Err(e.to_string()),
            }),
        ),
        ("robust scaling", Box::new(robust_scaling)),
        ("stabilization contract", Box::new(stabilization_contract)),
    ];
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {} [{name}]: {} ({:.1}s) {detail}",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed in {:.1}s", criteria.len() - failures, criteria.len(), start.elapsed().as_secs_f64());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
