//! Time integration of the coupled vorticity transport / stream-function
//! system: `(d_t w, v)_M + (u.grad w, v) + nu (grad w, grad v) + s(u; w, v) = 0`
//! with `(grad psi, grad phi) = (w, phi)` and `u = rot psi`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::psi_delta_norm_with;
use crate::fespace::{rotate, ElementVectorField, FeField, FeSpace, L2Projector, PoissonSolver};
use crate::linalg::{bicgstab, cg, norm2, solve_direct, CsrMatrix, SolverOptions};
use crate::mesh::{PeriodicMesh, Point};
use crate::quadrature::TriangleRule;
use crate::stabilizers::{self, streamline_defect, StabilizerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    #[default]
    CrankNicolson,
    ImplicitEuler,
    ExplicitEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeStepperSpec {
    pub scheme: TimeScheme,
    pub dt: Option<f64>,
    pub cfl_number: Option<f64>,
    pub nonlinear_tol: f64,
    pub max_picard_iters: usize,
}

impl Default for TimeStepperSpec {
    fn default() -> Self {
        Self {
            scheme: TimeScheme::CrankNicolson,
            dt: None,
            cfl_number: None,
            nonlinear_tol: 1e-10,
            max_picard_iters: 50,
        }
    }
}

impl TimeStepperSpec {
    pub fn fixed(scheme: TimeScheme, dt: f64) -> Self {
        Self {
            scheme,
            dt: Some(dt),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.dt, self.cfl_number) {
            (Some(dt), None) if dt > 0.0 && dt.is_finite() => {}
            (None, Some(c)) if c > 0.0 && c.is_finite() => {}
            (Some(_), Some(_)) | (None, None) => {
                return Err(invalid("exactly one of dt and cfl_number must be set"));
            }
            _ => return Err(invalid("time step parameters must be positive")),
        }
        if !(self.nonlinear_tol > 0.0) || self.max_picard_iters == 0 {
            return Err(invalid("nonlinear_tol and max_picard_iters must be positive"));
        }
        Ok(())
    }
}

/// Spaces, matrices and parameters shared by every state of one simulation.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Arc<PeriodicMesh>,
    omega_space: Arc<FeSpace>,
    psi_space: Arc<FeSpace>,
    pattern: CsrMatrix,
    mass_consistent: CsrMatrix,
    mass_lumped: CsrMatrix,
    stiffness: CsrMatrix,
    poisson: PoissonSolver,
    projector: L2Projector,
    psi_projector: Option<L2Projector>,
    neighbours: Vec<Vec<usize>>,
    nu: f64,
    stab: StabilizerSpec,
}

/// Running time integrals (trapezoidal rule) and maxima over the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Accumulators {
    pub nu_grad_sq: f64,
    pub stab_energy: f64,
    pub stab_energy_sqrt: f64,
    pub omega_linf: f64,
    pub grad_dt_omega: f64,
    pub umax: f64,
    last: Option<[f64; 4]>,
}

impl Accumulators {
    fn push(&mut self, dt: f64, nu_grad_sq: f64, stab: f64, linf: f64, umax: f64, grad_dt: f64) {
        let now = [nu_grad_sq, stab, stab.max(0.0).sqrt(), linf];
        if let Some(prev) = self.last {
            self.nu_grad_sq += 0.5 * dt * (prev[0] + now[0]);
            self.stab_energy += 0.5 * dt * (prev[1] + now[1]);
            self.stab_energy_sqrt += 0.5 * dt * (prev[2] + now[2]);
            self.omega_linf += 0.5 * dt * (prev[3] + now[3]);
            self.grad_dt_omega += dt * grad_dt;
        }
        self.umax = self.umax.max(umax);
        self.last = Some(now);
    }
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: f64,
    pub step: usize,
    pub omega: FeField,
    pub psi: FeField,
    pub velocity: ElementVectorField,
    pub accumulators: Accumulators,
}

/// One row of the conservation ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub enstrophy: f64,
    pub energy: f64,
    pub stab_energy: f64,
    pub omega_max: f64,
    pub omega_min: f64,
    pub dt: f64,
    pub picard_iters: usize,
}

/// Per-time quantities consumed by the residual estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub omega_l2: f64,
    pub omega_linf: f64,
    pub umax: f64,
    pub nu_grad_sq: f64,
    pub nu_jump_sq: f64,
    pub r1_density: f64,
    pub psi_delta0: f64,
    pub psi_delta_half: f64,
    pub grad_dt_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub l: usize,
    pub n_per_side: usize,
    pub omega_coeffs: Vec<f64>,
    pub psi_coeffs: Vec<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub dt: f64,
    pub picard_iters: usize,
    pub increment: f64,
    /// Largest positive off-diagonal entry, relative to the diagonal, of the
    /// transport operator in rows where the new vorticity has a local extremum.
    pub dmp_offdiag: f64,
    /// Explicit scheme only: largest step keeping the update a convex combination.
    pub monotone_dt_bound: Option<f64>,
}

/// Extremes of the nodal vorticity over a run relative to the initial range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct DmpSummary {
    pub initial_min: f64,
    pub initial_max: f64,
    pub run_min: f64,
    pub run_max: f64,
    /// `max(run_max - initial_max, initial_min - run_min, 0)`.
    pub overshoot: f64,
    pub worst_offdiag: f64,
}

impl DmpSummary {
    pub fn relative_overshoot(&self) -> f64 {
        let range = self.initial_max - self.initial_min;
        if range > 0.0 {
            self.overshoot / range
        } else {
            self.overshoot
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ledger: Vec<LedgerRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub snapshots: Vec<Snapshot>,
    pub dmp: DmpSummary,
}

impl Discretization {
    pub fn new(mesh: Arc<PeriodicMesh>, l: usize, nu: f64, stab: StabilizerSpec) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(invalid(format!("viscosity must be nonnegative, got {nu}")));
        }
        stab.validate()?;
        let omega_space = Arc::new(FeSpace::new(mesh.clone(), 1)?);
        let psi_space = Arc::new(FeSpace::new(mesh.clone(), l)?);
        let pattern = omega_space.face_pattern();
        let mass_consistent = omega_space.assemble_mass(false)?.on_pattern_of(&pattern);
        let mass_lumped = omega_space.assemble_mass(true)?.on_pattern_of(&pattern);
        let stiffness = omega_space.assemble_stiffness().on_pattern_of(&pattern);
        let poisson = PoissonSolver::new(psi_space.clone(), omega_space.clone())?;
        let projector = L2Projector::new(omega_space.clone())?;
        let psi_projector = if l == 2 { Some(L2Projector::new(psi_space.clone())?) } else { None };
        let mut neighbours = vec![Vec::new(); mesh.n_vertices()];
        for f in mesh.faces() {
            let [a, b] = f.vertices;
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        Ok(Self {
            mesh,
            omega_space,
            psi_space,
            pattern,
            mass_consistent,
            mass_lumped,
            stiffness,
            poisson,
            projector,
            psi_projector,
            neighbours,
            nu,
            stab,
        })
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh> {
        &self.mesh
    }

    pub fn omega_space(&self) -> &Arc<FeSpace> {
        &self.omega_space
    }

    pub fn psi_space(&self) -> &Arc<FeSpace> {
        &self.psi_space
    }

    pub fn l(&self) -> usize {
        self.psi_space.degree()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn stabilizer(&self) -> &StabilizerSpec {
        &self.stab
    }

    pub fn projector(&self) -> &L2Projector {
        &self.projector
    }

    pub fn mass(&self, lumped: bool) -> &CsrMatrix {
        if lumped {
            &self.mass_lumped
        } else {
            &self.mass_consistent
        }
    }

    /// `U0`, resolved once the initial state is known.
    pub fn u0(&self) -> f64 {
        self.stab.u0()
    }

    /// State with `omega_h(0) = pi_L omega0`, restricted to zero mean (the
    /// quadrature mean of discontinuous data is not exactly zero).
    pub fn initial_state(&mut self, omega0: impl Fn(Point) -> f64) -> Result<SimulationState> {
        let mut omega = self.projector.project_fn(omega0)?;
        let mut c = omega.coeffs().to_vec();
        self.correct_mean(&mut c, 0.0, false);
        omega.coeffs_mut().copy_from_slice(&c);
        self.state_from_omega(omega)
    }

    /// State from given nodal vorticity values.
    pub fn initial_state_from_coeffs(&mut self, coeffs: Vec<f64>) -> Result<SimulationState> {
        let omega = FeField::try_new(self.omega_space.clone(), coeffs)?;
        self.state_from_omega(omega)
    }

    fn state_from_omega(&mut self, omega: FeField) -> Result<SimulationState> {
        let psi = self.poisson.solve(&omega, None)?;
        let velocity = rotate(&psi);
        if self.stab.u0.is_none() {
            let u0 = velocity.max_norm();
            self.stab.u0 = Some(if u0 > 0.0 { u0 } else { 1.0 });
        }
        Ok(SimulationState {
            t: 0.0,
            step: 0,
            omega,
            psi,
            velocity,
            accumulators: Accumulators::default(),
        })
    }

    /// `C_ij = (u . grad phi_j, phi_i)` on the face pattern.
    pub fn convection_matrix(&self, u: &ElementVectorField) -> CsrMatrix {
        let mut mat = self.pattern.zeros_like();
        let rule = TriangleRule::degree4();
        for t in 0..self.mesh.n_triangles() {
            let geo = self.mesh.geometry(t);
            let mut local = [0.0; 9];
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let v = u.eval(t, lam);
                for j in 0..3 {
                    let a = w * geo.area * (v[0] * geo.grad_lambda[j][0] + v[1] * geo.grad_lambda[j][1]);
                    for i in 0..3 {
                        local[3 * i + j] += a * lam[i];
                    }
                }
            }
            mat.add_local(self.omega_space.element_dofs(t), &local);
        }
        mat
    }

    /// `C(u) + nu K + S(u; lag)`.
    pub fn transport_operator(&self, u: &ElementVectorField, lag: &FeField) -> Result<CsrMatrix> {
        let mut op = self.convection_matrix(u);
        if self.nu > 0.0 {
            op.axpy(self.nu, &self.stiffness);
        }
        let s = stabilizers::assemble_matrix(&self.stab, u, lag, &self.pattern)?;
        op.axpy(1.0, &s);
        Ok(op)
    }

    pub fn stab_energy(&self, state: &SimulationState) -> Result<f64> {
        let s = stabilizers::assemble_matrix(&self.stab, &state.velocity, &state.omega, &self.pattern)?;
        Ok(s.quadratic_form(state.omega.coeffs()))
    }

    pub fn enstrophy(&self, omega: &FeField, lumped: bool) -> f64 {
        0.5 * self.mass(lumped).quadratic_form(omega.coeffs())
    }

    /// `(1/2) || u_h ||^2 = (1/2) || grad psi_h ||^2`.
    pub fn energy(&self, state: &SimulationState) -> f64 {
        0.5 * self.poisson.stiffness().quadratic_form(state.psi.coeffs())
    }

    /// `(omega_h, 1)_M`.
    pub fn mean(&self, omega: &FeField, lumped: bool) -> f64 {
        self.mass(lumped).row_sums().iter().zip(omega.coeffs()).map(|(a, b)| a * b).sum()
    }

    fn refresh(&self, omega: FeField, guess: &FeField) -> Result<(FeField, ElementVectorField)> {
        let psi = self.poisson.solve(&omega, Some(guess))?;
        let u = rotate(&psi);
        Ok((psi, u))
    }

    fn dmp_offdiag(&self, op: &CsrMatrix, omega: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, nb) in self.neighbours.iter().enumerate() {
            let is_max = nb.iter().all(|&j| omega[j] <= omega[i]);
            let is_min = nb.iter().all(|&j| omega[j] >= omega[i]);
            if !(is_max || is_min) {
                continue;
            }
            let d = op.get(i, i).abs().max(f64::MIN_POSITIVE);
            for (j, v) in op.row(i) {
                if j != i && v > 0.0 {
                    worst = worst.max(v / d);
                }
            }
        }
        worst
    }

    fn step_size(&self, state: &SimulationState, stepper: &TimeStepperSpec) -> f64 {
        match (stepper.dt, stepper.cfl_number) {
            (Some(dt), _) => dt,
            (None, Some(c)) => c * self.mesh.h() / self.u0().max(state.velocity.max_norm()),
            (None, None) => unreachable!("validated stepper"),
        }
    }

    /// Advances `state` by one step of size `stepper.dt` (or the CFL step).
    pub fn step(&self, state: &mut SimulationState, stepper: &TimeStepperSpec, lumped: bool) -> Result<StepReport> {
        stepper.validate()?;
        let dt = self.step_size(state, stepper);
        self.step_with(state, stepper, lumped, dt)
    }

    /// Advances `state` by one step of the given size.
    pub fn step_with(&self, state: &mut SimulationState, stepper: &TimeStepperSpec, lumped: bool, dt: f64) -> Result<StepReport> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let report = match stepper.scheme {
            TimeScheme::CrankNicolson => self.theta_step(state, stepper, lumped, dt, 0.5)?,
            TimeScheme::ImplicitEuler => self.theta_step(state, stepper, lumped, dt, 1.0)?,
            TimeScheme::ExplicitEuler => self.explicit_step(state, lumped, dt)?,
        };
        Ok(report)
    }

    fn correct_mean(&self, x: &mut [f64], target: f64, lumped: bool) {
        let m = self.mass(lumped);
        let sums = m.row_sums();
        let now: f64 = sums.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let total: f64 = sums.iter().sum();
        let c = (target - now) / total;
        for v in x.iter_mut() {
            *v += c;
        }
    }

    fn theta_step(&self, state: &mut SimulationState, stepper: &TimeStepperSpec, lumped: bool, dt: f64, theta: f64) -> Result<StepReport> {
        let mass = self.mass(lumped);
        let w_n = state.omega.clone();
        let mw_n = mass.mul_vec(w_n.coeffs());
        let target = mw_n.iter().sum::<f64>();
        let mut w_k = w_n.clone();
        let mut psi_k = state.psi.clone();
        let mut u_k = state.velocity.clone();
        let mut increment = f64::INFINITY;
        let mut iters = 0;
        let mut last_op = None;
        let opts = SolverOptions {
            rel_tol: 1e-13,
            ..SolverOptions::default()
        };
        while iters < stepper.max_picard_iters {
            iters += 1;
            // The sign-type weights of the nonlinear stabilizer are frozen at
            // the start of the step; Picard then only resolves the velocity.
            let (u_eval, lag) = if theta < 1.0 {
                let mut mid = w_n.clone();
                mid.axpy(1.0, &w_k);
                (state.velocity.combine(0.5, &u_k, 0.5), mid.scaled(0.5))
            } else {
                (u_k.clone(), w_k.clone())
            };
            let lag = if self.stab.is_nonlinear() { w_n.clone() } else { lag };
            let op = self.transport_operator(&u_eval, &lag)?;
            let mut rhs: Vec<f64> = mw_n.iter().map(|v| v / dt).collect();
            if theta < 1.0 {
                let lw = op.mul_vec(w_n.coeffs());
                for (r, l) in rhs.iter_mut().zip(&lw) {
                    *r -= (1.0 - theta) * l;
                }
            }
            let mut system = mass.clone();
            system.scale(1.0 / dt);
            system.axpy(theta, &op);
            let mut x = w_k.coeffs().to_vec();
            if bicgstab(&system, &rhs, &mut x, opts).is_err() {
                x = solve_direct(&system, &rhs)?;
            }
            self.correct_mean(&mut x, target, lumped);
            let diff: Vec<f64> = x.iter().zip(w_k.coeffs()).map(|(a, b)| a - b).collect();
            let xn = norm2(&x);
            increment = if xn > 0.0 { norm2(&diff) / xn } else { norm2(&diff) };
            let w_new = FeField::new(self.omega_space.clone(), x);
            let (psi, u) = self.refresh(w_new.clone(), &psi_k)?;
            w_k = w_new;
            psi_k = psi;
            u_k = u;
            last_op = Some(op);
            if increment <= stepper.nonlinear_tol {
                break;
            }
        }
        if increment > stepper.nonlinear_tol {
            return Err(Error::StepFailure {
                t: state.t,
                iterations: iters,
                increment,
            });
        }
        let dmp_offdiag = last_op.map_or(0.0, |op| self.dmp_offdiag(&op, w_k.coeffs()));
        state.omega = w_k;
        state.psi = psi_k;
        state.velocity = u_k;
        state.t += dt;
        state.step += 1;
        Ok(StepReport {
            dt,
            picard_iters: iters,
            increment,
            dmp_offdiag,
            monotone_dt_bound: None,
        })
    }

    fn explicit_step(&self, state: &mut SimulationState, lumped: bool, dt: f64) -> Result<StepReport> {
        let mass = self.mass(lumped);
        let op = self.transport_operator(&state.velocity, &state.omega)?;
        let w = state.omega.coeffs();
        let target: f64 = mass.mul_vec(w).iter().sum();
        let lw = op.mul_vec(w);
        let mut x = w.to_vec();
        if lumped {
            let m = mass.diagonal();
            for i in 0..x.len() {
                x[i] -= dt * lw[i] / m[i];
            }
        } else {
            let mut inc = vec![0.0; x.len()];
            cg(mass, &lw, &mut inc, SolverOptions { rel_tol: 1e-13, ..SolverOptions::default() })?;
            for (xi, d) in x.iter_mut().zip(&inc) {
                *xi -= dt * d;
            }
        }
        self.correct_mean(&mut x, target, lumped);
        let m = mass.row_sums();
        let bound = (0..x.len())
            .map(|i| {
                let d = op.get(i, i);
                if d > 0.0 {
                    m[i] / d
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min);
        let dmp_offdiag = self.dmp_offdiag(&op, &x);
        let omega = FeField::new(self.omega_space.clone(), x);
        let (psi, u) = self.refresh(omega.clone(), &state.psi)?;
        state.omega = omega;
        state.psi = psi;
        state.velocity = u;
        state.t += dt;
        state.step += 1;
        Ok(StepReport {
            dt,
            picard_iters: 0,
            increment: 0.0,
            dmp_offdiag,
            monotone_dt_bound: Some(bound),
        })
    }

    pub fn ledger_row(&self, state: &SimulationState, lumped: bool, dt: f64, picard_iters: usize) -> Result<LedgerRow> {
        Ok(LedgerRow {
            t: state.t,
            enstrophy: self.enstrophy(&state.omega, lumped),
            energy: self.energy(state),
            stab_energy: self.stab_energy(state)?,
            omega_max: state.omega.max_nodal(),
            omega_min: state.omega.min_nodal(),
            dt,
            picard_iters,
        })
    }

    /// `nu sum_F || [n_F . grad omega] ||_F^2`.
    pub fn nu_jump_sq(&self, omega: &FeField) -> f64 {
        if self.nu == 0.0 {
            return 0.0;
        }
        let c = [1.0 / 3.0; 3];
        self.mesh
            .faces()
            .iter()
            .map(|f| {
                let gm = omega.grad_at(f.tminus, &c);
                let gp = omega.grad_at(f.tplus, &c);
                let j = f.normal[0] * (gm[0] - gp[0]) + f.normal[1] * (gm[1] - gp[1]);
                f.length * j * j
            })
            .sum::<f64>()
            * self.nu
    }

    pub fn diagnostics_row(&self, state: &SimulationState, previous: Option<(&FeField, f64)>) -> Result<DiagnosticsRow> {
        let grad_dt_omega = match previous {
            Some((prev, dt)) => {
                let d: Vec<f64> = state.omega.coeffs().iter().zip(prev.coeffs()).map(|(a, b)| a - b).collect();
                self.stiffness.quadratic_form(&d).max(0.0).sqrt() / dt
            }
            None => 0.0,
        };
        Ok(DiagnosticsRow {
            t: state.t,
            omega_l2: state.omega.l2_norm(),
            omega_linf: state.omega.linf_norm(),
            umax: state.velocity.max_norm(),
            nu_grad_sq: self.nu * self.stiffness.quadratic_form(state.omega.coeffs()),
            nu_jump_sq: self.nu_jump_sq(&state.omega),
            r1_density: streamline_defect(&state.velocity, &state.omega, &self.projector)?,
            psi_delta0: psi_delta_norm_with(&state.psi, 0.0, self.psi_projector.as_ref())?,
            psi_delta_half: psi_delta_norm_with(&state.psi, 0.5, self.psi_projector.as_ref())?,
            grad_dt_omega,
        })
    }

    pub fn snapshot(&self, state: &SimulationState, config_hash: &str) -> Snapshot {
        Snapshot {
            t: state.t,
            l: self.l(),
            n_per_side: self.mesh.n_per_side(),
            omega_coeffs: state.omega.coeffs().to_vec(),
            psi_coeffs: state.psi.coeffs().to_vec(),
            config_hash: config_hash.to_string(),
        }
    }

    /// Steps from `state.t` to `t_final`, recording ledger and diagnostics
    /// rows at every step and snapshots at multiples of `snapshot_every`
    /// (plus the first and last time).
    pub fn run(
        &self,
        state: &mut SimulationState,
        stepper: &TimeStepperSpec,
        lumped: bool,
        t_final: f64,
        snapshot_every: Option<f64>,
        config_hash: &str,
    ) -> Result<RunOutput> {
        stepper.validate()?;
        if !(t_final >= state.t) {
            return Err(invalid(format!("final time {t_final} precedes current time {}", state.t)));
        }
        let t0 = state.t;
        let mut out = RunOutput {
            ledger: vec![self.ledger_row(state, lumped, 0.0, 0)?],
            diagnostics: vec![self.diagnostics_row(state, None)?],
            snapshots: vec![self.snapshot(state, config_hash)],
            dmp: DmpSummary {
                initial_min: state.omega.min_nodal(),
                initial_max: state.omega.max_nodal(),
                run_min: state.omega.min_nodal(),
                run_max: state.omega.max_nodal(),
                ..DmpSummary::default()
            },
        };
        self.accumulate(state, &out.ledger[0], &out.diagnostics[0], 0.0);
        let fixed_steps = stepper.dt.map(|dt| {
            let n = ((t_final - t0) / dt - 1e-9).ceil().max(0.0) as usize;
            (n, if n > 0 { (t_final - t0) / n as f64 } else { 0.0 })
        });
        let mut next_snapshot = snapshot_every.map(|s| t0 + s);
        let mut k = 0usize;
        loop {
            let dt = match fixed_steps {
                Some((n, dt)) => {
                    if k == n {
                        break;
                    }
                    dt
                }
                None => {
                    let remaining = t_final - state.t;
                    if remaining <= 1e-12 * t_final.abs().max(1.0) {
                        break;
                    }
                    self.step_size(state, stepper).min(remaining)
                }
            };
            let previous = state.omega.clone();
            let report = self.step_with(state, stepper, lumped, dt)?;
            if fixed_steps.is_some_and(|(n, _)| k + 1 == n) {
                state.t = t_final;
            }
            k += 1;
            let row = self.ledger_row(state, lumped, dt, report.picard_iters)?;
            let diag = self.diagnostics_row(state, Some((&previous, dt)))?;
            self.accumulate(state, &row, &diag, dt);
            out.dmp.run_min = out.dmp.run_min.min(row.omega_min);
            out.dmp.run_max = out.dmp.run_max.max(row.omega_max);
            out.dmp.worst_offdiag = out.dmp.worst_offdiag.max(report.dmp_offdiag);
            out.ledger.push(row);
            out.diagnostics.push(diag);
            if let (Some(every), Some(next)) = (snapshot_every, next_snapshot.as_mut()) {
                if state.t >= *next - 1e-12 && state.t < t_final - 1e-12 {
                    out.snapshots.push(self.snapshot(state, config_hash));
                    while *next <= state.t + 1e-12 {
                        *next += every;
                    }
                }
            }
        }
        if out.snapshots.last().is_none_or(|s| s.t != state.t) {
            out.snapshots.push(self.snapshot(state, config_hash));
        }
        let d = &mut out.dmp;
        d.overshoot = (d.run_max - d.initial_max).max(d.initial_min - d.run_min).max(0.0);
        Ok(out)
    }

    fn accumulate(&self, state: &mut SimulationState, row: &LedgerRow, diag: &DiagnosticsRow, dt: f64) {
        state
            .accumulators
            .push(dt, diag.nu_grad_sq, row.stab_energy, diag.omega_linf, diag.umax, diag.grad_dt_omega);
    }
}

/// Builds the discretization and the initial state `omega_h(0) = pi_L omega0`.
pub fn initialize(
    mesh: Arc<PeriodicMesh>,
    l: usize,
    omega0: impl Fn(Point) -> f64,
    nu: f64,
    stab: StabilizerSpec,
) -> Result<(Discretization, SimulationState)> {
    let mut disc = Discretization::new(mesh, l, nu, stab)?;
    let state = disc.initial_state(omega0)?;
    Ok((disc, state))
}

/// Mean of the lumped-mass pairing used to check conservation.
pub fn mean_vorticity(disc: &Discretization, state: &SimulationState, lumped: bool) -> f64 {
    disc.mean(&state.omega, lumped)
}
