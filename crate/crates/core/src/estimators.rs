//! Helmholtz-filtered error norms, the residual terms `R0..R5` of the
//! filtered-vorticity a posteriori bound, the velocity bound and the flow
//! timescale functional.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fespace::{ElementVectorField, FeField, FeSpace, L2Projector};
use crate::linalg::{cg, CsrMatrix, SolverOptions};
use crate::mesh::{PeriodicMesh, Point};
use crate::quadrature::{LineRule, TriangleRule};
use crate::solver::{DiagnosticsRow, LedgerRow};
use crate::stabilizers::StabilizerKind;

/// Closed-form vorticity and velocity, used to measure true errors.
pub trait ExactFields: Sync {
    fn omega(&self, p: Point, t: f64) -> f64;
    fn velocity(&self, p: Point, t: f64) -> [f64; 2];
}

/// `|| h^s [n_F . grad psi] ||_F + (sum_K || h^{1/2+s} (Lap psi - pi_L Lap psi) ||_K^2)^{1/2}`
/// with the global mesh size `h`.
pub fn psi_delta_norm(psi: &FeField, s: f64) -> Result<f64> {
    psi_delta_norm_with(psi, s, None)
}

/// As [`psi_delta_norm`], reusing a mass-matrix projector on the space of
/// `psi` (only consulted for P2).
pub fn psi_delta_norm_with(psi: &FeField, s: f64, projector: Option<&L2Projector>) -> Result<f64> {
    if !(s == 0.0 || s == 0.5) {
        return Err(invalid(format!("s must be 0 or 1/2, got {s}")));
    }
    let space = psi.space();
    let mesh = space.mesh();
    let h = mesh.h();
    let rule = LineRule::face();
    let mut jump_sq = 0.0;
    for f in mesh.faces() {
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let gm = psi.grad_at(f.tminus, &crate::fespace::edge_lambda(f.local_minus, x));
            let gp = psi.grad_at(f.tplus, &crate::fespace::edge_lambda(f.local_plus, x));
            let j = f.normal[0] * (gm[0] - gp[0]) + f.normal[1] * (gm[1] - gp[1]);
            jump_sq += w * f.length * j * j;
        }
    }
    let face_term = h.powf(s) * jump_sq.sqrt();
    if space.degree() == 1 {
        return Ok(face_term);
    }
    let laplacians = elementwise_laplacian(psi);
    let owned;
    let projector = match projector {
        Some(p) => p,
        None => {
            owned = L2Projector::new(space.clone())?;
            &owned
        }
    };
    let tri = TriangleRule::degree4();
    let proj = projector.project_with(&tri, |t, _, _| laplacians[t])?;
    let mut elem = 0.0;
    for (t, &lap) in laplacians.iter().enumerate() {
        let area = mesh.geometry(t).area;
        for (lam, w) in tri.points.iter().zip(&tri.weights) {
            elem += w * area * (lap - proj.value_at(t, lam)).powi(2);
        }
    }
    Ok(face_term + (h.powf(1.0 + 2.0 * s) * elem).sqrt())
}

/// Elementwise (constant) Laplacian of a P2 field; zero for P1.
pub fn elementwise_laplacian(psi: &FeField) -> Vec<f64> {
    let space = psi.space();
    let mesh = space.mesh();
    (0..mesh.n_triangles())
        .map(|t| {
            if space.degree() == 1 {
                return 0.0;
            }
            let g = &mesh.geometry(t).grad_lambda;
            let dofs = space.element_dofs(t);
            let c = psi.coeffs();
            let d = |a: usize, b: usize| g[a][0] * g[b][0] + g[a][1] * g[b][1];
            (0..3)
                .map(|k| {
                    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                    c[dofs[k]] * 4.0 * d(k, k) + c[dofs[3 + k]] * 8.0 * d(a, b)
                })
                .sum()
        })
        .collect()
}

/// P1 space on a refined mesh with its mass and stiffness matrices, used to
/// solve `delta^2 (grad e~, grad v) + (e~, v) = (e, v)`.
#[derive(Debug, Clone)]
pub struct HelmholtzFilter {
    space: Arc<FeSpace>,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
}

/// Solution of the filter problem together with the discrete pairing `(e, e~)`.
#[derive(Debug, Clone)]
pub struct FilteredField {
    pub delta: f64,
    pub field: FeField,
    pub source_description: String,
    pub source_pairing: f64,
}

impl HelmholtzFilter {
    /// Filter space with `n_per_side` subdivisions.
    pub fn new(n_per_side: usize) -> Result<Self> {
        let mesh = Arc::new(PeriodicMesh::build_periodic(n_per_side)?);
        let space = Arc::new(FeSpace::new(mesh, 1)?);
        Ok(Self {
            mass: space.assemble_mass(false)?,
            stiffness: space.assemble_stiffness(),
            space,
        })
    }

    /// Filter space refined `filter_refine` times relative to an `n`-mesh.
    pub fn refined(n: usize, filter_refine: u32) -> Result<Self> {
        Self::new(n << filter_refine)
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn filter(&self, e: impl Fn(Point) -> f64, delta: f64, description: &str) -> Result<FilteredField> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(invalid(format!("filter width must be nonnegative, got {delta}")));
        }
        let b = self.space.load_vector(&TriangleRule::high_order(), |_, _, p| e(p));
        let mut system = self.stiffness.clone();
        system.scale(delta * delta);
        system.axpy(1.0, &self.mass);
        let mut c = vec![0.0; b.len()];
        cg(
            &system,
            &b,
            &mut c,
            SolverOptions {
                rel_tol: 1e-14,
                ..SolverOptions::default()
            },
        )?;
        let source_pairing = crate::linalg::dot(&b, &c);
        Ok(FilteredField {
            delta,
            field: FeField::new(self.space.clone(), c),
            source_description: description.to_string(),
            source_pairing,
        })
    }

    /// `|||e~|||_delta = (|| delta grad e~ ||^2 + || e~ ||^2)^{1/2}`.
    pub fn triple_norm(&self, f: &FilteredField) -> f64 {
        let c = f.field.coeffs();
        (f.delta * f.delta * self.stiffness.quadratic_form(c) + self.mass.quadratic_form(c))
            .max(0.0)
            .sqrt()
    }
}

/// Filters `e` on the mesh with `n << filter_refine` subdivisions.
pub fn helmholtz_filter(e: impl Fn(Point) -> f64, delta: f64, n: usize, filter_refine: u32) -> Result<FilteredField> {
    HelmholtzFilter::refined(n, filter_refine)?.filter(e, delta, "function")
}

/// Filters a finite element field, evaluated pointwise on the filter mesh.
pub fn helmholtz_filter_field(e: &FeField, delta: f64, filter_refine: u32) -> Result<FilteredField> {
    let n = e.space().mesh().n_per_side();
    HelmholtzFilter::refined(n, filter_refine)?.filter(|p| e.eval(p), delta, "finite element field")
}

/// `|||e~|||_delta` by quadrature on the filter space of `f`.
pub fn triple_norm(f: &FilteredField) -> f64 {
    let space = f.field.space();
    let rule = TriangleRule::high_order();
    let mesh = space.mesh();
    let mut s = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.geometry(t).area;
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            let v = f.field.value_at(t, lam);
            let g = f.field.grad_at(t, lam);
            s += w * area * (v * v + f.delta * f.delta * (g[0] * g[0] + g[1] * g[1]));
        }
    }
    s.sqrt()
}

/// Time history needed by [`compute_report`].
#[derive(Debug, Clone, Default)]
pub struct History {
    pub ledger: Vec<LedgerRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
}

pub const DIAGNOSTICS_COLUMNS: [&str; 10] = [
    "t",
    "omega_l2",
    "omega_linf",
    "umax",
    "nu_grad_sq",
    "nu_jump_sq",
    "r1_density",
    "psi_delta0",
    "psi_delta_half",
    "grad_dt_omega",
];

pub const LEDGER_COLUMNS: [&str; 8] = ["t", "enstrophy", "energy", "stab_energy", "omega_max", "omega_min", "dt", "picard_iters"];

impl History {
    /// Reads ledger and diagnostics CSV files, reporting the first missing
    /// column by name.
    pub fn from_csv(ledger: impl std::io::Read, diagnostics: impl std::io::Read) -> Result<Self> {
        Ok(Self {
            ledger: read_rows(ledger, &LEDGER_COLUMNS, "ledger")?,
            diagnostics: read_rows(diagnostics, &DIAGNOSTICS_COLUMNS, "diagnostics")?,
        })
    }
}

fn read_rows<T: serde::de::DeserializeOwned>(reader: impl std::io::Read, columns: &[&str], what: &str) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for c in columns {
        if !headers.iter().any(|h| h == *c) {
            return Err(invalid(format!("{what} history is missing column `{c}`")));
        }
    }
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

/// Run parameters entering the residual terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportParams {
    pub h: f64,
    pub nu: f64,
    pub u0: f64,
    pub lumped: bool,
    /// Approximation constants of the two branches of `R3`.
    pub c0: f64,
    pub c1: f64,
    /// `R0 = || omega(0) - omega_h(0) ||`.
    pub r0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R3Branch {
    StreamFunction,
    Vorticity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub delta: f64,
    pub h: f64,
    pub t_final: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub r5: f64,
    pub r3_branch: R3Branch,
    /// `sup_t || psi_h ||_{Delta,0}`.
    pub psi_norm_delta0: f64,
    /// `|| psi_h(T) ||_{Delta,1/2}`.
    pub psi_norm_delta_half: f64,
    pub prefactor: f64,
    pub residual_sum: f64,
    pub total_bound: f64,
    pub exponential_factor: Option<f64>,
    pub triple_norm_error: Option<f64>,
    pub effectivity: Option<f64>,
    pub velocity_bound: Option<f64>,
    pub velocity_error: Option<f64>,
}

fn trapezoid(t: &[f64], v: impl Fn(usize) -> f64) -> f64 {
    (1..t.len()).map(|k| 0.5 * (t[k] - t[k - 1]) * (v(k) + v(k - 1))).sum()
}

/// Residual terms and bound from a recorded history.
pub fn compute_report(history: &History, params: &ReportParams, delta: f64) -> Result<EstimatorReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid(format!("filter width must be positive, got {delta}")));
    }
    let d = &history.diagnostics;
    if d.is_empty() {
        return Err(invalid("diagnostics history is empty"));
    }
    if history.ledger.len() != d.len() {
        return Err(invalid(format!(
            "ledger ({} rows) and diagnostics ({} rows) histories differ in length",
            history.ledger.len(),
            d.len()
        )));
    }
    let t: Vec<f64> = d.iter().map(|r| r.t).collect();
    let t_final = t[t.len() - 1] - t[0];
    let h = params.h;
    let r1 = trapezoid(&t, |k| d[k].r1_density);
    let r2 = h.min((params.nu * t_final).sqrt()) * trapezoid(&t, |k| d[k].nu_jump_sq).max(0.0).sqrt();
    let linf_int = trapezoid(&t, |k| d[k].omega_linf);
    let psi_sup = d.iter().map(|r| r.psi_delta0).fold(0.0, f64::max);
    let omega_sup = d.iter().map(|r| r.omega_l2).fold(0.0, f64::max);
    let (a, b) = (params.c0 * psi_sup, params.c1 * h.sqrt() * omega_sup);
    let (r3_factor, r3_branch) = if a <= b { (a, R3Branch::StreamFunction) } else { (b, R3Branch::Vorticity) };
    let r3 = linf_int * r3_factor;
    let r4 = if params.lumped {
        h.powf(1.5) * (1..d.len()).map(|k| (t[k] - t[k - 1]) * d[k].grad_dt_omega).sum::<f64>()
    } else {
        0.0
    };
    let umax = d.iter().map(|r| r.umax).fold(0.0, f64::max);
    let l = &history.ledger;
    let r5 = (params.u0 + umax) * trapezoid(&t, |k| l[k].stab_energy.max(0.0).sqrt());
    let residual_sum = params.r0 + r1 + r2 + r3 + r4 + r5;
    let prefactor = (h / (delta * delta)).sqrt();
    Ok(EstimatorReport {
        delta,
        h,
        t_final,
        r0: params.r0,
        r1,
        r2,
        r3,
        r4,
        r5,
        r3_branch,
        psi_norm_delta0: psi_sup,
        psi_norm_delta_half: d[d.len() - 1].psi_delta_half,
        prefactor,
        residual_sum,
        total_bound: prefactor * residual_sum,
        exponential_factor: None,
        triple_norm_error: None,
        effectivity: None,
        velocity_bound: (delta == 1.0).then(|| d[d.len() - 1].psi_delta_half + prefactor * residual_sum),
        velocity_error: None,
    })
}

/// Fills in the true filtered vorticity error at the final time, the
/// effectivity and the true velocity error.
pub fn attach_exact(
    report: &mut EstimatorReport,
    exact: &dyn ExactFields,
    omega: &FeField,
    velocity: &ElementVectorField,
    t: f64,
    filter: &HelmholtzFilter,
) -> Result<()> {
    let filtered = filter.filter(|p| exact.omega(p, t) - omega.eval(p), report.delta, "exact minus discrete vorticity")?;
    let err = filter.triple_norm(&filtered);
    report.triple_norm_error = Some(err);
    report.effectivity = if err > 0.0 { Some(report.total_bound / err) } else { None };
    report.velocity_error = Some(velocity.l2_error(|p| exact.velocity(p, t)));
    Ok(())
}

/// `|| psi_h ||_{Delta,1/2} + |||(omega~ - omega~_h)|||_1`-bound; needs a report with `delta = 1`.
pub fn velocity_error_bound(report: &EstimatorReport, psi: &FeField) -> Result<f64> {
    if report.delta != 1.0 {
        return Err(invalid(format!("velocity bound needs a report with delta = 1, got {}", report.delta)));
    }
    Ok(psi_delta_norm(psi, 0.5)? + report.total_bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimescaleReport {
    pub j_value: f64,
    pub shear_part: f64,
    pub fluctuation_part: f64,
    pub tau_f_upper: f64,
}

/// `J(u_bar, u') = sup |strain eigen-expression of u_bar| + nu^{-1} sup |u'|^2`
/// sampled on an `m x m` grid. `grad_u_bar(p)[i][j] = d_j u_bar_i`.
pub fn timescale_functional(
    grad_u_bar: impl Fn(Point) -> [[f64; 2]; 2],
    u_prime: impl Fn(Point) -> [f64; 2],
    nu: f64,
    m: usize,
) -> Result<TimescaleReport> {
    if !(nu > 0.0) {
        return Err(invalid(format!("viscosity must be positive, got {nu}")));
    }
    if m == 0 {
        return Err(invalid("sampling grid must be nonempty"));
    }
    let mut shear = 0.0f64;
    let mut fluct = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let p = [i as f64 / m as f64, j as f64 / m as f64];
            let g = grad_u_bar(p);
            let a = g[0][0] - g[1][1];
            let b = g[0][1] + g[1][0];
            shear = shear.max(a.hypot(b));
            let v = u_prime(p);
            fluct = fluct.max(v[0] * v[0] + v[1] * v[1]);
        }
    }
    let j_value = shear + fluct / nu;
    Ok(TimescaleReport {
        j_value,
        shear_part: shear,
        fluctuation_part: fluct / nu,
        tau_f_upper: if j_value > 0.0 { 1.0 / j_value } else { f64::INFINITY },
    })
}

/// `|| omega_h ||_inf / (c(h) (|| omega_h || + s^{1/2}))` with the mesh
/// function `c(h)` of the discrete Sobolev injection for the given kind.
pub fn sobolev_injection_ratio(omega_linf: f64, omega_l2: f64, stab_energy: f64, h: f64, kind: StabilizerKind, mu: u32) -> f64 {
    let log = 1.0 + h.ln().abs();
    let c = match kind {
        StabilizerKind::CdJump => h.powf(-(1.0 + mu as f64) / 4.0) * log,
        _ => h.powf(-0.5) * log,
    };
    let denom = c * (omega_l2 + stab_energy.max(0.0).sqrt());
    if denom > 0.0 {
        omega_linf / denom
    } else {
        0.0
    }
}

/// `|| u_h ||_inf / || omega_h ||_{L4}`; zero for the zero state.
pub fn ubound_ratio(velocity: &ElementVectorField, omega: &FeField) -> f64 {
    let l4 = omega.lp_norm(4.0);
    if l4 > 0.0 {
        velocity.max_norm() / l4
    } else {
        0.0
    }
}
