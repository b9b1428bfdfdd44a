//! Stabilization operators `s(u_h; omega_h, v_h)` for the P1 vorticity
//! equation and the diagnostics used to monitor their stability contracts.
//!
//! Every operator is represented as a matrix on the face pattern of the
//! vorticity space (see [`FeSpace::face_pattern`]); the nonlinear operator is
//! represented by its Picard linearisation around a given vorticity, which
//! reproduces the regularised residual exactly when applied to that vorticity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fespace::{ElementVectorField, FeField, FeSpace, L2Projector};
use crate::linalg::CsrMatrix;
use crate::quadrature::{LineRule, TriangleRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StabilizerKind {
    #[default]
    None,
    SdJump,
    CdJump,
    AvLinear,
    AvMonotone,
    NonlinearMonotone,
}

impl StabilizerKind {
    fn default_gamma(self) -> f64 {
        match self {
            Self::None => 0.0,
            Self::SdJump | Self::CdJump | Self::NonlinearMonotone => 0.01,
            Self::AvLinear => 0.1,
            Self::AvMonotone => 0.5,
        }
    }
}

/// Choice of stabilization and its parameters. `gamma` is the coefficient
/// of the leading term of the chosen kind (the streamline jump term for the
/// jump and nonlinear kinds); unset values fall back to per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizerSpec {
    pub kind: StabilizerKind,
    pub gamma: Option<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mu: u32,
    pub u0: Option<f64>,
    pub sign_regularization_eps: f64,
}

impl Default for StabilizerSpec {
    fn default() -> Self {
        Self {
            kind: StabilizerKind::None,
            gamma: None,
            gamma1: 0.01,
            gamma2: 0.5,
            mu: 2,
            u0: None,
            sign_regularization_eps: 1e-8,
        }
    }
}

impl StabilizerSpec {
    pub fn new(kind: StabilizerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_u0(mut self, u0: f64) -> Self {
        self.u0 = Some(u0);
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.kind.default_gamma())
    }

    /// Characteristic velocity; 1 until set from the initial data.
    pub fn u0(&self) -> f64 {
        self.u0.unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gamma();
        if !(g >= 0.0 && self.gamma1 >= 0.0 && self.gamma2 >= 0.0 && self.sign_regularization_eps >= 0.0) {
            return Err(invalid("stabilization parameters must be nonnegative"));
        }
        if !(self.mu == 1 || self.mu == 2) {
            return Err(invalid(format!("mu must be 1 or 2, got {}", self.mu)));
        }
        if let Some(u0) = self.u0 {
            if !(u0 > 0.0 && u0.is_finite()) {
                return Err(invalid(format!("u0 must be positive, got {u0}")));
            }
        }
        Ok(())
    }

    /// True when the operator depends on the vorticity it acts on.
    pub fn is_nonlinear(&self) -> bool {
        self.kind == StabilizerKind::NonlinearMonotone && self.gamma2 > 0.0
    }
}

/// The functional `v_h -> s(u_h; omega_h, v_h)` on all basis functions,
/// together with `s(u_h; omega_h, omega_h)`.
#[derive(Debug, Clone)]
pub struct StabilizerApplication {
    pub residual_vector: Vec<f64>,
    pub energy: f64,
}

/// Quantities of the lower/upper stability contract, ordered
/// `lhs <= C * mid` and `mid <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabBound {
    pub lhs: f64,
    pub mid: f64,
    pub upper: f64,
}

fn check_inputs(u: &ElementVectorField, omega: &FeField) -> Result<()> {
    if omega.degree() != 1 {
        return Err(invalid(format!("stabilizers act on P1 vorticity, got degree {}", omega.degree())));
    }
    if !std::sync::Arc::ptr_eq(u.mesh(), omega.space().mesh()) {
        return Err(invalid("velocity and vorticity must live on the same mesh"));
    }
    Ok(())
}

/// Local numbering of the DOFs of the two triangles adjacent to a face.
struct FaceUnion {
    dofs: Vec<usize>,
    minus: [usize; 3],
    plus: [usize; 3],
}

fn face_union(space: &FeSpace, tminus: usize, tplus: usize) -> FaceUnion {
    let mut dofs: Vec<usize> = Vec::with_capacity(4);
    let index = |d: usize, dofs: &mut Vec<usize>| match dofs.iter().position(|&x| x == d) {
        Some(k) => k,
        None => {
            dofs.push(d);
            dofs.len() - 1
        }
    };
    let mut minus = [0; 3];
    let mut plus = [0; 3];
    for (k, &d) in space.element_dofs(tminus).iter().enumerate() {
        minus[k] = index(d, &mut dofs);
    }
    for (k, &d) in space.element_dofs(tplus).iter().enumerate() {
        plus[k] = index(d, &mut dofs);
    }
    FaceUnion { dofs, minus, plus }
}

fn add_outer(mat: &mut CsrMatrix, dofs: &[usize], a: &[f64], b: &[f64], c: f64) {
    for (i, &di) in dofs.iter().enumerate() {
        if a[i] == 0.0 {
            continue;
        }
        for (j, &dj) in dofs.iter().enumerate() {
            if b[j] != 0.0 {
                mat.add(di, dj, c * a[i] * b[j]);
            }
        }
    }
}

fn grad_of(omega: &FeField, t: usize) -> [f64; 2] {
    omega.grad_at(t, &[1.0 / 3.0; 3])
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `gamma U0^{-1} sum_F h_F^2 int_F [u.grad w][u.grad v]`.
fn add_sd_jump(mat: &mut CsrMatrix, space: &FeSpace, u: &ElementVectorField, gamma: f64, u0: f64) {
    if gamma == 0.0 {
        return;
    }
    let mesh = space.mesh();
    let rule = LineRule::face();
    for f in mesh.faces() {
        let fu = face_union(space, f.tminus, f.tplus);
        let gm = &mesh.geometry(f.tminus).grad_lambda;
        let gp = &mesh.geometry(f.tplus).grad_lambda;
        let coef = gamma / u0 * f.length * f.length * f.length;
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let um = u.eval(f.tminus, &crate::fespace::edge_lambda(f.local_minus, s));
            let up = u.eval(f.tplus, &crate::fespace::edge_lambda(f.local_plus, s));
            let mut a = vec![0.0; fu.dofs.len()];
            for k in 0..3 {
                a[fu.minus[k]] += dot2(um, gm[k]);
                a[fu.plus[k]] -= dot2(up, gp[k]);
            }
            add_outer(mat, &fu.dofs, &a, &a, coef * w);
        }
    }
}

/// Normal-gradient jump vector of the face, one entry per union DOF.
fn normal_jump_vector(space: &FeSpace, f: &crate::mesh::Face, fu: &FaceUnion) -> Vec<f64> {
    let mesh = space.mesh();
    let gm = &mesh.geometry(f.tminus).grad_lambda;
    let gp = &mesh.geometry(f.tplus).grad_lambda;
    let mut b = vec![0.0; fu.dofs.len()];
    for k in 0..3 {
        b[fu.minus[k]] += dot2(f.normal, gm[k]);
        b[fu.plus[k]] -= dot2(f.normal, gp[k]);
    }
    b
}

/// `gamma1 sum_K U0 h_K^mu int_{dK} [n.grad w][n.grad v]`, every face
/// reached once from each of its two triangles.
fn add_crosswind(mat: &mut CsrMatrix, space: &FeSpace, gamma1: f64, mu: u32, u0: f64) {
    if gamma1 == 0.0 {
        return;
    }
    let mesh = space.mesh();
    for f in mesh.faces() {
        let fu = face_union(space, f.tminus, f.tplus);
        let b = normal_jump_vector(space, f, &fu);
        let hk = mesh.geometry(f.tminus).diameter.powi(mu as i32) + mesh.geometry(f.tplus).diameter.powi(mu as i32);
        add_outer(mat, &fu.dofs, &b, &b, gamma1 * u0 * hk * f.length);
    }
}

/// `(gamma h (U0 + |u|)^2 U0^{-1} grad w, grad v)`.
fn add_av_linear(mat: &mut CsrMatrix, space: &FeSpace, u: &ElementVectorField, gamma: f64, u0: f64) {
    let mesh = space.mesh();
    let rule = TriangleRule::degree4();
    let h = mesh.h();
    for t in 0..mesh.n_triangles() {
        let geo = mesh.geometry(t);
        let mut kappa = 0.0;
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            let v = u.eval(t, lam);
            kappa += w * geo.area * (u0 + v[0].hypot(v[1])).powi(2);
        }
        kappa *= gamma * h / u0;
        let dofs = space.element_dofs(t);
        for i in 0..3 {
            for j in 0..3 {
                mat.add(dofs[i], dofs[j], kappa * dot2(geo.grad_lambda[i], geo.grad_lambda[j]));
            }
        }
    }
}

/// Tangential derivatives of the three P1 basis functions along local edge
/// `k` of triangle `t` (edge traversed from local vertex `k+1` to `k+2`).
fn edge_tangent_derivs(space: &FeSpace, t: usize, k: usize) -> ([f64; 3], f64) {
    let mesh = space.mesh();
    let c = mesh.triangle_coords(t);
    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
    let d = [c[b][0] - c[a][0], c[b][1] - c[a][1]];
    let len = d[0].hypot(d[1]);
    let tau = [d[0] / len, d[1] / len];
    let g = &mesh.geometry(t).grad_lambda;
    ([dot2(tau, g[0]), dot2(tau, g[1]), dot2(tau, g[2])], len)
}

/// `gamma sum_K max(U0, |u|_K) h_K^2 sum_{F in dK} (grad w x n_F, grad v x n_F)_F`.
fn add_av_monotone(mat: &mut CsrMatrix, space: &FeSpace, u: &ElementVectorField, gamma: f64, u0: f64) {
    let mesh = space.mesh();
    for t in 0..mesh.n_triangles() {
        let geo = mesh.geometry(t);
        let coef = gamma * u0.max(u.element_max(t)) * geo.diameter * geo.diameter;
        let dofs = space.element_dofs(t);
        for k in 0..3 {
            let (tau, len) = edge_tangent_derivs(space, t, k);
            add_outer(mat, dofs, &tau, &tau, coef * len);
        }
    }
}

/// Per-face data of the nonlinear term evaluated at `omega`: the Picard
/// weight `2 gamma2 h^2 R_F |F| / (|x_F| + eps)` where `x_F` is the
/// tangential derivative of `omega` along `F`.
fn nonlinear_weights(space: &FeSpace, u: &ElementVectorField, omega: &FeField, spec: &StabilizerSpec) -> Vec<f64> {
    let mesh = space.mesh();
    let u0 = spec.u0();
    let h = mesh.h();
    let grads: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|t| grad_of(omega, t)).collect();
    let faces = mesh.faces();
    // || [n_F . grad omega] ||_{L2(F)}
    let jump_norm: Vec<f64> = faces
        .iter()
        .map(|f| {
            let j = dot2(f.normal, grads[f.tminus]) - dot2(f.normal, grads[f.tplus]);
            j.abs() * f.length.sqrt()
        })
        .collect();
    let tangential: Vec<f64> = faces
        .iter()
        .map(|f| {
            let (tau, _) = edge_tangent_derivs(space, f.tminus, 3 - f.local_minus[0] - f.local_minus[1]);
            let dofs = space.element_dofs(f.tminus);
            (0..3).map(|k| tau[k] * omega.coeffs()[dofs[k]]).sum::<f64>()
        })
        .collect();
    let scale = tangential.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return vec![0.0; faces.len()];
    }
    let eps = spec.sign_regularization_eps * scale;
    faces
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let umax = mesh.face_patch(fi).iter().map(|&t| u.element_max(t)).fold(0.0, f64::max);
            let m_f = mesh
                .triangle_faces(f.tminus)
                .iter()
                .chain(mesh.triangle_faces(f.tplus))
                .map(|&g| jump_norm[g])
                .fold(0.0, f64::max);
            let r_f = umax * (1.0 + umax / u0) * m_f;
            2.0 * spec.gamma2 * h * h * r_f * f.length / (tangential[fi].abs() + eps)
        })
        .collect()
}

fn add_nonlinear(mat: &mut CsrMatrix, space: &FeSpace, u: &ElementVectorField, omega: &FeField, spec: &StabilizerSpec) {
    let mesh = space.mesh();
    let weights = nonlinear_weights(space, u, omega, spec);
    for (fi, f) in mesh.faces().iter().enumerate() {
        if weights[fi] == 0.0 {
            continue;
        }
        let local = 3 - f.local_minus[0] - f.local_minus[1];
        let (tau, _) = edge_tangent_derivs(space, f.tminus, local);
        add_outer(mat, space.element_dofs(f.tminus), &tau, &tau, weights[fi]);
    }
}

/// Matrix of the stabilization operator on `pattern` (normally the face
/// pattern of the vorticity space). For the nonlinear kind the matrix is the
/// Picard linearisation around `omega`; other kinds ignore `omega` values.
pub fn assemble_matrix(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField, pattern: &CsrMatrix) -> Result<CsrMatrix> {
    spec.validate()?;
    check_inputs(u, omega)?;
    let space = omega.space();
    let mut mat = pattern.zeros_like();
    let (gamma, u0) = (spec.gamma(), spec.u0());
    match spec.kind {
        StabilizerKind::None => {}
        StabilizerKind::SdJump => add_sd_jump(&mut mat, space, u, gamma, u0),
        StabilizerKind::CdJump => {
            add_sd_jump(&mut mat, space, u, gamma, u0);
            add_crosswind(&mut mat, space, spec.gamma1, spec.mu, u0);
        }
        StabilizerKind::AvLinear => add_av_linear(&mut mat, space, u, gamma, u0),
        StabilizerKind::AvMonotone => add_av_monotone(&mut mat, space, u, gamma, u0),
        StabilizerKind::NonlinearMonotone => {
            add_sd_jump(&mut mat, space, u, gamma, u0);
            if spec.gamma2 > 0.0 {
                add_nonlinear(&mut mat, space, u, omega, spec);
            }
        }
    }
    Ok(mat)
}

/// Evaluates `s(u; omega, .)` and `s(u; omega, omega)`.
pub fn apply(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabilizerApplication> {
    let mat = assemble_matrix(spec, u, omega, &omega.space().face_pattern())?;
    Ok(application(&mat, omega))
}

pub(crate) fn application(mat: &CsrMatrix, omega: &FeField) -> StabilizerApplication {
    let residual_vector = mat.mul_vec(omega.coeffs());
    let energy = crate::linalg::dot(&residual_vector, omega.coeffs());
    StabilizerApplication { residual_vector, energy }
}

fn apply_kind(kind: StabilizerKind, spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabilizerApplication> {
    let spec = StabilizerSpec { kind, ..spec.clone() };
    apply(&spec, u, omega)
}

pub fn apply_sd_jump(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabilizerApplication> {
    apply_kind(StabilizerKind::SdJump, spec, u, omega)
}

pub fn apply_cd_jump(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabilizerApplication> {
    apply_kind(StabilizerKind::CdJump, spec, u, omega)
}

pub fn apply_av_linear(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabilizerApplication> {
    apply_kind(StabilizerKind::AvLinear, spec, u, omega)
}

pub fn apply_av_monotone(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabilizerApplication> {
    apply_kind(StabilizerKind::AvMonotone, spec, u, omega)
}

pub fn apply_nonlinear(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabilizerApplication> {
    apply_kind(StabilizerKind::NonlinearMonotone, spec, u, omega)
}

/// `h^{1/2} || u.grad w - pi_L(u.grad w) ||`, `s(u; w, w)^{1/2}` and
/// `h^{1/2} (U0 + ||u||_inf) || grad w ||`.
pub fn check_stab_bound1(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<StabBound> {
    let projector = L2Projector::new(omega.space().clone())?;
    check_stab_bound1_with(spec, u, omega, &projector)
}

pub fn check_stab_bound1_with(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField, projector: &L2Projector) -> Result<StabBound> {
    let lhs = streamline_defect(u, omega, projector)?;
    let energy = apply(spec, u, omega)?.energy;
    let h = omega.space().mesh().h();
    Ok(StabBound {
        lhs,
        mid: energy.max(0.0).sqrt(),
        upper: h.sqrt() * (spec.u0() + u.max_norm()) * omega.grad_l2_norm(),
    })
}

/// `h^{1/2} || u.grad w - pi_L(u.grad w) ||` with `pi_L` onto the space of `w`.
pub fn streamline_defect(u: &ElementVectorField, omega: &FeField, projector: &L2Projector) -> Result<f64> {
    check_inputs(u, omega)?;
    let mesh = omega.space().mesh();
    let rule = TriangleRule::degree4();
    let grads: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|t| grad_of(omega, t)).collect();
    let conv = |t: usize, lam: &[f64; 3]| dot2(u.eval(t, lam), grads[t]);
    let proj = projector.project_with(&rule, |t, lam, _| conv(t, lam))?;
    let mut defect = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.geometry(t).area;
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            defect += w * area * (conv(t, lam) - proj.value_at(t, lam)).powi(2);
        }
    }
    Ok(mesh.h().sqrt() * defect.sqrt())
}

/// Ratio `s(u; w, w) / || |u|^{1/2} h^{1/2} grad w ||^2` for the monotone
/// artificial viscosity; `None` when the reference quantity vanishes.
pub fn av_monotone_equivalence_ratio(spec: &StabilizerSpec, u: &ElementVectorField, omega: &FeField) -> Result<Option<f64>> {
    let energy = apply_av_monotone(spec, u, omega)?.energy;
    let mesh = omega.space().mesh();
    let rule = TriangleRule::degree4();
    let h = mesh.h();
    let mut reference = 0.0;
    for t in 0..mesh.n_triangles() {
        let g = grad_of(omega, t);
        let area = mesh.geometry(t).area;
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            let v = u.eval(t, lam);
            reference += w * area * v[0].hypot(v[1]) * h * dot2(g, g);
        }
    }
    Ok(if reference > 0.0 { Some(energy / reference) } else { None })
}
