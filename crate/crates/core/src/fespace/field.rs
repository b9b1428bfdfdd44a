use std::sync::Arc;

use super::FeSpace;
use crate::error::{invalid, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{PeriodicMesh, Point};
use crate::quadrature::{LineRule, TriangleRule};

/// A finite element function: coefficient vector over a space's DOF map.
#[derive(Debug, Clone)]
pub struct FeField {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl FeField {
    pub fn new(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.n_dofs(), "coefficient vector length mismatch");
        Self { space, coeffs }
    }

    pub fn try_new(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(invalid(format!(
                "expected {} coefficients, got {}",
                space.n_dofs(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("field coefficients must be finite"));
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.n_dofs();
        Self::new(space, vec![0.0; n])
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn degree(&self) -> usize {
        self.space.degree()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn value_at(&self, t: usize, lambda: &[f64; 3]) -> f64 {
        let b = self.space.basis(t, lambda);
        self.space
            .element_dofs(t)
            .iter()
            .enumerate()
            .map(|(a, &d)| self.coeffs[d] * b.values[a])
            .sum()
    }

    pub fn grad_at(&self, t: usize, lambda: &[f64; 3]) -> [f64; 2] {
        let b = self.space.basis(t, lambda);
        let mut g = [0.0; 2];
        for (a, &d) in self.space.element_dofs(t).iter().enumerate() {
            g[0] += self.coeffs[d] * b.grads[a][0];
            g[1] += self.coeffs[d] * b.grads[a][1];
        }
        g
    }

    /// Point evaluation at an arbitrary (periodically wrapped) location.
    pub fn eval(&self, p: Point) -> f64 {
        let (t, lambda) = self.space.mesh().locate(p);
        self.value_at(t, &lambda)
    }

    /// `int_Omega v_h`.
    pub fn integral(&self) -> f64 {
        let rule = TriangleRule::degree4();
        self.integrate(&rule, |_, _, v| v)
    }

    fn integrate(&self, rule: &TriangleRule, g: impl Fn(usize, &[f64; 3], f64) -> f64) -> f64 {
        let mesh = self.space.mesh();
        let mut s = 0.0;
        for t in 0..mesh.n_triangles() {
            let area = mesh.geometry(t).area;
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                s += w * area * g(t, lam, self.value_at(t, lam));
            }
        }
        s
    }

    pub fn l2_norm(&self) -> f64 {
        self.integrate(&TriangleRule::degree4(), |_, _, v| v * v).sqrt()
    }

    /// `(v, v)_M` for a given (consistent or lumped) mass matrix.
    pub fn mass_norm_sq(&self, mass: &CsrMatrix) -> f64 {
        mass.quadratic_form(&self.coeffs)
    }

    pub fn grad_l2_norm(&self) -> f64 {
        let rule = TriangleRule::degree4();
        let mesh = self.space.mesh();
        let mut s = 0.0;
        for t in 0..mesh.n_triangles() {
            let area = mesh.geometry(t).area;
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let g = self.grad_at(t, lam);
                s += w * area * (g[0] * g[0] + g[1] * g[1]);
            }
        }
        s.sqrt()
    }

    /// `|| v_h - f ||_{L2}` by a high-order rule.
    pub fn l2_error(&self, f: impl Fn(Point) -> f64) -> f64 {
        let rule = TriangleRule::high_order();
        let space = &self.space;
        self.integrate(&rule, |t, lam, v| {
            let d = v - f(space.point(t, lam));
            d * d
        })
        .sqrt()
    }

    /// `|| grad(v_h - f) ||_{L2}` by a high-order rule.
    pub fn h1_seminorm_error(&self, grad_f: impl Fn(Point) -> [f64; 2]) -> f64 {
        let rule = TriangleRule::high_order();
        let mesh = self.space.mesh();
        let mut s = 0.0;
        for t in 0..mesh.n_triangles() {
            let area = mesh.geometry(t).area;
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let g = self.grad_at(t, lam);
                let e = grad_f(self.space.point(t, lam));
                s += w * area * ((g[0] - e[0]).powi(2) + (g[1] - e[1]).powi(2));
            }
        }
        s.sqrt()
    }

    pub fn max_nodal(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_nodal(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `|| v_h ||_{L-inf}`: nodal maximum for P1, sampled on the local
    /// nodes plus interior points for P2.
    pub fn linf_norm(&self) -> f64 {
        let nodal = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if self.degree() == 1 {
            return nodal;
        }
        let rule = TriangleRule::degree4();
        let mut m = nodal;
        for t in 0..self.space.mesh().n_triangles() {
            for lam in &rule.points {
                m = m.max(self.value_at(t, lam).abs());
            }
        }
        m
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.integrate(&TriangleRule::high_order(), |_, _, v| v.abs().powf(p))
            .powf(1.0 / p)
    }

    pub fn axpy(&mut self, alpha: f64, other: &FeField) {
        assert!(Arc::ptr_eq(&self.space, &other.space));
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> FeField {
        FeField::new(self.space.clone(), self.coeffs.iter().map(|c| alpha * c).collect())
    }

    /// Largest jump of the field across faces, sampled at face quadrature
    /// points from both sides. Zero for continuous fields.
    pub fn max_face_jump(&self) -> f64 {
        let rule = LineRule::face();
        let mesh = self.space.mesh();
        let mut worst = 0.0f64;
        for f in mesh.faces() {
            for &s in &rule.points {
                let lm = edge_lambda(f.local_minus, s);
                let lp = edge_lambda(f.local_plus, s);
                worst = worst.max((self.value_at(f.tminus, &lm) - self.value_at(f.tplus, &lp)).abs());
            }
        }
        worst
    }
}

/// Barycentric coordinates of the point at parameter `s` along the edge from
/// local vertex `local[0]` to local vertex `local[1]`.
pub(crate) fn edge_lambda(local: [usize; 2], s: f64) -> [f64; 3] {
    let mut l = [0.0; 3];
    l[local[0]] = 1.0 - s;
    l[local[1]] = s;
    l
}

/// Elementwise polynomial 2-vector field of degree 0 or 1, stored by its
/// values at the three vertices of every triangle.
#[derive(Debug, Clone)]
pub struct ElementVectorField {
    mesh: Arc<PeriodicMesh>,
    degree: usize,
    values: Vec<[[f64; 2]; 3]>,
}

impl ElementVectorField {
    pub fn new(mesh: Arc<PeriodicMesh>, degree: usize, values: Vec<[[f64; 2]; 3]>) -> Self {
        assert_eq!(values.len(), mesh.n_triangles());
        assert!(degree <= 1);
        Self { mesh, degree, values }
    }

    pub fn zeros(mesh: Arc<PeriodicMesh>, degree: usize) -> Self {
        let n = mesh.n_triangles();
        Self::new(mesh, degree, vec![[[0.0; 2]; 3]; n])
    }

    /// Elementwise constant field with the same value everywhere.
    pub fn constant(mesh: Arc<PeriodicMesh>, u: [f64; 2]) -> Self {
        let n = mesh.n_triangles();
        Self::new(mesh, 0, vec![[u; 3]; n])
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn vertex_values(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.values[t]
    }

    pub fn eval(&self, t: usize, lambda: &[f64; 3]) -> [f64; 2] {
        let v = &self.values[t];
        [
            lambda[0] * v[0][0] + lambda[1] * v[1][0] + lambda[2] * v[2][0],
            lambda[0] * v[0][1] + lambda[1] * v[1][1] + lambda[2] * v[2][1],
        ]
    }

    /// `|| u ||_{L-inf(K)}`; exact since `|u|` is convex on each element.
    pub fn element_max(&self, t: usize) -> f64 {
        self.values[t].iter().map(|u| u[0].hypot(u[1])).fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.values.len()).map(|t| self.element_max(t)).fold(0.0, f64::max)
    }

    /// Elementwise divergence (constant per element for degree <= 1).
    pub fn divergence(&self, t: usize) -> f64 {
        let g = &self.mesh.geometry(t).grad_lambda;
        let v = &self.values[t];
        (0..3).map(|k| v[k][0] * g[k][0] + v[k][1] * g[k][1]).sum()
    }

    /// Largest jump of the normal component across faces at face quadrature points.
    pub fn max_normal_jump(&self) -> f64 {
        let rule = LineRule::face();
        let mut worst = 0.0f64;
        for f in self.mesh.faces() {
            for &s in &rule.points {
                let um = self.eval(f.tminus, &edge_lambda(f.local_minus, s));
                let up = self.eval(f.tplus, &edge_lambda(f.local_plus, s));
                let jump = (um[0] - up[0]) * f.normal[0] + (um[1] - up[1]) * f.normal[1];
                worst = worst.max(jump.abs());
            }
        }
        worst
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| {
                let mut out = [[0.0; 2]; 3];
                for k in 0..3 {
                    out[k] = [a * x[k][0] + b * y[k][0], a * x[k][1] + b * y[k][1]];
                }
                out
            })
            .collect();
        Self::new(self.mesh.clone(), self.degree.max(other.degree), values)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_error(|_| [0.0, 0.0])
    }

    pub fn l2_error(&self, u: impl Fn(Point) -> [f64; 2]) -> f64 {
        let rule = TriangleRule::high_order();
        let mut s = 0.0;
        for t in 0..self.mesh.n_triangles() {
            let g = self.mesh.geometry(t);
            let c = self.mesh.triangle_coords(t);
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let p = [
                    lam[0] * c[0][0] + lam[1] * c[1][0] + lam[2] * c[2][0],
                    lam[0] * c[0][1] + lam[1] * c[1][1] + lam[2] * c[2][1],
                ];
                let uh = self.eval(t, lam);
                let ue = u(p);
                s += w * g.area * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
            }
        }
        s.sqrt()
    }
}
