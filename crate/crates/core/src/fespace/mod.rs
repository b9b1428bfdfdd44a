//! Continuous periodic Lagrange spaces of degree 1 and 2 on a [`PeriodicMesh`].
//!
//! Local DOF order on a triangle: the three vertices, then (for P2) the
//! midpoints of local edges 0, 1, 2, where edge `k` is opposite vertex `k`.
//! Edge DOFs are numbered `n_vertices + face_index`, so the periodic
//! identification of seam midpoints is inherited from the face numbering.

mod field;
mod projection;

use std::sync::Arc;

pub use field::{ElementVectorField, FeField};
pub(crate) use field::edge_lambda;
pub use projection::{project_h1, project_l2, rotate, solve_poisson, L2Projector, PoissonSolver};

use crate::error::{invalid, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{PeriodicMesh, Point};
use crate::quadrature::TriangleRule;

/// Values and gradients of the local basis at one point of one element.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub n: usize,
    pub values: [f64; 6],
    pub grads: [[f64; 2]; 6],
}

impl LocalBasis {
    pub fn eval(degree: usize, lambda: &[f64; 3], g: &[[f64; 2]; 3]) -> Self {
        let mut values = [0.0; 6];
        let mut grads = [[0.0; 2]; 6];
        match degree {
            1 => {
                values[..3].copy_from_slice(lambda);
                grads[..3].copy_from_slice(g);
                Self { n: 3, values, grads }
            }
            2 => {
                for k in 0..3 {
                    let l = lambda[k];
                    values[k] = l * (2.0 * l - 1.0);
                    let c = 4.0 * l - 1.0;
                    grads[k] = [c * g[k][0], c * g[k][1]];
                    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                    values[3 + k] = 4.0 * lambda[a] * lambda[b];
                    grads[3 + k] = [
                        4.0 * (lambda[a] * g[b][0] + lambda[b] * g[a][0]),
                        4.0 * (lambda[a] * g[b][1] + lambda[b] * g[a][1]),
                    ];
                }
                Self { n: 6, values, grads }
            }
            _ => unreachable!("degree validated at construction"),
        }
    }
}

/// Continuous periodic Lagrange space V_h^k, k in {1, 2}.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<PeriodicMesh>,
    degree: usize,
    n_dofs: usize,
    dofs: Vec<usize>,
}

impl FeSpace {
    pub fn new(mesh: Arc<PeriodicMesh>, degree: usize) -> Result<Self> {
        let nv = mesh.n_vertices();
        let (n_dofs, dofs) = match degree {
            1 => (nv, mesh.triangles().iter().flatten().copied().collect()),
            2 => {
                let mut dofs = Vec::with_capacity(6 * mesh.n_triangles());
                for t in 0..mesh.n_triangles() {
                    dofs.extend_from_slice(&mesh.triangles()[t]);
                    dofs.extend(mesh.triangle_faces(t).iter().map(|&f| nv + f));
                }
                (nv + mesh.n_faces(), dofs)
            }
            _ => return Err(invalid(format!("polynomial degree must be 1 or 2, got {degree}"))),
        };
        Ok(Self {
            mesh,
            degree,
            n_dofs,
            dofs,
        })
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_local(&self) -> usize {
        if self.degree == 1 {
            3
        } else {
            6
        }
    }

    pub fn element_dofs(&self, t: usize) -> &[usize] {
        let m = self.n_local();
        &self.dofs[m * t..m * (t + 1)]
    }

    pub fn basis(&self, t: usize, lambda: &[f64; 3]) -> LocalBasis {
        LocalBasis::eval(self.degree, lambda, &self.mesh.geometry(t).grad_lambda)
    }

    /// Physical (unwrapped) point with barycentric coordinates `lambda` in `t`.
    pub fn point(&self, t: usize, lambda: &[f64; 3]) -> Point {
        let c = self.mesh.triangle_coords(t);
        [
            lambda[0] * c[0][0] + lambda[1] * c[1][0] + lambda[2] * c[2][0],
            lambda[0] * c[0][1] + lambda[1] * c[1][1] + lambda[2] * c[2][1],
        ]
    }

    /// Barycentric coordinates of the local nodes.
    pub fn local_nodes(&self) -> Vec<[f64; 3]> {
        let mut nodes = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        if self.degree == 2 {
            nodes.extend([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]);
        }
        nodes
    }

    /// Coordinates of every global DOF, wrapped into [0,1)^2.
    pub fn dof_coords(&self) -> Vec<Point> {
        let mut out = vec![[0.0; 2]; self.n_dofs];
        let nodes = self.local_nodes();
        for t in 0..self.mesh.n_triangles() {
            for (a, &d) in self.element_dofs(t).iter().enumerate() {
                let p = self.point(t, &nodes[a]);
                out[d] = [p[0] - p[0].floor(), p[1] - p[1].floor()];
            }
        }
        out
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn(Point) -> f64) -> FeField {
        let coeffs = self.dof_coords().into_iter().map(f).collect();
        FeField::new(self.clone(), coeffs)
    }

    /// Mass matrix. Consistent: Galerkin matrix by the degree-4 rule (exact
    /// for P2 x P2). Lumped: nodal quadrature, available for P1 only.
    pub fn assemble_mass(&self, lumped: bool) -> Result<CsrMatrix> {
        if lumped {
            if self.degree != 1 {
                return Err(invalid("lumped mass by nodal quadrature is only defined for P1"));
            }
            let mut d = vec![0.0; self.n_dofs];
            for t in 0..self.mesh.n_triangles() {
                let a = self.mesh.geometry(t).area / 3.0;
                for &i in self.element_dofs(t) {
                    d[i] += a;
                }
            }
            return Ok(CsrMatrix::diag(&d));
        }
        Ok(self.assemble_with(|_, b, q, w| {
            let mut local = vec![0.0; q * q];
            for i in 0..q {
                for j in 0..q {
                    local[i * q + j] = w * b.values[i] * b.values[j];
                }
            }
            local
        }))
    }

    /// Stiffness matrix `(grad phi_j, grad phi_i)`.
    pub fn assemble_stiffness(&self) -> CsrMatrix {
        self.assemble_with(|_, b, q, w| {
            let mut local = vec![0.0; q * q];
            for i in 0..q {
                for j in 0..q {
                    local[i * q + j] = w * (b.grads[i][0] * b.grads[j][0] + b.grads[i][1] * b.grads[j][1]);
                }
            }
            local
        })
    }

    fn assemble_with(&self, kernel: impl Fn(usize, &LocalBasis, usize, f64) -> Vec<f64>) -> CsrMatrix {
        let rule = TriangleRule::degree4();
        let q = self.n_local();
        let mut triplets = Vec::with_capacity(self.mesh.n_triangles() * q * q);
        for t in 0..self.mesh.n_triangles() {
            let area = self.mesh.geometry(t).area;
            let mut local = vec![0.0; q * q];
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let b = self.basis(t, lam);
                for (acc, v) in local.iter_mut().zip(kernel(t, &b, q, w * area)) {
                    *acc += v;
                }
            }
            let dofs = self.element_dofs(t);
            for i in 0..q {
                for j in 0..q {
                    triplets.push((dofs[i], dofs[j], local[i * q + j]));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs, self.n_dofs, &triplets)
    }

    /// Rectangular mass matrix `(phi^trial_j, phi^test_i)` with `self` as the
    /// test space. Both spaces must live on the same mesh.
    pub fn assemble_mixed_mass(&self, trial: &FeSpace) -> CsrMatrix {
        assert!(Arc::ptr_eq(&self.mesh, &trial.mesh), "mixed mass needs a shared mesh");
        let rule = TriangleRule::degree4();
        let (qi, qj) = (self.n_local(), trial.n_local());
        let mut triplets = Vec::with_capacity(self.mesh.n_triangles() * qi * qj);
        for t in 0..self.mesh.n_triangles() {
            let area = self.mesh.geometry(t).area;
            let mut local = vec![0.0; qi * qj];
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let bi = self.basis(t, lam);
                let bj = trial.basis(t, lam);
                for i in 0..qi {
                    for j in 0..qj {
                        local[i * qj + j] += w * area * bi.values[i] * bj.values[j];
                    }
                }
            }
            let (di, dj) = (self.element_dofs(t), trial.element_dofs(t));
            for i in 0..qi {
                for j in 0..qj {
                    triplets.push((di[i], dj[j], local[i * qj + j]));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs, trial.n_dofs, &triplets)
    }

    /// `int_Omega phi_i` for every basis function.
    pub fn basis_integrals(&self) -> Vec<f64> {
        let rule = TriangleRule::degree4();
        let mut out = vec![0.0; self.n_dofs];
        for t in 0..self.mesh.n_triangles() {
            let area = self.mesh.geometry(t).area;
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let b = self.basis(t, lam);
                for (a, &d) in self.element_dofs(t).iter().enumerate() {
                    out[d] += w * area * b.values[a];
                }
            }
        }
        out
    }

    /// Load vector `int g phi_i` where `g` is evaluated per element and may
    /// be discontinuous across faces.
    pub fn load_vector(&self, rule: &TriangleRule, g: impl Fn(usize, &[f64; 3], Point) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        for t in 0..self.mesh.n_triangles() {
            let area = self.mesh.geometry(t).area;
            let dofs = self.element_dofs(t);
            for (lam, w) in rule.points.iter().zip(&rule.weights) {
                let gv = g(t, lam, self.point(t, lam)) * w * area;
                if gv == 0.0 {
                    continue;
                }
                let b = self.basis(t, lam);
                for (a, &d) in dofs.iter().enumerate() {
                    out[d] += gv * b.values[a];
                }
            }
        }
        out
    }

    /// Sparsity pattern (zero values) coupling all DOFs of the two triangles
    /// adjacent to every face. Contains the element couplings as a subset;
    /// shared by every operator of the vorticity equation.
    pub fn face_pattern(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); self.n_dofs];
        for f in self.mesh.faces() {
            let mut d: Vec<usize> = self.element_dofs(f.tminus).to_vec();
            d.extend_from_slice(self.element_dofs(f.tplus));
            d.sort_unstable();
            d.dedup();
            for &i in &d {
                rows[i].extend_from_slice(&d);
            }
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        CsrMatrix::from_pattern(self.n_dofs, &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(n: usize, k: usize) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(Arc::new(PeriodicMesh::build_periodic(n).unwrap()), k).unwrap())
    }

    #[test]
    fn dof_counts() {
        for n in 2..6 {
            assert_eq!(space(n, 1).n_dofs(), n * n);
            assert_eq!(space(n, 2).n_dofs(), 4 * n * n);
        }
        let mesh = Arc::new(PeriodicMesh::build_periodic(3).unwrap());
        assert!(FeSpace::new(mesh, 3).is_err());
    }

    #[test]
    fn every_dof_is_referenced() {
        for k in 1..=2 {
            let s = space(3, k);
            let mut seen = vec![false; s.n_dofs()];
            for t in 0..s.mesh().n_triangles() {
                for &d in s.element_dofs(t) {
                    seen[d] = true;
                }
            }
            assert!(seen.iter().all(|&x| x));
        }
    }

    #[test]
    fn p2_seam_midpoints_match_by_minimum_image() {
        let s = space(4, 2);
        let coords = s.dof_coords();
        let nodes = s.local_nodes();
        for t in 0..s.mesh().n_triangles() {
            for (a, &d) in s.element_dofs(t).iter().enumerate() {
                let p = s.point(t, &nodes[a]);
                let diff = PeriodicMesh::min_image(p, coords[d]);
                assert!(diff[0].abs() < 1e-14 && diff[1].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for k in 1..=2 {
            let s = space(5, k);
            for t in [0, 7, 33] {
                let b = s.basis(t, &[0.2, 0.3, 0.5]);
                let sum: f64 = b.values[..b.n].iter().sum();
                let gsum: [f64; 2] = b.grads[..b.n].iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
                assert!((sum - 1.0).abs() < 1e-14);
                assert!(gsum[0].abs() < 1e-12 && gsum[1].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_of_constant_is_area() {
        for k in 1..=2 {
            let s = space(4, k);
            let ones = vec![1.0; s.n_dofs()];
            let m = s.assemble_mass(false).unwrap();
            assert!((m.quadratic_form(&ones) - 1.0).abs() < 1e-13);
            assert!(m.max_asymmetry() < 1e-16);
        }
        let s = space(4, 1);
        let ml = s.assemble_mass(true).unwrap();
        assert!((ml.quadratic_form(&[1.0; 16]) - 1.0).abs() < 1e-14);
        assert!(space(4, 2).assemble_mass(true).is_err());
    }

    #[test]
    fn lumped_is_row_sum_for_p1() {
        let s = space(6, 1);
        let mc = s.assemble_mass(false).unwrap();
        let ml = s.assemble_mass(true).unwrap();
        for (a, b) in mc.row_sums().iter().zip(ml.diagonal()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn lumped_entries_on_coarsest_mesh() {
        // six triangles of area 1/8 per vertex, one third each
        let ml = space(2, 1).assemble_mass(true).unwrap();
        for d in ml.diagonal() {
            assert!((d - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn stiffness_kernel_and_m_matrix() {
        for k in 1..=2 {
            let s = space(4, k);
            let kk = s.assemble_stiffness();
            let r = kk.mul_vec(&vec![1.0; s.n_dofs()]);
            assert!(r.iter().all(|x| x.abs() < 1e-13));
        }
        let kk = space(4, 1).assemble_stiffness();
        for i in 0..16 {
            for (j, v) in kk.row(i) {
                if i != j {
                    assert!(v <= 1e-15, "K[{i},{j}] = {v}");
                }
            }
        }
    }

    #[test]
    fn face_pattern_contains_element_couplings() {
        let s = space(4, 1);
        let pat = s.face_pattern();
        let k = s.assemble_stiffness();
        let _ = k.on_pattern_of(&pat);
        // vertex + 6 neighbours + 6 across-face opposite vertices
        assert_eq!(pat.row(0).count(), 13);
    }
}
