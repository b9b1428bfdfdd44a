use std::sync::Arc;

use super::{ElementVectorField, FeField, FeSpace};
use crate::error::{invalid, Result};
use crate::linalg::{cg, CsrMatrix, SolverOptions};
use crate::mesh::Point;
use crate::quadrature::TriangleRule;

/// Cached consistent mass matrix for repeated L2 projections onto one space.
#[derive(Debug, Clone)]
pub struct L2Projector {
    space: Arc<FeSpace>,
    mass: CsrMatrix,
    pub opts: SolverOptions,
}

impl L2Projector {
    pub fn new(space: Arc<FeSpace>) -> Result<Self> {
        let mass = space.assemble_mass(false)?;
        Ok(Self {
            space,
            mass,
            opts: SolverOptions {
                rel_tol: 1e-13,
                ..SolverOptions::default()
            },
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Solves `M c = b`.
    pub fn solve(&self, b: &[f64]) -> Result<FeField> {
        let mut c = vec![0.0; b.len()];
        cg(&self.mass, b, &mut c, self.opts)?;
        Ok(FeField::new(self.space.clone(), c))
    }

    /// `pi_L f` for a pointwise function, load vector by the high-order rule.
    pub fn project_fn(&self, f: impl Fn(Point) -> f64) -> Result<FeField> {
        let b = self.space.load_vector(&TriangleRule::high_order(), |_, _, p| f(p));
        self.solve(&b)
    }

    /// `pi_L g` for an elementwise-defined (possibly discontinuous) function.
    pub fn project_with(&self, rule: &TriangleRule, g: impl Fn(usize, &[f64; 3], Point) -> f64) -> Result<FeField> {
        let b = self.space.load_vector(rule, g);
        self.solve(&b)
    }
}

/// L2 projection of `f` onto `space`.
pub fn project_l2(space: &Arc<FeSpace>, f: impl Fn(Point) -> f64) -> Result<FeField> {
    L2Projector::new(space.clone())?.project_fn(f)
}

/// H1 projection with zero-mean normalisation: `(grad pi_V f, grad v) =
/// (grad f, grad v)` for all `v` and `int pi_V f = 0`.
pub fn project_h1(space: &Arc<FeSpace>, f: impl Fn(Point) -> f64, grad_f: impl Fn(Point) -> [f64; 2]) -> Result<FeField> {
    let rule = TriangleRule::high_order();
    let mesh = space.mesh();
    let mut mean = 0.0;
    let mut b = vec![0.0; space.n_dofs()];
    for t in 0..mesh.n_triangles() {
        let area = mesh.geometry(t).area;
        let dofs = space.element_dofs(t);
        for (lam, w) in rule.points.iter().zip(&rule.weights) {
            let p = space.point(t, lam);
            mean += w * area * f(p);
            let g = grad_f(p);
            let basis = space.basis(t, lam);
            for (a, &d) in dofs.iter().enumerate() {
                b[d] += w * area * (g[0] * basis.grads[a][0] + g[1] * basis.grads[a][1]);
            }
        }
    }
    if mean.abs() > 1e-10 {
        return Err(invalid(format!("H1 projection needs a zero-mean function, got mean {mean:.3e}")));
    }
    let k = space.assemble_stiffness();
    let mut c = vec![0.0; b.len()];
    cg(
        &k,
        &b,
        &mut c,
        SolverOptions {
            rel_tol: 1e-12,
            zero_mean: true,
            ..SolverOptions::default()
        },
    )?;
    recentre(&mut c, &space.basis_integrals());
    Ok(FeField::new(space.clone(), c))
}

fn recentre(c: &mut [f64], basis_integrals: &[f64]) {
    let m: f64 = c.iter().zip(basis_integrals).map(|(a, b)| a * b).sum();
    let total: f64 = basis_integrals.iter().sum();
    for v in c.iter_mut() {
        *v -= m / total;
    }
}

/// `u_h = rot psi_h = (d_y psi_h, -d_x psi_h)`, evaluated elementwise.
pub fn rotate(psi: &FeField) -> ElementVectorField {
    let space = psi.space();
    let mesh = space.mesh().clone();
    let nodes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let values = (0..mesh.n_triangles())
        .map(|t| {
            let mut v = [[0.0; 2]; 3];
            for (k, lam) in nodes.iter().enumerate() {
                let g = psi.grad_at(t, lam);
                v[k] = [g[1], -g[0]];
            }
            v
        })
        .collect();
    ElementVectorField::new(mesh, space.degree() - 1, values)
}

/// Zero-mean stream-function solver `(grad psi, grad phi) = (omega, phi)`
/// with the stiffness and mixed mass matrices assembled once.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    space: Arc<FeSpace>,
    source: Arc<FeSpace>,
    stiffness: CsrMatrix,
    mixed_mass: CsrMatrix,
    basis_integrals: Vec<f64>,
    pub opts: SolverOptions,
}

impl PoissonSolver {
    pub fn new(space: Arc<FeSpace>, source: Arc<FeSpace>) -> Result<Self> {
        if !Arc::ptr_eq(space.mesh(), source.mesh()) {
            return Err(invalid("Poisson source and solution spaces must share a mesh"));
        }
        Ok(Self {
            stiffness: space.assemble_stiffness(),
            mixed_mass: space.assemble_mixed_mass(&source),
            basis_integrals: space.basis_integrals(),
            space,
            source,
            opts: SolverOptions {
                zero_mean: true,
                ..SolverOptions::default()
            },
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Solves for `psi_h`; `guess` (if given) warm-starts the iteration.
    pub fn solve(&self, rhs: &FeField, guess: Option<&FeField>) -> Result<FeField> {
        if !Arc::ptr_eq(rhs.space(), &self.source) {
            return Err(invalid("right-hand side lives on a different space than the solver source"));
        }
        let b = self.mixed_mass.mul_vec(rhs.coeffs());
        let sum: f64 = b.iter().sum();
        let scale: f64 = b.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        if sum.abs() > 1e-10 * scale {
            return Err(invalid(format!("Poisson right-hand side has nonzero mean {sum:.3e}")));
        }
        let mut c = match guess {
            Some(g) => g.coeffs().to_vec(),
            None => vec![0.0; self.space.n_dofs()],
        };
        cg(&self.stiffness, &b, &mut c, self.opts)?;
        recentre(&mut c, &self.basis_integrals);
        Ok(FeField::new(self.space.clone(), c))
    }
}

/// One-shot zero-mean Poisson solve on `space` for a source on the same mesh.
pub fn solve_poisson(space: &Arc<FeSpace>, rhs: &FeField) -> Result<FeField> {
    PoissonSolver::new(space.clone(), rhs.space().clone())?.solve(rhs, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::PeriodicMesh;
    use std::f64::consts::PI;

    fn space(n: usize, k: usize) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(Arc::new(PeriodicMesh::build_periodic(n).unwrap()), k).unwrap())
    }

    #[test]
    fn l2_projection_reproduces_discrete_functions() {
        for k in [1, 2] {
            let s = space(6, k);
            let f = s.interpolate(|p| (2.0 * PI * p[0]).sin() + 0.3);
            let proj = project_l2(&s, |p| f.eval(p)).unwrap();
            for (a, b) in proj.coeffs().iter().zip(f.coeffs()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn l2_projection_rate_is_two_for_p1() {
        let f = |p: Point| (2.0 * PI * p[0]).sin();
        let e: Vec<f64> = [16, 32]
            .iter()
            .map(|&n| project_l2(&space(n, 1), f).unwrap().l2_error(f))
            .collect();
        let rate = (e[0] / e[1]).log2();
        assert!((rate - 2.0).abs() < 0.1, "rate {rate}");
    }

    #[test]
    fn h1_projection_rate_and_mean() {
        let f = |p: Point| (2.0 * PI * p[0]).sin();
        let g = |p: Point| [2.0 * PI * (2.0 * PI * p[0]).cos(), 0.0];
        let e: Vec<f64> = [16, 32]
            .iter()
            .map(|&n| project_h1(&space(n, 1), f, g).unwrap().h1_seminorm_error(g))
            .collect();
        let rate = (e[0] / e[1]).log2();
        assert!((rate - 1.0).abs() < 0.1, "rate {rate}");

        let f2 = |p: Point| (2.0 * PI * p[0]).sin() + (2.0 * PI * p[1]).sin();
        let g2 = |p: Point| [2.0 * PI * (2.0 * PI * p[0]).cos(), 2.0 * PI * (2.0 * PI * p[1]).cos()];
        let v = project_h1(&space(8, 2), f2, g2).unwrap();
        assert!(v.integral().abs() < 1e-12);
    }

    #[test]
    fn h1_projection_rejects_nonzero_mean() {
        let err = project_h1(&space(4, 1), |_| 1.0, |_| [0.0, 0.0]).unwrap_err();
        assert!(matches!(err, crate::Error::InvalidArgument(_)));
    }

    #[test]
    fn rotate_interpolant_and_constant() {
        let s = space(8, 1);
        let psi = s.interpolate(|p| (2.0 * PI * p[1]).sin() / (2.0 * PI));
        let u = rotate(&psi);
        for t in 0..s.mesh().n_triangles() {
            let g = psi.grad_at(t, &[1.0 / 3.0; 3]);
            let v = u.eval(t, &[1.0 / 3.0; 3]);
            assert!((v[0] - g[1]).abs() < 1e-14 && v[1] == 0.0);
        }
        let zero = rotate(&s.interpolate(|_| 2.5));
        assert_eq!(zero.max_norm(), 0.0);
    }

    #[test]
    fn rotated_p2_field_is_hdiv_conforming() {
        use rand::{Rng, SeedableRng};
        let s = space(6, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = (0..s.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = rotate(&FeField::new(s.clone(), c));
        assert!(u.max_normal_jump() <= 1e-12);
        for t in 0..s.mesh().n_triangles() {
            assert!(u.divergence(t).abs() < 1e-11);
        }
    }

    #[test]
    fn poisson_eigenfunction() {
        let f = |p: Point| (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin();
        let mut errs = Vec::new();
        for n in [16, 32] {
            let s = space(n, 1);
            let w = project_l2(&s, f).unwrap();
            let psi = solve_poisson(&s, &w).unwrap();
            assert!(psi.integral().abs() < 1e-12);
            errs.push(psi.l2_error(|p| f(p) / (8.0 * PI * PI)));
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 1.8, "rate {rate}");
    }

    #[test]
    fn poisson_zero_and_mean_check() {
        let mesh = Arc::new(PeriodicMesh::build_periodic(4).unwrap());
        let s = Arc::new(FeSpace::new(mesh.clone(), 2).unwrap());
        let w = Arc::new(FeSpace::new(mesh, 1).unwrap());
        let w = FeField::new(w.clone(), vec![0.0; w.n_dofs()]);
        let solver = PoissonSolver::new(s.clone(), w.space().clone()).unwrap();
        let psi = solver.solve(&w, None).unwrap();
        assert!(psi.coeffs().iter().all(|&c| c == 0.0));
        let one = w.space().interpolate(|_| 1.0);
        assert!(matches!(solver.solve(&one, None), Err(crate::Error::InvalidArgument(_))));
    }
}
