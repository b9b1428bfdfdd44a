use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use vortex::fespace::{project_l2, rotate, solve_poisson, FeField, FeSpace};
use vortex::mesh::PeriodicMesh;

fn space(n: usize, k: usize) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(Arc::new(PeriodicMesh::build_periodic(n).unwrap()), k).unwrap())
}

#[test]
fn counts_and_areas() {
    for n in [2, 5, 16] {
        let m = PeriodicMesh::build_periodic(n).unwrap();
        assert_eq!(m.n_vertices(), n * n);
        assert_eq!(m.n_triangles(), 2 * n * n);
        assert_eq!(m.n_faces(), 3 * n * n);
        let area: f64 = (0..m.n_triangles()).map(|t| m.geometry(t).area).sum();
        assert!((area - 1.0).abs() < 1e-14);
        for f in m.faces() {
            assert_ne!(f.tminus, f.tplus);
            assert!((f.normal[0].hypot(f.normal[1]) - 1.0).abs() < 1e-14);
        }
    }
    assert!(PeriodicMesh::build_periodic(1).is_err());
}

#[test]
fn mesh_dump_shape() {
    let m = PeriodicMesh::build_periodic(3).unwrap();
    let v = serde_json::to_value(m.to_dump()).unwrap();
    assert_eq!(v["vertices"].as_array().unwrap().len(), 9);
    assert_eq!(v["triangles"].as_array().unwrap().len(), 18);
    let f = &v["faces"][0];
    for key in ["v0", "v1", "tminus", "tplus", "normal"] {
        assert!(f.get(key).is_some(), "{key}");
    }
}

#[test]
fn p2_poisson_and_velocity_converge() {
    // -Lap psi = omega for omega = 8 pi^2 sin(2 pi x) sin(2 pi y)
    let omega = |p: [f64; 2]| 8.0 * PI * PI * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin();
    let psi = |p: [f64; 2]| (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin();
    let u = |p: [f64; 2]| {
        let (sx, cx) = (2.0 * PI * p[0]).sin_cos();
        let (sy, cy) = (2.0 * PI * p[1]).sin_cos();
        [2.0 * PI * sx * cy, -2.0 * PI * cx * sy]
    };
    let mut errs = Vec::new();
    for n in [8, 16] {
        let p1 = space(n, 1);
        let p2 = Arc::new(FeSpace::new(p1.mesh().clone(), 2).unwrap());
        let w = project_l2(&p1, omega).unwrap();
        let s = solve_poisson(&p2, &w).unwrap();
        errs.push((s.l2_error(psi), rotate(&s).l2_error(u)));
    }
    assert!((errs[0].0 / errs[1].0).log2() > 1.8);
    assert!((errs[0].1 / errs[1].1).log2() > 1.8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn locate_recovers_points(x in -2.0f64..3.0, y in -2.0f64..3.0, n in 2usize..12) {
        let m = PeriodicMesh::build_periodic(n).unwrap();
        let (t, lam) = m.locate([x, y]);
        prop_assert!(lam.iter().all(|&l| l >= -1e-12));
        prop_assert!((lam.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = m.triangle_coords(t);
        let q = [
            lam[0] * c[0][0] + lam[1] * c[1][0] + lam[2] * c[2][0],
            lam[0] * c[0][1] + lam[1] * c[1][1] + lam[2] * c[2][1],
        ];
        let d = PeriodicMesh::min_image([x, y], q);
        prop_assert!(d[0].abs() < 1e-10 && d[1].abs() < 1e-10);
    }

    #[test]
    fn fields_are_periodic(coeffs in proptest::collection::vec(-1.0f64..1.0, 36), x in 0.0f64..1.0, k in 1usize..3) {
        let s = space(6, 1);
        let s = if k == 1 { s } else { Arc::new(FeSpace::new(s.mesh().clone(), 2).unwrap()) };
        let c: Vec<f64> = (0..s.n_dofs()).map(|i| coeffs[i % coeffs.len()]).collect();
        let f = FeField::new(s, c);
        prop_assert!((f.eval([x, 0.0]) - f.eval([x, 1.0])).abs() < 1e-12);
        prop_assert!((f.eval([0.0, x]) - f.eval([1.0, x])).abs() < 1e-12);
        prop_assert!(f.max_face_jump() < 1e-12);
    }

    #[test]
    fn matrices_respect_constants(n in 2usize..10, k in 1usize..3) {
        let s = space(n, 1);
        let s = if k == 1 { s } else { Arc::new(FeSpace::new(s.mesh().clone(), 2).unwrap()) };
        let ones = vec![1.0; s.n_dofs()];
        let k_mat = s.assemble_stiffness();
        prop_assert!(k_mat.mul_vec(&ones).iter().all(|v| v.abs() < 1e-10));
        let m = s.assemble_mass(false).unwrap();
        let total: f64 = m.mul_vec(&ones).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(m.max_asymmetry() < 1e-15 && k_mat.max_asymmetry() < 1e-12);
    }

    #[test]
    fn rotated_velocity_is_solenoidal(vals in proptest::collection::vec(-1.0f64..1.0, 64)) {
        let p1 = space(8, 1);
        let mean = vals.iter().sum::<f64>() / 64.0;
        let w = FeField::new(p1.clone(), vals.iter().map(|v| v - mean).collect());
        for k in [1, 2] {
            let ps = Arc::new(FeSpace::new(p1.mesh().clone(), k).unwrap());
            let u = rotate(&solve_poisson(&ps, &w).unwrap());
            prop_assert!(u.max_normal_jump() < 1e-10);
            for t in 0..p1.mesh().n_triangles() {
                prop_assert!(u.divergence(t).abs() < 1e-9);
            }
        }
    }
}
