//! Uniform periodic triangulations of the unit torus.
//!
//! The mesh is an `n x n` grid of squares, each split along the diagonal
//! running from its lower-left to its upper-right corner. Vertices on the
//! lines `x = 1` and `y = 1` are identified with their images on `x = 0` and
//! `y = 0`, so every edge is interior and has exactly two neighbours.
//!
//! Triangle vertex coordinates are stored *unwrapped* (they may touch 1.0),
//! which keeps element geometry local while the vertex indices carry the
//! periodic identification.

use serde::Serialize;

use crate::error::{invalid, Result};

pub type Point = [f64; 2];

/// One edge of the triangulation together with its jump frame.
///
/// `local_minus[k]` / `local_plus[k]` give the local vertex index of
/// `vertices[k]` inside `tminus` / `tplus`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub vertices: [usize; 2],
    pub tminus: usize,
    pub tplus: usize,
    pub local_minus: [usize; 2],
    pub local_plus: [usize; 2],
    pub normal: [f64; 2],
    pub length: f64,
}

/// Affine element data: area, diameter and the (constant) gradients of the
/// barycentric coordinates.
#[derive(Debug, Clone, Copy)]
pub struct TriangleGeometry {
    pub area: f64,
    pub diameter: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

#[derive(Debug, Clone)]
pub struct PeriodicMesh {
    n: usize,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    coords: Vec<[Point; 3]>,
    geometry: Vec<TriangleGeometry>,
    tri_faces: Vec<[usize; 3]>,
    faces: Vec<Face>,
    vertex_patches: Vec<Vec<usize>>,
    face_patches: Vec<Vec<usize>>,
}

impl PeriodicMesh {
    /// Builds the uniform periodic mesh with `n` subdivisions per axis.
    pub fn build_periodic(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("n_per_side must be >= 2, got {n}")));
        }
        let nf = n as f64;
        let vid = |i: usize, j: usize| (j % n) * n + (i % n);
        let sid = |i: usize, j: usize| (j % n) * n + (i % n);

        let mut vertices = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                vertices.push([i as f64 / nf, j as f64 / nf]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        let mut coords = Vec::with_capacity(2 * n * n);
        let mut tri_faces = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let s = sid(i, j);
                let p = |a: usize, b: usize| [(i + a) as f64 / nf, (j + b) as f64 / nf];
                // lower triangle
                triangles.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
                coords.push([p(0, 0), p(1, 0), p(1, 1)]);
                tri_faces.push([3 * sid(i + 1, j) + 2, 3 * s, 3 * s + 1]);
                // upper triangle
                triangles.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
                coords.push([p(0, 0), p(1, 1), p(0, 1)]);
                tri_faces.push([3 * sid(i, j + 1) + 1, 3 * s + 2, 3 * s]);
            }
        }

        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let mut faces = Vec::with_capacity(3 * n * n);
        for j in 0..n {
            for i in 0..n {
                let s = sid(i, j);
                let below = sid(i, j + n - 1);
                let left = sid(i + n - 1, j);
                // diagonal: lower -> upper triangle of the same square
                faces.push(Face {
                    vertices: [vid(i, j), vid(i + 1, j + 1)],
                    tminus: 2 * s,
                    tplus: 2 * s + 1,
                    local_minus: [0, 2],
                    local_plus: [0, 1],
                    normal: [-inv_sqrt2, inv_sqrt2],
                    length: std::f64::consts::SQRT_2 / nf,
                });
                // bottom edge: lower triangle of this square -> upper triangle below
                faces.push(Face {
                    vertices: [vid(i, j), vid(i + 1, j)],
                    tminus: 2 * s,
                    tplus: 2 * below + 1,
                    local_minus: [0, 1],
                    local_plus: [2, 1],
                    normal: [0.0, -1.0],
                    length: 1.0 / nf,
                });
                // left edge: upper triangle of this square -> lower triangle to the left
                faces.push(Face {
                    vertices: [vid(i, j), vid(i, j + 1)],
                    tminus: 2 * s + 1,
                    tplus: 2 * left,
                    local_minus: [0, 2],
                    local_plus: [1, 2],
                    normal: [-1.0, 0.0],
                    length: 1.0 / nf,
                });
            }
        }

        let geometry = coords.iter().map(triangle_geometry).collect();

        let mut vertex_patches = vec![Vec::new(); n * n];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_patches[v].push(t);
            }
        }
        let face_patches = faces
            .iter()
            .map(|f| {
                let mut patch: Vec<usize> = vertex_patches[f.vertices[0]]
                    .iter()
                    .chain(&vertex_patches[f.vertices[1]])
                    .copied()
                    .collect();
                patch.sort_unstable();
                patch.dedup();
                patch
            })
            .collect();

        Ok(Self {
            n,
            vertices,
            triangles,
            coords,
            geometry,
            tri_faces,
            faces,
            vertex_patches,
            face_patches,
        })
    }

    pub fn n_per_side(&self) -> usize {
        self.n
    }

    /// Global mesh size: the largest element diameter.
    pub fn h(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n as f64
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    /// Unwrapped vertex coordinates of triangle `t`.
    pub fn triangle_coords(&self, t: usize) -> &[Point; 3] {
        &self.coords[t]
    }

    pub fn geometry(&self, t: usize) -> &TriangleGeometry {
        &self.geometry[t]
    }

    /// Face index of local edge `k` (the edge opposite local vertex `k`).
    pub fn triangle_faces(&self, t: usize) -> &[usize; 3] {
        &self.tri_faces[t]
    }

    pub fn vertex_patch(&self, v: usize) -> &[usize] {
        &self.vertex_patches[v]
    }

    /// Triangles sharing at least one vertex with face `f`.
    pub fn face_patch(&self, f: usize) -> &[usize] {
        &self.face_patches[f]
    }

    /// Unit normal and the ordered pair `(T-, T+)` of face `f`. The jump of
    /// a broken function across `f` is `v|T- - v|T+`.
    pub fn face_jump_frame(&self, f: usize) -> Result<([f64; 2], usize, usize)> {
        let face = self
            .faces
            .get(f)
            .ok_or_else(|| invalid(format!("face index {f} out of range (n_faces = {})", self.faces.len())))?;
        Ok((face.normal, face.tminus, face.tplus))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let c = &self.coords[t];
        [
            (c[0][0] + c[1][0] + c[2][0]) / 3.0,
            (c[0][1] + c[1][1] + c[2][1]) / 3.0,
        ]
    }

    /// Difference `b - a` wrapped to the nearest periodic image.
    pub fn min_image(a: Point, b: Point) -> [f64; 2] {
        let wrap = |d: f64| d - d.round();
        [wrap(b[0] - a[0]), wrap(b[1] - a[1])]
    }

    /// Locates the triangle containing `p` (wrapped into the unit square) and
    /// returns it together with the barycentric coordinates of `p`.
    pub fn locate(&self, p: Point) -> (usize, [f64; 3]) {
        let n = self.n;
        let nf = n as f64;
        let wrap = |x: f64| x - x.floor();
        let (x, y) = (wrap(p[0]) * nf, wrap(p[1]) * nf);
        let i = (x.floor() as usize).min(n - 1);
        let j = (y.floor() as usize).min(n - 1);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let s = j * n + i;
        if fx >= fy {
            // lower triangle (0,0),(1,0),(1,1)
            (2 * s, [1.0 - fx, fx - fy, fy])
        } else {
            // upper triangle (0,0),(1,1),(0,1)
            (2 * s + 1, [1.0 - fy, fx, fy - fx])
        }
    }

    /// Maximum over interior edges of (sum of the two opposite angles) - pi.
    /// Non-positive for a Delaunay triangulation.
    pub fn delaunay_excess(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let a = self.opposite_angle(f.tminus, f.local_minus);
                let b = self.opposite_angle(f.tplus, f.local_plus);
                a + b - std::f64::consts::PI
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn opposite_angle(&self, t: usize, local_edge: [usize; 2]) -> f64 {
        let opp = 3 - local_edge[0] - local_edge[1];
        let c = &self.coords[t];
        let u = [c[local_edge[0]][0] - c[opp][0], c[local_edge[0]][1] - c[opp][1]];
        let v = [c[local_edge[1]][0] - c[opp][0], c[local_edge[1]][1] - c[opp][1]];
        let cos = (u[0] * v[0] + u[1] * v[1]) / ((u[0].hypot(u[1])) * (v[0].hypot(v[1])));
        cos.clamp(-1.0, 1.0).acos()
    }

    pub fn to_dump(&self) -> MeshDump {
        MeshDump {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            faces: self
                .faces
                .iter()
                .map(|f| FaceDump {
                    v0: f.vertices[0],
                    v1: f.vertices[1],
                    tminus: f.tminus,
                    tplus: f.tplus,
                    normal: f.normal,
                })
                .collect(),
        }
    }
}

fn triangle_geometry(c: &[Point; 3]) -> TriangleGeometry {
    let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let area = 0.5 * det;
    let mut grad_lambda = [[0.0; 2]; 3];
    for (k, g) in grad_lambda.iter_mut().enumerate() {
        let a = c[(k + 1) % 3];
        let b = c[(k + 2) % 3];
        // rotate the opposite edge by -90 degrees and scale by 1/det
        *g = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    let edge = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
    let diameter = edge(c[0], c[1]).max(edge(c[1], c[2])).max(edge(c[2], c[0]));
    TriangleGeometry {
        area,
        diameter,
        grad_lambda,
    }
}

/// JSON layout of `vortex mesh-dump`.
#[derive(Debug, Serialize)]
pub struct MeshDump {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub faces: Vec<FaceDump>,
}

#[derive(Debug, Serialize)]
pub struct FaceDump {
    pub v0: usize,
    pub v1: usize,
    pub tminus: usize,
    pub tplus: usize,
    pub normal: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_relation_on_torus() {
        for n in 2..7 {
            let m = PeriodicMesh::build_periodic(n).unwrap();
            let (v, e, t) = (m.n_vertices(), m.n_faces(), m.n_triangles());
            assert_eq!((v, e, t), (n * n, 3 * n * n, 2 * n * n));
            assert_eq!(v as i64 - e as i64 + t as i64, 0);
        }
    }

    #[test]
    fn rejects_tiny_meshes() {
        assert!(PeriodicMesh::build_periodic(1).is_err());
        assert!(PeriodicMesh::build_periodic(0).is_err());
    }

    #[test]
    fn uniform_positive_areas() {
        let m = PeriodicMesh::build_periodic(4).unwrap();
        let mut total = 0.0;
        for t in 0..m.n_triangles() {
            let a = m.geometry(t).area;
            assert!((a - 1.0 / 32.0).abs() < 1e-15);
            total += a;
        }
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn faces_are_shared_by_two_triangles() {
        let m = PeriodicMesh::build_periodic(3).unwrap();
        let mut count = vec![0usize; m.n_faces()];
        for t in 0..m.n_triangles() {
            for &f in m.triangle_faces(t) {
                count[f] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 2));
        for (fi, f) in m.faces().iter().enumerate() {
            let km = m.triangle_faces(f.tminus).iter().position(|&x| x == fi).unwrap();
            let kp = m.triangle_faces(f.tplus).iter().position(|&x| x == fi).unwrap();
            // local edge k is opposite local vertex k
            assert_eq!(km + f.local_minus[0] + f.local_minus[1], 3);
            assert_eq!(kp + f.local_plus[0] + f.local_plus[1], 3);
            assert_eq!(m.triangles()[f.tminus][f.local_minus[0]], f.vertices[0]);
            assert_eq!(m.triangles()[f.tminus][f.local_minus[1]], f.vertices[1]);
            assert_eq!(m.triangles()[f.tplus][f.local_plus[0]], f.vertices[0]);
            assert_eq!(m.triangles()[f.tplus][f.local_plus[1]], f.vertices[1]);
        }
    }

    #[test]
    fn delaunay_on_all_edges() {
        let m = PeriodicMesh::build_periodic(3).unwrap();
        assert_eq!(m.n_faces(), 27);
        assert!(m.delaunay_excess() <= 1e-12);
    }

    #[test]
    fn normals_point_from_minus_to_plus() {
        let m = PeriodicMesh::build_periodic(5).unwrap();
        for f in 0..m.n_faces() {
            let (nrm, tm, tp) = m.face_jump_frame(f).unwrap();
            assert!((nrm[0] * nrm[0] + nrm[1] * nrm[1] - 1.0).abs() < 1e-15);
            let d = PeriodicMesh::min_image(m.centroid(tm), m.centroid(tp));
            assert!(d[0] * nrm[0] + d[1] * nrm[1] > 0.0, "face {f}");
        }
        assert!(m.face_jump_frame(m.n_faces()).is_err());
    }

    #[test]
    fn frames_are_deterministic() {
        let m = PeriodicMesh::build_periodic(2).unwrap();
        let a: Vec<_> = (0..12).map(|f| m.face_jump_frame(f).unwrap()).collect();
        let b: Vec<_> = (0..12).map(|f| m.face_jump_frame(f).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn locate_recovers_points() {
        let m = PeriodicMesh::build_periodic(7).unwrap();
        for &p in &[[0.13, 0.77], [0.999, 0.001], [0.5, 0.5], [1.25, -0.3]] {
            let (t, l) = m.locate(p);
            assert!(l.iter().all(|&x| x >= -1e-14));
            let c = m.triangle_coords(t);
            let q = [
                l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
                l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
            ];
            let d = PeriodicMesh::min_image(p, q);
            assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12);
        }
    }

    #[test]
    fn patches() {
        let m = PeriodicMesh::build_periodic(4).unwrap();
        assert!((0..m.n_vertices()).all(|v| m.vertex_patch(v).len() == 6));
        // two endpoint patches of six triangles share the two face neighbours
        assert!((0..m.n_faces()).all(|f| m.face_patch(f).len() == 10));
    }
}
