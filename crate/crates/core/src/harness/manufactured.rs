use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::InitialCondition;
use crate::error::{invalid, Result};
use crate::estimators::ExactFields;
use crate::mesh::{PeriodicMesh, Point};

/// Initial data with, for the smooth cases, the closed-form solution.
#[derive(Debug, Clone)]
pub enum Manufactured {
    TaylorGreen { nu: f64 },
    HeatEigenmode { nu: f64, amplitude: f64 },
    Rough(RoughField),
}

/// Seeded zero-mean noise; no exact solution exists for it.
#[derive(Debug, Clone)]
pub struct RoughField {
    pub seed: u64,
    pub cells: usize,
    pub amplitude: f64,
    cell_values: Vec<f64>,
}

/// Uniform samples in `[-1, 1]`, made zero mean and rescaled to
/// `[-amplitude, amplitude]`.
fn noise(seed: u64, n: usize, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

impl RoughField {
    /// Nodal values on the vertices of `mesh` (`cells = 0`) or the
    /// piecewise-constant field sampled at the vertices.
    pub fn nodal_values(&self, mesh: &PeriodicMesh) -> Vec<f64> {
        if self.cells == 0 {
            noise(self.seed, mesh.n_vertices(), self.amplitude)
        } else {
            mesh.vertices().iter().map(|&p| self.value(p)).collect()
        }
    }

    /// Piecewise-constant value; only meaningful for `cells > 0`.
    pub fn value(&self, p: Point) -> f64 {
        let c = self.cells;
        let idx = |x: f64| ((x.rem_euclid(1.0) * c as f64).floor() as usize).min(c - 1);
        self.cell_values[idx(p[1]) * c + idx(p[0])]
    }
}

impl Manufactured {
    pub fn new(case: &InitialCondition, nu: f64, seed: u64) -> Result<Self> {
        Ok(match *case {
            InitialCondition::TaylorGreen => Manufactured::TaylorGreen { nu },
            InitialCondition::HeatEigenmode { amplitude } => Manufactured::HeatEigenmode { nu, amplitude },
            InitialCondition::RoughRandom { cells, amplitude } => Manufactured::Rough(RoughField {
                seed,
                cells,
                amplitude,
                cell_values: if cells > 0 { noise(seed, cells * cells, amplitude) } else { Vec::new() },
            }),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Manufactured::TaylorGreen { .. } => "taylor_green",
            Manufactured::HeatEigenmode { .. } => "heat_eigenmode",
            Manufactured::Rough(_) => "rough_random",
        }
    }

    pub fn validity_note(&self) -> &'static str {
        match self {
            Manufactured::TaylorGreen { .. } => {
                "exact for all nu: u.grad(omega) vanishes identically and omega solves the heat equation"
            }
            Manufactured::HeatEigenmode { .. } => {
                "exact for all nu: velocity is parallel to the level sets of omega, so transport vanishes"
            }
            Manufactured::Rough(_) => "no exact solution; for estimator scaling only",
        }
    }

    /// The closed-form solution, if one exists.
    pub fn exact(&self) -> Option<&dyn ExactFields> {
        match self {
            Manufactured::Rough(_) => None,
            _ => Some(self),
        }
    }

    /// Coefficients to use directly as `omega_h(0)` (nodal rough data only).
    pub fn nodal_initial(&self, mesh: &PeriodicMesh) -> Option<Vec<f64>> {
        match self {
            Manufactured::Rough(r) if r.cells == 0 => Some(r.nodal_values(mesh)),
            _ => None,
        }
    }

    /// `omega(x, 0)` as a function; `None` for nodal rough data.
    pub fn omega0(&self, p: Point) -> Option<f64> {
        match self {
            Manufactured::Rough(r) if r.cells == 0 => None,
            Manufactured::Rough(r) => Some(r.value(p)),
            _ => Some(self.omega(p, 0.0)),
        }
    }

    fn decay(&self, t: f64) -> f64 {
        match *self {
            Manufactured::TaylorGreen { nu } | Manufactured::HeatEigenmode { nu, .. } => (-8.0 * PI * PI * nu * t).exp(),
            Manufactured::Rough(_) => f64::NAN,
        }
    }

    /// Stream function with `-Lap psi = omega`; NaN for rough data.
    pub fn psi(&self, p: Point, t: f64) -> f64 {
        ExactFields::omega(self, p, t) / (8.0 * PI * PI)
    }
}

impl ExactFields for Manufactured {
    fn omega(&self, p: Point, t: f64) -> f64 {
        let e = self.decay(t);
        match *self {
            Manufactured::TaylorGreen { .. } => 4.0 * PI * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin() * e,
            Manufactured::HeatEigenmode { amplitude, .. } => amplitude * (2.0 * PI * (p[0] + p[1])).sin() * e,
            Manufactured::Rough(_) => f64::NAN,
        }
    }

    fn velocity(&self, p: Point, t: f64) -> [f64; 2] {
        let e = self.decay(t);
        match *self {
            Manufactured::TaylorGreen { .. } => {
                let (sx, cx) = (2.0 * PI * p[0]).sin_cos();
                let (sy, cy) = (2.0 * PI * p[1]).sin_cos();
                [sx * cy * e, -cx * sy * e]
            }
            Manufactured::HeatEigenmode { amplitude, .. } => {
                let c = amplitude / (4.0 * PI) * (2.0 * PI * (p[0] + p[1])).cos() * e;
                [c, -c]
            }
            Manufactured::Rough(_) => [f64::NAN; 2],
        }
    }
}

/// Looks up a case by name with default parameters.
pub fn manufactured_solution(name: &str, nu: f64, seed: u64) -> Result<Manufactured> {
    let case = match name {
        "taylor_green" => InitialCondition::TaylorGreen,
        "heat_eigenmode" => InitialCondition::HeatEigenmode { amplitude: 1.0 },
        "rough_random" => InitialCondition::RoughRandom { cells: 0, amplitude: 1.0 },
        other => return Err(invalid(format!("unknown manufactured solution `{other}`"))),
    };
    Manufactured::new(&case, nu, seed)
}
