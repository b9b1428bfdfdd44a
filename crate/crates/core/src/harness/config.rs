use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solver::TimeStepperSpec;
use crate::stabilizers::StabilizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    #[default]
    Consistent,
    Lumped,
}

impl MassKind {
    pub fn is_lumped(self) -> bool {
        self == MassKind::Lumped
    }
}

/// Filter width: a fixed value or `coefficient * h^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaPolicy {
    Fixed(f64),
    HPower {
        alpha: f64,
        #[serde(default = "one")]
        coefficient: f64,
    },
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::Fixed(0.25)
    }
}

impl DeltaPolicy {
    pub fn delta(&self, h: f64) -> f64 {
        match *self {
            DeltaPolicy::Fixed(d) => d,
            DeltaPolicy::HPower { alpha, coefficient } => coefficient * h.powf(alpha),
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Named initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `omega = 4 pi sin(2 pi x) sin(2 pi y) exp(-8 pi^2 nu t)`.
    TaylorGreen,
    /// Shear wave `amplitude * sin(2 pi (x + y)) exp(-8 pi^2 nu t)`.
    HeatEigenmode {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Seeded noise: nodal values (`cells = 0`) or piecewise constants on a
    /// `cells x cells` grid, scaled to `[-amplitude, amplitude]` with zero mean.
    RoughRandom {
        #[serde(default)]
        cells: usize,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub dir: PathBuf,
    pub snapshot_every: Option<f64>,
    pub write_snapshots: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("vortex-out"),
            snapshot_every: None,
            write_snapshots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorOptions {
    pub c0: f64,
    pub c1: f64,
    pub filter_refine: u32,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c1: 1.0,
            filter_refine: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_per_side: usize,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub nu: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub stabilizer: StabilizerSpec,
    #[serde(default)]
    pub mass: MassKind,
    pub stepper: TimeStepperSpec,
    #[serde(default)]
    pub delta_policy: DeltaPolicy,
    pub initial_condition: InitialCondition,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimator: EstimatorOptions,
}

fn default_l() -> usize {
    1
}

impl RunConfig {
    /// Parses JSON, or TOML when `toml` is set, and validates.
    pub fn parse(text: &str, toml: bool) -> Result<Self> {
        let cfg: RunConfig = if toml {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` or JSON config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let toml = path.extension().is_some_and(|e| e == "toml");
        Self::parse(&text, toml)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_per_side < 2 {
            return bad(format!("n_per_side must be >= 2, got {}", self.n_per_side));
        }
        if !(self.l == 1 || self.l == 2) {
            return bad(format!("l must be 1 or 2, got {}", self.l));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be nonnegative, got {}", self.nu));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("T must be nonnegative, got {}", self.t_final));
        }
        let h = std::f64::consts::SQRT_2 / self.n_per_side as f64;
        let delta = self.delta_policy.delta(h);
        if !(delta > 0.0 && delta.is_finite()) {
            return bad(format!("delta policy yields a non-positive width {delta}"));
        }
        if let Some(s) = self.outputs.snapshot_every {
            if !(s > 0.0) {
                return bad(format!("snapshot_every must be positive, got {s}"));
            }
        }
        match self.initial_condition {
            InitialCondition::HeatEigenmode { amplitude } | InitialCondition::RoughRandom { amplitude, .. }
                if !amplitude.is_finite() =>
            {
                return bad("amplitude must be finite".into());
            }
            _ => {}
        }
        self.stepper.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.stabilizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn h(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n_per_side as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JSON: &str = r#"{
        "n_per_side": 8, "nu": 0.01, "T": 0.1,
        "stepper": {"scheme": "crank_nicolson", "dt": 0.01},
        "initial_condition": {"name": "taylor_green"}
    }"#;

    #[test]
    fn json_and_toml_agree() {
        let a = RunConfig::parse(JSON, false).unwrap();
        let toml = r#"
            n_per_side = 8
            nu = 0.01
            T = 0.1
            [stepper]
            scheme = "crank_nicolson"
            dt = 0.01
            [initial_condition]
            name = "taylor_green"
        "#;
        let b = RunConfig::parse(toml, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_config_errors() {
        let extra = JSON.replace("\"nu\"", "\"viscosity\": 1, \"nu\"");
        assert!(matches!(RunConfig::parse(&extra, false), Err(Error::Config(_))));
        let bad_l = JSON.replace("\"nu\"", "\"l\": 3, \"nu\"");
        assert!(matches!(RunConfig::parse(&bad_l, false), Err(Error::Config(_))));
        let unknown_case = JSON.replace("taylor_green", "kelvin_helmholtz");
        assert!(matches!(RunConfig::parse(&unknown_case, false), Err(Error::Config(_))));
        let both = JSON.replace("\"dt\": 0.01", "\"dt\": 0.01, \"cfl_number\": 0.5");
        assert!(matches!(RunConfig::parse(&both, false), Err(Error::Config(_))));
    }

    #[test]
    fn delta_policies() {
        assert_eq!(DeltaPolicy::default().delta(0.1), 0.25);
        let p: DeltaPolicy = serde_json::from_str(r#"{"h_power": {"alpha": 0.5}}"#).unwrap();
        assert!((p.delta(0.04) - 0.2).abs() < 1e-15);
    }
}
