//! Scenario files: model, profile, perturbation and experiment settings,
//! plus the built-in library.

use std::f64::consts::{FRAC_PI_8, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{validate_profile, Resolution, SpectralProfile};
use crate::linalg::{CMatrix, C64};
use crate::model::{DenseModel, DiagonalModel, EntryRule, OperatorModel};
use crate::perturbation::{ColumnSpec, FiniteRankPerturbation};
use crate::quadrature::QuadratureConfig;
use crate::resolvent::EngineConfig;

pub const SCHEMA_VERSION: u32 = 1;

const PROFILE_FIELDS: [&str; 4] = ["phis", "alpha", "eps_a", "m_a"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Diagonal {
        rule: EntryRule,
        /// Explicit leading entries as `[re, im]`; override the rule.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        prefix: Vec<[f64; 2]>,
        n_max: usize,
        /// Defaults to the rule's limit angles.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit_points: Option<Vec<f64>>,
    },
    Dense {
        /// Row-major `[re, im]` entries.
        matrix: Vec<Vec<[f64; 2]>>,
        unit_points: Vec<f64>,
    },
}

impl ModelSpec {
    pub fn build(&self, floor: f64) -> Result<OperatorModel> {
        match self {
            ModelSpec::Diagonal {
                rule,
                prefix,
                n_max,
                unit_points,
            } => {
                let prefix: Vec<C64> = prefix.iter().map(|p| C64::new(p[0], p[1])).collect();
                let points = unit_points.clone().unwrap_or_else(|| rule.limit_angles());
                let model = DiagonalModel::new(rule.clone(), prefix, *n_max, points)?;
                Ok(OperatorModel::from(model).with_floor(floor))
            }
            ModelSpec::Dense { matrix, unit_points } => {
                let n = matrix.len();
                if matrix.iter().any(|row| row.len() != n) {
                    return Err(LabError::Validation(vec!["model.matrix must be square".into()]));
                }
                let m = CMatrix::from_fn(n, n, |i, j| C64::new(matrix[i][j][0], matrix[i][j][1]));
                Ok(OperatorModel::from(DenseModel::new(m, unit_points.clone())?).with_floor(floor))
            }
        }
    }
}

fn d_trunc() -> usize {
    500
}
fn d_orbit_max() -> u64 {
    100_000
}
fn d_orbit_threshold() -> f64 {
    1e-3
}
fn d_orbit_support() -> Vec<usize> {
    vec![1, 2]
}
fn d_probes() -> usize {
    20
}
fn d_probe_support() -> usize {
    32
}
fn d_pole_entries() -> usize {
    64
}
fn d_injectivity_samples() -> usize {
    8
}
fn d_moment_samples() -> usize {
    64
}
fn d_floor() -> f64 {
    1e-13
}
fn d_bracket() -> [f64; 2] {
    [0.0, 20.0]
}

/// Every knob of a run; all defaults are listed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub resolution: Resolution,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    /// Explicit coordinates kept for perturbed computations and the oracle.
    #[serde(default = "d_trunc")]
    pub trunc_dim: usize,
    #[serde(default = "d_orbit_max")]
    pub orbit_max: u64,
    #[serde(default = "d_orbit_threshold")]
    pub orbit_threshold: f64,
    /// 1-based coordinates set to one in the orbit probe.
    #[serde(default = "d_orbit_support")]
    pub orbit_support: Vec<usize>,
    #[serde(default = "d_probes")]
    pub basis_probes: usize,
    #[serde(default = "d_probes")]
    pub random_probes: usize,
    /// Random probes live on the first `probe_support` coordinates.
    #[serde(default = "d_probe_support")]
    pub probe_support: usize,
    /// Leading entries treated as poles when refining quadrature meshes.
    #[serde(default = "d_pole_entries")]
    pub pole_entries: usize,
    #[serde(default = "d_injectivity_samples")]
    pub injectivity_samples: usize,
    #[serde(default = "d_moment_samples")]
    pub moment_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_bracket")]
    pub threshold_bracket: [f64; 2],
    #[serde(default = "d_floor")]
    pub spectrum_floor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub model: ModelSpec,
    pub profile: SpectralProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<FiniteRankPerturbation>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl Scenario {
    pub fn build_model(&self) -> Result<OperatorModel> {
        self.model.build(self.experiment.spectrum_floor)
    }

    /// The perturbation, or the rank-zero one.
    pub fn perturbation(&self) -> FiniteRankPerturbation {
        self.perturbation.clone().unwrap_or_else(FiniteRankPerturbation::zero)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        problems.extend(validate_profile(&self.profile).violations);
        match self.build_model() {
            Ok(model) => {
                let pts = model.unit_points();
                let same = pts.len() == self.profile.phis.len()
                    && pts.iter().zip(&self.profile.phis).all(|(a, b)| (a - b).abs() <= 1e-12);
                if !same {
                    problems.push(format!(
                        "phis: {:?} do not match the model's unit points {:?}",
                        self.profile.phis, pts
                    ));
                }
                if self.experiment.trunc_dim == 0 || self.experiment.trunc_dim > model.dim().max(1) {
                    problems.push(format!(
                        "experiment.trunc_dim = {} must lie in [1, {}]",
                        self.experiment.trunc_dim,
                        model.dim()
                    ));
                }
            }
            Err(LabError::Validation(v)) => problems.extend(v),
            Err(e) => problems.push(format!("model: {e}")),
        }
        if let Some(p) = &self.perturbation {
            if let Err(LabError::Validation(v)) = p.validate() {
                problems.extend(v);
            }
        }
        let e = &self.experiment;
        if e.orbit_support.iter().any(|&i| i == 0 || i > e.trunc_dim) {
            problems.push("experiment.orbit_support: indices must lie in [1, trunc_dim]".into());
        }
        if e.orbit_max == 0 {
            problems.push("experiment.orbit_max must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LabError::Validation(problems))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Scenario> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        if let Some(profile) = value.get("profile").and_then(|p| p.as_object()) {
            let missing: Vec<String> = PROFILE_FIELDS
                .iter()
                .filter(|f| !profile.contains_key(**f))
                .map(|f| format!("{f}: missing from profile"))
                .collect();
            if !missing.is_empty() {
                return Err(LabError::Validation(missing));
            }
        }
        let scenario: Scenario = serde_json::from_str(text).map_err(parse_error)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// `(s·s_B, s·s_C)`.
    pub fn scaled(&self, s: f64) -> Scenario {
        let mut out = self.clone();
        out.perturbation = self.perturbation.as_ref().map(|p| p.scaled(s));
        out
    }
}

fn parse_error(e: serde_json::Error) -> LabError {
    LabError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn s1_model() -> ModelSpec {
    ModelSpec::Diagonal {
        rule: EntryRule::PolarApproach {
            phis: vec![0.0],
            radial_coef: 1.0,
            radial_exp: 2.0,
            angle_coef: 1.0,
            angle_exp: 1.0,
            side: 1.0,
        },
        prefix: Vec::new(),
        n_max: 2000,
        unit_points: None,
    }
}

/// `b_n = (1 - a_n)/n`, `c_n = (1 - ā_n)/n`, both scaled by 0.1.
pub fn p1_perturbation() -> FiniteRankPerturbation {
    let col = |conjugate| ColumnSpec::Smoothing {
        point: 0,
        power: 1.0,
        decay: 1.0,
        conjugate,
        coef: 1.0,
    };
    FiniteRankPerturbation {
        beta: 1.0,
        gamma: 1.0,
        scale_b: 0.1,
        scale_c: 0.1,
        b_columns: vec![col(false)],
        c_columns: vec![col(true)],
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["S1", "S2", "S1-P1"];

pub fn builtin(name: &str) -> Result<Scenario> {
    let base = |name: &str, model, profile| Scenario {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        model,
        profile,
        perturbation: None,
        experiment: ExperimentConfig::default(),
    };
    // M_A is 1.1 times the scanned supremum of the growth function at default resolution.
    let s1_profile = SpectralProfile {
        phis: vec![0.0],
        alpha: 2.0,
        eps_a: FRAC_PI_8,
        m_a: 8.6,
    };
    match name {
        "S1" => Ok(base("S1", s1_model(), s1_profile)),
        "S1-P1" => {
            let mut s = base("S1-P1", s1_model(), s1_profile);
            s.perturbation = Some(p1_perturbation());
            Ok(s)
        }
        "S2" => Ok(base(
            "S2",
            ModelSpec::Diagonal {
                rule: EntryRule::PolarApproach {
                    phis: vec![0.0, PI],
                    radial_coef: 1.0,
                    radial_exp: 1.0,
                    angle_coef: 1.0,
                    angle_exp: 1.0,
                    side: 1.0,
                },
                prefix: Vec::new(),
                n_max: 2000,
                unit_points: None,
            },
            SpectralProfile {
                phis: vec![0.0, PI],
                alpha: 1.0,
                eps_a: FRAC_PI_8,
                m_a: 4.1,
            },
        )),
        _ => Err(LabError::Validation(vec![format!(
            "unknown built-in scenario {name:?}; known: {}",
            BUILTIN_NAMES.join(", ")
        )])),
    }
}

/// Loads `builtin:NAME` or a JSON file.
pub fn load_scenario(source: &str) -> Result<Scenario> {
    if let Some(name) = source.strip_prefix("builtin:") {
        let s = builtin(name)?;
        s.validate()?;
        return Ok(s);
    }
    let text = std::fs::read_to_string(Path::new(source))?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_round_trip() {
        for name in BUILTIN_NAMES {
            let s = load_scenario(&format!("builtin:{name}")).unwrap();
            let json = s.to_json();
            let back = Scenario::from_json(&json).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.to_json(), json);
        }
    }

    #[test]
    fn s1_entries() {
        let m = builtin("S1").unwrap().build_model().unwrap();
        let a2 = m.as_diagonal().unwrap().entry(2).unwrap();
        assert!((a2 - C64::from_polar(0.75, 0.5)).norm() < 1e-15);
        assert_eq!(m.as_diagonal().unwrap().entry(1).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn missing_alpha_names_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&builtin("S1").unwrap().to_json()).unwrap();
        v["profile"].as_object_mut().unwrap().remove("alpha");
        match Scenario::from_json(&v.to_string()) {
            Err(LabError::Validation(msgs)) => assert!(msgs.iter().any(|m| m.contains("alpha"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match Scenario::from_json("{\n  \"schema_version\": 1,\n  oops\n}") {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn profile_clauses_are_reported() {
        let mut s = builtin("S1").unwrap();
        s.profile.eps_a = 3.0;
        match Scenario::from_json(&s.to_json()) {
            Err(LabError::Validation(msgs)) => assert!(msgs.iter().any(|m| m.starts_with("eps_a"))),
            other => panic!("{other:?}"),
        }
    }
}
