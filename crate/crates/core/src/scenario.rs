//! Scenario files: a human-editable TOML description of the plant, gains,
//! graph, attack, detector, and simulation controls. Matrices are row-major
//! nested arrays, times are seconds, agents are 1-indexed externally and
//! converted to 0-indexed at this boundary.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{self, AttackKind, AttackScenario, DetectorAttack, QuasiCovert, ResolvedAttack};
use crate::detection::DetectorParams;
use crate::dynamics::{PlantModel, ProtocolGains};
use crate::graph::DiGraph;
use crate::numerics::RMat;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioFile {
    pub model: ModelBlock,
    pub gains: GainsBlock,
    pub graph: GraphBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorBlock>,
    pub sim: SimBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GainsBlock {
    pub coupling: f64,
    pub observer: Vec<Vec<f64>>,
    pub control: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphBlock {
    pub n: usize,
    pub adjacency: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttackBlock {
    /// "root" (one spanning-tree root, all incoming links rewritten) or
    /// "fdi" (a set of non-root agents, uncompromised-to-attacked links
    /// rewritten).
    pub kind: String,
    /// 1-indexed agent ids.
    pub agents: Vec<usize>,
    pub a0: Vec<f64>,
    pub t_attack: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasi_covert: Option<QuasiCovertBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_attack: Option<DetectorAttackBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuasiCovertBlock {
    pub t_active: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_xhat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectorAttackBlock {
    pub a_z0: Vec<f64>,
    pub t_active: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectorBlock {
    /// Diagonal of A_z (all entries strictly negative).
    pub a_z_diag: Vec<f64>,
    pub b_z: Vec<Vec<f64>>,
    pub f_z: Vec<Vec<f64>>,
    pub c_z: f64,
    pub alpha: f64,
    pub eta_z: f64,
}

fn default_h() -> f64 {
    1e-3
}
fn default_stride() -> usize {
    10
}
fn default_init_range() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimBlock {
    pub t_end: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Initial conditions drawn uniformly from [−init_range, init_range]
    /// unless explicit vectors are given.
    #[serde(default = "default_init_range")]
    pub init_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_xhat: Option<Vec<f64>>,
}

/// A scenario with every cross-dimension check done and every block
/// converted to its typed domain object.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    pub file: ScenarioFile,
    pub model: PlantModel,
    pub gains: ProtocolGains,
    pub graph: DiGraph,
    pub detector: Option<DetectorParams>,
    pub attack: Option<ResolvedAttack>,
    pub sim: SimBlock,
}

fn to_matrix(path: &str, rows: &[Vec<f64>]) -> Result<RMat, ScenarioError> {
    if rows.is_empty() {
        return Err(invalid(path, "matrix must have at least one row"));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(invalid(path, "matrix rows must be nonempty"));
    }
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(invalid(
                path,
                format!("row {} has {} entries, expected {}", i + 1, row.len(), cols),
            ));
        }
        flat.extend_from_slice(row);
    }
    crate::numerics::mat_from_rows(rows.len(), cols, &flat)
        .map_err(|e| invalid(path, e))
}

fn to_agent_indices(path: &str, ids: &[usize], n: usize) -> Result<Vec<usize>, ScenarioError> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == 0 || id > n {
            return Err(invalid(
                path,
                format!("agent id {id} out of range 1..={n}"),
            ));
        }
        out.push(id - 1);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    pub fn validate(&self) -> Result<ValidatedScenario, ScenarioError> {
        let model = PlantModel {
            a: to_matrix("model.a", &self.model.a)?,
            b: to_matrix("model.b", &self.model.b)?,
            c_out: to_matrix("model.c", &self.model.c)?,
        };
        model.validate().map_err(|e| invalid("model", e))?;
        let n = model.n();

        let gains = ProtocolGains {
            coupling: self.gains.coupling,
            observer_gain: to_matrix("gains.observer", &self.gains.observer)?,
            control_gain: to_matrix("gains.control", &self.gains.control)?,
        };
        gains.validate(&model).map_err(|e| invalid("gains", e))?;

        let n_agents = self.graph.n;
        if n_agents == 0 {
            return Err(invalid("graph.n", "need at least one agent"));
        }
        if self.graph.adjacency.len() != n_agents {
            return Err(invalid(
                "graph.adjacency",
                format!(
                    "expected {n_agents} rows, got {}",
                    self.graph.adjacency.len()
                ),
            ));
        }
        let mut flat = Vec::with_capacity(n_agents * n_agents);
        for (i, row) in self.graph.adjacency.iter().enumerate() {
            if row.len() != n_agents {
                return Err(invalid(
                    "graph.adjacency",
                    format!("row {} has {} entries, expected {n_agents}", i + 1, row.len()),
                ));
            }
            flat.extend_from_slice(row);
        }
        let graph =
            DiGraph::from_adjacency(n_agents, &flat).map_err(|e| invalid("graph.adjacency", e))?;

        let detector = match &self.detector {
            Some(block) => {
                if block.a_z_diag.len() != n {
                    return Err(invalid(
                        "detector.a_z_diag",
                        format!("expected {n} diagonal entries, got {}", block.a_z_diag.len()),
                    ));
                }
                let mut a_z = RMat::zeros(n, n);
                for (k, &v) in block.a_z_diag.iter().enumerate() {
                    a_z[(k, k)] = v;
                }
                let params = DetectorParams {
                    a_z,
                    b_z: to_matrix("detector.b_z", &block.b_z)?,
                    f_z: to_matrix("detector.f_z", &block.f_z)?,
                    c_z: block.c_z,
                    alpha: block.alpha,
                    eta_z: block.eta_z,
                };
                params.validate(n).map_err(|e| invalid("detector", e))?;
                Some(params)
            }
            None => None,
        };

        let attack = match &self.attack {
            Some(block) => {
                let agents = to_agent_indices("attack.agents", &block.agents, n_agents)?;
                if agents.is_empty() {
                    return Err(invalid("attack.agents", "need at least one attacked agent"));
                }
                if block.a0.len() != n {
                    return Err(invalid(
                        "attack.a0",
                        format!("expected dimension {n}, got {}", block.a0.len()),
                    ));
                }
                let kind = match block.kind.as_str() {
                    "root" => {
                        if agents.len() != 1 {
                            return Err(invalid(
                                "attack.agents",
                                format!(
                                    "a root attack targets exactly one agent, got {}",
                                    agents.len()
                                ),
                            ));
                        }
                        AttackKind::Root { agent: agents[0] }
                    }
                    "fdi" => AttackKind::NonRoot { v_da: agents },
                    other => {
                        return Err(invalid(
                            "attack.kind",
                            format!("unknown kind {other:?}; expected \"root\" or \"fdi\""),
                        ))
                    }
                };
                if block.detector_attack.is_some() && detector.is_none() {
                    return Err(invalid(
                        "attack.detector_attack",
                        "requires a [detector] block",
                    ));
                }
                let quasi_covert = match &block.quasi_covert {
                    Some(q) => Some(QuasiCovert {
                        t_active: q.t_active,
                        init_override: match (&q.init_x, &q.init_xhat) {
                            (Some(x), Some(xh)) => Some((
                                DVector::from_column_slice(x),
                                DVector::from_column_slice(xh),
                            )),
                            (None, None) => None,
                            _ => {
                                return Err(invalid(
                                    "attack.quasi_covert",
                                    "init_x and init_xhat must be given together",
                                ))
                            }
                        },
                    }),
                    None => None,
                };
                let scenario = AttackScenario {
                    kind,
                    a0: DVector::from_column_slice(&block.a0),
                    t_attack: block.t_attack,
                    quasi_covert,
                    detector_attack: block.detector_attack.as_ref().map(|d| DetectorAttack {
                        a_z0: DVector::from_column_slice(&d.a_z0),
                        t_active: d.t_active,
                    }),
                };
                let resolved = attacks::resolve(scenario, &graph, n)
                    .map_err(|e| invalid("attack", e))?;
                Some(resolved)
            }
            None => None,
        };

        if !(self.sim.t_end > 0.0) {
            return Err(invalid("sim.t_end", "must be positive"));
        }
        if !(self.sim.h > 0.0) {
            return Err(invalid("sim.h", "must be positive"));
        }
        if self.sim.record_stride == 0 {
            return Err(invalid("sim.record_stride", "must be at least 1"));
        }
        if !(self.sim.init_range > 0.0) && self.sim.initial_x.is_none() {
            return Err(invalid("sim.init_range", "must be positive"));
        }
        for (path, v) in [
            ("sim.initial_x", &self.sim.initial_x),
            ("sim.initial_xhat", &self.sim.initial_xhat),
        ] {
            if let Some(vec) = v {
                if vec.len() != n_agents * n {
                    return Err(invalid(
                        path,
                        format!("expected {} entries, got {}", n_agents * n, vec.len()),
                    ));
                }
            }
        }
        if let Some(a) = &attack {
            if a.scenario.t_attack > self.sim.t_end {
                return Err(invalid(
                    "attack.t_attack",
                    "activation lies beyond sim.t_end",
                ));
            }
        }

        Ok(ValidatedScenario {
            file: self.clone(),
            model,
            gains,
            graph,
            detector,
            attack,
            sim: self.sim.clone(),
        })
    }
}
