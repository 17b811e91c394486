//! Scenario files: the JSON interchange format for a sensing network, a
//! starting configuration, an optional desired configuration, and
//! simulation parameters.
//!
//! A scenario is the unit every subcommand consumes. The format stays close
//! to the in-memory types: an agent count, an edge list with per-edge
//! kind/desired/gain, and position arrays. Bearing desireds are stored as
//! (approximately unit) direction vectors and normalized on load. Bearing
//! length scales are never stored: they are derived from the desired
//! configuration, which is the single source of truth for the target shape.
//!
//! Serialization is canonical — fixed field order, shortest round-tripping
//! float representation — so parse → serialize → parse is the identity on
//! [`Scenario`] values.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use hetform_core::{
    geometric_error_norms, tol, Configuration, DesiredValue, DirectedEdge, MergeCase, SensingKind,
    SimParams, TwoLayerGraph,
};

/// Errors raised while loading or validating a scenario or merge file.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The JSON does not match the schema; points at the offending spot.
    #[error("{}:{line}:{column}: {message}", .path.display())]
    Schema {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    /// The JSON parses but describes an invalid scenario.
    #[error("invalid scenario {}: {message}", .path.display())]
    Validation { path: PathBuf, message: String },
}

/// A parsed, validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: TwoLayerGraph,
    pub initial_positions: Configuration,
    /// Reference configuration satisfying every constraint, when given.
    /// Analyses that linearize about an equilibrium require it.
    pub desired_positions: Option<Configuration>,
    pub sim: SimParams,
}

/// A merge request: which case, where the new agent goes, and how strongly
/// its links pull. Lives in its own small JSON file so a planned insertion
/// is reviewable and reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeSpec {
    pub case: MergeCase,
    /// Existing agents the two new links touch; link 0 belongs to
    /// `anchors[0]`, link 1 to `anchors[1]`.
    pub anchors: [usize; 2],
    pub new_agent_kind: SensingKind,
    /// Desired position of the new agent.
    pub at: [f64; 2],
    /// Requested gains for the two new links; planning may raise them to
    /// the certified bound. Defaults to `[1, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<[f64; 2]>,
    /// Sensing kind of the link measured by a 2-DOF leader anchor, which
    /// has no outgoing edge to infer it from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_kind: Option<SensingKind>,
}

/// On-disk shape of a scenario. Field order here is the canonical
/// serialization order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    agents: usize,
    edges: Vec<EdgeDto>,
    initial_positions: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    desired_positions: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    sim: Option<SimParams>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDto {
    tail: usize,
    head: usize,
    kind: SensingKind,
    desired: DesiredDto,
    gain: f64,
}

/// A desired value is a scalar distance or a unit bearing vector; the
/// `kind` field states which one the edge means, and the two must agree.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum DesiredDto {
    Distance(f64),
    Bearing([f64; 2]),
}

/// Load and validate a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| ScenarioError::Schema {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario_from_file(file, path)
}

/// Load and validate a merge request file.
pub fn parse_merge_spec(path: &Path) -> Result<MergeSpec, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    let spec: MergeSpec = serde_json::from_str(&text).map_err(|e| ScenarioError::Schema {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if !spec.at.iter().all(|c| c.is_finite()) {
        return Err(ScenarioError::Validation {
            path: path.to_owned(),
            message: format!("new-agent position [{}, {}] is not finite", spec.at[0], spec.at[1]),
        });
    }
    if let Some(gains) = spec.gains {
        if !gains.iter().all(|k| k.is_finite() && *k > 0.0) {
            return Err(ScenarioError::Validation {
                path: path.to_owned(),
                message: format!("gains [{}, {}] must be positive and finite", gains[0], gains[1]),
            });
        }
    }
    Ok(spec)
}

/// Serialize a scenario in canonical form.
pub fn serialize_scenario(s: &Scenario) -> String {
    let file = ScenarioFile {
        agents: s.graph.agent_count(),
        edges: s
            .graph
            .edges()
            .iter()
            .map(|e| EdgeDto {
                tail: e.tail,
                head: e.head,
                kind: e.kind(),
                desired: match e.desired {
                    DesiredValue::Distance(d) => DesiredDto::Distance(d),
                    DesiredValue::Bearing(g) => DesiredDto::Bearing([g.x, g.y]),
                },
                gain: e.gain,
            })
            .collect(),
        initial_positions: positions_to_arrays(&s.initial_positions),
        desired_positions: s.desired_positions.as_ref().map(positions_to_arrays),
        sim: Some(s.sim),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("scenario serialization is total");
    text.push('\n');
    text
}

/// Write a scenario to disk in canonical form.
pub fn write_scenario(path: &Path, s: &Scenario) -> Result<(), ScenarioError> {
    fs::write(path, serialize_scenario(s)).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })
}

fn positions_to_arrays(c: &Configuration) -> Vec<[f64; 2]> {
    c.positions().iter().map(|p| [p.x, p.y]).collect()
}

fn configuration_from_arrays(
    raw: &[[f64; 2]],
    what: &str,
    agents: usize,
    path: &Path,
) -> Result<Configuration, ScenarioError> {
    if raw.len() != agents {
        return Err(validation(
            path,
            format!("{what} has {} entries for {agents} agents", raw.len()),
        ));
    }
    for (i, p) in raw.iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(validation(
                path,
                format!("{what}[{i}] = [{}, {}] is not finite", p[0], p[1]),
            ));
        }
    }
    Ok(Configuration::new(
        raw.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
    ))
}

fn validation(path: &Path, message: String) -> ScenarioError {
    ScenarioError::Validation {
        path: path.to_owned(),
        message,
    }
}

fn scenario_from_file(file: ScenarioFile, path: &Path) -> Result<Scenario, ScenarioError> {
    let agents = file.agents;
    let initial = configuration_from_arrays(&file.initial_positions, "initial_positions", agents, path)?;
    let desired = file
        .desired_positions
        .as_deref()
        .map(|raw| configuration_from_arrays(raw, "desired_positions", agents, path))
        .transpose()?;

    let mut edges = Vec::with_capacity(file.edges.len());
    for (idx, e) in file.edges.iter().enumerate() {
        if e.tail >= agents || e.head >= agents {
            return Err(validation(
                path,
                format!(
                    "edge {idx} references agent {} outside 0..{agents}",
                    e.tail.max(e.head)
                ),
            ));
        }
        if !e.gain.is_finite() {
            return Err(validation(path, format!("edge {idx} has non-finite gain {}", e.gain)));
        }
        let edge = match (e.kind, &e.desired) {
            (SensingKind::Distance, DesiredDto::Distance(d)) => {
                if !d.is_finite() {
                    return Err(validation(
                        path,
                        format!("edge {idx} has non-finite desired distance {d}"),
                    ));
                }
                DirectedEdge::distance(e.tail, e.head, *d, e.gain)
            }
            (SensingKind::Bearing, DesiredDto::Bearing(g)) => {
                if !g.iter().all(|c| c.is_finite()) {
                    return Err(validation(
                        path,
                        format!("edge {idx} has non-finite desired bearing [{}, {}]", g[0], g[1]),
                    ));
                }
                let g_star = Vector2::new(g[0], g[1]);
                match &desired {
                    Some(p_star) => {
                        let scale = (p_star[e.head] - p_star[e.tail]).norm();
                        DirectedEdge::bearing_scaled(e.tail, e.head, g_star, e.gain, scale)
                    }
                    // Without a desired configuration the edge has no length
                    // scale; analyses that need one reject it downstream.
                    None => DirectedEdge::bearing(e.tail, e.head, g_star, e.gain),
                }
            }
            (SensingKind::Distance, DesiredDto::Bearing(_)) => {
                return Err(validation(
                    path,
                    format!("edge {idx}: kind is `distance` but desired is a bearing vector"),
                ));
            }
            (SensingKind::Bearing, DesiredDto::Distance(_)) => {
                return Err(validation(
                    path,
                    format!("edge {idx}: kind is `bearing` but desired is a scalar distance"),
                ));
            }
        };
        edges.push(edge);
    }

    let graph =
        TwoLayerGraph::new(agents, edges).map_err(|e| validation(path, e.to_string()))?;
    graph
        .check_configuration(&initial)
        .map_err(|e| validation(path, format!("initial_positions: {e}")))?;

    if let Some(p_star) = &desired {
        let errs = geometric_error_norms(p_star, &graph)
            .map_err(|e| validation(path, format!("desired_positions: {e}")))?;
        let (worst, max) = errs
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (l, &v)| if v > acc.1 { (l, v) } else { acc });
        if max > tol::ACTIVITY_VERDICT {
            return Err(validation(
                path,
                format!(
                    "desired_positions leave edge {worst} inactive: error {max:.3e} exceeds {:.0e}",
                    tol::ACTIVITY_VERDICT
                ),
            ));
        }
    }

    let sim = file.sim.unwrap_or_default();
    sim.validate().map_err(|e| validation(path, e.to_string()))?;

    Ok(Scenario {
        graph,
        initial_positions: initial,
        desired_positions: desired,
        sim,
    })
}
