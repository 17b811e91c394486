//! Two-layer directed sensing graphs over planar agent formations.
//!
//! A formation network is a set of `n` agents with directed edges, each edge
//! carrying exactly one constraint *kind*: a desired inter-agent **distance**
//! or a desired unit **bearing**. The tail of an edge is the agent that
//! measures and acts on the constraint; `z_ij = p_j − p_i` points from the
//! measuring agent `i` to its target `j`. In the intended sensing model each
//! agent measures in one modality, so its outgoing edges share one kind;
//! mixed-kind tails are still accepted structurally (they are useful in
//! rigidity analysis), and [`TwoLayerGraph::agent_kind`] reports `None` for
//! them.
//!
//! Conventions used throughout the crate:
//! * positions are stacked as `(x₀, y₀, x₁, y₁, …) ∈ ℝ^{2n}`;
//! * angles are measured counter-clockwise from +x and stored in `(-π, π]`;
//! * bearings are unit vectors; they are undefined for coincident agents.

use nalgebra::{DVector, Vector2};
use thiserror::Error;

use crate::{linalg, tol};

/// Index of an agent within a network (`0 ..= n-1`).
pub type AgentId = usize;

/// Sensing modality of an edge (and, by homogeneity, of its tail agent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensingKind {
    Distance,
    Bearing,
}

impl std::fmt::Display for SensingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SensingKind::Distance => write!(f, "distance"),
            SensingKind::Bearing => write!(f, "bearing"),
        }
    }
}

/// Desired value of an edge constraint: a positive length for distance
/// edges, a unit direction for bearing edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesiredValue {
    Distance(f64),
    Bearing(Vector2<f64>),
}

/// One directed constraint edge.
///
/// `bearing_scale` is the desired length `‖z*‖` of the edge, used by the
/// bearing control law to give bearing errors force units comparable to
/// distance errors. It is derived state (set from a desired configuration or
/// by merge planning), never serialized, and `None` for distance edges or
/// when no desired configuration is known.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdge {
    pub tail: AgentId,
    pub head: AgentId,
    pub desired: DesiredValue,
    pub gain: f64,
    pub bearing_scale: Option<f64>,
}

impl DirectedEdge {
    /// Distance edge `tail → head` with desired length `d_star`.
    pub fn distance(tail: AgentId, head: AgentId, d_star: f64, gain: f64) -> Self {
        DirectedEdge {
            tail,
            head,
            desired: DesiredValue::Distance(d_star),
            gain,
            bearing_scale: None,
        }
    }

    /// Bearing edge `tail → head` with desired unit bearing `g_star`.
    pub fn bearing(tail: AgentId, head: AgentId, g_star: Vector2<f64>, gain: f64) -> Self {
        DirectedEdge {
            tail,
            head,
            desired: DesiredValue::Bearing(g_star),
            gain,
            bearing_scale: None,
        }
    }

    /// As [`DirectedEdge::bearing`], with the desired length scale attached.
    pub fn bearing_scaled(
        tail: AgentId,
        head: AgentId,
        g_star: Vector2<f64>,
        gain: f64,
        scale: f64,
    ) -> Self {
        DirectedEdge {
            tail,
            head,
            desired: DesiredValue::Bearing(g_star),
            gain,
            bearing_scale: Some(scale),
        }
    }

    pub fn kind(&self) -> SensingKind {
        match self.desired {
            DesiredValue::Distance(_) => SensingKind::Distance,
            DesiredValue::Bearing(_) => SensingKind::Bearing,
        }
    }
}

/// Structural errors in network or configuration data.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("edge {edge_index} references agent {id}, but the network has {n} agents")]
    InvalidAgentId {
        edge_index: usize,
        id: AgentId,
        n: usize,
    },
    #[error("edge {edge_index} is a self-loop on agent {id}")]
    SelfLoop { edge_index: usize, id: AgentId },
    #[error("duplicate {kind} edge {tail} -> {head}")]
    DuplicateEdge {
        tail: AgentId,
        head: AgentId,
        kind: SensingKind,
    },
    #[error("edge {edge_index} has non-positive desired distance {value}")]
    NonPositiveDesiredDistance { edge_index: usize, value: f64 },
    #[error("edge {edge_index} has desired bearing of norm {norm}; expected a unit vector")]
    NonUnitBearing { edge_index: usize, norm: f64 },
    #[error("edge {edge_index} has non-positive gain {value}")]
    NonPositiveGain { edge_index: usize, value: f64 },
    #[error("edge {edge_index} has non-positive bearing scale {value}")]
    NonPositiveBearingScale { edge_index: usize, value: f64 },
    #[error("agents {tail} and {head} coincide; the edge bearing is undefined")]
    CoincidentAgents { tail: AgentId, head: AgentId },
    #[error("configuration has {got} positions for a network of {expected} agents")]
    WrongPositionCount { expected: usize, got: usize },
    #[error("the sensing graph is not connected")]
    Disconnected,
}

/// A planar configuration: one position per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    positions: Vec<Vector2<f64>>,
}

impl Configuration {
    pub fn new(positions: Vec<Vector2<f64>>) -> Self {
        Configuration { positions }
    }

    /// Build from stacked coordinates `(x₀, y₀, x₁, y₁, …)`.
    pub fn from_flat(v: &DVector<f64>) -> Self {
        assert_eq!(v.len() % 2, 0, "stacked planar vector has even length");
        let positions = (0..v.len() / 2)
            .map(|i| Vector2::new(v[2 * i], v[2 * i + 1]))
            .collect();
        Configuration { positions }
    }

    /// Stacked coordinates `(x₀, y₀, x₁, y₁, …)`.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.positions.len());
        for (i, p) in self.positions.iter().enumerate() {
            v[2 * i] = p.x;
            v[2 * i + 1] = p.y;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector2<f64>] {
        &self.positions
    }

    /// The same configuration rigidly translated by `t`.
    pub fn translated(&self, t: Vector2<f64>) -> Self {
        Configuration {
            positions: self.positions.iter().map(|p| p + t).collect(),
        }
    }

    /// Append one more agent position (used by merge application).
    pub fn extended(&self, p: Vector2<f64>) -> Self {
        let mut positions = self.positions.clone();
        positions.push(p);
        Configuration { positions }
    }
}

impl std::ops::Index<AgentId> for Configuration {
    type Output = Vector2<f64>;
    fn index(&self, i: AgentId) -> &Vector2<f64> {
        &self.positions[i]
    }
}

impl std::ops::IndexMut<AgentId> for Configuration {
    fn index_mut(&mut self, i: AgentId) -> &mut Vector2<f64> {
        &mut self.positions[i]
    }
}

/// Instantaneous geometry of one edge at a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGeometry {
    /// Relative position `z = p_head − p_tail`.
    pub z: Vector2<f64>,
    /// `‖z‖`.
    pub length: f64,
    /// Unit bearing `z / ‖z‖`.
    pub bearing: Vector2<f64>,
}

/// Raw control-law error of one edge: the signed quantity each law is
/// proportional to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeError {
    /// `‖z‖² − d*²`.
    Distance(f64),
    /// `g − g*`.
    Bearing(Vector2<f64>),
}

/// The two-layer directed sensing graph of a formation network.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerGraph {
    n: usize,
    edges: Vec<DirectedEdge>,
}

impl TwoLayerGraph {
    /// Validate and build a network over `n` agents.
    ///
    /// Checks: agent ids in range, no self-loops, at most one edge per
    /// `(tail, head, kind)` triple, positive desired distances and gains,
    /// unit desired bearings (normalized when within `1e-6` of unit length),
    /// and positive bearing scales where present.
    pub fn new(n: usize, edges: Vec<DirectedEdge>) -> Result<Self, GraphError> {
        let mut edges = edges;
        let mut seen: Vec<(AgentId, AgentId, SensingKind)> = Vec::with_capacity(edges.len());
        for (idx, e) in edges.iter_mut().enumerate() {
            for id in [e.tail, e.head] {
                if id >= n {
                    return Err(GraphError::InvalidAgentId {
                        edge_index: idx,
                        id,
                        n,
                    });
                }
            }
            if e.tail == e.head {
                return Err(GraphError::SelfLoop {
                    edge_index: idx,
                    id: e.tail,
                });
            }
            let key = (e.tail, e.head, e.kind());
            if seen.contains(&key) {
                return Err(GraphError::DuplicateEdge {
                    tail: e.tail,
                    head: e.head,
                    kind: e.kind(),
                });
            }
            seen.push(key);
            if !(e.gain > 0.0) {
                return Err(GraphError::NonPositiveGain {
                    edge_index: idx,
                    value: e.gain,
                });
            }
            match &mut e.desired {
                DesiredValue::Distance(d) => {
                    if !(*d > 0.0) {
                        return Err(GraphError::NonPositiveDesiredDistance {
                            edge_index: idx,
                            value: *d,
                        });
                    }
                }
                DesiredValue::Bearing(g) => {
                    let norm = g.norm();
                    if (norm - 1.0).abs() > tol::BEARING_NORM_SLACK {
                        return Err(GraphError::NonUnitBearing {
                            edge_index: idx,
                            norm,
                        });
                    }
                    *g /= norm;
                }
            }
            if let Some(s) = e.bearing_scale {
                if !(s > 0.0) {
                    return Err(GraphError::NonPositiveBearingScale {
                        edge_index: idx,
                        value: s,
                    });
                }
            }
        }
        Ok(TwoLayerGraph { n, edges })
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[DirectedEdge] {
        &self.edges
    }

    /// Outgoing edges of agent `i`, with their edge indices.
    pub fn out_edges(&self, i: AgentId) -> impl Iterator<Item = (usize, &DirectedEdge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.tail == i)
    }

    pub fn out_degree(&self, i: AgentId) -> usize {
        self.out_edges(i).count()
    }

    /// The sensing kind of agent `i`: the shared kind of its outgoing edges.
    /// `None` if it has none (an unconstrained leader) or if its outgoing
    /// edges mix kinds.
    pub fn agent_kind(&self, i: AgentId) -> Option<SensingKind> {
        let mut kinds = self.out_edges(i).map(|(_, e)| e.kind());
        let first = kinds.next()?;
        if kinds.all(|k| k == first) {
            Some(first)
        } else {
            None
        }
    }

    /// Smallest desired distance over the distance layer, if any.
    pub fn min_desired_distance(&self) -> Option<f64> {
        self.edges
            .iter()
            .filter_map(|e| match e.desired {
                DesiredValue::Distance(d) => Some(d),
                DesiredValue::Bearing(_) => None,
            })
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.min(d))))
    }

    /// Connectivity of the underlying undirected graph.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for e in &self.edges {
                let other = if e.tail == i {
                    e.head
                } else if e.head == i {
                    e.tail
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Spanning-tree edge pairs `(parent, child)` from a breadth-first search
    /// rooted at agent 0, neighbors visited in ascending id, in discovery
    /// order. These are the canonical edge coordinates used by the numeric
    /// edge-space linearization.
    ///
    /// # Preconditions
    /// The graph is connected (checked; panics otherwise — call
    /// [`TwoLayerGraph::is_connected`] first at fallible boundaries).
    pub fn bfs_tree_edges(&self) -> Vec<(AgentId, AgentId)> {
        assert!(self.is_connected(), "BFS tree requires a connected graph");
        let mut adj: Vec<Vec<AgentId>> = vec![Vec::new(); self.n];
        for e in &self.edges {
            if !adj[e.tail].contains(&e.head) {
                adj[e.tail].push(e.head);
            }
            if !adj[e.head].contains(&e.tail) {
                adj[e.head].push(e.tail);
            }
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
        }
        let mut seen = vec![false; self.n];
        let mut tree = Vec::with_capacity(self.n.saturating_sub(1));
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    tree.push((i, j));
                    queue.push_back(j);
                }
            }
        }
        tree
    }

    /// Check a configuration's shape against this network.
    pub fn check_configuration(&self, p: &Configuration) -> Result<(), GraphError> {
        if p.len() != self.n {
            return Err(GraphError::WrongPositionCount {
                expected: self.n,
                got: p.len(),
            });
        }
        Ok(())
    }
}

/// Geometry of one edge at configuration `p`.
///
/// # Errors
/// [`GraphError::CoincidentAgents`] when `‖z‖ < 1e-9`; the bearing is
/// undefined there.
pub fn edge_geometry(p: &Configuration, e: &DirectedEdge) -> Result<EdgeGeometry, GraphError> {
    let z = p[e.head] - p[e.tail];
    let length = z.norm();
    if length < tol::COINCIDENCE {
        return Err(GraphError::CoincidentAgents {
            tail: e.tail,
            head: e.head,
        });
    }
    Ok(EdgeGeometry {
        z,
        length,
        bearing: z / length,
    })
}

/// The stacked measurement map `F(p) = (‖z₁‖, …, ‖z_m‖, g₁ᵀ, …, g_mᵀ)ᵀ`
/// over all edges in order: every edge contributes its length and its unit
/// bearing regardless of the constraint kind it carries.
pub fn measurement_map(p: &Configuration, g: &TwoLayerGraph) -> Result<DVector<f64>, GraphError> {
    g.check_configuration(p)?;
    let m = g.edge_count();
    let mut f = DVector::zeros(3 * m);
    for (l, e) in g.edges().iter().enumerate() {
        let geo = edge_geometry(p, e)?;
        f[l] = geo.length;
        f[m + 2 * l] = geo.bearing.x;
        f[m + 2 * l + 1] = geo.bearing.y;
    }
    Ok(f)
}

/// Raw per-edge control-law errors at `p`, in edge order.
pub fn edge_errors(p: &Configuration, g: &TwoLayerGraph) -> Result<Vec<EdgeError>, GraphError> {
    g.check_configuration(p)?;
    g.edges()
        .iter()
        .map(|e| {
            let geo = edge_geometry(p, e)?;
            Ok(match e.desired {
                DesiredValue::Distance(d) => EdgeError::Distance(geo.length * geo.length - d * d),
                DesiredValue::Bearing(gs) => EdgeError::Bearing(geo.bearing - gs),
            })
        })
        .collect()
}

/// Geometric per-edge error norms at `p`, in edge order: `|‖z‖ − d*|` for
/// distance edges and `‖g − g*‖` for bearing edges. These are the quantities
/// activity verdicts and convergence checks are stated in.
pub fn geometric_error_norms(
    p: &Configuration,
    g: &TwoLayerGraph,
) -> Result<Vec<f64>, GraphError> {
    g.check_configuration(p)?;
    g.edges()
        .iter()
        .map(|e| {
            let geo = edge_geometry(p, e)?;
            Ok(match e.desired {
                DesiredValue::Distance(d) => (geo.length - d).abs(),
                DesiredValue::Bearing(gs) => (geo.bearing - gs).norm(),
            })
        })
        .collect()
}

/// Geometric error norm of a single edge at `p`.
pub fn edge_error_norm(p: &Configuration, e: &DirectedEdge) -> Result<f64, GraphError> {
    let geo = edge_geometry(p, e)?;
    Ok(match e.desired {
        DesiredValue::Distance(d) => (geo.length - d).abs(),
        DesiredValue::Bearing(gs) => (geo.bearing - gs).norm(),
    })
}

/// Angle of a planar vector in `(-π, π]`, re-exported at the graph level for
/// edge-angle computations.
pub fn angle_of(v: &Vector2<f64>) -> f64 {
    linalg::angle_of(v)
}
