//! Persistence analysis: activity, fitting positions, degree-of-freedom
//! accounting, and a Monte-Carlo consistency check.
//!
//! A directed constraint is *active* when its geometric error is within
//! tolerance. An agent sits at a *fitting* position when no relocation
//! within its local search ball strictly increases the number of its active
//! outgoing constraints. A constraint set is *consistent* at an equilibrium
//! when every nearby configuration in which all agents sit at fitting
//! positions still satisfies all constraints; the check here attempts to
//! falsify that property by randomized perturbation followed by coordinate
//! relaxation, so a `false` verdict carries a concrete witness while a
//! `true` verdict is evidence, not proof.
//!
//! Persistence itself = infinitesimal rigidity of the constraint set plus
//! consistency of its directed wiring.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{
    geometric_error_norms, AgentId, Configuration, DesiredValue, DirectedEdge, GraphError,
    TwoLayerGraph,
};
use crate::rigidity::{analyze_rigidity, RigidityReport};
use crate::tol;

/// Errors from persistence analysis.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PersistenceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(
        "agent {agent} has out-degree {out_degree} in a minimally-constrained network; \
         no agent can track more than 2 constraints with 2 planar degrees of freedom"
    )]
    OverConstrained { agent: AgentId, out_degree: usize },
    #[error(
        "the reference configuration is not an equilibrium: max constraint error {max_error:e} \
         exceeds {tol:e}"
    )]
    NotAnEquilibrium { max_error: f64, tol: f64 },
}

/// Per-edge activity flags at tolerance `tol`: `|‖z‖ − d*| ≤ tol` for
/// distance edges, `‖g − g*‖ ≤ tol` for bearing edges.
pub fn active_edges(
    p: &Configuration,
    g: &TwoLayerGraph,
    tol: f64,
) -> Result<Vec<bool>, GraphError> {
    Ok(geometric_error_norms(p, g)?
        .into_iter()
        .map(|e| e <= tol)
        .collect())
}

// ── Fitting-position search ──────────────────────────────────────────────

/// Radius of agent `i`'s relocation ball: half the smallest desired distance
/// among its incident distance edges; falling back to half the smallest
/// desired distance in the whole network, then to 1.
fn search_radius(g: &TwoLayerGraph, i: AgentId) -> f64 {
    let incident = g
        .edges()
        .iter()
        .filter(|e| e.tail == i || e.head == i)
        .filter_map(|e| match e.desired {
            DesiredValue::Distance(d) => Some(d),
            DesiredValue::Bearing(_) => None,
        })
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
    let base = incident.or_else(|| g.min_desired_distance()).unwrap_or(2.0);
    0.5 * base
}

/// Geometric violation of edge `e` with agent `i` relocated to `x` (other
/// agents at their positions in `p`). Coincident endpoints report the
/// worst-case bearing mismatch instead of failing, so descent can escape.
fn violation_at(p: &Configuration, e: &DirectedEdge, i: AgentId, x: Vector2<f64>) -> f64 {
    let pt = if e.tail == i { x } else { p[e.tail] };
    let ph = if e.head == i { x } else { p[e.head] };
    let z = ph - pt;
    let len = z.norm();
    match e.desired {
        DesiredValue::Distance(d) => (len - d).abs(),
        DesiredValue::Bearing(gs) => {
            if len < tol::COINCIDENCE {
                2.0
            } else {
                (z / len - gs).norm()
            }
        }
    }
}

/// Deterministic Nelder–Mead descent on a planar objective.
fn nelder_mead_2d<F>(f: F, start: Vector2<f64>, scale: f64, iters: usize) -> Vector2<f64>
where
    F: Fn(Vector2<f64>) -> f64,
{
    let mut simplex = [
        start,
        start + Vector2::new(scale, 0.0),
        start + Vector2::new(0.0, scale),
    ];
    let mut values = simplex.map(&f);
    for _ in 0..iters {
        // Order best → worst.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite objective"));
        let (b, m, w) = (order[0], order[1], order[2]);
        if (values[w] - values[b]).abs() < 1e-14 * (1.0 + values[b].abs()) {
            break;
        }
        let centroid = (simplex[b] + simplex[m]) / 2.0;
        let reflected = centroid + (centroid - simplex[w]);
        let fr = f(reflected);
        if fr < values[b] {
            let expanded = centroid + (reflected - centroid) * 2.0;
            let fe = f(expanded);
            if fe < fr {
                simplex[w] = expanded;
                values[w] = fe;
            } else {
                simplex[w] = reflected;
                values[w] = fr;
            }
        } else if fr < values[m] {
            simplex[w] = reflected;
            values[w] = fr;
        } else {
            let contracted = centroid + (simplex[w] - centroid) * 0.5;
            let fc = f(contracted);
            if fc < values[w] {
                simplex[w] = contracted;
                values[w] = fc;
            } else {
                // Shrink toward the best vertex.
                for v in [m, w] {
                    simplex[v] = simplex[b] + (simplex[v] - simplex[b]) * 0.5;
                    values[v] = f(simplex[v]);
                }
            }
        }
    }
    let mut best = 0;
    for v in 1..3 {
        if values[v] < values[best] {
            best = v;
        }
    }
    simplex[best]
}

/// Best fitting relocation for agent `i`: the position (within its search
/// ball around the current one) that maximizes the number of active outgoing
/// edges, breaking ties by smallest displacement.
///
/// Every nonempty subset of the outgoing edges is tried as a target active
/// set. For each subset a 41×41 grid over the ball proposes the start with
/// the smallest violation (mildly displacement-regularized so ties resolve
/// toward the nearest manifold point), and a heavily-weighted Nelder–Mead
/// descent polishes from there; the polished position is re-scored against
/// *all* outgoing edges at the strict activity tolerance. The current
/// position always competes as the zero-displacement baseline, so an agent
/// whose constraints are already satisfiable in place never wanders.
fn relax_agent(p: &Configuration, g: &TwoLayerGraph, i: AgentId) -> Vector2<f64> {
    let x0 = p[i];
    let out: Vec<&DirectedEdge> = g.out_edges(i).map(|(_, e)| e).collect();
    let d = out.len();
    if d == 0 {
        return x0;
    }
    let count_at = |x: Vector2<f64>| -> usize {
        out.iter()
            .filter(|e| violation_at(p, e, i, x) <= tol::ACTIVITY_VERDICT)
            .count()
    };
    let current_count = count_at(x0);
    if current_count == d {
        return x0;
    }
    let r = search_radius(g, i);

    // Per-edge violations over the grid, computed once and reused for every
    // subset's start selection.
    let steps = 41;
    let mut grid: Vec<(Vector2<f64>, Vec<f64>)> = Vec::with_capacity(steps * steps);
    for gy in 0..steps {
        for gx in 0..steps {
            let dx = -r + 2.0 * r * (gx as f64) / ((steps - 1) as f64);
            let dy = -r + 2.0 * r * (gy as f64) / ((steps - 1) as f64);
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let x = x0 + Vector2::new(dx, dy);
            grid.push((x, out.iter().map(|e| violation_at(p, e, i, x)).collect()));
        }
    }

    // Candidate active sets as bitmasks over the outgoing edges. Out-degrees
    // beyond 16 are pathological; fall back to singletons plus the full set
    // there rather than enumerating 2^d subsets.
    let masks: Vec<u64> = if d <= 16 {
        (1..(1u64 << d)).collect()
    } else {
        (0..d).map(|b| 1u64 << b).chain([(1u64 << d) - 1]).collect()
    };

    let mut best = (current_count, 0.0_f64, x0);
    for mask in masks {
        let subset_score = |v: &[f64], x: Vector2<f64>| -> f64 {
            let s: f64 = (0..d)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| v[b] * v[b])
                .sum();
            1e4 * s + (x - x0).norm_squared()
        };
        let start = grid
            .iter()
            .min_by(|(xa, va), (xb, vb)| {
                subset_score(va, *xa)
                    .partial_cmp(&subset_score(vb, *xb))
                    .expect("finite violations")
            })
            .map(|(x, _)| *x)
            .unwrap_or(x0);
        let objective = |x: Vector2<f64>| -> f64 {
            let s: f64 = (0..d)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| {
                    let v = violation_at(p, out[b], i, x);
                    v * v
                })
                .sum();
            1e8 * s + (x - x0).norm_squared()
        };
        // Restarting with a fresh, smaller simplex un-sticks the descent
        // from the stiff valley along the constraint manifold, where the
        // mild displacement term would otherwise stall.
        let mut polished = start;
        let mut scale = (0.05 * r).max(1e-3);
        for _ in 0..3 {
            polished = nelder_mead_2d(objective, polished, scale, 400);
            scale *= 0.05;
        }
        let disp = (polished - x0).norm_squared();
        if disp > r * r {
            // Outside the search ball: not a legal relocation.
            continue;
        }
        let achieved = count_at(polished);
        if achieved > best.0 || (achieved == best.0 && disp < best.1) {
            best = (achieved, disp, polished);
        }
    }
    best.2
}

/// Whether agent `i` sits at a fitting position of `p`: no relocation within
/// its search ball strictly increases its number of active outgoing edges.
///
/// Activity is judged at the strict tolerance (`1e-6`) after polishing, so
/// a position only counts as an improvement when its constraint set is
/// actually satisfiable, not merely approachable.
pub fn is_fitting_position(
    p: &Configuration,
    g: &TwoLayerGraph,
    i: AgentId,
) -> Result<bool, GraphError> {
    g.check_configuration(p)?;
    let out: Vec<&DirectedEdge> = g.out_edges(i).map(|(_, e)| e).collect();
    if out.is_empty() {
        return Ok(true);
    }
    let count_at = |x: Vector2<f64>| -> usize {
        out.iter()
            .filter(|e| violation_at(p, e, i, x) <= tol::ACTIVITY_VERDICT)
            .count()
    };
    let relaxed = relax_agent(p, g, i);
    Ok(count_at(relaxed) <= count_at(p[i]))
}

// ── Degree-of-freedom ledger ─────────────────────────────────────────────

/// Degree-of-freedom accounting for a directed constraint network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofLedger {
    /// Per-agent free degrees: `max(0, 2 − out_degree)`.
    pub per_agent: Vec<usize>,
    /// Sum over agents; a persistent-compatible structure totals exactly 2.
    pub total: usize,
    /// Agents with at least one free degree, ascending id.
    pub leaders: Vec<AgentId>,
}

/// Leadership structure implied by a DOF ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderStructure {
    /// One agent with both free degrees.
    OneLeader(AgentId),
    /// Two agents with one free degree each.
    Coleaders(AgentId, AgentId),
}

impl DofLedger {
    /// The canonical leader structure, when the ledger has one: exactly one
    /// 2-DOF agent, or exactly two 1-DOF agents (and total 2 in both cases).
    pub fn leader_structure(&self) -> Option<LeaderStructure> {
        if self.total != 2 {
            return None;
        }
        match self.leaders.as_slice() {
            [l] if self.per_agent[*l] == 2 => Some(LeaderStructure::OneLeader(*l)),
            [a, b] if self.per_agent[*a] == 1 && self.per_agent[*b] == 1 => {
                Some(LeaderStructure::Coleaders(*a, *b))
            }
            _ => None,
        }
    }
}

/// Count free degrees per agent: each outgoing constraint consumes one of an
/// agent's two planar degrees of freedom.
///
/// # Errors
/// [`PersistenceError::OverConstrained`] when the network carries the
/// minimal constraint count (`m = 2n − 2`) yet some agent has out-degree
/// above 2 — such wiring wastes constraints on an agent that cannot track
/// them and leaves the ledger short elsewhere.
pub fn dof_ledger(g: &TwoLayerGraph) -> Result<DofLedger, PersistenceError> {
    let n = g.agent_count();
    let minimal_count = g.edge_count() == 2 * n - 2;
    let mut per_agent = Vec::with_capacity(n);
    for i in 0..n {
        let d = g.out_degree(i);
        if minimal_count && d > 2 {
            return Err(PersistenceError::OverConstrained {
                agent: i,
                out_degree: d,
            });
        }
        per_agent.push(2usize.saturating_sub(d));
    }
    let total = per_agent.iter().sum();
    let leaders = (0..n).filter(|&i| per_agent[i] > 0).collect();
    Ok(DofLedger {
        per_agent,
        total,
        leaders,
    })
}

// ── Consistency ──────────────────────────────────────────────────────────

/// Parameters of the randomized consistency falsification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyParams {
    /// Number of perturb-and-relax trials.
    pub trials: usize,
    /// Perturbation radius; `None` derives `0.2 · (min desired distance)`.
    pub eps: Option<f64>,
    /// RNG seed; trial `t` draws from an independent stream `t` of a
    /// ChaCha8 generator seeded with this, so verdicts are reproducible and
    /// a falsifying trial index is stable as `trials` grows.
    pub seed: u64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            trials: tol::CONSISTENCY_TRIALS_DEFAULT,
            eps: None,
            seed: 0,
        }
    }
}

/// Outcome of the consistency check, with the searched parameters embedded.
#[derive(Debug, Clone)]
pub struct ConsistencyVerdict {
    /// `false` means a concrete counterexample was found; `true` means the
    /// falsification attempt failed (evidence of consistency, not proof).
    pub consistent: bool,
    /// A relaxed all-fitting configuration violating some constraint, when
    /// one was found.
    pub witness: Option<Configuration>,
    /// Largest constraint violation over all relaxed configurations seen.
    pub max_violation: f64,
    /// Trial index that produced the witness.
    pub witness_trial: Option<usize>,
    /// Trials whose relaxation never settled into a nearby fitting
    /// configuration (pursuit drift or sweep-budget exhaustion). Such trials
    /// can neither falsify nor support consistency.
    pub inconclusive_trials: usize,
    pub trials: usize,
    pub eps: f64,
    pub seed: u64,
}

/// Sweep order for coordinate relaxation: ascending free DOF (most
/// constrained agents first), ties by ascending id.
fn sweep_order(g: &TwoLayerGraph) -> Vec<AgentId> {
    let n = g.agent_count();
    let mut order: Vec<AgentId> = (0..n).collect();
    order.sort_by_key(|&i| (2usize.saturating_sub(g.out_degree(i)), i));
    order
}

/// Relax every agent to a fitting position by coordinate descent in sweep
/// order, iterating sweeps to a fixed point. Returns the relaxed
/// configuration and whether the sweep *settled*: reached a fixed point (so
/// every agent is at a fitting position) while every agent stayed within
/// `max_drift` of its position in `anchor`.
///
/// Directed constraint graphs with cycles can turn the sweep into a pursuit
/// that translates the whole formation indefinitely — or contracts too
/// slowly to ever finish — instead of settling; such runs say nothing about
/// consistency, which quantifies over fitting configurations near the
/// equilibrium only. Three abort conditions classify them as unsettled:
/// drifting beyond `max_drift`, failing to halve the per-sweep movement
/// every 16 sweeps (stall), and exhausting the sweep budget.
fn relax_to_fitting(
    p: &Configuration,
    g: &TwoLayerGraph,
    anchor: &Configuration,
    max_drift: f64,
) -> (Configuration, bool) {
    let order = sweep_order(g);
    let mut q = p.clone();
    let mut history: Vec<f64> = Vec::with_capacity(64);
    for sweep in 0..64 {
        let mut moved = 0.0_f64;
        for &i in &order {
            let x = relax_agent(&q, g, i);
            moved = moved.max((x - q[i]).norm());
            q[i] = x;
        }
        let drifted = (0..g.agent_count()).any(|i| (q[i] - anchor[i]).norm() > max_drift);
        if drifted {
            return (q, false);
        }
        if moved < 1e-6 {
            return (q, true);
        }
        history.push(moved);
        if sweep >= 16 && moved > 0.5 * history[sweep - 16] {
            return (q, false);
        }
    }
    (q, false)
}

/// Attempt to falsify consistency of the constraint set at the equilibrium
/// `p_star`: perturb every agent uniformly in a disc of radius `eps`, relax
/// all agents to fitting positions, and look for a relaxed configuration
/// that still violates some constraint beyond tolerance. The first
/// falsifying trial (by index) supplies the witness.
///
/// A trial only counts when its relaxation settles into a fitting
/// configuration with every agent within
/// [`tol::CONSISTENCY_DRIFT_FACTOR`]`·eps` of the equilibrium — consistency
/// is a statement about nearby fitting configurations, so a sweep that
/// drifts away (directed cycles can pursue each other across the plane) or
/// exhausts its budget is recorded as inconclusive instead.
///
/// # Errors
/// [`PersistenceError::NotAnEquilibrium`] if some constraint is inactive at
/// `p_star` (tolerance `1e-6`) — consistency is a property of constraint
/// sets *at* an equilibrium.
pub fn check_consistency(
    p_star: &Configuration,
    g: &TwoLayerGraph,
    params: ConsistencyParams,
) -> Result<ConsistencyVerdict, PersistenceError> {
    let errs = geometric_error_norms(p_star, g)?;
    let max_error = errs.iter().cloned().fold(0.0, f64::max);
    if max_error > tol::ACTIVITY_VERDICT {
        return Err(PersistenceError::NotAnEquilibrium {
            max_error,
            tol: tol::ACTIVITY_VERDICT,
        });
    }
    let eps = params.eps.unwrap_or_else(|| {
        tol::CONSISTENCY_EPS_FACTOR * g.min_desired_distance().unwrap_or(1.0)
    });
    let max_drift = tol::CONSISTENCY_DRIFT_FACTOR * eps;

    let mut max_violation = 0.0_f64;
    let mut inconclusive = 0usize;
    for trial in 0..params.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(trial as u64);
        let mut q = p_star.clone();
        for i in 0..g.agent_count() {
            // Uniform draw in the disc of radius eps.
            let radius = eps * rng.gen::<f64>().sqrt();
            let angle = std::f64::consts::TAU * rng.gen::<f64>();
            q[i] += Vector2::new(radius * angle.cos(), radius * angle.sin());
        }
        let (relaxed, settled) = relax_to_fitting(&q, g, p_star, max_drift);
        if !settled {
            inconclusive += 1;
            continue;
        }
        let violation = geometric_error_norms(&relaxed, g)
            .map(|v| v.into_iter().fold(0.0, f64::max))
            .unwrap_or(f64::INFINITY);
        max_violation = max_violation.max(violation);
        if violation > tol::CONSISTENCY_VIOLATION {
            return Ok(ConsistencyVerdict {
                consistent: false,
                witness: Some(relaxed),
                max_violation,
                witness_trial: Some(trial),
                inconclusive_trials: inconclusive,
                trials: params.trials,
                eps,
                seed: params.seed,
            });
        }
    }
    Ok(ConsistencyVerdict {
        consistent: true,
        witness: None,
        max_violation,
        witness_trial: None,
        inconclusive_trials: inconclusive,
        trials: params.trials,
        eps,
        seed: params.seed,
    })
}

// ── Persistence ──────────────────────────────────────────────────────────

/// Combined persistence verdict.
#[derive(Debug, Clone)]
pub struct PersistenceReport {
    pub rigidity: RigidityReport,
    pub consistency: ConsistencyVerdict,
    /// Rigid and consistent.
    pub persistent: bool,
}

/// Persistence = infinitesimal rigidity of the constraint set at `p_star`
/// plus consistency of the directed wiring (checked with default
/// falsification parameters).
pub fn check_persistence(
    p_star: &Configuration,
    g: &TwoLayerGraph,
) -> Result<PersistenceReport, PersistenceError> {
    check_persistence_with(p_star, g, ConsistencyParams::default())
}

/// As [`check_persistence`], with explicit falsification parameters.
pub fn check_persistence_with(
    p_star: &Configuration,
    g: &TwoLayerGraph,
    params: ConsistencyParams,
) -> Result<PersistenceReport, PersistenceError> {
    let rigidity = analyze_rigidity(p_star, g)?;
    let consistency = check_consistency(p_star, g, params)?;
    let persistent = rigidity.is_rigid && consistency.consistent;
    Ok(PersistenceReport {
        rigidity,
        consistency,
        persistent,
    })
}
