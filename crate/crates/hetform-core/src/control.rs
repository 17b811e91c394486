//! Decentralized control laws for the two constraint kinds, and their
//! assembly into a formation-wide input field.
//!
//! Each agent steers only along its own outgoing (measured) edges:
//!
//! * distance edge with error `e = ‖z‖² − d*²`:
//!   `u += k · e · z / (2 d*²)` — the negative gradient of the edge
//!   potential `k e² / (8 d*²)` with respect to the measuring agent;
//! * bearing edge with error `g − g*`:
//!   `u += k · ‖z*‖ · (g − g*)` — the desired length scale `‖z*‖` gives
//!   bearing errors force units comparable to the distance law, and cancels
//!   from the equilibrium linearization.
//!
//! Both laws depend only on relative positions, so the assembled field is
//! exactly invariant under rigid translations of the whole configuration.

use nalgebra::Vector2;
use thiserror::Error;

use crate::graph::{
    edge_geometry, Configuration, DesiredValue, GraphError, TwoLayerGraph,
};

/// Errors from control assembly.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(
        "bearing edge {edge_index} has no desired length scale; supply a desired configuration"
    )]
    MissingBearingScale { edge_index: usize },
}

/// Distance-law term for one edge: `k (‖z‖² − d*²) z / (2 d*²)`.
pub fn distance_control_term(z: &Vector2<f64>, d_star: f64, k: f64) -> Vector2<f64> {
    let e = z.norm_squared() - d_star * d_star;
    z * (k * e / (2.0 * d_star * d_star))
}

/// Bearing-law term for one edge: `k ‖z*‖ (z/‖z‖ − g*)`.
///
/// # Errors
/// A coincidence error when `‖z‖ < 1e-9` (the bearing is undefined there);
/// the error's agent ids are placeholders since this function sees only the
/// relative vector. The term norm is bounded by `2 k ‖z*‖` since both `g`
/// and `g*` are unit vectors.
pub fn bearing_control_term(
    z: &Vector2<f64>,
    g_star: &Vector2<f64>,
    z_star_norm: f64,
    k: f64,
) -> Result<Vector2<f64>, GraphError> {
    let len = z.norm();
    if len < crate::tol::COINCIDENCE {
        return Err(GraphError::CoincidentAgents { tail: 0, head: 0 });
    }
    Ok((z / len - g_star) * (k * z_star_norm))
}

/// Assemble the full control field: one input per agent, each the sum of its
/// outgoing edge terms. Agents without outgoing edges get zero input.
///
/// # Errors
/// * [`ControlError::MissingBearingScale`] if a bearing edge carries no
///   desired length scale;
/// * coincidence errors from undefined bearings.
pub fn assemble_control(
    p: &Configuration,
    g: &TwoLayerGraph,
) -> Result<Vec<Vector2<f64>>, ControlError> {
    g.check_configuration(p)?;
    let mut u = vec![Vector2::zeros(); g.agent_count()];
    for (idx, e) in g.edges().iter().enumerate() {
        let geo = edge_geometry(p, e).map_err(|err| match err {
            GraphError::CoincidentAgents { .. } => GraphError::CoincidentAgents {
                tail: e.tail,
                head: e.head,
            },
            other => other,
        })?;
        let term = match e.desired {
            DesiredValue::Distance(d) => distance_control_term(&geo.z, d, e.gain),
            DesiredValue::Bearing(gs) => {
                let scale = e
                    .bearing_scale
                    .ok_or(ControlError::MissingBearingScale { edge_index: idx })?;
                (geo.bearing - gs) * (e.gain * scale)
            }
        };
        u[e.tail] += term;
    }
    Ok(u)
}

/// Max-norm of an assembled control field.
pub fn control_norm_inf(u: &[Vector2<f64>]) -> f64 {
    u.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DirectedEdge;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn pair_graph(k_dist: f64, k_bear: f64) -> TwoLayerGraph {
        TwoLayerGraph::new(
            2,
            vec![
                DirectedEdge::distance(0, 1, 5.0, k_dist),
                DirectedEdge::bearing_scaled(1, 0, Vector2::new(1.0, 0.0), k_bear, 5.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn pair_example_inputs() {
        // Agents at (0,0) and (10,0): the distance agent is pulled toward
        // its target along +x with magnitude k·75·10/(2·25) = 15; the bearing
        // agent sees bearing (−1,0) against desired (+1,0) and gets
        // k·5·(−2,0) = (−10,0).
        let g = pair_graph(1.0, 1.0);
        let p = Configuration::new(vec![Vector2::new(0.0, 0.0), Vector2::new(10.0, 0.0)]);
        let u = assemble_control(&p, &g).unwrap();
        assert_relative_eq!(u[0], Vector2::new(15.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(u[1], Vector2::new(-10.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn distance_term_is_negative_gradient_of_edge_potential() {
        // V(p_tail) = k e² / (8 d*²) with e = ‖p_head − p_tail‖² − d*².
        let k = 2.3;
        let d = 3.1;
        let head = Vector2::new(0.7, -1.9);
        let tail0 = DVector::from_vec(vec![2.0, 1.5]);
        let potential = |x: &DVector<f64>| {
            let z = head - Vector2::new(x[0], x[1]);
            let e = z.norm_squared() - d * d;
            DVector::from_vec(vec![k * e * e / (8.0 * d * d)])
        };
        let grad = crate::linalg::central_difference_jacobian(potential, &tail0, 1e-6);
        let z = head - Vector2::new(tail0[0], tail0[1]);
        let term = distance_control_term(&z, d, k);
        assert_relative_eq!(term.x, -grad[(0, 0)], epsilon = 1e-7);
        assert_relative_eq!(term.y, -grad[(0, 1)], epsilon = 1e-7);
    }

    #[test]
    fn bearing_term_is_bounded() {
        let g_star = Vector2::new(0.0, 1.0);
        for angle in 0..64 {
            let a = angle as f64 * std::f64::consts::TAU / 64.0;
            let z = Vector2::new(a.cos(), a.sin()) * 7.3;
            let term = bearing_control_term(&z, &g_star, 4.0, 1.7).unwrap();
            assert!(term.norm() <= 2.0 * 1.7 * 4.0 + 1e-12);
        }
    }

    #[test]
    fn zero_at_zero_error() {
        let g = pair_graph(3.0, 3.0);
        // Edge 0 measures p₁ − p₀ = (−5, 0) at its desired length 5; edge 1
        // measures p₀ − p₁ = (5, 0) at its desired bearing (1, 0).
        let p = Configuration::new(vec![Vector2::new(5.0, 0.0), Vector2::new(0.0, 0.0)]);
        let u = assemble_control(&p, &g).unwrap();
        assert!(control_norm_inf(&u) < 1e-14);
    }

    #[test]
    fn translation_invariance_and_locality() {
        let g = TwoLayerGraph::new(
            3,
            vec![
                DirectedEdge::distance(0, 1, 2.0, 1.4),
                DirectedEdge::bearing_scaled(1, 0, Vector2::new(0.0, 1.0), 2.2, 2.0),
            ],
        )
        .unwrap();
        let p = Configuration::new(vec![
            Vector2::new(0.1, 0.2),
            Vector2::new(1.7, -0.4),
            Vector2::new(-3.0, 5.0),
        ]);
        let u = assemble_control(&p, &g).unwrap();
        let shifted = p.translated(Vector2::new(11.0, -4.5));
        let us = assemble_control(&shifted, &g).unwrap();
        for (a, b) in u.iter().zip(&us) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        // Agent 2 measures nothing: zero input; and moving it changes no
        // other agent's input (locality).
        assert_relative_eq!(u[2], Vector2::zeros());
        let mut moved = p.clone();
        moved[2] += Vector2::new(100.0, 3.0);
        let um = assemble_control(&moved, &g).unwrap();
        assert_relative_eq!(u[0], um[0], epsilon = 1e-14);
        assert_relative_eq!(u[1], um[1], epsilon = 1e-14);
    }

    #[test]
    fn missing_bearing_scale_is_reported() {
        let g = TwoLayerGraph::new(
            2,
            vec![DirectedEdge::bearing(0, 1, Vector2::new(1.0, 0.0), 1.0)],
        )
        .unwrap();
        let p = Configuration::new(vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0)]);
        assert!(matches!(
            assemble_control(&p, &g),
            Err(ControlError::MissingBearingScale { edge_index: 0 })
        ));
    }
}
