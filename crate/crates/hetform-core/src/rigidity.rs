//! Infinitesimal rigidity analysis of distance/bearing frameworks.
//!
//! Two Jacobians matter here:
//!
//! * [`rigidity_matrix`] — the full `3m × 2n` Jacobian of the stacked
//!   measurement map (every edge contributes its length row and its two
//!   bearing rows, regardless of the constraint kind it carries);
//! * [`constraint_jacobian`] — the Jacobian of the *imposed* constraints
//!   only: one length row per distance edge, two bearing rows per bearing
//!   edge, interleaved in edge order.
//!
//! Rank and kernel verdicts are stated on the constraint Jacobian: a
//! framework is (infinitesimally) rigid when the constraints pin everything
//! but the two rigid translations, i.e. rank `2n − 2` with the kernel equal
//! to the translation span. Bearing constraints are frame-fixed, so global
//! rotations are *not* automatically in the kernel — rigid frameworks here
//! have exactly a 2-dimensional kernel, unlike pure-distance rigidity.

use nalgebra::{DMatrix, DVector};

use crate::graph::{edge_geometry, Configuration, DesiredValue, GraphError, TwoLayerGraph};
use crate::{linalg, tol};

/// Full `3m × 2n` Jacobian of the measurement map: for edge `ℓ` with unit
/// bearing `g`, the length row is `[… −gᵀ … +gᵀ …]` and the bearing row pair
/// is `±(I − g gᵀ)/‖z‖` at tail/head. Length rows come first (all `m` of
/// them), then the `m` bearing row pairs, matching the measurement layout.
pub fn rigidity_matrix(p: &Configuration, g: &TwoLayerGraph) -> Result<DMatrix<f64>, GraphError> {
    g.check_configuration(p)?;
    let (n, m) = (g.agent_count(), g.edge_count());
    let mut r = DMatrix::zeros(3 * m, 2 * n);
    for (l, e) in g.edges().iter().enumerate() {
        let geo = edge_geometry(p, e)?;
        let gb = geo.bearing;
        for (c, s) in [(2 * e.tail, -1.0), (2 * e.head, 1.0)] {
            r[(l, c)] = s * gb.x;
            r[(l, c + 1)] = s * gb.y;
        }
        let perp = linalg::perp_of_unit(&gb) / geo.length;
        for row in 0..2 {
            for col in 0..2 {
                r[(m + 2 * l + row, 2 * e.tail + col)] = -perp[(row, col)];
                r[(m + 2 * l + row, 2 * e.head + col)] = perp[(row, col)];
            }
        }
    }
    Ok(r)
}

/// Jacobian of the imposed constraints only, rows interleaved in edge order:
/// a distance edge contributes its length row, a bearing edge its two
/// bearing rows.
pub fn constraint_jacobian(
    p: &Configuration,
    g: &TwoLayerGraph,
) -> Result<DMatrix<f64>, GraphError> {
    g.check_configuration(p)?;
    let n = g.agent_count();
    let rows: usize = g
        .edges()
        .iter()
        .map(|e| match e.desired {
            DesiredValue::Distance(_) => 1,
            DesiredValue::Bearing(_) => 2,
        })
        .sum();
    let mut jac = DMatrix::zeros(rows, 2 * n);
    let mut next_row = 0;
    for e in g.edges() {
        let geo = edge_geometry(p, e)?;
        let gb = geo.bearing;
        match e.desired {
            DesiredValue::Distance(_) => {
                for (c, s) in [(2 * e.tail, -1.0), (2 * e.head, 1.0)] {
                    jac[(next_row, c)] = s * gb.x;
                    jac[(next_row, c + 1)] = s * gb.y;
                }
                next_row += 1;
            }
            DesiredValue::Bearing(_) => {
                let perp = linalg::perp_of_unit(&gb) / geo.length;
                for row in 0..2 {
                    for col in 0..2 {
                        jac[(next_row + row, 2 * e.tail + col)] = -perp[(row, col)];
                        jac[(next_row + row, 2 * e.head + col)] = perp[(row, col)];
                    }
                }
                next_row += 2;
            }
        }
    }
    Ok(jac)
}

/// Rigidity verdict for a framework.
#[derive(Debug, Clone)]
pub struct RigidityReport {
    /// Numeric rank of the constraint Jacobian.
    pub rank: usize,
    /// Rank required for rigidity: `2n − 2`.
    pub required_rank: usize,
    /// Orthonormal kernel basis of the constraint Jacobian, ordered by
    /// descending `|first component|` (ties by second).
    pub kernel: Vec<DVector<f64>>,
    /// Rank is `2n − 2` and the kernel is exactly the translation span.
    pub is_rigid: bool,
    /// Rigid with the minimum possible edge count `2n − 2`.
    pub is_minimal: bool,
}

/// Rank/kernel analysis of the constraint Jacobian at `p`.
///
/// Rank counts singular values above `1e-8 · σ_max`. Minimality compares the
/// *edge* count against `2n − 2`: each edge imposes exactly one independent
/// scalar constraint — a distance row, or a bearing row pair whose `P⊥/‖z‖`
/// block has rank 1 — so the constraint rank never exceeds the edge count
/// and `2n − 2` edges is the fewest that can pin everything but the
/// translations.
pub fn analyze_rigidity(
    p: &Configuration,
    g: &TwoLayerGraph,
) -> Result<RigidityReport, GraphError> {
    let jac = constraint_jacobian(p, g)?;
    let n = g.agent_count();
    let required_rank = 2 * n - 2;
    let (rank, kernel) = linalg::rank_and_kernel(&jac, tol::RANK_REL);
    let kernel_is_translations = kernel
        .iter()
        .all(|v| linalg::distance_to_translation_span(v) < 1e-8);
    let is_rigid = rank == required_rank && kernel_is_translations;
    let is_minimal = is_rigid && g.edge_count() == required_rank;
    Ok(RigidityReport {
        rank,
        required_rank,
        kernel,
        is_rigid,
        is_minimal,
    })
}
