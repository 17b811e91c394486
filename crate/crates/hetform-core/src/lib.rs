//! Planar formation networks with heterogeneous distance/bearing sensing:
//! graph model, rigidity and persistence analysis, decentralized control
//! laws, merge planning with stability certificates, and trajectory
//! simulation.

pub mod control;
pub mod graph;
pub mod linalg;
pub mod merge;
pub mod persistence;
pub mod rigidity;
pub mod sim;
pub mod stability;
pub mod tol;

pub use control::{assemble_control, bearing_control_term, distance_control_term, ControlError};
pub use graph::{
    edge_error_norm, edge_errors, edge_geometry, geometric_error_norms, measurement_map, AgentId,
    Configuration, DesiredValue, DirectedEdge, EdgeError, EdgeGeometry, GraphError, SensingKind,
    TwoLayerGraph,
};
pub use merge::{
    apply_merge, certify_merge, classify_merge, merge_geometry, plan_merge, EdgeDirection,
    MergeCertificate, MergeError, MergePlan, MergeRequest, GAIN_HEADROOM,
};
pub use persistence::{
    active_edges, check_consistency, check_persistence, check_persistence_with, dof_ledger,
    is_fitting_position, ConsistencyParams, ConsistencyVerdict, DofLedger, LeaderStructure,
    PersistenceError, PersistenceReport,
};
pub use rigidity::{analyze_rigidity, constraint_jacobian, rigidity_matrix, RigidityReport};
pub use sim::{
    seeded_perturbation, simulate, verify_convergence, write_errors_csv, write_positions_csv,
    ConvergenceReport, SimError, SimParams, Trajectory,
};
pub use stability::{
    gain_bound_one_leader, gain_bound_two_coleaders, gain_bound_unilateral, linearize_merge,
    numeric_edge_linearization, projection_inverse, projection_sum, projection_sum_eigenvalues,
    stability_criterion, GainBound, GainBoundDetails, LinearizedMergeSystem, MergeCase,
    MergeGeometry, ProjectionTerm, StabilityError,
};
