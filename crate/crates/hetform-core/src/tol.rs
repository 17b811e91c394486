//! Central numeric tolerances.
//!
//! Every threshold used by verdict-producing code lives here so that the
//! pass/fail semantics of the library are auditable in one place. Search
//! internals are allowed looser tolerances than the verdicts they feed.

/// An edge constraint counts as *active* for verdict purposes when its
/// geometric error (`|‖z‖ − d*|` or `‖g − g*‖`) is at most this.
pub const ACTIVITY_VERDICT: f64 = 1e-6;

/// Looser activity threshold used inside fitting/consistency searches, where
/// candidate positions come from coarse grids before polishing.
pub const ACTIVITY_SEARCH: f64 = 1e-3;

/// A relaxed (fitting) configuration that still violates some constraint by
/// more than this counts as a consistency counterexample.
pub const CONSISTENCY_VIOLATION: f64 = 1e-3;

/// Relative singular-value cutoff for numeric rank decisions:
/// `σ_i` counts toward the rank iff `σ_i > RANK_REL · σ_max`.
pub const RANK_REL: f64 = 1e-8;

/// Max-norm residual below which a configuration counts as an equilibrium of
/// the assembled control law.
pub const EQUILIBRIUM_RESIDUAL: f64 = 1e-8;

/// Two agents closer than this are treated as coincident; bearings are
/// undefined there.
pub const COINCIDENCE: f64 = 1e-9;

/// `|sin(α₁ − α₂)|` at or below this makes a pair of projection directions
/// effectively collinear (singular sums/inverses).
pub const COLLINEARITY: f64 = 1e-9;

/// Step for central-difference Jacobians.
pub const FD_STEP: f64 = 1e-6;

/// Relative width at which gain-bound bisection stops.
pub const BISECT_REL: f64 = 1e-12;

/// A desired bearing supplied with norm within this of 1 is normalized;
/// anything further off is rejected as malformed input.
pub const BEARING_NORM_SLACK: f64 = 1e-6;

/// Default Monte-Carlo consistency trials.
pub const CONSISTENCY_TRIALS_DEFAULT: usize = 200;

/// Default perturbation radius factor: `eps = 0.2 · (min desired distance)`.
pub const CONSISTENCY_EPS_FACTOR: f64 = 0.2;

/// A relaxed configuration falsifies consistency only while every agent
/// stays within this multiple of the perturbation radius of the
/// equilibrium. Consistency quantifies over *nearby* fitting
/// configurations; a relaxation that wanders further is inconclusive, not
/// a counterexample.
pub const CONSISTENCY_DRIFT_FACTOR: f64 = 3.0;

/// Simulation defaults.
pub const SIM_DT_DEFAULT: f64 = 1e-3;
pub const SIM_TMAX_DEFAULT: f64 = 60.0;
pub const SIM_CONVERGENCE_TOL_DEFAULT: f64 = 1e-3;
pub const SIM_RECORD_EVERY_DEFAULT: usize = 10;

/// Error samples below `10 · machine epsilon` are excluded from decay-rate
/// fits; they sit on the floating-point floor and carry no rate information.
pub const DECAY_FLOOR: f64 = 10.0 * f64::EPSILON;
