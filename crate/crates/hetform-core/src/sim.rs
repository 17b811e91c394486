//! Fixed-step integration of the closed-loop single-integrator dynamics
//! `ṗ = u(p)`, with convergence detection and error traces.
//!
//! The integrator is classic fourth-order Runge–Kutta with a fixed step.
//! Every stage evaluation re-assembles the decentralized control field, so
//! a bearing becoming undefined mid-step (two agents coinciding) aborts
//! the run with the offending edge and time rather than propagating NaNs.
//! Traces record geometric per-edge error norms (`|‖z‖ − d*|`, `‖g − g*‖`)
//! — the quantities convergence verdicts are stated in.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{assemble_control, ControlError};
use crate::graph::{geometric_error_norms, AgentId, Configuration, GraphError, TwoLayerGraph};
use crate::tol;

/// Errors from a simulation run.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("simulation parameters invalid: {what}")]
    InvalidParams { what: &'static str },
    #[error("agents {tail} and {head} coincided at t = {t}; the bearing is undefined there")]
    CoincidenceDuringSim { t: f64, tail: AgentId, head: AgentId },
    #[error("state became non-finite at t = {t}; the closed loop diverged")]
    NonFinite { t: f64 },
}

/// Fixed-step integration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Step size (s).
    pub dt: f64,
    /// Horizon (s); rounded to a whole number of steps.
    pub t_max: f64,
    /// Convergence threshold on the max geometric edge error.
    pub convergence_tol: f64,
    /// Record every this-many steps (the initial and final states are
    /// always recorded).
    pub record_every: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: tol::SIM_DT_DEFAULT,
            t_max: tol::SIM_TMAX_DEFAULT,
            convergence_tol: tol::SIM_CONVERGENCE_TOL_DEFAULT,
            record_every: tol::SIM_RECORD_EVERY_DEFAULT,
        }
    }
}

impl SimParams {
    /// Check the parameter invariants (positive finite step, a horizon of
    /// at least one step, positive tolerance, nonzero record stride).
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidParams {
                what: "dt must be positive and finite",
            });
        }
        if !(self.t_max >= self.dt && self.t_max.is_finite()) {
            return Err(SimError::InvalidParams {
                what: "t_max must be at least one step",
            });
        }
        if !(self.convergence_tol > 0.0) {
            return Err(SimError::InvalidParams {
                what: "convergence_tol must be positive",
            });
        }
        if self.record_every == 0 {
            return Err(SimError::InvalidParams {
                what: "record_every must be at least 1",
            });
        }
        Ok(())
    }
}

/// A recorded closed-loop run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Sample times, starting at 0.
    pub times: Vec<f64>,
    /// Configuration at each sample.
    pub positions: Vec<Configuration>,
    /// Geometric per-edge error norms at each sample, in edge order.
    pub errors: Vec<Vec<f64>>,
    /// Earliest recorded time from which the max error stays at or below
    /// the tolerance through the end of the run.
    pub converged_at: Option<f64>,
    /// Least-squares slope of `ln(max error)` over the later half of the
    /// samples above the error floor (a converged run's terminal plateau
    /// is excluded as floor); `None` when too few samples carry rate
    /// information (e.g. a run that starts at equilibrium).
    pub decay_rate: Option<f64>,
    /// The tolerance `converged_at` was computed against.
    pub tol: f64,
}

impl Trajectory {
    /// Max geometric edge error at each sample.
    pub fn max_errors(&self) -> Vec<f64> {
        self.errors
            .iter()
            .map(|e| e.iter().cloned().fold(0.0, f64::max))
            .collect()
    }

    /// The final recorded configuration.
    pub fn final_position(&self) -> &Configuration {
        self.positions
            .last()
            .expect("a trajectory records at least its initial sample")
    }
}

/// Convergence verdict for a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    /// The max error reached the tolerance and stayed there.
    pub converged: bool,
    pub converged_at: Option<f64>,
    pub decay_rate: Option<f64>,
    /// Geometric per-edge errors at the final sample, in edge order.
    pub final_errors: Vec<f64>,
    pub max_final_error: f64,
}

/// Deterministically perturb every position by an offset drawn uniformly
/// from the disk of the given radius.
pub fn seeded_perturbation(p: &Configuration, radius: f64, seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Configuration::new(
        p.positions()
            .iter()
            .map(|q| {
                let r = radius * rng.gen::<f64>().sqrt();
                let angle = rng.gen::<f64>() * std::f64::consts::TAU;
                q + Vector2::new(r * angle.cos(), r * angle.sin())
            })
            .collect(),
    )
}

fn control_stage(
    g: &TwoLayerGraph,
    pos: &[Vector2<f64>],
    t: f64,
) -> Result<Vec<Vector2<f64>>, SimError> {
    let p = Configuration::new(pos.to_vec());
    assemble_control(&p, g).map_err(|e| match e {
        ControlError::Graph(GraphError::CoincidentAgents { tail, head }) => {
            SimError::CoincidenceDuringSim { t, tail, head }
        }
        other => SimError::Control(other),
    })
}

fn advanced(pos: &[Vector2<f64>], k: &[Vector2<f64>], h: f64) -> Vec<Vector2<f64>> {
    pos.iter().zip(k).map(|(p, v)| p + v * h).collect()
}

fn record_errors(
    g: &TwoLayerGraph,
    pos: &[Vector2<f64>],
    t: f64,
) -> Result<(Configuration, Vec<f64>), SimError> {
    let p = Configuration::new(pos.to_vec());
    let errs = geometric_error_norms(&p, g).map_err(|e| match e {
        GraphError::CoincidentAgents { tail, head } => {
            SimError::CoincidenceDuringSim { t, tail, head }
        }
        other => SimError::Graph(other),
    })?;
    Ok((p, errs))
}

/// Earliest recorded time from which the max error stays at or below `tol`
/// through the last sample.
fn convergence_time(times: &[f64], max_errors: &[f64], tol: f64) -> Option<f64> {
    match max_errors.iter().rposition(|&e| e > tol) {
        None => Some(times[0]),
        Some(i) if i + 1 < times.len() => Some(times[i + 1]),
        Some(_) => None,
    }
}

/// Least-squares slope of `ln(err)` against `t` over the later half of the
/// samples that carry rate information.
///
/// The floor starts at ten times the machine epsilon. A converged run's
/// tail rattles around the integrator's fixed-point resolution (position
/// updates underflow once `dt·u` drops below one ulp of the positions)
/// instead of decaying, so for converged runs the floor is raised to ten
/// times the final error to keep that plateau out of the fit.
fn decay_fit(times: &[f64], max_errors: &[f64], converged: bool) -> Option<f64> {
    let mut floor = tol::DECAY_FLOOR;
    if converged {
        floor = floor.max(10.0 * max_errors.last().copied().unwrap_or(0.0));
    }
    let above: Vec<(f64, f64)> = times
        .iter()
        .zip(max_errors)
        .filter(|(_, &e)| e > floor)
        .map(|(&t, &e)| (t, e.ln()))
        .collect();
    let tail = &above[above.len() / 2..];
    if tail.len() < 2 {
        return None;
    }
    let n = tail.len() as f64;
    let t_mean = tail.iter().map(|(t, _)| t).sum::<f64>() / n;
    let y_mean = tail.iter().map(|(_, y)| y).sum::<f64>() / n;
    let num: f64 = tail.iter().map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    let den: f64 = tail.iter().map(|(t, _)| (t - t_mean) * (t - t_mean)).sum();
    (den > 0.0).then(|| num / den)
}

/// Integrate `ṗ = u(p)` from `p0` with classic fourth-order Runge–Kutta.
///
/// The horizon is rounded to a whole number of steps. Samples are recorded
/// every `record_every` steps plus always at the start and the end; the
/// convergence time and decay-rate fit are computed on the recorded
/// samples.
///
/// # Errors
/// [`SimError::CoincidenceDuringSim`] when any stage or recorded state puts
/// two agents of an edge within the coincidence threshold;
/// [`SimError::NonFinite`] when the state diverges; invalid parameters and
/// initial-state problems surface before integration starts.
pub fn simulate(
    g: &TwoLayerGraph,
    p0: &Configuration,
    params: &SimParams,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    g.check_configuration(p0)?;
    let steps = ((params.t_max / params.dt).round() as usize).max(1);
    let mut pos = p0.positions().to_vec();

    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut errors = Vec::new();
    let (p_rec, e_rec) = record_errors(g, &pos, 0.0)?;
    times.push(0.0);
    positions.push(p_rec);
    errors.push(e_rec);

    for step in 0..steps {
        let t = step as f64 * params.dt;
        let half = params.dt / 2.0;
        let k1 = control_stage(g, &pos, t)?;
        let k2 = control_stage(g, &advanced(&pos, &k1, half), t + half)?;
        let k3 = control_stage(g, &advanced(&pos, &k2, half), t + half)?;
        let k4 = control_stage(g, &advanced(&pos, &k3, params.dt), t + params.dt)?;
        for (i, p) in pos.iter_mut().enumerate() {
            *p += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (params.dt / 6.0);
        }
        let t_next = (step + 1) as f64 * params.dt;
        if !pos.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(SimError::NonFinite { t: t_next });
        }
        if (step + 1) % params.record_every == 0 || step + 1 == steps {
            let (p_rec, e_rec) = record_errors(g, &pos, t_next)?;
            times.push(t_next);
            positions.push(p_rec);
            errors.push(e_rec);
        }
    }

    let max_errors: Vec<f64> = errors
        .iter()
        .map(|e| e.iter().cloned().fold(0.0, f64::max))
        .collect();
    let converged_at = convergence_time(&times, &max_errors, params.convergence_tol);
    let decay_rate = decay_fit(&times, &max_errors, converged_at.is_some());
    Ok(Trajectory {
        times,
        positions,
        errors,
        converged_at,
        decay_rate,
        tol: params.convergence_tol,
    })
}

/// Summarize a completed run: recomputed final per-edge errors, the fitted
/// decay rate, and the boolean convergence verdict.
pub fn verify_convergence(
    traj: &Trajectory,
    g: &TwoLayerGraph,
) -> Result<ConvergenceReport, GraphError> {
    let final_errors = geometric_error_norms(traj.final_position(), g)?;
    let max_final_error = final_errors.iter().cloned().fold(0.0, f64::max);
    Ok(ConvergenceReport {
        converged: traj.converged_at.is_some(),
        converged_at: traj.converged_at,
        decay_rate: traj.decay_rate,
        final_errors,
        max_final_error,
    })
}

/// Write the position trace as CSV with header `t,agent,px,py`.
pub fn write_positions_csv<W: std::io::Write>(
    traj: &Trajectory,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "t,agent,px,py")?;
    for (i, t) in traj.times.iter().enumerate() {
        for (a, p) in traj.positions[i].positions().iter().enumerate() {
            writeln!(w, "{t},{a},{},{}", p.x, p.y)?;
        }
    }
    Ok(())
}

/// Write the error trace as CSV with header `t,edge,err`.
pub fn write_errors_csv<W: std::io::Write>(traj: &Trajectory, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "t,edge,err")?;
    for (i, t) in traj.times.iter().enumerate() {
        for (l, err) in traj.errors[i].iter().enumerate() {
            writeln!(w, "{t},{l},{err}")?;
        }
    }
    Ok(())
}
