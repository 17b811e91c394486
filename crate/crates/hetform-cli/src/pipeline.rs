//! Subcommand pipelines: parse → analyze → report → exit code.
//!
//! Exit-code contract, uniform across subcommands: `0` when the requested
//! verdict holds (rigid, persistent, bounded, certified, converged), `2`
//! when the analysis ran to completion but the verdict is negative, and
//! `1` when the request itself failed (unreadable file, invalid scenario,
//! malformed geometry). Scripts can branch on "no" without parsing text.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::Serialize;
use thiserror::Error;

use hetform_core::{
    analyze_rigidity, apply_merge, certify_merge, check_persistence_with, plan_merge,
    seeded_perturbation, simulate, tol, verify_convergence, write_errors_csv, write_positions_csv,
    Configuration, ConsistencyParams, GraphError, MergeError, MergeRequest, PersistenceError,
    SimError, SimParams, StabilityError, Trajectory,
};

use crate::args::{At, Cli, Command, SimFlags};
use crate::plot::trajectory_svg;
use crate::scenario::{
    parse_merge_spec, parse_scenario, write_scenario, Scenario, ScenarioError,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

/// A request that could not be carried out (as opposed to one that ran and
/// produced a negative verdict).
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {}: {source}", .path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Request(String),
}

/// Run one parsed invocation to completion; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, PipelineError> {
    match &cli.command {
        Command::CheckRigidity { scenario, at } => check_rigidity_cmd(cli, scenario, *at),
        Command::CheckPersistence {
            scenario,
            trials,
            eps,
        } => check_persistence_cmd(cli, scenario, *trials, *eps),
        Command::GainBound { scenario, merge } => gain_bound_cmd(cli, scenario, merge),
        Command::Merge {
            scenario,
            case,
            anchors,
            kind,
            at,
            gains,
            anchor_kind,
        } => {
            let request = MergeCommand {
                case: (*case).into(),
                anchors: pair(anchors, "--anchors")?,
                new_agent_kind: (*kind).into(),
                at: pair(at, "--at")?,
                gains: gains.as_deref().map(|g| pair(g, "--gains")).transpose()?,
                anchor_kind: anchor_kind.map(Into::into),
            };
            merge_cmd(cli, scenario, &request)
        }
        Command::Simulate { scenario, flags } => simulate_cmd(cli, scenario, flags, Artifacts::All),
        Command::Plot { scenario, flags } => simulate_cmd(cli, scenario, flags, Artifacts::SvgOnly),
    }
}

fn info(cli: &Cli, line: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", line.as_ref());
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn pair<T: Copy>(values: &[T], flag: &str) -> Result<(T, T), PipelineError> {
    match values {
        [a, b] => Ok((*a, *b)),
        _ => Err(PipelineError::Request(format!(
            "{flag} takes exactly two comma-separated values, got {}",
            values.len()
        ))),
    }
}

/// The configuration an analysis should run at.
fn config_at(sc: &Scenario, at: At) -> Result<&Configuration, PipelineError> {
    match at {
        At::Equilibrium => sc.desired_positions.as_ref().ok_or_else(|| {
            PipelineError::Request(
                "the scenario has no desired_positions; use --at initial".into(),
            )
        }),
        At::Initial => Ok(&sc.initial_positions),
    }
}

fn equilibrium<'a>(sc: &'a Scenario, why: &str) -> Result<&'a Configuration, PipelineError> {
    sc.desired_positions.as_ref().ok_or_else(|| {
        PipelineError::Request(format!("the scenario has no desired_positions; {why}"))
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|source| PipelineError::Write {
        path: path.to_owned(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization is total");
    text.push('\n');
    write_text(path, &text)
}

fn ensure_out_dir(cli: &Cli) -> Result<(), PipelineError> {
    fs::create_dir_all(&cli.out).map_err(|source| PipelineError::Write {
        path: cli.out.clone(),
        source,
    })
}

fn check_rigidity_cmd(cli: &Cli, path: &Path, at: At) -> Result<i32, PipelineError> {
    let sc = parse_scenario(path)?;
    let p = config_at(&sc, at)?;
    let report = analyze_rigidity(p, &sc.graph)?;
    info(
        cli,
        format!(
            "agents: {}   edges: {}",
            sc.graph.agent_count(),
            sc.graph.edge_count()
        ),
    );
    info(
        cli,
        format!("rank: {} of {} required", report.rank, report.required_rank),
    );
    info(cli, format!("kernel dimension: {}", report.kernel.len()));
    info(cli, format!("minimal: {}", yes_no(report.is_minimal)));
    if report.is_rigid {
        println!(
            "check-rigidity: RIGID{}",
            if report.is_minimal { " (minimal)" } else { "" }
        );
        Ok(EXIT_PASS)
    } else {
        println!("check-rigidity: NOT RIGID");
        Ok(EXIT_FAIL)
    }
}

fn check_persistence_cmd(
    cli: &Cli,
    path: &Path,
    trials: Option<usize>,
    eps: Option<f64>,
) -> Result<i32, PipelineError> {
    let sc = parse_scenario(path)?;
    let p = equilibrium(&sc, "persistence probes around an equilibrium")?;
    let params = ConsistencyParams {
        trials: trials.unwrap_or(tol::CONSISTENCY_TRIALS_DEFAULT),
        eps,
        seed: cli.seed,
    };
    let report = check_persistence_with(p, &sc.graph, params)?;
    info(
        cli,
        format!(
            "rigidity: rank {} of {} ({})",
            report.rigidity.rank,
            report.rigidity.required_rank,
            if report.rigidity.is_rigid {
                "rigid"
            } else {
                "not rigid"
            }
        ),
    );
    info(
        cli,
        format!(
            "consistency: {} trials at radius {:.4}, max violation {:.3e}",
            report.consistency.trials, report.consistency.eps, report.consistency.max_violation
        ),
    );
    if report.consistency.inconclusive_trials > 0 {
        info(
            cli,
            format!(
                "consistency: {} of {} trials inconclusive (relaxation did not settle nearby)",
                report.consistency.inconclusive_trials, report.consistency.trials
            ),
        );
    }
    if let (Some(w), Some(trial)) = (
        &report.consistency.witness,
        report.consistency.witness_trial,
    ) {
        println!(
            "witness (trial {trial}): all-fitting configuration violating a constraint by {:.6}",
            report.consistency.max_violation
        );
        let coords: Vec<[f64; 2]> = w.positions().iter().map(|p| [p.x, p.y]).collect();
        println!(
            "witness positions: {}",
            serde_json::to_string(&coords).expect("coordinate serialization is total")
        );
    }
    if report.persistent {
        println!("check-persistence: PERSISTENT");
        Ok(EXIT_PASS)
    } else {
        let why = if !report.rigidity.is_rigid {
            "not rigid"
        } else {
            "constraint inconsistent"
        };
        println!("check-persistence: NOT PERSISTENT ({why})");
        Ok(EXIT_FAIL)
    }
}

/// CLI-shaped merge arguments after validation.
struct MergeCommand {
    case: hetform_core::MergeCase,
    anchors: (usize, usize),
    new_agent_kind: hetform_core::SensingKind,
    at: (f64, f64),
    gains: Option<(f64, f64)>,
    anchor_kind: Option<hetform_core::SensingKind>,
}

/// Verdict-negative merge outcomes: the analysis completed and the answer
/// is "no". Everything else is a malformed or impossible request.
fn merge_verdict_failure(e: &MergeError) -> bool {
    matches!(
        e,
        MergeError::NotPersistentCompatible { .. }
            | MergeError::ExistingNotStable { .. }
            | MergeError::Stability(StabilityError::PreconditionViolated { .. })
    )
}

fn gain_bound_cmd(cli: &Cli, path: &Path, merge_path: &Path) -> Result<i32, PipelineError> {
    let sc = parse_scenario(path)?;
    let spec = parse_merge_spec(merge_path)?;
    let p_star = equilibrium(&sc, "gain bounds are stated at the desired configuration")?;
    let (g0, g1) = spec.gains.map_or((1.0, 1.0), |g| (g[0], g[1]));
    let request = MergeRequest {
        anchors: (spec.anchors[0], spec.anchors[1]),
        new_desired_position: Vector2::new(spec.at[0], spec.at[1]),
        requested_gains: (g0, g1),
        anchor_kind: spec.anchor_kind,
    };
    match plan_merge(&sc.graph, p_star, spec.case, spec.new_agent_kind, &request) {
        Ok(plan) => {
            info(
                cli,
                serde_json::to_string_pretty(&plan.certificate)
                    .expect("certificate serialization is total"),
            );
            info(
                cli,
                format!("planned gains: ({:.6}, {:.6})", plan.gains.0, plan.gains.1),
            );
            match plan.certificate.bound {
                Some(b) => println!("gain-bound ({}): k > {b:.15e}", plan.case),
                None => println!(
                    "gain-bound ({}): any positive gains are certified",
                    plan.case
                ),
            }
            Ok(EXIT_PASS)
        }
        Err(e) if merge_verdict_failure(&e) => {
            println!("gain-bound: NO CERTIFIED BOUND — {e}");
            Ok(EXIT_FAIL)
        }
        Err(e) => Err(e.into()),
    }
}

fn merge_cmd(cli: &Cli, path: &Path, cmd: &MergeCommand) -> Result<i32, PipelineError> {
    let sc = parse_scenario(path)?;
    let p_star = equilibrium(&sc, "merges plan against the desired configuration")?;
    let request = MergeRequest {
        anchors: cmd.anchors,
        new_desired_position: Vector2::new(cmd.at.0, cmd.at.1),
        requested_gains: cmd.gains.unwrap_or((1.0, 1.0)),
        anchor_kind: cmd.anchor_kind,
    };
    let plan = match plan_merge(&sc.graph, p_star, cmd.case, cmd.new_agent_kind, &request) {
        Ok(plan) => plan,
        Err(e) if merge_verdict_failure(&e) => {
            println!("merge: REJECTED — {e}");
            return Ok(EXIT_FAIL);
        }
        Err(e) => return Err(e.into()),
    };
    let certificate = certify_merge(&sc.graph, p_star, &plan)?;
    let merged = apply_merge(&sc.graph, &plan)?;
    let merged_scenario = Scenario {
        graph: merged,
        initial_positions: sc.initial_positions.extended(plan.new_desired_position),
        desired_positions: Some(p_star.extended(plan.new_desired_position)),
        sim: sc.sim,
    };

    ensure_out_dir(cli)?;
    let merged_path = cli.out.join("merged.json");
    write_scenario(&merged_path, &merged_scenario)?;
    let cert_path = cli.out.join("certificate.json");
    write_json(&cert_path, &certificate)?;

    info(
        cli,
        format!(
            "case {} at anchors ({}, {}), gains ({:.6}, {:.6})",
            plan.case, plan.anchors.0, plan.anchors.1, plan.gains.0, plan.gains.1
        ),
    );
    info(
        cli,
        format!(
            "merged network: {} agents, {} edges, rank {} (minimal: {})",
            merged_scenario.graph.agent_count(),
            merged_scenario.graph.edge_count(),
            certificate.merged_rank,
            yes_no(certificate.merged_minimal)
        ),
    );
    info(
        cli,
        format!(
            "wrote {} and {}",
            merged_path.display(),
            cert_path.display()
        ),
    );
    if certificate.criterion_holds && certificate.merged_max_re < 0.0 {
        println!(
            "merge: CERTIFIED (merged spectrum max Re = {:.3e})",
            certificate.merged_max_re
        );
        Ok(EXIT_PASS)
    } else {
        println!(
            "merge: NOT CERTIFIED (criterion holds: {}, merged spectrum max Re = {:.3e})",
            yes_no(certificate.criterion_holds),
            certificate.merged_max_re
        );
        Ok(EXIT_FAIL)
    }
}

/// What `simulate` leaves on disk.
#[derive(Clone, Copy, PartialEq)]
enum Artifacts {
    All,
    SvgOnly,
}

/// Simulation summary written next to the CSVs.
#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: String,
    seed: u64,
    perturb: Option<f64>,
    params: &'a SimParams,
    converged: bool,
    converged_at: Option<f64>,
    decay_rate: Option<f64>,
    max_final_error: f64,
    final_errors: &'a [f64],
}

fn simulate_cmd(
    cli: &Cli,
    path: &Path,
    flags: &SimFlags,
    artifacts: Artifacts,
) -> Result<i32, PipelineError> {
    let sc = parse_scenario(path)?;
    let mut params = sc.sim;
    if let Some(dt) = flags.dt {
        params.dt = dt;
    }
    if let Some(tmax) = flags.tmax {
        params.t_max = tmax;
    }
    if let Some(tol) = flags.tol {
        params.convergence_tol = tol;
    }

    let p0 = match flags.perturb {
        Some(r) => {
            let reference = min_separation(&sc)?;
            seeded_perturbation(&sc.initial_positions, r * reference, cli.seed)
        }
        None => sc.initial_positions.clone(),
    };

    let traj = match simulate(&sc.graph, &p0, &params) {
        Ok(traj) => traj,
        Err(e @ (SimError::CoincidenceDuringSim { .. } | SimError::NonFinite { .. })) => {
            println!("simulate: DIVERGED — {e}");
            return Ok(EXIT_FAIL);
        }
        Err(e) => return Err(e.into()),
    };
    let report = verify_convergence(&traj, &sc.graph)?;

    ensure_out_dir(cli)?;
    let svg_path = cli.out.join("trajectory.svg");
    write_text(&svg_path, &trajectory_svg(&traj, &sc.graph))?;
    if artifacts == Artifacts::All {
        write_csv(&cli.out.join("positions.csv"), &traj, write_positions_csv)?;
        write_csv(&cli.out.join("errors.csv"), &traj, write_errors_csv)?;
        let summary = RunSummary {
            scenario: path.display().to_string(),
            seed: cli.seed,
            perturb: flags.perturb,
            params: &params,
            converged: report.converged,
            converged_at: report.converged_at,
            decay_rate: report.decay_rate,
            max_final_error: report.max_final_error,
            final_errors: &report.final_errors,
        };
        write_json(&cli.out.join("summary.json"), &summary)?;
    }
    info(
        cli,
        format!(
            "integrated {} agents for {:.3} s at dt = {:.1e} (seed {})",
            sc.graph.agent_count(),
            params.t_max,
            params.dt,
            cli.seed
        ),
    );
    info(cli, format!("artifacts in {}", cli.out.display()));

    if artifacts == Artifacts::SvgOnly {
        println!("plot: wrote {}", svg_path.display());
        return Ok(EXIT_PASS);
    }
    if report.converged {
        println!(
            "simulate: CONVERGED at t = {:.3} s (decay rate {})",
            report.converged_at.expect("converged runs carry a time"),
            report
                .decay_rate
                .map_or("n/a".to_string(), |r| format!("{r:.3}")),
        );
        Ok(EXIT_PASS)
    } else {
        println!(
            "simulate: NOT CONVERGED within {:.3} s (max final error {:.3e})",
            params.t_max, report.max_final_error
        );
        Ok(EXIT_FAIL)
    }
}

/// Perturbation length scale: the smallest desired distance, or the
/// smallest initial separation when the network has no distance edges.
fn min_separation(sc: &Scenario) -> Result<f64, PipelineError> {
    if let Some(d) = sc.graph.min_desired_distance() {
        return Ok(d);
    }
    let p = sc.initial_positions.positions();
    let mut min = f64::INFINITY;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            min = min.min((p[j] - p[i]).norm());
        }
    }
    if min.is_finite() && min > 0.0 {
        Ok(min)
    } else {
        Err(PipelineError::Request(
            "cannot derive a perturbation scale: no desired distances and no separated agents"
                .into(),
        ))
    }
}

fn write_csv(
    path: &Path,
    traj: &Trajectory,
    writer: fn(&Trajectory, &mut std::io::BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), PipelineError> {
    let wrap = |source: std::io::Error| PipelineError::Write {
        path: path.to_owned(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut buf = std::io::BufWriter::new(file);
    writer(traj, &mut buf).map_err(wrap)?;
    use std::io::Write as _;
    buf.flush().map_err(wrap)
}
