//! Command-line argument surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hetform_core::{MergeCase, SensingKind};

#[derive(Debug, Parser)]
#[command(
    name = "hetform",
    version,
    about = "Analyze, certify, and simulate 2D formations with heterogeneous distance/bearing sensing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Directory for output artifacts (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Seed for every randomized procedure.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Print only the final verdict line.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank/kernel analysis of the constraint Jacobian.
    CheckRigidity {
        scenario: PathBuf,
        /// Which configuration to analyze.
        #[arg(long, value_enum, default_value_t = At::Equilibrium)]
        at: At,
    },
    /// Rigidity plus constraint-consistency falsification.
    CheckPersistence {
        scenario: PathBuf,
        /// Perturb-and-relax trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Perturbation radius (default: 0.2 × min desired distance).
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Sufficient gain bound for a merge described in a request file.
    GainBound {
        scenario: PathBuf,
        /// Merge request file (see scenarios/merges/).
        #[arg(long)]
        merge: PathBuf,
    },
    /// Plan, certify, and apply a merge; write the extended scenario.
    Merge {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        case: CaseArg,
        /// The two existing agents the new links touch, as `i,j`.
        #[arg(long, value_delimiter = ',')]
        anchors: Vec<usize>,
        /// Sensing kind of the new agent.
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Desired position of the new agent, as `x,y`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        at: Vec<f64>,
        /// Gains for the two new links, as `kl,kl1`; planning may raise
        /// them to the certified bound. Default `1,1`.
        #[arg(long, value_delimiter = ',')]
        gains: Option<Vec<f64>>,
        /// Sensing kind of the link measured by a 2-DOF leader anchor.
        #[arg(long, value_enum)]
        anchor_kind: Option<KindArg>,
    },
    /// Integrate the closed loop; write CSVs, a summary, and an SVG.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        flags: SimFlags,
    },
    /// Render only the trajectory SVG.
    Plot {
        scenario: PathBuf,
        #[command(flatten)]
        flags: SimFlags,
    },
}

/// Simulation overrides shared by `simulate` and `plot`.
#[derive(Debug, Args)]
pub struct SimFlags {
    /// Integration step in seconds.
    #[arg(long)]
    pub dt: Option<f64>,

    /// Horizon in seconds.
    #[arg(long)]
    pub tmax: Option<f64>,

    /// Convergence tolerance on the max geometric edge error.
    #[arg(long)]
    pub tol: Option<f64>,

    /// Perturb the start: offsets drawn from a disk of radius
    /// `r × min desired distance`.
    #[arg(long, value_name = "R")]
    pub perturb: Option<f64>,
}

/// Which configuration an analysis runs at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum At {
    /// The scenario's desired configuration.
    Equilibrium,
    /// The scenario's initial configuration.
    Initial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CaseArg {
    #[value(alias = "two_coleaders")]
    TwoColeaders,
    #[value(alias = "one_leader")]
    OneLeader,
    Unilateral,
}

impl From<CaseArg> for MergeCase {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::TwoColeaders => MergeCase::TwoColeaders,
            CaseArg::OneLeader => MergeCase::OneLeader,
            CaseArg::Unilateral => MergeCase::Unilateral,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Distance,
    Bearing,
}

impl From<KindArg> for SensingKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Distance => SensingKind::Distance,
            KindArg::Bearing => SensingKind::Bearing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser as _;

    #[test]
    fn parses_a_merge_invocation_with_negative_coordinates() {
        let cli = Cli::parse_from([
            "hetform",
            "merge",
            "net.json",
            "--case",
            "two-coleaders",
            "--anchors",
            "0,1",
            "--kind",
            "bearing",
            "--at",
            "-4.8,-7.7",
            "--gains",
            "3,3",
        ]);
        match cli.command {
            Command::Merge { anchors, at, gains, .. } => {
                assert_eq!(anchors, vec![0, 1]);
                assert_eq!(at, vec![-4.8, -7.7]);
                assert_eq!(gains, Some(vec![3.0, 3.0]));
            }
            other => panic!("wrong command: {other:?}"),
        }
    }

    #[test]
    fn case_accepts_the_file_spelling_as_an_alias() {
        let cli = Cli::parse_from([
            "hetform", "merge", "n.json", "--case", "two_coleaders", "--anchors", "0,1",
            "--kind", "bearing", "--at", "0,1",
        ]);
        match cli.command {
            Command::Merge { case, .. } => assert!(matches!(case, CaseArg::TwoColeaders)),
            other => panic!("wrong command: {other:?}"),
        }
    }

    #[test]
    fn global_flags_have_documented_defaults() {
        let cli = Cli::parse_from(["hetform", "check-rigidity", "net.json"]);
        assert_eq!(cli.seed, 0);
        assert_eq!(cli.out, PathBuf::from("out"));
        assert!(!cli.quiet);
        match cli.command {
            Command::CheckRigidity { at, .. } => assert_eq!(at, At::Equilibrium),
            other => panic!("wrong command: {other:?}"),
        }
    }
}
