use std::fmt;

use thiserror::Error;

/// Named hypotheses a scenario must satisfy before any stepping occurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assumption {
    /// Every local minimizer set is nonempty and bounded.
    BoundedMinimizers,
    /// The constraint sets have a common point.
    NonemptyIntersection,
    /// Every continuous-time epoch graph is balanced.
    Balanced,
    /// Continuous-time switches are separated by at least the dwell time.
    DwellTime,
    /// Continuous-time graphs are jointly strongly connected over bounded windows.
    JointConnectivity,
    /// Discrete-time mixing matrices are doubly stochastic with positive diagonals.
    DoublyStochastic,
    /// Discrete-time graphs are jointly strongly connected over bounded windows.
    JointConnectivityDiscrete,
}

impl Assumption {
    pub fn number(self) -> u8 {
        match self {
            Assumption::BoundedMinimizers => 1,
            Assumption::NonemptyIntersection => 2,
            Assumption::Balanced => 3,
            Assumption::DwellTime => 4,
            Assumption::JointConnectivity => 5,
            Assumption::DoublyStochastic => 6,
            Assumption::JointConnectivityDiscrete => 7,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Assumption::BoundedMinimizers => "bounded minimizer sets",
            Assumption::NonemptyIntersection => "nonempty constraint intersection",
            Assumption::Balanced => "balanced graphs",
            Assumption::DwellTime => "dwell time",
            Assumption::JointConnectivity => "joint strong connectivity",
            Assumption::DoublyStochastic => "doubly stochastic weights",
            Assumption::JointConnectivityDiscrete => "joint strong connectivity (discrete time)",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Assumption {} ({})", self.number(), self.title())
    }
}

/// One failed hypothesis together with where it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub assumption: Assumption,
    pub detail: String,
}

impl Violation {
    pub fn new(assumption: Assumption, detail: impl Into<String>) -> Self {
        Self {
            assumption,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.assumption, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("window [{start}, {end}) is not covered by the schedule")]
    ScheduleRange { start: f64, end: f64 },

    #[error("invalid convex set: {0}")]
    InvalidSet(String),

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("projection did not converge in {iterations} sweeps (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("step [{t}, {t_next}) straddles the topology switch at {boundary}")]
    StepAlignment { t: f64, t_next: f64, boundary: f64 },

    #[error("agent {agent}: stepsize accumulator q = {q} is not positive")]
    StateCorruption { agent: usize, q: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("centralized oracle failed: {0}")]
    OracleFailure(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("scenario rejected: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("non-finite value in agent {agent} at step {step}")]
    NonFinite { agent: usize, step: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
