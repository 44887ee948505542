//! State, problem and trajectory types shared by both solvers.

use std::f64::consts::FRAC_PI_2;

use crate::convex::ConvexSet;
use crate::error::{Error, Result};
use crate::graph::{Family, GraphSchedule};
use crate::linalg::norm;
use crate::objective::Objective;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
    /// Stepsize accumulator; the gradient gain is `1 / sqrt(q)`.
    pub q: f64,
}

impl AgentState {
    pub fn new(x: Vec<f64>, q: f64) -> Self {
        Self { x, q }
    }
}

/// `arctan(exp(z))` without overflow: for `z > 0` the identity
/// `arctan(e^z) = pi/2 - arctan(e^-z)` keeps the exponential bounded.
pub fn stepsize_rate(z: f64) -> f64 {
    if z > 0.0 {
        FRAC_PI_2 - (-z).exp().atan()
    } else {
        z.exp().atan()
    }
}

/// Local data of every agent plus the switching topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub objectives: Vec<Objective>,
    pub sets: Vec<ConvexSet>,
    pub schedule: GraphSchedule,
}

impl Problem {
    pub fn new(objectives: Vec<Objective>, sets: Vec<ConvexSet>, schedule: GraphSchedule) -> Result<Self> {
        let n = objectives.len();
        if n == 0 {
            return Err(Error::Precondition("problem has no agents".into()));
        }
        if sets.len() != n || schedule.n() != n {
            return Err(Error::Precondition(format!(
                "{n} objectives, {} constraint sets and a {}-agent schedule",
                sets.len(),
                schedule.n()
            )));
        }
        let m = objectives[0].dim();
        for (i, (f, h)) in objectives.iter().zip(&sets).enumerate() {
            f.validate()?;
            h.validate()?;
            if f.dim() != m || h.dim() != m {
                return Err(Error::Precondition(format!(
                    "agent {i}: objective has dimension {}, set has {}, expected {m}",
                    f.dim(),
                    h.dim()
                )));
            }
        }
        Ok(Self {
            objectives,
            sets,
            schedule,
        })
    }

    pub fn n(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.objectives[0].dim()
    }

    pub fn family(&self) -> Family {
        self.schedule.family()
    }

    pub(crate) fn check_states(&self, agents: &[AgentState]) -> Result<()> {
        if agents.len() != self.n() {
            return Err(Error::Precondition(format!(
                "{} agent states for {} agents",
                agents.len(),
                self.n()
            )));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.x.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: a.x.len(),
                });
            }
            check_q(i, a.q)?;
        }
        Ok(())
    }
}

pub(crate) fn check_q(agent: usize, q: f64) -> Result<()> {
    if q > 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(Error::StateCorruption { agent, q })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    /// Number of steps to take.
    pub steps: u64,
    /// Record every `stride`-th state; the final state is always recorded.
    pub stride: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: u64,
    pub t: f64,
    pub agents: Vec<AgentState>,
    /// Discrete time: which agents dropped their gradient in the step
    /// that produced this state.
    pub gr_zero: Option<Vec<bool>>,
}

/// Per-step statistics gathered over the whole run, not only at samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub steps_taken: u64,
    /// Largest `|x_i|` seen at any step, initial state included.
    pub max_norm: f64,
    /// Discrete time: number of agents on the zero-gradient branch at each step.
    pub gr_zero_per_step: Vec<u32>,
    /// Discrete time, projected mode: agent-steps found outside their set.
    pub feasibility_violations: Option<u64>,
}

impl RunStats {
    pub fn total_gr_zero(&self) -> u64 {
        self.gr_zero_per_step.iter().map(|&c| u64::from(c)).sum()
    }

    /// Index of the last step (0-based) that used the zero-gradient branch.
    pub fn last_gr_zero_step(&self) -> Option<u64> {
        self.gr_zero_per_step.iter().rposition(|&c| c > 0).map(|k| k as u64)
    }

    pub(crate) fn observe_norms(&mut self, agents: &[AgentState]) {
        for a in agents {
            self.max_norm = self.max_norm.max(norm(&a.x));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub family: Family,
    /// Integration step (continuous time) or sample time (discrete time).
    pub step: f64,
    pub samples: Vec<Sample>,
    pub stats: RunStats,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

/// A solver failure together with everything computed before it.
#[derive(Debug, thiserror::Error)]
#[error("simulation aborted after {} steps: {source}", partial.stats.steps_taken)]
pub struct SimulationError {
    #[source]
    pub source: Error,
    pub partial: Box<Trajectory>,
}

pub(crate) fn check_finite(agents: &[AgentState], step: u64) -> Result<()> {
    for (i, a) in agents.iter().enumerate() {
        if !a.q.is_finite() || a.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { agent: i, step });
        }
    }
    Ok(())
}
